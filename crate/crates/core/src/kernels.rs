//! Raw numeric kernels shared by the forward and backward passes of [`crate::graph`].

use crate::linalg::{gemm, gemm_strided, Strided};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
}

/// Output positions `i` in `[lo, hi)` read input index `i * stride + kk - pad_left` inside `[0, len_in)`.
fn valid_range(g: &ConvGeom, kk: usize) -> (usize, usize) {
    let lo = if g.pad_left > kk {
        (g.pad_left - kk).div_ceil(g.stride)
    } else {
        0
    };
    let reach = g.len_in + g.pad_left;
    let hi = if reach > kk {
        (reach - kk).div_ceil(g.stride).min(g.len_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Below this many input channels a per-tap product is too thin for the gemm
/// kernel to be efficient, so taps are gathered with im2col instead.
const IM2COL_MAX_CIN: usize = 8;

fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let (k, lo_len, li) = (g.kernel, g.len_out, g.len_in);
    for ci in 0..g.cin {
        let xrow = &x[ci * li..(ci + 1) * li];
        for kk in 0..k {
            let dst = &mut col[(ci * k + kk) * lo_len..(ci * k + kk + 1) * lo_len];
            let (lo, hi) = valid_range(g, kk);
            dst[..lo].fill(0.0);
            dst[hi..].fill(0.0);
            if lo == hi {
                continue;
            }
            let first = lo * g.stride + kk - g.pad_left;
            for (d, s) in dst[lo..hi].iter_mut().zip(xrow[first..].iter().step_by(g.stride)) {
                *d = *s;
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let (k, lo_len, li) = (g.kernel, g.len_out, g.len_in);
    for ci in 0..g.cin {
        let dxrow = &mut dx[ci * li..(ci + 1) * li];
        for kk in 0..k {
            let src = &col[(ci * k + kk) * lo_len..(ci * k + kk + 1) * lo_len];
            let (lo, hi) = valid_range(g, kk);
            if lo == hi {
                continue;
            }
            let first = lo * g.stride + kk - g.pad_left;
            for (d, s) in dxrow[first..].iter_mut().step_by(g.stride).zip(&src[lo..hi]) {
                *d += s;
            }
        }
    }
}

/// Views for kernel tap `kk` of batch element `b`: the weight slice `[cout, cin]`,
/// the strided input columns feeding outputs `[lo, hi)`, and those outputs.
fn tap_views(g: &ConvGeom, b: usize, kk: usize) -> Option<(Strided, Strided, Strided)> {
    let (lo, hi) = valid_range(g, kk);
    if lo == hi {
        return None;
    }
    let n = hi - lo;
    let w = Strided {
        offset: kk,
        rows: g.cout,
        cols: g.cin,
        rs: g.cin * g.kernel,
        cs: g.kernel,
    };
    let x = Strided {
        offset: b * g.cin * g.len_in + lo * g.stride + kk - g.pad_left,
        rows: g.cin,
        cols: n,
        rs: g.len_in,
        cs: g.stride,
    };
    let y = Strided {
        offset: b * g.cout * g.len_out + lo,
        rows: g.cout,
        cols: n,
        rs: g.len_out,
        cs: 1,
    };
    Some((w, x, y))
}

fn transpose(v: Strided) -> Strided {
    Strided {
        offset: v.offset,
        rows: v.cols,
        cols: v.rows,
        rs: v.cs,
        cs: v.rs,
    }
}

/// Convolution as one strided matrix product per kernel tap, with no im2col copy.
pub fn conv1d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    for (i, row) in out.chunks_mut(g.len_out).enumerate() {
        row.fill(bias.map_or(0.0, |b| b[i % g.cout]));
    }
    if g.cin <= IM2COL_MAX_CIN {
        let ckl = g.cin * g.kernel;
        let mut col = vec![0.0; ckl * g.len_out];
        for b in 0..g.batch {
            im2col(g, &x[b * g.cin * g.len_in..(b + 1) * g.cin * g.len_in], &mut col);
            let ob = &mut out[b * g.cout * g.len_out..(b + 1) * g.cout * g.len_out];
            gemm(g.cout, ckl, g.len_out, w, false, &col, false, 1.0, ob);
        }
        return;
    }
    for b in 0..g.batch {
        for kk in 0..g.kernel {
            if let Some((wv, xv, yv)) = tap_views(g, b, kk) {
                gemm_strided(w, wv, x, xv, 1.0, out, yv);
            }
        }
    }
}

/// Accumulates kernel, bias and input gradients.
pub fn conv1d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    mut dx: Option<&mut [f64]>,
) {
    if let Some(db) = db {
        for (i, row) in dy.chunks(g.len_out).enumerate() {
            db[i % g.cout] += row.iter().sum::<f64>();
        }
    }
    if g.cin <= IM2COL_MAX_CIN {
        let ckl = g.cin * g.kernel;
        let mut col = vec![0.0; ckl * g.len_out];
        for b in 0..g.batch {
            let xb = &x[b * g.cin * g.len_in..(b + 1) * g.cin * g.len_in];
            let dyb = &dy[b * g.cout * g.len_out..(b + 1) * g.cout * g.len_out];
            if let Some(dw) = dw.as_deref_mut() {
                im2col(g, xb, &mut col);
                gemm(g.cout, g.len_out, ckl, dyb, false, &col, true, 1.0, dw);
            }
            if let Some(dx) = dx.as_deref_mut() {
                gemm(ckl, g.cout, g.len_out, w, true, dyb, false, 0.0, &mut col);
                col2im_add(g, &col, &mut dx[b * g.cin * g.len_in..(b + 1) * g.cin * g.len_in]);
            }
        }
        return;
    }
    for b in 0..g.batch {
        for kk in 0..g.kernel {
            let Some((wv, xv, yv)) = tap_views(g, b, kk) else { continue };
            if let Some(dw) = dw.as_deref_mut() {
                gemm_strided(dy, yv, x, transpose(xv), 1.0, dw, wv);
            }
            if let Some(dx) = dx.as_deref_mut() {
                gemm_strided(w, transpose(wv), dy, yv, 1.0, dx, xv);
            }
        }
    }
}

/// Output length and left padding for a sliding window.
///
/// `same` pads symmetrically, putting the extra element on the right when the
/// total padding is odd, and yields `ceil(len / stride)` outputs.
pub fn window_geometry(len: usize, window: usize, stride: usize, same: bool) -> Option<(usize, usize)> {
    if same {
        let out = len.div_ceil(stride);
        let total = ((out - 1) * stride + window).saturating_sub(len);
        Some((out, total / 2))
    } else if window > len {
        None
    } else {
        Some(((len - window) / stride + 1, 0))
    }
}

/// Walks every element of `shape` in row-major order, passing the linear output
/// index together with offsets computed from two independent stride vectors.
pub fn walk2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    fn rec(
        shape: &[usize],
        sa: &[usize],
        sb: &[usize],
        dim: usize,
        oa: usize,
        ob: usize,
        out: &mut usize,
        f: &mut impl FnMut(usize, usize, usize),
    ) {
        let last = shape.len() - 1;
        if dim == last {
            for i in 0..shape[dim] {
                f(*out, oa + i * sa[dim], ob + i * sb[dim]);
                *out += 1;
            }
            return;
        }
        for i in 0..shape[dim] {
            rec(shape, sa, sb, dim + 1, oa + i * sa[dim], ob + i * sb[dim], out, f);
        }
    }
    if shape.is_empty() {
        f(0, 0, 0);
        return;
    }
    let mut out = 0;
    rec(shape, sa, sb, 0, 0, 0, &mut out, &mut f);
}

/// Strides of `shape` as seen from a broadcast `out_shape`; broadcast dims get stride 0.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let s = crate::tensor::strides(shape);
    shape
        .iter()
        .zip(out_shape)
        .zip(s)
        .map(|((&d, &o), st)| if d == o { st } else { 0 })
        .collect()
}

/// (outer, axis length, inner) factorization of `shape` around `axis`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
