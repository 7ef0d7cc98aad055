//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// `c = a' · b' + beta · c`, where `a'` is `a` (m×k) or its transpose when
/// `ta` is set (then `a` is stored k×m), and likewise for `b` (k×n).
/// All buffers are dense row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k, "gemm: a too small");
    assert!(b.len() >= k * n, "gemm: b too small");
    assert!(c.len() >= m * n, "gemm: c too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access made with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A strided matrix view into a flat buffer: element `(i, j)` lives at
/// `offset + i * rs + j * cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strided {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Strided {
    fn end(&self) -> usize {
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
    }
}

/// `c = a · b + beta · c` over strided views. `c` must not alias itself
/// (distinct `(i, j)` map to distinct elements).
pub(crate) fn gemm_strided(a: &[f64], av: Strided, b: &[f64], bv: Strided, beta: f64, c: &mut [f64], cv: Strided) {
    assert!(av.cols == bv.rows && av.rows == cv.rows && bv.cols == cv.cols, "gemm_strided: shape mismatch");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        return;
    }
    assert!(av.end() <= a.len() && bv.end() <= b.len() && cv.end() <= c.len(), "gemm_strided: view out of bounds");
    // SAFETY: the asserts above bound every element reachable through the views.
    unsafe {
        matrixmultiply::dgemm(
            cv.rows,
            av.cols,
            cv.cols,
            1.0,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
