use physioattn::attention::{
    AttentionKind, CbamBlock, MsaConfig, MsaEncoder, MsaLayer, NlBlock, NlNormalizer, SeBlock,
};
use physioattn::gradcheck::grad_check;
use physioattn::nn::LAYERNORM_EPS;
use physioattn::{Graph, Mode, ParamBuilder, ParamStore, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
    let w = rand_tensor(&mut rng, g.shape(v));
    let w = g.input(w);
    let p = g.mul(v, w)?;
    Ok(g.sum_all(p))
}

fn value(store: &ParamStore, name: &str) -> Vec<f64> {
    store.value(store.find(name).unwrap_or_else(|| panic!("no param {name}"))).data().to_vec()
}

fn set(store: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
    let id = store.find(name).unwrap();
    let n = store.get(id).numel();
    store.assign(id, &(0..n).map(f).collect::<Vec<_>>()).unwrap();
}

// ------------------------------------------------------------ naive references

/// `y[o, l] = b[o] + sum_i w[o, i] x[i, l]` for one batch element; `w` is `[cout, cin, 1]`.
fn naive_pointwise(x: &[f64], cin: usize, l: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let cout = b.len();
    let mut y = vec![0.0; cout * l];
    for o in 0..cout {
        for p in 0..l {
            let mut acc = b[o];
            for i in 0..cin {
                acc += w[o * cin + i] * x[i * l + p];
            }
            y[o * l + p] = acc;
        }
    }
    y
}

fn naive_softmax_rows(m: &mut [f64], cols: usize) {
    for row in m.chunks_mut(cols) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

fn naive_dense(x: &[f64], n_in: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_out = b.len();
    let rows = x.len() / n_in;
    let mut y = vec![0.0; rows * n_out];
    for r in 0..rows {
        for o in 0..n_out {
            let mut acc = b[o];
            for i in 0..n_in {
                acc += x[r * n_in + i] * w[i * n_out + o];
            }
            y[r * n_out + o] = acc;
        }
    }
    y
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

// ------------------------------------------------------------------- kinds

#[test]
fn attention_kind_serialized_names() {
    let names: Vec<String> = AttentionKind::ALL.iter().map(|k| serde_json::to_string(k).unwrap()).collect();
    assert_eq!(names, ["\"none\"", "\"se\"", "\"nl\"", "\"cbam\"", "\"msa\""]);
}

// ---------------------------------------------------------------------- SE

#[test]
fn se_parameter_count_c16_r4() {
    let mut store = ParamStore::new();
    SeBlock::new(&mut ParamBuilder::seeded(&mut store, 0), "se", 16, 4).unwrap();
    assert_eq!(store.count_trainable(), 16 * 4 + 4 + 4 * 16 + 16);
    assert_eq!(store.count_trainable(), 148);
}

#[test]
fn se_rejects_ratio_above_channels() {
    let mut store = ParamStore::new();
    assert!(SeBlock::new(&mut ParamBuilder::seeded(&mut store, 0), "se", 4, 8).is_err());
    assert!(SeBlock::new(&mut ParamBuilder::seeded(&mut store, 0), "se", 4, 0).is_err());
}

#[test]
fn se_saturated_gate_is_identity() {
    let mut store = ParamStore::new();
    let block = SeBlock::new(&mut ParamBuilder::seeded(&mut store, 3), "se", 8, 2).unwrap();
    set(&mut store, "se/excite/weight", |_| 0.0);
    set(&mut store, "se/excite/bias", |_| 30.0);
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[2, 8, 12]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let gate = block.gate(&mut g, xv).unwrap();
    assert!(g.value(gate).data().iter().all(|&v| v >= 1.0 - 1e-7));
    let y = block.forward(&mut g, xv).unwrap();
    assert!(g.value(y).max_abs_diff(&x) < 1e-6);
}

#[test]
fn se_ratio_is_constant_along_length() {
    let mut store = ParamStore::new();
    let block = SeBlock::new(&mut ParamBuilder::seeded(&mut store, 5), "se", 8, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::new(&[2, 8, 10], (0..160).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let y = block.forward(&mut g, xv).unwrap();
    let y = g.value(y);
    for b in 0..2 {
        for c in 0..8 {
            let r0 = y.at3(b, c, 0) / x.at3(b, c, 0);
            assert!(r0 > 0.0 && r0 < 1.0);
            for l in 1..10 {
                assert!((y.at3(b, c, l) / x.at3(b, c, l) - r0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn se_gate_matches_naive_reference() {
    let mut store = ParamStore::new();
    let block = SeBlock::new(&mut ParamBuilder::seeded(&mut store, 6), "se", 8, 2).unwrap();
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(2), &[2, 8, 7]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let gate = block.gate(&mut g, xv).unwrap();
    let gate = g.value(gate).data().to_vec();
    for b in 0..2 {
        let pooled: Vec<f64> = (0..8).map(|c| (0..7).map(|l| x.at3(b, c, l)).sum::<f64>() / 7.0).collect();
        let h: Vec<f64> = naive_dense(&pooled, 8, &value(&store, "se/squeeze/weight"), &value(&store, "se/squeeze/bias"))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let e = naive_dense(&h, 4, &value(&store, "se/excite/weight"), &value(&store, "se/excite/bias"));
        for c in 0..8 {
            assert!((gate[b * 8 + c] - sigmoid(e[c])).abs() < ORACLE_TOL);
        }
    }
}

// ---------------------------------------------------------------------- NL

fn naive_nl_attention(store: &ParamStore, x: &Tensor, b: usize) -> Vec<f64> {
    let (c, l) = (x.shape()[1], x.shape()[2]);
    let xb = &x.data()[b * c * l..(b + 1) * c * l];
    let theta = naive_pointwise(xb, c, l, &value(store, "nl/theta/kernel"), &value(store, "nl/theta/bias"));
    let phi = naive_pointwise(xb, c, l, &value(store, "nl/phi/kernel"), &[0.0; 64][..c / 2]);
    let inner = c / 2;
    let mut a = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            a[i * l + j] = (0..inner).map(|k| theta[k * l + i] * phi[k * l + j]).sum();
        }
    }
    naive_softmax_rows(&mut a, l);
    a
}

#[test]
fn nl_zero_output_projection_is_exact_identity() {
    let mut store = ParamStore::new();
    let block = NlBlock::new(&mut ParamBuilder::seeded(&mut store, 1), "nl", 6, true).unwrap();
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(4), &[2, 6, 9]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let y = block.forward(&mut g, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn nl_rejects_single_channel() {
    let mut store = ParamStore::new();
    assert!(NlBlock::new(&mut ParamBuilder::seeded(&mut store, 1), "nl", 1, true).is_err());
}

#[test]
fn nl_single_position_attention_is_one() {
    let mut store = ParamStore::new();
    let block = NlBlock::new(&mut ParamBuilder::seeded(&mut store, 2), "nl", 4, false).unwrap();
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(5), &[1, 4, 1]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let out = block.forward_with_attention(&mut g, xv).unwrap();
    assert_eq!(g.value(out.attention).data(), &[1.0]);
    let gx = naive_pointwise(x.data(), 4, 1, &value(&store, "nl/g/kernel"), &value(&store, "nl/g/bias"));
    let z = naive_pointwise(&gx, 2, 1, &value(&store, "nl/out/kernel"), &value(&store, "nl/out/bias"));
    for c in 0..4 {
        assert!((g.value(out.output).data()[c] - (x.data()[c] + z[c])).abs() < ORACLE_TOL);
    }
}

#[test]
fn nl_attention_and_output_match_naive_double_loop() {
    for (b_n, c, l) in [(1usize, 4usize, 8usize), (2, 8, 16)] {
        let mut store = ParamStore::new();
        let block = NlBlock::new(&mut ParamBuilder::seeded(&mut store, 7), "nl", c, false).unwrap();
        let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(8), &[b_n, c, l]);
        let mut g = Graph::new(&store, Mode::Eval);
        let xv = g.input(x.clone());
        let out = block.forward_with_attention(&mut g, xv).unwrap();
        let attn = g.value(out.attention).data();
        let y = g.value(out.output);
        for b in 0..b_n {
            let a = naive_nl_attention(&store, &x, b);
            for (i, &v) in a.iter().enumerate() {
                assert!((attn[b * l * l + i] - v).abs() < ORACLE_TOL);
            }
            let xb = &x.data()[b * c * l..(b + 1) * c * l];
            let gx = naive_pointwise(xb, c, l, &value(&store, "nl/g/kernel"), &value(&store, "nl/g/bias"));
            let inner = c / 2;
            let mut att = vec![0.0; inner * l];
            for k in 0..inner {
                for i in 0..l {
                    att[k * l + i] = (0..l).map(|j| a[i * l + j] * gx[k * l + j]).sum();
                }
            }
            let z = naive_pointwise(&att, inner, l, &value(&store, "nl/out/kernel"), &value(&store, "nl/out/bias"));
            for ch in 0..c {
                for p in 0..l {
                    assert!((y.at3(b, ch, p) - (xb[ch * l + p] + z[ch * l + p])).abs() < ORACLE_TOL);
                }
            }
        }
    }
}

#[test]
fn nl_dot_product_normalizer_divides_by_length() {
    let mut store = ParamStore::new();
    let mut block = NlBlock::new(&mut ParamBuilder::seeded(&mut store, 7), "nl", 4, false).unwrap();
    block.normalizer = NlNormalizer::DotProduct;
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(3), &[1, 4, 5]);
    let theta = naive_pointwise(x.data(), 4, 5, &value(&store, "nl/theta/kernel"), &value(&store, "nl/theta/bias"));
    let phi = naive_pointwise(x.data(), 4, 5, &value(&store, "nl/phi/kernel"), &[0.0, 0.0]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x);
    let out = block.forward_with_attention(&mut g, xv).unwrap();
    let attn = g.value(out.attention).data();
    for i in 0..5 {
        for j in 0..5 {
            let dot: f64 = (0..2).map(|k| theta[k * 5 + i] * phi[k * 5 + j]).sum();
            assert!((attn[i * 5 + j] - dot / 5.0).abs() < ORACLE_TOL);
        }
    }
}

// -------------------------------------------------------------------- CBAM

#[test]
fn cbam_rejects_even_kernel_and_large_ratio() {
    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::seeded(&mut store, 0);
    assert!(CbamBlock::new(&mut pb, "a", 8, 2, 6).is_err());
    assert!(CbamBlock::new(&mut pb, "b", 8, 16, 7).is_err());
}

#[test]
fn cbam_saturated_gates_are_identity() {
    let mut store = ParamStore::new();
    let block = CbamBlock::new(&mut ParamBuilder::seeded(&mut store, 1), "cbam", 8, 2, 7).unwrap();
    set(&mut store, "cbam/mlp_out/weight", |_| 0.0);
    set(&mut store, "cbam/mlp_out/bias", |_| 20.0);
    set(&mut store, "cbam/spatial/kernel", |_| 0.0);
    set(&mut store, "cbam/spatial/bias", |_| 40.0);
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(2), &[2, 8, 16]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let y = block.forward(&mut g, xv).unwrap();
    assert!(g.value(y).max_abs_diff(&x) < 1e-6);
}

#[test]
fn cbam_closed_channel_gate_annihilates() {
    let mut store = ParamStore::new();
    let block = CbamBlock::new(&mut ParamBuilder::seeded(&mut store, 1), "cbam", 8, 2, 7).unwrap();
    set(&mut store, "cbam/mlp_out/weight", |_| 0.0);
    set(&mut store, "cbam/mlp_out/bias", |_| -20.0);
    for sign in [1.0, -1.0] {
        let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(2), &[2, 8, 16]);
        let x = Tensor::new(x.shape(), x.data().iter().map(|v| sign * (v.abs() + 1.0) * 3.0).collect()).unwrap();
        let mut g = Graph::new(&store, Mode::Eval);
        let xv = g.input(x);
        let y = block.forward(&mut g, xv).unwrap();
        assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-6));
    }
}

#[test]
fn cbam_matches_naive_composition() {
    let (bn, c, l, k) = (2, 8, 16, 7);
    let mut store = ParamStore::new();
    let block = CbamBlock::new(&mut ParamBuilder::seeded(&mut store, 11), "cbam", c, 2, k).unwrap();
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(12), &[bn, c, l]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let out = block.forward_with_gates(&mut g, xv).unwrap();
    let y = g.value(out.output);
    let (w1, b1) = (value(&store, "cbam/mlp_hidden/weight"), value(&store, "cbam/mlp_hidden/bias"));
    let (w2, b2) = (value(&store, "cbam/mlp_out/weight"), value(&store, "cbam/mlp_out/bias"));
    let (ws, bs) = (value(&store, "cbam/spatial/kernel"), value(&store, "cbam/spatial/bias"));
    let mlp = |v: &[f64]| {
        let h: Vec<f64> = naive_dense(v, c, &w1, &b1).into_iter().map(|v| v.max(0.0)).collect();
        naive_dense(&h, c / 2, &w2, &b2)
    };
    for b in 0..bn {
        let avg: Vec<f64> = (0..c).map(|ch| (0..l).map(|p| x.at3(b, ch, p)).sum::<f64>() / l as f64).collect();
        let max: Vec<f64> = (0..c)
            .map(|ch| (0..l).map(|p| x.at3(b, ch, p)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let (ma, mm) = (mlp(&avg), mlp(&max));
        let cg: Vec<f64> = (0..c).map(|ch| sigmoid(ma[ch] + mm[ch])).collect();
        let refined = |ch: usize, p: usize| x.at3(b, ch, p) * cg[ch];
        let mean_map: Vec<f64> = (0..l).map(|p| (0..c).map(|ch| refined(ch, p)).sum::<f64>() / c as f64).collect();
        let max_map: Vec<f64> = (0..l)
            .map(|p| (0..c).map(|ch| refined(ch, p)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let pad = (k - 1) / 2;
        let sg: Vec<f64> = (0..l)
            .map(|p| {
                let mut acc = bs[0];
                for kk in 0..k {
                    let Some(src) = (p + kk).checked_sub(pad).filter(|&s| s < l) else {
                        continue;
                    };
                    acc += ws[kk] * mean_map[src] + ws[k + kk] * max_map[src];
                }
                sigmoid(acc)
            })
            .collect();
        for ch in 0..c {
            assert!((g.value(out.channel_gate).at2(b, ch) - cg[ch]).abs() < ORACLE_TOL);
            for p in 0..l {
                assert!((g.value(out.spatial_gate).at3(b, 0, p) - sg[p]).abs() < ORACLE_TOL);
                assert!((y.at3(b, ch, p) - x.at3(b, ch, p) * cg[ch] * sg[p]).abs() < ORACLE_TOL);
            }
        }
    }
}

// --------------------------------------------------------------------- MSA

#[test]
fn msa_rejects_indivisible_heads() {
    let mut store = ParamStore::new();
    let cfg = MsaConfig { d_model: 16, n_heads: 6, d_ff: 32, n_layers: 1 };
    assert!(MsaLayer::new(&mut ParamBuilder::seeded(&mut store, 0), "msa", cfg).is_err());
    assert!(MsaEncoder::new(&mut ParamBuilder::seeded(&mut store, 0), "msa", cfg, true).is_err());
}

#[test]
fn msa_grid_enumerates_108_configs() {
    let grid = MsaConfig::grid();
    assert_eq!(grid.len(), 3 * 4 * 3 * 3);
    let mut dedup = grid.clone();
    dedup.sort_by_key(|c| (c.d_model, c.n_heads, c.d_ff, c.n_layers));
    dedup.dedup();
    assert_eq!(dedup.len(), 108);
}

#[test]
fn msa_zero_projections_reduce_to_layernorm_of_input() {
    let cfg = MsaConfig { d_model: 8, n_heads: 2, d_ff: 16, n_layers: 1 };
    let mut store = ParamStore::new();
    let enc = MsaEncoder::new(&mut ParamBuilder::seeded(&mut store, 3), "msa", cfg, false).unwrap();
    for n in ["query", "key", "value", "output", "ff_inner", "ff_outer"] {
        set(&mut store, &format!("msa/layer0/{n}/weight"), |_| 0.0);
        if n != "key" {
            set(&mut store, &format!("msa/layer0/{n}/bias"), |_| 0.0);
        }
    }
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(4), &[2, 5, 8]);
    let mut g = Graph::new(&store, Mode::Eval);
    let xv = g.input(x.clone());
    let y = enc.forward(&mut g, xv).unwrap();
    let y = g.value(y).data();
    // Two identity-configured layer norms in sequence; the second sees an already normalized row.
    let ln = |row: &[f64]| -> Vec<f64> {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / row.len() as f64;
        row.iter().map(|a| (a - m) / (v + LAYERNORM_EPS).sqrt()).collect()
    };
    for (r, row) in x.data().chunks(8).enumerate() {
        let want = ln(&ln(row));
        for i in 0..8 {
            assert!((y[r * 8 + i] - want[i]).abs() < ORACLE_TOL);
        }
    }
}

/// Naive scaled dot-product attention of head `h` for batch element `b`.
fn naive_head_attention(store: &ParamStore, x: &Tensor, cfg: MsaConfig, b: usize, h: usize) -> Vec<f64> {
    let (l, d) = (x.shape()[1], x.shape()[2]);
    let dk = cfg.d_k();
    let xb = &x.data()[b * l * d..(b + 1) * l * d];
    let q = naive_dense(xb, d, &value(store, "msa/layer0/query/weight"), &value(store, "msa/layer0/query/bias"));
    let k = naive_dense(xb, d, &value(store, "msa/layer0/key/weight"), &vec![0.0; d]);
    let mut a = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            let dot: f64 = (0..dk).map(|t| q[i * d + h * dk + t] * k[j * d + h * dk + t]).sum();
            a[i * l + j] = dot / (dk as f64).sqrt();
        }
    }
    naive_softmax_rows(&mut a, l);
    a
}

#[test]
fn msa_head_attention_matches_naive_reference() {
    for (bn, l, cfg) in [
        (1usize, 4usize, MsaConfig { d_model: 16, n_heads: 2, d_ff: 32, n_layers: 1 }),
        (2, 6, MsaConfig { d_model: 8, n_heads: 4, d_ff: 16, n_layers: 1 }),
    ] {
        let mut store = ParamStore::new();
        let layer = MsaLayer::new(&mut ParamBuilder::seeded(&mut store, 21), "msa/layer0", cfg).unwrap();
        let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(22), &[bn, l, cfg.d_model]);
        let mut g = Graph::new(&store, Mode::Eval);
        let xv = g.input(x.clone());
        let (y, attn) = layer.forward_with_attention(&mut g, xv).unwrap();
        assert_eq!(g.shape(y), x.shape());
        assert_eq!(g.shape(attn), &[bn * cfg.n_heads, l, l]);
        let attn = g.value(attn).data();
        for b in 0..bn {
            for h in 0..cfg.n_heads {
                let want = naive_head_attention(&store, &x, cfg, b, h);
                let off = (b * cfg.n_heads + h) * l * l;
                for (i, w) in want.iter().enumerate() {
                    assert!((attn[off + i] - w).abs() < ORACLE_TOL);
                }
            }
        }
    }
}

// ------------------------------------------------------------ properties

fn assert_row_stochastic(t: &Tensor) {
    let cols = *t.shape().last().unwrap();
    for row in t.data().chunks(cols) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn blocks_preserve_shape_and_bound_gates(
        c_pow in 1usize..6,
        l in prop::sample::select(vec![1usize, 10, 100, 250]),
        seed in 0u64..1000,
    ) {
        let c = 1 << c_pow;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, c, l]);
        let mut store = ParamStore::new();
        let mut pb = ParamBuilder::seeded(&mut store, seed);
        let r = c.min(4);
        let se = SeBlock::new(&mut pb, "se", c, r).unwrap();
        let nl = NlBlock::new(&mut pb, "nl", c, false).unwrap();
        let cbam = CbamBlock::new(&mut pb, "cbam", c, r, 7).unwrap();
        let mut g = Graph::new(&store, Mode::Eval);
        let xv = g.input(x.clone());

        let gate = se.gate(&mut g, xv).unwrap();
        prop_assert!(g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
        let y = se.forward(&mut g, xv).unwrap();
        prop_assert_eq!(g.shape(y), x.shape());

        let out = nl.forward_with_attention(&mut g, xv).unwrap();
        prop_assert_eq!(g.shape(out.output), x.shape());
        assert_row_stochastic(g.value(out.attention));

        let out = cbam.forward_with_gates(&mut g, xv).unwrap();
        prop_assert_eq!(g.shape(out.output), x.shape());
        prop_assert!(g.value(out.channel_gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(g.value(out.spatial_gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn msa_preserves_shape_and_rows_sum_to_one(
        cfg in prop::sample::select(MsaConfig::grid().into_iter().filter(|c| c.validate().is_ok()).collect::<Vec<_>>()),
        l in 1usize..12,
        seed in 0u64..1000,
    ) {
        let mut store = ParamStore::new();
        let enc = MsaEncoder::new(&mut ParamBuilder::seeded(&mut store, seed), "msa", cfg, true).unwrap();
        let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[2, l, cfg.d_model]);
        let mut g = Graph::new(&store, Mode::Eval);
        let xv = g.input(x.clone());
        let out = enc.forward_with_attention(&mut g, xv).unwrap();
        prop_assert_eq!(g.shape(out.output), x.shape());
        prop_assert_eq!(out.attention.len(), cfg.n_layers);
        for a in out.attention {
            prop_assert_eq!(g.shape(a), &[2 * cfg.n_heads, l, l][..]);
            assert_row_stochastic(g.value(a));
        }
    }
}

// -------------------------------------------------------------- gradients

type Forward = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// Gradient check with the block input registered as a parameter so input
/// gradients are verified alongside the weights.
fn check_block(shape: &[usize], build: impl Fn(&mut ParamBuilder) -> Forward) {
    for seed in 0..10u64 {
        let mut store = ParamStore::new();
        let fwd = build(&mut ParamBuilder::seeded(&mut store, seed));
        let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed + 100), shape);
        let xid = store.insert("input", x, true);
        let report = grad_check(&mut store, Mode::Train, |g| {
            let xv = g.param(xid);
            let y = fwd(g, xv)?;
            weighted_sum(g, y, seed)
        })
        .unwrap();
        assert!(
            report.max_rel_error < GRAD_TOL,
            "seed {seed}: {} {:?}",
            report.max_rel_error,
            report.per_param
        );
    }
}

#[test]
fn se_gradients() {
    check_block(&[2, 8, 6], |pb| {
        let b = SeBlock::new(pb, "se", 8, 2).unwrap();
        Box::new(move |g, x| b.forward(g, x))
    });
}

#[test]
fn nl_gradients() {
    check_block(&[2, 4, 6], |pb| {
        let b = NlBlock::new(pb, "nl", 4, false).unwrap();
        Box::new(move |g, x| b.forward(g, x))
    });
}

#[test]
fn cbam_gradients() {
    check_block(&[2, 8, 9], |pb| {
        let b = CbamBlock::new(pb, "cbam", 8, 2, 3).unwrap();
        Box::new(move |g, x| b.forward(g, x))
    });
}

#[test]
fn msa_layer_gradients() {
    let cfg = MsaConfig { d_model: 8, n_heads: 2, d_ff: 12, n_layers: 1 };
    check_block(&[2, 5, 8], |pb| {
        let b = MsaLayer::new(pb, "msa", cfg).unwrap();
        Box::new(move |g, x| b.forward(g, x))
    });
}
