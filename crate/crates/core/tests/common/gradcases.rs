//! Reverse-mode gradients against central finite differences at width 8.

use lightpath::distill::{global_kd_loss, glkd_loss, local_kd_loss, Softening};
use lightpath::encoder::{encoder_layer, multi_head_attention, sparsify_removing, EncoderConfig, EncoderModel};
use lightpath::graph::{Path, SparsePath};
use lightpath::numerics::gradcheck::{central_difference, relative_error};
use lightpath::numerics::{ExprGraph, ParameterSet, Tensor, Var};
use lightpath::rng;
use lightpath::ssl::{cross_network_loss, cross_view_loss, PositivePairing, RelationHead};
use lightpath::Result;
use rand::Rng;

pub const TOL: f64 = 1e-4;
const H: f64 = 1e-6;
/// Central differences carry rounding noise of about `ε·|L|/h` ≈ 1e-10·|L|
/// per element; gradients below this many multiples of `|L|` are noise.
const ZERO_GRAD: f64 = 1e-8;

/// Builds a scalar loss from `params`, returning it with the leaf of each
/// parameter in `params` order.
type Build<'a> = dyn Fn(&mut ExprGraph<f64>, &ParameterSet<f64>) -> Result<(Var, Vec<Var>)> + 'a;

fn max_rel_error(params: &ParameterSet<f64>, build: &Build<'_>) -> f64 {
    max_rel_error_against(params, build, build)
}

/// Like [`max_rel_error`], with the numerical gradient taken of `reference`,
/// which must agree with `build` in value but may hold stop-gradient targets
/// fixed.
fn max_rel_error_against(params: &ParameterSet<f64>, build: &Build<'_>, reference: &Build<'_>) -> f64 {
    let mut g = ExprGraph::new();
    let (loss, leaves) = build(&mut g, params).unwrap();
    assert_eq!(leaves.len(), params.len());
    let grads = g.backward(loss).unwrap();
    let mut probe = ExprGraph::new();
    let (ref_loss, _) = reference(&mut probe, params).unwrap();
    assert!((g.value(loss).item() - probe.value(ref_loss).item()).abs() < 1e-12);
    let numeric = central_difference(params, H, |p| {
        let mut g = ExprGraph::new();
        let (loss, _) = reference(&mut g, p)?;
        Ok(g.value(loss).item())
    })
    .unwrap();
    let mut worst = 0.0f64;
    for ((&v, n), (name, _)) in leaves.iter().zip(&numeric).zip(params.iter()) {
        let a = grads.get_or_zeros(v);
        let err = compare(a.data(), n.data(), ZERO_GRAD * g.value(loss).item().abs().max(1.0));
        if err >= TOL {
            eprintln!("{}: relative error {:e}", name, err);
        }
        worst = worst.max(err);
    }
    worst
}

/// Relative error, except that a gradient vanishing identically (e.g. a key
/// bias, which softmax cancels) is compared in absolute terms, since both
/// sides are then pure rounding noise.
fn compare(analytic: &[f64], numeric: &[f64], zero: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(analytic).max(norm(numeric)) < zero {
        return 0.0;
    }
    relative_error(analytic, numeric)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::rng_from(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU and division stay smooth under ±h.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = random(shape, seed);
    for x in t.data_mut() {
        *x = x.signum() * (0.2 + x.abs());
    }
    t
}

fn set(entries: Vec<(&str, Tensor<f64>)>) -> ParameterSet<f64> {
    let mut p = ParameterSet::new();
    for (n, t) in entries {
        p.insert(n, t).unwrap();
    }
    p
}

fn bind_all(g: &mut ExprGraph<f64>, p: &ParameterSet<f64>) -> Vec<Var> {
    p.bind(g, |_| true).vars().to_vec()
}

/// Reduces an arbitrary tensor to a scalar with a fixed random weighting, so
/// every output element contributes a distinct sensitivity.
fn project(g: &mut ExprGraph<f64>, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w = g.constant(random(&shape, 999));
    let y = g.mul(x, w)?;
    g.sum(y)
}

fn unary(out: &mut Cases, name: &str, x: Tensor<f64>, op: impl Fn(&mut ExprGraph<f64>, Var) -> Result<Var>) {
    let p = set(vec![("x", x)]);
    let err = max_rel_error(&p, &|g, p| {
        let v = bind_all(g, p);
        let y = op(g, v[0])?;
        Ok((project(g, y)?, v))
    });
    out.push((name.to_string(), err));
}

fn binary(
    out: &mut Cases,
    name: &str,
    a: Tensor<f64>,
    b: Tensor<f64>,
    op: impl Fn(&mut ExprGraph<f64>, Var, Var) -> Result<Var>,
) {
    let p = set(vec![("a", a), ("b", b)]);
    let err = max_rel_error(&p, &|g, p| {
        let v = bind_all(g, p);
        let y = op(g, v[0], v[1])?;
        Ok((project(g, y)?, v))
    });
    out.push((name.to_string(), err));
}

pub type Cases = Vec<(String, f64)>;

/// Worst relative error per graph primitive.
pub fn primitives() -> Cases {
    let mut out = Cases::new();
    binary(&mut out, "add", random(&[3, 4], 1), random(&[3, 4], 2), |g, a, b| g.add(a, b));
    binary(&mut out, "add_broadcast", random(&[3, 4], 1), random(&[4], 2), |g, a, b| g.add(a, b));
    binary(&mut out, "sub", random(&[3, 4], 3), random(&[3, 4], 4), |g, a, b| g.sub(a, b));
    binary(&mut out, "mul", random(&[3, 4], 5), random(&[3, 4], 6), |g, a, b| g.mul(a, b));
    binary(&mut out, "div", random(&[3, 4], 7), away_from_zero(&[3, 4], 8), |g, a, b| g.div(a, b));
    unary(&mut out, "scale", random(&[2, 5], 9), |g, x| g.scale(x, -1.7));
    unary(&mut out, "exp", random(&[2, 5], 10), |g, x| g.exp(x));
    unary(&mut out, "relu", away_from_zero(&[2, 5], 11), |g, x| g.relu(x));
    unary(&mut out, "sigmoid", random(&[2, 5], 12), |g, x| g.sigmoid(x));
    binary(&mut out, "matmul", random(&[3, 4], 13), random(&[4, 2], 14), |g, a, b| g.matmul(a, b));
    unary(&mut out, "transpose", random(&[3, 4], 15), |g, x| g.transpose(x));
    binary(&mut out, "concat_rows", random(&[2, 3], 16), random(&[1, 3], 17), |g, a, b| g.concat(&[a, b], 0));
    binary(&mut out, "concat_cols", random(&[2, 3], 18), random(&[2, 2], 19), |g, a, b| g.concat(&[a, b, a], 1));
    unary(&mut out, "slice_rows", random(&[5, 3], 20), |g, x| g.slice(x, 0, 1, 4));
    unary(&mut out, "slice_cols", random(&[3, 5], 21), |g, x| g.slice(x, 1, 2, 5));
    unary(&mut out, "gather_repeated", random(&[4, 3], 22), |g, x| g.gather(x, &[2, 0, 2, 3]));
    unary(&mut out, "softmax_rows", random(&[3, 5], 23), |g, x| g.softmax(x, 1));
    unary(&mut out, "softmax_cols", random(&[3, 5], 24), |g, x| g.softmax(x, 0));
    let p = set(vec![("x", random(&[3, 6], 25)), ("gain", random(&[6], 26)), ("bias", random(&[6], 27))]);
    let err = max_rel_error(&p, &|g, p| {
        let v = bind_all(g, p);
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        Ok((project(g, y)?, v))
    });
    out.push(("layer_norm".into(), err));
    unary(&mut out, "mean", random(&[3, 4], 28), |g, x| {
        let y = g.exp(x)?;
        g.mean(y)
    });
    unary(&mut out, "sum", random(&[3, 4], 29), |g, x| {
        let y = g.mul(x, x)?;
        g.sum(y)
    });
    binary(&mut out, "mse", random(&[3, 4], 30), random(&[3, 4], 31), |g, a, b| g.mse(a, b));
    unary(&mut out, "bce", random(&[6, 1], 32), |g, x| {
        let p = g.sigmoid(x)?;
        g.bce(p, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
    });
    out
}

const D: usize = 8;

fn encoder_config(vocab: usize, layers: usize, heads: usize, dec_layers: usize) -> EncoderConfig {
    EncoderConfig {
        layers,
        heads,
        d_model: D,
        d_ff: 2 * D,
        vocab,
        max_len: 6,
        dec_layers,
        ln_eps: 1e-5,
        freeze_embeddings: false,
    }
}

fn paths() -> Vec<Path> {
    [vec![0u32, 1, 2, 3, 4], vec![5, 6, 7, 8], vec![2, 9, 6, 1, 0, 3]]
        .into_iter()
        .map(|e| Path::new(e).unwrap())
        .collect()
}

fn view(removed: &[&[usize]]) -> Vec<SparsePath> {
    paths().iter().zip(removed).map(|(p, r)| sparsify_removing(p, r).unwrap()).collect()
}

fn attention_and_layer(out: &mut Cases) {
    let model: EncoderModel<f64> = EncoderModel::new(encoder_config(10, 1, 2, 0), 3).unwrap();
    let layer: ParameterSet<f64> = model.params().with_prefix("enc.0.");
    assert_eq!(layer.len(), 16);
    let segments = [(0usize, 3usize), (3, 4)];
    let p = ParameterSet::merged([("", &layer), ("x.", &set(vec![("in", random(&[7, D], 40))]))]).unwrap();
    let names: Vec<String> = layer.iter().map(|(n, _)| n.to_string()).collect();

    for full_layer in [false, true] {
        let err = max_rel_error(&p, &|g, p| {
            let v = bind_all(g, p);
            let by = |n: &str| v[names.iter().position(|m| m == n).unwrap()];
            let vars = lightpath::encoder::LayerVars {
                wq: by("wq"),
                bq: by("bq"),
                wk: by("wk"),
                bk: by("bk"),
                wv: by("wv"),
                bv: by("bv"),
                wo: by("wo"),
                bo: by("bo"),
                ln1_g: by("ln1_g"),
                ln1_b: by("ln1_b"),
                w1: by("w1"),
                b1: by("b1"),
                w2: by("w2"),
                b2: by("b2"),
                ln2_g: by("ln2_g"),
                ln2_b: by("ln2_b"),
            };
            let x = v[names.len()];
            let y = if full_layer {
                encoder_layer(g, &vars, x, &segments, 2, 1e-5, None)?
            } else {
                multi_head_attention(g, &vars, x, &segments, 2, None)?
            };
            Ok((project(g, y)?, v))
        });
        let name = if full_layer { "encoder_layer" } else { "multi_head_attention" };
        out.push((name.into(), err));
    }
}

fn reconstruction_through_the_encoder() -> f64 {
    let cfg = encoder_config(10, 2, 2, 1);
    let model: EncoderModel<f64> = EncoderModel::new(cfg.clone(), 5).unwrap();
    let batch = view(&[&[2, 4], &[1], &[]]);
    let table = model.params().by_name("edge_embedding").unwrap().clone();
    // Removed rows in stacked order: orders 2, 4 of path 0, order 1 of path 1
    // and every position of the unsparsified path 2.
    let removed: Vec<usize> = vec![1, 3, 5, 9, 10, 11, 12, 13, 14];
    let ids: Vec<usize> = paths().iter().flat_map(|p| p.edges().iter().map(|&e| e as usize)).collect();
    let decode = |g: &mut ExprGraph<f64>, p: &ParameterSet<f64>| -> Result<_> {
        let m = EncoderModel::from_params(cfg.clone(), p.clone())?;
        let v = m.bind(g, true);
        let enc = v.encode(g, &batch)?;
        let dec = v.decode(g, &enc, &batch)?;
        Ok((v, dec))
    };
    max_rel_error_against(
        model.params(),
        &|g, p| {
            let (v, dec) = decode(g, p)?;
            let loss = v.reconstruction_loss(g, dec, &paths(), &batch)?;
            Ok((loss, v.binding().vars().to_vec()))
        },
        &|g, p| {
            let (v, dec) = decode(g, p)?;
            let target = g.constant(table.clone());
            let target = g.gather(target, &ids)?;
            let loss = lightpath::encoder::reconstruction_loss(g, dec, target, &removed)?;
            Ok((loss, v.binding().vars().to_vec()))
        },
    )
}

/// Main encoder and head trainable, auxiliary encoder constant.
fn relation_check(cross_network: bool) -> f64 {
    let cfg = encoder_config(10, 2, 2, 0);
    let main: EncoderModel<f64> = EncoderModel::new(cfg.clone(), 6).unwrap();
    let aux: EncoderModel<f64> = EncoderModel::new(cfg.clone(), 7).unwrap();
    let head: RelationHead<f64> = RelationHead::new(D, 8).unwrap();
    let v1 = view(&[&[2], &[1], &[3, 5]]);
    let v2 = view(&[&[1, 2, 5], &[2, 3], &[1, 2, 4, 6]]);
    let p = ParameterSet::merged([("main.", main.params()), ("head.", head.params())]).unwrap();
    max_rel_error(&p, &|g, p| {
        let m = EncoderModel::from_params(cfg.clone(), p.with_prefix("main."))?;
        let h = RelationHead::from_params(D, p.with_prefix("head."))?;
        let mv = m.bind(g, true);
        let hv = h.bind(g, true);
        let av = aux.bind(g, false);
        let e1 = mv.encode(g, &v1)?;
        let e2 = mv.encode(g, &v2)?;
        let (pr1, pr2) = (e1.prs(g)?, e2.prs(g)?);
        let mut r = rng::rng_from(17);
        let loss = if cross_network {
            let a1 = av.encode(g, &v1)?;
            let a2 = av.encode(g, &v2)?;
            let (ap1, ap2) = (a1.prs(g)?, a2.prs(g)?);
            cross_network_loss(g, &hv, [pr1, pr2], [ap1, ap2], PositivePairing::SameView, &mut r)?.loss
        } else {
            cross_view_loss(g, &hv, pr1, pr2, &mut r)?.loss
        };
        let mut leaves = mv.binding().vars().to_vec();
        leaves.extend(hv.binding().vars());
        Ok((loss, leaves))
    })
}

fn distill_check(which: &str, mode: Softening) -> f64 {
    let teacher: EncoderModel<f64> = EncoderModel::new(encoder_config(10, 2, 2, 0), 9).unwrap();
    let scfg = encoder_config(10, 1, 1, 0);
    let student: EncoderModel<f64> = EncoderModel::new(scfg.clone(), 10).unwrap();
    let batch = view(&[&[3], &[1, 4], &[2, 5]]);
    max_rel_error(student.params(), &|g, p| {
        let s = EncoderModel::from_params(scfg.clone(), p.clone())?;
        let sv = s.bind(g, true);
        let tv = teacher.bind(g, false);
        let te = tv.encode(g, &batch)?;
        let se = sv.encode(g, &batch)?;
        let loss = match which {
            "global" => global_kd_loss(g, &te, &se, 2.0, mode)?,
            "local" => local_kd_loss(g, &te, &se, 2.0, mode)?,
            _ => glkd_loss(g, &te, &se, 0.6, 2.0, mode)?.glkd,
        };
        Ok((loss, sv.binding().vars().to_vec()))
    })
}

/// Worst relative error of the encoder layer and every training loss, with
/// respect to all trainable parameters upstream of it.
pub fn composites() -> Cases {
    let mut out = Cases::new();
    attention_and_layer(&mut out);
    out.push(("reconstruction".into(), reconstruction_through_the_encoder()));
    out.push(("cross_network".into(), relation_check(true)));
    out.push(("cross_view".into(), relation_check(false)));
    for mode in [Softening::Exp, Softening::Softmax] {
        for which in ["global", "local", "glkd"] {
            out.push((format!("{}_{:?}", which, mode).to_lowercase(), distill_check(which, mode)));
        }
    }
    out
}
