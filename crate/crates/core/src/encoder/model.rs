use rand::Rng as _;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{Path, SparsePath};
use crate::numerics::{Binding, ExprGraph, GradSet, Gradients, ParameterSet, Scalar, Tensor, Var};
use crate::rng;

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

const LAYER_PARAMS: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
];

fn layer_layout(prefix: &str, d: usize, d_ff: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    let a = 1.0 / (d as f64).sqrt();
    let f = 1.0 / (d_ff as f64).sqrt();
    let shapes: [(Vec<usize>, Init); 16] = [
        (vec![d, d], Init::Uniform(a)),
        (vec![d], Init::Uniform(a)),
        (vec![d, d], Init::Uniform(a)),
        (vec![d], Init::Uniform(a)),
        (vec![d, d], Init::Uniform(a)),
        (vec![d], Init::Uniform(a)),
        (vec![d, d], Init::Uniform(a)),
        (vec![d], Init::Uniform(a)),
        (vec![d], Init::Ones),
        (vec![d], Init::Zeros),
        (vec![d, d_ff], Init::Uniform(a)),
        (vec![d_ff], Init::Uniform(a)),
        (vec![d_ff, d], Init::Uniform(f)),
        (vec![d], Init::Uniform(f)),
        (vec![d], Init::Ones),
        (vec![d], Init::Zeros),
    ];
    for (name, (shape, init)) in LAYER_PARAMS.iter().zip(shapes) {
        out.push((format!("{prefix}.{name}"), shape, init));
    }
}

/// Every parameter of the model in registration order.
fn layout(c: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let mut out = vec![
        ("edge_embedding".to_string(), vec![c.vocab, d], Init::Uniform(1.0)),
        ("pr_token".to_string(), vec![1, d], Init::Uniform(1.0)),
        ("position".to_string(), vec![c.max_len + 1, d], Init::Uniform(1.0)),
    ];
    for l in 0..c.layers {
        layer_layout(&format!("enc.{l}"), d, c.d_ff, &mut out);
    }
    if c.has_decoder() {
        out.push(("mask_token".to_string(), vec![1, d], Init::Uniform(1.0)));
        for l in 0..c.dec_layers {
            layer_layout(&format!("dec.{l}"), d, c.d_ff, &mut out);
        }
        let a = 1.0 / (d as f64).sqrt();
        out.push(("dec.out.w".to_string(), vec![d, d], Init::Uniform(a)));
        out.push(("dec.out.b".to_string(), vec![d], Init::Uniform(a)));
    }
    out
}

/// Transformer path encoder with its reconstruction decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<T> {
    config: EncoderConfig,
    params: ParameterSet<T>,
}

/// Final encoder states of one path, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPath<T> {
    /// Path representation, the state at position 0.
    pub pr: Tensor<T>,
    /// One row per kept edge.
    pub edge_states: Tensor<T>,
    pub orders: Vec<usize>,
}

impl<T: Scalar> EncoderModel<T> {
    /// Fresh model; projections are U(±1/√fan_in), embedding-like tables
    /// U(±1), layer norms start as the identity.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::fork(seed, "init");
        let mut params = ParameterSet::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Uniform(b) => (0..n).map(|_| T::lit(rng.random_range(-b..=b))).collect(),
                Init::Ones => vec![T::one(); n],
                Init::Zeros => vec![T::zero(); n],
            };
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(EncoderModel { config, params })
    }

    /// Wraps existing parameters, checking names and shapes against `config`.
    pub fn from_params(config: EncoderConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(params.iter()) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected `{}` {:?}, found `{}` {:?}",
                    name,
                    shape,
                    got_name,
                    t.shape()
                )));
            }
        }
        Ok(EncoderModel { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterSet<T> {
        self.params
    }

    /// Replaces the edge embedding table, e.g. with externally trained vectors.
    pub fn import_edge_embeddings(&mut self, table: Tensor<T>) -> Result<()> {
        let id = self.params.id("edge_embedding")?;
        let current = self.params.get_mut(id);
        if table.shape() != current.shape() {
            return Err(Error::shape(
                "import_edge_embeddings",
                format!("{:?} vs {:?}", table.shape(), current.shape()),
            ));
        }
        *current = table;
        Ok(())
    }

    /// Adds the parameters to `g`. With `trainable` false every parameter is
    /// a constant; otherwise all are trainable except a frozen embedding table.
    pub fn bind(&self, g: &mut ExprGraph<T>, trainable: bool) -> EncoderVars {
        let freeze = self.config.freeze_embeddings;
        let binding = self
            .params
            .bind(g, |name| trainable && !(freeze && name == "edge_embedding"));
        let var = |name: &str| binding.var(self.params.id(name).expect("layout parameter"));
        let layer = |prefix: String| {
            let v = |n: &str| var(&format!("{prefix}.{n}"));
            LayerVars {
                wq: v("wq"),
                bq: v("bq"),
                wk: v("wk"),
                bk: v("bk"),
                wv: v("wv"),
                bv: v("bv"),
                wo: v("wo"),
                bo: v("bo"),
                ln1_g: v("ln1_g"),
                ln1_b: v("ln1_b"),
                w1: v("w1"),
                b1: v("b1"),
                w2: v("w2"),
                b2: v("b2"),
                ln2_g: v("ln2_g"),
                ln2_b: v("ln2_b"),
            }
        };
        let decoder = self.config.has_decoder().then(|| DecoderVars {
            mask_token: var("mask_token"),
            layers: (0..self.config.dec_layers).map(|l| layer(format!("dec.{l}"))).collect(),
            out_w: var("dec.out.w"),
            out_b: var("dec.out.b"),
        });
        EncoderVars {
            config: self.config.clone(),
            edge_embedding: var("edge_embedding"),
            pr_token: var("pr_token"),
            position: var("position"),
            layers: (0..self.config.layers).map(|l| layer(format!("enc.{l}"))).collect(),
            decoder,
            binding,
        }
    }

    /// Encodes one sparse path outside of any training graph.
    pub fn encode(&self, sparse: &SparsePath) -> Result<EncodedPath<T>> {
        let mut g = ExprGraph::new();
        let vars = self.bind(&mut g, false);
        let batch = vars.encode(&mut g, std::slice::from_ref(sparse))?;
        let states = g.value(batch.states);
        let d = self.config.d_model;
        Ok(EncodedPath {
            pr: Tensor::new([d], states.row(0).to_vec())?,
            edge_states: Tensor::new([sparse.len(), d], states.data()[d..].to_vec())?,
            orders: sparse.orders().to_vec(),
        })
    }

    /// Path representations of whole paths, one row each.
    pub fn embed_paths(&self, paths: &[Path]) -> Result<Tensor<T>> {
        const CHUNK: usize = 64;
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(paths.len() * d);
        for chunk in paths.chunks(CHUNK) {
            let mut g = ExprGraph::new();
            let vars = self.bind(&mut g, false);
            let sparse: Vec<SparsePath> = chunk.iter().map(SparsePath::full).collect();
            let batch = vars.encode(&mut g, &sparse)?;
            let prs = batch.prs(&mut g)?;
            data.extend_from_slice(g.value(prs).data());
        }
        Tensor::new([paths.len(), d], data)
    }
}

/// Graph handles for one transformer layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub mask_token: Var,
    pub layers: Vec<LayerVars>,
    pub out_w: Var,
    pub out_b: Var,
}

/// An [`EncoderModel`] bound into an [`ExprGraph`].
#[derive(Clone, Debug)]
pub struct EncoderVars {
    config: EncoderConfig,
    pub edge_embedding: Var,
    pub pr_token: Var,
    pub position: Var,
    pub layers: Vec<LayerVars>,
    pub decoder: Option<DecoderVars>,
    binding: Binding,
}

/// Encoder output for a batch of sparse paths, stacked row-wise.
///
/// Path `i` owns rows `segments[i]`; the first of them is its path
/// representation, the rest are its kept-edge states.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub states: Var,
    pub segments: Vec<(usize, usize)>,
    /// Attention matrices per layer, head and path, when requested.
    pub attention: Vec<Var>,
}

impl EncodedBatch {
    /// `[batch × d]` path representations.
    pub fn prs<T: Scalar>(&self, g: &mut ExprGraph<T>) -> Result<Var> {
        let starts: Vec<usize> = self.segments.iter().map(|s| s.0).collect();
        g.gather(self.states, &starts)
    }

    /// `[1 × d]` representation of path `i`.
    pub fn pr<T: Scalar>(&self, g: &mut ExprGraph<T>, i: usize) -> Result<Var> {
        let (start, _) = self.segments[i];
        g.slice(self.states, 0, start, start + 1)
    }

    /// `[N′ × d]` kept-edge states of path `i`.
    pub fn edge_states<T: Scalar>(&self, g: &mut ExprGraph<T>, i: usize) -> Result<Var> {
        let (start, len) = self.segments[i];
        g.slice(self.states, 0, start + 1, start + len)
    }
}

fn linear<T: Scalar>(g: &mut ExprGraph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Multi-head self-attention applied independently within each segment of
/// the stacked rows `x`. Attention matrices are pushed to `attention` if given.
pub fn multi_head_attention<T: Scalar>(
    g: &mut ExprGraph<T>,
    layer: &LayerVars,
    x: Var,
    segments: &[(usize, usize)],
    heads: usize,
    mut attention: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let d = g.shape(x)[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape("attention", format!("{} columns over {} heads", d, heads)));
    }
    let dk = d / heads;
    let q = linear(g, x, layer.wq, layer.bq)?;
    let q = g.scale(q, T::lit(1.0 / (dk as f64).sqrt()))?;
    let k = linear(g, x, layer.wk, layer.bk)?;
    let v = linear(g, x, layer.wv, layer.bv)?;
    let rows = g.shape(x)[0];
    let whole = segments.len() == 1 && segments[0] == (0, rows);

    let mut head_out = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 1, h * dk, (h + 1) * dk)?,
                g.slice(k, 1, h * dk, (h + 1) * dk)?,
                g.slice(v, 1, h * dk, (h + 1) * dk)?,
            )
        };
        let mut seg_out = Vec::with_capacity(segments.len());
        for &(start, len) in segments {
            let (qs, ks, vs) = if whole {
                (qh, kh, vh)
            } else {
                (
                    g.slice(qh, 0, start, start + len)?,
                    g.slice(kh, 0, start, start + len)?,
                    g.slice(vh, 0, start, start + len)?,
                )
            };
            let kt = g.transpose(ks)?;
            let scores = g.matmul(qs, kt)?;
            let weights = g.softmax(scores, 1)?;
            if let Some(sink) = attention.as_deref_mut() {
                sink.push(weights);
            }
            seg_out.push(g.matmul(weights, vs)?);
        }
        head_out.push(if seg_out.len() == 1 {
            seg_out[0]
        } else {
            g.concat(&seg_out, 0)?
        });
    }
    let ctx = if heads == 1 { head_out[0] } else { g.concat(&head_out, 1)? };
    linear(g, ctx, layer.wo, layer.bo)
}

/// `Z = LN(X + MHA(X))`, then `LN(Z + FFN(Z))` with a ReLU FFN.
pub fn encoder_layer<T: Scalar>(
    g: &mut ExprGraph<T>,
    layer: &LayerVars,
    x: Var,
    segments: &[(usize, usize)],
    heads: usize,
    eps: f64,
    attention: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let a = multi_head_attention(g, layer, x, segments, heads, attention)?;
    let z = g.add(x, a)?;
    let z = g.layer_norm(z, layer.ln1_g, layer.ln1_b, T::lit(eps))?;
    let h = linear(g, z, layer.w1, layer.b1)?;
    let h = g.relu(h)?;
    let f = linear(g, h, layer.w2, layer.b2)?;
    let out = g.add(z, f)?;
    g.layer_norm(out, layer.ln2_g, layer.ln2_b, T::lit(eps))
}

impl EncoderVars {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Gradients for the bound [`EncoderModel`]'s parameters, `None` where frozen.
    pub fn grads<T: Scalar>(&self, g: &ExprGraph<T>, grads: &Gradients<T>) -> GradSet<T> {
        self.binding.grads(g, grads)
    }

    pub fn binding(&self) -> &Binding {
        &self.binding
    }

    fn edge_rows(&self, edges: &[u32]) -> Result<Vec<usize>> {
        edges
            .iter()
            .map(|&e| {
                if (e as usize) < self.config.vocab {
                    Ok(e as usize)
                } else {
                    Err(Error::invalid(format!(
                        "edge id {} beyond vocabulary of {}",
                        e, self.config.vocab
                    )))
                }
            })
            .collect()
    }

    /// `[(N′+1) × d]` input rows: the path token at position 0, then each
    /// kept edge's embedding plus the position of its order.
    pub fn assemble_input<T: Scalar>(&self, g: &mut ExprGraph<T>, sparse: &SparsePath) -> Result<Var> {
        if sparse.full_len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "path of {} edges exceeds max_len {}",
                sparse.full_len(),
                self.config.max_len
            )));
        }
        let emb = g.gather(self.edge_embedding, &self.edge_rows(sparse.edges())?)?;
        let x = g.concat(&[self.pr_token, emb], 0)?;
        let positions: Vec<usize> = std::iter::once(0).chain(sparse.orders().iter().copied()).collect();
        let pos = g.gather(self.position, &positions)?;
        g.add(x, pos)
    }

    /// Runs the encoder stack over a batch of sparse paths.
    pub fn encode<T: Scalar>(&self, g: &mut ExprGraph<T>, batch: &[SparsePath]) -> Result<EncodedBatch> {
        self.encode_inner(g, batch, false)
    }

    /// Like [`encode`](Self::encode), also returning every attention matrix.
    pub fn encode_with_attention<T: Scalar>(
        &self,
        g: &mut ExprGraph<T>,
        batch: &[SparsePath],
    ) -> Result<EncodedBatch> {
        self.encode_inner(g, batch, true)
    }

    fn encode_inner<T: Scalar>(&self, g: &mut ExprGraph<T>, batch: &[SparsePath], keep: bool) -> Result<EncodedBatch> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut inputs = Vec::with_capacity(batch.len());
        let mut segments = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for s in batch {
            inputs.push(self.assemble_input(g, s)?);
            segments.push((offset, s.len() + 1));
            offset += s.len() + 1;
        }
        let mut x = if inputs.len() == 1 { inputs[0] } else { g.concat(&inputs, 0)? };
        let mut attention = Vec::new();
        for layer in &self.layers {
            let sink = keep.then_some(&mut attention);
            x = encoder_layer(g, layer, x, &segments, self.config.heads, self.config.ln_eps, sink)?;
        }
        Ok(EncodedBatch {
            states: x,
            segments,
            attention,
        })
    }

    /// Rebuilds every full path from its encoding: encoded rows return to
    /// their positions, removed positions get the mask token, all rows get
    /// position embeddings, then the decoder layers and an output projection
    /// map rows `1..=N` back to edge-embedding space. Returns `[ΣN × d]`.
    pub fn decode<T: Scalar>(&self, g: &mut ExprGraph<T>, encoded: &EncodedBatch, batch: &[SparsePath]) -> Result<Var> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("model was built without a decoder".into()))?;
        if batch.len() != encoded.segments.len() {
            return Err(Error::invalid("batch does not match its encoding"));
        }
        let mut rows = Vec::with_capacity(batch.len());
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(batch.len());
        let mut outputs = Vec::new();
        let mut offset = 0;
        for (i, s) in batch.iter().enumerate() {
            let (start, len) = encoded.segments[i];
            if len != s.len() + 1 {
                return Err(Error::invalid(format!("path {} does not match its encoding", i)));
            }
            let n = s.full_len();
            if n > self.config.max_len {
                return Err(Error::invalid(format!("path of {} edges exceeds max_len {}", n, self.config.max_len)));
            }
            let seg = g.slice(encoded.states, 0, start, start + len)?;
            let src = g.concat(&[seg, dec.mask_token], 0)?;
            rows.push(g.gather(src, &decoder_rows(s))?);
            positions.extend(0..=n);
            segments.push((offset, n + 1));
            outputs.extend(offset + 1..=offset + n);
            offset += n + 1;
        }
        let x = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
        let pos = g.gather(self.position, &positions)?;
        let mut x = g.add(x, pos)?;
        for layer in &dec.layers {
            x = encoder_layer(g, layer, x, &segments, self.config.heads, self.config.ln_eps, None)?;
        }
        let edge_rows = g.gather(x, &outputs)?;
        linear(g, edge_rows, dec.out_w, dec.out_b)
    }

    /// Reconstruction loss for a decoded batch against the (detached) input
    /// embeddings of the full paths, over removed positions of each path, or
    /// over all of its positions when nothing was removed.
    pub fn reconstruction_loss<T: Scalar>(
        &self,
        g: &mut ExprGraph<T>,
        predicted: Var,
        paths: &[Path],
        batch: &[SparsePath],
    ) -> Result<Var> {
        if paths.len() != batch.len() {
            return Err(Error::invalid("paths and sparse views differ in count"));
        }
        let mut ids = Vec::new();
        let mut removed = Vec::new();
        for (p, s) in paths.iter().zip(batch) {
            if p.len() != s.full_len() {
                return Err(Error::invalid("sparse view does not belong to its path"));
            }
            let offset = ids.len();
            let gone = s.removed_orders();
            if gone.is_empty() {
                removed.extend(offset..offset + p.len());
            } else {
                removed.extend(gone.iter().map(|o| offset + o - 1));
            }
            ids.extend(self.edge_rows(p.edges())?);
        }
        let original = g.gather(self.edge_embedding, &ids)?;
        let original = g.detach(original);
        reconstruction_loss(g, predicted, original, &removed)
    }
}

/// For each position `0..=N`, the row of `[encoded rows; mask token]` the
/// decoder reads there. Index `N′ + 1` is the mask token.
pub(crate) fn decoder_rows(s: &SparsePath) -> Vec<usize> {
    let mut index = vec![s.len() + 1; s.full_len() + 1];
    index[0] = 0;
    for (j, &o) in s.orders().iter().enumerate() {
        index[o] = j + 1;
    }
    index
}

/// Mean squared error between `predicted` and `original` rows at `removed`,
/// or over every row when `removed` is empty.
pub fn reconstruction_loss<T: Scalar>(g: &mut ExprGraph<T>, predicted: Var, original: Var, removed: &[usize]) -> Result<Var> {
    if g.shape(predicted) != g.shape(original) {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("{:?} vs {:?}", g.shape(predicted), g.shape(original)),
        ));
    }
    if g.shape(predicted).first().copied().unwrap_or(0) == 0 {
        return Err(Error::invalid("reconstruction of an empty path"));
    }
    if removed.is_empty() {
        return g.mse(predicted, original);
    }
    let p = g.gather(predicted, removed)?;
    let o = g.gather(original, removed)?;
    g.mse(p, o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::sparsify_removing;

    fn config(layers: usize, heads: usize, d: usize) -> EncoderConfig {
        EncoderConfig {
            layers,
            heads,
            d_model: d,
            d_ff: 2 * d,
            vocab: 16,
            max_len: 8,
            dec_layers: 1.min(layers - 1),
            ln_eps: 1e-5,
            freeze_embeddings: true,
        }
    }

    fn path(edges: &[u32]) -> Path {
        Path::new(edges.to_vec()).unwrap()
    }

    #[test]
    fn encode_shapes() {
        let m = EncoderModel::<f64>::new(config(2, 2, 8), 1).unwrap();
        let s = sparsify_removing(&path(&[1, 3, 4, 6, 7]), &[1, 3, 5]).unwrap();
        let e = m.encode(&s).unwrap();
        assert_eq!(e.pr.shape(), &[8]);
        assert_eq!(e.edge_states.shape(), &[2, 8]);
        assert_eq!(e.orders, vec![2, 4]);
        assert_eq!(m.encode(&s).unwrap(), e);
    }

    #[test]
    fn input_rows_use_orders_as_positions() {
        let m = EncoderModel::<f64>::new(config(2, 2, 4), 2).unwrap();
        let s = sparsify_removing(&path(&[1, 3, 4, 6, 7]), &[1, 3, 5]).unwrap();
        let mut g = ExprGraph::new();
        let v = m.bind(&mut g, false);
        let x = v.assemble_input(&mut g, &s).unwrap();
        let p = m.params();
        let emb = p.by_name("edge_embedding").unwrap();
        let pos = p.by_name("position").unwrap();
        let pr = p.by_name("pr_token").unwrap();
        let expect = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        let xv = g.value(x);
        assert_eq!(xv.shape(), &[3, 4]);
        assert_eq!(xv.row(0), expect(pr.row(0), pos.row(0)).as_slice());
        assert_eq!(xv.row(1), expect(emb.row(3), pos.row(2)).as_slice());
        assert_eq!(xv.row(2), expect(emb.row(6), pos.row(4)).as_slice());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let m = EncoderModel::<f64>::new(config(3, 2, 8), 3).unwrap();
        let batch = vec![
            SparsePath::full(&path(&[1, 2, 3, 4])),
            sparsify_removing(&path(&[5, 6, 7]), &[2]).unwrap(),
        ];
        let mut g = ExprGraph::new();
        let v = m.bind(&mut g, false);
        let enc = v.encode_with_attention(&mut g, &batch).unwrap();
        assert_eq!(enc.attention.len(), 3 * 2 * 2);
        for &a in &enc.attention {
            let t = g.value(a);
            for r in 0..t.rows() {
                assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singleton_and_identical_rows() {
        let m = EncoderModel::<f64>::new(config(1, 2, 4), 4).unwrap();
        let mut g = ExprGraph::new();
        let v = m.bind(&mut g, false);
        let one = g.constant(Tensor::from_rows(&[&[0.3, -0.2, 0.9, 0.1]]).unwrap());
        let mut attn = Vec::new();
        multi_head_attention(&mut g, &v.layers[0], one, &[(0, 1)], 2, Some(&mut attn)).unwrap();
        for a in &attn {
            assert_eq!(g.value(*a).data(), &[1.0]);
        }
        let two = g.constant(Tensor::from_rows(&[&[0.3, -0.2, 0.9, 0.1], &[0.3, -0.2, 0.9, 0.1]]).unwrap());
        attn.clear();
        multi_head_attention(&mut g, &v.layers[0], two, &[(0, 2)], 2, Some(&mut attn)).unwrap();
        for a in &attn {
            for &w in g.value(*a).data() {
                assert!((w - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn layer_output_is_normalised() {
        let m = EncoderModel::<f64>::new(config(1, 1, 8), 5).unwrap();
        let e = m.encode(&SparsePath::full(&path(&[1, 2, 3]))).unwrap();
        let mut rows = vec![e.pr.data().to_vec()];
        rows.extend((0..3).map(|r| e.edge_states.row(r).to_vec()));
        for r in rows {
            let mean = r.iter().sum::<f64>() / 8.0;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn stacked_layers_compose() {
        let mut m = EncoderModel::<f64>::new(config(2, 2, 4), 6).unwrap();
        for name in LAYER_PARAMS {
            let src = m.params().by_name(&format!("enc.0.{name}")).unwrap().clone();
            let id = m.params().id(&format!("enc.1.{name}")).unwrap();
            *m.params_mut().get_mut(id) = src;
        }
        let s = SparsePath::full(&path(&[2, 4, 6]));
        let stacked = m.encode(&s).unwrap();

        let mut g = ExprGraph::new();
        let v = m.bind(&mut g, false);
        let x = v.assemble_input(&mut g, &s).unwrap();
        let seg = [(0, 4)];
        let y = encoder_layer(&mut g, &v.layers[0], x, &seg, 2, 1e-5, None).unwrap();
        let y = encoder_layer(&mut g, &v.layers[0], y, &seg, 2, 1e-5, None).unwrap();
        assert_eq!(g.value(y).row(0), stacked.pr.data());
    }

    #[test]
    fn batching_matches_single_paths() {
        let m = EncoderModel::<f64>::new(config(2, 2, 8), 7).unwrap();
        let a = SparsePath::full(&path(&[1, 2, 3, 4]));
        let b = sparsify_removing(&path(&[5, 6, 7, 8, 9]), &[1, 4]).unwrap();
        let mut g = ExprGraph::new();
        let v = m.bind(&mut g, false);
        let enc = v.encode(&mut g, &[a.clone(), b.clone()]).unwrap();
        let prs = enc.prs(&mut g).unwrap();
        let single_a = m.encode(&a).unwrap();
        let single_b = m.encode(&b).unwrap();
        let got = g.value(prs);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(got.row(0), single_a.pr.data()));
        assert!(close(got.row(1), single_b.pr.data()));
    }

    #[test]
    fn permuting_edges_changes_representation() {
        let m = EncoderModel::<f64>::new(config(2, 2, 8), 8).unwrap();
        let a = m.encode(&SparsePath::full(&path(&[1, 2, 3]))).unwrap();
        let b = m.encode(&SparsePath::full(&path(&[2, 1, 3]))).unwrap();
        assert!(a.pr.max_abs_diff(&b.pr) > 1e-6);
    }

    #[test]
    fn decoder_mask_rows() {
        let s = sparsify_removing(&path(&[1, 3, 4, 6, 7]), &[1, 3, 5]).unwrap();
        let rows = decoder_rows(&s);
        assert_eq!(rows, vec![0, 3, 1, 3, 2, 3]);
        assert_eq!(rows.iter().filter(|&&r| r == s.len() + 1).count(), 3);
        let full = SparsePath::full(&path(&[1, 2, 3]));
        assert!(!decoder_rows(&full).contains(&(full.len() + 1)));
    }

    #[test]
    fn decoder_output_shape_and_mask_independence() {
        let mut m = EncoderModel::<f64>::new(config(2, 2, 4), 9).unwrap();
        let p = path(&[1, 3, 4, 6, 7]);
        let run = |m: &EncoderModel<f64>, s: &SparsePath| {
            let mut g = ExprGraph::new();
            let v = m.bind(&mut g, false);
            let enc = v.encode(&mut g, std::slice::from_ref(s)).unwrap();
            let out = v.decode(&mut g, &enc, std::slice::from_ref(s)).unwrap();
            g.value(out).clone()
        };
        let sparse = sparsify_removing(&p, &[1, 3, 5]).unwrap();
        let full = SparsePath::full(&p);
        let before = (run(&m, &sparse), run(&m, &full));
        assert_eq!(before.0.shape(), &[5, 4]);
        let id = m.params().id("mask_token").unwrap();
        m.params_mut().get_mut(id).data_mut()[0] += 1.0;
        let after = (run(&m, &sparse), run(&m, &full));
        assert_ne!(before.0, after.0);
        assert_eq!(before.1, after.1);
    }

    #[test]
    fn reconstruction_loss_closed_forms() {
        let mut g = ExprGraph::<f64>::new();
        let orig = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap());
        let exact = g.constant(Tensor::from_rows(&[&[9.0, 9.0], &[3.0, 4.0], &[0.0, 0.0]]).unwrap());
        let l = reconstruction_loss(&mut g, exact, orig, &[1]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let c = 0.75;
        let off = g.constant(Tensor::from_rows(&[&[-7.0, 1.0], &[3.0 + c, 4.0 + c], &[2.0, 2.0]]).unwrap());
        let l = reconstruction_loss(&mut g, off, orig, &[1]).unwrap();
        assert!((g.value(l).item() - c * c).abs() < 1e-15);
        let all = reconstruction_loss(&mut g, orig, orig, &[]).unwrap();
        assert_eq!(g.value(all).item(), 0.0);
    }

    #[test]
    fn layout_is_checked_on_load() {
        let m = EncoderModel::<f64>::new(config(2, 2, 4), 1).unwrap();
        let mut other = config(2, 2, 4);
        other.d_ff = 3;
        assert!(EncoderModel::from_params(other, m.params().clone()).is_err());
    }

    #[test]
    fn frozen_embeddings_get_no_gradient() {
        let m = EncoderModel::<f64>::new(config(2, 2, 4), 1).unwrap();
        let p = path(&[1, 2, 3, 4]);
        let s = sparsify_removing(&p, &[2]).unwrap();
        let mut g = ExprGraph::new();
        let v = m.bind(&mut g, true);
        let enc = v.encode(&mut g, std::slice::from_ref(&s)).unwrap();
        let out = v.decode(&mut g, &enc, std::slice::from_ref(&s)).unwrap();
        let loss = v.reconstruction_loss(&mut g, out, &[p], &[s]).unwrap();
        let grads = v.grads(&g, &g.backward(loss).unwrap());
        let emb = m.params().id("edge_embedding").unwrap();
        assert!(grads.get(emb).is_none());
        let wq = m.params().id("enc.0.wq").unwrap();
        assert!(grads.get(wq).unwrap().data().iter().any(|x| *x != 0.0));
    }
}
