use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{Binding, ExprGraph, GradSet, Gradients, ParameterSet, Scalar, Tensor, Var};
use crate::rng;

/// Scores a pair of path representations: `σ(W₂ relu(W₁ [a; b] + b₁) + b₂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationHead<T> {
    d: usize,
    params: ParameterSet<T>,
}

/// A [`RelationHead`] bound into a graph.
#[derive(Clone, Debug)]
pub struct HeadVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    binding: Binding,
}

impl<T: Scalar> RelationHead<T> {
    /// Random head for representations of width `d`, hidden width `d`.
    pub fn new(d: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::fork(seed, "head");
        let mut draw = |shape: Vec<usize>, fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| T::lit(rng.random_range(-b..=b))).collect())
        };
        let mut params = ParameterSet::new();
        params.insert("w1", draw(vec![2 * d, d], 2 * d)?)?;
        params.insert("b1", draw(vec![d], 2 * d)?)?;
        params.insert("w2", draw(vec![d, 1], d)?)?;
        params.insert("b2", draw(vec![1], d)?)?;
        Self::from_params(d, params)
    }

    /// All-zero head; scores every pair 0.5.
    pub fn zeros(d: usize) -> Result<Self> {
        let mut params = ParameterSet::new();
        params.insert("w1", Tensor::zeros([2 * d, d]))?;
        params.insert("b1", Tensor::zeros([d]))?;
        params.insert("w2", Tensor::zeros([d, 1]))?;
        params.insert("b2", Tensor::zeros([1]))?;
        Self::from_params(d, params)
    }

    pub fn from_params(d: usize, params: ParameterSet<T>) -> Result<Self> {
        let expected: [(&str, Vec<usize>); 4] =
            [("w1", vec![2 * d, d]), ("b1", vec![d]), ("w2", vec![d, 1]), ("b2", vec![1])];
        let ok = params.len() == 4
            && expected
                .iter()
                .zip(params.iter())
                .all(|((n, s), (name, t))| *n == name && s.as_slice() == t.shape());
        if !ok {
            return Err(Error::Checkpoint(format!("relation head parameters do not match width {}", d)));
        }
        Ok(RelationHead { d, params })
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn bind(&self, g: &mut ExprGraph<T>, trainable: bool) -> HeadVars {
        let binding = self.params.bind(g, |_| trainable);
        let v = |n: &str| binding.var(self.params.id(n).expect("head parameter"));
        HeadVars {
            w1: v("w1"),
            b1: v("b1"),
            w2: v("w2"),
            b2: v("b2"),
            binding,
        }
    }

    /// Relation score of one pair.
    pub fn score(&self, a: &[T], b: &[T]) -> Result<T> {
        if a.len() != self.d || b.len() != self.d {
            return Err(Error::shape(
                "relation_score",
                format!("inputs of width {} and {}, head width {}", a.len(), b.len(), self.d),
            ));
        }
        let mut g = ExprGraph::new();
        let h = self.bind(&mut g, false);
        let a = g.constant(Tensor::new([1, self.d], a.to_vec())?);
        let b = g.constant(Tensor::new([1, self.d], b.to_vec())?);
        let p = h.score(&mut g, a, b)?;
        Ok(g.value(p).item())
    }
}

impl HeadVars {
    /// Row-wise scores `[K × 1]` for pairs `(a[i], b[i])`.
    pub fn score<T: Scalar>(&self, g: &mut ExprGraph<T>, a: Var, b: Var) -> Result<Var> {
        if g.shape(a) != g.shape(b) {
            return Err(Error::shape("relation_score", format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
        }
        let x = g.concat(&[a, b], 1)?;
        let h = g.matmul(x, self.w1)?;
        let h = g.add(h, self.b1)?;
        let h = g.relu(h)?;
        let y = g.matmul(h, self.w2)?;
        let y = g.add(y, self.b2)?;
        g.sigmoid(y)
    }

    pub fn grads<T: Scalar>(&self, g: &ExprGraph<T>, grads: &Gradients<T>) -> GradSet<T> {
        self.binding.grads(g, grads)
    }

    pub fn binding(&self) -> &Binding {
        &self.binding
    }
}
