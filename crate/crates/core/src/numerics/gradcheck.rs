//! Central finite differences for verifying reverse-mode gradients.

use super::{ParameterSet, Tensor};
use crate::error::Result;

/// Numerical gradient of `loss` with respect to every parameter in `params`.
///
/// Each scalar is perturbed by `±h` in turn; `loss` must be a pure function
/// of the parameter values.
pub fn central_difference<F>(params: &ParameterSet<f64>, h: f64, mut loss: F) -> Result<Vec<Tensor<f64>>>
where
    F: FnMut(&ParameterSet<f64>) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).numel();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = loss(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = loss(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            *gi = (up - down) / (2.0 * h);
        }
        out.push(Tensor::new(params.get(id).shape().to_vec(), g)?);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
