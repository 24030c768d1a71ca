//! Central finite differences over every parameter, for checking gradients.

use super::{EncoderParams, Tensors};

/// Numerical gradient of `loss` with step `h` for every scalar parameter.
pub fn numerical_gradient<F>(params: &EncoderParams, h: f64, mut loss: F) -> Tensors
where
    F: FnMut(&EncoderParams) -> f64,
{
    let mut work = params.clone();
    let mut grads = Tensors::zeros_like(&params.tensors);
    let lens: Vec<usize> = params.tensors.iter().map(|(_, m)| m.data().len()).collect();
    for (t, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let original = tensor_mut(&mut work.tensors, t).data()[i];
            tensor_mut(&mut work.tensors, t).data_mut()[i] = original + h;
            let plus = loss(&work);
            tensor_mut(&mut work.tensors, t).data_mut()[i] = original - h;
            let minus = loss(&work);
            tensor_mut(&mut work.tensors, t).data_mut()[i] = original;
            tensor_mut(&mut grads, t).data_mut()[i] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Numerical gradient of `loss` with respect to a plain vector input.
pub fn numerical_vector_gradient<F>(x: &[f64], h: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let plus = loss(&work);
            work[i] = x[i] - h;
            let minus = loss(&work);
            work[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-8)
}

/// Relative error per named tensor.
pub fn tensor_errors(analytic: &Tensors, numeric: &Tensors) -> Vec<(&'static str, f64)> {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|((name, a), (_, n))| (name, relative_error(a.data(), n.data())))
        .collect()
}

fn tensor_mut(t: &mut Tensors, index: usize) -> &mut super::Matrix {
    t.iter_mut().nth(index).expect("tensor index").1
}

/// Distance of an encoding from the nearest non-differentiable point: the
/// smallest `|pre-activation|`, or the smallest gap between the two largest
/// activations of a filter (a max-pool switch). Finite differences with step
/// `h` are only meaningful when this is comfortably above `h`.
pub fn kink_margin(
    params: &EncoderParams,
    instance: &crate::corpus::Instance,
    masked: bool,
    delta: Option<&[f64]>,
) -> f64 {
    let prep = params.prepare(instance, masked);
    let fwd = params.forward(&prep, delta);
    let f_count = params.config.filters;
    let mut margin = fwd
        .pre
        .data()
        .iter()
        .fold(f64::INFINITY, |m, x| m.min(x.abs()));
    for f in 0..f_count {
        let mut column: Vec<f64> = (0..fwd.act.rows()).map(|p| fwd.act.get(p, f)).collect();
        column.sort_by(|a, b| b.total_cmp(a));
        if column.len() > 1 && column[0] > 0.0 {
            margin = margin.min(column[0] - column[1]);
        }
    }
    margin
}
