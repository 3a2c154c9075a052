//! Central finite differences, used as an independent oracle for the
//! analytic gradients produced by [`Tape::backward`](crate::Tape::backward).

use crate::tensor::Tensor;

/// Numeric gradient of the scalar function `f` w.r.t. `inputs[which]`.
pub fn numeric_gradient(f: impl Fn(&[Tensor]) -> f64, inputs: &[Tensor], which: usize, step: f64) -> Tensor {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let n = inputs[which].len();
    let mut grad = vec![0.0; n];
    for (i, gi) in grad.iter_mut().enumerate() {
        let orig = inputs[which].data()[i];
        work[which].data_mut()[i] = orig + step;
        let up = f(&work);
        work[which].data_mut()[i] = orig - step;
        let down = f(&work);
        work[which].data_mut()[i] = orig;
        *gi = (up - down) / (2.0 * step);
    }
    Tensor::new(inputs[which].shape().to_vec(), grad)
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let diff = analytic.zip_map(numeric, |a, b| a - b).norm();
    let scale = analytic.norm() + numeric.norm();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}
