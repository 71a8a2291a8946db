use super::{Result, Tape, Tensor, TensorError, Var};

/// Compare an analytic gradient with central differences.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn finite_diff_check_with_grad<F, G>(value: F, grad: G, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
    G: Fn(&Tensor) -> Result<Tensor>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(TensorError::Contract(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    let base = value(x)?;
    if value(x)?.to_bits() != base.to_bits() {
        return Err(TensorError::Contract(
            "function is not deterministic: two evaluations at the same point differ".into(),
        ));
    }
    let analytic = grad(x)?;
    if analytic.shape() != x.shape() {
        return Err(TensorError::Shape {
            op: "finite_diff_check",
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", analytic.shape()),
        });
    }
    let mut probe = x.clone();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = value(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = value(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// [`finite_diff_check_with_grad`] where the gradient comes from the tape.
/// `f` builds a scalar from the input variable it is handed.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let value = |x: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(x.clone(), false);
        let out = f(&mut t, v)?;
        t.value(out).item()
    };
    let grad = |x: &Tensor| -> Result<Tensor> {
        let mut t = Tape::new();
        let v = t.leaf(x.clone(), true);
        let out = f(&mut t, v)?;
        t.backward(out)?;
        Ok(t.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
    };
    finite_diff_check_with_grad(value, grad, x, eps)
}
