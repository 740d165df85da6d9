use super::{Float, Result, Tensor};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_rel_error: f64,
    /// Input index and element index where the maximum occurred.
    pub worst: (usize, usize),
    pub elements_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference check of `f` with respect to every element of every
/// input. Inputs are perturbed in place and restored; `f` must rebuild its
/// graph from them on each call and return a single-element tensor.
///
/// The unit floor in the denominator keeps near-zero gradients from
/// dominating the ratio.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], h: T, tol: f64) -> Result<GradCheckReport>
where
    T: Float,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    for x in inputs {
        x.zero_grad();
    }
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<T>> = inputs
        .iter()
        .map(|x| x.grad().unwrap_or_else(|| vec![T::zero(); x.numel()]))
        .collect();
    for x in inputs {
        x.zero_grad();
    }

    let two_h = h + h;
    let mut max_rel = 0.0f64;
    let mut worst = (0, 0);
    let mut checked = 0;
    for (xi, x) in inputs.iter().enumerate() {
        for e in 0..x.numel() {
            let orig = x.data()[e];
            x.update_data(|d| d[e] = orig + h);
            let plus = f(inputs)?.item();
            x.update_data(|d| d[e] = orig - h);
            let minus = f(inputs)?.item();
            x.update_data(|d| d[e] = orig);

            let numeric = ((plus - minus) / two_h).to_f64().unwrap_or(f64::NAN);
            let a = analytic[xi][e].to_f64().unwrap_or(f64::NAN);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if !(rel <= max_rel) {
                max_rel = rel;
                worst = (xi, e);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, worst, elements_checked: checked, tolerance: tol, passed: max_rel < tol })
}
