use super::{Float, Result, Tensor, TensorError};

/// Moment estimates and hyperparameters of the Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Float = f32> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step_count: u64,
    /// First-moment buffers, one per parameter in the order passed to
    /// [`adam_step`]. Empty until the first step.
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Float> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(T::lit(0.0002), T::lit(0.5))
    }
}

impl<T: Float> AdamState<T> {
    pub fn new(lr: T, beta1: T) -> Self {
        AdamState { lr, beta1, beta2: T::lit(0.999), eps: T::lit(1e-8), step_count: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > T::zero()
            && self.beta1 >= T::zero()
            && self.beta1 < T::one()
            && self.beta2 >= T::zero()
            && self.beta2 < T::one();
        if ok {
            Ok(())
        } else {
            Err(TensorError::State(format!(
                "invalid Adam hyperparameters lr={} beta1={} beta2={}",
                self.lr, self.beta1, self.beta2
            )))
        }
    }
}

/// One bias-corrected Adam update of every parameter. Gradients are read but
/// not cleared.
pub fn adam_step<T: Float>(params: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    state.validate()?;
    let grads = params
        .iter()
        .enumerate()
        .map(|(i, p)| p.grad().ok_or_else(|| TensorError::State(format!("parameter {i} has no gradient"))))
        .collect::<Result<Vec<_>>>()?;

    if state.m.is_empty() && state.step_count == 0 {
        state.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() || state.m.iter().zip(params).any(|(m, p)| m.len() != p.numel()) {
        return Err(TensorError::State(format!(
            "moment buffers cover {} parameters, {} given",
            state.m.len(),
            params.len()
        )));
    }

    state.step_count += 1;
    let t = i32::try_from(state.step_count).unwrap_or(i32::MAX);
    let one = T::one();
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    for ((p, g), (m, v)) in params.iter().zip(&grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        p.update_data(|theta| {
            for i in 0..theta.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        });
    }
    Ok(())
}
