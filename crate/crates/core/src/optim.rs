//! Optimizers: Nesterov accelerated gradient for the embedding search and
//! plain SGD plus global-norm clipping for training.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Velocity state for one optimized variable.
#[derive(Debug, Clone)]
pub struct NesterovState {
    pub velocity: Tensor,
    pub momentum: f64,
    pub step_size: f64,
}

impl NesterovState {
    pub fn new(shape: Vec<usize>, momentum: f64, step_size: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if step_size <= 0.0 {
            return Err(Error::Config(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        Ok(NesterovState {
            velocity: Tensor::zeros(shape),
            momentum,
            step_size,
        })
    }

    pub fn reset(&mut self) {
        self.velocity.data_mut().fill(0.0);
    }
}

/// One Nesterov update in place:
/// evaluate `gradient_fn` at the look-ahead point `variable + momentum·velocity`,
/// then `velocity ← momentum·velocity − step_size·g` and
/// `variable ← variable + velocity`.
///
/// A non-finite gradient rejects the step: both the variable and the state
/// stay untouched and the error is surfaced.
pub fn nesterov_step<F>(
    state: &mut NesterovState,
    variable: &mut Tensor,
    mut gradient_fn: F,
) -> Result<()>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if state.velocity.shape() != variable.shape() {
        return Err(Error::ShapeMismatch {
            op: "nesterov_step",
            lhs: state.velocity.shape().to_vec(),
            rhs: variable.shape().to_vec(),
        });
    }
    let mut lookahead = variable.clone();
    for (l, v) in lookahead
        .data_mut()
        .iter_mut()
        .zip(state.velocity.data())
    {
        *l += state.momentum * v;
    }
    let grad = gradient_fn(&lookahead)?;
    if grad.shape() != variable.shape() {
        return Err(Error::ShapeMismatch {
            op: "nesterov_step",
            lhs: grad.shape().to_vec(),
            rhs: variable.shape().to_vec(),
        });
    }
    grad.ensure_finite("nesterov_step gradient")?;
    for ((v, var), g) in state
        .velocity
        .data_mut()
        .iter_mut()
        .zip(variable.data_mut())
        .zip(grad.data())
    {
        *v = state.momentum * *v - state.step_size * g;
        *var += *v;
    }
    Ok(())
}

/// Scale the gradient set so its global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. When triggered, the post-clip norm equals
/// `max_norm` exactly (up to rounding).
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// θ ← θ − lr·g over a parameter/gradient pair list.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
    debug_assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads) {
        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        // v = [1], f = v², α = 0.1 → v' = [0.8]
        let mut state = NesterovState::new(vec![1], 0.0, 0.1).unwrap();
        let mut v = Tensor::vector(vec![1.0]);
        nesterov_step(&mut state, &mut v, |x| {
            Ok(Tensor::vector(vec![2.0 * x.data()[0]]))
        })
        .unwrap();
        assert!((v.data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut state = NesterovState::new(vec![2], 0.5, 0.1).unwrap();
        state.velocity = Tensor::vector(vec![1.0, -2.0]);
        let mut v = Tensor::vector(vec![3.0, 3.0]);
        nesterov_step(&mut state, &mut v, |_| Ok(Tensor::vector(vec![0.0, 0.0]))).unwrap();
        // velocity decays by the momentum factor; variable moves by it
        assert_eq!(state.velocity.data(), &[0.5, -1.0]);
        assert_eq!(v.data(), &[3.5, 2.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f = ½v², α = 0.1, momentum = 0.9, 100 steps from v = 10.
        // Oracle: the same scalar recurrence computed directly.
        let (mut ov, mut ou) = (10.0_f64, 0.0_f64);
        for _ in 0..100 {
            let g = ov + 0.9 * ou; // ∇f at look-ahead
            ou = 0.9 * ou - 0.1 * g;
            ov += ou;
        }
        assert!(ov.abs() < 1e-2, "oracle recurrence should converge: {ov}");

        let mut state = NesterovState::new(vec![1], 0.9, 0.1).unwrap();
        let mut v = Tensor::vector(vec![10.0]);
        for _ in 0..100 {
            nesterov_step(&mut state, &mut v, |x| Ok(x.clone())).unwrap();
        }
        assert!(v.data()[0].abs() < 1e-2);
        assert!((v.data()[0] - ov).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_rejected_state_unchanged() {
        let mut state = NesterovState::new(vec![1], 0.9, 0.1).unwrap();
        state.velocity = Tensor::vector(vec![0.25]);
        let mut v = Tensor::vector(vec![1.0]);
        let err = nesterov_step(&mut state, &mut v, |_| {
            Ok(Tensor::vector(vec![f64::NAN]))
        });
        assert!(err.is_err());
        assert_eq!(v.data(), &[1.0]);
        assert_eq!(state.velocity.data(), &[0.25]);
    }

    #[test]
    fn clip_bounds_norm_exactly_when_triggered() {
        let mut grads = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![0.0, 4.0])];
        let pre = clip_global_norm(&mut grads, 2.5);
        assert!((pre - 5.0).abs() < 1e-12);
        let post: f64 = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!((post - 2.5).abs() < 1e-12);
    }

    #[test]
    fn clip_is_identity_below_threshold() {
        let mut grads = vec![Tensor::vector(vec![0.3, 0.4])];
        let pre = clip_global_norm(&mut grads, 5.0);
        assert!((pre - 0.5).abs() < 1e-12);
        assert_eq!(grads[0].data(), &[0.3, 0.4]);
    }
}
