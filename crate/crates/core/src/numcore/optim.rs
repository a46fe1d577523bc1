use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::{Float, NumError};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub lr_base: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr_base: 1e-3, weight_decay: 0.05, beta1: 0.9, beta2: 0.95, eps: 1e-8 }
    }
}

/// Moment buffers for the trainable subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub config: AdamWConfig,
    step: u64,
    first_moment: Vec<Option<Vec<T>>>,
    second_moment: Vec<Option<Vec<T>>>,
}

impl<T: Float> OptimizerState<T> {
    /// Moments for every parameter.
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        Self::with_trainable(params, config, |_| true)
    }

    /// Moments only for parameters whose name passes `trainable`; the rest
    /// are never touched by [`adamw_step`].
    pub fn with_trainable(params: &ParamStore<T>, config: AdamWConfig, trainable: impl Fn(&str) -> bool) -> Self {
        let mk = |_: ()| {
            params
                .iter()
                .map(|(_, name, t)| trainable(name).then(|| vec![T::zero(); t.len()]))
                .collect::<Vec<_>>()
        };
        OptimizerState { config, step: 0, first_moment: mk(()), second_moment: mk(()) }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.first_moment.get(id.index()).is_some_and(|m| m.is_some())
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[T]> {
        self.first_moment.get(id.index())?.as_deref()
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[T]> {
        self.second_moment.get(id.index())?.as_deref()
    }
}

/// One AdamW update with decoupled weight decay.
///
/// `p <- p - lr*wd*p`, then the bias-corrected Adam step. Trainable
/// parameters without a gradient are skipped.
pub fn adamw_step<T: Float>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    lr_t: f64,
) -> Result<(), NumError> {
    if !(lr_t >= 0.0) {
        return Err(NumError::InvalidArgument(format!("learning rate {lr_t} must be >= 0")));
    }
    if state.first_moment.len() != params.len() {
        return Err(NumError::InvalidArgument(format!(
            "optimizer tracks {} parameters, store has {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (id, g) in grads.iter() {
        if id.index() >= params.len() {
            return Err(NumError::InvalidArgument(format!("gradient for unknown parameter {}", id.index())));
        }
        let p = params.tensor(id);
        if g.shape() != p.shape() {
            return Err(NumError::ShapeMismatch {
                what: format!("gradient of {}", params.name(id)),
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = T::from_f64(1.0 - lr_t * c.weight_decay);
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
    let step_size = T::from_f64(lr_t / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(c.eps);
    for (id, g) in grads.iter() {
        let (Some(m), Some(v)) = (&mut state.first_moment[id.index()], &mut state.second_moment[id.index()]) else {
            continue;
        };
        let p = params.tensor_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            p[i] *= decay;
            m[i] = b1 * m[i] + ob1 * gi;
            v[i] = b2 * v[i] + ob2 * gi * gi;
            let denom = v[i].sqrt() * inv_sqrt_bc2 + eps;
            p[i] -= step_size * m[i] / denom;
        }
    }
    Ok(())
}
