//! The six gradient-descent update rules and the training loop with the
//! epoch-to-epoch loss-delta stop criterion.

use crate::linalg::lanczos_from;
use crate::model::{self, Batch, MlpSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer configuration: {0}")]
    BadConfig(String),
    #[error("non-finite gradient encountered at step {step}")]
    NonFiniteGradient { step: usize },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Differentiable training objective. Implementations must be pure in the
/// parameters so trials can run concurrently.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn loss(&self, params: &[f64]) -> f64;
    fn loss_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
    fn hvp(&self, params: &[f64], v: &[f64]) -> Vec<f64>;
    fn num_samples(&self) -> usize {
        1
    }
    /// Gradient over a sample subset; defaults to the full objective for
    /// objectives without a sample structure.
    fn subset_loss_grad(&self, params: &[f64], _idx: &[usize]) -> (f64, Vec<f64>) {
        self.loss_grad(params)
    }
}

/// An [`MlpSpec`] plus training batch viewed as an objective. Shapes are
/// validated at construction, so the trait methods do not fail.
pub struct ModelObjective<'a> {
    spec: &'a MlpSpec,
    batch: &'a Batch,
}

impl<'a> ModelObjective<'a> {
    pub fn new(spec: &'a MlpSpec, batch: &'a Batch) -> Result<Self, model::ModelError> {
        // Probe once so later unwraps cannot fail on shape grounds.
        let probe = vec![0.0; spec.param_count()];
        model::loss(spec, &probe, batch)?;
        Ok(Self { spec, batch })
    }

    pub fn spec(&self) -> &MlpSpec {
        self.spec
    }

    pub fn batch(&self) -> &Batch {
        self.batch
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss(&self, params: &[f64]) -> f64 {
        model::loss(self.spec, params, self.batch).expect("validated shapes")
    }

    fn loss_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        model::loss_grad(self.spec, params, self.batch).expect("validated shapes")
    }

    fn hvp(&self, params: &[f64], v: &[f64]) -> Vec<f64> {
        model::hvp(self.spec, params, self.batch, v).expect("validated shapes")
    }

    fn num_samples(&self) -> usize {
        self.batch.len()
    }

    fn subset_loss_grad(&self, params: &[f64], idx: &[usize]) -> (f64, Vec<f64>) {
        let sub = self.batch.subset(idx);
        model::loss_grad(self.spec, params, &sub).expect("validated shapes")
    }
}

/// Update rule plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    NesterovMomentum {
        learning_rate: f64,
        momentum: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Adagrad {
        learning_rate: f64,
        epsilon: f64,
    },
    NoisySgd {
        learning_rate: f64,
        noise_radius: f64,
    },
    PerturbedGd {
        learning_rate: f64,
        noise_radius: f64,
        grad_threshold: f64,
        cooldown: usize,
    },
    SaddleFreeNewton {
        learning_rate: f64,
        krylov_k: usize,
        damping: f64,
    },
}

impl OptimizerConfig {
    pub fn nesterov_default() -> Self {
        Self::NesterovMomentum {
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }

    pub fn adam_default() -> Self {
        Self::Adam {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adagrad_default() -> Self {
        Self::Adagrad {
            learning_rate: 0.01,
            epsilon: 1e-8,
        }
    }

    pub fn noisy_sgd_default() -> Self {
        Self::NoisySgd {
            learning_rate: 0.01,
            noise_radius: 0.01,
        }
    }

    pub fn perturbed_gd_default() -> Self {
        Self::PerturbedGd {
            learning_rate: 0.01,
            noise_radius: 0.1,
            grad_threshold: 1e-3,
            cooldown: 10,
        }
    }

    pub fn saddle_free_newton_default() -> Self {
        Self::SaddleFreeNewton {
            learning_rate: 1.0,
            krylov_k: 20,
            damping: 1e-3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::NesterovMomentum { .. } => "nesterov_momentum",
            Self::Adam { .. } => "adam",
            Self::Adagrad { .. } => "adagrad",
            Self::NoisySgd { .. } => "noisy_sgd",
            Self::PerturbedGd { .. } => "perturbed_gd",
            Self::SaddleFreeNewton { .. } => "saddle_free_newton",
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            Self::NesterovMomentum { learning_rate, .. }
            | Self::Adam { learning_rate, .. }
            | Self::Adagrad { learning_rate, .. }
            | Self::NoisySgd { learning_rate, .. }
            | Self::PerturbedGd { learning_rate, .. }
            | Self::SaddleFreeNewton { learning_rate, .. } => learning_rate,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        match &mut self {
            Self::NesterovMomentum { learning_rate, .. }
            | Self::Adam { learning_rate, .. }
            | Self::Adagrad { learning_rate, .. }
            | Self::NoisySgd { learning_rate, .. }
            | Self::PerturbedGd { learning_rate, .. }
            | Self::SaddleFreeNewton { learning_rate, .. } => *learning_rate = lr,
        }
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |msg: String| Err(OptimError::BadConfig(msg));
        if self.learning_rate() <= 0.0 {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate()));
        }
        match *self {
            Self::NesterovMomentum { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return bad(format!("momentum must be in [0, 1), got {momentum}"));
                }
            }
            Self::Adam { beta1, beta2, epsilon, .. } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return bad(format!("betas must be in (0, 1), got {beta1}, {beta2}"));
                }
                if epsilon <= 0.0 {
                    return bad(format!("epsilon must be > 0, got {epsilon}"));
                }
            }
            Self::Adagrad { epsilon, .. } => {
                if epsilon <= 0.0 {
                    return bad(format!("epsilon must be > 0, got {epsilon}"));
                }
            }
            Self::NoisySgd { noise_radius, .. } => {
                if noise_radius < 0.0 {
                    return bad(format!("noise_radius must be >= 0, got {noise_radius}"));
                }
            }
            Self::PerturbedGd {
                noise_radius,
                grad_threshold,
                ..
            } => {
                if noise_radius <= 0.0 || grad_threshold <= 0.0 {
                    return bad(format!(
                        "noise_radius and grad_threshold must be > 0, got {noise_radius}, {grad_threshold}"
                    ));
                }
            }
            Self::SaddleFreeNewton { krylov_k, damping, .. } => {
                if krylov_k == 0 {
                    return bad("krylov_k must be >= 1".into());
                }
                if damping < 0.0 {
                    return bad(format!("damping must be >= 0, got {damping}"));
                }
            }
        }
        Ok(())
    }
}

/// Mutable per-run optimizer buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub accumulator: Vec<f64>,
    pub step: usize,
    pub last_perturbation: Option<usize>,
    /// Saddle-free Newton steps that fell back to plain descent.
    pub fallback_steps: usize,
    rng: ChaCha8Rng,
}

impl OptimizerState {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            velocity: vec![0.0; dim],
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            accumulator: vec![0.0; dim],
            step: 0,
            last_perturbation: None,
            fallback_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_finite(g: &[f64], step: usize) -> Result<(), OptimError> {
    if g.iter().any(|x| !x.is_finite()) {
        return Err(OptimError::NonFiniteGradient { step });
    }
    Ok(())
}

/// Uniform draw from the ball of the given radius: uniform direction on the
/// sphere, radius scaled by u^(1/dim).
fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut dir: Vec<f64> = (0..dim)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    let n = grad_norm(&dir).max(f64::MIN_POSITIVE);
    let u: f64 = rng.gen_range(0.0..1.0);
    let r = radius * u.powf(1.0 / dim as f64);
    for d in dir.iter_mut() {
        *d *= r / n;
    }
    dir
}

/// v <- mu v - eta grad(theta + mu v); theta <- theta + v
pub fn step_nesterov<F>(
    learning_rate: f64,
    momentum: f64,
    state: &mut OptimizerState,
    params: &mut [f64],
    grad_fn: F,
) -> Result<(), OptimError>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let lookahead: Vec<f64> = params
        .iter()
        .zip(&state.velocity)
        .map(|(p, v)| p + momentum * v)
        .collect();
    let g = grad_fn(&lookahead);
    check_finite(&g, state.step)?;
    for ((v, p), gi) in state.velocity.iter_mut().zip(params.iter_mut()).zip(&g) {
        *v = momentum * *v - learning_rate * gi;
        *p += *v;
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam update.
pub fn step_adam(
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    state: &mut OptimizerState,
    params: &mut [f64],
    grad: &[f64],
) -> Result<(), OptimError> {
    check_finite(grad, state.step)?;
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for (((m, v), p), g) in state
        .first_moment
        .iter_mut()
        .zip(state.second_moment.iter_mut())
        .zip(params.iter_mut())
        .zip(grad)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// accumulator += g*g; theta -= eta g / (sqrt(accumulator) + epsilon)
pub fn step_adagrad(
    learning_rate: f64,
    epsilon: f64,
    state: &mut OptimizerState,
    params: &mut [f64],
    grad: &[f64],
) -> Result<(), OptimError> {
    check_finite(grad, state.step)?;
    for ((a, p), g) in state
        .accumulator
        .iter_mut()
        .zip(params.iter_mut())
        .zip(grad)
    {
        *a += g * g;
        *p -= learning_rate * g / (a.sqrt() + epsilon);
    }
    state.step += 1;
    Ok(())
}

/// theta -= eta (g + xi), xi uniform in the ball of the given radius.
pub fn step_noisy_sgd(
    learning_rate: f64,
    noise_radius: f64,
    state: &mut OptimizerState,
    params: &mut [f64],
    grad: &[f64],
) -> Result<(), OptimError> {
    check_finite(grad, state.step)?;
    if noise_radius > 0.0 {
        let xi = sample_ball(&mut state.rng, params.len(), noise_radius);
        for ((p, g), x) in params.iter_mut().zip(grad).zip(&xi) {
            *p -= learning_rate * (g + x);
        }
    } else {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }
    state.step += 1;
    Ok(())
}

/// Gradient descent with occasional parameter perturbation: when the
/// gradient is small and the cooldown has elapsed, the parameters jump by a
/// uniform ball sample before the descent step.
pub fn step_perturbed_gd<F>(
    learning_rate: f64,
    noise_radius: f64,
    grad_threshold: f64,
    cooldown: usize,
    state: &mut OptimizerState,
    params: &mut [f64],
    grad_fn: F,
) -> Result<(), OptimError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut g = grad_fn(params);
    check_finite(&g, state.step)?;
    let off_cooldown = state
        .last_perturbation
        .map_or(true, |t| state.step.saturating_sub(t) > cooldown);
    if grad_norm(&g) <= grad_threshold && off_cooldown {
        let xi = sample_ball(&mut state.rng, params.len(), noise_radius);
        for (p, x) in params.iter_mut().zip(&xi) {
            *p += x;
        }
        state.last_perturbation = Some(state.step);
        g = grad_fn(params);
        check_finite(&g, state.step)?;
    }
    for (p, gi) in params.iter_mut().zip(&g) {
        *p -= learning_rate * gi;
    }
    state.step += 1;
    Ok(())
}

/// Krylov-subspace step rescaling gradient components by 1/(|lambda| +
/// damping); the gradient component outside the subspace descends plainly.
/// Lanczos breakdown falls back to a vanilla descent step, counted in
/// `state.fallback_steps`.
pub fn step_saddle_free_newton<F>(
    learning_rate: f64,
    krylov_k: usize,
    damping: f64,
    state: &mut OptimizerState,
    params: &mut [f64],
    grad: &[f64],
    hvp_fn: F,
) -> Result<(), OptimError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    check_finite(grad, state.step)?;
    state.step += 1;
    let gnorm = grad_norm(grad);
    if gnorm < 1e-15 {
        return Ok(());
    }
    let dim = params.len();
    let k = krylov_k.min(dim);
    let pair = lanczos_from(&hvp_fn, dim, k, grad)?;
    if pair.truncated && pair.k() < k {
        // Krylov space collapsed; take a plain descent step.
        state.fallback_steps += 1;
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
        return Ok(());
    }
    let (ritz, directions) = pair.ritz_pairs()?;
    let mut step = vec![0.0; dim];
    let mut in_subspace = vec![0.0; dim];
    for (lambda, u) in ritz.eigenvalues().iter().zip(&directions) {
        let coeff: f64 = u.iter().zip(grad).map(|(a, b)| a * b).sum();
        let scale = coeff / (lambda.abs() + damping);
        for ((s, proj), ui) in step.iter_mut().zip(in_subspace.iter_mut()).zip(u) {
            *s += scale * ui;
            *proj += coeff * ui;
        }
    }
    for ((p, s), (g, proj)) in params
        .iter_mut()
        .zip(&step)
        .zip(grad.iter().zip(&in_subspace))
    {
        *p -= learning_rate * (s + (g - proj));
    }
    Ok(())
}

/// One optimizer instance: config plus state, stepping against closures
/// that evaluate the current batch.
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, dim: usize, seed: u64) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::new(dim, seed),
        })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Performs one step. `grad` is the gradient at `params` for the
    /// current batch; `grad_fn`/`hvp_fn` evaluate at arbitrary points for
    /// the rules that need them (Nesterov lookahead, perturbed GD,
    /// saddle-free Newton).
    pub fn step(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        grad_fn: &dyn Fn(&[f64]) -> Vec<f64>,
        hvp_fn: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(), OptimError> {
        match self.config.clone() {
            OptimizerConfig::NesterovMomentum {
                learning_rate,
                momentum,
            } => step_nesterov(learning_rate, momentum, &mut self.state, params, grad_fn),
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => step_adam(
                learning_rate,
                beta1,
                beta2,
                epsilon,
                &mut self.state,
                params,
                grad,
            ),
            OptimizerConfig::Adagrad {
                learning_rate,
                epsilon,
            } => step_adagrad(learning_rate, epsilon, &mut self.state, params, grad),
            OptimizerConfig::NoisySgd {
                learning_rate,
                noise_radius,
            } => step_noisy_sgd(learning_rate, noise_radius, &mut self.state, params, grad),
            OptimizerConfig::PerturbedGd {
                learning_rate,
                noise_radius,
                grad_threshold,
                cooldown,
            } => step_perturbed_gd(
                learning_rate,
                noise_radius,
                grad_threshold,
                cooldown,
                &mut self.state,
                params,
                grad_fn,
            ),
            OptimizerConfig::SaddleFreeNewton {
                learning_rate,
                krylov_k,
                damping,
            } => step_saddle_free_newton(
                learning_rate,
                krylov_k,
                damping,
                &mut self.state,
                params,
                grad,
                hvp_fn,
            ),
        }
    }
}

/// Stop rule: converged when the epoch-to-epoch loss delta drops below the
/// threshold. A non-finite threshold disables the delta rule so training
/// runs exactly `max_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub loss_delta_threshold: f64,
    pub max_epochs: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            loss_delta_threshold: 1e-3,
            max_epochs: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub epochs: usize,
}

/// Trains by full-batch steps (or mini-batches of `batch_size`) per epoch.
/// The recorded epoch loss is always the full-objective loss. Fully
/// deterministic given the seed. Per-epoch hooks observe (epoch, params,
/// full loss) after the epoch's steps.
#[allow(clippy::too_many_arguments)]
pub fn train(
    objective: &dyn Objective,
    init: Vec<f64>,
    config: &OptimizerConfig,
    stop: &StopRule,
    seed: u64,
    batch_size: Option<usize>,
    mut on_epoch: Option<&mut dyn FnMut(usize, &[f64], f64)>,
) -> Result<TrainOutcome, OptimError> {
    let dim = objective.dim();
    let mut optimizer = Optimizer::new(config.clone(), dim, seed)?;
    let mut params = init;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut epoch_losses = Vec::new();
    let mut converged = false;

    let grad_fn = |p: &[f64]| objective.loss_grad(p).1;
    let n = objective.num_samples();

    for epoch in 0..stop.max_epochs {
        let step_result = match batch_size {
            None => {
                let (_, g) = objective.loss_grad(&params);
                let snapshot = params.clone();
                let hvp_fn = move |v: &[f64]| objective.hvp(&snapshot, v);
                optimizer.step(&mut params, &g, &grad_fn, &hvp_fn)
            }
            Some(bs) => {
                let bs = bs.max(1).min(n);
                let mut order: Vec<usize> = (0..n).collect();
                // Fisher-Yates with the epoch-scoped stream.
                for i in (1..n).rev() {
                    let j = shuffle_rng.gen_range(0..=i);
                    order.swap(i, j);
                }
                let mut r = Ok(());
                for chunk in order.chunks(bs) {
                    let (_, g) = objective.subset_loss_grad(&params, chunk);
                    let sub_grad_fn = |p: &[f64]| objective.subset_loss_grad(p, chunk).1;
                    let snapshot = params.clone();
                    let hvp_fn = move |v: &[f64]| objective.hvp(&snapshot, v);
                    r = optimizer.step(&mut params, &g, &sub_grad_fn, &hvp_fn);
                    if r.is_err() {
                        break;
                    }
                }
                r
            }
        };
        step_result?;

        let full_loss = objective.loss(&params);
        if !full_loss.is_finite() {
            return Ok(TrainOutcome {
                params,
                epoch_losses,
                converged: false,
                diverged: true,
                epochs: epoch + 1,
            });
        }
        epoch_losses.push(full_loss);
        if let Some(hook) = on_epoch.as_deref_mut() {
            hook(epoch, &params, full_loss);
        }
        let len = epoch_losses.len();
        if len >= 2 && stop.loss_delta_threshold.is_finite() {
            let delta = (epoch_losses[len - 1] - epoch_losses[len - 2]).abs();
            if delta < stop.loss_delta_threshold {
                converged = true;
                break;
            }
        }
    }

    let epochs = epoch_losses.len();
    Ok(TrainOutcome {
        params,
        epoch_losses,
        converged,
        diverged: false,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quadratic objective f(x) = 1/2 sum h_i (x_i - c_i)^2.
    struct DiagQuadratic {
        h: Vec<f64>,
        c: Vec<f64>,
    }

    impl DiagQuadratic {
        fn centered(h: Vec<f64>) -> Self {
            let c = vec![0.0; h.len()];
            Self { h, c }
        }
    }

    impl Objective for DiagQuadratic {
        fn dim(&self) -> usize {
            self.h.len()
        }
        fn loss(&self, p: &[f64]) -> f64 {
            p.iter()
                .zip(&self.h)
                .zip(&self.c)
                .map(|((x, h), c)| 0.5 * h * (x - c) * (x - c))
                .sum()
        }
        fn loss_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
            let g = p
                .iter()
                .zip(&self.h)
                .zip(&self.c)
                .map(|((x, h), c)| h * (x - c))
                .collect();
            (self.loss(p), g)
        }
        fn hvp(&self, _p: &[f64], v: &[f64]) -> Vec<f64> {
            v.iter().zip(&self.h).map(|(x, h)| h * x).collect()
        }
    }

    #[test]
    fn nesterov_first_step_is_plain_gradient_step() {
        let mut state = OptimizerState::new(2, 0);
        let mut params = vec![1.0, -2.0];
        let g = [0.5, 0.25];
        step_nesterov(0.1, 0.9, &mut state, &mut params, |_| g.to_vec()).unwrap();
        assert!((params[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert!((params[1] - (-2.0 - 0.1 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn nesterov_velocity_reaches_geometric_limit() {
        let mut state = OptimizerState::new(1, 0);
        let mut params = vec![0.0];
        let (eta, mu, g) = (0.01, 0.9, 2.0);
        for _ in 0..800 {
            step_nesterov(eta, mu, &mut state, &mut params, |_| vec![g]).unwrap();
        }
        let limit = -eta * g / (1.0 - mu);
        assert!(
            (state.velocity[0] - limit).abs() < 1e-9,
            "velocity {} vs limit {limit}",
            state.velocity[0]
        );
    }

    #[test]
    fn nesterov_zero_momentum_is_vanilla_gd() {
        let obj = DiagQuadratic::centered(vec![1.0, 3.0]);
        let mut state = OptimizerState::new(2, 0);
        let mut params = vec![1.0, 1.0];
        let mut reference = params.clone();
        for _ in 0..5 {
            let g = obj.loss_grad(&params).1;
            step_nesterov(0.1, 0.0, &mut state, &mut params, |p| obj.loss_grad(p).1).unwrap();
            let _ = g;
            let gr = obj.loss_grad(&reference).1;
            for (p, gi) in reference.iter_mut().zip(&gr) {
                *p -= 0.1 * gi;
            }
            for (a, b) in params.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adam_first_step_is_signed_and_scale_invariant() {
        let eta = 0.001;
        for scale in [1.0, 10.0] {
            let mut state = OptimizerState::new(3, 0);
            let mut params = vec![0.0; 3];
            let g = vec![0.3 * scale, -2.0 * scale, 1e-3 * scale];
            step_adam(eta, 0.9, 0.999, 1e-8, &mut state, &mut params, &g).unwrap();
            for (p, gi) in params.iter().zip(&g) {
                assert!((p + eta * gi.signum()).abs() < 1e-6, "p {p} g {gi}");
            }
        }
    }

    #[test]
    fn adam_fixed_point_at_zero_gradient() {
        let mut state = OptimizerState::new(2, 0);
        let mut params = vec![0.4, -0.6];
        for _ in 0..20 {
            step_adam(0.001, 0.9, 0.999, 1e-8, &mut state, &mut params, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(params, vec![0.4, -0.6]);
    }

    #[test]
    fn adagrad_first_step_signed_then_decays() {
        let mut state = OptimizerState::new(1, 0);
        let mut params = vec![0.0];
        let eta = 0.1;
        let g = [2.0];
        step_adagrad(eta, 1e-8, &mut state, &mut params, &g).unwrap();
        assert!((params[0] + eta).abs() < 1e-6);
        // step t has magnitude ~ eta / sqrt(t)
        let mut prev = params[0];
        for t in 2..=50 {
            step_adagrad(eta, 1e-8, &mut state, &mut params, &g).unwrap();
            let step = (params[0] - prev).abs();
            let want = eta / (t as f64).sqrt();
            assert!((step - want).abs() < 1e-6, "t {t} step {step} want {want}");
            prev = params[0];
        }
    }

    #[test]
    fn adagrad_zero_gradient_is_inert() {
        let mut state = OptimizerState::new(2, 0);
        let mut params = vec![1.0, 2.0];
        step_adagrad(0.1, 1e-8, &mut state, &mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(state.accumulator, vec![0.0, 0.0]);
    }

    #[test]
    fn noisy_sgd_with_zero_radius_is_vanilla() {
        let mut state = OptimizerState::new(2, 7);
        let mut params = vec![1.0, 1.0];
        step_noisy_sgd(0.1, 0.0, &mut state, &mut params, &[1.0, -1.0]).unwrap();
        assert_eq!(params, vec![0.9, 1.1]);
    }

    #[test]
    fn ball_samples_stay_inside_and_center_on_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (dim, r, n) = (3usize, 0.5, 100_000usize);
        let mut sum = vec![0.0; dim];
        let mut sumsq = vec![0.0; dim];
        for _ in 0..n {
            let xi = sample_ball(&mut rng, dim, r);
            let norm: f64 = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= r + 1e-12);
            for ((s, q), x) in sum.iter_mut().zip(sumsq.iter_mut()).zip(&xi) {
                *s += x;
                *q += x * x;
            }
        }
        for (s, q) in sum.iter().zip(&sumsq) {
            let mean = s / n as f64;
            let var = q / n as f64 - mean * mean;
            let stderr = (var / n as f64).sqrt();
            assert!(mean.abs() <= 3.0 * stderr, "mean {mean} stderr {stderr}");
        }
    }

    #[test]
    fn perturbed_gd_gate_closed_matches_vanilla() {
        let obj = DiagQuadratic::centered(vec![2.0]);
        let mut state = OptimizerState::new(1, 5);
        let mut params = vec![3.0];
        // gradient 6.0 >> threshold
        step_perturbed_gd(0.1, 0.5, 1e-3, 10, &mut state, &mut params, |p| {
            obj.loss_grad(p).1
        })
        .unwrap();
        assert!((params[0] - (3.0 - 0.1 * 6.0)).abs() < 1e-14);
        assert!(state.last_perturbation.is_none());
    }

    #[test]
    fn perturbed_gd_respects_cooldown() {
        // zero gradient everywhere: gate is open whenever cooldown allows
        let mut state = OptimizerState::new(2, 5);
        let mut params = vec![0.0, 0.0];
        let mut perturbation_steps = Vec::new();
        for step in 0..50 {
            let before = state.last_perturbation;
            step_perturbed_gd(0.1, 0.5, 1e-3, 7, &mut state, &mut params, |_| vec![0.0, 0.0])
                .unwrap();
            if state.last_perturbation != before {
                perturbation_steps.push(step);
            }
        }
        assert!(!perturbation_steps.is_empty());
        for pair in perturbation_steps.windows(2) {
            assert!(pair[1] - pair[0] > 7, "perturbations too close: {perturbation_steps:?}");
        }
    }

    #[test]
    fn saddle_free_newton_closed_form_on_diagonal_quadratic() {
        // H = diag(2, -1); step = (-eta g1/2, -eta g2/1)
        let h = [2.0, -1.0];
        let hvp_fn = |v: &[f64]| vec![h[0] * v[0], h[1] * v[1]];
        let mut state = OptimizerState::new(2, 0);
        let mut params = vec![0.0, 0.0];
        let g = [0.8, 0.6];
        let eta = 0.5;
        step_saddle_free_newton(eta, 2, 0.0, &mut state, &mut params, &g, hvp_fn).unwrap();
        assert!((params[0] + eta * g[0] / 2.0).abs() < 1e-10);
        assert!((params[1] + eta * g[1] / 1.0).abs() < 1e-10);
    }

    #[test]
    fn saddle_free_newton_is_exact_newton_on_pd_quadratic() {
        let obj = DiagQuadratic {
            h: vec![4.0, 1.0, 0.5],
            c: vec![1.0, -2.0, 3.0],
        };
        let mut state = OptimizerState::new(3, 0);
        let mut params = vec![0.0, 0.0, 0.0];
        let (_, g) = obj.loss_grad(&params);
        let snapshot = params.clone();
        step_saddle_free_newton(1.0, 3, 0.0, &mut state, &mut params, &g, |v| {
            obj.hvp(&snapshot, v)
        })
        .unwrap();
        for (p, c) in params.iter().zip(&obj.c) {
            assert!((p - c).abs() < 1e-8, "newton step missed minimum: {p} vs {c}");
        }
    }

    #[test]
    fn saddle_free_newton_zero_gradient_is_inert() {
        let mut state = OptimizerState::new(2, 0);
        let mut params = vec![0.3, 0.7];
        step_saddle_free_newton(1.0, 2, 1e-3, &mut state, &mut params, &[0.0, 0.0], |v| {
            v.to_vec()
        })
        .unwrap();
        assert_eq!(params, vec![0.3, 0.7]);
    }

    #[test]
    fn saddle_free_step_magnitude_invariant_to_curvature_sign() {
        let g = [0.5, 0.5];
        let eta = 0.3;
        for sign in [1.0, -1.0] {
            let h = [3.0 * sign, 2.0];
            let mut state = OptimizerState::new(2, 0);
            let mut params = vec![0.0, 0.0];
            step_saddle_free_newton(eta, 2, 0.0, &mut state, &mut params, &g, |v| {
                vec![h[0] * v[0], h[1] * v[1]]
            })
            .unwrap();
            assert!((params[0].abs() - eta * g[0] / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn steppers_reject_non_finite_gradient() {
        let mut state = OptimizerState::new(1, 0);
        let mut params = vec![0.0];
        let g = [f64::NAN];
        assert!(matches!(
            step_adam(0.001, 0.9, 0.999, 1e-8, &mut state, &mut params, &g),
            Err(OptimError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn train_infinite_threshold_runs_to_cap() {
        let obj = DiagQuadratic::centered(vec![1.0, 2.0]);
        let out = train(
            &obj,
            vec![1.0, 1.0],
            &OptimizerConfig::nesterov_default(),
            &StopRule {
                loss_delta_threshold: f64::INFINITY,
                max_epochs: 17,
            },
            0,
            None,
            None,
        )
        .unwrap();
        assert_eq!(out.epochs, 17);
        assert!(!out.converged);
    }

    #[test]
    fn train_converges_on_convex_quadratic() {
        let obj = DiagQuadratic::centered(vec![1.0, 2.0]);
        let out = train(
            &obj,
            vec![1.0, -1.0],
            &OptimizerConfig::NesterovMomentum {
                learning_rate: 0.05,
                momentum: 0.9,
            },
            &StopRule {
                loss_delta_threshold: 1e-10,
                max_epochs: 10_000,
            },
            0,
            None,
            None,
        )
        .unwrap();
        assert!(out.converged);
        let (_, g) = obj.loss_grad(&out.params);
        assert!(grad_norm(&g) < 1e-4, "final grad norm {}", grad_norm(&g));
    }

    #[test]
    fn train_is_deterministic() {
        let obj = DiagQuadratic::centered(vec![1.0, 0.5, 2.0]);
        let run = || {
            train(
                &obj,
                vec![1.0, 1.0, 1.0],
                &OptimizerConfig::NoisySgd {
                    learning_rate: 0.05,
                    noise_radius: 0.01,
                },
                &StopRule {
                    loss_delta_threshold: 1e-8,
                    max_epochs: 200,
                },
                42,
                None,
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.epoch_losses.len(), b.epoch_losses.len());
        for (x, y) in a.epoch_losses.iter().zip(&b.epoch_losses) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn train_reports_divergence() {
        let obj = DiagQuadratic::centered(vec![1e4]);
        let out = train(
            &obj,
            vec![1.0],
            &OptimizerConfig::NesterovMomentum {
                learning_rate: 10.0,
                momentum: 0.9,
            },
            &StopRule {
                loss_delta_threshold: 1e-8,
                max_epochs: 1000,
            },
            0,
            None,
            None,
        )
        .unwrap();
        assert!(out.diverged);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        assert!(OptimizerConfig::NesterovMomentum {
            learning_rate: -1.0,
            momentum: 0.9
        }
        .validate()
        .is_err());
        assert!(OptimizerConfig::NesterovMomentum {
            learning_rate: 0.1,
            momentum: 1.0
        }
        .validate()
        .is_err());
        assert!(OptimizerConfig::SaddleFreeNewton {
            learning_rate: 1.0,
            krylov_k: 0,
            damping: 0.0
        }
        .validate()
        .is_err());
    }
}
