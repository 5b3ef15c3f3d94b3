//! Euler-Maruyama integrators: the coupled slow-fast particle system, the
//! frozen fast equation, the averaged equation and the block-frozen auxiliary
//! process.

mod auxiliary;
mod averaged;
pub(crate) mod frozen;
mod slowfast;

pub use auxiliary::{simulate_auxiliary, AuxiliaryTrajectory};
pub use averaged::{simulate_averaged, AveragedEnsemble, AveragedTrajectory, BbarSource};
pub use frozen::{
    ergodic_decay, estimate_bbar, frozen_step_bound, sample_invariant, simulate_frozen, BbarEstimate,
    DecayConfig, DecayCurve, FrozenPath, FrozenRunner, FrozenTrajectory, InvariantConfig,
};
pub use slowfast::{simulate_slowfast, slowfast_step_bound, MomentRow, SlowFastEnsemble, SlowFastTrajectory};

use crate::error::{ensure, Result};

/// Particles per parallel work unit inside one ensemble step.
pub(crate) const PARTICLE_CHUNK: usize = 256;

/// Uniform grid on [0, T] with `n_steps` steps of size `step` and
/// checkpoints every `checkpoint_stride` steps (t = 0 included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub step: f64,
    pub n_steps: usize,
    pub checkpoint_stride: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize, checkpoint_stride: usize) -> Result<Self> {
        ensure(horizon > 0.0 && horizon.is_finite(), || format!("horizon must be positive, got {horizon}"))?;
        ensure(n_steps > 0, || "grid needs at least one step".into())?;
        ensure(checkpoint_stride > 0 && n_steps.is_multiple_of(checkpoint_stride), || {
            format!("checkpoint stride {checkpoint_stride} must divide the {n_steps} grid steps")
        })?;
        Ok(Self { horizon, step: horizon / n_steps as f64, n_steps, checkpoint_stride })
    }

    /// Grid with step `step`; `horizon / step` must be an integer.
    pub fn from_step(horizon: f64, step: f64, checkpoint_stride: usize) -> Result<Self> {
        ensure(step > 0.0, || format!("step must be positive, got {step}"))?;
        let ratio = horizon / step;
        let n = ratio.round();
        ensure(n >= 1.0 && (ratio - n).abs() <= 1e-9 * n, || {
            format!("horizon {horizon} is not an integer multiple of step {step}")
        })?;
        Self::new(horizon, n as usize, checkpoint_stride)
    }

    /// The slow-fast grid for `epsilon`: the largest step not above
    /// `min(h_target, 0.5·ε/β)` that fits `checkpoints` equal intervals.
    pub fn for_epsilon(horizon: f64, epsilon: f64, beta: f64, h_target: f64, checkpoints: usize) -> Result<Self> {
        ensure(checkpoints > 0, || "need at least one checkpoint interval".into())?;
        ensure(h_target > 0.0, || format!("target step must be positive, got {h_target}"))?;
        let h_max = h_target.min(slowfast_step_bound(epsilon, beta));
        let per_checkpoint = (horizon / (h_max * checkpoints as f64) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(horizon, per_checkpoint * checkpoints, per_checkpoint)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * (k as f64 / self.n_steps as f64)
    }

    pub fn n_checkpoints(&self) -> usize {
        self.n_steps / self.checkpoint_stride + 1
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        (0..self.n_checkpoints()).map(|c| self.time(c * self.checkpoint_stride)).collect()
    }

    /// Same horizon and step, recording every step.
    pub fn every_step(&self) -> Self {
        Self { checkpoint_stride: 1, ..*self }
    }
}

/// `out = x + drift·h + sigma·dw` with `sigma` row-major `x.len() × dw.len()`.
#[inline]
pub(crate) fn slow_update(x: &[f64], drift: &[f64], h: f64, sigma: &[f64], dw: &[f64], out: &mut [f64]) {
    let cols = dw.len();
    for (i, o) in out.iter_mut().enumerate() {
        let noise: f64 = sigma[i * cols..(i + 1) * cols].iter().zip(dw).map(|(s, w)| s * w).sum();
        *o = x[i] + drift[i] * h + noise;
    }
}

/// `out = y + drift·(h/ε) + g·dw/√ε`.
#[inline]
pub(crate) fn fast_update(y: &[f64], drift: &[f64], h_over_eps: f64, g: &[f64], dw_over_sqrt_eps: &[f64], out: &mut [f64]) {
    slow_update(y, drift, h_over_eps, g, dw_over_sqrt_eps, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_construction() {
        let g = TimeGrid::new(1.0, 128, 2).unwrap();
        assert_eq!(g.n_checkpoints(), 65);
        assert_eq!(g.time(128), 1.0);
        assert!(TimeGrid::new(1.0, 10, 3).is_err());
        assert!(TimeGrid::from_step(1.0, 0.3, 1).is_err());
        assert_eq!(TimeGrid::from_step(1.0, 0.25, 2).unwrap().n_steps, 4);
    }

    #[test]
    fn epsilon_grid_respects_stability() {
        for k in 4..=9 {
            let eps = 0.5f64.powi(k);
            let g = TimeGrid::for_epsilon(1.0, eps, 4.0, 0.01, 64).unwrap();
            assert!(g.step <= slowfast_step_bound(eps, 4.0) * (1.0 + 1e-12));
            assert_eq!(g.n_steps % 64, 0);
            assert_eq!(g.n_checkpoints(), 65);
        }
        let g = TimeGrid::for_epsilon(1.0, 0.5f64.powi(9), 4.0, 0.01, 64).unwrap();
        assert_eq!(g.n_steps, 4096);
    }
}
