//! The averaged equation dX̄ = b̄(t, X̄, L_X̄) dt + σ(t, X̄, L_X̄) dW¹.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::frozen::{estimate_bbar, FrozenPath, InvariantConfig};
use super::slowfast::first_nonfinite;
use super::{slow_update, TimeGrid, PARTICLE_CHUNK};
use crate::error::{ensure, Error, Result};
use crate::measure::{MeasureView, ParticleCloud};
use crate::model::{CoefficientSet, Dims};
use crate::noise::{hash_words, NoiseRole, NoiseSource};

/// Resolution of the b̄ cache in x and in mean(μ).
pub const BBAR_CACHE_RESOLUTION: f64 = 1e-3;

/// Where the averaged drift comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BbarSource {
    /// The model's closed-form b̄.
    Analytic,
    /// Ergodic averages over the frozen equation, cached per step on
    /// (x, mean(μ)) rounded to [`BBAR_CACHE_RESOLUTION`].
    ErgodicEstimate(InvariantConfig),
}

/// Particle states of the averaged equation.
#[derive(Debug, Clone)]
pub struct AveragedEnsemble {
    pub t: f64,
    /// Fine-grid index of the current time; addresses the noise.
    pub fine_index: u64,
    pub replicate: u64,
    pub x: ParticleCloud,
    /// Per particle, Σ h²·|SE(b̄)|² accumulated from estimated drifts.
    pub drift_variance: Vec<f64>,
}

type CacheKey = Vec<i64>;

fn quantize(v: f64) -> i64 {
    (v / BBAR_CACHE_RESOLUTION).round() as i64
}

impl AveragedEnsemble {
    pub fn new(model: &CoefficientSet, source: &BbarSource, x0: &[f64], n_particles: usize, replicate: u64) -> Result<Self> {
        if x0.len() != model.dims.n {
            return Err(Error::DimensionMismatch { expected: model.dims.n, got: x0.len() });
        }
        ensure(n_particles > 0, || "need at least one particle".into())?;
        if *source == BbarSource::Analytic && !model.has_analytic_bbar() {
            return Err(Error::MissingAnalyticBbar(model.id.clone()));
        }
        Ok(Self {
            t: 0.0,
            fine_index: 0,
            replicate,
            x: ParticleCloud::broadcast(x0, n_particles)?,
            drift_variance: vec![0.0; n_particles],
        })
    }

    /// b̄ and its squared standard error for every particle under the pre-step measure.
    fn drifts<S: NoiseSource>(&self, model: &CoefficientSet, source: &BbarSource, noise: &S) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = model.dims.n;
        let mu = self.x.view();
        let t = self.t;
        let mut drift = vec![0.0; self.x.as_slice().len()];
        let mut var = vec![0.0; self.x.len()];
        match source {
            BbarSource::Analytic => {
                drift.par_chunks_mut(n * PARTICLE_CHUNK).enumerate().for_each(|(chunk, out)| {
                    for (k, o) in out.chunks_exact_mut(n).enumerate() {
                        model.analytic_bbar(t, self.x.row(chunk * PARTICLE_CHUNK + k), &mu, o);
                    }
                });
            }
            BbarSource::ErgodicEstimate(cfg) => {
                let qm: Vec<i64> = mu.mean().iter().map(|&v| quantize(v)).collect();
                let key_of = |x: &[f64]| -> CacheKey { x.iter().map(|&v| quantize(v)).chain(qm.iter().copied()).collect() };
                let keys: BTreeMap<CacheKey, usize> = self
                    .x
                    .rows()
                    .map(key_of)
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .enumerate()
                    .map(|(i, k)| (k, i))
                    .collect();
                let ordered: Vec<&CacheKey> = keys.keys().collect();
                let estimates: Vec<_> = ordered
                    .par_iter()
                    .map(|key| {
                        let x: Vec<f64> = key[..n].iter().map(|&q| q as f64 * BBAR_CACHE_RESOLUTION).collect();
                        let mut words = vec![self.replicate, self.fine_index];
                        words.extend(key.iter().map(|&q| q as u64));
                        let path = FrozenPath::new(hash_words(&words), 0);
                        estimate_bbar(model, t, &x, &mu, cfg, noise, path)
                    })
                    .collect::<Result<_>>()?;
                for (i, row) in self.x.rows().enumerate() {
                    let est = &estimates[keys[&key_of(row)]];
                    drift[i * n..(i + 1) * n].copy_from_slice(&est.value);
                    var[i] = est.standard_error.iter().map(|s| s * s).sum();
                }
            }
        }
        Ok((drift, var))
    }

    /// One step of `stride` fine steps of size `fine_step`, driven by the sum
    /// of the corresponding fine slow-noise increments.
    pub fn step<S: NoiseSource>(
        &mut self,
        model: &CoefficientSet,
        source: &BbarSource,
        fine_step: f64,
        stride: usize,
        noise: &S,
    ) -> Result<()> {
        ensure(fine_step > 0.0 && stride > 0, || "averaged step needs a positive fine step and stride".into())?;
        let Dims { n, d1, .. } = model.dims;
        let h = fine_step * stride as f64;
        let sqrt_fine = fine_step.sqrt();
        let (drift, var) = self.drifts(model, source, noise)?;
        let mu = self.x.view();
        let (t, replicate, first) = (self.t, self.replicate, self.fine_index);
        let x_old = self.x.as_slice();
        let mut x_new = vec![0.0; x_old.len()];
        x_new.par_chunks_mut(n * PARTICLE_CHUNK).enumerate().for_each(|(chunk, xs)| {
            let mut sigma = vec![0.0; n * d1];
            let mut dw = vec![0.0; d1];
            let mut z = vec![0.0; d1];
            for (k, xo) in xs.chunks_exact_mut(n).enumerate() {
                let i = chunk * PARTICLE_CHUNK + k;
                let x = &x_old[i * n..(i + 1) * n];
                model.slow_diffusion(t, x, &mu, &mut sigma);
                dw.iter_mut().for_each(|w| *w = 0.0);
                for fine in first..first + stride as u64 {
                    noise.fill_normals(NoiseRole::Slow, replicate, i as u32, fine, &mut z);
                    for (w, zz) in dw.iter_mut().zip(&z) {
                        *w += zz * sqrt_fine;
                    }
                }
                slow_update(x, &drift[i * n..(i + 1) * n], h, &sigma, &dw, xo);
            }
        });
        drop(mu);
        let t_new = t + h;
        if let Some(p) = first_nonfinite(&x_new, n) {
            return Err(Error::NonFinite { particle: p, t: t_new });
        }
        for (acc, v) in self.drift_variance.iter_mut().zip(&var) {
            *acc += h * h * v;
        }
        self.x = ParticleCloud::from_parts_unchecked(n, x_new);
        self.t = t_new;
        self.fine_index += stride as u64;
        Ok(())
    }
}

/// Checkpointed clouds of one averaged run.
#[derive(Debug, Clone)]
pub struct AveragedTrajectory {
    pub replicate: u64,
    pub grid: TimeGrid,
    /// Fine steps per averaged step.
    pub stride: usize,
    pub times: Vec<f64>,
    pub x: Vec<ParticleCloud>,
    /// Mean over particles of the accumulated drift-estimate variance; zero
    /// for the analytic source.
    pub drift_variance: Vec<f64>,
}

/// Integrates the averaged equation with step `stride·grid.step`, recording
/// at the checkpoints of `grid`. The noise is addressed on the fine grid, so
/// the run is pathwise coupled to a slow-fast run on the same grid.
#[allow(clippy::too_many_arguments)]
pub fn simulate_averaged<S: NoiseSource>(
    model: &CoefficientSet,
    source: &BbarSource,
    grid: &TimeGrid,
    stride: usize,
    n_particles: usize,
    x0: &[f64],
    replicate: u64,
    noise: &S,
) -> Result<AveragedTrajectory> {
    ensure(stride > 0 && grid.checkpoint_stride.is_multiple_of(stride), || {
        format!("averaged stride {stride} must divide the checkpoint stride {}", grid.checkpoint_stride)
    })?;
    let mut ens = AveragedEnsemble::new(model, source, x0, n_particles, replicate)?;
    let capacity = grid.n_checkpoints();
    let mut traj = AveragedTrajectory {
        replicate,
        grid: *grid,
        stride,
        times: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity),
        drift_variance: Vec::with_capacity(capacity),
    };
    let mut record = |ens: &AveragedEnsemble, t: f64| {
        traj.times.push(t);
        traj.x.push(ens.x.clone());
        traj.drift_variance.push(ens.drift_variance.iter().sum::<f64>() / ens.drift_variance.len() as f64);
    };
    record(&ens, 0.0);
    for k in (stride..=grid.n_steps).step_by(stride) {
        ens.step(model, source, grid.step, stride, noise)?;
        ens.t = grid.time(k);
        if k % grid.checkpoint_stride == 0 {
            record(&ens, ens.t);
        }
    }
    Ok(traj)
}
