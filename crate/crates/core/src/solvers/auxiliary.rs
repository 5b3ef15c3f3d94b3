//! Block-frozen auxiliary process (X̂, Ŷ). On each block [kδ, (k+1)δ) the
//! fast coefficients and the slow drift are frozen at (kδ, X^ε_{kδ}, L_{X^ε_{kδ}})
//! taken from a stored slow-fast run; Ŷ reuses that run's fast noise and X̂
//! keeps the original diffusion term σ(s, X^ε_s, L_{X^ε_s}) dW¹.

use rayon::prelude::*;

use super::slowfast::{check_epsilon, first_nonfinite, SlowFastTrajectory};
use super::{fast_update, slow_update, PARTICLE_CHUNK};
use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, ParticleCloud};
use crate::model::{CoefficientSet, Dims};
use crate::noise::{NoiseRole, NoiseSource};

/// Checkpointed clouds of (X̂, Ŷ), recorded at the times of the driving run.
#[derive(Debug, Clone)]
pub struct AuxiliaryTrajectory {
    pub delta: f64,
    pub times: Vec<f64>,
    pub x: Vec<ParticleCloud>,
    pub y: Vec<ParticleCloud>,
    /// Set when the driving run was stored coarser than its step, so that
    /// σ(s, X^ε_s, ·) was held at the last stored state between checkpoints.
    pub piecewise_sigma: bool,
}

/// Runs the auxiliary process alongside `run`, which must have been produced
/// by `simulate_slowfast` with the same model, ε, replicate and noise.
pub fn simulate_auxiliary<S: NoiseSource>(
    model: &CoefficientSet,
    delta: f64,
    run: &SlowFastTrajectory,
    noise: &S,
) -> Result<AuxiliaryTrajectory> {
    check_epsilon(run.epsilon)?;
    let grid = run.grid;
    let h = grid.step;
    let ratio = delta / h;
    let block = ratio.round() as usize;
    if block == 0 || (ratio - block as f64).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::BlockNotAligned { delta, spacing: h });
    }
    let stride = grid.checkpoint_stride;
    if !block.is_multiple_of(stride) {
        return Err(Error::BlockNotAligned { delta, spacing: h * stride as f64 });
    }
    let Dims { n, m, d1, d2 } = model.dims;
    let n_particles = run.x[0].len();
    let views: Vec<EmpiricalMeasure<'_>> = run.x.iter().map(|c| c.view()).collect();
    let (sqrt_h, h_over_eps, inv_sqrt_eps) = (h.sqrt(), h / run.epsilon, 1.0 / run.epsilon.sqrt());
    let n_records = run.times.len();
    let record_len = n_records * (n + m);

    let chunks: Vec<Result<Vec<f64>>> = (0..n_particles.div_ceil(PARTICLE_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * PARTICLE_CHUNK;
            let hi = (lo + PARTICLE_CHUNK).min(n_particles);
            let mut out = vec![0.0; (hi - lo) * record_len];
            let mut b = vec![0.0; n];
            let mut sigma = vec![0.0; n * d1];
            let mut f = vec![0.0; m];
            let mut g = vec![0.0; m * d2];
            let mut dw1 = vec![0.0; d1];
            let mut dw2 = vec![0.0; d2];
            let mut x_next = vec![0.0; n];
            let mut y_next = vec![0.0; m];
            for (local, i) in (lo..hi).enumerate() {
                let rec = &mut out[local * record_len..(local + 1) * record_len];
                let mut xh = run.x[0].row(i).to_vec();
                let mut yh = run.y[0].row(i).to_vec();
                rec[..n].copy_from_slice(&xh);
                rec[n..n + m].copy_from_slice(&yh);
                let (mut block_c, mut block_t) = (0usize, 0.0);
                for j in 0..grid.n_steps {
                    if j % block == 0 {
                        block_c = j / stride;
                        block_t = grid.time(j);
                    }
                    let xb = run.x[block_c].row(i);
                    let mu_b = &views[block_c];
                    model.fast_drift(block_t, xb, mu_b, &yh, &mut f);
                    model.fast_diffusion(block_t, xb, mu_b, &yh, &mut g);
                    model.slow_drift(block_t, xb, mu_b, &yh, &mut b);
                    let c = j / stride;
                    model.slow_diffusion(grid.time(c * stride), run.x[c].row(i), &views[c], &mut sigma);
                    noise.fill_normals(NoiseRole::Slow, run.replicate, i as u32, j as u64, &mut dw1);
                    noise.fill_normals(NoiseRole::Fast, run.replicate, i as u32, j as u64, &mut dw2);
                    dw1.iter_mut().for_each(|w| *w *= sqrt_h);
                    dw2.iter_mut().for_each(|w| *w = *w * sqrt_h * inv_sqrt_eps);
                    slow_update(&xh, &b, h, &sigma, &dw1, &mut x_next);
                    fast_update(&yh, &f, h_over_eps, &g, &dw2, &mut y_next);
                    std::mem::swap(&mut xh, &mut x_next);
                    std::mem::swap(&mut yh, &mut y_next);
                    if first_nonfinite(&xh, n).or_else(|| first_nonfinite(&yh, m)).is_some() {
                        return Err(Error::NonFinite { particle: i, t: grid.time(j + 1) });
                    }
                    if (j + 1) % stride == 0 {
                        let r = (j + 1) / stride;
                        rec[r * (n + m)..r * (n + m) + n].copy_from_slice(&xh);
                        rec[r * (n + m) + n..(r + 1) * (n + m)].copy_from_slice(&yh);
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut xs = vec![Vec::with_capacity(n_particles * n); n_records];
    let mut ys = vec![Vec::with_capacity(n_particles * m); n_records];
    for chunk in chunks {
        for rec in chunk?.chunks_exact(record_len) {
            for (r, state) in rec.chunks_exact(n + m).enumerate() {
                xs[r].extend_from_slice(&state[..n]);
                ys[r].extend_from_slice(&state[n..]);
            }
        }
    }
    Ok(AuxiliaryTrajectory {
        delta,
        times: run.times.clone(),
        x: xs.into_iter().map(|p| ParticleCloud::from_parts_unchecked(n, p)).collect(),
        y: ys.into_iter().map(|p| ParticleCloud::from_parts_unchecked(m, p)).collect(),
        piecewise_sigma: stride > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_benchmark, LinearBenchmarkParams};
    use crate::noise::CounterNoise;
    use crate::solvers::{simulate_slowfast, TimeGrid};

    fn setup(stride: usize) -> (CoefficientSet, SlowFastTrajectory, CounterNoise) {
        let model = linear_benchmark(LinearBenchmarkParams::default()).unwrap();
        let eps = 1.0 / 64.0;
        let h = eps / 8.0;
        let grid = TimeGrid::from_step(0.125, h, stride).unwrap();
        let noise = CounterNoise::new(17);
        let run = simulate_slowfast(&model, eps, &grid, 20, &[0.4], &[-0.3], 2, &noise).unwrap();
        (model, run, noise)
    }

    #[test]
    fn block_of_one_step_reproduces_the_slow_fast_run() {
        let (model, run, noise) = setup(1);
        let aux = simulate_auxiliary(&model, run.grid.step, &run, &noise).unwrap();
        assert!(!aux.piecewise_sigma);
        assert_eq!(aux.x, run.x);
        assert_eq!(aux.y, run.y);
    }

    #[test]
    fn misaligned_block_rejected() {
        let (model, run, noise) = setup(1);
        let err = simulate_auxiliary(&model, 1.5 * run.grid.step, &run, &noise);
        assert!(matches!(err, Err(Error::BlockNotAligned { .. })));
        let (model, run, noise) = setup(4);
        let err = simulate_auxiliary(&model, 2.0 * run.grid.step, &run, &noise);
        assert!(matches!(err, Err(Error::BlockNotAligned { .. })));
    }

    #[test]
    fn coarse_storage_is_flagged() {
        let (model, run, noise) = setup(4);
        let aux = simulate_auxiliary(&model, 8.0 * run.grid.step, &run, &noise).unwrap();
        assert!(aux.piecewise_sigma);
        assert_eq!(aux.times, run.times);
    }

    #[test]
    fn longer_blocks_drift_further_from_the_fast_path() {
        let (model, run, noise) = setup(1);
        let gap = |blocks: f64| {
            let aux = simulate_auxiliary(&model, blocks * run.grid.step, &run, &noise).unwrap();
            aux.y.iter().zip(&run.y).map(|(a, b)| a.mean_squared_deviation(b).unwrap()).fold(0.0, f64::max)
        };
        assert!(gap(2.0) > 0.0);
        assert!(gap(64.0) > gap(2.0));
    }
}
