//! The corrector Φ solving −L₂Φ = b − b̄, where
//! L₂φ = ⟨f, ∂_y φ⟩ + ½ Tr[g gᵀ ∂²_y φ] is the generator of the frozen equation.
//!
//! Φ(t, x, μ, y) = ∫₀^∞ (Ẽ b(t, x, μ, Y_s^y) − b̄(t, x, μ)) ds is estimated by
//! Monte Carlo over frozen paths, truncated at `s_max`.

use crate::error::{ensure, Error, Result};
use crate::measure::{norm_sq, MeasureView, ParticleCloud};
use crate::model::CoefficientSet;
use crate::noise::NoiseSource;
use crate::solvers::{frozen_step_bound, FrozenPath, FrozenRunner};
use crate::solvers::frozen::reduce_units;

/// Truncation and sampling settings for [`estimate_phi`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhiConfig {
    pub s_max: f64,
    pub h_frozen: f64,
    /// Independent paths (pairs, when antithetic).
    pub n_traj: usize,
    /// Pair each path with its sign-flipped partner.
    pub antithetic: bool,
    /// Truncation tolerance; a tail bound above it raises the warning flag.
    pub tolerance: f64,
    /// Identifier folded into the FrozenNoise addresses.
    pub stream_id: u64,
}

impl PhiConfig {
    /// s_max = (2/β)·ln(1/tol), step 0.01/β, 4000 plain Monte Carlo paths.
    pub fn for_beta(beta: f64, tolerance: f64) -> Self {
        Self {
            s_max: Self::min_horizon(beta, tolerance),
            h_frozen: (0.01 / beta).min(frozen_step_bound(beta)),
            n_traj: 4000,
            antithetic: false,
            tolerance,
            stream_id: 0,
        }
    }

    /// Smallest horizon whose exponential tail factor is below `tolerance`.
    pub fn min_horizon(beta: f64, tolerance: f64) -> f64 {
        2.0 / beta * (1.0 / tolerance).ln()
    }
}

/// Monte Carlo value of Φ at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiEstimate {
    pub value: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub s_max: f64,
    pub n_traj: usize,
    /// C·e^{−β s_max/2}·(2/β) with C = |b(t, x, μ, y) − b̄(t, x, μ)|.
    pub tail_bound: f64,
    /// The tail bound exceeds the configured tolerance.
    pub tail_warning: bool,
    /// |Φ| / (1 + |x| + |y| + μ(|·|²)^{1/2}).
    pub growth_ratio: f64,
}

/// Estimates Φ(t, x, μ, y) with the trapezoid rule on each frozen path.
/// `bbar` falls back to the model's closed form when `None`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_phi<S: NoiseSource>(
    model: &CoefficientSet,
    t: f64,
    x: &[f64],
    mu: &dyn MeasureView,
    y: &[f64],
    bbar: Option<&[f64]>,
    cfg: &PhiConfig,
    noise: &S,
) -> Result<PhiEstimate> {
    let n = model.dims.n;
    let mut analytic = vec![0.0; n];
    let bbar = match bbar {
        Some(b) => b,
        None if model.analytic_bbar(t, x, mu, &mut analytic) => &analytic,
        None => return Err(Error::MissingBbar),
    };
    if bbar.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: bbar.len() });
    }
    ensure(cfg.s_max > 0.0, || format!("s_max must be positive, got {}", cfg.s_max))?;
    ensure(cfg.n_traj >= 2, || "need at least two trajectories".into())?;
    let steps = (cfg.s_max / cfg.h_frozen).round() as usize;
    ensure(steps >= 1, || "s_max shorter than one frozen step".into())?;
    let h = cfg.h_frozen;

    let sums = reduce_units(cfg.n_traj, n, |u, out| {
        let path = FrozenPath::new(cfg.stream_id, u as u32);
        let mut runners = vec![FrozenRunner::new(model, t, x, mu, y, h, noise, path)?];
        if cfg.antithetic {
            runners.push(FrozenRunner::new(model, t, x, mu, y, h, noise, path)?.antithetic());
        }
        let weight = 1.0 / runners.len() as f64;
        let mut b = vec![0.0; n];
        out.iter_mut().for_each(|o| *o = 0.0);
        for runner in runners.iter_mut() {
            for k in 0..=steps {
                if k > 0 {
                    runner.advance()?;
                }
                let w = if k == 0 || k == steps { 0.5 * h } else { h };
                runner.slow_drift(&mut b);
                for ((o, bv), bb) in out.iter_mut().zip(&b).zip(bbar) {
                    *o += weight * w * (bv - bb);
                }
            }
        }
        Ok(())
    })?;
    let (value, standard_error) = sums.mean_and_se();

    let mut b0 = vec![0.0; n];
    model.slow_drift(t, x, mu, y, &mut b0);
    let c: f64 = b0.iter().zip(bbar).map(|(b, bb)| (b - bb).powi(2)).sum::<f64>().sqrt();
    let tail_bound = c * (-model.beta * cfg.s_max / 2.0).exp() * (2.0 / model.beta);
    let scale = 1.0 + norm_sq(x).sqrt() + norm_sq(y).sqrt() + mu.second_moment().sqrt();
    Ok(PhiEstimate {
        growth_ratio: norm_sq(&value).sqrt() / scale,
        value,
        standard_error,
        s_max: cfg.s_max,
        n_traj: cfg.n_traj,
        tail_warning: tail_bound > cfg.tolerance,
        tail_bound,
    })
}

/// A point (t, x, μ, y) at which to evaluate the Poisson residual.
#[derive(Debug, Clone)]
pub struct ResidualPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub mu: ParticleCloud,
    pub y: Vec<f64>,
}

/// A corrector Φ(t, x, μ, y) written into the last argument.
pub type PhiFn<'a> = dyn Fn(f64, &[f64], &dyn MeasureView, &[f64], &mut [f64]) + 'a;

/// The Φ used by [`residual_check`].
pub enum PhiSource<'a> {
    Analytic,
    Custom(&'a PhiFn<'a>),
}

/// max over points of |L₂Φ + b − b̄|, with L₂Φ from central differences in y
/// whose step is `fd_step` rounded to the nearest power of two. Requires the
/// model's closed-form b̄.
pub fn residual_check(model: &CoefficientSet, points: &[ResidualPoint], fd_step: f64, phi: PhiSource<'_>) -> Result<f64> {
    ensure(fd_step > 0.0 && fd_step.is_finite(), || format!("fd_step must be positive, got {fd_step}"))?;
    if !model.has_analytic_bbar() {
        return Err(Error::MissingAnalyticBbar(model.id.clone()));
    }
    if matches!(phi, PhiSource::Analytic) && !model.has_analytic_phi() {
        return Err(Error::MissingAnalyticPhi(model.id.clone()));
    }
    let dims = model.dims;
    let (n, m) = (dims.n, dims.m);
    let mut worst = 0.0f64;
    for p in points {
        if p.x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p.x.len() });
        }
        if p.y.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: p.y.len() });
        }
        let mu = p.mu.view();
        let eval = |y: &[f64], out: &mut [f64]| match &phi {
            PhiSource::Analytic => {
                model.analytic_phi(p.t, &p.x, &mu, y, out);
            }
            PhiSource::Custom(f) => f(p.t, &p.x, &mu, y, out),
        };
        // A power-of-two step keeps y ± h exact and the rounding of nearby
        // evaluations aligned.
        let h = 2f64.powi(fd_step.log2().round() as i32);
        let steps: Vec<f64> = p.y.iter().map(|&yj| (yj + h) - yj).collect();
        let shifted = |moves: &[(usize, f64)]| -> Vec<f64> {
            let mut y = p.y.clone();
            for &(j, s) in moves {
                y[j] += s * steps[j];
            }
            let mut out = vec![0.0; n];
            eval(&y, &mut out);
            out
        };
        let centre = shifted(&[]);
        let mut grad = vec![0.0; n * m];
        let mut hess = vec![0.0; n * m * m];
        for j in 0..m {
            let plus = shifted(&[(j, 1.0)]);
            let minus = shifted(&[(j, -1.0)]);
            let hj = steps[j];
            for k in 0..n {
                grad[k * m + j] = (plus[k] - minus[k]) / (2.0 * hj);
                hess[(k * m + j) * m + j] = ((plus[k] - centre[k]) - (centre[k] - minus[k])) / (hj * hj);
            }
            for l in j + 1..m {
                let pp = shifted(&[(j, 1.0), (l, 1.0)]);
                let pm = shifted(&[(j, 1.0), (l, -1.0)]);
                let mp = shifted(&[(j, -1.0), (l, 1.0)]);
                let mm = shifted(&[(j, -1.0), (l, -1.0)]);
                for k in 0..n {
                    let v = ((pp[k] - pm[k]) - (mp[k] - mm[k])) / (4.0 * hj * steps[l]);
                    hess[(k * m + j) * m + l] = v;
                    hess[(k * m + l) * m + j] = v;
                }
            }
        }
        let mut f = vec![0.0; m];
        let mut g = vec![0.0; m * dims.d2];
        let mut b = vec![0.0; n];
        let mut bbar = vec![0.0; n];
        model.fast_drift(p.t, &p.x, &mu, &p.y, &mut f);
        model.fast_diffusion(p.t, &p.x, &mu, &p.y, &mut g);
        model.slow_drift(p.t, &p.x, &mu, &p.y, &mut b);
        model.analytic_bbar(p.t, &p.x, &mu, &mut bbar);
        let d2 = dims.d2;
        let mut residual = 0.0;
        for k in 0..n {
            let drift: f64 = (0..m).map(|j| f[j] * grad[k * m + j]).sum();
            let mut diffusion = 0.0;
            for j in 0..m {
                for l in 0..m {
                    let ggt: f64 = (0..d2).map(|r| g[j * d2 + r] * g[l * d2 + r]).sum();
                    diffusion += ggt * hess[(k * m + j) * m + l];
                }
            }
            let r = drift + 0.5 * diffusion + b[k] - bbar[k];
            residual += r * r;
        }
        worst = worst.max(residual.sqrt());
    }
    Ok(worst)
}

/// Scalar probe points: x, y and a two-atom μ with standard normal
/// coordinates from the probe stream.
pub fn probe_points(seed: u64, count: usize) -> Vec<ResidualPoint> {
    let stream = crate::noise::NoiseStream::new(seed, crate::noise::NoiseRole::Probe);
    let draw = |p: u32, c: u32| stream.standard_normal(crate::noise::NoiseKey::new(0x9015_5013, p, c, 0));
    (0..count as u32)
        .map(|p| ResidualPoint {
            t: 0.0,
            x: vec![draw(p, 0)],
            mu: ParticleCloud::from_values(&[draw(p, 1), draw(p, 2)]).expect("finite atoms"),
            y: vec![draw(p, 3)],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_benchmark, LinearBenchmarkParams};
    use crate::noise::CounterNoise;

    fn model() -> CoefficientSet {
        linear_benchmark(LinearBenchmarkParams::default()).unwrap()
    }

    #[test]
    fn zero_when_drift_ignores_fast_state() {
        let model = linear_benchmark(LinearBenchmarkParams { a3: 0.0, ..Default::default() }).unwrap();
        let mu = ParticleCloud::dirac(&[0.3]).unwrap();
        let cfg = PhiConfig { n_traj: 10, ..PhiConfig::for_beta(model.beta, 1e-3) };
        let est = estimate_phi(&model, 0.0, &[1.0], &mu.view(), &[2.0], None, &cfg, &CounterNoise::new(0)).unwrap();
        assert_eq!(est.value, vec![0.0]);
        assert_eq!(est.tail_bound, 0.0);
        let r = residual_check(&model, &probe_points(1, 8), 1e-4, PhiSource::Analytic).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn matches_closed_form_at_unit_fast_state() {
        let p = LinearBenchmarkParams { a1: 0.0, a2: 0.0, a3: 1.0, c1: 0.0, c2: 0.0, kappa: 2.0, ..Default::default() };
        let model = linear_benchmark(p).unwrap();
        let mu = ParticleCloud::dirac(&[0.0]).unwrap();
        let cfg = PhiConfig { h_frozen: 2e-3, ..PhiConfig::for_beta(model.beta, 1e-4) };
        let est = estimate_phi(&model, 0.0, &[0.0], &mu.view(), &[1.0], None, &cfg, &CounterNoise::new(3)).unwrap();
        assert!((est.value[0] - 0.5).abs() < 3.0 * est.standard_error[0], "{est:?}");
        assert!(!est.tail_warning);
    }

    #[test]
    fn missing_bbar_is_an_error() {
        let model = crate::model::convolution_example(crate::model::ConvolutionPair::Sine).unwrap();
        let mu = ParticleCloud::dirac(&[0.0]).unwrap();
        let cfg = PhiConfig { n_traj: 4, ..PhiConfig::for_beta(model.beta, 1e-2) };
        let err = estimate_phi(&model, 0.0, &[0.0], &mu.view(), &[0.0], None, &cfg, &CounterNoise::new(0));
        assert!(matches!(err, Err(Error::MissingBbar)));
    }

    #[test]
    fn short_horizon_raises_tail_warning() {
        let model = model();
        let mu = ParticleCloud::dirac(&[0.0]).unwrap();
        let cfg = PhiConfig { s_max: 0.1, n_traj: 4, ..PhiConfig::for_beta(model.beta, 1e-3) };
        let est = estimate_phi(&model, 0.0, &[0.0], &mu.view(), &[1.0], None, &cfg, &CounterNoise::new(0)).unwrap();
        assert!(est.tail_warning);
    }

    #[test]
    fn doubling_horizon_moves_estimate_less_than_tail_bound() {
        let model = model();
        let mu = ParticleCloud::from_values(&[0.2, -0.6]).unwrap();
        let mut cfg = PhiConfig { antithetic: true, n_traj: 64, ..PhiConfig::for_beta(model.beta, 1e-2) };
        let noise = CounterNoise::new(9);
        let short = estimate_phi(&model, 0.0, &[0.4], &mu.view(), &[1.5], None, &cfg, &noise).unwrap();
        cfg.s_max *= 2.0;
        let long = estimate_phi(&model, 0.0, &[0.4], &mu.view(), &[1.5], None, &cfg, &noise).unwrap();
        assert!((long.value[0] - short.value[0]).abs() < short.tail_bound, "{short:?} {long:?}");
    }

    #[test]
    fn standard_error_shrinks_like_inverse_root() {
        let model = model();
        let mu = ParticleCloud::dirac(&[0.0]).unwrap();
        let base = PhiConfig { h_frozen: 0.01, ..PhiConfig::for_beta(model.beta, 1e-2) };
        let pts: Vec<(f64, f64)> = [100usize, 1000, 10_000]
            .iter()
            .map(|&n| {
                let cfg = PhiConfig { n_traj: n, ..base.clone() };
                let est = estimate_phi(&model, 0.0, &[0.0], &mu.view(), &[1.0], None, &cfg, &CounterNoise::new(4)).unwrap();
                ((n as f64).ln(), est.standard_error[0].ln())
            })
            .collect();
        let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
    }

    #[test]
    fn residual_vanishes_for_closed_form_corrector() {
        let r = residual_check(&model(), &probe_points(7, 8), 1e-4, PhiSource::Analytic).unwrap();
        assert!(r <= 1e-8, "residual {r}");
    }

    #[test]
    fn residual_detects_injected_fault() {
        let model = model();
        let faulty = |t: f64, x: &[f64], mu: &dyn MeasureView, y: &[f64], out: &mut [f64]| {
            model.analytic_phi(t, x, mu, y, out);
            out[0] += 0.1 * y[0] * y[0];
        };
        let r = residual_check(&model, &probe_points(7, 8), 1e-4, PhiSource::Custom(&faulty)).unwrap();
        assert!(r >= 1e-2, "residual {r}");
    }

    #[test]
    fn nonpositive_fd_step_rejected() {
        assert!(residual_check(&model(), &probe_points(0, 8), 0.0, PhiSource::Analytic).is_err());
    }
}
