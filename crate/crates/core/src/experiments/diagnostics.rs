//! Runtime diagnostics: uniform fourth moments, Hölder continuity in time,
//! the block-frozen approximation error in δ, frozen-equation ergodicity and
//! contraction.

use super::strong::{rate_fit, StudyConfig};
use crate::error::{ensure, Error, Result};
use crate::measure::{MeasureView, ParticleCloud};
use crate::model::CoefficientSet;
use crate::noise::NoiseSource;
use crate::solvers::{
    ergodic_decay, estimate_bbar, simulate_auxiliary, simulate_frozen, simulate_slowfast, DecayConfig, DecayCurve,
    FrozenPath, InvariantConfig, TimeGrid,
};

/// Sampled curve with its fitted log-log slope.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeCurve {
    pub abscissa: Vec<f64>,
    pub value: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub slope: f64,
}

impl SlopeCurve {
    fn fit(abscissa: Vec<f64>, value: Vec<f64>, standard_error: Vec<f64>) -> Result<Self> {
        let slope = rate_fit(&abscissa, &value, None)?.slope;
        Ok(Self { abscissa, value, standard_error, slope })
    }
}

/// Mean and standard error of per-replicate values.
fn replicate_mean(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Settings for the Hölder-in-time diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderConfig {
    pub epsilon: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub n_reps: usize,
    /// Time lags, each a multiple of the fine step.
    pub lags: Vec<f64>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

impl Default for HolderConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5f64.powi(12),
            horizon: 0.125,
            n_particles: 512,
            n_reps: 4,
            lags: (5..=10).rev().map(|k| 0.5f64.powi(k)).collect(),
            x0: vec![0.0],
            y0: vec![0.0],
        }
    }
}

/// Ê|X^ε_{t+ℓ} − X^ε_t|² against ℓ, averaged over t, particles and replicates.
pub fn holder_increments<S: NoiseSource>(model: &CoefficientSet, cfg: &HolderConfig, noise: &S) -> Result<SlopeCurve> {
    let h = 0.5 * cfg.epsilon / model.beta;
    let grid = TimeGrid::from_step(cfg.horizon, h, 1)?;
    let lag_steps = cfg
        .lags
        .iter()
        .map(|&l| {
            let k = (l / h).round();
            ensure(k >= 1.0 && ((l / h) - k).abs() < 1e-9 * k && (k as usize) < grid.n_steps, || {
                format!("lag {l} is not a multiple of the step {h} inside the horizon")
            })?;
            Ok(k as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_rep = vec![Vec::with_capacity(cfg.n_reps); lag_steps.len()];
    for rep in 0..cfg.n_reps as u64 {
        let run = simulate_slowfast(model, cfg.epsilon, &grid, cfg.n_particles, &cfg.x0, &cfg.y0, rep, noise)?;
        for (li, &lag) in lag_steps.iter().enumerate() {
            let starts: Vec<usize> = (0..=grid.n_steps - lag).step_by(lag).collect();
            let total: f64 = starts
                .iter()
                .map(|&k| run.x[k + lag].mean_squared_deviation(&run.x[k]))
                .sum::<Result<f64>>()?;
            per_rep[li].push(total / starts.len() as f64);
        }
    }
    let (value, se): (Vec<f64>, Vec<f64>) = per_rep.iter().map(|v| replicate_mean(v)).unzip();
    SlopeCurve::fit(cfg.lags.clone(), value, se)
}

/// Settings for the δ sweep of the auxiliary process.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSweepConfig {
    pub epsilon: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub n_reps: usize,
    pub deltas: Vec<f64>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

impl Default for DeltaSweepConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5f64.powi(12),
            horizon: 0.25,
            n_particles: 256,
            n_reps: 8,
            deltas: (4..=8).rev().map(|k| 0.5f64.powi(k)).collect(),
            x0: vec![0.0],
            y0: vec![0.0],
        }
    }
}

/// sup_t Ê|Y − Ŷ|² and sup_t Ê|X − X̂|² for every δ, plus the same at δ = ε^{2/3}
/// rounded to the step.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSweep {
    pub fast: SlopeCurve,
    pub slow: SlopeCurve,
    pub delta_two_thirds: f64,
    pub fast_at_two_thirds: (f64, f64),
    pub slow_at_two_thirds: (f64, f64),
}

pub fn delta_sweep<S: NoiseSource>(model: &CoefficientSet, cfg: &DeltaSweepConfig, noise: &S) -> Result<DeltaSweep> {
    let h = 0.5 * cfg.epsilon / model.beta;
    let grid = TimeGrid::from_step(cfg.horizon, h, 1)?;
    let d23 = ((cfg.epsilon.powf(2.0 / 3.0) / h).round().max(1.0)) * h;
    let mut deltas = cfg.deltas.clone();
    deltas.push(d23);
    let mut fast = vec![Vec::with_capacity(cfg.n_reps); deltas.len()];
    let mut slow = vec![Vec::with_capacity(cfg.n_reps); deltas.len()];
    for rep in 0..cfg.n_reps as u64 {
        let run = simulate_slowfast(model, cfg.epsilon, &grid, cfg.n_particles, &cfg.x0, &cfg.y0, rep, noise)?;
        for (di, &delta) in deltas.iter().enumerate() {
            let aux = simulate_auxiliary(model, delta, &run, noise)?;
            fast[di].push(per_time_gaps(&run.y, &aux.y)?);
            slow[di].push(per_time_gaps(&run.x, &aux.x)?);
        }
    }
    // sup over t of the replicate mean; SE at the maximiser.
    let sup = |curves: &[Vec<f64>]| -> (f64, f64) {
        let n_t = curves[0].len();
        let (c, _) = (0..n_t)
            .map(|c| (c, curves.iter().map(|r| r[c]).sum::<f64>()))
            .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
        replicate_mean(&curves.iter().map(|r| r[c]).collect::<Vec<_>>())
    };
    let n = cfg.deltas.len();
    let (fv, fse): (Vec<f64>, Vec<f64>) = fast[..n].iter().map(|c| sup(c)).unzip();
    let (sv, sse): (Vec<f64>, Vec<f64>) = slow[..n].iter().map(|c| sup(c)).unzip();
    Ok(DeltaSweep {
        fast: SlopeCurve::fit(cfg.deltas.clone(), fv, fse)?,
        slow: SlopeCurve::fit(cfg.deltas.clone(), sv, sse)?,
        delta_two_thirds: d23,
        fast_at_two_thirds: sup(&fast[n]),
        slow_at_two_thirds: sup(&slow[n]),
    })
}

fn per_time_gaps(a: &[ParticleCloud], b: &[ParticleCloud]) -> Result<Vec<f64>> {
    a.iter().zip(b).map(|(u, v)| u.mean_squared_deviation(v)).collect()
}

/// Settings for the ergodic-decay and contraction diagnostics, run at one
/// frozen point (t, x, μ).
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityConfig {
    pub t: f64,
    pub x: Vec<f64>,
    /// Atoms of μ, one row each.
    pub mu: Vec<Vec<f64>>,
    pub y0: Vec<f64>,
    /// Second start for the contraction check.
    pub y1: Vec<f64>,
    /// Horizon in units of 1/β.
    pub horizon_over_beta: f64,
    pub h_frozen: f64,
    pub n_traj: usize,
    pub antithetic: bool,
    pub record_every: usize,
    /// Samples for b̄ when the model has no closed form.
    pub bbar_samples: usize,
}

impl Default for ErgodicityConfig {
    fn default() -> Self {
        Self {
            t: 0.0,
            x: vec![0.0],
            mu: vec![vec![0.0]],
            y0: vec![1.0],
            y1: vec![-1.0],
            horizon_over_beta: 20.0,
            h_frozen: 0.01,
            n_traj: 64,
            antithetic: true,
            record_every: 10,
            bbar_samples: 4000,
        }
    }
}

/// Exponential fit of the decay curve.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub curve: DecayCurve,
    /// −slope of ln|Ê b(Y_s) − b̄| against s over points above the noise floor.
    pub rate: f64,
    pub points_used: usize,
    /// Deviation at s = 0 over deviation at the end of the curve.
    pub decay_factor: f64,
    pub beta: f64,
}

/// Fits ln(deviation) = a − rate·s by least squares over points that are
/// positive and above three standard errors.
pub fn fit_decay_rate(curve: &DecayCurve) -> Result<(f64, usize)> {
    let pts: Vec<(f64, f64)> = curve
        .s
        .iter()
        .zip(&curve.deviation)
        .zip(&curve.standard_error)
        .filter(|((_, d), se)| **d > 0.0 && **d > 3.0 * **se)
        .map(|((s, d), _)| (*s, d.ln()))
        .collect();
    ensure(pts.len() >= 3, || format!("only {} decay points above the noise floor", pts.len()))?;
    let n = pts.len() as f64;
    let ms = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - ms).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - ms) * (p.1 - ml)).sum();
    Ok((-sxy / sxx, pts.len()))
}

fn frozen_point(model: &CoefficientSet, cfg: &ErgodicityConfig) -> Result<ParticleCloud> {
    if cfg.x.len() != model.dims.n {
        return Err(Error::DimensionMismatch { expected: model.dims.n, got: cfg.x.len() });
    }
    ParticleCloud::from_rows(&cfg.mu)
}

/// b̄ at the frozen point: closed form if available, otherwise an ergodic estimate.
fn bbar_at<S: NoiseSource>(model: &CoefficientSet, cfg: &ErgodicityConfig, mu: &dyn MeasureView, noise: &S) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.dims.n];
    if !model.analytic_bbar(cfg.t, &cfg.x, mu, &mut out) {
        let inv = InvariantConfig::for_beta(model.beta, cfg.bbar_samples);
        out = estimate_bbar(model, cfg.t, &cfg.x, mu, &inv, noise, FrozenPath::new(u64::MAX, 0))?.value;
    }
    Ok(out)
}

pub fn ergodic_decay_fit<S: NoiseSource>(model: &CoefficientSet, cfg: &ErgodicityConfig, noise: &S) -> Result<DecayFit> {
    let cloud = frozen_point(model, cfg)?;
    let mu = cloud.view();
    let bbar = bbar_at(model, cfg, &mu, noise)?;
    let decay = DecayConfig {
        s_horizon: cfg.horizon_over_beta / model.beta,
        h_frozen: cfg.h_frozen,
        n_traj: cfg.n_traj,
        antithetic: cfg.antithetic,
        record_every: cfg.record_every,
        stream_id: 0,
    };
    let curve = ergodic_decay(model, cfg.t, &cfg.x, &mu, &cfg.y0, &bbar, &decay, noise)?;
    let (rate, points_used) = fit_decay_rate(&curve)?;
    let last = *curve.deviation.last().expect("non-empty curve");
    Ok(DecayFit { decay_factor: curve.deviation[0] / last, rate, points_used, curve, beta: model.beta })
}

/// max over the frozen grid of |Y^{y0}_s − Y^{y1}_s|² / (e^{−βs}|y0 − y1|²)
/// for two starts driven by the same noise.
pub fn contraction_ratio<S: NoiseSource>(model: &CoefficientSet, cfg: &ErgodicityConfig, noise: &S) -> Result<f64> {
    let cloud = frozen_point(model, cfg)?;
    let mu = cloud.view();
    let horizon = cfg.horizon_over_beta / model.beta;
    let path = FrozenPath::new(0, 0);
    let a = simulate_frozen(model, cfg.t, &cfg.x, &mu, &cfg.y0, horizon, cfg.h_frozen, noise, path)?;
    let b = simulate_frozen(model, cfg.t, &cfg.x, &mu, &cfg.y1, horizon, cfg.h_frozen, noise, path)?;
    let d0: f64 = cfg.y0.iter().zip(&cfg.y1).map(|(u, v)| (u - v).powi(2)).sum();
    ensure(d0 > 0.0, || "contraction starts must differ".into())?;
    Ok((0..a.len())
        .map(|k| {
            let d: f64 = a.state(k).iter().zip(b.state(k)).map(|(u, v)| (u - v).powi(2)).sum();
            d / ((-model.beta * k as f64 * cfg.h_frozen).exp() * d0)
        })
        .fold(0.0, f64::max))
}

/// Per-ε maximal fourth moments of the slow-fast ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBound {
    pub epsilon: f64,
    pub max_m4_x: f64,
    pub max_m4_y: f64,
}

/// max over checkpoints of the replicate-averaged fourth moments for each ε.
pub fn moment_table<S: NoiseSource>(
    model: &CoefficientSet,
    epsilon_grid: &[f64],
    cfg: &StudyConfig,
    noise: &S,
) -> Result<Vec<MomentBound>> {
    epsilon_grid
        .iter()
        .map(|&eps| {
            let grid = cfg.grid(eps, model.beta)?;
            let mut acc = vec![(0.0, 0.0); grid.n_checkpoints()];
            for rep in 0..cfg.n_reps as u64 {
                let run = simulate_slowfast(model, eps, &grid, cfg.n_particles, &cfg.x0, &cfg.y0, rep, noise)?;
                for (a, r) in acc.iter_mut().zip(&run.moments) {
                    a.0 += r.m4_x / cfg.n_reps as f64;
                    a.1 += r.m4_y / cfg.n_reps as f64;
                }
            }
            Ok(MomentBound {
                epsilon: eps,
                max_m4_x: acc.iter().map(|a| a.0).fold(0.0, f64::max),
                max_m4_y: acc.iter().map(|a| a.1).fold(0.0, f64::max),
            })
        })
        .collect()
}

/// Ratio of the largest to the smallest entry.
pub fn spread(values: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi / lo
}

/// Everything the diagnostics subcommand runs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub epsilon_grid: Vec<f64>,
    pub moments: StudyConfig,
    pub holder: HolderConfig,
    pub delta: DeltaSweepConfig,
    pub ergodicity: ErgodicityConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            epsilon_grid: super::strong::dyadic_grid(4..=9),
            moments: StudyConfig { n_particles: 500, n_reps: 4, ..Default::default() },
            holder: HolderConfig::default(),
            delta: DeltaSweepConfig::default(),
            ergodicity: ErgodicityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub moments: Vec<MomentBound>,
    pub holder: SlopeCurve,
    pub delta: DeltaSweep,
    pub decay: DecayFit,
    pub contraction_ratio: f64,
}

pub fn diagnostics_suite<S: NoiseSource>(model: &CoefficientSet, cfg: &DiagnosticsConfig, noise: &S) -> Result<DiagnosticsReport> {
    Ok(DiagnosticsReport {
        moments: moment_table(model, &cfg.epsilon_grid, &cfg.moments, noise)?,
        holder: holder_increments(model, &cfg.holder, noise)?,
        delta: delta_sweep(model, &cfg.delta, noise)?,
        decay: ergodic_decay_fit(model, &cfg.ergodicity, noise)?,
        contraction_ratio: contraction_ratio(model, &cfg.ergodicity, noise)?,
    })
}
