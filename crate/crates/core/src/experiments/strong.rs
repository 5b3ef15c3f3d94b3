//! Strong averaging error sup_t E|X^ε_t − X̄_t|² across an ε grid and the
//! fitted convergence order.

use crate::error::{ensure, Error, Result};
use crate::model::CoefficientSet;
use crate::noise::{NoiseKey, NoiseRole, NoiseSource};
use crate::solvers::{simulate_averaged, simulate_slowfast, BbarSource, TimeGrid};

/// Settings shared by every ε of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub horizon: f64,
    pub n_particles: usize,
    pub n_reps: usize,
    pub seed: u64,
    /// Step used when it is below the stability bound 0.5·ε/β.
    pub h_target: f64,
    /// Checkpoint intervals on [0, T] over which the sup is taken.
    pub checkpoints: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub source: BbarSource,
    /// Fine steps per averaged step.
    pub averaged_stride: usize,
    pub bootstrap_samples: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_particles: 2000,
            n_reps: 32,
            seed: 20_240_601,
            h_target: 0.01,
            checkpoints: 64,
            x0: vec![1.0],
            y0: vec![1.0],
            source: BbarSource::Analytic,
            averaged_stride: 1,
            bootstrap_samples: 1000,
        }
    }
}

impl StudyConfig {
    /// Fields that make no sense regardless of the model, all at once.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            out.push(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.n_particles == 0 {
            out.push("n_particles must be at least 1".into());
        }
        if self.n_reps < 2 {
            out.push(format!("n_reps must be at least 2, got {}", self.n_reps));
        }
        if !(self.h_target > 0.0) {
            out.push(format!("h_target must be positive, got {}", self.h_target));
        }
        if self.checkpoints == 0 {
            out.push("checkpoints must be at least 1".into());
        }
        if self.averaged_stride == 0 {
            out.push("averaged_stride must be at least 1".into());
        }
        out
    }

    pub fn grid(&self, epsilon: f64, beta: f64) -> Result<TimeGrid> {
        let grid = TimeGrid::for_epsilon(self.horizon, epsilon, beta, self.h_target, self.checkpoints)?;
        ensure(grid.checkpoint_stride % self.averaged_stride == 0, || {
            format!(
                "averaged stride {} does not divide the {} fine steps between checkpoints at epsilon {epsilon}",
                self.averaged_stride, grid.checkpoint_stride
            )
        })?;
        Ok(grid)
    }
}

/// Error estimate at one ε, with the replicate-level data behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongError {
    pub epsilon: f64,
    pub grid: TimeGrid,
    /// max over checkpoints of the replicate-averaged mean squared deviation.
    pub error: f64,
    /// Batch-means standard error over replicates at the maximising checkpoint.
    pub standard_error: f64,
    pub argmax_time: f64,
    /// Per replicate, the mean squared deviation at every checkpoint.
    pub replicate_curves: Vec<Vec<f64>>,
    /// max over checkpoints of the replicate-averaged fourth moments of X^ε and Y^ε.
    pub max_m4_x: f64,
    pub max_m4_y: f64,
}

fn column_mean(curves: &[Vec<f64>], idx: impl Fn(usize) -> usize, c: usize) -> f64 {
    (0..curves.len()).map(|r| curves[idx(r)][c]).sum::<f64>() / curves.len() as f64
}

/// (max, argmax) over checkpoints of the mean curve of the selected replicates.
fn sup_of_mean(curves: &[Vec<f64>], idx: impl Fn(usize) -> usize + Copy) -> (f64, usize) {
    (0..curves[0].len())
        .map(|c| (column_mean(curves, idx, c), c))
        .fold((f64::NEG_INFINITY, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Runs `n_reps` coupled (slow-fast, averaged) pairs at `epsilon`. Replicate r
/// of both runs uses noise replicate r, so each particle of X^ε shares its W¹
/// path with the matching particle of X̄.
pub fn strong_error<S: NoiseSource>(model: &CoefficientSet, epsilon: f64, cfg: &StudyConfig, noise: &S) -> Result<StrongError> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidParameter(problems.join("; ")));
    }
    let grid = cfg.grid(epsilon, model.beta)?;
    let n_ck = grid.n_checkpoints();
    let mut curves = Vec::with_capacity(cfg.n_reps);
    let mut m4 = vec![(0.0, 0.0); n_ck];
    for rep in 0..cfg.n_reps as u64 {
        let fast = simulate_slowfast(model, epsilon, &grid, cfg.n_particles, &cfg.x0, &cfg.y0, rep, noise)?;
        let avg = simulate_averaged(model, &cfg.source, &grid, cfg.averaged_stride, cfg.n_particles, &cfg.x0, rep, noise)?;
        let curve = fast
            .x
            .iter()
            .zip(&avg.x)
            .map(|(a, b)| a.mean_squared_deviation(b))
            .collect::<Result<Vec<f64>>>()?;
        for (acc, row) in m4.iter_mut().zip(&fast.moments) {
            acc.0 += row.m4_x / cfg.n_reps as f64;
            acc.1 += row.m4_y / cfg.n_reps as f64;
        }
        curves.push(curve);
    }
    let (error, c) = sup_of_mean(&curves, |r| r);
    let m = cfg.n_reps as f64;
    let var = curves.iter().map(|cv| (cv[c] - error).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(StrongError {
        epsilon,
        grid,
        error,
        standard_error: (var / m).sqrt(),
        argmax_time: grid.time(c * grid.checkpoint_stride),
        replicate_curves: curves,
        max_m4_x: m4.iter().map(|v| v.0).fold(0.0, f64::max),
        max_m4_y: m4.iter().map(|v| v.1).fold(0.0, f64::max),
    })
}

/// Least-squares line through (ln ε, ln error).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Whether standard errors were used as weights.
    pub weighted: bool,
}

/// Weighted least squares on logs with weights (error/se)². Falls back to
/// equal weights when any standard error is missing, zero or non-finite.
pub fn rate_fit(epsilon: &[f64], errors: &[f64], standard_errors: Option<&[f64]>) -> Result<RateFit> {
    if epsilon.len() != errors.len() {
        return Err(Error::SizeMismatch { left: epsilon.len(), right: errors.len() });
    }
    ensure(epsilon.len() >= 3, || format!("rate fit needs at least 3 points, got {}", epsilon.len()))?;
    for (index, &value) in errors.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositive { index, value });
        }
    }
    for (index, &value) in epsilon.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositive { index, value });
        }
    }
    let weights: Option<Vec<f64>> = standard_errors.and_then(|se| {
        (se.len() == errors.len() && se.iter().all(|s| *s > 0.0 && s.is_finite()))
            .then(|| errors.iter().zip(se).map(|(e, s)| (e / s).powi(2)).collect())
    });
    let w = |i: usize| weights.as_ref().map_or(1.0, |w| w[i]);
    let xs: Vec<f64> = epsilon.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let sw: f64 = (0..xs.len()).map(w).sum();
    let mx = (0..xs.len()).map(|i| w(i) * xs[i]).sum::<f64>() / sw;
    let my = (0..xs.len()).map(|i| w(i) * ys[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..xs.len()).map(|i| w(i) * (xs[i] - mx).powi(2)).sum();
    ensure(sxx > 0.0, || "epsilon grid needs at least two distinct values".into())?;
    let sxy: f64 = (0..xs.len()).map(|i| w(i) * (xs[i] - mx) * (ys[i] - my)).sum();
    let slope = sxy / sxx;
    Ok(RateFit { slope, intercept: my - slope * mx, weighted: weights.is_some() })
}

/// Percentile interval for the slope from resampling replicates independently
/// at every ε (with the weights of the original fit).
pub fn bootstrap_slope_ci<S: NoiseSource>(points: &[StrongError], n_boot: usize, level: f64, noise: &S) -> Result<(f64, f64)> {
    ensure(n_boot >= 2, || "bootstrap needs at least two resamples".into())?;
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon).collect();
    let se: Vec<f64> = points.iter().map(|p| p.standard_error).collect();
    let mut slopes = Vec::with_capacity(n_boot);
    for b in 0..n_boot {
        let errors: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let m = p.replicate_curves.len();
                let pick = |r: usize| {
                    let u = noise.uniform(NoiseRole::Probe, NoiseKey::new(b as u64, k as u32, r as u32, 0xB007));
                    ((u * m as f64) as usize).min(m - 1)
                };
                let picks: Vec<usize> = (0..m).map(pick).collect();
                sup_of_mean(&p.replicate_curves, |r| picks[r]).0
            })
            .collect();
        slopes.push(rate_fit(&eps, &errors, Some(&se))?.slope);
    }
    slopes.sort_unstable_by(f64::total_cmp);
    let q = |p: f64| slopes[((p * (n_boot - 1) as f64).round() as usize).min(n_boot - 1)];
    let alpha = (1.0 - level) / 2.0;
    Ok((q(alpha), q(1.0 - alpha)))
}

/// Errors across an ε grid with the fitted order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub model_id: String,
    pub config: StudyConfig,
    pub points: Vec<StrongError>,
    pub fit: RateFit,
    pub slope_ci: (f64, f64),
}

impl ConvergenceReport {
    pub fn epsilon_grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.epsilon).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.error).collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.standard_error).collect()
    }

    pub fn slope(&self) -> f64 {
        self.fit.slope
    }

    /// Every consecutive drop along the grid exceeds `k` combined standard errors.
    pub fn strictly_decreasing(&self, k: f64) -> bool {
        self.points.windows(2).all(|w| {
            let combined = (w[0].standard_error.powi(2) + w[1].standard_error.powi(2)).sqrt();
            w[0].error - w[1].error > k * combined
        })
    }

    /// Ĉ such that error(ε_max) = Ĉ·ε_max^{2/3}.
    pub fn two_thirds_constant(&self) -> f64 {
        let first = &self.points[0];
        first.error / first.epsilon.powf(2.0 / 3.0)
    }

    /// error(ε) ≤ Ĉ·ε^{2/3} at every grid point.
    pub fn within_two_thirds_bound(&self) -> bool {
        let c = self.two_thirds_constant();
        self.points.iter().all(|p| p.error / p.epsilon.powf(2.0 / 3.0) <= c)
    }

    /// Largest over smallest per-ε maximal fourth moment, for X and for Y.
    pub fn fourth_moment_spread(&self) -> (f64, f64) {
        let spread = |v: Vec<f64>| {
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            hi / lo
        };
        (
            spread(self.points.iter().map(|p| p.max_m4_x).collect()),
            spread(self.points.iter().map(|p| p.max_m4_y).collect()),
        )
    }
}

/// Checks that `epsilon_grid` is strictly decreasing inside (0, 1).
pub fn epsilon_grid_problems(epsilon_grid: &[f64]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, e) in epsilon_grid.iter().enumerate() {
        if !(*e > 0.0 && *e < 1.0) {
            out.push(format!("epsilon[{i}] = {e} is outside (0, 1)"));
        }
    }
    if epsilon_grid.windows(2).any(|w| w[1] >= w[0]) {
        out.push("epsilon grid must be strictly decreasing".into());
    }
    if epsilon_grid.len() < 3 {
        out.push(format!("epsilon grid needs at least 3 values, got {}", epsilon_grid.len()));
    }
    out
}

/// Strong error at every ε, the weighted log-log fit and a 95% bootstrap interval.
pub fn convergence_study<S: NoiseSource>(
    model: &CoefficientSet,
    epsilon_grid: &[f64],
    cfg: &StudyConfig,
    noise: &S,
) -> Result<ConvergenceReport> {
    let problems = epsilon_grid_problems(epsilon_grid);
    if !problems.is_empty() {
        return Err(Error::InvalidParameter(problems.join("; ")));
    }
    let points = epsilon_grid
        .iter()
        .map(|&eps| strong_error(model, eps, cfg, noise))
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon).collect();
    let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
    let se: Vec<f64> = points.iter().map(|p| p.standard_error).collect();
    let fit = rate_fit(&eps, &errors, Some(&se))?;
    let slope_ci = bootstrap_slope_ci(&points, cfg.bootstrap_samples, 0.95, noise)?;
    Ok(ConvergenceReport { model_id: model.id.clone(), config: cfg.clone(), points, fit, slope_ci })
}

/// ε = 2^{-k} for k in `exponents`.
pub fn dyadic_grid(exponents: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    exponents.map(|k| 0.5f64.powi(k)).collect()
}
