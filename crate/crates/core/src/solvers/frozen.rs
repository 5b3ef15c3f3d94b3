//! The frozen fast equation dY = f(t,x,μ,Y) ds + g(t,x,μ,Y) dW̃ with
//! (t, x, μ) held fixed, its invariant measure, and ergodic averages
//! against it.

use rayon::prelude::*;

use super::slowfast::first_nonfinite;
use super::slow_update;
use crate::error::{ensure, Error, Result};
use crate::measure::{MeasureView, ParticleCloud};
use crate::model::CoefficientSet;
use crate::noise::{NoiseRole, NoiseSource};

/// Trajectories per parallel work unit. Fixed so reductions do not depend on
/// the number of workers.
const TRAJ_CHUNK: usize = 32;

/// Explicit-Euler stability bound for the frozen equation.
pub fn frozen_step_bound(beta: f64) -> f64 {
    0.5 / beta
}

/// Noise address of one frozen-equation path (FrozenNoise role).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrozenPath {
    pub replicate: u64,
    pub particle: u32,
}

impl FrozenPath {
    pub fn new(replicate: u64, particle: u32) -> Self {
        Self { replicate, particle }
    }
}

/// Step-by-step Euler integrator for one frozen path. `sign = −1` gives the
/// antithetic partner of the path driven by the same keys.
pub struct FrozenRunner<'a, S: NoiseSource> {
    model: &'a CoefficientSet,
    t: f64,
    x: &'a [f64],
    mu: &'a dyn MeasureView,
    h: f64,
    noise: &'a S,
    path: FrozenPath,
    sign: f64,
    pub y: Vec<f64>,
    pub steps_taken: u64,
    f: Vec<f64>,
    g: Vec<f64>,
    dw: Vec<f64>,
    next: Vec<f64>,
}

impl<'a, S: NoiseSource> FrozenRunner<'a, S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a CoefficientSet,
        t: f64,
        x: &'a [f64],
        mu: &'a dyn MeasureView,
        y0: &[f64],
        h: f64,
        noise: &'a S,
        path: FrozenPath,
    ) -> Result<Self> {
        let dims = model.dims;
        if x.len() != dims.n {
            return Err(Error::DimensionMismatch { expected: dims.n, got: x.len() });
        }
        if y0.len() != dims.m {
            return Err(Error::DimensionMismatch { expected: dims.m, got: y0.len() });
        }
        let bound = frozen_step_bound(model.beta);
        if !(h > 0.0) || h > bound * (1.0 + 1e-12) {
            return Err(Error::StepAboveStability { step: h, bound });
        }
        Ok(Self {
            model,
            t,
            x,
            mu,
            h,
            noise,
            path,
            sign: 1.0,
            y: y0.to_vec(),
            steps_taken: 0,
            f: vec![0.0; dims.m],
            g: vec![0.0; dims.m * dims.d2],
            dw: vec![0.0; dims.d2],
            next: vec![0.0; dims.m],
        })
    }

    pub fn antithetic(mut self) -> Self {
        self.sign = -1.0;
        self
    }

    pub fn advance(&mut self) -> Result<()> {
        self.model.fast_drift(self.t, self.x, self.mu, &self.y, &mut self.f);
        self.model.fast_diffusion(self.t, self.x, self.mu, &self.y, &mut self.g);
        self.noise
            .fill_normals(NoiseRole::Frozen, self.path.replicate, self.path.particle, self.steps_taken, &mut self.dw);
        let scale = self.sign * self.h.sqrt();
        self.dw.iter_mut().for_each(|w| *w *= scale);
        slow_update(&self.y, &self.f, self.h, &self.g, &self.dw, &mut self.next);
        std::mem::swap(&mut self.y, &mut self.next);
        self.steps_taken += 1;
        if first_nonfinite(&self.y, self.y.len()).is_some() {
            return Err(Error::NonFinite { particle: self.path.particle as usize, t: self.steps_taken as f64 * self.h });
        }
        Ok(())
    }

    pub fn advance_by(&mut self, steps: usize) -> Result<()> {
        (0..steps).try_for_each(|_| self.advance())
    }

    /// b(t, x, μ, Y) at the current state.
    pub fn slow_drift(&self, out: &mut [f64]) {
        self.model.slow_drift(self.t, self.x, self.mu, &self.y, out);
    }
}

/// States of one frozen path on the grid s_k = k·step.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTrajectory {
    pub step: f64,
    pub states: ParticleCloud,
}

impl FrozenTrajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        self.states.row(k)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Euler path of the frozen equation over [0, s_horizon].
#[allow(clippy::too_many_arguments)]
pub fn simulate_frozen<S: NoiseSource>(
    model: &CoefficientSet,
    t: f64,
    x: &[f64],
    mu: &dyn MeasureView,
    y0: &[f64],
    s_horizon: f64,
    h_frozen: f64,
    noise: &S,
    path: FrozenPath,
) -> Result<FrozenTrajectory> {
    ensure(s_horizon > 0.0, || format!("frozen horizon must be positive, got {s_horizon}"))?;
    let mut runner = FrozenRunner::new(model, t, x, mu, y0, h_frozen, noise, path)?;
    let steps = (s_horizon / h_frozen).round().max(1.0) as usize;
    let mut states = Vec::with_capacity((steps + 1) * y0.len());
    states.extend_from_slice(&runner.y);
    for _ in 0..steps {
        runner.advance()?;
        states.extend_from_slice(&runner.y);
    }
    Ok(FrozenTrajectory { step: h_frozen, states: ParticleCloud::new(y0.len(), states)? })
}

/// Sampling schedule for the invariant measure of the frozen equation.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantConfig {
    pub h_frozen: f64,
    /// Time discarded before the first sample.
    pub burn_in: f64,
    pub n_samples: usize,
    /// Frozen steps between consecutive samples.
    pub thin: usize,
    /// Start of the frozen path; the origin when `None`.
    pub y0: Option<Vec<f64>>,
}

impl InvariantConfig {
    /// Smallest admissible burn-in, (10/β)·ln 10.
    pub fn min_burn_in(beta: f64) -> f64 {
        10.0 / beta * std::f64::consts::LN_10
    }

    /// Defaults for contraction rate β: step 0.1/β, burn-in (10/β)·ln 10,
    /// samples spaced 5/β apart.
    pub fn for_beta(beta: f64, n_samples: usize) -> Self {
        let h_frozen = 0.1 / beta;
        Self {
            h_frozen,
            burn_in: Self::min_burn_in(beta),
            n_samples,
            thin: ((5.0 / beta) / h_frozen).round() as usize,
            y0: None,
        }
    }

    fn validate(&self, beta: f64) -> Result<()> {
        let min = Self::min_burn_in(beta);
        ensure(self.burn_in >= min * (1.0 - 1e-12), || format!("burn-in {} is below (10/beta)ln10 = {min}", self.burn_in))?;
        ensure(self.n_samples >= 1, || "need at least one invariant sample".into())?;
        ensure(self.thin >= 1, || "thinning must be at least one step".into())
    }
}

/// Thinned post-burn-in states of one long frozen path, as a cloud in R^m.
#[allow(clippy::too_many_arguments)]
pub fn sample_invariant<S: NoiseSource>(
    model: &CoefficientSet,
    t: f64,
    x: &[f64],
    mu: &dyn MeasureView,
    cfg: &InvariantConfig,
    noise: &S,
    path: FrozenPath,
) -> Result<ParticleCloud> {
    cfg.validate(model.beta)?;
    let m = model.dims.m;
    let origin = vec![0.0; m];
    let y0 = cfg.y0.as_deref().unwrap_or(&origin);
    let mut runner = FrozenRunner::new(model, t, x, mu, y0, cfg.h_frozen, noise, path)?;
    runner.advance_by((cfg.burn_in / cfg.h_frozen).ceil() as usize)?;
    let mut samples = Vec::with_capacity(cfg.n_samples * m);
    samples.extend_from_slice(&runner.y);
    for _ in 1..cfg.n_samples {
        runner.advance_by(cfg.thin)?;
        samples.extend_from_slice(&runner.y);
    }
    ParticleCloud::new(m, samples)
}

/// Ergodic estimate of b̄(t, x, μ) with a batch-means standard error per component.
#[derive(Debug, Clone, PartialEq)]
pub struct BbarEstimate {
    pub value: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub n_samples: usize,
}

/// Running mean that reproduces a constant sequence exactly.
pub(crate) fn running_mean<'a>(values: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, usize) {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for v in values {
        count += 1;
        let k = count as f64;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += (x - *m) / k;
        }
    }
    (mean, count)
}

/// Batch-means standard error of the mean of `rows` (each of length `dim`).
/// Zero when all rows coincide; infinite for a single row.
pub(crate) fn batch_means_se(rows: &[f64], dim: usize) -> Vec<f64> {
    let n = rows.len() / dim;
    if n < 2 {
        return vec![f64::INFINITY; dim];
    }
    let batches = ((n as f64).sqrt().floor() as usize).clamp(2, 32).min(n);
    let size = n / batches;
    let means: Vec<Vec<f64>> = (0..batches)
        .map(|b| {
            let end = if b + 1 == batches { n } else { (b + 1) * size };
            running_mean(rows[b * size * dim..end * dim].chunks_exact(dim), dim).0
        })
        .collect();
    (0..dim)
        .map(|c| {
            let avg = means.iter().map(|mv| mv[c]).sum::<f64>() / batches as f64;
            let var = means.iter().map(|mv| (mv[c] - avg).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (var / batches as f64).sqrt()
        })
        .collect()
}

/// Time average of b(t, x, μ, ·) over an invariant sample of the frozen equation.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bbar<S: NoiseSource>(
    model: &CoefficientSet,
    t: f64,
    x: &[f64],
    mu: &dyn MeasureView,
    cfg: &InvariantConfig,
    noise: &S,
    path: FrozenPath,
) -> Result<BbarEstimate> {
    let samples = sample_invariant(model, t, x, mu, cfg, noise, path)?;
    let n = model.dims.n;
    let mut drifts = vec![0.0; samples.len() * n];
    for (y, out) in samples.rows().zip(drifts.chunks_exact_mut(n)) {
        model.slow_drift(t, x, mu, y, out);
    }
    let (value, count) = running_mean(drifts.chunks_exact(n), n);
    let standard_error = if drifts.chunks_exact(n).all(|r| r == &drifts[..n]) {
        vec![0.0; n]
    } else {
        batch_means_se(&drifts, n)
    };
    Ok(BbarEstimate { value, standard_error, n_samples: count })
}

/// Settings for measuring how fast Ẽ b(t, x, μ, Y_s) relaxes to b̄.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayConfig {
    pub s_horizon: f64,
    pub h_frozen: f64,
    /// Independent paths (pairs, when antithetic).
    pub n_traj: usize,
    /// Average each path with its sign-flipped partner.
    pub antithetic: bool,
    /// Frozen steps between recorded points.
    pub record_every: usize,
    /// Identifier folded into the FrozenNoise addresses.
    pub stream_id: u64,
}

/// |Ẽ b(Y_s) − b̄| against s, with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub s: Vec<f64>,
    pub deviation: Vec<f64>,
    pub standard_error: Vec<f64>,
}

/// Per-record sums over a group of paths: Σ v and Σ v² for every component.
pub(crate) struct RecordSums {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub count: usize,
}

impl RecordSums {
    pub(crate) fn zeros(len: usize) -> Self {
        Self { sum: vec![0.0; len], sum_sq: vec![0.0; len], count: 0 }
    }

    pub(crate) fn add_unit(&mut self, values: &[f64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(values) {
            *s += v;
            *q += v * v;
        }
        self.count += 1;
    }

    pub(crate) fn merge(&mut self, other: &Self) {
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        for (s, o) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *s += o;
        }
        self.count += other.count;
    }

    /// Mean and standard error of the mean, per entry.
    pub(crate) fn mean_and_se(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let se = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                if self.count < 2 {
                    f64::INFINITY
                } else {
                    ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
                }
            })
            .collect();
        (mean, se)
    }
}

/// Runs `n_units` independent units in fixed-size chunks, reducing in index
/// order. Each unit writes `record_len` values.
pub(crate) fn reduce_units(
    n_units: usize,
    record_len: usize,
    unit: impl Fn(usize, &mut [f64]) -> Result<()> + Sync,
) -> Result<RecordSums> {
    let chunks = n_units.div_ceil(TRAJ_CHUNK);
    let partials: Vec<Result<RecordSums>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sums = RecordSums::zeros(record_len);
            let mut buf = vec![0.0; record_len];
            for u in c * TRAJ_CHUNK..((c + 1) * TRAJ_CHUNK).min(n_units) {
                unit(u, &mut buf)?;
                sums.add_unit(&buf);
            }
            Ok(sums)
        })
        .collect();
    let mut total = RecordSums::zeros(record_len);
    for p in partials {
        total.merge(&p?);
    }
    Ok(total)
}

/// Monte Carlo estimate of s ↦ |Ẽ b(t, x, μ, Y_s^{y0}) − b̄|.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_decay<S: NoiseSource>(
    model: &CoefficientSet,
    t: f64,
    x: &[f64],
    mu: &dyn MeasureView,
    y0: &[f64],
    bbar: &[f64],
    cfg: &DecayConfig,
    noise: &S,
) -> Result<DecayCurve> {
    let n = model.dims.n;
    if bbar.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: bbar.len() });
    }
    ensure(cfg.n_traj >= 2, || "need at least two decay paths".into())?;
    ensure(cfg.record_every >= 1, || "record_every must be at least 1".into())?;
    let steps = (cfg.s_horizon / cfg.h_frozen).round() as usize;
    ensure(steps >= 1, || "decay horizon shorter than one step".into())?;
    let n_records = steps / cfg.record_every + 1;

    let sums = reduce_units(cfg.n_traj, n_records * n, |u, out| {
        let path = FrozenPath::new(cfg.stream_id, u as u32);
        let mut plus = FrozenRunner::new(model, t, x, mu, y0, cfg.h_frozen, noise, path)?;
        let mut minus = if cfg.antithetic {
            Some(FrozenRunner::new(model, t, x, mu, y0, cfg.h_frozen, noise, path)?.antithetic())
        } else {
            None
        };
        let mut b = vec![0.0; n];
        for r in 0..n_records {
            if r > 0 {
                plus.advance_by(cfg.record_every)?;
                if let Some(mr) = minus.as_mut() {
                    mr.advance_by(cfg.record_every)?;
                }
            }
            let slot = &mut out[r * n..(r + 1) * n];
            plus.slow_drift(slot);
            if let Some(mr) = minus.as_ref() {
                mr.slow_drift(&mut b);
                for (s, v) in slot.iter_mut().zip(&b) {
                    *s = 0.5 * (*s + v);
                }
            }
            for (s, bb) in slot.iter_mut().zip(bbar) {
                *s -= bb;
            }
        }
        Ok(())
    })?;

    let (mean, se) = sums.mean_and_se();
    let mut curve = DecayCurve { s: Vec::new(), deviation: Vec::new(), standard_error: Vec::new() };
    for r in 0..n_records {
        let m = &mean[r * n..(r + 1) * n];
        let e = &se[r * n..(r + 1) * n];
        curve.s.push((r * cfg.record_every) as f64 * cfg.h_frozen);
        curve.deviation.push(m.iter().map(|v| v * v).sum::<f64>().sqrt());
        curve.standard_error.push(e.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_benchmark, Dims, LinearBenchmarkParams};
    use crate::noise::CounterNoise;
    use approx::assert_abs_diff_eq;

    /// f = −κ(y − c), g = √2·σ_y, b = y.
    fn ou(kappa: f64, c: f64, sigma_y: f64) -> CoefficientSet {
        let g = std::f64::consts::SQRT_2 * sigma_y;
        CoefficientSet::new(
            "ou",
            Dims::scalar(),
            2.0 * kappa,
            |_, _, _, y, o| o[0] = y[0],
            |_, _, _, o| o[0] = 0.0,
            move |_, _, _, y, o| o[0] = -kappa * (y[0] - c),
            move |_, _, _, _, o| o[0] = g,
        )
        .unwrap()
    }

    fn dirac0() -> ParticleCloud {
        ParticleCloud::dirac(&[0.0]).unwrap()
    }

    #[test]
    fn deterministic_decay_without_noise() {
        let model = CoefficientSet::new(
            "decay",
            Dims::scalar(),
            2.0,
            |_, _, _, _, o| o[0] = 0.0,
            |_, _, _, o| o[0] = 0.0,
            |_, _, _, y, o| o[0] = -y[0],
            |_, _, _, _, o| o[0] = 0.0,
        )
        .unwrap();
        let mu = dirac0();
        let h = 0.05;
        let traj = simulate_frozen(&model, 0.0, &[0.0], &mu.view(), &[1.0], 2.0, h, &CounterNoise::new(0), FrozenPath::new(0, 0))
            .unwrap();
        assert_eq!(traj.len(), 41);
        for k in 0..traj.len() {
            assert_abs_diff_eq!(traj.state(k)[0], (1.0 - h).powi(k as i32), epsilon = 1e-14);
        }
    }

    #[test]
    fn unstable_frozen_step_rejected() {
        let model = ou(1.0, 0.0, 1.0);
        let mu = dirac0();
        let err = simulate_frozen(&model, 0.0, &[0.0], &mu.view(), &[0.0], 1.0, 0.5, &CounterNoise::new(0), FrozenPath::new(0, 0));
        assert!(matches!(err, Err(Error::StepAboveStability { .. })));
    }

    #[test]
    fn ou_relaxes_to_its_center() {
        // Terminal mean over many paths: c + e^{-κs}(y0 − c), and after s ≫ 1/κ just c.
        let (kappa, c) = (1.0, 0.7);
        let model = ou(kappa, c, 0.5);
        let mu = dirac0();
        let noise = CounterNoise::new(12);
        let n = 4000;
        let finals: Vec<f64> = (0..n)
            .map(|p| {
                let tr = simulate_frozen(&model, 0.0, &[0.0], &mu.view(), &[3.0], 8.0, 0.01, &noise, FrozenPath::new(1, p)).unwrap();
                tr.state(tr.len() - 1)[0]
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / n as f64;
        let sd = (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let expected = c + (-kappa * 8.0f64).exp() * (3.0 - c);
        assert!((mean - expected).abs() < 3.0 * sd / (n as f64).sqrt(), "mean {mean} expected {expected}");
    }

    #[test]
    fn shared_noise_paths_contract() {
        let model = ou(1.5, -0.2, 1.0);
        let mu = dirac0();
        let noise = CounterNoise::new(3);
        let path = FrozenPath::new(0, 0);
        let h = 0.01;
        let a = simulate_frozen(&model, 0.0, &[0.0], &mu.view(), &[2.0], 5.0, h, &noise, path).unwrap();
        let b = simulate_frozen(&model, 0.0, &[0.0], &mu.view(), &[-1.0], 5.0, h, &noise, path).unwrap();
        for k in 0..a.len() {
            let d = (a.state(k)[0] - b.state(k)[0]).powi(2);
            let bound = (-model.beta * k as f64 * h).exp() * 9.0;
            assert!(d <= bound * 1.1, "k={k}: {d} > {bound}");
        }
    }

    #[test]
    fn invariant_sample_matches_ou_law() {
        let (kappa, c, sigma_y) = (2.0, 0.4, 0.8);
        let model = ou(kappa, c, sigma_y);
        let mu = dirac0();
        let mut cfg = InvariantConfig::for_beta(model.beta, 4000);
        cfg.h_frozen = 0.005;
        cfg.thin = 200;
        let cloud = sample_invariant(&model, 0.0, &[0.0], &mu.view(), &cfg, &CounterNoise::new(21), FrozenPath::new(2, 0)).unwrap();
        let n = cloud.len() as f64;
        let mean = cloud.mean()[0];
        let var = cloud.rows().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target_var = sigma_y * sigma_y / kappa;
        // Euler shrinks the stationary variance by the factor 1/(1 − κh/2).
        let euler_var = target_var / (1.0 - kappa * cfg.h_frozen / 2.0);
        assert!((mean - c).abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
        assert!((var - euler_var).abs() < 3.0 * euler_var * (2.0 / (n - 1.0)).sqrt(), "var {var} vs {euler_var}");
        assert!((var - target_var).abs() < 0.02 * target_var);
    }

    #[test]
    fn burn_in_below_minimum_rejected() {
        let model = ou(1.0, 0.0, 1.0);
        let mu = dirac0();
        let mut cfg = InvariantConfig::for_beta(model.beta, 10);
        cfg.burn_in *= 0.5;
        assert!(sample_invariant(&model, 0.0, &[0.0], &mu.view(), &cfg, &CounterNoise::new(0), FrozenPath::new(0, 0)).is_err());
    }

    #[test]
    fn single_sample_is_a_valid_cloud() {
        let model = ou(1.0, 0.0, 1.0);
        let mu = dirac0();
        let cfg = InvariantConfig::for_beta(model.beta, 1);
        let cloud = sample_invariant(&model, 0.0, &[0.0], &mu.view(), &cfg, &CounterNoise::new(0), FrozenPath::new(0, 0)).unwrap();
        assert_eq!(cloud.len(), 1);
    }

    #[test]
    fn bbar_of_linear_benchmark() {
        let p = LinearBenchmarkParams::default();
        let model = linear_benchmark(p).unwrap();
        let mu = ParticleCloud::from_values(&[0.5, 1.5]).unwrap();
        let cfg = InvariantConfig::for_beta(model.beta, 2000);
        let est = estimate_bbar(&model, 0.0, &[0.3], &mu.view(), &cfg, &CounterNoise::new(5), FrozenPath::new(9, 0)).unwrap();
        let mut exact = [0.0];
        model.analytic_bbar(0.0, &[0.3], &mu.view(), &mut exact);
        assert!((est.value[0] - exact[0]).abs() < 3.0 * est.standard_error[0], "{est:?} vs {exact:?}");
        assert!(est.standard_error[0] > 0.0);
    }

    #[test]
    fn bbar_is_exact_when_drift_ignores_fast_state() {
        let model = linear_benchmark(LinearBenchmarkParams { a3: 0.0, a1: 0.1, a2: 0.3, ..Default::default() }).unwrap();
        let mu = ParticleCloud::from_values(&[0.1, 0.2, 0.3]).unwrap();
        let cfg = InvariantConfig::for_beta(model.beta, 50);
        let est = estimate_bbar(&model, 0.0, &[0.7], &mu.view(), &cfg, &CounterNoise::new(1), FrozenPath::new(0, 0)).unwrap();
        let mut direct = [0.0];
        model.slow_drift(0.0, &[0.7], &mu.view(), &[0.0], &mut direct);
        assert_eq!(est.value[0], direct[0]);
        assert_eq!(est.standard_error[0], 0.0);
    }

    #[test]
    fn antithetic_decay_is_noise_free_for_linear_drift() {
        let p = LinearBenchmarkParams::default();
        let model = linear_benchmark(p).unwrap();
        let mu = dirac0();
        let cfg = DecayConfig { s_horizon: 1.0, h_frozen: 0.01, n_traj: 8, antithetic: true, record_every: 10, stream_id: 0 };
        let curve = ergodic_decay(&model, 0.0, &[0.0], &mu.view(), &[1.0], &[0.0], &cfg, &CounterNoise::new(1)).unwrap();
        for (s, d) in curve.s.iter().zip(&curve.deviation) {
            let k = (s / cfg.h_frozen).round() as i32;
            assert_abs_diff_eq!(*d, (1.0 - p.kappa * cfg.h_frozen).powi(k), epsilon = 1e-12);
        }
    }

    #[test]
    fn batch_means_behaviour() {
        assert_eq!(batch_means_se(&[1.0], 1), vec![f64::INFINITY]);
        let se = batch_means_se(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 1);
        assert!(se[0].is_finite());
    }
}
