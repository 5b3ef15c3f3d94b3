use rayon::prelude::*;

use super::{fast_update, slow_update, TimeGrid, PARTICLE_CHUNK};
use crate::error::{ensure, Error, Result};
use crate::measure::ParticleCloud;
use crate::model::{CoefficientSet, Dims};
use crate::noise::{NoiseRole, NoiseSource};

/// Explicit-Euler stability bound for the 1/ε-stiff fast drift.
pub fn slowfast_step_bound(epsilon: f64, beta: f64) -> f64 {
    0.5 * epsilon / beta
}

/// Particle states `(X, Y)` of the slow-fast system; row i of `x` pairs with row i of `y`.
#[derive(Debug, Clone)]
pub struct SlowFastEnsemble {
    pub epsilon: f64,
    pub t: f64,
    /// Index of the next fine step; addresses the noise.
    pub step_index: u64,
    pub replicate: u64,
    pub x: ParticleCloud,
    pub y: ParticleCloud,
}

pub(crate) fn check_initial(model: &CoefficientSet, x0: &[f64], y0: &[f64], n_particles: usize) -> Result<()> {
    if x0.len() != model.dims.n {
        return Err(Error::DimensionMismatch { expected: model.dims.n, got: x0.len() });
    }
    if y0.len() != model.dims.m {
        return Err(Error::DimensionMismatch { expected: model.dims.m, got: y0.len() });
    }
    ensure(n_particles > 0, || "need at least one particle".into())
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    ensure(epsilon > 0.0 && epsilon < 1.0, || format!("epsilon must lie in (0, 1), got {epsilon}"))
}

impl SlowFastEnsemble {
    /// All particles start from the deterministic point `(x0, y0)`.
    pub fn new(
        model: &CoefficientSet,
        epsilon: f64,
        x0: &[f64],
        y0: &[f64],
        n_particles: usize,
        replicate: u64,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        check_initial(model, x0, y0, n_particles)?;
        Ok(Self {
            epsilon,
            t: 0.0,
            step_index: 0,
            replicate,
            x: ParticleCloud::broadcast(x0, n_particles)?,
            y: ParticleCloud::broadcast(y0, n_particles)?,
        })
    }

    /// One Euler-Maruyama step of size `h`. Every particle sees the
    /// pre-step empirical measure of X.
    pub fn step<S: NoiseSource>(&mut self, model: &CoefficientSet, h: f64, noise: &S) -> Result<()> {
        let bound = slowfast_step_bound(self.epsilon, model.beta);
        if !(h > 0.0) || h > bound * (1.0 + 1e-12) {
            return Err(Error::StepAboveStability { step: h, bound });
        }
        let Dims { n, m, d1, d2 } = model.dims;
        let mu = self.x.view();
        let (t, eps, replicate, step_index) = (self.t, self.epsilon, self.replicate, self.step_index);
        let (sqrt_h, h_over_eps, inv_sqrt_eps) = (h.sqrt(), h / eps, 1.0 / eps.sqrt());
        let x_old = self.x.as_slice();
        let y_old = self.y.as_slice();
        let mut x_new = vec![0.0; x_old.len()];
        let mut y_new = vec![0.0; y_old.len()];

        x_new
            .par_chunks_mut(n * PARTICLE_CHUNK)
            .zip(y_new.par_chunks_mut(m * PARTICLE_CHUNK))
            .enumerate()
            .for_each(|(chunk, (xs, ys))| {
                let mut b = vec![0.0; n];
                let mut sigma = vec![0.0; n * d1];
                let mut f = vec![0.0; m];
                let mut g = vec![0.0; m * d2];
                let mut dw1 = vec![0.0; d1];
                let mut dw2 = vec![0.0; d2];
                for (k, (xo, yo)) in xs.chunks_exact_mut(n).zip(ys.chunks_exact_mut(m)).enumerate() {
                    let i = chunk * PARTICLE_CHUNK + k;
                    let x = &x_old[i * n..(i + 1) * n];
                    let y = &y_old[i * m..(i + 1) * m];
                    model.slow_drift(t, x, &mu, y, &mut b);
                    model.slow_diffusion(t, x, &mu, &mut sigma);
                    model.fast_drift(t, x, &mu, y, &mut f);
                    model.fast_diffusion(t, x, &mu, y, &mut g);
                    noise.fill_normals(NoiseRole::Slow, replicate, i as u32, step_index, &mut dw1);
                    noise.fill_normals(NoiseRole::Fast, replicate, i as u32, step_index, &mut dw2);
                    dw1.iter_mut().for_each(|w| *w *= sqrt_h);
                    dw2.iter_mut().for_each(|w| *w = *w * sqrt_h * inv_sqrt_eps);
                    slow_update(x, &b, h, &sigma, &dw1, xo);
                    fast_update(y, &f, h_over_eps, &g, &dw2, yo);
                }
            });
        drop(mu);

        let t_new = t + h;
        if let Some(p) = first_nonfinite(&x_new, n).or_else(|| first_nonfinite(&y_new, m)) {
            return Err(Error::NonFinite { particle: p, t: t_new });
        }
        self.x = ParticleCloud::from_parts_unchecked(n, x_new);
        self.y = ParticleCloud::from_parts_unchecked(m, y_new);
        self.t = t_new;
        self.step_index += 1;
        Ok(())
    }
}

pub(crate) fn first_nonfinite(values: &[f64], dim: usize) -> Option<usize> {
    values.iter().position(|v| !v.is_finite()).map(|i| i / dim)
}

/// Ensemble second and fourth moments at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub m2_x: f64,
    pub m4_x: f64,
    pub m2_y: f64,
    pub m4_y: f64,
}

impl MomentRow {
    fn of(t: f64, x: &ParticleCloud, y: &ParticleCloud) -> Self {
        Self { t, m2_x: x.second_moment(), m4_x: x.fourth_moment(), m2_y: y.second_moment(), m4_y: y.fourth_moment() }
    }
}

/// Checkpointed clouds of one slow-fast run.
#[derive(Debug, Clone)]
pub struct SlowFastTrajectory {
    pub epsilon: f64,
    pub replicate: u64,
    pub grid: TimeGrid,
    pub times: Vec<f64>,
    pub x: Vec<ParticleCloud>,
    pub y: Vec<ParticleCloud>,
    pub moments: Vec<MomentRow>,
}

impl SlowFastTrajectory {
    /// Largest ensemble fourth moments of X and Y over the checkpoints.
    pub fn max_fourth_moments(&self) -> (f64, f64) {
        self.moments
            .iter()
            .fold((0.0f64, 0.0f64), |(mx, my), r| (mx.max(r.m4_x), my.max(r.m4_y)))
    }
}

/// Integrates the slow-fast system over `grid` from the point `(x0, y0)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_slowfast<S: NoiseSource>(
    model: &CoefficientSet,
    epsilon: f64,
    grid: &TimeGrid,
    n_particles: usize,
    x0: &[f64],
    y0: &[f64],
    replicate: u64,
    noise: &S,
) -> Result<SlowFastTrajectory> {
    let mut ens = SlowFastEnsemble::new(model, epsilon, x0, y0, n_particles, replicate)?;
    let capacity = grid.n_checkpoints();
    let mut traj = SlowFastTrajectory {
        epsilon,
        replicate,
        grid: *grid,
        times: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity),
        y: Vec::with_capacity(capacity),
        moments: Vec::with_capacity(capacity),
    };
    let mut record = |ens: &SlowFastEnsemble, t: f64| {
        traj.times.push(t);
        traj.moments.push(MomentRow::of(t, &ens.x, &ens.y));
        traj.x.push(ens.x.clone());
        traj.y.push(ens.y.clone());
    };
    record(&ens, 0.0);
    for k in 1..=grid.n_steps {
        ens.step(model, grid.step, noise)?;
        // Pin the clock to the grid so that long runs do not drift.
        ens.t = grid.time(k);
        if k % grid.checkpoint_stride == 0 {
            record(&ens, ens.t);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_benchmark, LinearBenchmarkParams};
    use crate::noise::{CounterNoise, NoiseKey, NoiseStream};
    use approx::assert_abs_diff_eq;

    fn zero_model() -> CoefficientSet {
        CoefficientSet::new(
            "zero",
            Dims::scalar(),
            1.0,
            |_, _, _, _, o| o[0] = 0.0,
            |_, _, _, o| o[0] = 0.0,
            |_, _, _, _, o| o[0] = 0.0,
            |_, _, _, _, o| o[0] = 0.0,
        )
        .unwrap()
    }

    #[test]
    fn frozen_state_without_dynamics() {
        let model = zero_model();
        let mut ens = SlowFastEnsemble::new(&model, 0.1, &[1.5], &[-2.0], 4, 0).unwrap();
        for _ in 0..10 {
            ens.step(&model, 0.01, &CounterNoise::new(1)).unwrap();
        }
        assert!(ens.x.as_slice().iter().all(|&v| v == 1.5));
        assert!(ens.y.as_slice().iter().all(|&v| v == -2.0));
        assert_abs_diff_eq!(ens.t, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn single_linear_step_by_hand() {
        let p = LinearBenchmarkParams::default();
        let model = linear_benchmark(p).unwrap();
        let (eps, h) = (0.25, 0.01);
        let noise = CounterNoise::new(77);
        let mut ens = SlowFastEnsemble::new(&model, eps, &[0.8], &[-0.3], 1, 5).unwrap();
        ens.step(&model, h, &noise).unwrap();

        let z1 = NoiseStream::new(77, NoiseRole::Slow).standard_normal(NoiseKey::new(5, 0, 0, 0));
        let z2 = NoiseStream::new(77, NoiseRole::Fast).standard_normal(NoiseKey::new(5, 0, 0, 0));
        let (x, y, m) = (0.8, -0.3, 0.8);
        let b = p.a1 * x + p.a2 * m + p.a3 * y;
        let f = -p.kappa * (y - p.c1 * x - p.c2 * m);
        let x1 = x + b * h + p.sigma_x * h.sqrt() * z1;
        let y1 = y + f * h / eps + p.sigma_y * h.sqrt() * z2 / eps.sqrt();
        assert_abs_diff_eq!(ens.x.as_slice()[0], x1, epsilon = 1e-14);
        assert_abs_diff_eq!(ens.y.as_slice()[0], y1, epsilon = 1e-14);
    }

    #[test]
    fn step_above_bound_is_rejected() {
        let model = linear_benchmark(LinearBenchmarkParams::default()).unwrap();
        let mut ens = SlowFastEnsemble::new(&model, 0.1, &[0.0], &[0.0], 2, 0).unwrap();
        let bound = slowfast_step_bound(0.1, model.beta);
        match ens.step(&model, 2.0 * bound, &CounterNoise::new(0)) {
            Err(Error::StepAboveStability { bound: b, .. }) => assert_eq!(b, bound),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn epsilon_outside_unit_interval_rejected() {
        let model = zero_model();
        assert!(SlowFastEnsemble::new(&model, 1.5, &[0.0], &[0.0], 1, 0).is_err());
        assert!(SlowFastEnsemble::new(&model, 0.0, &[0.0], &[0.0], 1, 0).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let model = CoefficientSet::new(
            "explosive",
            Dims::scalar(),
            1.0,
            |_, x, _, _, o| o[0] = 1e300 * x[0] * x[0],
            |_, _, _, o| o[0] = 0.0,
            |_, _, _, _, o| o[0] = 0.0,
            |_, _, _, _, o| o[0] = 0.0,
        )
        .unwrap();
        let mut ens = SlowFastEnsemble::new(&model, 0.5, &[1e10], &[0.0], 3, 0).unwrap();
        let err = ens.step(&model, 0.1, &CounterNoise::new(0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { particle: 0, .. }));
    }

    #[test]
    fn deterministic_fast_decay() {
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
        let eps = 0.1;
        let grid = TimeGrid::new(0.2, 20, 5).unwrap();
        let traj = simulate_slowfast(&model, eps, &grid, 2, &[3.0], &[1.0], 0, &CounterNoise::new(4)).unwrap();
        for (c, cloud) in traj.y.iter().enumerate() {
            let k = (c * 5) as i32;
            let expected = (1.0 - grid.step / eps).powi(k);
            assert_abs_diff_eq!(cloud.as_slice()[0], expected, epsilon = 1e-14);
            assert!(traj.x[c].as_slice().iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn mirrored_particles_stay_mirrored() {
        // Odd coefficients and a mirrored noise source keep particle 1 = −particle 0.
        struct Mirrored(CounterNoise);
        impl NoiseSource for Mirrored {
            fn seed(&self) -> u64 {
                self.0.seed
            }
            fn fill_normals(&self, role: NoiseRole, replicate: u64, particle: u32, step: u64, out: &mut [f64]) {
                self.0.fill_normals(role, replicate, 0, step, out);
                if particle == 1 {
                    out.iter_mut().for_each(|v| *v = -*v);
                }
            }
        }
        let model = CoefficientSet::new(
            "odd",
            Dims::scalar(),
            2.0,
            |_, x, mu, y, o| o[0] = (x[0] + y[0]).sin() + mu.mean()[0],
            |_, _, _, o| o[0] = 0.4,
            |_, x, _, y, o| o[0] = -y[0] + x[0].sin(),
            |_, _, _, _, o| o[0] = 1.0,
        )
        .unwrap();
        let mut ens = SlowFastEnsemble::new(&model, 0.2, &[0.0], &[0.0], 2, 0).unwrap();
        ens.x = ParticleCloud::from_values(&[0.7, -0.7]).unwrap();
        ens.y = ParticleCloud::from_values(&[-0.2, 0.2]).unwrap();
        for _ in 0..200 {
            ens.step(&model, 0.02, &Mirrored(CounterNoise::new(9))).unwrap();
            let x = ens.x.as_slice();
            let y = ens.y.as_slice();
            assert_abs_diff_eq!(x[0], -x[1], epsilon = 1e-12);
            assert_abs_diff_eq!(y[0], -y[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let model = linear_benchmark(LinearBenchmarkParams::default()).unwrap();
        let grid = TimeGrid::new(0.1, 100, 10).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_slowfast(&model, 0.05, &grid, 1000, &[1.0], &[0.0], 3, &CounterNoise::new(8)).unwrap())
        };
        let (a, b) = (run(1), run(3));
        for (ca, cb) in a.x.iter().zip(&b.x) {
            assert_eq!(ca, cb);
        }
        assert_eq!(a.y.last(), b.y.last());
    }
}
