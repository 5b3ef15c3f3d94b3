//! Subcommand pipelines: read settings, validate everything, run, write.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use slowfast::error::Error as CoreError;
use slowfast::experiments::{
    contraction_ratio, convergence_study, diagnostics_suite, dyadic_grid, epsilon_grid_problems, ergodic_decay_fit,
    DeltaSweepConfig, DiagnosticsConfig, ErgodicityConfig, HolderConfig, StudyConfig,
};
use slowfast::model::{
    convolution_example, linear_benchmark, probe_assumptions, CoefficientSet, ConvolutionPair, LinearBenchmarkParams,
};
use slowfast::noise::CounterNoise;
use slowfast::poisson::{estimate_phi, probe_points, residual_check, PhiConfig, PhiSource};
use slowfast::solvers::{estimate_bbar, simulate_slowfast, BbarSource, FrozenPath, InvariantConfig, TimeGrid};

use crate::config::{join, RawConfig, Reader};
use crate::output;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const OUT_DIR_ENV: &str = "SLOWFAST_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "slowfast-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Converge,
    Diagnostics,
    Ergodicity,
    Poisson,
    Simulate,
    Probe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Converge => "converge",
            Command::Diagnostics => "diagnostics",
            Command::Ergodicity => "ergodicity",
            Command::Poisson => "poisson",
            Command::Simulate => "simulate",
            Command::Probe => "probe",
        }
    }
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(Vec<String>),
    Io(String),
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Simulation(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Simulation(_) => "simulation",
        }
    }

    pub fn messages(&self) -> Vec<String> {
        match self {
            CliError::Config(list) => list.clone(),
            CliError::Usage(m) | CliError::Io(m) | CliError::Simulation(m) => vec![m.clone()],
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Parameter rejections raised during a run count as configuration errors.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(io) => CliError::Io(io.to_string()),
            CoreError::InvalidParameter(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::StepAboveStability { .. }
            | CoreError::BlockNotAligned { .. }
            | CoreError::MisalignedWindow { .. }
            | CoreError::MissingAnalyticBbar(_)
            | CoreError::MissingAnalyticPhi(_)
            | CoreError::MissingBbar
            | CoreError::TooManyParticles { .. } => CliError::Config(vec![e.to_string()]),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

/// Files written and the summary lines printed on success.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<(String, String)>,
}

type Echo = BTreeMap<(String, String), String>;

struct Context<'a> {
    reader: Reader<'a>,
    command: Command,
    seed: u64,
    out_dir: PathBuf,
    model: CoefficientSet,
}

impl<'a> Context<'a> {
    fn new(command: Command, raw: &'a RawConfig, out_flag: Option<PathBuf>) -> Self {
        let reader = Reader::new(raw);
        let seed = reader.value("run", "seed", DEFAULT_SEED);
        reader.ignore("run", "command");
        reader.ignore("run", "version");
        let out_cfg = reader.unechoed("run", "out_dir");
        let out_dir = out_flag
            .or(out_cfg.map(PathBuf::from))
            .or(std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let model = read_model(&reader);
        Self { reader, command, seed, out_dir, model }
    }

    fn point(&self, section: &str, key: &str, dim: usize, default: f64) -> Vec<f64> {
        let v = self.reader.list(section, key, &vec![default; dim]);
        if v.len() != dim {
            self.reader.problem(format!("{section}.{key}: expected {dim} components, got {}", v.len()));
        }
        v
    }

    fn positive(&self, section: &str, key: &str, default: f64) -> f64 {
        let v = self.reader.value(section, key, default);
        if !(v > 0.0 && v.is_finite()) {
            self.reader.problem(format!("{section}.{key} must be positive, got {v}"));
        }
        v
    }

    fn count(&self, section: &str, key: &str, default: usize, min: usize) -> usize {
        let v = self.reader.value(section, key, default);
        if v < min {
            self.reader.problem(format!("{section}.{key} must be at least {min}, got {v}"));
        }
        v
    }

    /// Validates every setting read so far and prepares the output directory.
    fn finish(self, sections: &[&str]) -> Result<(Echo, Runner), CliError> {
        let mut all = vec!["run", "model"];
        all.extend_from_slice(sections);
        let (problems, mut echo) = self.reader.finish(&all);
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        echo.insert(("run".into(), "command".into()), self.command.name().into());
        echo.insert(("run".into(), "version".into()), env!("CARGO_PKG_VERSION").into());
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", self.out_dir.display())))?;
        Ok((echo, Runner { seed: self.seed, out_dir: self.out_dir, model: self.model, noise: CounterNoise::new(self.seed) }))
    }
}

struct Runner {
    seed: u64,
    out_dir: PathBuf,
    model: CoefficientSet,
    noise: CounterNoise,
}

impl Runner {
    fn dir(&self) -> &Path {
        &self.out_dir
    }
}

/// Runs one subcommand against a merged configuration.
pub fn run(command: Command, raw: &RawConfig, out_flag: Option<PathBuf>) -> Result<Outcome, CliError> {
    let ctx = Context::new(command, raw, out_flag);
    match command {
        Command::Converge => converge(ctx),
        Command::Diagnostics => diagnostics(ctx),
        Command::Ergodicity => ergodicity(ctx),
        Command::Poisson => poisson(ctx),
        Command::Simulate => simulate(ctx),
        Command::Probe => probe(ctx),
    }
}

fn read_model(r: &Reader) -> CoefficientSet {
    let name: String = r.value("model", "name", "linear".to_string());
    let built = match name.as_str() {
        "linear" => {
            let d = LinearBenchmarkParams::default();
            let p = LinearBenchmarkParams {
                a1: r.value("model", "a1", d.a1),
                a2: r.value("model", "a2", d.a2),
                a3: r.value("model", "a3", d.a3),
                c1: r.value("model", "c1", d.c1),
                c2: r.value("model", "c2", d.c2),
                kappa: r.value("model", "kappa", d.kappa),
                sigma_x: r.value("model", "sigma_x", d.sigma_x),
                sigma_y: r.value("model", "sigma_y", d.sigma_y),
            };
            linear_benchmark(p)
        }
        "convolution" => {
            let pair: String = r.value("model", "pair", "sine".to_string());
            if pair != "sine" {
                r.problem(format!("model.pair: unknown kernel pair '{pair}' (known: sine)"));
            }
            convolution_example(ConvolutionPair::Sine)
        }
        other => {
            r.problem(format!("model.name: unknown model '{other}' (known: linear, convolution)"));
            linear_benchmark(LinearBenchmarkParams::default())
        }
    };
    built.unwrap_or_else(|e| {
        r.problem(format!("model: {e}"));
        linear_benchmark(LinearBenchmarkParams::default()).expect("default benchmark is valid")
    })
}

fn epsilons(ctx: &Context, section: &str, default: &[f64]) -> Vec<f64> {
    let grid = ctx.reader.list(section, "epsilons", default);
    for p in epsilon_grid_problems(&grid) {
        ctx.reader.problem(format!("{section}.epsilons: {p}"));
    }
    grid
}

fn study_config(ctx: &Context, section: &str, base: StudyConfig) -> StudyConfig {
    let (n, m) = (ctx.model.dims.n, ctx.model.dims.m);
    let r = &ctx.reader;
    StudyConfig {
        horizon: ctx.positive(section, "horizon", base.horizon),
        n_particles: ctx.count(section, "n_particles", base.n_particles, 1),
        n_reps: ctx.count(section, "n_reps", base.n_reps, 2),
        seed: ctx.seed,
        h_target: ctx.positive(section, "h_target", base.h_target),
        checkpoints: ctx.count(section, "checkpoints", base.checkpoints, 1),
        x0: ctx.point(section, "x0", n, base.x0.first().copied().unwrap_or(1.0)),
        y0: ctx.point(section, "y0", m, base.y0.first().copied().unwrap_or(1.0)),
        source: base.source,
        averaged_stride: ctx.count(section, "averaged_stride", base.averaged_stride, 1),
        bootstrap_samples: r.value(section, "bootstrap", base.bootstrap_samples),
    }
}

fn converge(ctx: Context) -> Result<Outcome, CliError> {
    let grid = epsilons(&ctx, "converge", &dyadic_grid(4..=9));
    let mut cfg = study_config(&ctx, "converge", StudyConfig::default());
    let beta = ctx.model.beta;
    let bbar: String = ctx.reader.value("converge", "bbar", "analytic".to_string());
    cfg.source = match bbar.as_str() {
        "analytic" => {
            if !ctx.model.has_analytic_bbar() {
                ctx.reader.problem(format!("converge.bbar: model '{}' has no analytic averaged drift; use ergodic", ctx.model.id));
            }
            BbarSource::Analytic
        }
        "ergodic" => {
            let d = InvariantConfig::for_beta(beta, 200);
            let n_samples = ctx.count("converge", "bbar_samples", d.n_samples, 1);
            let h_frozen = ctx.positive("converge", "bbar_h", d.h_frozen);
            let thin = ctx.count("converge", "bbar_thin", d.thin, 1);
            let burn_in = ctx.positive("converge", "bbar_burn_in", d.burn_in);
            if burn_in < InvariantConfig::min_burn_in(beta) * (1.0 - 1e-12) {
                ctx.reader.problem(format!(
                    "converge.bbar_burn_in must be at least {}, got {burn_in}",
                    InvariantConfig::min_burn_in(beta)
                ));
            }
            BbarSource::ErgodicEstimate(InvariantConfig { h_frozen, burn_in, n_samples, thin, y0: None })
        }
        other => {
            ctx.reader.problem(format!("converge.bbar: expected analytic or ergodic, got '{other}'"));
            BbarSource::Analytic
        }
    };
    if cfg.problems().is_empty() && epsilon_grid_problems(&grid).is_empty() {
        for &eps in &grid {
            if let Err(e) = cfg.grid(eps, beta) {
                ctx.reader.problem(format!("converge: {e}"));
            }
        }
    }
    let (echo, run) = ctx.finish(&["converge"])?;

    let report = convergence_study(&run.model, &grid, &cfg, &run.noise)?;
    let csv = output::convergence(run.dir(), &report, run.seed)?;
    let (spread_x, spread_y) = report.fourth_moment_spread();
    let mut results = vec![
        kv("slope", report.fit.slope),
        kv("intercept", report.fit.intercept),
        kv("slope_ci_low", report.slope_ci.0),
        kv("slope_ci_high", report.slope_ci.1),
        kv("weighted_fit", report.fit.weighted),
        kv("strictly_decreasing_3se", report.strictly_decreasing(3.0)),
        kv("two_thirds_constant", report.two_thirds_constant()),
        kv("within_two_thirds_bound", report.within_two_thirds_bound()),
        kv("moment4_spread_x", spread_x),
        kv("moment4_spread_y", spread_y),
    ];
    for p in &report.points {
        results.push(kv(&format!("argmax_time_{:?}", p.epsilon), p.argmax_time));
    }
    let meta = output::metadata(run.dir(), &echo, &results)?;
    Ok(Outcome { files: vec![csv, meta], summary: results })
}

fn ergodicity_config(ctx: &Context, section: &str) -> ErgodicityConfig {
    let (n, m) = (ctx.model.dims.n, ctx.model.dims.m);
    let d = ErgodicityConfig::default();
    let r = &ctx.reader;
    let mu = r.rows(section, "mu", &d.mu);
    if mu.iter().any(|row| row.len() != n) {
        r.problem(format!("{section}.mu: every atom needs {n} components"));
    }
    ErgodicityConfig {
        t: r.value(section, "t", d.t),
        x: ctx.point(section, "x", n, d.x[0]),
        mu,
        y0: ctx.point(section, "y0", m, d.y0[0]),
        y1: ctx.point(section, "y1", m, d.y1[0]),
        horizon_over_beta: ctx.positive(section, "horizon_over_beta", d.horizon_over_beta),
        h_frozen: ctx.positive(section, "h_frozen", d.h_frozen),
        n_traj: ctx.count(section, "n_traj", d.n_traj, 2),
        antithetic: r.value(section, "antithetic", d.antithetic),
        record_every: ctx.count(section, "record_every", d.record_every, 1),
        bbar_samples: ctx.count(section, "bbar_samples", d.bbar_samples, 1),
    }
}

fn diagnostics(ctx: Context) -> Result<Outcome, CliError> {
    let d = DiagnosticsConfig::default();
    let (n, m) = (ctx.model.dims.n, ctx.model.dims.m);
    let s = "diagnostics";
    let epsilon_grid = epsilons(&ctx, s, &d.epsilon_grid);
    let moments = StudyConfig {
        horizon: ctx.positive(s, "moment_horizon", d.moments.horizon),
        n_particles: ctx.count(s, "moment_particles", d.moments.n_particles, 1),
        n_reps: ctx.count(s, "moment_reps", d.moments.n_reps, 2),
        h_target: ctx.positive(s, "moment_h_target", d.moments.h_target),
        checkpoints: ctx.count(s, "moment_checkpoints", d.moments.checkpoints, 1),
        x0: ctx.point(s, "moment_x0", n, d.moments.x0[0]),
        y0: ctx.point(s, "moment_y0", m, d.moments.y0[0]),
        seed: ctx.seed,
        ..d.moments
    };
    let holder = HolderConfig {
        epsilon: ctx.positive(s, "holder_epsilon", d.holder.epsilon),
        horizon: ctx.positive(s, "holder_horizon", d.holder.horizon),
        n_particles: ctx.count(s, "holder_particles", d.holder.n_particles, 1),
        n_reps: ctx.count(s, "holder_reps", d.holder.n_reps, 1),
        lags: ctx.reader.list(s, "holder_lags", &d.holder.lags),
        x0: ctx.point(s, "holder_x0", n, d.holder.x0[0]),
        y0: ctx.point(s, "holder_y0", m, d.holder.y0[0]),
    };
    let delta = DeltaSweepConfig {
        epsilon: ctx.positive(s, "delta_epsilon", d.delta.epsilon),
        horizon: ctx.positive(s, "delta_horizon", d.delta.horizon),
        n_particles: ctx.count(s, "delta_particles", d.delta.n_particles, 1),
        n_reps: ctx.count(s, "delta_reps", d.delta.n_reps, 1),
        deltas: ctx.reader.list(s, "deltas", &d.delta.deltas),
        x0: ctx.point(s, "delta_x0", n, d.delta.x0[0]),
        y0: ctx.point(s, "delta_y0", m, d.delta.y0[0]),
    };
    let ergodicity = ergodicity_config(&ctx, "ergodicity");
    let cfg = DiagnosticsConfig { epsilon_grid, moments, holder, delta, ergodicity };
    let (echo, run) = ctx.finish(&["diagnostics", "ergodicity"])?;

    let report = diagnostics_suite(&run.model, &cfg, &run.noise)?;
    let files = vec![
        output::diagnostics(run.dir(), &report, run.seed)?,
        output::decay(run.dir(), &report.decay, run.seed)?,
    ];
    let (lo, hi) = report
        .moments
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), b| (lo.min(b.max_m4_x), hi.max(b.max_m4_x)));
    let results = vec![
        kv("holder_slope", report.holder.slope),
        kv("delta_fast_slope", report.delta.fast.slope),
        kv("delta_slow_slope", report.delta.slow.slope),
        kv("decay_rate", report.decay.rate),
        kv("decay_factor", report.decay.decay_factor),
        kv("contraction_ratio", report.contraction_ratio),
        kv("moment4_spread_x", hi / lo),
    ];
    let mut files = files;
    files.push(output::metadata(run.dir(), &echo, &results)?);
    Ok(Outcome { files, summary: results })
}

fn ergodicity(ctx: Context) -> Result<Outcome, CliError> {
    let cfg = ergodicity_config(&ctx, "ergodicity");
    let (echo, run) = ctx.finish(&["ergodicity"])?;
    let fit = ergodic_decay_fit(&run.model, &cfg, &run.noise)?;
    let ratio = contraction_ratio(&run.model, &cfg, &run.noise)?;
    let csv = output::decay(run.dir(), &fit, run.seed)?;
    let results = vec![
        kv("beta", fit.beta),
        kv("decay_rate", fit.rate),
        kv("decay_points_used", fit.points_used),
        kv("decay_factor", fit.decay_factor),
        kv("contraction_ratio", ratio),
    ];
    let meta = output::metadata(run.dir(), &echo, &results)?;
    Ok(Outcome { files: vec![csv, meta], summary: results })
}

fn poisson(ctx: Context) -> Result<Outcome, CliError> {
    let s = "poisson";
    let beta = ctx.model.beta;
    if ctx.model.dims.n != 1 || ctx.model.dims.m != 1 {
        ctx.reader.problem("poisson: probe points are scalar; the model must have n = m = 1");
    }
    let tolerance = ctx.positive(s, "tolerance", 1e-4);
    let d = PhiConfig::for_beta(beta, tolerance.max(f64::MIN_POSITIVE));
    let n_points = ctx.count(s, "n_points", 8, 1);
    let s_max_text: String = ctx.reader.value(s, "s_max", "auto".to_string());
    let fixed_s_max = match s_max_text.as_str() {
        "auto" => None,
        text => match text.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Some(v),
            _ => {
                ctx.reader.problem(format!("poisson.s_max: expected auto or a positive number, got '{text}'"));
                None
            }
        },
    };
    let cfg = PhiConfig {
        s_max: d.s_max,
        h_frozen: ctx.positive(s, "h_frozen", d.h_frozen),
        n_traj: ctx.count(s, "n_traj", d.n_traj, 2),
        antithetic: ctx.reader.value(s, "antithetic", d.antithetic),
        tolerance,
        stream_id: 0,
    };
    let fd_step = ctx.positive(s, "fd_step", 1e-4);
    let bbar_cfg = if ctx.model.has_analytic_bbar() {
        None
    } else {
        Some(InvariantConfig::for_beta(beta, ctx.count(s, "bbar_samples", 4000, 1)))
    };
    let (echo, run) = ctx.finish(&[s])?;

    let points = probe_points(run.seed, n_points);
    let mut estimates = Vec::with_capacity(points.len());
    let mut max_z = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        let mu = p.mu.view();
        let bbar = match &bbar_cfg {
            None => None,
            Some(ic) => {
                let path = FrozenPath::new(u64::MAX - i as u64, 0);
                Some(estimate_bbar(&run.model, p.t, &p.x, &mu, ic, &run.noise, path)?.value)
            }
        };
        let s_max = fixed_s_max.unwrap_or_else(|| auto_horizon(&run.model, p, bbar.as_deref(), &mu, tolerance));
        let cfg = PhiConfig { stream_id: i as u64, s_max, ..cfg.clone() };
        let est = estimate_phi(&run.model, p.t, &p.x, &mu, &p.y, bbar.as_deref(), &cfg, &run.noise)?;
        let mut exact = vec![0.0; run.model.dims.n];
        if run.model.analytic_phi(p.t, &p.x, &mu, &p.y, &mut exact) {
            for ((v, se), e) in est.value.iter().zip(&est.standard_error).zip(&exact) {
                max_z = max_z.max((v - e).abs() / se);
            }
        }
        estimates.push(est);
    }
    let csv = output::poisson(run.dir(), &estimates, run.seed)?;
    let mut results = vec![
        kv("max_s_max", estimates.iter().map(|e| e.s_max).fold(0.0, f64::max)),
        kv("n_traj", cfg.n_traj),
        kv("tail_warning", estimates.iter().any(|e| e.tail_warning)),
        kv("max_growth_ratio", estimates.iter().map(|e| e.growth_ratio).fold(0.0, f64::max)),
    ];
    if run.model.has_analytic_phi() {
        results.push(kv("max_abs_z_vs_closed_form", max_z));
    }
    if run.model.has_analytic_phi() && run.model.has_analytic_bbar() {
        results.push(kv("residual", residual_check(&run.model, &points, fd_step, PhiSource::Analytic)?));
    }
    let meta = output::metadata(run.dir(), &echo, &results)?;
    Ok(Outcome { files: vec![csv, meta], summary: results })
}

/// Smallest horizon whose tail bound C·e^{−βs/2}·2/β meets the tolerance at
/// this point, and never below the (2/β)·ln(1/tol) floor.
fn auto_horizon(
    model: &CoefficientSet,
    p: &slowfast::poisson::ResidualPoint,
    bbar: Option<&[f64]>,
    mu: &dyn slowfast::measure::MeasureView,
    tolerance: f64,
) -> f64 {
    let n = model.dims.n;
    let mut closed = vec![0.0; n];
    let bbar = match bbar {
        Some(b) => b.to_vec(),
        None if model.analytic_bbar(p.t, &p.x, mu, &mut closed) => closed,
        None => return PhiConfig::min_horizon(model.beta, tolerance),
    };
    let mut b = vec![0.0; n];
    model.slow_drift(p.t, &p.x, mu, &p.y, &mut b);
    let c = b.iter().zip(&bbar).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let needed = 2.0 / model.beta * (2.0 * c / (model.beta * tolerance)).ln() * (1.0 + 1e-9);
    needed.max(PhiConfig::min_horizon(model.beta, tolerance))
}

fn simulate(ctx: Context) -> Result<Outcome, CliError> {
    let s = "simulate";
    let (n, m) = (ctx.model.dims.n, ctx.model.dims.m);
    let epsilon = ctx.reader.value(s, "epsilon", 0.5f64.powi(6));
    if !(epsilon > 0.0 && epsilon < 1.0) {
        ctx.reader.problem(format!("simulate.epsilon must lie in (0, 1), got {epsilon}"));
    }
    let horizon = ctx.positive(s, "horizon", 1.0);
    let n_particles = ctx.count(s, "n_particles", 200, 1);
    let n_reps = ctx.count(s, "n_reps", 1, 1);
    let h_target = ctx.positive(s, "h_target", 0.01);
    let checkpoints = ctx.count(s, "checkpoints", 16, 1);
    let x0 = ctx.point(s, "x0", n, 1.0);
    let y0 = ctx.point(s, "y0", m, 1.0);
    let beta = ctx.model.beta;
    let (echo, run) = ctx.finish(&[s])?;

    let grid = TimeGrid::for_epsilon(horizon, epsilon, beta, h_target, checkpoints)?;
    let runs = (0..n_reps as u64)
        .map(|rep| simulate_slowfast(&run.model, epsilon, &grid, n_particles, &x0, &y0, rep, &run.noise))
        .collect::<Result<Vec<_>, _>>()?;
    let files = vec![output::clouds(run.dir(), &runs, run.seed)?, output::moments(run.dir(), &runs, run.seed)?];
    let last = runs[0].moments.last().expect("at least one checkpoint");
    let (m4x, m4y) = runs.iter().map(|r| r.max_fourth_moments()).fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let final_mean: Vec<f64> = runs.last().map(|r| r.x.last().expect("checkpoint").mean()).unwrap_or_default();
    let results = vec![
        kv("step", grid.step),
        kv("n_steps", grid.n_steps),
        kv("final_m2_x_first_replicate", last.m2_x),
        ("final_mean_x_last_replicate".to_string(), join(&final_mean)),
        kv("max_m4_x", m4x),
        kv("max_m4_y", m4y),
    ];
    let mut files = files;
    files.push(output::metadata(run.dir(), &echo, &results)?);
    Ok(Outcome { files, summary: results })
}

fn probe(ctx: Context) -> Result<Outcome, CliError> {
    let n_probes = ctx.count("probe", "n_probes", 2000, 1);
    let (echo, run) = ctx.finish(&["probe"])?;
    let report = probe_assumptions(&run.model, n_probes, run.seed)?;
    let mut rows = vec![
        kv("n_probes", report.n_probes),
        kv("beta_declared", run.model.beta),
        kv("beta_empirical", report.beta_empirical),
        kv("supports_declared_beta", report.supports_declared_beta(run.model.beta)),
        kv("growth_constant", report.growth_constant),
        kv("lipschitz_slow", report.lipschitz_slow),
        kv("lipschitz_fast", report.lipschitz_fast),
        kv("lipschitz_constant", report.lipschitz_constant()),
        kv("violation", report.violation.is_some()),
    ];
    if let Some(v) = &report.violation {
        rows.push(kv("violation_form", v.form));
    }
    let csv = output::table(run.dir(), "probe.csv", &rows, run.seed)?;
    let meta = output::metadata(run.dir(), &echo, &rows)?;
    Ok(Outcome { files: vec![csv, meta], summary: rows })
}

/// Numbers and flags in the same form as the CSV columns.
fn kv(key: &str, value: impl std::fmt::Debug) -> (String, String) {
    (key.to_string(), format!("{value:?}"))
}
