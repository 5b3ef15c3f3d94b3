//! Coefficients of a slow-fast McKean-Vlasov system
//!
//! ```text
//! dX = b(t, X, L_X, Y) dt + σ(t, X, L_X) dW¹
//! dY = ε⁻¹ f(t, X, L_X, Y) dt + ε^{-1/2} g(t, X, L_X, Y) dW²
//! ```
//!
//! and the two shipped instances: a linear benchmark with closed-form averaged
//! drift and corrector, and a convolution-type model whose coefficients
//! integrate a smooth kernel against the law of the slow component.

use std::fmt;
use std::sync::Arc;

use crate::error::{ensure, Result};
use crate::measure::{norm_sq, w2_exact_small, MeasureView, ParticleCloud};
use crate::noise::{NoiseKey, NoiseRole, NoiseStream};

/// `(t, x, μ, y, out)`; used for b (out ∈ R^n), f (out ∈ R^m), g (out ∈ R^{m×d2})
/// and the corrector Φ (out ∈ R^n).
pub type StateFn = dyn Fn(f64, &[f64], &dyn MeasureView, &[f64], &mut [f64]) + Send + Sync;
/// `(t, x, μ, out)`; used for σ (out ∈ R^{n×d1}) and b̄ (out ∈ R^n).
pub type SlowFn = dyn Fn(f64, &[f64], &dyn MeasureView, &mut [f64]) + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// slow state
    pub n: usize,
    /// fast state
    pub m: usize,
    /// slow noise
    pub d1: usize,
    /// fast noise
    pub d2: usize,
}

impl Dims {
    pub fn scalar() -> Self {
        Self { n: 1, m: 1, d1: 1, d2: 1 }
    }
}

/// A model: the four coefficients, their dimensions, the dissipativity
/// constant β of the fast drift, and optional closed forms for b̄ and Φ.
/// Matrices are row-major.
#[derive(Clone)]
pub struct CoefficientSet {
    pub id: String,
    pub dims: Dims,
    pub beta: f64,
    b: Arc<StateFn>,
    sigma: Arc<SlowFn>,
    f: Arc<StateFn>,
    g: Arc<StateFn>,
    analytic_bbar: Option<Arc<SlowFn>>,
    analytic_phi: Option<Arc<StateFn>>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("id", &self.id)
            .field("dims", &self.dims)
            .field("beta", &self.beta)
            .field("analytic_bbar", &self.analytic_bbar.is_some())
            .field("analytic_phi", &self.analytic_phi.is_some())
            .finish()
    }
}

impl CoefficientSet {
    pub fn new(
        id: impl Into<String>,
        dims: Dims,
        beta: f64,
        b: impl Fn(f64, &[f64], &dyn MeasureView, &[f64], &mut [f64]) + Send + Sync + 'static,
        sigma: impl Fn(f64, &[f64], &dyn MeasureView, &mut [f64]) + Send + Sync + 'static,
        f: impl Fn(f64, &[f64], &dyn MeasureView, &[f64], &mut [f64]) + Send + Sync + 'static,
        g: impl Fn(f64, &[f64], &dyn MeasureView, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        ensure(dims.n > 0 && dims.m > 0 && dims.d1 > 0 && dims.d2 > 0, || {
            format!("all dimensions must be positive, got {dims:?}")
        })?;
        ensure(beta > 0.0 && beta.is_finite(), || format!("beta must be positive, got {beta}"))?;
        Ok(Self {
            id: id.into(),
            dims,
            beta,
            b: Arc::new(b),
            sigma: Arc::new(sigma),
            f: Arc::new(f),
            g: Arc::new(g),
            analytic_bbar: None,
            analytic_phi: None,
        })
    }

    pub fn with_analytic_bbar(
        mut self,
        bbar: impl Fn(f64, &[f64], &dyn MeasureView, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.analytic_bbar = Some(Arc::new(bbar));
        self
    }

    pub fn with_analytic_phi(
        mut self,
        phi: impl Fn(f64, &[f64], &dyn MeasureView, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.analytic_phi = Some(Arc::new(phi));
        self
    }

    #[inline]
    pub fn slow_drift(&self, t: f64, x: &[f64], mu: &dyn MeasureView, y: &[f64], out: &mut [f64]) {
        (self.b)(t, x, mu, y, out)
    }

    #[inline]
    pub fn slow_diffusion(&self, t: f64, x: &[f64], mu: &dyn MeasureView, out: &mut [f64]) {
        (self.sigma)(t, x, mu, out)
    }

    #[inline]
    pub fn fast_drift(&self, t: f64, x: &[f64], mu: &dyn MeasureView, y: &[f64], out: &mut [f64]) {
        (self.f)(t, x, mu, y, out)
    }

    #[inline]
    pub fn fast_diffusion(&self, t: f64, x: &[f64], mu: &dyn MeasureView, y: &[f64], out: &mut [f64]) {
        (self.g)(t, x, mu, y, out)
    }

    pub fn has_analytic_bbar(&self) -> bool {
        self.analytic_bbar.is_some()
    }

    pub fn has_analytic_phi(&self) -> bool {
        self.analytic_phi.is_some()
    }

    /// Closed-form b̄, if the model ships one. Returns `false` otherwise.
    pub fn analytic_bbar(&self, t: f64, x: &[f64], mu: &dyn MeasureView, out: &mut [f64]) -> bool {
        match &self.analytic_bbar {
            Some(bbar) => {
                bbar(t, x, mu, out);
                true
            }
            None => false,
        }
    }

    /// Closed-form Φ, if the model ships one. Returns `false` otherwise.
    pub fn analytic_phi(&self, t: f64, x: &[f64], mu: &dyn MeasureView, y: &[f64], out: &mut [f64]) -> bool {
        match &self.analytic_phi {
            Some(phi) => {
                phi(t, x, mu, y, out);
                true
            }
            None => false,
        }
    }
}

/// Parameters of the scalar linear benchmark
///
/// ```text
/// b = a1·x + a2·mean(μ) + a3·y        σ = sigma_x
/// f = −kappa·(y − c1·x − c2·mean(μ))  g = sigma_y
/// ```
///
/// The frozen equation is an OU process with invariant law
/// N(c1·x + c2·mean(μ), sigma_y²/(2·kappa)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBenchmarkParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl Default for LinearBenchmarkParams {
    fn default() -> Self {
        Self { a1: -1.0, a2: 0.5, a3: 1.0, c1: 0.5, c2: 0.25, kappa: 2.0, sigma_x: 0.3, sigma_y: 1.0 }
    }
}

pub fn linear_benchmark(p: LinearBenchmarkParams) -> Result<CoefficientSet> {
    ensure(p.kappa > 0.0, || format!("kappa must be positive, got {}", p.kappa))?;
    ensure(p.sigma_y > 0.0, || format!("sigma_y must be positive, got {}", p.sigma_y))?;
    ensure(p.sigma_x >= 0.0, || format!("sigma_x must be non-negative, got {}", p.sigma_x))?;
    let all = [p.a1, p.a2, p.a3, p.c1, p.c2, p.kappa, p.sigma_x, p.sigma_y];
    ensure(all.iter().all(|v| v.is_finite()), || "linear benchmark parameters must be finite".into())?;

    let LinearBenchmarkParams { a1, a2, a3, c1, c2, kappa, sigma_x, sigma_y } = p;
    let model = CoefficientSet::new(
        "linear",
        Dims::scalar(),
        2.0 * kappa,
        move |_, x, mu, y, out| out[0] = a1 * x[0] + a2 * mu.mean()[0] + a3 * y[0],
        move |_, _, _, out| out[0] = sigma_x,
        move |_, x, mu, y, out| out[0] = -kappa * (y[0] - c1 * x[0] - c2 * mu.mean()[0]),
        move |_, _, _, _, out| out[0] = sigma_y,
    )?
    .with_analytic_bbar(move |_, x, mu, out| out[0] = (a1 + a3 * c1) * x[0] + (a2 + a3 * c2) * mu.mean()[0])
    .with_analytic_phi(move |_, x, mu, y, out| out[0] = (a3 / kappa) * (y[0] - c1 * x[0] - c2 * mu.mean()[0]));
    Ok(model)
}

/// Kernel pairs (b₀, f₀) for [`convolution_example`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionPair {
    /// b₀(x, y) = sin(x + y), f₀(x, y) = −y + sin(x), σ = g = 1.
    #[default]
    Sine,
}

/// Scalar model with b(x, μ, y) = ∫ b₀(x + z, y) μ(dz) and
/// f(x, μ, y) = ∫ f₀(x + z, y) μ(dz). No closed-form b̄.
pub fn convolution_example(pair: ConvolutionPair) -> Result<CoefficientSet> {
    match pair {
        ConvolutionPair::Sine => CoefficientSet::new(
            "convolution",
            Dims::scalar(),
            2.0,
            |_, x, mu, y, out| {
                let shift = x[0] + y[0];
                mu.integrate(&mut |z, o| o[0] = (shift + z[0]).sin(), out);
            },
            |_, _, _, out| out[0] = 1.0,
            |_, x, mu, y, out| {
                mu.integrate(&mut |z, o| o[0] = (x[0] + z[0]).sin(), out);
                out[0] -= y[0];
            },
            |_, _, _, _, out| out[0] = 1.0,
        ),
    }
}

/// A probe tuple on which the dissipativity inequality failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeViolation {
    pub t: f64,
    pub x: Vec<f64>,
    pub mu_atoms: Vec<Vec<f64>>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// 2⟨Δf, Δy⟩ + 3‖Δg‖²_F, which should be ≤ −β|Δy|².
    pub form: f64,
}

impl fmt::Display for ProbeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} x={:?} mu={:?} y1={:?} y2={:?}: 2<df,dy>+3|dg|^2 = {}",
            self.t, self.x, self.mu_atoms, self.y1, self.y2, self.form
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub n_probes: usize,
    /// Smallest observed −(2⟨Δf,Δy⟩ + 3‖Δg‖²)/|Δy|².
    pub beta_empirical: f64,
    /// Largest observed (|b| + ‖σ‖)/(1 + |x| + |y| + μ(|·|²)^{1/2}).
    pub growth_constant: f64,
    /// Largest finite-difference ratio for (b, σ).
    pub lipschitz_slow: f64,
    /// Largest finite-difference ratio for (f, g).
    pub lipschitz_fast: f64,
    /// First probe on which the dissipativity sign failed.
    pub violation: Option<ProbeViolation>,
}

impl ProbeReport {
    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz_slow.max(self.lipschitz_fast)
    }

    /// Whether the empirical constant supports the model's declared β.
    pub fn supports_declared_beta(&self, declared: f64) -> bool {
        self.violation.is_none() && self.beta_empirical >= declared * (1.0 - 1e-9)
    }
}

struct ProbeDraws {
    stream: NoiseStream,
    probe: u32,
    slot: u32,
}

impl ProbeDraws {
    fn vector(&mut self, len: usize, scale: f64) -> Vec<f64> {
        let slot = self.slot;
        self.slot += 1;
        (0..len)
            .map(|c| scale * self.stream.standard_normal(NoiseKey::new(0x5052_4F42, self.probe, slot * 64 + c as u32, 0)))
            .collect()
    }

    fn uniform(&mut self) -> f64 {
        let slot = self.slot;
        self.slot += 1;
        self.stream.uniform(NoiseKey::new(0x5052_4F42, self.probe, slot * 64, 0))
    }
}

fn frobenius_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Samples `n_probes` tuples and measures the dissipativity, growth and
/// Lipschitz constants of `model` on them.
///
/// Probe distribution: t ~ U[0, 1]; x, y₁, y₂ ~ N(0, I); μ is the empirical
/// measure of two N(0, I) atoms. Lipschitz ratios compare each tuple with a
/// perturbation of every argument (atoms of μ shifted independently).
pub fn probe_assumptions(model: &CoefficientSet, n_probes: usize, seed: u64) -> Result<ProbeReport> {
    ensure(n_probes >= 1, || "n_probes must be at least 1".into())?;
    let Dims { n, m, d1, d2 } = model.dims;
    let stream = NoiseStream::new(seed, NoiseRole::Probe);

    let mut report = ProbeReport {
        n_probes,
        beta_empirical: f64::INFINITY,
        growth_constant: 0.0,
        lipschitz_slow: 0.0,
        lipschitz_fast: 0.0,
        violation: None,
    };
    let (mut f1, mut f2) = (vec![0.0; m], vec![0.0; m]);
    let (mut g1, mut g2) = (vec![0.0; m * d2], vec![0.0; m * d2]);
    let (mut b1, mut b2) = (vec![0.0; n], vec![0.0; n]);
    let (mut s1, mut s2) = (vec![0.0; n * d1], vec![0.0; n * d1]);

    for probe in 0..n_probes {
        let mut draw = ProbeDraws { stream, probe: probe as u32, slot: 0 };
        let t = draw.uniform();
        let x = draw.vector(n, 1.0);
        let y1 = draw.vector(m, 1.0);
        let y2 = draw.vector(m, 1.0);
        let atoms = vec![draw.vector(n, 1.0), draw.vector(n, 1.0)];
        let cloud = ParticleCloud::from_rows(&atoms)?;
        let mu = cloud.view();

        // Dissipativity.
        model.fast_drift(t, &x, &mu, &y1, &mut f1);
        model.fast_drift(t, &x, &mu, &y2, &mut f2);
        model.fast_diffusion(t, &x, &mu, &y1, &mut g1);
        model.fast_diffusion(t, &x, &mu, &y2, &mut g2);
        let dy: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
        let inner: f64 = f1.iter().zip(&f2).zip(&dy).map(|((a, b), d)| (a - b) * d).sum();
        let form = 2.0 * inner + 3.0 * frobenius_distance(&g1, &g2).powi(2);
        let dy2 = norm_sq(&dy);
        if dy2 > 0.0 {
            report.beta_empirical = report.beta_empirical.min(-form / dy2);
        }
        if form >= 0.0 && dy2 > 0.0 && report.violation.is_none() {
            report.violation =
                Some(ProbeViolation { t, x: x.clone(), mu_atoms: atoms.clone(), y1: y1.clone(), y2: y2.clone(), form });
        }

        // Linear growth of the slow coefficients.
        model.slow_drift(t, &x, &mu, &y1, &mut b1);
        model.slow_diffusion(t, &x, &mu, &mut s1);
        let size = norm_sq(&b1).sqrt() + norm_sq(&s1).sqrt();
        let scale = 1.0 + norm_sq(&x).sqrt() + norm_sq(&y1).sqrt() + mu.second_moment().sqrt();
        report.growth_constant = report.growth_constant.max(size / scale);

        // Finite-difference Lipschitz ratios against a perturbed tuple.
        let t_p = t + 0.01 * draw.uniform();
        let x_p: Vec<f64> = x.iter().zip(draw.vector(n, 0.1)).map(|(a, d)| a + d).collect();
        let y_p: Vec<f64> = y1.iter().zip(draw.vector(m, 0.1)).map(|(a, d)| a + d).collect();
        let atoms_p: Vec<Vec<f64>> = atoms
            .iter()
            .map(|a| a.iter().zip(draw.vector(n, 0.1)).map(|(p, d)| p + d).collect())
            .collect();
        let cloud_p = ParticleCloud::from_rows(&atoms_p)?;
        let mu_p = cloud_p.view();
        let dist = (t_p - t).abs()
            + frobenius_distance(&x, &x_p)
            + frobenius_distance(&y1, &y_p)
            + w2_exact_small(&cloud, &cloud_p)?;
        if dist > 0.0 {
            model.slow_drift(t_p, &x_p, &mu_p, &y_p, &mut b2);
            model.slow_diffusion(t_p, &x_p, &mu_p, &mut s2);
            let slow = frobenius_distance(&b1, &b2) + frobenius_distance(&s1, &s2);
            model.fast_drift(t_p, &x_p, &mu_p, &y_p, &mut f2);
            model.fast_diffusion(t_p, &x_p, &mu_p, &y_p, &mut g2);
            let fast = frobenius_distance(&f1, &f2) + frobenius_distance(&g1, &g2);
            report.lipschitz_slow = report.lipschitz_slow.max(slow / dist);
            report.lipschitz_fast = report.lipschitz_fast.max(fast / dist);
        }
    }
    Ok(report)
}
