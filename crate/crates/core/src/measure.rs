//! Equal-weight empirical measures and Wasserstein-2 distances between them.

use std::io::Write;

use crate::error::{Error, Result};
use crate::noise::{NoiseKey, NoiseRole, NoiseStream};

/// Largest cloud accepted by [`w2_exact_small`].
pub const EXACT_ASSIGNMENT_MAX: usize = 12;

/// Read-only summary of a probability measure on R^d.
pub trait MeasureView: Sync {
    fn dim(&self) -> usize;
    fn mean(&self) -> &[f64];
    /// ∫|z|² μ(dz)
    fn second_moment(&self) -> f64;
    /// Writes ∫ test(z) μ(dz) into `out`. `test` must fill its whole output slice.
    fn integrate(&self, test: &mut dyn FnMut(&[f64], &mut [f64]), out: &mut [f64]);
}

/// N points in R^d with weights 1/N, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    points: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("cloud dimension must be at least 1".into()));
        }
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "cloud needs a positive multiple of {dim} coordinates, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { particle: i / dim, t: f64::NAN });
        }
        Ok(Self { dim, points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Self::new(dim, rows.concat())
    }

    /// Scalar cloud.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    /// `n` copies of `point`.
    pub fn broadcast(point: &[f64], n: usize) -> Result<Self> {
        Self::new(point.len(), point.repeat(n))
    }

    /// Point mass at `point`.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::broadcast(point, 1)
    }

    // Crate-internal constructor for hot loops where finiteness has already been checked.
    pub(crate) fn from_parts_unchecked(dim: usize, points: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && !points.is_empty() && points.len().is_multiple_of(dim));
        Self { dim, points }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// (1/N) Σ |row|^p for even p expressed through |row|².
    fn radial_moment(&self, half_power: i32) -> f64 {
        let total: f64 = self.rows().map(|r| norm_sq(r).powi(half_power)).sum();
        total / self.len() as f64
    }

    pub fn second_moment(&self) -> f64 {
        self.radial_moment(1)
    }

    pub fn fourth_moment(&self) -> f64 {
        self.radial_moment(2)
    }

    /// Cloud shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        let points = self
            .points
            .chunks_exact(self.dim)
            .flat_map(|row| row.iter().zip(v).map(|(a, b)| a + b))
            .collect();
        Self::new(self.dim, points)
    }

    /// Measure view with cached mean and second moment.
    pub fn view(&self) -> EmpiricalMeasure<'_> {
        EmpiricalMeasure { cloud: self, mean: self.mean(), second_moment: self.second_moment() }
    }

    /// Mean over rows of |self_i - other_i|² (the identity coupling cost).
    pub fn mean_squared_deviation(&self, other: &Self) -> Result<f64> {
        check_same_shape(self, other)?;
        let total: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(total / self.len() as f64)
    }

    /// One row per particle: `particle,c0,c1,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "particle")?;
        for c in 0..self.dim {
            write!(out, ",c{c}")?;
        }
        writeln!(out)?;
        for (i, row) in self.rows().enumerate() {
            write!(out, "{i}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Borrowed cloud with cached summaries; this is what coefficients see.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure<'a> {
    cloud: &'a ParticleCloud,
    mean: Vec<f64>,
    second_moment: f64,
}

impl EmpiricalMeasure<'_> {
    pub fn cloud(&self) -> &ParticleCloud {
        self.cloud
    }
}

impl MeasureView for EmpiricalMeasure<'_> {
    fn dim(&self) -> usize {
        self.cloud.dim
    }

    fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn second_moment(&self) -> f64 {
        self.second_moment
    }

    fn integrate(&self, test: &mut dyn FnMut(&[f64], &mut [f64]), out: &mut [f64]) {
        let mut scratch = vec![0.0; out.len()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for row in self.cloud.rows() {
            test(row, &mut scratch);
            for (o, s) in out.iter_mut().zip(&scratch) {
                *o += s;
            }
        }
        let n = self.cloud.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_same_shape(a: &ParticleCloud, b: &ParticleCloud) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

fn w2_sorted(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let cost: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    (cost / a.len() as f64).sqrt()
}

/// Exact W₂ between equal-size scalar clouds via the monotone coupling.
pub fn w2_1d(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: a.dim });
    }
    Ok(w2_sorted(a.points.clone(), b.points.clone()))
}

/// Exact W₂ between equal-size clouds in any dimension: minimum-cost perfect
/// matching on squared Euclidean costs, by dynamic programming over subsets.
pub fn w2_exact_small(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.len();
    if n > EXACT_ASSIGNMENT_MAX {
        return Err(Error::TooManyParticles { n, max: EXACT_ASSIGNMENT_MAX });
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect();
    // best[mask]: cheapest way to match the first popcount(mask) rows of `a`
    // onto the rows of `b` selected by `mask`.
    let mut best = vec![f64::INFINITY; 1 << n];
    best[0] = 0.0;
    for mask in 0usize..(1 << n) {
        let cur = best[mask];
        if !cur.is_finite() {
            continue;
        }
        let i = mask.count_ones() as usize;
        if i == n {
            continue;
        }
        for j in (0..n).filter(|j| mask & (1 << j) == 0) {
            let next = mask | (1 << j);
            let c = cur + cost[i * n + j];
            if c < best[next] {
                best[next] = c;
            }
        }
    }
    Ok((best[(1 << n) - 1] / n as f64).sqrt())
}

/// Sliced W₂: root-mean-square of 1-D W₂ distances over `n_projections`
/// random unit directions drawn from `seed`, scaled by √d so that a pure
/// translation gets its exact distance on average.
pub fn w2_sliced(a: &ParticleCloud, b: &ParticleCloud, n_projections: usize, seed: u64) -> Result<f64> {
    check_same_shape(a, b)?;
    if n_projections == 0 {
        return Err(Error::InvalidParameter("n_projections must be at least 1".into()));
    }
    if a.dim == 1 {
        return w2_1d(a, b);
    }
    let stream = NoiseStream::new(seed, NoiseRole::Probe);
    let mut direction = vec![0.0; a.dim];
    let mut total = 0.0;
    for p in 0..n_projections {
        loop {
            stream.fill_standard_normals(0x5_11CE, p as u32, 0, &mut direction);
            let norm = norm_sq(&direction).sqrt();
            if norm > 1e-12 {
                direction.iter_mut().for_each(|d| *d /= norm);
                break;
            }
        }
        let project = |c: &ParticleCloud| -> Vec<f64> {
            c.rows().map(|r| r.iter().zip(&direction).map(|(x, d)| x * d).sum()).collect()
        };
        let w = w2_sorted(project(a), project(b));
        total += w * w;
    }
    Ok((a.dim as f64 * total / n_projections as f64).sqrt())
}

/// Draws a cloud of `n` standard normal points (used by tests and probes).
pub fn gaussian_cloud(n: usize, dim: usize, seed: u64, tag: u64) -> Result<ParticleCloud> {
    let stream = NoiseStream::new(seed, NoiseRole::Probe);
    let points = (0..n)
        .flat_map(|i| (0..dim).map(move |c| (i, c)))
        .map(|(i, c)| stream.standard_normal(NoiseKey::new(tag, i as u32, c as u32, 0)))
        .collect();
    ParticleCloud::new(dim, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cloud(values: &[f64]) -> ParticleCloud {
        ParticleCloud::from_values(values).unwrap()
    }

    /// Brute force over all permutations, independent of both solvers.
    fn w2_permutations(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
        fn permute(k: usize, perm: &mut Vec<usize>, a: &ParticleCloud, b: &ParticleCloud, best: &mut f64) {
            if k == perm.len() {
                let c: f64 = perm
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                    .sum();
                *best = best.min(c);
                return;
            }
            for i in k..perm.len() {
                perm.swap(k, i);
                permute(k + 1, perm, a, b, best);
                perm.swap(k, i);
            }
        }
        let mut perm: Vec<usize> = (0..a.len()).collect();
        let mut best = f64::INFINITY;
        permute(0, &mut perm, a, b, &mut best);
        (best / a.len() as f64).sqrt()
    }

    #[test]
    fn summaries() {
        let c = ParticleCloud::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(c.mean(), vec![2.0, 1.0]);
        assert_abs_diff_eq!(c.second_moment(), (1.0 + 13.0) / 2.0);
        let v = c.view();
        assert!(v.second_moment() >= norm_sq(v.mean()));
        let mut out = [0.0; 2];
        v.integrate(&mut |_, o| o.copy_from_slice(&[3.5, -1.0]), &mut out);
        assert_eq!(out, [3.5, -1.0]);
    }

    #[test]
    fn rejects_bad_clouds() {
        assert!(ParticleCloud::new(1, vec![]).is_err());
        assert!(ParticleCloud::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(ParticleCloud::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn one_dimensional_cases() {
        assert_eq!(w2_1d(&cloud(&[0.3, -1.0]), &cloud(&[0.3, -1.0])).unwrap(), 0.0);
        assert_abs_diff_eq!(w2_1d(&cloud(&[0.0]), &cloud(&[3.0])).unwrap(), 3.0);
        // Couplings of {0,1} onto {1,2} cost 1 (monotone) and 2 (crossed).
        let a = cloud(&[0.0, 1.0]);
        let b = cloud(&[2.0, 1.0]);
        assert_abs_diff_eq!(w2_permutations(&a, &b), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w2_1d(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        assert!(matches!(w2_1d(&cloud(&[0.0]), &cloud(&[0.0, 1.0])), Err(Error::SizeMismatch { .. })));
        assert!(w2_sliced(&cloud(&[0.0]), &cloud(&[0.0, 1.0]), 4, 0).is_err());
    }

    #[test]
    fn exact_assignment_limits() {
        let a = gaussian_cloud(13, 1, 1, 0).unwrap();
        assert!(matches!(w2_exact_small(&a, &a), Err(Error::TooManyParticles { n: 13, .. })));
    }

    #[test]
    fn exact_assignment_matches_brute_force() {
        for trial in 0..20 {
            let a = gaussian_cloud(6, 3, 17, 2 * trial).unwrap();
            let b = gaussian_cloud(6, 3, 17, 2 * trial + 1).unwrap();
            assert_abs_diff_eq!(w2_exact_small(&a, &b).unwrap(), w2_permutations(&a, &b), epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_assignment_agrees_with_sorting_in_1d() {
        let a = cloud(&[0.5, -2.0, 1.5, 3.0]);
        let b = cloud(&[0.0, 0.1, -0.7, 2.2]);
        assert_abs_diff_eq!(w2_exact_small(&a, &b).unwrap(), w2_1d(&a, &b).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn permutation_invariance_in_2d() {
        let a = ParticleCloud::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let b = ParticleCloud::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(w2_exact_small(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn sliced_properties() {
        let a = gaussian_cloud(8, 2, 3, 0).unwrap();
        for seed in 0..5 {
            assert_eq!(w2_sliced(&a, &a, 16, seed).unwrap(), 0.0);
        }
        let s = cloud(&[0.0, 1.0, 4.0]);
        let t = cloud(&[2.0, -1.0, 0.5]);
        for seed in 0..5 {
            assert_eq!(w2_sliced(&s, &t, 7, seed).unwrap(), w2_1d(&s, &t).unwrap());
        }
        for trial in 0..10 {
            let a = gaussian_cloud(8, 2, 5, 2 * trial).unwrap();
            let b = gaussian_cloud(8, 2, 5, 2 * trial + 1).unwrap().translated(&[0.5, -0.25]).unwrap();
            let exact = w2_exact_small(&a, &b).unwrap();
            let sliced = w2_sliced(&a, &b, 64, trial).unwrap();
            assert!(sliced <= 2.0 * exact && exact <= 2.0 * sliced, "exact {exact} sliced {sliced}");
        }
    }

    #[test]
    fn sliced_is_deterministic_per_seed() {
        let a = gaussian_cloud(20, 3, 8, 0).unwrap();
        let b = gaussian_cloud(20, 3, 8, 1).unwrap();
        assert_eq!(w2_sliced(&a, &b, 10, 4).unwrap().to_bits(), w2_sliced(&a, &b, 10, 4).unwrap().to_bits());
    }

    #[test]
    fn csv_layout() {
        let c = ParticleCloud::from_rows(&[vec![1.0, -0.5], vec![2.0, 0.25]]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "particle,c0,c1\n0,1,-0.5\n1,2,0.25\n");
    }

    fn small_cloud(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, dim * 5)
    }

    proptest! {
        #[test]
        fn translation_invariance(a in small_cloud(2), b in small_cloud(2), v in prop::array::uniform2(-3.0f64..3.0)) {
            let a = ParticleCloud::new(2, a).unwrap();
            let b = ParticleCloud::new(2, b).unwrap();
            let (at, bt) = (a.translated(&v).unwrap(), b.translated(&v).unwrap());
            prop_assert!((w2_exact_small(&a, &b).unwrap() - w2_exact_small(&at, &bt).unwrap()).abs() < 1e-9);
            prop_assert!((w2_sliced(&a, &b, 8, 1).unwrap() - w2_sliced(&at, &bt, 8, 1).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn translation_invariance_1d(a in small_cloud(1), b in small_cloud(1), v in -3.0f64..3.0) {
            let a = ParticleCloud::new(1, a).unwrap();
            let b = ParticleCloud::new(1, b).unwrap();
            let d0 = w2_1d(&a, &b).unwrap();
            let d1 = w2_1d(&a.translated(&[v]).unwrap(), &b.translated(&[v]).unwrap()).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn pseudometric_axioms(a in small_cloud(2), b in small_cloud(2), c in small_cloud(2)) {
            let a = ParticleCloud::new(2, a).unwrap();
            let b = ParticleCloud::new(2, b).unwrap();
            let c = ParticleCloud::new(2, c).unwrap();
            let ab = w2_exact_small(&a, &b).unwrap();
            prop_assert_eq!(w2_exact_small(&a, &a).unwrap(), 0.0);
            prop_assert!((ab - w2_exact_small(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= w2_exact_small(&a, &c).unwrap() + w2_exact_small(&c, &b).unwrap() + 1e-12);
            prop_assert!(ab <= a.mean_squared_deviation(&b).unwrap().sqrt() + 1e-12);
        }
    }
}
