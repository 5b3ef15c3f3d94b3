//! Counter-addressed Gaussian increments.
//!
//! Every standard normal is a pure function of
//! `(seed, role, replicate, particle, component, step)`: a Philox4x32-10
//! block is evaluated at a counter built from the key, and Box-Muller turns
//! the four output words into two normals (even and odd components share a
//! block). Nothing is sequential, so any worker may draw any increment and
//! two simulations that name the same key see the same Brownian increment.

use std::ops::Range;
use std::sync::Mutex;

use crate::error::{Error, Result};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox4x32 with ten rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let p0 = u64::from(PHILOX_M0) * u64::from(c[0]);
        let p1 = u64::from(PHILOX_M1) * u64::from(c[2]);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one 64-bit identifier. Used to derive
/// path identifiers (e.g. for frozen-equation runs) from structured data.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Which Brownian motion a draw belongs to. Roles live in disjoint key spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseRole {
    /// W¹, driving the slow component.
    Slow,
    /// W², driving the fast component.
    Fast,
    /// W̃², driving frozen-equation runs.
    Frozen,
    /// Auxiliary randomness: assumption probes, projections, bootstrap.
    Probe,
}

impl NoiseRole {
    fn tag(self) -> u64 {
        match self {
            NoiseRole::Slow => 0x534C_4F57,
            NoiseRole::Fast => 0x4641_5354,
            NoiseRole::Frozen => 0x4652_5A4E,
            NoiseRole::Probe => 0x5052_4F42,
        }
    }
}

/// Address of one scalar draw within a role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoiseKey {
    pub replicate: u64,
    pub particle: u32,
    pub component: u32,
    pub step: u64,
}

impl NoiseKey {
    pub fn new(replicate: u64, particle: u32, component: u32, step: u64) -> Self {
        Self { replicate, particle, component, step }
    }
}

/// A seeded stream for a single role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub role: NoiseRole,
}

impl NoiseStream {
    pub fn new(seed: u64, role: NoiseRole) -> Self {
        Self { seed, role }
    }

    fn philox_key(&self, replicate: u64) -> [u32; 2] {
        let k = splitmix64(self.seed ^ splitmix64(self.role.tag() ^ splitmix64(replicate)));
        [k as u32, (k >> 32) as u32]
    }

    fn block(&self, replicate: u64, particle: u32, pair: u32, step: u64) -> [u32; 4] {
        let counter = [step as u32, (step >> 32) as u32, particle, pair];
        philox4x32_10(counter, self.philox_key(replicate))
    }

    /// Box-Muller radius and angle for one block.
    fn polar(&self, replicate: u64, particle: u32, pair: u32, step: u64) -> (f64, f64) {
        let w = self.block(replicate, particle, pair, step);
        let a = ((u64::from(w[0]) << 32) | u64::from(w[1])) >> 11;
        let b = ((u64::from(w[2]) << 32) | u64::from(w[3])) >> 11;
        let u1 = (a + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = b as f64 * (1.0 / 9_007_199_254_740_992.0);
        ((-2.0 * u1.ln()).sqrt(), std::f64::consts::TAU * u2)
    }

    fn normal_pair(&self, replicate: u64, particle: u32, pair: u32, step: u64) -> (f64, f64) {
        let (r, theta) = self.polar(replicate, particle, pair, step);
        let (s, c) = theta.sin_cos();
        (r * c, r * s)
    }

    /// The even-component normal alone, skipping the sine.
    fn normal_even(&self, replicate: u64, particle: u32, pair: u32, step: u64) -> f64 {
        let (r, theta) = self.polar(replicate, particle, pair, step);
        r * theta.cos()
    }

    /// Standard normal at `key`.
    pub fn standard_normal(&self, key: NoiseKey) -> f64 {
        if key.component.is_multiple_of(2) {
            self.normal_even(key.replicate, key.particle, key.component / 2, key.step)
        } else {
            self.normal_pair(key.replicate, key.particle, key.component / 2, key.step).1
        }
    }

    /// Uniform on `[0, 1)` at `key`, independent of the normal at the same key.
    pub fn uniform(&self, key: NoiseKey) -> f64 {
        let w = self.block(key.replicate ^ 0x5555_5555_5555_5555, key.particle, key.component, key.step);
        let a = ((u64::from(w[0]) << 32) | u64::from(w[1])) >> 11;
        a as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Brownian increment N(0, step) at `key`.
    pub fn gaussian_increment(&self, key: NoiseKey, step: f64) -> Result<f64> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("increment step must be positive, got {step}")));
        }
        Ok(step.sqrt() * self.standard_normal(key))
    }

    /// Standard normals for components `0..out.len()` of one
    /// `(replicate, particle, step)` address.
    pub fn fill_standard_normals(&self, replicate: u64, particle: u32, step: u64, out: &mut [f64]) {
        for (pair, chunk) in out.chunks_mut(2).enumerate() {
            if chunk.len() == 2 {
                let (z0, z1) = self.normal_pair(replicate, particle, pair as u32, step);
                chunk[0] = z0;
                chunk[1] = z1;
            } else {
                chunk[0] = self.normal_even(replicate, particle, pair as u32, step);
            }
        }
    }

    /// Sum of the fine increments of one component over `window`
    /// (fine-step indices), each increment being N(0, fine_step).
    pub fn aggregate_increments(&self, key: NoiseKey, window: Range<u64>, fine_step: f64) -> Result<f64> {
        if !(fine_step > 0.0 && fine_step.is_finite()) {
            return Err(Error::InvalidParameter(format!("fine step must be positive, got {fine_step}")));
        }
        let sum: f64 = window
            .map(|step| self.standard_normal(NoiseKey { step, ..key }))
            .sum();
        Ok(fine_step.sqrt() * sum)
    }
}

/// Converts a coarse time window into the fine-step indices it covers.
/// Fails unless both endpoints sit on the fine grid.
pub fn fine_window(start: f64, end: f64, fine_step: f64) -> Result<Range<u64>> {
    let misaligned = || Error::MisalignedWindow { start, end, step: fine_step };
    if !(fine_step > 0.0) || !(end > start) || start < 0.0 {
        return Err(misaligned());
    }
    let snap = |t: f64| -> Option<u64> {
        let k = (t / fine_step).round();
        let tol = 1e-9 * k.max(1.0);
        ((t / fine_step - k).abs() <= tol).then_some(k as u64)
    };
    match (snap(start), snap(end)) {
        (Some(a), Some(b)) if b > a => Ok(a..b),
        _ => Err(misaligned()),
    }
}

/// Source of standard normals addressed by role and key. Simulations are
/// generic over this so that tests can observe which keys get consumed.
pub trait NoiseSource: Sync {
    fn seed(&self) -> u64;

    /// Components `0..out.len()` at `(role, replicate, particle, step)`.
    fn fill_normals(&self, role: NoiseRole, replicate: u64, particle: u32, step: u64, out: &mut [f64]);

    fn uniform(&self, role: NoiseRole, key: NoiseKey) -> f64 {
        NoiseStream::new(self.seed(), role).uniform(key)
    }
}

/// The production source: Philox streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterNoise {
    pub seed: u64,
}

impl CounterNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, role: NoiseRole) -> NoiseStream {
        NoiseStream::new(self.seed, role)
    }
}

impl NoiseSource for CounterNoise {
    fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn fill_normals(&self, role: NoiseRole, replicate: u64, particle: u32, step: u64, out: &mut [f64]) {
        self.stream(role).fill_standard_normals(replicate, particle, step, out);
    }
}

/// Wraps a source and logs every key it serves.
pub struct RecordingNoise<S> {
    inner: S,
    log: Mutex<Vec<(NoiseRole, NoiseKey)>>,
}

impl<S: NoiseSource> RecordingNoise<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    /// Sorted, deduplicated keys consumed for `role`.
    pub fn keys(&self, role: NoiseRole) -> Vec<NoiseKey> {
        let mut keys: Vec<NoiseKey> = self
            .log
            .lock()
            .unwrap()
            .iter()
            .filter(|(r, _)| *r == role)
            .map(|(_, k)| *k)
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }
}

impl<S: NoiseSource> NoiseSource for RecordingNoise<S> {
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn fill_normals(&self, role: NoiseRole, replicate: u64, particle: u32, step: u64, out: &mut [f64]) {
        {
            let mut log = self.log.lock().unwrap();
            for component in 0..out.len() as u32 {
                log.push((role, NoiseKey { replicate, particle, component, step }));
            }
        }
        self.inner.fill_normals(role, replicate, particle, step, out);
    }
}
