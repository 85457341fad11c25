//! Perturbation kernels `θ_ε` and reproducible noise sequences.
//!
//! Random numbers are counter-based: value `k` of stream `s` under seed
//! `seed` is drawn from a ChaCha8 generator positioned at block `k` of
//! stream `s`, so it depends on `(seed, s, k)` alone. Parallel and serial
//! generation agree bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NoiseError;

/// Identifier written next to every emitted sequence.
pub const GENERATOR_ID: &str = "chacha8/word-pos-counter";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Uniform,
    AbsContinuous,
}

/// Piecewise-polynomial density shape on the normalized support `s ∈ [-1, 1]`
/// (`t = t0 + ε s`).
///
/// Piece `i` covers `[breaks[i], breaks[i+1]]` and evaluates
/// `Σ_j coeffs[i][j] (s - breaks[i])^j`. The shape is normalized on
/// construction, so only its proportions matter. `bound` is an upper bound
/// `M` for the normalized shape and sets the rejection envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityTable {
    pub breaks: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub bound: f64,
}

impl DensityTable {
    /// The flat shape; reproduces the uniform kernel.
    pub fn flat() -> Self {
        DensityTable {
            breaks: vec![-1.0, 1.0],
            coeffs: vec![vec![0.5]],
            bound: 0.5,
        }
    }

    fn raw(&self, s: f64) -> f64 {
        let n = self.coeffs.len();
        let i = match self.breaks[1..n].iter().position(|b| s < *b) {
            Some(i) => i,
            None => n - 1,
        };
        let d = s - self.breaks[i];
        self.coeffs[i].iter().rev().fold(0.0, |acc, c| acc * d + c)
    }

    fn raw_integral(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let w = self.breaks[i + 1] - self.breaks[i];
                c.iter()
                    .enumerate()
                    .map(|(j, cj)| cj * w.powi(j as i32 + 1) / (j as f64 + 1.0))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// The noise measure `θ_ε` on the parameter interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseKernel {
    pub kind: KernelKind,
    pub t0: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityTable>,
    #[serde(skip)]
    norm: f64,
}

impl NoiseKernel {
    pub fn uniform(t0: f64, epsilon: f64) -> Result<Self, NoiseError> {
        let k = NoiseKernel {
            kind: KernelKind::Uniform,
            t0,
            epsilon,
            density: None,
            norm: 1.0,
        };
        k.check_interval()?;
        Ok(k)
    }

    pub fn abs_continuous(
        t0: f64,
        epsilon: f64,
        density: DensityTable,
    ) -> Result<Self, NoiseError> {
        let mut k = NoiseKernel {
            kind: KernelKind::AbsContinuous,
            t0,
            epsilon,
            density: Some(density),
            norm: 1.0,
        };
        k.prepare()?;
        Ok(k)
    }

    /// Same shape, different width.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, NoiseError> {
        let mut k = self.clone();
        k.epsilon = epsilon;
        k.prepare()?;
        Ok(k)
    }

    /// Re-derives cached normalization after deserialization and checks
    /// the kernel's own invariants.
    pub fn prepare(&mut self) -> Result<(), NoiseError> {
        self.check_interval()?;
        match (self.kind, &self.density) {
            (KernelKind::Uniform, None) => {
                self.norm = 1.0;
                Ok(())
            }
            (KernelKind::Uniform, Some(_)) => Err(NoiseError::InvalidKernel(
                "uniform kernel takes no density table".into(),
            )),
            (KernelKind::AbsContinuous, None) => Err(NoiseError::InvalidKernel(
                "abs_continuous kernel needs a density table".into(),
            )),
            (KernelKind::AbsContinuous, Some(d)) => {
                let n = d.coeffs.len();
                if n == 0 || d.breaks.len() != n + 1 {
                    return Err(NoiseError::InvalidKernel(
                        "density table needs len(breaks) = len(coeffs) + 1 >= 2".into(),
                    ));
                }
                if d.breaks[0] != -1.0
                    || d.breaks[n] != 1.0
                    || d.breaks.windows(2).any(|w| !(w[0] < w[1]))
                {
                    return Err(NoiseError::InvalidKernel(
                        "density breaks must increase from -1 to 1".into(),
                    ));
                }
                if d.coeffs
                    .iter()
                    .any(|c| c.is_empty() || c.iter().any(|x| !x.is_finite()))
                {
                    return Err(NoiseError::InvalidKernel(
                        "density pieces need finite coefficients".into(),
                    ));
                }
                let total = d.raw_integral();
                if !(total > 0.0) {
                    return Err(NoiseError::InvalidKernel(
                        "density integrates to a non-positive value".into(),
                    ));
                }
                self.norm = total;
                let probe = 4096;
                for i in 0..probe {
                    let s = -1.0 + 2.0 * (i as f64 + 0.5) / probe as f64;
                    let g = d.raw(s) / total;
                    if !(g > 0.0) {
                        return Err(NoiseError::InvalidKernel(format!(
                            "density is not positive at s = {s}"
                        )));
                    }
                    if g > d.bound * (1.0 + 1e-12) {
                        return Err(NoiseError::InvalidKernel(format!(
                            "density {g} exceeds the envelope bound {} at s = {s}",
                            d.bound
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    fn check_interval(&self) -> Result<(), NoiseError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite() && self.t0.is_finite()) {
            return Err(NoiseError::InvalidKernel(format!(
                "need finite t0 and epsilon > 0, got t0 = {}, epsilon = {}",
                self.t0, self.epsilon
            )));
        }
        Ok(())
    }

    /// Checks `supp θ_ε ⊂ ]0, t⋆[`.
    pub fn check_window(&self, t_star: f64) -> Result<(), NoiseError> {
        let (lo, hi) = self.support();
        if lo > 0.0 && hi < t_star {
            Ok(())
        } else {
            Err(NoiseError::InvalidKernel(format!(
                "support [{lo}, {hi}] must lie inside ]0, t_star = {t_star}["
            )))
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.t0 - self.epsilon, self.t0 + self.epsilon)
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = self.support();
        t >= lo && t <= hi
    }

    pub fn density(&self, t: f64) -> f64 {
        if !self.contains(t) {
            return 0.0;
        }
        match &self.density {
            None => 0.5 / self.epsilon,
            Some(d) => d.raw((t - self.t0) / self.epsilon) / (self.norm * self.epsilon),
        }
    }

    /// Draws one value. Uniform kernels consume one `f64`; density kernels
    /// use rejection against the flat envelope `M` on the normalized support.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, NoiseError> {
        let t = match &self.density {
            None => self.t0 + self.epsilon * (2.0 * rng.random::<f64>() - 1.0),
            Some(d) => {
                let budget = self.rejection_budget();
                let s = Self::reject(d, self.norm, budget, rng)?;
                self.t0 + self.epsilon * s
            }
        };
        debug_assert!(self.contains(t), "sample {t} outside the kernel support");
        Ok(t)
    }

    fn reject<R: Rng + ?Sized>(
        d: &DensityTable,
        norm: f64,
        budget: u64,
        rng: &mut R,
    ) -> Result<f64, NoiseError> {
        let mut hit = None;
        for _ in 0..budget {
            let s = 2.0 * rng.random::<f64>() - 1.0;
            let u: f64 = rng.random();
            if u * d.bound <= d.raw(s) / norm {
                hit = Some(s);
                break;
            }
        }
        hit.ok_or(NoiseError::RejectionBudgetExhausted { budget })
    }

    /// `10⁴·M` trials, with `M` measured against the proposal density on
    /// `[-1, 1]` (so the flat shape has `M = 1`).
    pub fn rejection_budget(&self) -> u64 {
        match &self.density {
            None => 1,
            Some(d) => (1e4 * (2.0 * d.bound).max(1.0)).ceil() as u64,
        }
    }

    /// Midpoint nodes `(t_i, w_i)` with `Σ w_i = 1`, weights proportional to
    /// the density at each node.
    pub fn quadrature(&self, n: usize) -> Vec<(f64, f64)> {
        let n = n.max(1);
        let (lo, hi) = self.support();
        let h = (hi - lo) / n as f64;
        let mut nodes: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = lo + (i as f64 + 0.5) * h;
                (t, self.density(t))
            })
            .collect();
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        for nd in &mut nodes {
            nd.1 /= total;
        }
        nodes
    }
}

/// Splitmix64 finalizer; separates seed domains for different experiments.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random access to one counter-based stream.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng }
    }

    /// Generator positioned at the private block of index `k`.
    pub fn at(&mut self, k: u64) -> &mut ChaCha8Rng {
        self.rng.set_word_pos((k as u128) << 32);
        &mut self.rng
    }

    pub fn value(&mut self, kernel: &NoiseKernel, k: u64) -> Result<f64, NoiseError> {
        kernel.sample(self.at(k))
    }
}

/// A finite prefix `(t_1, …, t_n)` of a sequence drawn from `θ_ε^ℕ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSequence {
    pub values: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub generator: String,
}

impl NoiseSequence {
    /// A sequence with given values, e.g. the constant `t0` sequence.
    pub fn fixed(values: Vec<f64>) -> Self {
        NoiseSequence {
            values,
            seed: 0,
            stream: 0,
            generator: "fixed".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl std::ops::Index<usize> for NoiseSequence {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

pub fn sample_sequence(
    kernel: &NoiseKernel,
    n: usize,
    seed: u64,
) -> Result<NoiseSequence, NoiseError> {
    sample_sequence_stream(kernel, n, seed, 0)
}

pub fn sample_sequence_stream(
    kernel: &NoiseKernel,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<NoiseSequence, NoiseError> {
    let mut s = NoiseStream::new(seed, stream);
    let values = (0..n as u64)
        .map(|k| s.value(kernel, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NoiseSequence {
        values,
        seed,
        stream,
        generator: GENERATOR_ID.into(),
    })
}
