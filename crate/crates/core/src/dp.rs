//! Laplace noise, report-noisy-argmin, and an empirical ε-DP ratio test.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::semidual::Dataset;

/// Privacy level of a release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PrivacyBudget {
    /// Pure ε-differential privacy.
    Pure { epsilon: f64 },
    /// No privacy guarantee; the selection runs without noise.
    NonPrivate,
}

impl PrivacyBudget {
    pub fn pure(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be finite and positive, got {epsilon}")));
        }
        Ok(Self::Pure { epsilon })
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Self::Pure { epsilon } => Some(epsilon),
            Self::NonPrivate => None,
        }
    }

    /// Laplace scale `2Δ/ε` for report-noisy-argmin; zero when non-private.
    pub fn argmin_noise_scale(&self, sensitivity: f64) -> f64 {
        match *self {
            Self::Pure { epsilon } => 2.0 * sensitivity / epsilon,
            Self::NonPrivate => 0.0,
        }
    }
}

/// Deterministic random source keyed by `(seed, stream)`.
///
/// Backed by ChaCha8 with the stream id mapped to the cipher's stream
/// parameter, so distinct streams never overlap.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A child generator keyed by a fresh draw from `self` and `stream`.
    pub fn split(&mut self, stream: u64) -> SeededRng {
        SeededRng::new(self.inner.next_u64(), stream)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

fn standard_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u == -0.5 {
            continue;
        }
        return -u.signum() * (1.0 - 2.0 * u.abs()).ln();
    }
}

/// One draw of `scale * L` with `L` standard Laplace (inverse-CDF method).
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(invalid(format!("Laplace scale must be positive, got {scale}")));
    }
    Ok(scale * standard_laplace(rng))
}

/// Adds `scale * L_i` to each score. Candidate `i` draws from its own stream
/// keyed by one draw of `rng`, so the noise attached to a candidate does not
/// depend on how the scores were produced.
pub fn add_argmin_noise(scores: &[f64], scale: f64, rng: &mut SeededRng) -> Vec<f64> {
    if scale == 0.0 {
        return scores.to_vec();
    }
    let key = rng.next_u64();
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut r = SeededRng::new(key, i as u64);
            s + scale * standard_laplace(&mut r)
        })
        .collect()
}

/// Index of the minimum; exact ties are broken uniformly at random.
pub fn argmin_uniform_ties(values: &[f64], rng: &mut SeededRng) -> Result<(usize, bool)> {
    if values.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..values.len()).filter(|&i| values[i] == min).collect();
    if tied.len() == 1 {
        Ok((tied[0], false))
    } else {
        Ok((tied[rng.gen_range(0..tied.len())], true))
    }
}

/// Report-noisy-argmin: `argmin_i score_i + (2 Δ / ε) L_i`.
pub fn report_noisy_argmin(
    scores: &[f64],
    delta: f64,
    budget: PrivacyBudget,
    rng: &mut SeededRng,
) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(invalid(format!("sensitivity must be non-negative, got {delta}")));
    }
    let scale = budget.argmin_noise_scale(delta);
    let noisy = add_argmin_noise(scores, scale, rng);
    Ok(argmin_uniform_ties(&noisy, rng)?.0)
}

/// `1 + ln N`, the bound on `E max_i |L_i|` for N standard Laplace draws.
pub fn max_laplace_bound(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(invalid("N must be at least 1"));
    }
    Ok(1.0 + (n as f64).ln())
}

/// Monte-Carlo mean and standard error of `max_i |L_i|` over `trials` draws.
pub fn max_laplace_monte_carlo(n: usize, trials: usize, seed: u64) -> (f64, f64) {
    const CHUNK: usize = 1 << 12;
    let chunks = trials.div_ceil(CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = SeededRng::new(seed, c as u64);
            let count = CHUNK.min(trials - c * CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..count {
                let m = (0..n)
                    .map(|_| standard_laplace(&mut rng).abs())
                    .fold(0.0, f64::max);
                s += m;
                s2 += m * m;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let t = trials as f64;
    let mean = sum / t;
    let var = (sum_sq / t - mean * mean).max(0.0) * t / (t - 1.0).max(1.0);
    (mean, (var / t).sqrt())
}

/// Wilson score interval for a binomial proportion at `z` standard errors.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Number of Wilson standard errors allowed as statistical slack.
pub const DP_TEST_SLACK_Z: f64 = 3.0;

/// One output index of an ε-DP ratio test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRatioRow {
    pub index: usize,
    pub count_d: u64,
    #[serde(rename = "count_d_prime")]
    pub count_d_neighbor: u64,
    /// Larger of the two empirical probability ratios (`null` when infinite).
    pub ratio: f64,
    /// `e^ε`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRatioReport {
    pub epsilon: f64,
    pub trials: u64,
    pub slack_z: f64,
    pub rows: Vec<DpRatioRow>,
    pub pass: bool,
}

impl DpRatioReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    /// One JSON record per output index.
    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn selection_counts(
    scores: &[f64],
    delta: f64,
    budget: PrivacyBudget,
    trials: u64,
    key: u64,
) -> Vec<u64> {
    const CHUNK: u64 = 1 << 12;
    let n = scores.len();
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; n];
            let mut rng = SeededRng::new(key, c);
            for _ in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let i = report_noisy_argmin(scores, delta, budget, &mut rng)
                    .expect("scores validated by caller");
                counts[i] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Runs report-noisy-argmin `trials` times on two neighboring datasets and
/// checks, for every output index, that neither empirical selection
/// probability exceeds `e^ε` times the other beyond `DP_TEST_SLACK_Z` Wilson
/// standard errors.
///
/// `scores` maps a dataset to its candidate scores and `delta` is the
/// sensitivity handed to the mechanism.
pub fn verify_dp_ratio<F>(
    scores: F,
    d: &Dataset,
    d_neighbor: &Dataset,
    delta: f64,
    epsilon: f64,
    trials: u64,
    rng: &mut SeededRng,
) -> Result<DpRatioReport>
where
    F: Fn(&Dataset) -> Result<Vec<f64>>,
{
    let budget = PrivacyBudget::pure(epsilon)?;
    let ham = d.hamming_distance(d_neighbor)?;
    if ham > 1 {
        return Err(Error::NotNeighboring(ham));
    }
    if trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let s_d = scores(d)?;
    let s_n = scores(d_neighbor)?;
    if s_d.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if s_d.len() != s_n.len() {
        return Err(Error::DimensionMismatch {
            expected: s_d.len(),
            got: s_n.len(),
        });
    }
    let counts_d = selection_counts(&s_d, delta, budget, trials, rng.next_u64());
    let counts_n = selection_counts(&s_n, delta, budget, trials, rng.next_u64());
    let bound = epsilon.exp();
    let rows: Vec<DpRatioRow> = counts_d
        .iter()
        .zip(&counts_n)
        .enumerate()
        .map(|(index, (&a, &b))| {
            let (lo_a, hi_a) = wilson_interval(a, trials, DP_TEST_SLACK_Z);
            let (lo_b, hi_b) = wilson_interval(b, trials, DP_TEST_SLACK_Z);
            let pass = lo_a <= bound * hi_b && lo_b <= bound * hi_a;
            let ratio = match (a, b) {
                (0, 0) => 1.0,
                (_, 0) | (0, _) => f64::INFINITY,
                _ => {
                    let r = a as f64 / b as f64;
                    r.max(1.0 / r)
                }
            };
            DpRatioRow {
                index,
                count_d: a,
                count_d_neighbor: b,
                ratio,
                bound,
                pass,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    Ok(DpRatioReport {
        epsilon,
        trials,
        slack_z: DP_TEST_SLACK_Z,
        rows,
        pass,
    })
}
