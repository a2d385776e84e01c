//! Private selection of a transport map from a candidate family.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateFamily, CandidateLabel};
use crate::dp::{add_argmin_noise, argmin_uniform_ties, PrivacyBudget, SeededRng};
use crate::error::{invalid, Error, Result};
use crate::grid::{finite_diff_gradient, GridSpec, GridVectorField};
use crate::semidual::{
    clipped_score_from_counts, fenchel_transform_separable, sensitivity_clipped, ClipConfig, ClippedScore,
    Dataset,
};

/// Identifier recorded in every privacy certificate.
pub const MECHANISM: &str = "report-noisy-argmin-laplace";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub budget: PrivacyBudget,
    pub clip: ClipConfig,
    pub seed: u64,
    /// Worker cap for candidate scoring; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// What the released index is protected by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyCertificate {
    pub mechanism: String,
    pub private: bool,
    pub epsilon: Option<f64>,
    /// Replacement sensitivity `2C/n` of each score.
    pub sensitivity: f64,
    pub n: usize,
    pub clip: f64,
}

/// Data-dependent quantities that are not covered by the privacy guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub raw_scores: Vec<f64>,
    pub noisy_scores: Vec<f64>,
    /// Per candidate, fraction of source samples whose value was clamped.
    pub saturated_potential: Vec<f64>,
    /// Per candidate, fraction of target samples whose conjugate value was clamped.
    pub saturated_conjugate: Vec<f64>,
    pub tie_broken: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub chosen_index: usize,
    pub chosen_label: CandidateLabel,
    /// Laplace scale `4C/(n eps)`; zero when non-private.
    pub noise_scale: f64,
    pub certificate: PrivacyCertificate,
    pub chosen_map: GridVectorField,
    /// Present only on results that have not been redacted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

impl FitResult {
    /// The releasable part of the result: everything but the diagnostics.
    pub fn redacted(&self) -> FitResult {
        FitResult {
            diagnostics: None,
            ..self.clone()
        }
    }
}

/// The fitted map `grad f_i` of the selected candidate.
pub fn transport_map_of(result: &FitResult) -> &GridVectorField {
    &result.chosen_map
}

/// Clamped semi-dual score of every family member.
pub fn score_family(data: &Dataset, family: &CandidateFamily, clip: ClipConfig) -> Result<Vec<ClippedScore>> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if family.spec() != data.spec() {
        return Err(Error::GridMismatch("dataset and family use different grids".into()));
    }
    let (cx, cy) = data.index_counts();
    Ok(family
        .members()
        .par_iter()
        .map(|f| {
            let star = fenchel_transform_separable(f);
            clipped_score_from_counts(f.values(), star.values(), &cx, &cy, data.len(), clip)
        })
        .collect())
}

fn run_fit(data: &Dataset, family: &CandidateFamily, config: &FitConfig) -> Result<FitResult> {
    let scores = score_family(data, family, config.clip)?;
    let raw: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let n = data.len();
    let sensitivity = sensitivity_clipped(n, config.clip)?;
    let noise_scale = config.budget.argmin_noise_scale(sensitivity);
    if let Some(eps) = config.budget.epsilon() {
        let expected = 4.0 * config.clip.c() / (n as f64 * eps);
        assert!((noise_scale - expected).abs() <= 1e-12 * expected, "noise scale plumbing");
    }
    let mut rng = SeededRng::new(config.seed, 0);
    let noisy = add_argmin_noise(&raw, noise_scale, &mut rng);
    let (chosen_index, tie_broken) = argmin_uniform_ties(&noisy, &mut rng)?;
    let chosen_map = finite_diff_gradient(family.member(chosen_index)?);
    Ok(FitResult {
        chosen_index,
        chosen_label: family.labels()[chosen_index].clone(),
        noise_scale,
        certificate: PrivacyCertificate {
            mechanism: MECHANISM.to_string(),
            private: config.budget.epsilon().is_some(),
            epsilon: config.budget.epsilon(),
            sensitivity,
            n,
            clip: config.clip.c(),
        },
        chosen_map,
        diagnostics: Some(Diagnostics {
            raw_scores: raw,
            noisy_scores: noisy,
            saturated_potential: scores.iter().map(|s| s.saturated_potential).collect(),
            saturated_conjugate: scores.iter().map(|s| s.saturated_conjugate).collect(),
            tie_broken,
        }),
    })
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| invalid(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Scores every candidate with the clamped semi-dual objective and selects
/// one by report-noisy-argmin with sensitivity `2C/n`, i.e. Laplace scale
/// `4C/(n eps)`. The result carries diagnostics; release [`FitResult::redacted`].
pub fn fit_private(data: &Dataset, family: &CandidateFamily, config: &FitConfig) -> Result<FitResult> {
    if config.budget.epsilon().is_none() {
        return Err(invalid("private fitting needs a finite privacy budget"));
    }
    with_threads(config.threads, || run_fit(data, family, config))?
}

/// The exact minimizer of the clamped objective over the family (no noise).
pub fn fit_nonprivate(data: &Dataset, family: &CandidateFamily, config: &FitConfig) -> Result<FitResult> {
    let config = FitConfig {
        budget: PrivacyBudget::NonPrivate,
        ..config.clone()
    };
    with_threads(config.threads, || run_fit(data, family, &config))?
}

/// Writes a vector field as CSV: grid coordinates `x1..xd`, then components `t1..td`.
pub fn write_map_csv<W: Write>(field: &GridVectorField, out: W) -> Result<()> {
    let spec = field.spec();
    let d = spec.dim();
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=d)
        .map(|a| format!("x{a}"))
        .chain((1..=d).map(|a| format!("t{a}")))
        .collect();
    w.write_record(&header)?;
    let mut p = vec![0.0; d];
    for i in 0..spec.len() {
        spec.point_into(i, &mut p);
        let row: Vec<String> = p.iter().chain(field.vector(i)).map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_map_csv`] back onto `spec`.
pub fn read_map_csv<R: Read>(spec: &GridSpec, input: R) -> Result<GridVectorField> {
    let d = spec.dim();
    let mut r = csv::Reader::from_reader(input);
    let mut vectors = Vec::with_capacity(spec.len() * d);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                got: rec.len(),
            });
        }
        if i >= spec.len() {
            return Err(Error::GridMismatch("map file has more rows than the grid".into()));
        }
        for v in rec.iter().skip(d) {
            vectors.push(v.parse::<f64>().map_err(|e| invalid(format!("row {i}: {e}")))?);
        }
    }
    GridVectorField::new(spec.clone(), vectors)
}
