//! Finite candidate families of grid potentials, in particular quadratic
//! potentials perturbed by one attractive and one repulsive Gaussian bump.

use std::path::Path;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::SeededRng;
use crate::error::{invalid, Error, Result};
use crate::grid::{GridPotential, GridSpec};

/// `e^{-||x - mu||^2 / (2 sigma^2)}`.
pub fn gaussian_bump(x: &[f64], mu: &[f64], sigma: f64) -> f64 {
    let r2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    (-r2 / (2.0 * sigma * sigma)).exp()
}

/// Parameters of `f(x) = ||x||^2/2 + alpha1 N(x | mu1, sigma1) - alpha2 N(x | mu2, sigma2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractionRepulsionParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl AttractionRepulsionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0 && self.alpha1.is_finite() && self.alpha2.is_finite()) {
            return Err(invalid("amplitudes must be finite and non-negative"));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0 && self.sigma1.is_finite() && self.sigma2.is_finite()) {
            return Err(invalid("bump widths must be finite and positive"));
        }
        if self.mu1.is_empty() || self.mu1.len() != self.mu2.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu1.len(),
                got: self.mu2.len(),
            });
        }
        if self.mu1.iter().chain(&self.mu2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bump centers"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    /// The plain quadratic `||x||^2 / 2` (both amplitudes zero).
    pub fn identity(d: usize) -> Self {
        Self {
            alpha1: 0.0,
            alpha2: 0.0,
            mu1: vec![0.0; d],
            mu2: vec![0.0; d],
            sigma1: 1.0,
            sigma2: 1.0,
        }
    }
}

pub fn attraction_repulsion_potential(x: &[f64], p: &AttractionRepulsionParams) -> f64 {
    let quad = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
    quad + p.alpha1 * gaussian_bump(x, &p.mu1, p.sigma1) - p.alpha2 * gaussian_bump(x, &p.mu2, p.sigma2)
}

/// `x - alpha1 (x - mu1)/sigma1^2 e1(x) + alpha2 (x - mu2)/sigma2^2 e2(x)`.
pub fn attraction_repulsion_gradient(x: &[f64], p: &AttractionRepulsionParams) -> Vec<f64> {
    let w1 = p.alpha1 / (p.sigma1 * p.sigma1) * gaussian_bump(x, &p.mu1, p.sigma1);
    let w2 = p.alpha2 / (p.sigma2 * p.sigma2) * gaussian_bump(x, &p.mu2, p.sigma2);
    x.iter()
        .enumerate()
        .map(|(a, &xa)| xa - w1 * (xa - p.mu1[a]) + w2 * (xa - p.mu2[a]))
        .collect()
}

/// Row-major `d x d` Hessian of [`attraction_repulsion_potential`].
pub fn attraction_repulsion_hessian(x: &[f64], p: &AttractionRepulsionParams) -> Vec<f64> {
    let d = x.len();
    let mut h = vec![0.0; d * d];
    for a in 0..d {
        h[a * d + a] = 1.0;
    }
    let mut add = |sign: f64, alpha: f64, mu: &[f64], sigma: f64| {
        let s2 = sigma * sigma;
        let w = sign * alpha * gaussian_bump(x, mu, sigma);
        for a in 0..d {
            for b in 0..d {
                let outer = (x[a] - mu[a]) * (x[b] - mu[b]) / (s2 * s2);
                let diag = if a == b { 1.0 / s2 } else { 0.0 };
                h[a * d + b] += w * (outer - diag);
            }
        }
    };
    add(1.0, p.alpha1, &p.mu1, p.sigma1);
    add(-1.0, p.alpha2, &p.mu2, p.sigma2);
    h
}

/// Fixed amplitudes and widths, plus the spread of the random bump centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractionRepulsionModel {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Standard deviation of each coordinate of the bump centers.
    pub sigma: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for AttractionRepulsionModel {
    fn default() -> Self {
        Self {
            alpha1: 0.005,
            alpha2: 0.005,
            sigma: 0.1,
            sigma1: 0.1,
            sigma2: 0.1,
        }
    }
}

impl AttractionRepulsionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("center spread must be finite and non-negative"));
        }
        AttractionRepulsionParams {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            mu1: vec![0.0],
            mu2: vec![0.0],
            sigma1: self.sigma1,
            sigma2: self.sigma2,
        }
        .validate()
    }
}

/// Draws `mu1, mu2 ~ N(0, sigma^2 I_d)` independently; amplitudes and widths are copied.
pub fn sample_random_params(
    rng: &mut SeededRng,
    d: usize,
    model: &AttractionRepulsionModel,
) -> Result<AttractionRepulsionParams> {
    model.validate()?;
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    let mut draw = || -> Vec<f64> {
        if model.sigma == 0.0 {
            return vec![0.0; d];
        }
        let normal = Normal::new(0.0, model.sigma).expect("validated spread");
        (0..d).map(|_| normal.sample(rng)).collect()
    };
    let mu1 = draw();
    let mu2 = draw();
    Ok(AttractionRepulsionParams {
        alpha1: model.alpha1,
        alpha2: model.alpha2,
        mu1,
        mu2,
        sigma1: model.sigma1,
        sigma2: model.sigma2,
    })
}

/// Samples an analytic potential at every grid point.
pub fn discretize<F>(f: F, spec: &GridSpec) -> Result<GridPotential>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map_init(|| vec![0.0; spec.dim()], |p, i| {
            spec.point_into(i, p);
            f(p)
        })
        .collect();
    GridPotential::new(spec.clone(), values)
}

/// Whether a family member is the data-generating potential or a draw from its prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Truth,
    Decoy,
}

/// Per-member metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CandidateLabel {
    AttractionRepulsion {
        params: AttractionRepulsionParams,
        provenance: Provenance,
    },
    /// Coefficients in a wavelet basis.
    Coefficients { coeffs: Vec<f64> },
    Named { name: String },
}

impl CandidateLabel {
    /// Analytic gradient of the member, when the label determines it.
    pub fn analytic_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            Self::AttractionRepulsion { params, .. } => Some(attraction_repulsion_gradient(x, params)),
            _ => None,
        }
    }
}

/// Whether the data-generating potential is a member of the family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyMode {
    /// The true potential is member 0, followed by `T - 1` decoys.
    #[default]
    IncludeTrue,
    /// All `T` members are independent draws.
    DecoysOnly,
}

/// A nonempty set of potentials on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFamily {
    spec: GridSpec,
    members: Vec<GridPotential>,
    labels: Vec<CandidateLabel>,
}

impl CandidateFamily {
    pub fn new(members: Vec<GridPotential>, labels: Vec<CandidateLabel>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("candidate family"))?;
        let spec = first.spec().clone();
        if members.iter().any(|m| *m.spec() != spec) {
            return Err(Error::GridMismatch("family members use different grids".into()));
        }
        if labels.len() != members.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                got: labels.len(),
            });
        }
        Ok(Self {
            spec,
            members,
            labels,
        })
    }

    /// Discretizes attraction/repulsion potentials on `spec`.
    pub fn from_params(
        spec: &GridSpec,
        params: Vec<(AttractionRepulsionParams, Provenance)>,
    ) -> Result<Self> {
        for (p, _) in &params {
            p.validate()?;
            if p.dim() != spec.dim() {
                return Err(Error::DimensionMismatch {
                    expected: spec.dim(),
                    got: p.dim(),
                });
            }
        }
        let members = params
            .iter()
            .map(|(p, _)| discretize(|x| attraction_repulsion_potential(x, p), spec))
            .collect::<Result<Vec<_>>>()?;
        let labels = params
            .into_iter()
            .map(|(params, provenance)| CandidateLabel::AttractionRepulsion { params, provenance })
            .collect();
        Self::new(members, labels)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[GridPotential] {
        &self.members
    }

    pub fn labels(&self) -> &[CandidateLabel] {
        &self.labels
    }

    pub fn member(&self, i: usize) -> Result<&GridPotential> {
        self.members.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.members.len(),
        })
    }

    /// Writes the member labels (not the grid values) as JSON.
    pub fn save_labels(&self, path: &Path) -> Result<()> {
        let file = FamilyFile {
            grid: self.spec.clone(),
            members: self.labels.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Rebuilds a family written by [`CandidateFamily::save_labels`]; only
    /// analytic members can be regenerated.
    pub fn load_labels(path: &Path) -> Result<Self> {
        let file: FamilyFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let params = file
            .members
            .into_iter()
            .map(|l| match l {
                CandidateLabel::AttractionRepulsion { params, provenance } => Ok((params, provenance)),
                other => Err(invalid(format!("cannot regenerate member {other:?} from its label"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(&file.grid, params)
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyFile {
    grid: GridSpec,
    members: Vec<CandidateLabel>,
}

/// `count` attraction/repulsion potentials. Member `i` draws its centers from
/// its own stream, so the family does not depend on generation order. With
/// [`FamilyMode::IncludeTrue`], `truth` is member 0.
pub fn generate_family(
    rng: &mut SeededRng,
    count: usize,
    model: &AttractionRepulsionModel,
    spec: &GridSpec,
    mode: FamilyMode,
    truth: Option<&AttractionRepulsionParams>,
) -> Result<CandidateFamily> {
    if count < 1 {
        return Err(invalid("family size must be at least 1"));
    }
    let key = rng.next_u64();
    let d = spec.dim();
    let decoy = |i: usize| -> Result<(AttractionRepulsionParams, Provenance)> {
        let mut r = SeededRng::new(key, i as u64);
        Ok((sample_random_params(&mut r, d, model)?, Provenance::Decoy))
    };
    let params = match mode {
        FamilyMode::DecoysOnly => (0..count).map(decoy).collect::<Result<Vec<_>>>()?,
        FamilyMode::IncludeTrue => {
            let truth = truth.ok_or_else(|| invalid("include-true mode needs the true parameters"))?;
            std::iter::once(Ok((truth.clone(), Provenance::Truth)))
                .chain((1..count).map(decoy))
                .collect::<Result<Vec<_>>>()?
        }
    };
    CandidateFamily::from_params(spec, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fig_params(rng: &mut SeededRng) -> AttractionRepulsionParams {
        sample_random_params(rng, 2, &AttractionRepulsionModel::default()).unwrap()
    }

    #[test]
    fn bump_examples() {
        assert_eq!(gaussian_bump(&[0.3, -0.2], &[0.3, -0.2], 0.7), 1.0);
        let v = gaussian_bump(&[0.6, 0.0], &[0.0, 0.0], 0.6);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        let direct = (-((0.1f64 - 0.4).powi(2) + (0.2f64 + 0.1).powi(2)) / (2.0 * 0.09)).exp();
        assert!((gaussian_bump(&[0.1, 0.2], &[0.4, -0.1], 0.3) - direct).abs() < 1e-15);
    }

    #[test]
    fn potential_examples() {
        let id = AttractionRepulsionParams::identity(2);
        assert_eq!(attraction_repulsion_potential(&[0.3, 0.4], &id), 0.125);
        assert_eq!(attraction_repulsion_gradient(&[0.3, 0.4], &id), vec![0.3, 0.4]);
        let p = AttractionRepulsionParams {
            alpha1: 0.2,
            alpha2: 0.0,
            mu1: vec![0.1, -0.2],
            mu2: vec![0.0, 0.0],
            sigma1: 0.3,
            sigma2: 0.3,
        };
        assert!((attraction_repulsion_potential(&[0.1, -0.2], &p) - (0.025 + 0.2)).abs() < 1e-15);

        let same = AttractionRepulsionParams {
            mu2: vec![0.1, -0.2],
            alpha2: 0.4,
            ..p.clone()
        };
        let g = attraction_repulsion_gradient(&[0.1, -0.2], &same);
        assert!((g[0] - 0.1).abs() < 1e-16 && (g[1] + 0.2).abs() < 1e-16);

        let mut rng = SeededRng::new(1, 0);
        let fig = fig_params(&mut rng);
        let x = [0.12, -0.31];
        let r1: f64 = (x[0] - fig.mu1[0]).powi(2) + (x[1] - fig.mu1[1]).powi(2);
        let r2: f64 = (x[0] - fig.mu2[0]).powi(2) + (x[1] - fig.mu2[1]).powi(2);
        let oracle = 0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.005 * (-r1 / 0.02).exp() - 0.005 * (-r2 / 0.02).exp();
        assert!((attraction_repulsion_potential(&x, &fig) - oracle).abs() < 1e-15);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = SeededRng::new(2, 0);
        let p = AttractionRepulsionParams {
            alpha1: 0.05,
            alpha2: 0.03,
            mu1: vec![0.1, 0.05],
            mu2: vec![-0.1, 0.0],
            sigma1: 0.1,
            sigma2: 0.15,
        };
        let h = 1e-5;
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen::<f64>() - 0.5).collect();
            let g = attraction_repulsion_gradient(&x, &p);
            let hess = attraction_repulsion_hessian(&x, &p);
            for a in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += h;
                xm[a] -= h;
                let fd = (attraction_repulsion_potential(&xp, &p) - attraction_repulsion_potential(&xm, &p)) / (2.0 * h);
                assert!((fd - g[a]).abs() <= 1e-6 * g[a].abs().max(1e-3));
                let gp = attraction_repulsion_gradient(&xp, &p);
                let gm = attraction_repulsion_gradient(&xm, &p);
                for b in 0..2 {
                    assert!(((gp[b] - gm[b]) / (2.0 * h) - hess[b * 2 + a]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn small_bumps_keep_strong_convexity() {
        let mut rng = SeededRng::new(3, 0);
        let p = fig_params(&mut rng);
        // A bump alpha N(x | mu, sigma) adds eigenvalues alpha/sigma^2 e^{-t/2} (t - 1)
        // and -alpha/sigma^2 e^{-t/2}, t = r^2/sigma^2, which lie in
        // [-alpha/sigma^2, 2 e^{-3/2} alpha/sigma^2]. The repulsive bump flips the sign.
        let margin = 0.005 / 0.01 * (1.0 + 2.0 * (-1.5f64).exp());
        assert!(margin < 1.0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen::<f64>() - 0.5).collect();
            let h = attraction_repulsion_hessian(&x, &p);
            let m = nalgebra::Matrix2::new(h[0], h[1], h[2], h[3]);
            for ev in m.symmetric_eigenvalues().iter() {
                assert!((ev - 1.0).abs() <= margin, "{ev}");
            }
        }
    }

    #[test]
    fn sampling_examples() {
        let model = AttractionRepulsionModel::default();
        let a = sample_random_params(&mut SeededRng::new(5, 1), 2, &model).unwrap();
        let b = sample_random_params(&mut SeededRng::new(5, 1), 2, &model).unwrap();
        assert_eq!(a, b);
        let flat = AttractionRepulsionModel { sigma: 0.0, ..model };
        let z = sample_random_params(&mut SeededRng::new(5, 1), 2, &flat).unwrap();
        assert_eq!(z.mu1, vec![0.0, 0.0]);
        assert_eq!(z.mu2, vec![0.0, 0.0]);

        let mut rng = SeededRng::new(6, 0);
        let draws = 10_000;
        let mut mean = [0.0; 2];
        for _ in 0..draws {
            let p = sample_random_params(&mut rng, 2, &model).unwrap();
            mean[0] += p.mu1[0] / draws as f64;
            mean[1] += p.mu1[1] / draws as f64;
        }
        for m in mean {
            assert!(m.abs() <= 3.0 * model.sigma / 100.0, "{m}");
        }
    }

    #[test]
    fn discretize_examples() {
        let spec = GridSpec::uniform(-0.5, 0.5, 7, 2).unwrap();
        let c = discretize(|_| 2.5, &spec).unwrap();
        assert!(c.values().iter().all(|&v| v == 2.5));
        let q = discretize(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]), &spec).unwrap();
        for i in [0, 17, 48] {
            let p = spec.point(i);
            assert_eq!(q.get(i).unwrap(), 0.5 * (p[0] * p[0] + p[1] * p[1]));
        }
        let params = fig_params(&mut SeededRng::new(4, 0));
        let f = discretize(|x| attraction_repulsion_potential(x, &params), &spec).unwrap();
        for i in 0..spec.len() {
            assert_eq!(crate::grid::eval_potential(&f, i).unwrap(), attraction_repulsion_potential(&spec.point(i), &params));
        }
    }

    #[test]
    fn discretized_gradient_converges() {
        let params = AttractionRepulsionParams {
            alpha1: 0.005,
            alpha2: 0.005,
            mu1: vec![0.05, -0.1],
            mu2: vec![-0.12, 0.08],
            sigma1: 0.1,
            sigma2: 0.1,
        };
        let mut last = f64::INFINITY;
        for m in [16, 32, 64] {
            let spec = GridSpec::uniform(-0.5, 0.5, m, 2).unwrap();
            let f = discretize(|x| attraction_repulsion_potential(x, &params), &spec).unwrap();
            let field = crate::grid::finite_diff_gradient(&f);
            let mut err: f64 = 0.0;
            for i in 0..spec.len() {
                let mi = spec.multi_index(i);
                if mi.iter().any(|&k| k == 0 || k == m - 1) {
                    continue;
                }
                let g = attraction_repulsion_gradient(&spec.point(i), &params);
                for a in 0..2 {
                    err = err.max((field.vector(i)[a] - g[a]).abs());
                }
            }
            assert!(err < last, "m={m}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn family_generation() {
        let spec = GridSpec::uniform(-0.5, 0.5, 8, 2).unwrap();
        let model = AttractionRepulsionModel::default();
        let truth = fig_params(&mut SeededRng::new(9, 0));
        let one = generate_family(&mut SeededRng::new(1, 0), 1, &model, &spec, FamilyMode::DecoysOnly, None).unwrap();
        assert_eq!(one.len(), 1);

        let fam = generate_family(&mut SeededRng::new(1, 0), 50, &model, &spec, FamilyMode::IncludeTrue, Some(&truth))
            .unwrap();
        assert_eq!(fam.len(), 50);
        match &fam.labels()[0] {
            CandidateLabel::AttractionRepulsion { params, provenance } => {
                assert_eq!(params, &truth);
                assert_eq!(*provenance, Provenance::Truth);
            }
            other => panic!("{other:?}"),
        }
        let mut centers: Vec<Vec<f64>> = fam
            .labels()
            .iter()
            .map(|l| match l {
                CandidateLabel::AttractionRepulsion { params, .. } => params.mu1.clone(),
                _ => unreachable!(),
            })
            .collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        centers.dedup();
        assert_eq!(centers.len(), 50);

        assert!(generate_family(&mut SeededRng::new(1, 0), 3, &model, &spec, FamilyMode::IncludeTrue, None).is_err());
        assert!(generate_family(&mut SeededRng::new(1, 0), 0, &model, &spec, FamilyMode::DecoysOnly, None).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("family.json");
        fam.save_labels(&path).unwrap();
        assert_eq!(CandidateFamily::load_labels(&path).unwrap(), fam);
    }

    #[test]
    fn family_rejects_mixed_grids() {
        let a = GridSpec::uniform(0.0, 1.0, 4, 1).unwrap();
        let b = GridSpec::uniform(0.0, 1.0, 5, 1).unwrap();
        let fa = discretize(|_| 0.0, &a).unwrap();
        let fb = discretize(|_| 0.0, &b).unwrap();
        let name = |s: &str| CandidateLabel::Named { name: s.into() };
        assert!(CandidateFamily::new(vec![fa.clone(), fb], vec![name("a"), name("b")]).is_err());
        assert!(CandidateFamily::new(vec![], vec![]).is_err());
        assert!(CandidateFamily::new(vec![fa], vec![]).is_err());
    }
}
