//! Map error under the source law, kernel density estimates on grids, and
//! the `(n, eps, seed)` sweep harness.

use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{
    attraction_repulsion_gradient, generate_family, sample_random_params, AttractionRepulsionModel, FamilyMode,
};
use crate::dp::{PrivacyBudget, SeededRng};
use crate::error::{invalid, Error, Result};
use crate::estimator::{fit_nonprivate, fit_private, FitConfig};
use crate::grid::{BoxDomain, GridPotential, GridSpec, GridVectorField};
use crate::models::{generate_dataset, ExperimentModel};
use crate::semidual::ClipConfig;

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// `n_mc` uniform draws from `domain`, flat and point-major.
pub fn sample_points(domain: &BoxDomain, n_mc: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_mc * domain.dim());
    for _ in 0..n_mc {
        out.extend(domain.sample_uniform(rng));
    }
    out
}

/// Mean of `||t_hat(x) - t_true(x)||^2` over the given points.
pub fn l2_error_on_points<A, B>(t_hat: A, t_true: B, points: &[f64], d: usize) -> Result<Estimate>
where
    A: Fn(&[f64]) -> Vec<f64> + Sync,
    B: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if points.is_empty() || points.len() % d != 0 {
        return Err(Error::Empty("evaluation points"));
    }
    let sq: Vec<f64> = points
        .par_chunks(d)
        .map(|x| {
            t_hat(x)
                .iter()
                .zip(t_true(x))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    let k = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / k;
    let var = if sq.len() > 1 {
        sq.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(Estimate {
        mean,
        std_err: (var / k).sqrt(),
    })
}

/// `int ||T_hat - T||^2 dP` with `P` uniform on `domain`, by Monte Carlo;
/// the grid map is evaluated off-grid by multilinear interpolation.
pub fn l2_error<B>(t_hat: &GridVectorField, t_true: B, domain: &BoxDomain, n_mc: usize, rng: &mut SeededRng) -> Result<Estimate>
where
    B: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if n_mc < 1 {
        return Err(invalid("need at least one Monte-Carlo point"));
    }
    let points = sample_points(domain, n_mc, rng);
    l2_error_on_points(|x| t_hat.interpolate(x), t_true, &points, domain.dim())
}

/// Scott's rule `sigma n^{-1/(d+4)}` with `sigma` the mean per-axis standard deviation.
pub fn scott_bandwidth(points: &[f64], d: usize) -> Result<f64> {
    let n = points.len() / d;
    if n < 2 {
        return Err(invalid("bandwidth rule needs at least two points"));
    }
    let mut sigma = 0.0;
    for a in 0..d {
        let mean = points.iter().skip(a).step_by(d).sum::<f64>() / n as f64;
        let var = points.iter().skip(a).step_by(d).map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        sigma += var.sqrt() / d as f64;
    }
    if sigma <= 0.0 {
        return Err(invalid("points have zero spread"));
    }
    Ok(sigma * (n as f64).powf(-1.0 / (d as f64 + 4.0)))
}

/// Gaussian product-kernel density estimate at every grid point. Kernel
/// contributions beyond six bandwidths are dropped.
pub fn kde_grid(points: &[f64], bandwidth: f64, spec: &GridSpec) -> Result<GridPotential> {
    let d = spec.dim();
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if points.is_empty() || points.len() % d != 0 {
        return Err(Error::Empty("points"));
    }
    let n = points.len() / d;
    let m = spec.points_per_axis();
    let coords: Vec<Vec<f64>> = (0..d).map(|a| spec.axis_coordinates(a)).collect();
    let reach = 6.0 * bandwidth;
    let norm = (2.0 * std::f64::consts::PI * bandwidth * bandwidth).powf(-(d as f64) / 2.0) / n as f64;
    let values = points
        .par_chunks(d)
        .fold(
            || vec![0.0; spec.len()],
            |mut acc, p| {
                // Per-axis kernel weights over the grid points within reach.
                let mut ranges = Vec::with_capacity(d);
                let mut weights = Vec::with_capacity(d);
                for a in 0..d {
                    let lo = coords[a].partition_point(|&c| c < p[a] - reach);
                    let hi = coords[a].partition_point(|&c| c <= p[a] + reach);
                    ranges.push((lo, hi));
                    weights.push(
                        (lo..hi)
                            .map(|k| {
                                let z = (coords[a][k] - p[a]) / bandwidth;
                                (-0.5 * z * z).exp()
                            })
                            .collect::<Vec<f64>>(),
                    );
                }
                if ranges.iter().any(|(lo, hi)| lo >= hi) {
                    return acc;
                }
                let mut k: Vec<usize> = ranges.iter().map(|r| r.0).collect();
                'outer: loop {
                    let mut w = norm;
                    let mut idx = 0;
                    for a in 0..d {
                        w *= weights[a][k[a] - ranges[a].0];
                        idx = idx * m + k[a];
                    }
                    acc[idx] += w;
                    let mut a = d;
                    loop {
                        if a == 0 {
                            break 'outer;
                        }
                        a -= 1;
                        k[a] += 1;
                        if k[a] < ranges[a].1 {
                            break;
                        }
                        k[a] = ranges[a].0;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0.0; spec.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    GridPotential::new(spec.clone(), values)
}

/// Trapezoid-rule integral of grid values over the box.
pub fn grid_integral(f: &GridPotential) -> f64 {
    let spec = f.spec();
    let m = spec.points_per_axis();
    let cell: f64 = (0..spec.dim()).map(|a| spec.step(a)).product();
    f.values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w: f64 = spec
                .multi_index(i)
                .iter()
                .map(|&k| if k == 0 || k == m - 1 { 0.5 } else { 1.0 })
                .product();
            w * v
        })
        .sum::<f64>()
        * cell
}

/// Fixed inputs of a sweep: model, grid, family and fitting constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSetup {
    pub model: AttractionRepulsionModel,
    pub domain: BoxDomain,
    pub grid: GridSpec,
    pub family_size: usize,
    pub family_mode: FamilyMode,
    pub clip: ClipConfig,
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub error_private: f64,
    pub error_nonprivate: f64,
    /// Error of the identity map, the zero-information baseline.
    pub error_identity: f64,
    /// Rank of the privately chosen member by raw score (0 is the best).
    pub chosen_rank: usize,
    pub chosen_private: usize,
    pub chosen_nonprivate: usize,
    pub runtime_secs: f64,
}

/// Stream ids under a run seed.
pub const STREAM_TRUTH: u64 = 0;
pub const STREAM_DATA: u64 = 1;
pub const STREAM_FAMILY: u64 = 2;
pub const STREAM_FIT: u64 = 3;
pub const STREAM_MC: u64 = 4;

/// A seed for a consumer that reseeds internally, drawn from `stream` of
/// `seed` so it does not replay another stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    SeededRng::new(seed, stream).next_u64()
}

/// One sweep cell. The truth, family and evaluation points depend on the
/// seed only, so cells sharing a seed differ only through `n` and `eps`.
pub fn run_cell(setup: &SweepSetup, n: usize, epsilon: f64, seed: u64) -> Result<SweepRow> {
    let start = Instant::now();
    let d = setup.domain.dim();
    let truth = sample_random_params(&mut SeededRng::new(seed, STREAM_TRUTH), d, &setup.model)?;
    let family = generate_family(
        &mut SeededRng::new(seed, STREAM_FAMILY),
        setup.family_size,
        &setup.model,
        &setup.grid,
        setup.family_mode,
        Some(&truth),
    )?;
    let model = ExperimentModel {
        true_params: truth,
        domain: setup.domain.clone(),
        n,
    };
    let data = generate_dataset(&model, &setup.grid, &mut SeededRng::new(seed, STREAM_DATA))?;
    let config = FitConfig {
        budget: PrivacyBudget::pure(epsilon)?,
        clip: setup.clip,
        seed: derive_seed(seed, STREAM_FIT),
        threads: None,
    };
    let private = fit_private(&data, &family, &config)?;
    let nonprivate = fit_nonprivate(&data, &family, &config)?;
    let points = sample_points(&setup.domain, setup.n_mc, &mut SeededRng::new(seed, STREAM_MC));
    let truth_map = |x: &[f64]| attraction_repulsion_gradient(x, &model.true_params);
    let err = |field: &GridVectorField| l2_error_on_points(|x| field.interpolate(x), truth_map, &points, d);
    let error_private = err(&private.chosen_map)?.mean;
    let error_nonprivate = err(&nonprivate.chosen_map)?.mean;
    let error_identity = l2_error_on_points(|x| x.to_vec(), truth_map, &points, d)?.mean;
    let raw = &private.diagnostics.as_ref().expect("fresh fit").raw_scores;
    let chosen_rank = raw.iter().filter(|&&s| s < raw[private.chosen_index]).count();
    Ok(SweepRow {
        n,
        epsilon,
        seed,
        error_private,
        error_nonprivate,
        error_identity,
        chosen_rank,
        chosen_private: private.chosen_index,
        chosen_nonprivate: nonprivate.chosen_index,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs every `(n, eps, seed)` cell in parallel; rows come back in
/// `n`-major, then `eps`, then seed order.
pub fn run_sweep(setup: &SweepSetup, n_values: &[usize], epsilons: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if n_values.is_empty() || epsilons.is_empty() || seeds.is_empty() {
        return Err(invalid("sweep ranges must be nonempty"));
    }
    let cells: Vec<(usize, f64, u64)> = n_values
        .iter()
        .flat_map(|&n| epsilons.iter().flat_map(move |&e| seeds.iter().map(move |&s| (n, e, s))))
        .collect();
    cells
        .par_iter()
        .map(|&(n, e, s)| run_cell(setup, n, e, s))
        .collect()
}

/// Median of a nonempty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset_error_is_exact() {
        let spec = GridSpec::uniform(-0.5, 0.5, 9, 2).unwrap();
        let field = GridVectorField::from_fn(&spec, |x| vec![x[0] + 0.3, x[1] - 0.4]).unwrap();
        let dom = spec.domain().clone();
        let e = l2_error(&field, |x| x.to_vec(), &dom, 1000, &mut SeededRng::new(1, 0)).unwrap();
        assert!((e.mean - 0.25).abs() < 1e-12);
        assert!(e.std_err < 1e-12);
    }

    #[test]
    fn discretized_truth_has_small_error() {
        let params = crate::candidates::AttractionRepulsionParams {
            alpha1: 0.005,
            alpha2: 0.005,
            mu1: vec![0.1, 0.0],
            mu2: vec![-0.1, 0.05],
            sigma1: 0.1,
            sigma2: 0.1,
        };
        let spec = GridSpec::uniform(-0.5, 0.5, 64, 2).unwrap();
        let field = GridVectorField::from_fn(&spec, |x| attraction_repulsion_gradient(x, &params)).unwrap();
        let e = l2_error(&field, |x| attraction_repulsion_gradient(x, &params), spec.domain(), 20_000, &mut SeededRng::new(2, 0))
            .unwrap();
        assert!(e.mean <= 1e-4, "{}", e.mean);
    }

    #[test]
    fn error_is_rotation_invariant() {
        // Rotating P, T_hat and T by 90 degrees on the centered square leaves the law of the error unchanged.
        let spec = GridSpec::uniform(-0.5, 0.5, 33, 2).unwrap();
        let that = |x: &[f64]| vec![x[0] + 0.1 * x[1] * x[1], x[1] - 0.05 * x[0]];
        let t = |x: &[f64]| vec![x[0], x[1] + 0.02];
        let rot = |x: &[f64]| vec![-x[1], x[0]];
        let rot_inv = |x: &[f64]| vec![x[1], -x[0]];
        let field = GridVectorField::from_fn(&spec, that).unwrap();
        let rfield = GridVectorField::from_fn(&spec, |x| rot(&that(&rot_inv(x)))).unwrap();
        let dom = spec.domain().clone();
        let a = l2_error(&field, t, &dom, 200_000, &mut SeededRng::new(3, 0)).unwrap();
        let b = l2_error(&rfield, |x| rot(&t(&rot_inv(x))), &dom, 200_000, &mut SeededRng::new(4, 0)).unwrap();
        let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() <= 4.0 * se, "{a:?} {b:?}");
    }

    #[test]
    fn kde_examples() {
        let spec = GridSpec::uniform(0.0, 1.0, 41, 2).unwrap();
        let single = kde_grid(&[0.5, 0.5], 0.1, &spec).unwrap();
        let center = spec.linear_index(&[20, 20]).unwrap();
        let peak = single.values()[center];
        assert_eq!(
            single.values().iter().copied().fold(f64::NEG_INFINITY, f64::max),
            peak
        );
        let a = single.values()[spec.linear_index(&[15, 20]).unwrap()];
        let b = single.values()[spec.linear_index(&[25, 20]).unwrap()];
        let c = single.values()[spec.linear_index(&[20, 25]).unwrap()];
        assert!((a - b).abs() < 1e-12 * peak && (a - c).abs() < 1e-12 * peak);
        assert!((grid_integral(&single) - 1.0).abs() < 0.02);

        let wide = kde_grid(&[0.5, 0.5], 0.2, &spec).unwrap();
        assert!(wide.sup_norm() < single.sup_norm());
        assert!(kde_grid(&[0.5, 0.5], 0.0, &spec).is_err());

        let mut rng = SeededRng::new(5, 0);
        let pts = sample_points(spec.domain(), 100_000, &mut rng);
        let h = scott_bandwidth(&pts, 2).unwrap();
        let kde = kde_grid(&pts, h, &spec).unwrap();
        // Pointwise sd is about (n h^2 4 pi)^{-1/2}; check the interior mean
        // tightly and each cell within five of those.
        let sd = (1.0 / (1e5 * h * h * 4.0 * std::f64::consts::PI)).sqrt();
        let interior: Vec<f64> = (0..spec.len())
            .filter(|&i| spec.point(i).iter().all(|&v| (0.3..=0.7).contains(&v)))
            .map(|i| kde.values()[i])
            .collect();
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        for v in &interior {
            assert!((v - 1.0).abs() < 5.0 * sd, "{v} vs sd {sd}");
        }
    }

    fn tiny_setup() -> SweepSetup {
        let domain = BoxDomain::cube(-0.5, 0.5, 2).unwrap();
        SweepSetup {
            model: AttractionRepulsionModel::default(),
            grid: GridSpec::from_domain(domain.clone(), 12).unwrap(),
            domain,
            family_size: 8,
            family_mode: FamilyMode::IncludeTrue,
            clip: ClipConfig::new(0.25).unwrap(),
            n_mc: 2000,
        }
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let setup = tiny_setup();
        let rows = run_sweep(&setup, &[200], &[1.0], &[3]).unwrap();
        assert_eq!(rows.len(), 1);
        let rows = run_sweep(&setup, &[100, 200], &[0.5, 1.0], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 8);
        let again = run_sweep(&setup, &[100, 200], &[0.5, 1.0], &[1, 2]).unwrap();
        for (a, b) in rows.iter().zip(&again) {
            assert_eq!(SweepRow { runtime_secs: 0.0, ..a.clone() }, SweepRow { runtime_secs: 0.0, ..b.clone() });
            assert!(a.error_private >= 0.0 && a.error_nonprivate >= 0.0);
        }
        assert!(run_sweep(&setup, &[], &[1.0], &[1]).is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
