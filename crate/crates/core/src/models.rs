//! Synthetic data for the attraction/repulsion experiment, and the
//! quadratic-plus-bumps packing family with its distance and TV quadratures.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{attraction_repulsion_gradient, AttractionRepulsionParams};
use crate::dp::SeededRng;
use crate::error::{invalid, Error, Result};
use crate::grid::{BoxDomain, GridSpec};
use crate::semidual::Dataset;

/// Source `P` uniform on a box, target `Q` the pushforward of `P` by the
/// gradient of an attraction/repulsion potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentModel {
    pub true_params: AttractionRepulsionParams,
    pub domain: BoxDomain,
    pub n: usize,
}

impl ExperimentModel {
    pub fn validate(&self) -> Result<()> {
        self.true_params.validate()?;
        if self.true_params.dim() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain.dim(),
                got: self.true_params.dim(),
            });
        }
        if self.n < 1 {
            return Err(invalid("sample size must be at least 1"));
        }
        Ok(())
    }

    /// The true transport map.
    pub fn true_map(&self, x: &[f64]) -> Vec<f64> {
        attraction_repulsion_gradient(x, &self.true_params)
    }
}

/// Draws `n` source points `X_i ~ P` and, independently, `Y_i = T(U_i)` with
/// fresh `U_i ~ P`; both are clipped to `spec`.
pub fn generate_dataset(model: &ExperimentModel, spec: &GridSpec, rng: &mut SeededRng) -> Result<Dataset> {
    let (x, _, y) = generate_samples(model, rng)?;
    Dataset::from_flat(spec, x, y)
}

/// As [`generate_dataset`], also returning the latent `U` (flat, point-major).
pub fn generate_samples(model: &ExperimentModel, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    model.validate()?;
    let mut x = Vec::with_capacity(model.n * model.domain.dim());
    for _ in 0..model.n {
        x.extend(model.domain.sample_uniform(rng));
    }
    let mut u = Vec::with_capacity(x.len());
    for _ in 0..model.n {
        u.extend(model.domain.sample_uniform(rng));
    }
    let y = u
        .chunks(model.domain.dim())
        .flat_map(|p| model.true_map(p))
        .collect();
    Ok((x, u, y))
}

/// `B(t) = exp(-1/(1 - t^2))` on `(-1, 1)`, zero elsewhere.
pub fn bump_function(t: f64) -> f64 {
    bump_with_derivatives(t).0
}

/// `(B, B', B'')` at `t`.
pub fn bump_with_derivatives(t: f64) -> (f64, f64, f64) {
    if t.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let s = 1.0 - t * t;
    let b = (-1.0 / s).exp();
    let d1 = b * (-2.0 * t / (s * s));
    let d2 = b * (4.0 * t * t / s.powi(4) - 2.0 / (s * s) - 8.0 * t * t / s.powi(3));
    (b, d1, d2)
}

/// `psi(x) = a prod_i B(x_i / 2)`, supported on `[-2, 2]^d`.
pub fn packing_psi(x: &[f64], a: f64) -> f64 {
    a * x.iter().map(|&v| bump_function(v / 2.0)).product::<f64>()
}

/// Value, gradient and row-major Hessian of [`packing_psi`].
pub fn packing_psi_derivatives(x: &[f64], a: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let d = x.len();
    let parts: Vec<(f64, f64, f64)> = x
        .iter()
        .map(|&v| {
            let (b, b1, b2) = bump_with_derivatives(v / 2.0);
            (b, b1 / 2.0, b2 / 4.0)
        })
        .collect();
    let prod_except = |skip: &[usize]| -> f64 {
        (0..d)
            .filter(|i| !skip.contains(i))
            .map(|i| parts[i].0)
            .product()
    };
    let value = a * prod_except(&[]);
    let grad = (0..d).map(|i| a * parts[i].1 * prod_except(&[i])).collect();
    let mut hess = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            hess[i * d + j] = if i == j {
                a * parts[i].2 * prod_except(&[i])
            } else {
                a * parts[i].1 * parts[j].1 * prod_except(&[i, j])
            };
        }
    }
    (value, grad, hess)
}

/// `sup ||Hess psi||_op` for `a = 1`, sampled on a fine grid over `[-2, 2]^d`.
pub fn psi_hessian_sup(d: usize) -> f64 {
    let per_axis: usize = match d {
        1 => 4001,
        2 => 401,
        _ => 61,
    };
    let total = per_axis.pow(d as u32);
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rest = idx;
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    let k = rest % per_axis;
                    rest /= per_axis;
                    -2.0 + 4.0 * k as f64 / (per_axis - 1) as f64
                })
                .collect();
            let (_, _, h) = packing_psi_derivatives(&x, 1.0);
            if d == 1 {
                h[0].abs()
            } else {
                nalgebra::DMatrix::from_row_slice(d, d, &h)
                    .symmetric_eigenvalues()
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            }
        })
        .reduce(|| 0.0, f64::max)
}

/// Amplitude keeping `h^{alpha-1} ||Hess psi||_op <= 1/2` for every `h <= 1`, `alpha >= 1`.
pub fn default_amplitude(d: usize) -> f64 {
    0.5 / psi_hessian_sup(d)
}

/// The packing potential `||x||^2/2 + h^{alpha+1} sum_i theta_i psi((x - p_i)/h)`
/// with centers `p_i = k / (m + 1)`, `k in {1..m}^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSpec {
    pub m: usize,
    pub h: f64,
    pub a: f64,
    pub alpha: f64,
    pub d: usize,
    /// One bit per center, centers in row-major order of `k`.
    pub theta: Vec<bool>,
}

impl PackingSpec {
    pub fn new(m: usize, h: f64, a: f64, alpha: f64, d: usize, theta: Vec<bool>) -> Result<Self> {
        let s = Self { m, h, a, alpha, d, theta };
        s.validate()?;
        Ok(s)
    }

    /// Each bump occupies `B_inf(p_i, 2h)`; supports are disjoint and inside
    /// the unit cube when `h < 1/(4(m+1))`.
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.d < 1 {
            return Err(invalid("packing needs m >= 1 and d >= 1"));
        }
        let limit = 1.0 / (4.0 * (self.m + 1) as f64);
        if !(self.h > 0.0 && self.h < limit) {
            return Err(invalid(format!("bandwidth must lie in (0, {limit}), got {}", self.h)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(invalid("amplitude must be positive"));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(invalid("smoothness must be at least 1"));
        }
        let n = self.centers_len();
        if self.theta.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.theta.len(),
            });
        }
        Ok(())
    }

    pub fn centers_len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        let mut rest = i;
        let mut p = vec![0.0; self.d];
        for a in (0..self.d).rev() {
            p[a] = ((rest % self.m) + 1) as f64 / (self.m + 1) as f64;
            rest /= self.m;
        }
        p
    }

    /// The only center whose bump can be nonzero at `x`, if any.
    fn active_center(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for &v in x {
            let k = (v * (self.m + 1) as f64).round();
            if k < 1.0 || k > self.m as f64 {
                return None;
            }
            idx = idx * self.m + (k as usize - 1);
        }
        let p = self.center(idx);
        let inside = x.iter().zip(&p).all(|(v, c)| (v - c).abs() < 2.0 * self.h);
        inside.then_some(idx)
    }

    pub fn with_theta(&self, theta: Vec<bool>) -> Result<Self> {
        Self::new(self.m, self.h, self.a, self.alpha, self.d, theta)
    }

    /// Value, gradient and row-major Hessian of the packing potential at `x`.
    pub fn derivatives(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mut value = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let mut grad = x.to_vec();
        let mut hess = vec![0.0; d * d];
        for a in 0..d {
            hess[a * d + a] = 1.0;
        }
        if let Some(i) = self.active_center(x) {
            if self.theta[i] {
                let p = self.center(i);
                let u: Vec<f64> = x.iter().zip(&p).map(|(v, c)| (v - c) / self.h).collect();
                let (pv, pg, ph) = packing_psi_derivatives(&u, self.a);
                value += self.h.powf(self.alpha + 1.0) * pv;
                let gs = self.h.powf(self.alpha);
                grad.iter_mut().zip(&pg).for_each(|(g, v)| *g += gs * v);
                let hs = self.h.powf(self.alpha - 1.0);
                hess.iter_mut().zip(&ph).for_each(|(g, v)| *g += hs * v);
            }
        }
        (value, grad, hess)
    }
}

pub fn packing_potential(x: &[f64], spec: &PackingSpec) -> f64 {
    spec.derivatives(x).0
}

pub fn packing_gradient(x: &[f64], spec: &PackingSpec) -> Vec<f64> {
    spec.derivatives(x).1
}

pub fn hamming(theta1: &[bool], theta2: &[bool]) -> usize {
    theta1.iter().zip(theta2).filter(|(a, b)| a != b).count()
}

fn check_pair(s1: &PackingSpec, s2: &PackingSpec, cells_per_h: usize) -> Result<()> {
    s1.validate()?;
    s2.validate()?;
    if s1.m != s2.m || s1.h != s2.h || s1.a != s2.a || s1.alpha != s2.alpha || s1.d != s2.d {
        return Err(invalid("packing potentials must share m, h, a, alpha and d"));
    }
    if cells_per_h < 8 {
        return Err(invalid(format!(
            "quadrature needs at least 8 cells per bandwidth, got {cells_per_h}"
        )));
    }
    Ok(())
}

/// Midpoint-rule integral of `g` over `B_inf(center, 2h)` with
/// `cells_per_h` cells per bandwidth along each axis, summed pairwise.
fn integrate_ball<G>(center: &[f64], h: f64, cells_per_h: usize, g: G) -> f64
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let d = center.len();
    let per_axis = 4 * cells_per_h;
    let w = h / cells_per_h as f64;
    let total = per_axis.pow(d as u32);
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rest = idx;
            let mut x = vec![0.0; d];
            for a in (0..d).rev() {
                let k = rest % per_axis;
                rest /= per_axis;
                x[a] = center[a] - 2.0 * h + (k as f64 + 0.5) * w;
            }
            g(&x)
        })
        .collect();
    pairwise_sum(&values) * w.powi(d as i32)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// `int_{[0,1]^d} ||grad phi_1 - grad phi_2||^2 dx` by midpoint quadrature
/// over the supports of the bumps where the two bit vectors differ (the
/// integrand vanishes elsewhere).
pub fn packing_pairwise_distance(s1: &PackingSpec, s2: &PackingSpec, cells_per_h: usize) -> Result<f64> {
    check_pair(s1, s2, cells_per_h)?;
    let mut total = 0.0;
    for i in 0..s1.centers_len() {
        if s1.theta[i] == s2.theta[i] {
            continue;
        }
        total += integrate_ball(&s1.center(i), s1.h, cells_per_h, |x| {
            let g1 = packing_gradient(x, s1);
            let g2 = packing_gradient(x, s2);
            g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum()
        });
    }
    Ok(total)
}

/// Total variation between the pushforwards of the uniform law on `[0, 1]`
/// by `phi_1'` and `phi_2'` (d = 1).
///
/// Each gradient maps every bump ball onto itself, so the densities differ
/// only inside balls with differing bits. There one density is 1 and the
/// other is `1/phi''(x)` at `y = phi'(x)`; changing variables gives
/// `1/2 int |phi''(x) - 1| dx` over the ball for the potential whose bit is set.
pub fn packing_tv_distance_1d(s1: &PackingSpec, s2: &PackingSpec, cells_per_h: usize) -> Result<f64> {
    check_pair(s1, s2, cells_per_h)?;
    if s1.d != 1 {
        return Err(invalid("total variation quadrature is implemented for d = 1 only"));
    }
    let mut total = 0.0;
    for i in 0..s1.centers_len() {
        if s1.theta[i] == s2.theta[i] {
            continue;
        }
        let on = if s1.theta[i] { s1 } else { s2 };
        total += integrate_ball(&on.center(i), on.h, cells_per_h, |x| (on.derivatives(x).2[0] - 1.0).abs());
    }
    Ok(0.5 * total)
}

/// Draws `n` points of the pushforward of the uniform law on `[0,1]^d` by `grad phi`.
pub fn sample_packing_pushforward(spec: &PackingSpec, n: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..spec.d).map(|_| rng.gen::<f64>()).collect();
            packing_gradient(&u, spec)
        })
        .collect()
}
