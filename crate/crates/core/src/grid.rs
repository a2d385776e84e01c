//! Uniform tensor grids over boxes, and potentials / vector fields stored on them.
//!
//! Linear indices are row-major: the first axis varies slowest. A point with
//! multi-index `(k_0, .., k_{d-1})` has linear index `sum_a k_a * m^(d-1-a)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An axis-aligned box `[lo_0, hi_0] x .. x [lo_{d-1}, hi_{d-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() {
            return Err(invalid("box dimension must be at least 1"));
        }
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (a, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite("box bounds"));
            }
            if l >= h {
                return Err(invalid(format!("axis {a}: lo {l} must be below hi {h}")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^d`.
    pub fn cube(lo: f64, hi: f64, d: usize) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&x, (&l, &h))| x >= l && x <= h)
    }

    /// A uniform draw from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| l + (h - l) * rng.gen::<f64>())
            .collect()
    }

    /// Sup of `||x||` over the box (the radius `|S|` of the domain).
    pub fn radius(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// A uniform grid with `m` points per axis over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    domain: BoxDomain,
    m: usize,
}

impl GridSpec {
    /// Builds a grid with `m` points per axis on `[lo, hi]` (per axis bounds).
    pub fn new(lo: &[f64], hi: &[f64], m: usize) -> Result<Self> {
        if m < 2 {
            return Err(invalid(format!("grid needs at least 2 points per axis, got {m}")));
        }
        let domain = BoxDomain::new(lo.to_vec(), hi.to_vec())?;
        let spec = Self { domain, m };
        spec.checked_len()?;
        Ok(spec)
    }

    /// The cube grid `[lo, hi]^d` with `m` points per axis.
    pub fn uniform(lo: f64, hi: f64, m: usize, d: usize) -> Result<Self> {
        if d < 1 {
            return Err(invalid("grid dimension must be at least 1"));
        }
        Self::new(&vec![lo; d], &vec![hi; d], m)
    }

    pub fn from_domain(domain: BoxDomain, m: usize) -> Result<Self> {
        Self::new(domain.lo(), domain.hi(), m)
    }

    fn checked_len(&self) -> Result<usize> {
        let mut total: usize = 1;
        for _ in 0..self.dim() {
            total = total
                .checked_mul(self.m)
                .ok_or_else(|| invalid("grid point count overflows usize"))?;
        }
        Ok(total)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    /// Total number of grid points, `m^d`.
    pub fn len(&self) -> usize {
        self.m.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn lo(&self) -> &[f64] {
        self.domain.lo()
    }

    pub fn hi(&self) -> &[f64] {
        self.domain.hi()
    }

    /// Grid spacing along `axis`.
    pub fn step(&self, axis: usize) -> f64 {
        (self.hi()[axis] - self.lo()[axis]) / (self.m - 1) as f64
    }

    /// Linear-index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.dim() - 1 - axis) as u32)
    }

    /// Coordinate of the `k`-th point along `axis`. The last point is `hi` exactly.
    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        let (lo, hi) = (self.lo()[axis], self.hi()[axis]);
        if k + 1 == self.m {
            hi
        } else {
            lo + (hi - lo) * (k as f64 / (self.m - 1) as f64)
        }
    }

    pub fn axis_coordinates(&self, axis: usize) -> Vec<f64> {
        (0..self.m).map(|k| self.coordinate(axis, k)).collect()
    }

    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        let mut rest = index;
        for a in (0..self.dim()).rev() {
            out[a] = rest % self.m;
            rest /= self.m;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: multi.len(),
            });
        }
        let mut idx = 0;
        for &k in multi {
            if k >= self.m {
                return Err(Error::IndexOutOfRange { index: k, len: self.m });
            }
            idx = idx * self.m + k;
        }
        Ok(idx)
    }

    /// Writes the coordinates of grid point `index` into `out`.
    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        let mut rest = index;
        for a in (0..self.dim()).rev() {
            out[a] = self.coordinate(a, rest % self.m);
            rest /= self.m;
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(index, &mut p);
        p
    }

    /// Index of the grid point closest (Euclidean) to `p`.
    ///
    /// Points outside the box are clamped coordinate-wise first. Ties go to
    /// the smallest linear index.
    pub fn clip(&self, p: &[f64]) -> Result<usize> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("point to clip"));
        }
        // The squared distance is separable and the minimizer set is a product
        // of per-axis minimizer sets, so choosing the smaller k on each axis
        // yields the smallest linear index among all minimizers.
        let mut idx = 0;
        for (a, &x) in p.iter().enumerate() {
            let x = x.clamp(self.lo()[a], self.hi()[a]);
            let t = (x - self.lo()[a]) / self.step(a);
            let mut k = (t.floor().max(0.0) as usize).min(self.m - 1);
            if k + 1 < self.m {
                let below = (x - self.coordinate(a, k)).abs();
                let above = (self.coordinate(a, k + 1) - x).abs();
                if above < below {
                    k += 1;
                }
            }
            // `floor` can land one cell high through rounding; re-check downward.
            if k > 0 {
                let here = (x - self.coordinate(a, k)).abs();
                let below = (x - self.coordinate(a, k - 1)).abs();
                if below <= here {
                    k -= 1;
                }
            }
            idx = idx * self.m + k;
        }
        Ok(idx)
    }
}

/// Values of a potential at every point of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPotential {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridPotential {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential values"));
        }
        Ok(Self { spec, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn<F>(spec: &GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut p = vec![0.0; spec.dim()];
        let values = (0..spec.len())
            .map(|i| {
                spec.point_into(i, &mut p);
                f(&p)
            })
            .collect();
        Self::new(spec.clone(), values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: usize) -> Result<f64> {
        self.values.get(index).copied().ok_or(Error::IndexOutOfRange {
            index,
            len: self.values.len(),
        })
    }

    /// `max_i |f_i|` over grid values.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `max_i |f_i - g_i|`; both potentials must share a grid.
    pub fn sup_distance(&self, other: &GridPotential) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch("potentials live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }
}

/// Stored value lookup; rejects out-of-range indices.
pub fn eval_potential(f: &GridPotential, index: usize) -> Result<f64> {
    f.get(index)
}

/// A d-vector at every grid point, stored point-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridVectorField {
    spec: GridSpec,
    vectors: Vec<f64>,
}

impl GridVectorField {
    pub fn new(spec: GridSpec, vectors: Vec<f64>) -> Result<Self> {
        let expected = spec.len() * spec.dim();
        if vectors.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: vectors.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field"));
        }
        Ok(Self { spec, vectors })
    }

    pub fn from_fn<F>(spec: &GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let d = spec.dim();
        let mut p = vec![0.0; d];
        let mut vectors = Vec::with_capacity(spec.len() * d);
        for i in 0..spec.len() {
            spec.point_into(i, &mut p);
            let v = f(&p);
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            vectors.extend_from_slice(&v);
        }
        Self::new(spec.clone(), vectors)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        let d = self.spec.dim();
        &self.vectors[index * d..(index + 1) * d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.vectors
    }

    /// Multilinear interpolation at `x`; points outside the box are clamped.
    pub fn interpolate(&self, x: &[f64]) -> Vec<f64> {
        let d = self.spec.dim();
        let m = self.spec.points_per_axis();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let xa = x[a].clamp(self.spec.lo()[a], self.spec.hi()[a]);
            let t = (xa - self.spec.lo()[a]) / self.spec.step(a);
            let k = (t.floor().max(0.0) as usize).min(m - 2);
            base[a] = k;
            frac[a] = (t - k as f64).clamp(0.0, 1.0);
        }
        let mut out = vec![0.0; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..d {
                let bit = (corner >> (d - 1 - a)) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx = idx * m + base[a] + bit;
            }
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.vector(idx)) {
                *o += w * v;
            }
        }
        out
    }
}

/// Finite-difference gradient: central differences in the interior and
/// one-sided first-order differences on the boundary faces.
pub fn finite_diff_gradient(f: &GridPotential) -> GridVectorField {
    let spec = f.spec();
    let d = spec.dim();
    let m = spec.points_per_axis();
    let vals = f.values();
    let mut vectors = vec![0.0; spec.len() * d];
    for i in 0..spec.len() {
        let multi = spec.multi_index(i);
        for a in 0..d {
            let s = spec.stride(a);
            let h = spec.step(a);
            let k = multi[a];
            vectors[i * d + a] = if k == 0 {
                (vals[i + s] - vals[i]) / h
            } else if k == m - 1 {
                (vals[i] - vals[i - s]) / h
            } else {
                (vals[i + s] - vals[i - s]) / (2.0 * h)
            };
        }
    }
    GridVectorField {
        spec: spec.clone(),
        vectors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_scale_grid_has_4096_points() {
        let g = GridSpec::uniform(-0.5, 0.5, 64, 2).unwrap();
        assert_eq!(g.len(), 4096);
        assert_eq!(g.point(0), vec![-0.5, -0.5]);
        assert_eq!(g.point(4095), vec![0.5, 0.5]);
    }

    #[test]
    fn endpoint_only_grid() {
        let g = GridSpec::uniform(0.0, 1.0, 2, 1).unwrap();
        assert_eq!(g.axis_coordinates(0), vec![0.0, 1.0]);
    }

    #[test]
    fn center_of_three_by_three() {
        let g = GridSpec::uniform(0.0, 1.0, 3, 2).unwrap();
        assert_eq!(g.len(), 9);
        let idx = g.linear_index(&[1, 1]).unwrap();
        assert_eq!(g.point(idx), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::uniform(0.0, 1.0, 1, 2).is_err());
        assert!(GridSpec::uniform(0.0, 1.0, 4, 0).is_err());
        assert!(GridSpec::uniform(1.0, 1.0, 4, 2).is_err());
        assert!(GridSpec::new(&[0.0, 2.0], &[1.0, 1.0], 4).is_err());
    }

    #[test]
    fn clip_exact_midpoint_and_outside() {
        let g = GridSpec::uniform(0.0, 1.0, 3, 1).unwrap();
        assert_eq!(g.clip(&[0.5]).unwrap(), 1);
        // midpoint of points 0 and 1 goes to the smaller index
        assert_eq!(g.clip(&[0.25]).unwrap(), 0);
        assert_eq!(g.clip(&[0.75]).unwrap(), 1);
        assert_eq!(g.clip(&[0.7500001]).unwrap(), 2);

        let g2 = GridSpec::uniform(-0.5, 0.5, 8, 2).unwrap();
        assert_eq!(g2.clip(&[100.0, -100.0]).unwrap(), g2.linear_index(&[7, 0]).unwrap());
        assert_eq!(g2.clip(&[-7.0, -7.0]).unwrap(), 0);
        assert!(g2.clip(&[f64::NAN, 0.0]).is_err());
        assert!(g2.clip(&[0.0]).is_err());
    }

    #[test]
    fn eval_round_trips() {
        let g = GridSpec::uniform(0.0, 1.0, 4, 2).unwrap();
        let f = GridPotential::from_fn(&g, |x| x[0] + 10.0 * x[1]).unwrap();
        for idx in [0, 5, 15] {
            let p = g.point(idx);
            assert_eq!(eval_potential(&f, idx).unwrap(), p[0] + 10.0 * p[1]);
        }
        assert!(matches!(
            eval_potential(&f, 16),
            Err(Error::IndexOutOfRange { index: 16, len: 16 })
        ));
    }

    #[test]
    fn gradient_exact_on_affine() {
        let g = GridSpec::uniform(-1.0, 2.0, 7, 2).unwrap();
        let f = GridPotential::from_fn(&g, |x| 0.75 * x[0] - 2.0 * x[1] + 3.0).unwrap();
        let grad = finite_diff_gradient(&f);
        for i in 0..g.len() {
            let v = grad.vector(i);
            assert!((v[0] - 0.75).abs() < 1e-12 && (v[1] + 2.0).abs() < 1e-12);
        }
        let zero = GridPotential::new(g.clone(), vec![0.0; g.len()]).unwrap();
        assert!(finite_diff_gradient(&zero).as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_exact_on_quadratic_interior() {
        let g = GridSpec::uniform(-0.5, 0.5, 64, 2).unwrap();
        let f = GridPotential::from_fn(&g, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
        let grad = finite_diff_gradient(&f);
        for i in 0..g.len() {
            let k = g.multi_index(i);
            if k.iter().any(|&k| k == 0 || k == 63) {
                continue;
            }
            let p = g.point(i);
            for a in 0..2 {
                assert!((grad.vector(i)[a] - p[a]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let g = GridSpec::uniform(0.0, 1.0, 5, 2).unwrap();
        let field = GridVectorField::from_fn(&g, |x| vec![x[0] + 2.0 * x[1], -x[1]]).unwrap();
        let v = field.interpolate(&[0.33, 0.71]);
        assert!((v[0] - (0.33 + 1.42)).abs() < 1e-12);
        assert!((v[1] + 0.71).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn index_bijection(m in 2usize..7, d in 1usize..4, seed in 0usize..10_000) {
            let g = GridSpec::uniform(0.0, 1.0, m, d).unwrap();
            let i = seed % g.len();
            prop_assert_eq!(g.linear_index(&g.multi_index(i)).unwrap(), i);
        }

        #[test]
        fn clip_is_idempotent_on_grid_points(m in 2usize..9, d in 1usize..4, seed in 0usize..10_000) {
            let g = GridSpec::uniform(-1.0, 2.0, m, d).unwrap();
            let i = seed % g.len();
            prop_assert_eq!(g.clip(&g.point(i)).unwrap(), i);
        }

        #[test]
        fn clip_returns_a_nearest_point(x in -1.5f64..1.5, y in -1.5f64..1.5) {
            let g = GridSpec::uniform(-1.0, 1.0, 6, 2).unwrap();
            let idx = g.clip(&[x, y]).unwrap();
            let cx = x.clamp(-1.0, 1.0);
            let cy = y.clamp(-1.0, 1.0);
            let dist = |i: usize| {
                let p = g.point(i);
                (p[0] - cx).powi(2) + (p[1] - cy).powi(2)
            };
            let best = (0..g.len()).map(dist).fold(f64::INFINITY, f64::min);
            prop_assert!(dist(idx) <= best + 1e-15);
        }
    }
}
