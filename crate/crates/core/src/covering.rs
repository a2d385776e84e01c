//! Tensor-product wavelet spaces `V_J` on a box, coefficient-grid coverings
//! of their bounded balls, admissibility screening and resolution choice.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::PrivacyBudget;
use crate::error::{invalid, Error, Result};
use crate::grid::{finite_diff_gradient, BoxDomain, GridPotential, GridSpec};

/// Compactly supported orthonormal scaling/wavelet pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Piecewise constant; support `[0, 1]`; coarsest level 0.
    #[default]
    Haar,
    /// Four-tap Daubechies pair; support `[0, 3]`; coarsest level 2.
    Daubechies4,
}

/// Dyadic resolution of the tabulated Daubechies functions.
const D4_LEVEL: u32 = 14;

struct D4Tables {
    phi: Vec<f64>,
    psi: Vec<f64>,
}

fn d4_coefficients() -> [f64; 4] {
    let s = 3f64.sqrt();
    [(1.0 + s) / 4.0, (3.0 + s) / 4.0, (3.0 - s) / 4.0, (1.0 - s) / 4.0]
}

/// Values of the Daubechies scaling function and wavelet at `i / 2^D4_LEVEL`
/// on `[0, 3]`, by the cascade (two-scale) recursion from the integer values.
fn d4_tables() -> &'static D4Tables {
    static TABLES: OnceLock<D4Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let c = d4_coefficients();
        let s = 3f64.sqrt();
        let top = 3usize << D4_LEVEL;
        let mut phi = vec![0.0; top + 1];
        let unit = 1usize << D4_LEVEL;
        phi[unit] = (1.0 + s) / 2.0;
        phi[2 * unit] = (1.0 - s) / 2.0;
        // phi(x) = sum_k c_k phi(2x - k): fill odd multiples of 2^-l from level l - 1.
        for level in 1..=D4_LEVEL {
            let step = 1usize << (D4_LEVEL - level);
            for i in (step..top).step_by(2 * step) {
                let mut v = 0.0;
                for (k, ck) in c.iter().enumerate() {
                    let arg = 2 * i as i64 - (k * unit) as i64;
                    if arg > 0 && (arg as usize) < top {
                        v += ck * phi[arg as usize];
                    }
                }
                phi[i] = v;
            }
        }
        // psi(x) = sum_k (-1)^k c_{3-k} phi(2x - k).
        let psi = (0..=top)
            .map(|i| {
                let mut v = 0.0;
                for k in 0..4 {
                    let arg = 2 * i as i64 - (k * unit) as i64;
                    if arg > 0 && (arg as usize) < top {
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        v += sign * c[3 - k] * phi[arg as usize];
                    }
                }
                v
            })
            .collect();
        D4Tables { phi, psi }
    })
}

fn table_lookup(table: &[f64], t: f64) -> f64 {
    let top = (table.len() - 1) as f64;
    let s = t * (1u64 << D4_LEVEL) as f64;
    if !(s > 0.0 && s < top) {
        return 0.0;
    }
    let i = s.floor() as usize;
    let w = s - i as f64;
    if w == 0.0 {
        table[i]
    } else {
        (1.0 - w) * table[i] + w * table[i + 1]
    }
}

impl Generator {
    /// Length `S` of the support `[0, S]` of both functions.
    pub fn support_length(&self) -> usize {
        match self {
            Self::Haar => 1,
            Self::Daubechies4 => 3,
        }
    }

    /// Coarsest level at which a scaling function fits in the unit interval.
    pub fn base_level(&self) -> u32 {
        match self {
            Self::Haar => 0,
            Self::Daubechies4 => 2,
        }
    }

    /// Hölder regularity of the generator (approximate for Daubechies).
    pub fn smoothness(&self) -> f64 {
        match self {
            Self::Haar => 0.0,
            Self::Daubechies4 => 0.55,
        }
    }

    /// Father (`mother == false`) or mother function at `t`.
    pub fn eval(&self, mother: bool, t: f64) -> f64 {
        match self {
            Self::Haar => {
                if !(0.0..1.0).contains(&t) {
                    0.0
                } else if !mother || t < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Daubechies4 => {
                let tables = d4_tables();
                table_lookup(if mother { &tables.psi } else { &tables.phi }, t)
            }
        }
    }

    /// Number of shifts `k` at level `j` whose support `[k, k + S] / 2^j` fits in `[0, 1]`.
    pub fn shifts(&self, j: u32) -> usize {
        (1usize << j) + 1 - self.support_length()
    }
}

/// One-dimensional atom `2^{j/2} g(2^j u - k)` on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub level: u32,
    pub mother: bool,
    pub shift: usize,
}

impl Atom {
    fn eval(&self, generator: Generator, u: f64) -> f64 {
        let scale = (1u64 << self.level) as f64;
        generator.eval(self.mother, scale * u - self.shift as f64) * scale.sqrt()
    }

    fn support(&self, generator: Generator) -> (f64, f64) {
        let scale = (1u64 << self.level) as f64;
        let k = self.shift as f64;
        (k / scale, (k + generator.support_length() as f64) / scale)
    }
}

/// The basis of `V_J`: tensor-product scaling functions at the base level and
/// wavelets at `J` further levels, restricted to functions supported in the box.
///
/// Functions are ordered by level, then type `g in {0,1}^d` (the all-father
/// block first), then shift in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletBasisSpec {
    generator: Generator,
    resolution: u32,
    domain: BoxDomain,
    atoms: Vec<Atom>,
    /// Per basis function, the atom index along each axis.
    functions: Vec<Vec<usize>>,
}

fn product_indices(counts: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0; counts.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for a in (0..counts.len()).rev() {
            cur[a] += 1;
            if cur[a] < counts[a] {
                break;
            }
            cur[a] = 0;
        }
    }
    out
}

impl WaveletBasisSpec {
    pub fn new(generator: Generator, resolution: u32, domain: BoxDomain) -> Result<Self> {
        if resolution > 16 {
            return Err(invalid(format!("resolution {resolution} is beyond desk scale")));
        }
        let d = domain.dim();
        let j0 = generator.base_level();
        let mut atoms = Vec::new();
        // atom_start[j - j0][mother] is the first atom index of that (level, kind).
        let mut atom_start = Vec::new();
        for j in j0..=j0 + resolution {
            let mut starts = [0usize; 2];
            for (t, mother) in [false, true].into_iter().enumerate() {
                starts[t] = atoms.len();
                for shift in 0..generator.shifts(j) {
                    atoms.push(Atom { level: j, mother, shift });
                }
            }
            atom_start.push(starts);
        }
        let mut functions = Vec::new();
        let mut push_block = |j: u32, g: usize| {
            let kinds: Vec<usize> = (0..d).map(|a| (g >> (d - 1 - a)) & 1).collect();
            let counts = vec![generator.shifts(j); d];
            for shifts in product_indices(&counts) {
                functions.push(
                    (0..d)
                        .map(|a| atom_start[(j - j0) as usize][kinds[a]] + shifts[a])
                        .collect(),
                );
            }
        };
        push_block(j0, 0);
        for j in j0..j0 + resolution {
            for g in 1..(1usize << d) {
                push_block(j, g);
            }
        }
        Ok(Self {
            generator,
            resolution,
            domain,
            atoms,
            functions,
        })
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// `(level, type bits, shifts)` of basis function `i`.
    pub fn describe(&self, i: usize) -> (u32, Vec<bool>, Vec<usize>) {
        let atoms: Vec<Atom> = self.functions[i].iter().map(|&a| self.atoms[a]).collect();
        (
            atoms[0].level,
            atoms.iter().map(|a| a.mother).collect(),
            atoms.iter().map(|a| a.shift).collect(),
        )
    }

    fn unit_coordinate(&self, axis: usize, x: f64) -> f64 {
        let (lo, hi) = (self.domain.lo()[axis], self.domain.hi()[axis]);
        let u = (x - lo) / (hi - lo);
        // The right edge of the box belongs to the last cell.
        u.clamp(0.0, 1.0 - 1e-12)
    }

    fn normalization(&self) -> f64 {
        self.domain.volume().sqrt().recip()
    }

    /// Value of basis function `i` at `x`.
    pub fn evaluate(&self, i: usize, x: &[f64]) -> f64 {
        self.functions[i]
            .iter()
            .enumerate()
            .map(|(a, &atom)| self.atoms[atom].eval(self.generator, self.unit_coordinate(a, x[a])))
            .product::<f64>()
            * self.normalization()
    }

    fn check_coeffs(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: coeffs.len(),
            });
        }
        Ok(())
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid.domain() != &self.domain {
            return Err(Error::GridMismatch("grid box differs from the basis box".into()));
        }
        Ok(())
    }

    /// Per axis: atom values at each grid coordinate, and the index range
    /// of grid coordinates inside each atom's support.
    fn axis_tables(&self, grid: &GridSpec) -> Vec<(Vec<Vec<f64>>, Vec<(usize, usize)>)> {
        let m = grid.points_per_axis();
        (0..self.dim())
            .map(|a| {
                let us: Vec<f64> = grid
                    .axis_coordinates(a)
                    .iter()
                    .map(|&x| self.unit_coordinate(a, x))
                    .collect();
                let values: Vec<Vec<f64>> = self
                    .atoms
                    .iter()
                    .map(|atom| us.iter().map(|&u| atom.eval(self.generator, u)).collect())
                    .collect();
                let ranges = self
                    .atoms
                    .iter()
                    .map(|atom| {
                        let (s0, s1) = atom.support(self.generator);
                        let first = us.iter().position(|&u| u >= s0).unwrap_or(m);
                        let last = us.iter().rposition(|&u| u <= s1).map_or(0, |k| k + 1);
                        (first, last.max(first))
                    })
                    .collect();
                (values, ranges)
            })
            .collect()
    }

    /// Evaluates `sum_i coeffs_i b_i` at every point of `grid`.
    pub fn synthesize(&self, coeffs: &[f64], grid: &GridSpec) -> Result<GridPotential> {
        self.check_coeffs(coeffs)?;
        self.check_grid(grid)?;
        let tables = self.axis_tables(grid);
        let mut values = vec![0.0; grid.len()];
        let norm = self.normalization();
        for (func, &c) in self.functions.iter().zip(coeffs) {
            if c != 0.0 {
                accumulate(func, c * norm, &tables, grid, &mut values, false);
            }
        }
        GridPotential::new(grid.clone(), values)
    }

    /// `sum_i |b_i(x)|` at every grid point.
    pub fn lebesgue_function(&self, grid: &GridSpec) -> Result<GridPotential> {
        self.check_grid(grid)?;
        let tables = self.axis_tables(grid);
        let mut values = vec![0.0; grid.len()];
        for func in &self.functions {
            accumulate(func, self.normalization(), &tables, grid, &mut values, true);
        }
        GridPotential::new(grid.clone(), values)
    }
}

/// Adds `weight * prod_a atom_a` (or its absolute value) over the support box.
fn accumulate(
    func: &[usize],
    weight: f64,
    tables: &[(Vec<Vec<f64>>, Vec<(usize, usize)>)],
    grid: &GridSpec,
    out: &mut [f64],
    absolute: bool,
) {
    let d = func.len();
    let ranges: Vec<(usize, usize)> = (0..d).map(|a| tables[a].1[func[a]]).collect();
    if ranges.iter().any(|(s, e)| s >= e) {
        return;
    }
    let mut k: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        let mut v = weight;
        let mut idx = 0;
        for a in 0..d {
            v *= tables[a].0[func[a]][k[a]];
            idx += k[a] * grid.stride(a);
        }
        out[idx] += if absolute { v.abs() } else { v };
        let mut a = d;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            k[a] += 1;
            if k[a] < ranges[a].1 {
                break;
            }
            k[a] = ranges[a].0;
        }
    }
}

/// Dimension of `V_J` for `generator` in dimension `d`, by counting.
pub fn basis_dimension(generator: Generator, resolution: u32, d: usize) -> usize {
    let j0 = generator.base_level();
    let per_axis = |j: u32| generator.shifts(j);
    let mut total = per_axis(j0).pow(d as u32);
    for j in j0..j0 + resolution {
        // Every type has the same shift count per axis for these generators.
        total += ((1usize << d) - 1) * per_axis(j).pow(d as u32);
    }
    total
}

/// Constant `c` with `basis_dimension <= c 2^{Jd}` for every `J`.
pub fn dimension_constant(generator: Generator, d: usize) -> f64 {
    2f64.powi((generator.base_level() as usize * d) as i32)
}

/// Uniform coefficient grid covering `[-B, B]^dim`: per coordinate, the
/// midpoints of `ceil(2B / delta)` equal cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringGrid {
    dim: usize,
    centers: Vec<f64>,
}

/// Default limit on the number of enumerated covering elements.
pub const DEFAULT_COVERING_CAP: u64 = 1_000_000;

fn per_coordinate_count(delta: f64, bound: f64) -> Result<usize> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(invalid(format!("delta must be positive, got {delta}")));
    }
    if !(bound.is_finite() && bound > 0.0) {
        return Err(invalid(format!("coefficient bound must be positive, got {bound}")));
    }
    let ratio = 2.0 * bound / delta;
    // Guard ratios such as 2 * 12.5 / 0.1 = 250.00000000000003 against spurious rounding up.
    Ok(((ratio * (1.0 - 1e-12)).ceil() as usize).max(1))
}

/// A δ-grid covering of `[-bound, bound]^dim`; refuses coverings larger than `cap`.
pub fn delta_grid_covering(dim: usize, delta: f64, bound: f64, cap: u64) -> Result<CoveringGrid> {
    let k = per_coordinate_count(delta, bound)?;
    let count = (k as f64).powi(dim as i32);
    if count > cap as f64 {
        return Err(Error::CoveringTooLarge { count, cap });
    }
    let width = 2.0 * bound / k as f64;
    let centers = (0..k).map(|i| -bound + (i as f64 + 0.5) * width).collect();
    Ok(CoveringGrid { dim, centers })
}

impl CoveringGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn per_coordinate(&self) -> usize {
        self.centers.len()
    }

    pub fn count(&self) -> u64 {
        (self.centers.len() as u64).pow(self.dim as u32)
    }

    /// Elements in odometer order (last coordinate fastest).
    pub fn iter(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let k = self.centers.len();
        let mut digits = vec![0usize; self.dim];
        let mut remaining = self.count();
        std::iter::from_fn(move || {
            if remaining == 0 {
                return None;
            }
            remaining -= 1;
            let item = digits.iter().map(|&i| self.centers[i]).collect();
            for a in (0..digits.len()).rev() {
                digits[a] += 1;
                if digits[a] < k {
                    break;
                }
                digits[a] = 0;
            }
            Some(item)
        })
    }

    /// The element closest to `gamma` (coordinate-wise nearest center).
    pub fn nearest(&self, gamma: &[f64]) -> Vec<f64> {
        gamma
            .iter()
            .map(|&g| {
                let mut best = self.centers[0];
                for &c in &self.centers {
                    if (c - g).abs() < (best - g).abs() {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Regularity constants of admissible potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityParams {
    /// `M`: value bound `2M^2`, gradient bound `M`, Hessian in `[1/M, M]`.
    pub m: f64,
    /// Hölder-norm budget `R`.
    pub r: f64,
    /// Smoothness `alpha`.
    pub alpha: f64,
    pub d: usize,
}

impl AdmissibilityParams {
    pub fn new(m: f64, r: f64, alpha: f64, d: usize) -> Result<Self> {
        let p = Self { m, r, alpha, d };
        p.validate()?;
        Ok(p)
    }

    /// `R` must exceed the identity map's Hölder norm, which is at least its
    /// unit derivative; the value part depends on the box and is not checked.
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 2.0 && self.m.is_finite()) {
            return Err(invalid(format!("M must exceed 2, got {}", self.m)));
        }
        if !(self.alpha > 1.0) {
            return Err(invalid(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !(self.r > 1.0 && self.r.is_finite()) {
            return Err(invalid(format!("R must exceed 1, got {}", self.r)));
        }
        if self.d < 1 {
            return Err(invalid("dimension must be at least 1"));
        }
        Ok(())
    }

    /// The same constants with `M` replaced by `2M`.
    pub fn doubled(&self) -> Self {
        Self { m: 2.0 * self.m, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmissibilityCondition {
    Value,
    Gradient,
    HessianLower,
    HessianUpper,
}

/// First grid point at which a condition fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub point: Vec<f64>,
    pub condition: AdmissibilityCondition,
    /// The offending quantity (value, gradient norm or eigenvalue).
    pub observed: f64,
    pub limit: f64,
}

/// Finite-difference Hessian at grid point `i`; stencils are moved inward
/// on boundary faces.
fn fd_hessian(f: &GridPotential, i: usize) -> DMatrix<f64> {
    let spec = f.spec();
    let d = spec.dim();
    let m = spec.points_per_axis();
    let vals = f.values();
    let multi = spec.multi_index(i);
    let center: Vec<usize> = multi.iter().map(|&k| k.clamp(1, m - 2)).collect();
    let at = |offsets: &[(usize, i64)]| -> f64 {
        let mut idx = 0;
        for a in 0..d {
            let mut k = center[a] as i64;
            for &(axis, off) in offsets {
                if axis == a {
                    k += off;
                }
            }
            idx += k as usize * spec.stride(a);
        }
        vals[idx]
    };
    let mut h = DMatrix::zeros(d, d);
    for a in 0..d {
        let ha = spec.step(a);
        h[(a, a)] = (at(&[(a, 1)]) - 2.0 * at(&[]) + at(&[(a, -1)])) / (ha * ha);
        for b in a + 1..d {
            let hb = spec.step(b);
            let v = (at(&[(a, 1), (b, 1)]) - at(&[(a, 1), (b, -1)]) - at(&[(a, -1), (b, 1)])
                + at(&[(a, -1), (b, -1)]))
                / (4.0 * ha * hb);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

/// Checks `|f| <= 2M^2`, `||grad f|| <= M` and `1/M <= eig(Hess f) <= M` at
/// every grid point using finite differences. Returns the first violation.
pub fn admissibility_check(f: &GridPotential, params: &AdmissibilityParams) -> Result<Option<Violation>> {
    params.validate()?;
    let spec = f.spec();
    if spec.points_per_axis() < 5 {
        return Err(invalid("admissibility screening needs at least 5 points per axis"));
    }
    if spec.dim() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: spec.dim(),
        });
    }
    let m = params.m;
    let grad = finite_diff_gradient(f);
    let violation = |index, condition, observed, limit| {
        Some(Violation {
            index,
            point: spec.point(index),
            condition,
            observed,
            limit,
        })
    };
    for (i, &v) in f.values().iter().enumerate() {
        if v.abs() > 2.0 * m * m {
            return Ok(violation(i, AdmissibilityCondition::Value, v, 2.0 * m * m));
        }
        let g = grad.vector(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if g > m {
            return Ok(violation(i, AdmissibilityCondition::Gradient, g, m));
        }
        let eig = SymmetricEigen::new(fd_hessian(f, i)).eigenvalues;
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo < 1.0 / m {
            return Ok(violation(i, AdmissibilityCondition::HessianLower, lo, 1.0 / m));
        }
        if hi > m {
            return Ok(violation(i, AdmissibilityCondition::HessianUpper, hi, m));
        }
    }
    Ok(None)
}

/// Screening of covering elements against the admissibility conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub total: u64,
    pub accepted: u64,
    /// Rejections per failed condition, in the order value, gradient, Hessian lower, Hessian upper.
    pub rejected_by: [u64; 4],
}

impl ScreeningReport {
    pub fn acceptance_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total as f64
        }
    }
}

/// Synthesizes every covering element on `grid` and screens it.
pub fn screen_covering(
    covering: &CoveringGrid,
    basis: &WaveletBasisSpec,
    grid: &GridSpec,
    params: &AdmissibilityParams,
) -> Result<ScreeningReport> {
    if covering.dim() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            got: covering.dim(),
        });
    }
    let elements: Vec<Vec<f64>> = covering.iter().collect();
    let outcomes = elements
        .par_iter()
        .map(|gamma| {
            let f = basis.synthesize(gamma, grid)?;
            Ok(admissibility_check(&f, params)?.map(|v| v.condition))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ScreeningReport {
        total: outcomes.len() as u64,
        accepted: 0,
        rejected_by: [0; 4],
    };
    for o in outcomes {
        match o {
            None => report.accepted += 1,
            Some(c) => report.rejected_by[c as usize] += 1,
        }
    }
    Ok(report)
}

/// `R^2 2^{-2 J alpha} + J 2^{J(d-2)} ln(n)/n + 1/n + 2^{Jd} ln(n eps)/(n eps)`,
/// without the last term when non-private.
pub fn resolution_bound(j: u32, n: usize, budget: PrivacyBudget, params: &AdmissibilityParams) -> f64 {
    let jf = j as f64;
    let d = params.d as f64;
    let nf = n as f64;
    let bias = params.r * params.r * 2f64.powf(-2.0 * jf * params.alpha);
    let stat = jf * 2f64.powf(jf * (d - 2.0)) * nf.ln() / nf + 1.0 / nf;
    let privacy = match budget.epsilon() {
        Some(eps) => 2f64.powf(jf * d) * (nf * eps).ln() / (nf * eps),
        None => 0.0,
    };
    bias + stat + privacy
}

/// The `J` in `1..=30` minimizing [`resolution_bound`] (smallest on ties).
pub fn select_resolution(n: usize, budget: PrivacyBudget, params: &AdmissibilityParams) -> Result<u32> {
    params.validate()?;
    if n < 2 {
        return Err(invalid("resolution choice needs n >= 2"));
    }
    if let Some(eps) = budget.epsilon() {
        if n as f64 * eps < 2.0 {
            return Err(invalid("resolution choice needs n * epsilon >= 2"));
        }
    }
    let mut best = (1, f64::INFINITY);
    for j in 1..=30 {
        let v = resolution_bound(j, n, budget, params);
        if v < best.1 {
            best = (j, v);
        }
    }
    Ok(best.0)
}

/// Exact and bounded log-cardinality of the δ-grid covering of `V_J`'s
/// coefficient ball of radius `2M^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringCardinality {
    pub resolution: u32,
    pub delta: f64,
    pub dimension: usize,
    pub per_coordinate: usize,
    /// `dim(V_J) ln ceil(4M^2 / delta)`.
    pub log_exact: f64,
    /// `c 2^{Jd} ln(c' 2^{Jd/2} / delta + 1)`.
    pub log_bound: f64,
    pub c: f64,
    pub c_prime: f64,
}

pub fn covering_log_cardinality(
    generator: Generator,
    resolution: u32,
    delta: f64,
    params: &AdmissibilityParams,
) -> Result<CoveringCardinality> {
    params.validate()?;
    let bound = 2.0 * params.m * params.m;
    let k = per_coordinate_count(delta, bound)?;
    let dimension = basis_dimension(generator, resolution, params.d);
    let log_exact = dimension as f64 * (k as f64).ln();
    let c = dimension_constant(generator, params.d);
    let c_prime = 2.0 * bound;
    let scale = 2f64.powf(resolution as f64 * params.d as f64);
    let log_bound = c * scale * (c_prime * scale.sqrt() / delta + 1.0).ln();
    if log_exact > log_bound * (1.0 + 1e-12) {
        return Err(invalid(format!(
            "covering log-cardinality {log_exact} exceeds its bound {log_bound}"
        )));
    }
    Ok(CoveringCardinality {
        resolution,
        delta,
        dimension,
        per_coordinate: k,
        log_exact,
        log_bound,
        c,
        c_prime,
    })
}
