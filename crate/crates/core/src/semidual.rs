//! Grid Fenchel transform, the empirical semi-dual objective and its
//! sensitivity bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridPotential, GridSpec};

/// Clamping constant `C`: each potential and conjugate term is projected onto `[-C, C]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    c: f64,
}

impl ClipConfig {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid(format!("clipping constant must be positive, got {c}")));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(-self.c, self.c)
    }
}

/// Paired source and target samples, with their nearest-grid-point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: GridSpec,
    x: Vec<f64>,
    y: Vec<f64>,
    x_idx: Vec<usize>,
    y_idx: Vec<usize>,
}

fn flatten(points: &[Vec<f64>], d: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(points.len() * d);
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        flat.extend_from_slice(p);
    }
    Ok(flat)
}

impl Dataset {
    /// Builds a dataset from `n` source and `n` target points and clips both to `spec`.
    pub fn new(spec: &GridSpec, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        let d = spec.dim();
        Self::from_flat(spec, flatten(x, d, "source samples")?, flatten(y, d, "target samples")?)
    }

    /// As [`Dataset::new`] with point-major flat coordinate buffers.
    pub fn from_flat(spec: &GridSpec, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let d = spec.dim();
        if x.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if x.len() % d != 0 || x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let clip_all = |pts: &[f64]| -> Result<Vec<usize>> {
            pts.par_chunks(d).map(|p| spec.clip(p)).collect()
        };
        let x_idx = clip_all(&x)?;
        let y_idx = clip_all(&y)?;
        Ok(Self {
            spec: spec.clone(),
            x,
            y,
            x_idx,
            y_idx,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.x_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_idx.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.y[i * d..(i + 1) * d]
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn y_flat(&self) -> &[f64] {
        &self.y
    }

    pub fn x_indices(&self) -> &[usize] {
        &self.x_idx
    }

    pub fn y_indices(&self) -> &[usize] {
        &self.y_idx
    }

    /// A copy with source sample `i` replaced by `p`.
    pub fn replace_x(&self, i: usize, p: &[f64]) -> Result<Self> {
        self.replaced(i, p, true)
    }

    /// A copy with target sample `i` replaced by `p`.
    pub fn replace_y(&self, i: usize, p: &[f64]) -> Result<Self> {
        self.replaced(i, p, false)
    }

    fn replaced(&self, i: usize, p: &[f64], source: bool) -> Result<Self> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        let idx = self.spec.clip(p)?;
        let d = self.dim();
        let mut out = self.clone();
        let (coords, indices) = if source {
            (&mut out.x, &mut out.x_idx)
        } else {
            (&mut out.y, &mut out.y_idx)
        };
        coords[i * d..(i + 1) * d].copy_from_slice(p);
        indices[i] = idx;
        Ok(out)
    }

    /// Number of records (source or target samples) that differ, position by position.
    pub fn hamming_distance(&self, other: &Dataset) -> Result<usize> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch("datasets are clipped to different grids".into()));
        }
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        let differing = |a: &[f64], b: &[f64]| {
            a.chunks(self.dim())
                .zip(b.chunks(self.dim()))
                .filter(|(p, q)| p != q)
                .count()
        };
        Ok(differing(&self.x, &other.x) + differing(&self.y, &other.y))
    }

    /// Per-grid-point multiplicities of the clipped source and target samples.
    pub fn index_counts(&self) -> (Vec<u32>, Vec<u32>) {
        let mut cx = vec![0u32; self.spec.len()];
        let mut cy = vec![0u32; self.spec.len()];
        self.x_idx.iter().for_each(|&i| cx[i] += 1);
        self.y_idx.iter().for_each(|&i| cy[i] += 1);
        (cx, cy)
    }
}

/// `f*(y) = max over grid points x of <x, y> - f(x)`.
pub fn fenchel_grid_transform(f: &GridPotential, y: &[f64]) -> Result<f64> {
    let spec = f.spec();
    if y.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: y.len(),
        });
    }
    let mut x = vec![0.0; spec.dim()];
    let mut best = f64::NEG_INFINITY;
    for (i, &fx) in f.values().iter().enumerate() {
        spec.point_into(i, &mut x);
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        best = best.max(dot - fx);
    }
    Ok(best)
}

/// Grid Fenchel transform evaluated at every grid point, by direct search.
/// Cost is quadratic in the number of grid points.
pub fn fenchel_transform_all(f: &GridPotential) -> GridPotential {
    let spec = f.spec();
    let values: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|j| fenchel_grid_transform(f, &spec.point(j)).expect("grid point has grid dimension"))
        .collect();
    GridPotential::new(spec.clone(), values).expect("transform of finite values is finite")
}

/// Same values as [`fenchel_transform_all`] (up to summation rounding),
/// computed axis by axis.
///
/// `<x, y> = sum_a x_a y_a` is separable, so the maximum over the product grid
/// is a nested maximum: after processing axis `a`, slot `a` of the working
/// array holds `y_a` instead of `x_a`. Cost is `O(d m^(d+1))`.
pub fn fenchel_transform_separable(f: &GridPotential) -> GridPotential {
    let spec = f.spec();
    let m = spec.points_per_axis();
    let d = spec.dim();
    let mut cur: Vec<f64> = f.values().iter().map(|v| -v).collect();
    let mut next = vec![0.0; cur.len()];
    for a in 0..d {
        let coords = spec.axis_coordinates(a);
        let products: Vec<f64> = (0..m * m)
            .map(|t| coords[t / m] * coords[t % m])
            .collect();
        let inner = spec.stride(a);
        let block = inner * m;
        next.par_chunks_mut(block)
            .zip(cur.par_chunks(block))
            .for_each(|(out, src)| {
                for yk in 0..m {
                    let dst = &mut out[yk * inner..(yk + 1) * inner];
                    dst.copy_from_slice(&src[..inner]);
                    let p0 = products[yk];
                    dst.iter_mut().for_each(|v| *v += p0);
                    for xk in 1..m {
                        let p = products[xk * m + yk];
                        let row = &src[xk * inner..(xk + 1) * inner];
                        for (v, &s) in dst.iter_mut().zip(row) {
                            *v = v.max(s + p);
                        }
                    }
                }
            });
        std::mem::swap(&mut cur, &mut next);
    }
    GridPotential::new(spec.clone(), cur).expect("transform of finite values is finite")
}

fn check_pair(f: &GridPotential, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if f.spec() != data.spec() {
        return Err(Error::GridMismatch(
            "potential and dataset use different grids".into(),
        ));
    }
    Ok(())
}

fn semidual_from_conjugate(
    f: &GridPotential,
    f_star: &GridPotential,
    data: &Dataset,
    clip: Option<ClipConfig>,
) -> f64 {
    let proj = |v: f64| clip.map_or(v, |c| c.clamp(v));
    let n = data.len() as f64;
    let fx: f64 = data.x_indices().iter().map(|&i| proj(f.values()[i])).sum();
    let fy: f64 = data.y_indices().iter().map(|&i| proj(f_star.values()[i])).sum();
    fx / n + fy / n
}

/// `(1/n) sum proj f(X_i) + (1/n) sum proj f*(Y_i)` with `proj` the clamp to
/// `[-C, C]`, evaluated at the grid-clipped samples.
pub fn empirical_semidual_clipped(f: &GridPotential, data: &Dataset, clip: ClipConfig) -> Result<f64> {
    check_pair(f, data)?;
    let f_star = fenchel_transform_separable(f);
    Ok(semidual_from_conjugate(f, &f_star, data, Some(clip)))
}

/// The empirical semi-dual objective without clamping.
pub fn empirical_semidual_unclipped(f: &GridPotential, data: &Dataset) -> Result<f64> {
    check_pair(f, data)?;
    let f_star = fenchel_transform_separable(f);
    Ok(semidual_from_conjugate(f, &f_star, data, None))
}

/// Clamped objective value together with how often each clamp was active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClippedScore {
    pub value: f64,
    /// Fraction of source samples whose potential value was clamped.
    pub saturated_potential: f64,
    /// Fraction of target samples whose conjugate value was clamped.
    pub saturated_conjugate: f64,
}

/// Clamped objective from precomputed tables: `f` and `f*` on the grid, and
/// per-grid-point sample multiplicities from [`Dataset::index_counts`].
pub fn clipped_score_from_counts(
    f: &[f64],
    f_star: &[f64],
    x_counts: &[u32],
    y_counts: &[u32],
    n: usize,
    clip: ClipConfig,
) -> ClippedScore {
    let c = clip.c();
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut satx = 0u64;
    let mut saty = 0u64;
    for i in 0..f.len() {
        if x_counts[i] > 0 {
            sx += x_counts[i] as f64 * clip.clamp(f[i]);
            if f[i].abs() > c {
                satx += x_counts[i] as u64;
            }
        }
        if y_counts[i] > 0 {
            sy += y_counts[i] as f64 * clip.clamp(f_star[i]);
            if f_star[i].abs() > c {
                saty += y_counts[i] as u64;
            }
        }
    }
    let n = n as f64;
    ClippedScore {
        value: sx / n + sy / n,
        saturated_potential: satx as f64 / n,
        saturated_conjugate: saty as f64 / n,
    }
}

/// Sensitivity `2C/n` of the clamped objective under one record replacement.
pub fn sensitivity_clipped(n: usize, clip: ClipConfig) -> Result<f64> {
    if n < 1 {
        return Err(invalid("sample size must be at least 1"));
    }
    Ok(2.0 * clip.c() / n as f64)
}

/// `max(2 f_sup, 2 r^2) / n`, the replacement sensitivity of the unclamped
/// objective for a potential bounded by `f_sup` on a domain of radius `r`.
pub fn sensitivity_theoretical(f_sup: f64, domain_radius: f64, n: usize) -> Result<f64> {
    if n < 1 {
        return Err(invalid("sample size must be at least 1"));
    }
    if !(f_sup >= 0.0 && domain_radius >= 0.0) {
        return Err(invalid("sup norm and radius must be non-negative"));
    }
    Ok((2.0 * f_sup).max(2.0 * domain_radius * domain_radius) / n as f64)
}
