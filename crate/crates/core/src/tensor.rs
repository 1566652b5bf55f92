//! Symmetric tensors and tensor fields in dimension two.
//!
//! A symmetric rank-`k` tensor in the plane has `k + 1` independent
//! components. Component `j` holds the entry whose multi-index contains
//! exactly `j` copies of the second axis, e.g. `[F11, F12, F22]` for rank 2.
//! Inner products weight component `j` by its multiplicity `C(k, j)`, so they
//! agree with the full Frobenius product over all `2^k` entries.

use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Binomial coefficient `C(n, k)` as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    rank: usize,
    components: Vec<f64>,
}

impl SymTensor {
    pub fn new(rank: usize, components: Vec<f64>) -> Result<Self> {
        if components.len() != rank + 1 {
            return Err(Error::Domain(format!(
                "rank-{rank} tensor needs {} components, got {}",
                rank + 1,
                components.len()
            )));
        }
        Ok(Self { rank, components })
    }

    pub fn zeros(rank: usize) -> Self {
        Self { rank, components: vec![0.0; rank + 1] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { rank: 0, components: vec![value] }
    }

    /// Rank-2 tensor `[[a11, a12], [a12, a22]]`.
    pub fn matrix(a11: f64, a12: f64, a22: f64) -> Self {
        Self { rank: 2, components: vec![a11, a12, a22] }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [f64] {
        &mut self.components
    }

    /// Entry at a full multi-index of axis labels `0` or `1`.
    pub fn get(&self, indices: &[usize]) -> Result<f64> {
        if indices.len() != self.rank || indices.iter().any(|&i| i > 1) {
            return Err(Error::Domain(format!(
                "multi-index {indices:?} invalid for a rank-{} tensor in 2D",
                self.rank
            )));
        }
        let twos = indices.iter().filter(|&&i| i == 1).count();
        Ok(self.components[twos])
    }

    /// Homogeneous degree-`k` polynomial `F(v, ..., v)` for any vector `v`.
    pub fn polynomial(&self, v: [f64; 2]) -> f64 {
        let k = self.rank;
        self.components
            .iter()
            .enumerate()
            .map(|(j, &c)| binomial(k, j) * c * v[0].powi((k - j) as i32) * v[1].powi(j as i32))
            .sum()
    }

    /// Full contraction with a unit direction `n`.
    pub fn contract(&self, n: [f64; 2]) -> Result<f64> {
        let norm = (n[0] * n[0] + n[1] * n[1]).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("direction must be unit length, |n| = {norm}")));
        }
        Ok(self.polynomial(n))
    }

    /// Frobenius inner product over the full index set.
    pub fn dot(&self, other: &SymTensor) -> f64 {
        debug_assert_eq!(self.rank, other.rank);
        self.components
            .iter()
            .zip(&other.components)
            .enumerate()
            .map(|(j, (a, b))| binomial(self.rank, j) * a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Rotates every slot by a quarter turn (`e1 -> e2`, `e2 -> -e1`).
    ///
    /// In the plane this relabelling maps the longitudinal ray transform onto
    /// the normal (transverse) one. Applying it twice multiplies by `(-1)^k`.
    pub fn relabel(&self) -> SymTensor {
        let k = self.rank;
        let components = (0..=k)
            .map(|j| {
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * self.components[k - j]
            })
            .collect();
        SymTensor { rank: k, components }
    }

    pub fn scaled(&self, s: f64) -> SymTensor {
        SymTensor { rank: self.rank, components: self.components.iter().map(|c| c * s).collect() }
    }
}

/// Square node grid on `[-extent, extent]^2` with `n` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub extent: f64,
}

impl Grid {
    pub fn new(n: usize, extent: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::GridTooSmall(format!("{n} nodes per axis")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::Domain(format!("grid extent must be positive, got {extent}")));
        }
        Ok(Self { n, extent })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.extent + i as f64 * self.spacing()
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Flat index of node `(i, j)` with `i` along x.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn position(&self, idx: usize) -> [f64; 2] {
        [self.coord(idx % self.n), self.coord(idx / self.n)]
    }
}

/// A point mass `coefficient · δ(x - location)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaAtom {
    pub location: [f64; 2],
    pub coefficient: SymTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    rank: usize,
    grid: Grid,
    planes: Vec<Vec<f64>>,
    pub atoms: Vec<DeltaAtom>,
}

impl TensorField {
    pub fn zeros(rank: usize, grid: Grid) -> Self {
        Self { rank, grid, planes: vec![vec![0.0; grid.len()]; rank + 1], atoms: Vec::new() }
    }

    pub fn from_planes(rank: usize, grid: Grid, planes: Vec<Vec<f64>>) -> Result<Self> {
        if planes.len() != rank + 1 || planes.iter().any(|p| p.len() != grid.len()) {
            return Err(Error::Domain("component planes do not match rank and grid".into()));
        }
        Ok(Self { rank, grid, planes, atoms: Vec::new() })
    }

    /// Samples `f(x, y)`, which writes the `rank + 1` components into its buffer.
    pub fn from_fn<F>(rank: usize, grid: Grid, f: F) -> Self
    where
        F: Fn(f64, f64, &mut [f64]) + Sync,
    {
        let n = grid.n;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let y = grid.coord(j);
                let mut row = vec![0.0; n * (rank + 1)];
                let mut buf = vec![0.0; rank + 1];
                for i in 0..n {
                    buf.iter_mut().for_each(|b| *b = 0.0);
                    f(grid.coord(i), y, &mut buf);
                    row[i * (rank + 1)..(i + 1) * (rank + 1)].copy_from_slice(&buf);
                }
                row
            })
            .collect();
        let mut planes = vec![vec![0.0; grid.len()]; rank + 1];
        for (j, row) in rows.iter().enumerate() {
            for i in 0..n {
                for (c, plane) in planes.iter_mut().enumerate() {
                    plane[grid.index(i, j)] = row[i * (rank + 1) + c];
                }
            }
        }
        Self { rank, grid, planes, atoms: Vec::new() }
    }

    pub fn scalar_from_fn<F: Fn(f64, f64) -> f64 + Sync>(grid: Grid, f: F) -> Self {
        Self::from_fn(0, grid, |x, y, out| out[0] = f(x, y))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn plane(&self, component: usize) -> &[f64] {
        &self.planes[component]
    }

    pub fn plane_mut(&mut self, component: usize) -> &mut [f64] {
        &mut self.planes[component]
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }

    pub fn tensor_at(&self, i: usize, j: usize) -> SymTensor {
        let idx = self.grid.index(i, j);
        SymTensor { rank: self.rank, components: self.planes.iter().map(|p| p[idx]).collect() }
    }

    /// Bilinear interpolation of every component at `(x, y)`; zero outside the grid.
    pub fn interpolate_into(&self, x: f64, y: f64, out: &mut [f64]) {
        let g = self.grid;
        let h = g.spacing();
        let fx = (x + g.extent) / h;
        let fy = (y + g.extent) / h;
        let last = (g.n - 1) as f64;
        if !(0.0..=last).contains(&fx) || !(0.0..=last).contains(&fy) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let i0 = (fx.floor() as usize).min(g.n - 2);
        let j0 = (fy.floor() as usize).min(g.n - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let a = g.index(i0, j0);
        let b = a + 1;
        let c = a + g.n;
        let d = c + 1;
        for (o, p) in out.iter_mut().zip(&self.planes) {
            *o = (1.0 - ty) * ((1.0 - tx) * p[a] + tx * p[b]) + ty * ((1.0 - tx) * p[c] + tx * p[d]);
        }
    }

    pub fn interpolate(&self, x: f64, y: f64) -> SymTensor {
        let mut out = vec![0.0; self.rank + 1];
        self.interpolate_into(x, y, &mut out);
        SymTensor { rank: self.rank, components: out }
    }

    /// Frobenius inner product `Σ F:G h²` over nodes accepted by `region`.
    pub fn inner_where<R: Fn(f64, f64) -> bool>(&self, other: &TensorField, region: R) -> f64 {
        assert_eq!(self.rank, other.rank);
        assert_eq!(self.grid, other.grid);
        let g = self.grid;
        let h2 = g.spacing() * g.spacing();
        let mut acc = 0.0;
        for idx in 0..g.len() {
            let [x, y] = g.position(idx);
            if !region(x, y) {
                continue;
            }
            for (c, (p, q)) in self.planes.iter().zip(&other.planes).enumerate() {
                acc += binomial(self.rank, c) * p[idx] * q[idx];
            }
        }
        acc * h2
    }

    pub fn inner(&self, other: &TensorField) -> f64 {
        self.inner_where(other, |_, _| true)
    }

    pub fn norm_where<R: Fn(f64, f64) -> bool>(&self, region: R) -> f64 {
        self.inner_where(self, region).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Norm over nodes at least `margin` nodes away from the grid edge.
    pub fn interior_norm(&self, margin: usize) -> f64 {
        let g = self.grid;
        let h2 = g.spacing() * g.spacing();
        let mut acc = 0.0;
        for j in margin..g.n.saturating_sub(margin) {
            for i in margin..g.n.saturating_sub(margin) {
                let idx = g.index(i, j);
                for (c, p) in self.planes.iter().enumerate() {
                    acc += binomial(self.rank, c) * p[idx] * p[idx];
                }
            }
        }
        (acc * h2).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.planes.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &TensorField, f: F) -> Result<TensorField> {
        if self.rank != other.rank {
            return Err(Error::Rank { expected: self.rank, found: other.rank });
        }
        if self.grid != other.grid {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        let planes = self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(p, q)| p.iter().zip(q).map(|(&a, &b)| f(a, b)).collect())
            .collect();
        Ok(TensorField { rank: self.rank, grid: self.grid, planes, atoms: Vec::new() })
    }

    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &TensorField) -> Result<TensorField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scaled(&self, s: f64) -> TensorField {
        let planes = self.planes.iter().map(|p| p.iter().map(|v| v * s).collect()).collect();
        let atoms = self
            .atoms
            .iter()
            .map(|a| DeltaAtom { location: a.location, coefficient: a.coefficient.scaled(s) })
            .collect();
        TensorField { rank: self.rank, grid: self.grid, planes, atoms }
    }

    /// Pointwise [`SymTensor::relabel`], atoms included.
    pub fn relabel(&self) -> TensorField {
        let k = self.rank;
        let planes = (0..=k)
            .map(|j| {
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                self.planes[k - j].iter().map(|v| sign * v).collect()
            })
            .collect();
        let atoms = self
            .atoms
            .iter()
            .map(|a| DeltaAtom { location: a.location, coefficient: a.coefficient.relabel() })
            .collect();
        TensorField { rank: k, grid: self.grid, planes, atoms }
    }

    /// Zeroes every node outside the disk of radius `radius`.
    pub fn restrict_to_disk(&mut self, radius: f64) {
        let g = self.grid;
        for idx in 0..g.len() {
            let [x, y] = g.position(idx);
            if x * x + y * y > radius * radius {
                for p in &mut self.planes {
                    p[idx] = 0.0;
                }
            }
        }
    }
}

/// Derivative of a node plane along `axis` (0 = x, 1 = y).
///
/// Sixth-order central differences in the interior, falling back to fourth-
/// and second-order central stencils on the third and second rings and to
/// second-order one-sided stencils on the outer ring.
pub fn partial(plane: &[f64], grid: Grid, axis: usize) -> Vec<f64> {
    let n = grid.n;
    let h = grid.spacing();
    let stride = if axis == 0 { 1 } else { n };
    let mut out = vec![0.0; plane.len()];
    for line in 0..n {
        let base = if axis == 0 { line * n } else { line };
        let at = |k: usize| plane[base + k * stride];
        for k in 0..n {
            let d = if k >= 3 && k + 3 < n {
                (45.0 * (at(k + 1) - at(k - 1)) - 9.0 * (at(k + 2) - at(k - 2)) + (at(k + 3) - at(k - 3)))
                    / (60.0 * h)
            } else if k >= 2 && k + 2 < n {
                (-at(k + 2) + 8.0 * at(k + 1) - 8.0 * at(k - 1) + at(k - 2)) / (12.0 * h)
            } else if k >= 1 && k + 1 < n {
                (at(k + 1) - at(k - 1)) / (2.0 * h)
            } else if k == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else {
                (3.0 * at(k) - 4.0 * at(k - 1) + at(k - 2)) / (2.0 * h)
            };
            out[base + k * stride] = d;
        }
    }
    out
}

fn check_stencil_grid(grid: Grid) -> Result<()> {
    if grid.n < 5 {
        return Err(Error::GridTooSmall(format!(
            "finite differences need at least 5 nodes per axis, got {}",
            grid.n
        )));
    }
    Ok(())
}

/// Symmetric derivative `d`: rank `k` to rank `k + 1`.
///
/// `(dV)_j = ((k + 1 - j) ∂₁V_j + j ∂₂V_{j-1}) / (k + 1)` in reduced storage.
pub fn sym_derivative(v: &TensorField) -> Result<TensorField> {
    let grid = v.grid;
    check_stencil_grid(grid)?;
    let k = v.rank;
    let dx: Vec<Vec<f64>> = v.planes.iter().map(|p| partial(p, grid, 0)).collect();
    let dy: Vec<Vec<f64>> = v.planes.iter().map(|p| partial(p, grid, 1)).collect();
    let kp1 = (k + 1) as f64;
    let planes = (0..=k + 1)
        .map(|j| {
            let mut out = vec![0.0; grid.len()];
            if j <= k {
                let w = (k + 1 - j) as f64 / kp1;
                out.iter_mut().zip(&dx[j]).for_each(|(o, d)| *o += w * d);
            }
            if j >= 1 {
                let w = j as f64 / kp1;
                out.iter_mut().zip(&dy[j - 1]).for_each(|(o, d)| *o += w * d);
            }
            out
        })
        .collect();
    Ok(TensorField { rank: k + 1, grid, planes, atoms: Vec::new() })
}

/// Divergence `δ`: rank `k` to rank `k - 1`, `(δF)_q = ∂₁F_q + ∂₂F_{q+1}`.
pub fn divergence(f: &TensorField) -> Result<TensorField> {
    if f.rank == 0 {
        return Err(Error::Domain("divergence of a rank-0 field is undefined".into()));
    }
    let grid = f.grid;
    check_stencil_grid(grid)?;
    let k = f.rank;
    let planes = (0..k)
        .map(|q| {
            let a = partial(&f.planes[q], grid, 0);
            let b = partial(&f.planes[q + 1], grid, 1);
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        })
        .collect();
    Ok(TensorField { rank: k - 1, grid, planes, atoms: Vec::new() })
}

/// Samples of a function of direction on a uniform angle grid over `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularProfile {
    pub values: Vec<f64>,
}

impl AngularProfile {
    pub fn from_fn<F: Fn(f64) -> f64>(count: usize, f: F) -> Self {
        Self { values: (0..count).map(|j| f(2.0 * PI * j as f64 / count as f64)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.values.len() as f64
    }

    /// Discrete `(cos, sin)` Fourier coefficients for frequencies `0..=m/2`.
    pub fn fourier(&self) -> Vec<(f64, f64)> {
        let m = self.values.len();
        (0..=m / 2)
            .map(|q| {
                let (mut a, mut b) = (0.0, 0.0);
                for (j, v) in self.values.iter().enumerate() {
                    let t = 2.0 * PI * ((q * j) % m) as f64 / m as f64;
                    a += v * t.cos();
                    b += v * t.sin();
                }
                let scale = if q == 0 || 2 * q == m { 1.0 / m as f64 } else { 2.0 / m as f64 };
                (a * scale, b * scale)
            })
            .collect()
    }

    pub fn dot(&self, other: &AngularProfile) -> f64 {
        let w = 2.0 * PI / self.values.len() as f64;
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * w
    }
}

/// Splits `p` into parts even and odd under `α ↦ α + π`.
pub fn even_odd_split(p: &AngularProfile) -> Result<(AngularProfile, AngularProfile)> {
    let m = p.values.len();
    if m == 0 || m % 2 == 1 {
        return Err(Error::Domain(format!(
            "even/odd split needs an even number of angles, got {m}"
        )));
    }
    let half = m / 2;
    let mut even = vec![0.0; m];
    let mut odd = vec![0.0; m];
    for j in 0..m {
        let a = p.values[j];
        let b = p.values[(j + half) % m];
        even[j] = 0.5 * (a + b);
        odd[j] = 0.5 * (a - b);
    }
    Ok((AngularProfile { values: even }, AngularProfile { values: odd }))
}

/// Default relative Fourier-tail tolerance for [`profile_to_tensors`].
pub const BANDLIMIT_TOLERANCE: f64 = 1e-8;

/// Homogeneous tensors whose contractions reproduce the even and odd parts of `p`.
///
/// The even part becomes a rank-`degree` tensor and the odd part a rank
/// `degree - 1` tensor; lower frequencies are lifted by `|n|^(degree - k) = 1`.
pub fn profile_to_tensors(
    p: &AngularProfile,
    degree: usize,
    tolerance: f64,
) -> Result<(SymTensor, SymTensor)> {
    if degree < 2 || degree % 2 == 1 {
        return Err(Error::Domain(format!("degree must be even and at least 2, got {degree}")));
    }
    let m = p.values.len();
    if m < 2 * degree + 2 {
        return Err(Error::Domain(format!(
            "{m} angles cannot resolve frequency {degree}; need at least {}",
            2 * degree + 2
        )));
    }
    let coeffs = p.fourier();
    let energy = |q: usize, c: &(f64, f64)| {
        let w = if q == 0 || 2 * q == m { 2.0 } else { 1.0 };
        w * (c.0 * c.0 + c.1 * c.1)
    };
    let total: f64 = coeffs.iter().enumerate().map(|(q, c)| energy(q, c)).sum();
    let tail: f64 = coeffs.iter().enumerate().filter(|(q, _)| *q > degree).map(|(q, c)| energy(q, c)).sum();
    if total > 0.0 && tail / total > tolerance {
        return Err(Error::Bandlimit { residual: tail / total, tolerance });
    }
    let mut even = vec![0.0; degree + 1];
    let mut odd = vec![0.0; degree];
    for (q, &(a, b)) in coeffs.iter().enumerate().take(degree + 1) {
        let (rank, target) = if q % 2 == 0 { (degree, &mut even) } else { (degree - 1, &mut odd) };
        for (sine, amp) in [(false, a), (true, b)] {
            if amp != 0.0 {
                for (t, h) in target.iter_mut().zip(harmonic_tensor(rank, q, sine)) {
                    *t += amp * h;
                }
            }
        }
    }
    Ok((SymTensor::new(degree, even)?, SymTensor::new(degree - 1, odd)?))
}

/// Reduced components of the rank-`k` tensor whose contraction with
/// `n(α)` is `cos(qα)` (or `sin(qα)`), via `Re/Im (n1 + i n2)^q |n|^(k-q)`.
fn harmonic_tensor(k: usize, q: usize, sine: bool) -> Vec<f64> {
    debug_assert!(q <= k && (k - q) % 2 == 0);
    let r = (k - q) / 2;
    let mut monomial = vec![0.0; k + 1];
    for a in 0..=q {
        // i^a contributes to the real part for even a, the imaginary part for odd a.
        let keep = if sine { a % 2 == 1 } else { a % 2 == 0 };
        if !keep {
            continue;
        }
        let sign = match a % 4 {
            0 | 1 => 1.0,
            _ => -1.0,
        };
        for b in 0..=r {
            let power_of_n2 = a + 2 * b;
            monomial[power_of_n2] += sign * binomial(q, a) * binomial(r, b);
        }
    }
    monomial.iter().enumerate().map(|(j, c)| c / binomial(k, j)).collect()
}

/// Contractions of `even + odd` with `n(α)` on a uniform grid of `count` angles.
pub fn tensors_to_profile(even: &SymTensor, odd: &SymTensor, count: usize) -> Result<AngularProfile> {
    if even.rank() != odd.rank() + 1 {
        return Err(Error::Rank { expected: even.rank().saturating_sub(1), found: odd.rank() });
    }
    Ok(AngularProfile::from_fn(count, |t| {
        let n = [t.cos(), t.sin()];
        even.polynomial(n) + odd.polynomial(n)
    }))
}
