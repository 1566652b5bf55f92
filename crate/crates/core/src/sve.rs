//! Truncated singular value expansion of the normal Radon transform on the
//! unit disk, and scalar recovery through repeated antiderivatives.
//!
//! Basis fields have Zernike radial factors. Rank-2 fields use three slots:
//! `Trace` (`z I / √2` with `z` a real Zernike function) and the two
//! deviatoric slots, whose complex entry `(F11 - F22)/2 + i F12` is
//! `R(r) e^{imθ}` or `i R(r) e^{imθ}`. Every column of the forward matrix
//! then factors into an offset profile times `cos(pφ)` or `sin(pφ)`, so the
//! SVD splits into independent blocks keyed by the angular frequency `p` and
//! the parity.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use crate::decomposition::normal_recoverable_part;
use crate::error::{Error, Result};
use crate::forward::{sinogram, Sinogram};
use crate::phantoms::deviatoric_delta;
use crate::quadrature::{trapezoid_weights, GaussLegendre};
use crate::tensor::{binomial, Grid, TensorField};
use crate::zernike::{admissible, chebyshev_u_table, normalization, radial_table, radial_table_into};

/// Singular values below this fraction of the largest are discarded.
pub const DISCARD_RATIO: f64 = 1e-12;
/// Default truncation: keep `σ >= DEFAULT_THRESHOLD · σ₁`.
pub const DEFAULT_THRESHOLD: f64 = 1e-6;
/// Largest tolerated deviation of the basis Gram matrix from the identity.
pub const GRAM_TOLERANCE: f64 = 1e-8;
/// Boundary residual allowed by [`recover_scalar_from_normal_data`].
pub const CONSISTENCY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Scalar,
    Trace,
    DeviatoricReal,
    DeviatoricImag,
}

impl Slot {
    fn code(self) -> u8 {
        match self {
            Slot::Scalar => 0,
            Slot::Trace => 1,
            Slot::DeviatoricReal => 2,
            Slot::DeviatoricImag => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Slot::Scalar,
            1 => Slot::Trace,
            2 => Slot::DeviatoricReal,
            3 => Slot::DeviatoricImag,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parity {
    Cos,
    Sin,
}

fn parity_harmonic(p: usize, parity: Parity, phi: f64) -> f64 {
    match parity {
        Parity::Cos => (p as f64 * phi).cos(),
        Parity::Sin => (p as f64 * phi).sin(),
    }
}

/// One basis field: `Σ_n radial[n] R_n^{|m|}(r)` times the angular pattern of its slot.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisElement {
    pub slot: Slot,
    pub m: i64,
    /// Coefficients of `R_n^{|m|}` indexed by `n`.
    pub radial: Vec<f64>,
}

impl BasisElement {
    pub fn rank(&self) -> usize {
        if self.slot == Slot::Scalar {
            0
        } else {
            2
        }
    }

    fn abs_m(&self) -> usize {
        self.m.unsigned_abs() as usize
    }

    fn radial_value(&self, table: &[Vec<f64>], r: f64) -> f64 {
        let am = self.abs_m();
        let mut acc = 0.0;
        // Radial polynomials with n - |m| odd vanish.
        for n in (am..self.radial.len()).step_by(2) {
            let c = self.radial[n];
            if c != 0.0 {
                acc += c * if n < table.len() { table[n][am] } else { crate::zernike::radial(n, am, r) };
            }
        }
        acc
    }

    /// Components (reduced storage) at angle `theta` for radial factor `rad`.
    fn components(&self, rad: f64, theta: f64, out: &mut [f64]) {
        let (s, c) = (self.m as f64 * theta).sin_cos();
        self.components_from(rad, c, s, out);
    }

    /// As [`Self::components`] given `cos(mθ)` and `sin(mθ)`.
    fn components_from(&self, rad: f64, c: f64, s: f64, out: &mut [f64]) {
        match self.slot {
            Slot::Scalar => out[0] = rad * if self.m >= 0 { c } else { -s },
            Slot::Trace => {
                let z = rad * if self.m >= 0 { c } else { -s } * FRAC_1_SQRT_2;
                out.copy_from_slice(&[z, 0.0, z]);
            }
            Slot::DeviatoricReal => out.copy_from_slice(&[rad * c, rad * s, -rad * c]),
            Slot::DeviatoricImag => out.copy_from_slice(&[-rad * s, rad * c, rad * s]),
        }
    }

    /// Field value at `(x, y)`; zero outside the closed unit disk.
    pub fn value(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rank() + 1];
        let r = x.hypot(y);
        if r <= 1.0 {
            let table = radial_table(self.radial.len().saturating_sub(1), r);
            self.components(self.radial_value(&table, r), y.atan2(x), &mut out);
        }
        out
    }

    /// Angular dependence of the element's sinogram as `(frequency, parity, sign)`;
    /// `None` when the sinogram vanishes identically.
    pub fn sinogram_pattern(&self) -> Option<(usize, Parity, f64)> {
        if self.radial.iter().all(|c| *c == 0.0) {
            return None;
        }
        match self.slot {
            Slot::Scalar | Slot::Trace => {
                let parity = if self.m >= 0 { Parity::Cos } else { Parity::Sin };
                Some((self.abs_m(), parity, 1.0))
            }
            // Re(R e^{imθ}) contracted twice with n gives Re(a e^{-2iφ}).
            Slot::DeviatoricReal => Some(((self.m - 2).unsigned_abs() as usize, Parity::Cos, 1.0)),
            Slot::DeviatoricImag => {
                let q = self.m - 2;
                (q != 0).then(|| (q.unsigned_abs() as usize, Parity::Sin, -(q.signum() as f64)))
            }
        }
    }

    /// Offset profile of the sinogram from a table of `U_n(s)`.
    fn profile_from(&self, u: &[f64], s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let root = (1.0 - s * s).sqrt();
        let mut acc = 0.0;
        for (n, &c) in self.radial.iter().enumerate() {
            if c != 0.0 {
                acc += c * 2.0 / (n as f64 + 1.0) * u[n];
            }
        }
        let scale = if self.slot == Slot::Trace { FRAC_1_SQRT_2 } else { 1.0 };
        scale * root * acc
    }

    /// Exact normal Radon transform of the element at `(s, φ)`.
    pub fn sinogram_value(&self, s: f64, phi: f64) -> f64 {
        match self.sinogram_pattern() {
            None => 0.0,
            Some((p, parity, sign)) => {
                let u = chebyshev_u_table(self.radial.len().saturating_sub(1), s.clamp(-1.0, 1.0));
                sign * self.profile_from(&u, s) * parity_harmonic(p, parity, phi)
            }
        }
    }
}

/// Orthonormal basis of tensor fields on the unit disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBasis {
    pub rank: usize,
    pub n_rad: usize,
    pub k_ang: usize,
    /// Grid on which fields are rendered.
    pub grid: Grid,
    pub elements: Vec<BasisElement>,
    /// `max |⟨e_a, e_b⟩ - δ_ab|` after orthonormalization.
    pub gram_error: f64,
}

/// Exact disk quadrature for products of basis fields.
struct DiskQuadrature {
    /// `(r, w·r)` radial Gauss nodes on `[0, 1]`.
    radial: Vec<(f64, f64)>,
    angles: Vec<f64>,
    angle_weight: f64,
}

impl DiskQuadrature {
    fn new(n_rad: usize, k_ang: usize) -> Self {
        let gl = GaussLegendre::new(n_rad + 2);
        let radial = gl.mapped(0.0, 1.0).map(|(r, w)| (r, w * r)).collect();
        let count = 4 * k_ang + 8;
        let angles = (0..count).map(|j| TAU * j as f64 / count as f64).collect();
        Self { radial, angles, angle_weight: TAU / count as f64 }
    }
}

type Signature = (Slot, i64);

/// Multiplicity-weighted component products integrated over the circle.
fn angular_gram(sigs: &[Signature], quad: &DiskQuadrature) -> Vec<Vec<f64>> {
    let rank = if sigs.iter().any(|s| s.0 != Slot::Scalar) { 2 } else { 0 };
    let mult: Vec<f64> = (0..=rank).map(|j| binomial(rank, j)).collect();
    let samples: Vec<Vec<f64>> = sigs
        .iter()
        .map(|&(slot, m)| {
            let e = BasisElement { slot, m, radial: vec![] };
            let mut v = Vec::with_capacity(quad.angles.len() * (rank + 1));
            let mut buf = vec![0.0; rank + 1];
            for &t in &quad.angles {
                e.components(1.0, t, &mut buf);
                v.extend_from_slice(&buf);
            }
            v
        })
        .collect();
    samples
        .iter()
        .map(|a| {
            samples
                .iter()
                .map(|b| {
                    let mut acc = 0.0;
                    for (k, (x, y)) in a.iter().zip(b).enumerate() {
                        acc += mult[k % (rank + 1)] * x * y;
                    }
                    acc * quad.angle_weight
                })
                .collect()
        })
        .collect()
}

fn radial_samples(e: &BasisElement, quad: &DiskQuadrature, tables: &[Vec<Vec<f64>>]) -> Vec<f64> {
    quad.radial
        .iter()
        .zip(tables)
        .map(|(&(r, w), t)| e.radial_value(t, r) * w.sqrt())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zernike-component basis with `n <= n_rad`, `|m| <= k_ang`, orthonormalized
/// by Gram-Schmidt under an exact disk quadrature.
///
/// `rank` is 0 (scalar Zernike functions) or 2 (trace and deviatoric slots).
pub fn build_basis(rank: usize, n_rad: usize, k_ang: usize, grid: Grid) -> Result<ImageBasis> {
    if rank != 0 && rank != 2 {
        return Err(Error::Domain(format!("basis is available for rank 0 and 2, not {rank}")));
    }
    if k_ang >= n_rad && !(n_rad == 0 && k_ang == 0) {
        return Err(Error::Domain(format!("angular cap {k_ang} must be below radial order {n_rad}")));
    }
    if grid.extent < 1.0 {
        return Err(Error::Domain(format!("grid extent {} does not cover the unit disk", grid.extent)));
    }
    // Four nodes per shortest rim wavelength, 2π / n_rad.
    let needed = PI / (2.0 * n_rad.max(1) as f64);
    if grid.spacing() > needed {
        return Err(Error::GridTooSmall(format!(
            "spacing {:.4} exceeds {:.4} needed for radial order {n_rad}",
            grid.spacing(),
            needed
        )));
    }
    let mut elements = Vec::new();
    for (n, m) in admissible(n_rad, k_ang) {
        let am = m.unsigned_abs() as usize;
        let one_hot = |c: f64| {
            let mut v = vec![0.0; n_rad + 1];
            v[n] = c;
            v
        };
        if rank == 0 {
            elements.push(BasisElement { slot: Slot::Scalar, m, radial: one_hot(normalization(n, am)) });
        } else {
            elements.push(BasisElement { slot: Slot::Trace, m, radial: one_hot(normalization(n, am)) });
            let dev = ((n as f64 + 1.0) / TAU).sqrt();
            elements.push(BasisElement { slot: Slot::DeviatoricReal, m, radial: one_hot(dev) });
            elements.push(BasisElement { slot: Slot::DeviatoricImag, m, radial: one_hot(dev) });
        }
    }
    elements.sort_by(|a, b| (a.slot, a.m).cmp(&(b.slot, b.m)).then_with(|| leading_order(a).cmp(&leading_order(b))));
    let quad = DiskQuadrature::new(n_rad, k_ang);
    let tables: Vec<Vec<Vec<f64>>> = quad.radial.iter().map(|&(r, _)| radial_table(n_rad, r)).collect();
    let sigs = signatures(&elements);
    let ang = angular_gram(&sigs.iter().map(|(s, _)| *s).collect::<Vec<_>>(), &quad);
    // Modified Gram-Schmidt inside each signature group; other pairs are
    // orthogonal through the angular factor.
    for (g, (_, members)) in sigs.iter().enumerate() {
        let a = ang[g][g];
        let mut done: Vec<usize> = Vec::new();
        for &i in members {
            let mut v = radial_samples(&elements[i], &quad, &tables);
            for &j in &done {
                let u = radial_samples(&elements[j], &quad, &tables);
                let proj = a * dot(&v, &u);
                let (uj, ui) = (elements[j].radial.clone(), &mut elements[i].radial);
                for (x, y) in ui.iter_mut().zip(&uj) {
                    *x -= proj * y;
                }
                for (x, y) in v.iter_mut().zip(&u) {
                    *x -= proj * y;
                }
            }
            let norm = (a * dot(&v, &v)).sqrt();
            if !(norm > 1e-10) {
                return Err(Error::Numerical(format!("basis element {i} is linearly dependent")));
            }
            elements[i].radial.iter_mut().for_each(|c| *c /= norm);
            done.push(i);
        }
    }
    let gram_error = gram_deviation(&elements, n_rad, k_ang);
    if !(gram_error <= GRAM_TOLERANCE) {
        return Err(Error::Numerical(format!("basis Gram matrix deviates from identity by {gram_error:e}")));
    }
    Ok(ImageBasis { rank, n_rad, k_ang, grid, elements, gram_error })
}

fn leading_order(e: &BasisElement) -> usize {
    e.radial.iter().rposition(|c| *c != 0.0).unwrap_or(0)
}

fn signatures(elements: &[BasisElement]) -> Vec<(Signature, Vec<usize>)> {
    let mut out: Vec<(Signature, Vec<usize>)> = Vec::new();
    for (i, e) in elements.iter().enumerate() {
        let key = (e.slot, e.m);
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => out.push((key, vec![i])),
        }
    }
    out
}

/// `max |⟨e_a, e_b⟩ - δ_ab|` over all pairs, by tensor-product quadrature
/// that is exact for the polynomial degrees involved.
pub fn gram_deviation(elements: &[BasisElement], n_rad: usize, k_ang: usize) -> f64 {
    let n_max = elements.iter().map(|e| e.radial.len()).max().unwrap_or(1).max(n_rad + 1) - 1;
    let quad = DiskQuadrature::new(n_max, k_ang.max(elements.iter().map(|e| e.abs_m()).max().unwrap_or(0)));
    let tables: Vec<Vec<Vec<f64>>> = quad.radial.iter().map(|&(r, _)| radial_table(n_max, r)).collect();
    let sigs = signatures(elements);
    let ang = angular_gram(&sigs.iter().map(|(s, _)| *s).collect::<Vec<_>>(), &quad);
    let mut sig_of = vec![0; elements.len()];
    for (g, (_, members)) in sigs.iter().enumerate() {
        for &i in members {
            sig_of[i] = g;
        }
    }
    let samples: Vec<Vec<f64>> = elements.iter().map(|e| radial_samples(e, &quad, &tables)).collect();
    (0..elements.len())
        .into_par_iter()
        .map(|a| {
            let mut worst: f64 = 0.0;
            for b in a..elements.len() {
                let g = ang[sig_of[a]][sig_of[b]] * dot(&samples[a], &samples[b]);
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

impl ImageBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Gridded field `Σ_j coefficients[j] e_j`, zero outside the unit disk.
    pub fn evaluate(&self, coefficients: &[f64]) -> Result<TensorField> {
        self.evaluate_on(coefficients, self.grid)
    }

    pub fn evaluate_on(&self, coefficients: &[f64], grid: Grid) -> Result<TensorField> {
        if coefficients.len() != self.elements.len() {
            return Err(Error::Domain(format!(
                "{} coefficients for {} basis elements",
                coefficients.len(),
                self.elements.len()
            )));
        }
        let n_max = self.elements.iter().map(|e| e.radial.len()).max().unwrap_or(1) - 1;
        // Collapse to one radial polynomial per signature.
        let mut combined: Vec<(BasisElement, ())> = Vec::new();
        for (e, &c) in self.elements.iter().zip(coefficients) {
            if c == 0.0 {
                continue;
            }
            let slot = match combined.iter_mut().find(|(x, _)| x.slot == e.slot && x.m == e.m) {
                Some((x, _)) => x,
                None => {
                    combined.push((BasisElement { slot: e.slot, m: e.m, radial: vec![0.0; n_max + 1] }, ()));
                    &mut combined.last_mut().unwrap().0
                }
            };
            for (x, y) in slot.radial.iter_mut().zip(&e.radial) {
                *x += c * y;
            }
        }
        let combined: Vec<BasisElement> = combined.into_iter().map(|(e, _)| e).collect();
        let rank = self.rank;
        let max_m = combined.iter().map(|e| e.abs_m()).max().unwrap_or(0);
        let n = grid.n;
        let h = grid.spacing();
        // Radial factors depend only on |x| and |y|; evaluate them once per
        // octant node and scatter to the symmetric images.
        let octant: Vec<Vec<(usize, Vec<f64>)>> = (0..n.div_ceil(2))
            .into_par_iter()
            .map(|a| {
                let mut out = Vec::new();
                let mut radial = vec![0.0; combined.len()];
                let mut table = Vec::new();
                // Per |m|: cos and sin weights of the isotropic part and of
                // the real and imaginary deviatoric parts.
                let mut weights = vec![[0.0f64; 6]; max_m + 1];
                for b in a..n.div_ceil(2) {
                    // Offsets from the centre in half-spacings.
                    let (da, db) = ((n - 1 - 2 * a) as f64, (n - 1 - 2 * b) as f64);
                    let r = 0.5 * h * da.hypot(db);
                    if r > 1.0 {
                        continue;
                    }
                    radial_table_into(n_max, r, &mut table);
                    for (v, e) in radial.iter_mut().zip(&combined) {
                        let am = e.abs_m();
                        *v = (am..e.radial.len()).step_by(2).map(|k| e.radial[k] * table[k * (n_max + 1) + am]).sum();
                    }
                    weights.iter_mut().for_each(|w| *w = [0.0; 6]);
                    for (e, &rad) in combined.iter().zip(&radial) {
                        let w = &mut weights[e.abs_m()];
                        let sign = e.m.signum() as f64;
                        match e.slot {
                            Slot::Scalar | Slot::Trace => {
                                let z = if e.slot == Slot::Trace { rad * FRAC_1_SQRT_2 } else { rad };
                                w[if e.m >= 0 { 0 } else { 1 }] += z;
                            }
                            Slot::DeviatoricReal => {
                                w[2] += rad;
                                w[5] += sign * rad;
                            }
                            Slot::DeviatoricImag => {
                                w[3] -= sign * rad;
                                w[4] += rad;
                            }
                        }
                    }
                    let mut images = vec![(a, b), (b, a), (n - 1 - a, b), (b, n - 1 - a), (a, n - 1 - b), (n - 1 - b, a), (n - 1 - a, n - 1 - b), (n - 1 - b, n - 1 - a)];
                    images.sort_unstable();
                    images.dedup();
                    for (i, j) in images {
                        let (x, y) = (grid.coord(i), grid.coord(j));
                        let rr = x.hypot(y);
                        let (c1, s1) = if rr > 0.0 { (x / rr, y / rr) } else { (1.0, 0.0) };
                        let (mut c, mut s) = (1.0, 0.0);
                        let mut acc = [0.0; 3];
                        for w in &weights {
                            acc[0] += w[0] * c + w[1] * s;
                            acc[1] += w[2] * c + w[3] * s;
                            acc[2] += w[4] * c + w[5] * s;
                            (c, s) = (c * c1 - s * s1, s * c1 + c * s1);
                        }
                        let value = if rank == 0 { vec![acc[0]] } else { vec![acc[0] + acc[1], acc[2], acc[0] - acc[1]] };
                        out.push((grid.index(i, j), value));
                    }
                }
                out
            })
            .collect();
        let mut planes = vec![vec![0.0; grid.len()]; rank + 1];
        for (idx, value) in octant.into_iter().flatten() {
            for (p, v) in planes.iter_mut().zip(value) {
                p[idx] = v;
            }
        }
        TensorField::from_planes(rank, grid, planes)
    }

    /// The `j`-th basis field on the basis grid.
    pub fn element_field(&self, j: usize) -> Result<TensorField> {
        let mut c = vec![0.0; self.elements.len()];
        *c.get_mut(j).ok_or_else(|| Error::Domain(format!("no basis element {j}")))? = 1.0;
        self.evaluate(&c)
    }
}

/// Block of the weighted forward matrix sharing one angular pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub frequency: usize,
    pub parity: Parity,
    pub elements: Vec<usize>,
    /// `√w_s · sign · profile(s) · ‖pattern‖` for each member (columns).
    pub matrix: DMatrix<f64>,
    /// Unit-norm weighted angular pattern `√w_φ trig(pφ_j) / ‖·‖`.
    pub pattern: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriple {
    pub sigma: f64,
    pub block: usize,
    /// Weighted left vector over offsets; the data-space vector is
    /// `left[i] · pattern[j] / √(w_s[i] w_φ)`.
    pub left: Vec<f64>,
    /// Coefficients over the block's elements.
    pub right: Vec<f64>,
}

/// Discretized forward operator and, after [`factorize`], its singular system.
#[derive(Debug, Clone, PartialEq)]
pub struct SveSystem {
    pub basis: ImageBasis,
    pub s_count: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub phi_count: usize,
    pub blocks: Vec<Block>,
    /// Elements whose sinogram vanishes identically.
    pub null_elements: Vec<usize>,
    /// Kept triples, `σ` descending.
    pub triples: Vec<SingularTriple>,
    /// Every computed singular value, descending, including discarded ones.
    pub spectrum: Vec<f64>,
}

/// Assembles the forward matrix on `s_count` offsets in `[-1, 1]` and `phi_count` angles.
pub fn assemble_forward(basis: &ImageBasis, s_count: usize, phi_count: usize) -> Result<SveSystem> {
    assemble_forward_on(basis, s_count, -1.0, 1.0, phi_count)
}

/// [`assemble_forward`] on an arbitrary offset range.
///
/// The data inner product uses trapezoid weights in `s` and `2π / P` in `φ`,
/// so it approximates the `L²` inner product of sinograms.
pub fn assemble_forward_on(
    basis: &ImageBasis,
    s_count: usize,
    s_min: f64,
    s_max: f64,
    phi_count: usize,
) -> Result<SveSystem> {
    let probe = Sinogram::zeros(basis.rank, s_count, s_min, s_max, phi_count)?;
    let max_p = basis.elements.iter().filter_map(|e| e.sinogram_pattern()).map(|p| p.0).max().unwrap_or(0);
    let n_max = basis.elements.iter().map(|e| e.radial.len()).max().unwrap_or(1) - 1;
    if phi_count < 2 * (max_p + 1) {
        return Err(Error::Domain(format!("{phi_count} angles cannot resolve angular frequency {max_p}")));
    }
    if s_count < 2 * (n_max + 1) {
        return Err(Error::Domain(format!("{s_count} offsets cannot resolve radial order {n_max}")));
    }
    let ws = trapezoid_weights(s_count, s_min, s_max);
    let wphi = TAU / phi_count as f64;
    let u_tables: Vec<Vec<f64>> = (0..s_count).map(|i| chebyshev_u_table(n_max, probe.s(i).clamp(-1.0, 1.0))).collect();
    let mut keys: Vec<(usize, Parity)> = Vec::new();
    let mut members: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut null_elements = Vec::new();
    for (j, e) in basis.elements.iter().enumerate() {
        match e.sinogram_pattern() {
            None => null_elements.push(j),
            Some((p, parity, sign)) => match keys.iter().position(|k| *k == (p, parity)) {
                Some(b) => members[b].push((j, sign)),
                None => {
                    keys.push((p, parity));
                    members.push(vec![(j, sign)]);
                }
            },
        }
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&b| keys[b]);
    let blocks = order
        .into_par_iter()
        .map(|b| {
            let (p, parity) = keys[b];
            let raw: Vec<f64> = (0..phi_count).map(|j| wphi.sqrt() * parity_harmonic(p, parity, probe.phi(j))).collect();
            let norm = dot(&raw, &raw).sqrt();
            let pattern = raw.iter().map(|v| v / norm).collect();
            let cols = &members[b];
            let matrix = DMatrix::from_fn(s_count, cols.len(), |i, c| {
                let (e, sign) = cols[c];
                ws[i].sqrt() * sign * basis.elements[e].profile_from(&u_tables[i], probe.s(i)) * norm
            });
            Block { frequency: p, parity, elements: cols.iter().map(|c| c.0).collect(), matrix, pattern }
        })
        .collect();
    Ok(SveSystem {
        basis: basis.clone(),
        s_count,
        s_min,
        s_max,
        phi_count,
        blocks,
        null_elements,
        triples: Vec::new(),
        spectrum: Vec::new(),
    })
}

/// Singular value decomposition of the assembled operator, block by block.
///
/// Singular values below [`DISCARD_RATIO`]` · σ₁` are dropped. Signs are
/// fixed so that the largest-magnitude sample of each left vector is positive.
pub fn factorize(system: SveSystem) -> Result<SveSystem> {
    let mut system = system;
    let parts: Vec<Vec<SingularTriple>> = system
        .blocks
        .par_iter()
        .enumerate()
        .map(|(b, block)| {
            let (u, sigma, vt) = block_svd(&block.matrix)?;
            Ok((0..sigma.len())
                .map(|k| SingularTriple {
                    sigma: sigma[k],
                    block: b,
                    left: u.column(k).iter().copied().collect(),
                    right: vt.row(k).iter().copied().collect(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<SingularTriple> = parts.into_iter().flatten().collect();
    all.sort_by(|a, b| b.sigma.total_cmp(&a.sigma).then(a.block.cmp(&b.block)));
    let top = all.first().map_or(0.0, |t| t.sigma);
    if !(top > 0.0) {
        return Err(Error::Numerical("forward operator is zero".into()));
    }
    system.spectrum = all.iter().map(|t| t.sigma).collect();
    let ws = trapezoid_weights(system.s_count, system.s_min, system.s_max);
    system.triples = all
        .into_iter()
        .filter(|t| t.sigma >= DISCARD_RATIO * top)
        .map(|mut t| {
            if sign_of_largest(&t.left, &ws, &system.blocks[t.block].pattern) < 0.0 {
                t.left.iter_mut().for_each(|v| *v = -*v);
                t.right.iter_mut().for_each(|v| *v = -*v);
            }
            t
        })
        .collect();
    Ok(system)
}

/// Thin SVD through a QR step; the bidiagonal solver is only trusted after
/// its factors reproduce the input.
fn block_svd(matrix: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let scale = matrix.norm();
    let tolerance = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let check = |u: &DMatrix<f64>, s: &[f64], vt: &DMatrix<f64>| {
        let mut us = u.clone();
        for (k, sv) in s.iter().enumerate() {
            us.column_mut(k).scale_mut(*sv);
        }
        (&us * vt - matrix).norm() <= tolerance
    };
    if matrix.nrows() >= matrix.ncols() {
        let qr = matrix.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let svd = r.svd(true, true);
        let (ur, vt) = (svd.u.expect("left vectors requested"), svd.v_t.expect("right vectors requested"));
        let u = q * ur;
        let s: Vec<f64> = svd.singular_values.iter().copied().collect();
        if check(&u, &s, &vt) {
            return Ok((u, s, vt));
        }
    }
    let svd = matrix.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("left vectors requested"), svd.v_t.expect("right vectors requested"));
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    if check(&u, &s, &vt) {
        return Ok((u, s, vt));
    }
    Err(Error::Numerical(format!("SVD of a {}x{} block did not converge", matrix.nrows(), matrix.ncols())))
}

/// Sign of the first largest-magnitude entry, in storage order, of the
/// data-space vector `left[i] pattern[j] / √w_s[i]`.
fn sign_of_largest(left: &[f64], ws: &[f64], pattern: &[f64]) -> f64 {
    let first_max = |v: &mut dyn Iterator<Item = f64>| {
        let mut best = (0usize, 0.0f64);
        for (k, x) in v.enumerate() {
            if x.abs() > best.1.abs() {
                best = (k, x);
            }
        }
        best.1
    };
    let a = first_max(&mut left.iter().zip(ws).map(|(l, w)| l / w.sqrt()));
    let p = first_max(&mut pattern.iter().copied());
    (a * p).signum()
}

/// How many singular triples enter a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// The `M` largest.
    Count(usize),
    /// All with `σ >= τ σ₁`.
    Relative(f64),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Relative(DEFAULT_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub field: TensorField,
    /// Coefficients over the basis elements.
    pub coefficients: Vec<f64>,
    /// Number of singular triples used.
    pub kept: usize,
    /// Fraction of valid data bins.
    pub coverage: f64,
    /// Set when coverage is below one half.
    pub low_coverage: bool,
    /// `‖A f - g‖ / ‖g‖` in the weighted data norm over valid bins.
    pub data_residual: f64,
}

impl SveSystem {
    fn s_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.s_count, self.s_min, self.s_max)
    }

    fn s(&self, i: usize) -> f64 {
        self.s_min + i as f64 * (self.s_max - self.s_min) / (self.s_count - 1) as f64
    }

    pub fn check_grid(&self, g: &Sinogram) -> Result<()> {
        if g.s_count != self.s_count || g.phi_count != self.phi_count || g.s_min != self.s_min || g.s_max != self.s_max {
            return Err(Error::GridMismatch(format!(
                "sinogram is {}x{} on [{}, {}], system expects {}x{} on [{}, {}]",
                g.s_count, g.phi_count, g.s_min, g.s_max, self.s_count, self.phi_count, self.s_min, self.s_max
            )));
        }
        Ok(())
    }

    /// Number of triples selected by a truncation rule.
    pub fn truncation_count(&self, truncation: Truncation) -> Result<usize> {
        match truncation {
            Truncation::Count(m) => {
                if m == 0 || m > self.triples.len() {
                    return Err(Error::Domain(format!("M = {m} outside 1..={}", self.triples.len())));
                }
                Ok(m)
            }
            Truncation::Relative(tau) => {
                if !(tau > 0.0) {
                    return Err(Error::Domain(format!("threshold {tau} must be positive")));
                }
                let top = self.triples.first().map_or(0.0, |t| t.sigma);
                Ok(self.triples.iter().take_while(|t| t.sigma >= tau * top).count())
            }
        }
    }

    /// Column `j` of the unweighted forward matrix, laid out like a sinogram.
    pub fn column(&self, j: usize) -> Result<Sinogram> {
        let mut c = vec![0.0; self.basis.len()];
        *c.get_mut(j).ok_or_else(|| Error::Domain(format!("no basis element {j}")))? = 1.0;
        self.apply(&c)
    }

    /// `A c` on every bin, evaluated from the closed-form element transforms.
    pub fn apply(&self, coefficients: &[f64]) -> Result<Sinogram> {
        if coefficients.len() != self.basis.len() {
            return Err(Error::Domain(format!("{} coefficients for {} elements", coefficients.len(), self.basis.len())));
        }
        let mut out = Sinogram::zeros(self.basis.rank, self.s_count, self.s_min, self.s_max, self.phi_count)?;
        let n_max = self.basis.elements.iter().map(|e| e.radial.len()).max().unwrap_or(1) - 1;
        // Chebyshev coefficients of the offset profile summed per angular pattern.
        let mut combined: Vec<((usize, Parity), Vec<f64>)> = Vec::new();
        for (e, &c) in self.basis.elements.iter().zip(coefficients) {
            let Some((p, parity, sign)) = e.sinogram_pattern().filter(|_| c != 0.0) else { continue };
            let at = match combined.iter().position(|(k, _)| *k == (p, parity)) {
                Some(at) => at,
                None => {
                    combined.push(((p, parity), vec![0.0; n_max + 1]));
                    combined.len() - 1
                }
            };
            let scale = c * sign * if e.slot == Slot::Trace { FRAC_1_SQRT_2 } else { 1.0 };
            for (x, y) in combined[at].1.iter_mut().zip(&e.radial) {
                *x += scale * y;
            }
        }
        let units: Vec<BasisElement> =
            combined.iter().map(|(_, coef)| BasisElement { slot: Slot::DeviatoricReal, m: 0, radial: coef.clone() }).collect();
        let mut profiles: Vec<((usize, Parity), Vec<f64>)> =
            combined.iter().map(|(key, _)| (*key, vec![0.0; self.s_count])).collect();
        for i in 0..self.s_count {
            let s = self.s(i).clamp(-1.0, 1.0);
            let u = chebyshev_u_table(n_max, s);
            for (unit, (_, prof)) in units.iter().zip(profiles.iter_mut()) {
                prof[i] = unit.profile_from(&u, s);
            }
        }
        // Each offset row is a trigonometric sum over the angle grid; evaluate
        // it with one inverse DFT.
        let fft = FftPlanner::new().plan_fft_inverse(self.phi_count);
        let rows: Vec<Vec<f64>> = (0..self.s_count)
            .into_par_iter()
            .map(|i| {
                let mut spectrum = vec![Complex64::new(0.0, 0.0); self.phi_count];
                for ((p, parity), prof) in &profiles {
                    let c = match parity {
                        Parity::Cos => Complex64::new(prof[i], 0.0),
                        Parity::Sin => Complex64::new(0.0, -prof[i]),
                    };
                    spectrum[p % self.phi_count] += c;
                }
                fft.process(&mut spectrum);
                spectrum.iter().map(|z| z.re).collect()
            })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.values[j * self.s_count + i] = *v;
            }
        }
        Ok(out)
    }

    /// The data-space left singular vector of triple `k` on every bin.
    pub fn left_vector(&self, k: usize) -> Result<Sinogram> {
        let t = self.triples.get(k).ok_or_else(|| Error::Domain(format!("no singular triple {k}")))?;
        let mut out = Sinogram::zeros(self.basis.rank, self.s_count, self.s_min, self.s_max, self.phi_count)?;
        let ws = self.s_weights();
        let wphi = TAU / self.phi_count as f64;
        let pattern = &self.blocks[t.block].pattern;
        for j in 0..self.phi_count {
            for i in 0..self.s_count {
                out.values[j * self.s_count + i] = t.left[i] * pattern[j] / (ws[i] * wphi).sqrt();
            }
        }
        Ok(out)
    }

    /// Right singular vector of triple `k` as coefficients over all elements.
    pub fn right_vector(&self, k: usize) -> Result<Vec<f64>> {
        let t = self.triples.get(k).ok_or_else(|| Error::Domain(format!("no singular triple {k}")))?;
        let mut c = vec![0.0; self.basis.len()];
        for (&e, &v) in self.blocks[t.block].elements.iter().zip(&t.right) {
            c[e] = v;
        }
        Ok(c)
    }

    /// Weighted inner product of two sinograms on this system's grid over all bins.
    pub fn data_inner(&self, a: &Sinogram, b: &Sinogram) -> f64 {
        let ws = self.s_weights();
        let wphi = TAU / self.phi_count as f64;
        let mut acc = 0.0;
        for j in 0..self.phi_count {
            for i in 0..self.s_count {
                let k = j * self.s_count + i;
                acc += ws[i] * wphi * a.values[k] * b.values[k];
            }
        }
        acc
    }

    /// `‖A v_k - σ_k u_k‖` in the weighted data norm, from the closed-form columns.
    pub fn triple_residual(&self, k: usize) -> Result<f64> {
        let av = self.apply(&self.right_vector(k)?)?;
        let u = self.left_vector(k)?;
        let sigma = self.triples[k].sigma;
        let diff = av.zip_map(&u, |a, b| a - sigma * b);
        Ok(self.data_inner(&diff, &diff).sqrt())
    }

    /// Largest `|⟨pattern_a, pattern_b⟩|` between different blocks.
    pub fn pattern_cross_talk(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.blocks.len() {
            for b in a + 1..self.blocks.len() {
                worst = worst.max(dot(&self.blocks[a].pattern, &self.blocks[b].pattern).abs());
            }
        }
        worst
    }
}

impl Sinogram {
    fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Sinogram, f: F) -> Sinogram {
        let mut out = self.clone();
        for (o, b) in out.values.iter_mut().zip(&other.values) {
            *o = f(*o, *b);
        }
        out
    }
}

/// Truncated SVE reconstruction `Σ_{i<=M} ⟨g, u_i⟩ v_i / σ_i`.
///
/// Inner products run over valid bins only and are rescaled by the ratio of
/// total to valid data weight.
pub fn reconstruct(g: &Sinogram, system: &SveSystem, truncation: Truncation) -> Result<Reconstruction> {
    let coefficients = reconstruct_coefficients(g, system, truncation)?;
    let kept = system.truncation_count(truncation)?;
    let field = system.basis.evaluate(&coefficients)?;
    let coverage = g.coverage();
    let data_residual = masked_residual(g, system, &coefficients)?;
    Ok(Reconstruction { field, coefficients, kept, coverage, low_coverage: coverage < 0.5, data_residual })
}

/// The coefficient vector of [`reconstruct`] without rendering a field.
pub fn reconstruct_coefficients(g: &Sinogram, system: &SveSystem, truncation: Truncation) -> Result<Vec<f64>> {
    system.check_grid(g)?;
    if g.rank != system.basis.rank {
        return Err(Error::Rank { expected: system.basis.rank, found: g.rank });
    }
    if system.triples.is_empty() {
        return Err(Error::Domain("system has not been factorized".into()));
    }
    let m = system.truncation_count(truncation)?;
    let (s_count, phi_count) = (system.s_count, system.phi_count);
    let ws = system.s_weights();
    let wphi = TAU / phi_count as f64;
    let (mut total, mut valid) = (0.0, 0.0);
    for j in 0..phi_count {
        for i in 0..s_count {
            let w = ws[i] * wphi;
            total += w;
            if g.is_valid(j * s_count + i) {
                valid += w;
            }
        }
    }
    if valid == 0.0 {
        return Err(Error::Domain("sinogram has no valid bins".into()));
    }
    let reweight = total / valid;
    // Angular projections per block: ĝ_b(i) = Σ_j √w_φ g(i, j) pattern_b(j).
    let masked: Vec<f64> = g.values.iter().enumerate().map(|(k, v)| if g.is_valid(k) { *v } else { 0.0 }).collect();
    let projected: Vec<Vec<f64>> = system
        .blocks
        .par_iter()
        .map(|b| {
            let mut acc = vec![0.0; s_count];
            for (column, &p) in masked.chunks_exact(s_count).zip(&b.pattern) {
                acc.iter_mut().zip(column).for_each(|(a, v)| *a += v * p);
            }
            acc.iter_mut().for_each(|a| *a *= wphi.sqrt());
            acc
        })
        .collect();
    let mut coefficients = vec![0.0; system.basis.len()];
    for t in &system.triples[..m] {
        let gb = &projected[t.block];
        let inner: f64 = (0..s_count).map(|i| ws[i].sqrt() * t.left[i] * gb[i]).sum::<f64>() * reweight;
        let scale = inner / t.sigma;
        for (&e, &v) in system.blocks[t.block].elements.iter().zip(&t.right) {
            coefficients[e] += scale * v;
        }
    }
    Ok(coefficients)
}

fn masked_residual(g: &Sinogram, system: &SveSystem, coefficients: &[f64]) -> Result<f64> {
    let fitted = system.apply(coefficients)?;
    let ws = system.s_weights();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..system.phi_count {
        for i in 0..system.s_count {
            let k = j * system.s_count + i;
            if g.is_valid(k) {
                num += ws[i] * (fitted.values[k] - g.values[k]).powi(2);
                den += ws[i] * g.values[k].powi(2);
            }
        }
    }
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}

/// Fingerprint of the parameters that determine a system, usable as a file name.
pub fn system_fingerprint(rank: usize, n_rad: usize, k_ang: usize, grid: Grid, s_count: usize, s_min: f64, s_max: f64, phi_count: usize) -> String {
    format!(
        "sve-r{rank}-n{n_rad}-k{k_ang}-g{}x{:016x}-s{s_count}x{:016x}x{:016x}-p{phi_count}",
        grid.n,
        grid.extent.to_bits(),
        s_min.to_bits(),
        s_max.to_bits()
    )
}

impl SveSystem {
    pub fn fingerprint(&self) -> String {
        system_fingerprint(
            self.basis.rank,
            self.basis.n_rad,
            self.basis.k_ang,
            self.basis.grid,
            self.s_count,
            self.s_min,
            self.s_max,
            self.phi_count,
        )
    }
}

const CACHE_MAGIC: &[u8] = b"TSVE 1\n";

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len());
        self.0.reserve(8 * v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len());
        let end = end.ok_or_else(|| Error::Parse("system cache is truncated".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Parse(format!("count {v} does not fit in memory")))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A count of items of `size` bytes each that must fit in the remaining input.
    fn count(&mut self, size: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.checked_mul(size).map_or(true, |b| b > self.data.len() - self.pos) {
            return Err(Error::Parse(format!("count {n} exceeds the remaining {} bytes", self.data.len() - self.pos)));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        Ok(self.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl SveSystem {
    /// Binary serialization used for the on-disk system cache.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(CACHE_MAGIC.to_vec());
        let b = &self.basis;
        w.u64(b.rank);
        w.u64(b.n_rad);
        w.u64(b.k_ang);
        w.u64(b.grid.n);
        w.f64(b.grid.extent);
        w.f64(b.gram_error);
        w.u64(b.elements.len());
        for e in &b.elements {
            w.0.push(e.slot.code());
            w.i64(e.m);
            w.f64s(&e.radial);
        }
        w.u64(self.s_count);
        w.f64(self.s_min);
        w.f64(self.s_max);
        w.u64(self.phi_count);
        w.u64(self.blocks.len());
        for blk in &self.blocks {
            w.u64(blk.frequency);
            w.0.push(matches!(blk.parity, Parity::Sin) as u8);
            w.u64(blk.elements.len());
            blk.elements.iter().for_each(|e| w.u64(*e));
            w.f64s(blk.matrix.as_slice());
            w.f64s(&blk.pattern);
        }
        w.u64(self.null_elements.len());
        self.null_elements.iter().for_each(|e| w.u64(*e));
        w.f64s(&self.spectrum);
        w.u64(self.triples.len());
        for t in &self.triples {
            w.f64(t.sigma);
            w.u64(t.block);
            w.f64s(&t.left);
            w.f64s(&t.right);
        }
        w.0
    }

    /// Inverse of [`SveSystem::to_bytes`]; rejects malformed or inconsistent input.
    pub fn from_bytes(data: &[u8]) -> Result<SveSystem> {
        if !data.starts_with(CACHE_MAGIC) {
            return Err(Error::Parse("not a system cache file".into()));
        }
        let mut r = Reader { data, pos: CACHE_MAGIC.len() };
        let bad = |m: &str| Error::Parse(format!("system cache: {m}"));
        let rank = r.u64()?;
        if rank != 0 && rank != 2 {
            return Err(bad("rank must be 0 or 2"));
        }
        let (n_rad, k_ang, grid_n) = (r.u64()?, r.u64()?, r.u64()?);
        let extent = r.f64()?;
        let grid = Grid::new(grid_n, extent).map_err(|e| bad(&e.to_string()))?;
        let gram_error = r.f64()?;
        let element_count = r.count(17)?;
        let mut elements = Vec::with_capacity(element_count);
        for _ in 0..element_count {
            let slot = Slot::from_code(r.u8()?).ok_or_else(|| bad("unknown slot"))?;
            if (slot == Slot::Scalar) != (rank == 0) {
                return Err(bad("slot does not match rank"));
            }
            let m = r.i64()?;
            let radial = r.f64s()?;
            if radial.is_empty() || m.unsigned_abs() as usize >= radial.len() + 1 && radial.iter().any(|c| *c != 0.0) {
                return Err(bad("radial coefficients do not fit the angular order"));
            }
            elements.push(BasisElement { slot, m, radial });
        }
        let s_count = r.u64()?;
        let (s_min, s_max) = (r.f64()?, r.f64()?);
        let phi_count = r.u64()?;
        Sinogram::zeros(rank, s_count, s_min, s_max, phi_count.max(1)).map_err(|e| bad(&e.to_string()))?;
        if phi_count == 0 {
            return Err(bad("no angles"));
        }
        let block_count = r.count(17)?;
        let mut blocks = Vec::with_capacity(block_count);
        for _ in 0..block_count {
            let frequency = r.u64()?;
            let parity = if r.u8()? == 0 { Parity::Cos } else { Parity::Sin };
            let n = r.count(8)?;
            let members: Vec<usize> = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
            if members.iter().any(|e| *e >= elements.len()) {
                return Err(bad("block refers to a missing element"));
            }
            let values = r.f64s()?;
            if values.len() != s_count.checked_mul(n).ok_or_else(|| bad("block too large"))? {
                return Err(bad("block matrix has the wrong size"));
            }
            let pattern = r.f64s()?;
            if pattern.len() != phi_count {
                return Err(bad("angular pattern has the wrong length"));
            }
            blocks.push(Block { frequency, parity, elements: members, matrix: DMatrix::from_vec(s_count, n, values), pattern });
        }
        let n_null = r.count(8)?;
        let null_elements: Vec<usize> = (0..n_null).map(|_| r.u64()).collect::<Result<_>>()?;
        if null_elements.iter().any(|e| *e >= elements.len()) {
            return Err(bad("null element index out of range"));
        }
        let spectrum = r.f64s()?;
        let n_triples = r.count(24)?;
        let mut triples = Vec::with_capacity(n_triples);
        for _ in 0..n_triples {
            let sigma = r.f64()?;
            let block = r.u64()?;
            let blk = blocks.get(block).ok_or_else(|| bad("triple refers to a missing block"))?;
            let left = r.f64s()?;
            let right = r.f64s()?;
            if left.len() != s_count || right.len() != blk.elements.len() || !(sigma > 0.0) {
                return Err(bad("malformed singular triple"));
            }
            triples.push(SingularTriple { sigma, block, left, right });
        }
        if r.pos != data.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(SveSystem {
            basis: ImageBasis { rank, n_rad, k_ang, grid, elements, gram_error },
            s_count,
            s_min,
            s_max,
            phi_count,
            blocks,
            null_elements,
            triples,
            spectrum,
        })
    }
}

/// Builds, assembles and factorizes in one step.
pub fn build_system(rank: usize, n_rad: usize, k_ang: usize, grid: Grid, s_count: usize, phi_count: usize) -> Result<SveSystem> {
    factorize(assemble_forward(&build_basis(rank, n_rad, k_ang, grid)?, s_count, phi_count)?)
}

/// Parameters of the deviatoric-delta reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkedExampleOptions {
    pub epsilon: f64,
    pub n_rad: usize,
    pub k_ang: usize,
    pub truncation: Truncation,
    pub s_count: usize,
    pub phi_count: usize,
    /// Nodes per axis of the grid the phantom is sampled on.
    pub source_nodes: usize,
    /// Nodes per axis of the output grid.
    pub output_nodes: usize,
}

impl Default for WorkedExampleOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            n_rad: 50,
            k_ang: 40,
            truncation: Truncation::default(),
            s_count: 257,
            phi_count: 360,
            source_nodes: 257,
            output_nodes: 129,
        }
    }
}

/// Normal Radon sinogram of the mollified deviatoric delta, sampled on the unit disk.
pub fn worked_example_sinogram(epsilon: f64, source_nodes: usize, s_count: usize, phi_count: usize) -> Result<Sinogram> {
    let grid = Grid::new(source_nodes, 1.0)?;
    sinogram(&deviatoric_delta(epsilon, grid)?, s_count, phi_count)
}

/// The system used by [`reconstruct_worked_example`].
pub fn worked_example_system(options: &WorkedExampleOptions) -> Result<SveSystem> {
    build_system(2, options.n_rad, options.k_ang, Grid::new(options.output_nodes, 1.0)?, options.s_count, options.phi_count)
}

/// Reconstructs the mollified deviatoric delta from its normal Radon data.
///
/// The result approximates the part of the phantom the transform can see;
/// components are `F11`, `F12`, `F22` in that order.
pub fn reconstruct_worked_example(options: &WorkedExampleOptions) -> Result<Reconstruction> {
    reconstruct_worked_example_with(&worked_example_system(options)?, options)
}

pub fn reconstruct_worked_example_with(system: &SveSystem, options: &WorkedExampleOptions) -> Result<Reconstruction> {
    let g = worked_example_sinogram(options.epsilon, options.source_nodes, options.s_count, options.phi_count)?;
    reconstruct(&g, system, options.truncation)
}

/// Reference for the deviatoric-delta reconstruction: the visible part of the
/// mollified phantom by the Fourier solver, on a unit-extent grid.
pub fn worked_example_oracle(epsilon: f64, nodes: usize) -> Result<TensorField> {
    normal_recoverable_part(&deviatoric_delta(epsilon, Grid::new(nodes, 1.0)?)?)
}

/// Agreement of two rank-2 fields on an annulus, sampled in polar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusComparison {
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Relative `L²` difference of the full tensors.
    pub full_field: f64,
    /// Relative `L²` difference after keeping only the 2- and 4-fold angular
    /// harmonics of each component.
    pub harmonic: f64,
    /// Sign changes in `[0.1, 0.9]` of the radial profile of the `sin 4θ`
    /// harmonic of the `F12` difference.
    pub ringing_sign_changes: usize,
}

/// Samples `field` on a polar grid: `[ring][angle][component]`.
fn polar_samples<F: Fn(f64, f64, &mut [f64])>(radii: &[f64], angles: usize, rank: usize, eval: F) -> Vec<Vec<Vec<f64>>> {
    radii
        .iter()
        .map(|&r| {
            (0..angles)
                .map(|k| {
                    let t = TAU * k as f64 / angles as f64;
                    let mut v = vec![0.0; rank + 1];
                    eval(r * t.cos(), r * t.sin(), &mut v);
                    v
                })
                .collect()
        })
        .collect()
}

/// Keeps only the listed angular harmonics of each ring of samples.
fn harmonic_filter(ring: &[Vec<f64>], harmonics: &[usize]) -> Vec<Vec<f64>> {
    let count = ring.len();
    let comps = ring[0].len();
    let mut out = vec![vec![0.0; comps]; count];
    for c in 0..comps {
        for &h in harmonics {
            let (mut a, mut b) = (0.0, 0.0);
            for (k, v) in ring.iter().enumerate() {
                let t = TAU * (h * k) as f64 / count as f64;
                a += v[c] * t.cos();
                b += v[c] * t.sin();
            }
            let scale = if h == 0 { 1.0 } else { 2.0 } / count as f64;
            for (k, o) in out.iter_mut().enumerate() {
                let t = TAU * (h * k) as f64 / count as f64;
                o[c] += scale * (a * t.cos() + b * t.sin());
            }
        }
    }
    out
}

fn frobenius_sq(v: &[f64]) -> f64 {
    let rank = v.len() - 1;
    v.iter().enumerate().map(|(j, x)| binomial(rank, j) * x * x).sum()
}

/// Compares a reconstruction with a reference on `inner < r < outer`.
pub fn compare_on_annulus(recon: &TensorField, reference: &TensorField, inner: f64, outer: f64) -> Result<AnnulusComparison> {
    if recon.rank() != 2 || reference.rank() != 2 {
        return Err(Error::Rank { expected: 2, found: if recon.rank() != 2 { recon.rank() } else { reference.rank() } });
    }
    let gl = GaussLegendre::new(48);
    let (radii, weights): (Vec<f64>, Vec<f64>) = gl.mapped(inner, outer).map(|(r, w)| (r, w * r)).unzip();
    let angles = 256;
    let a = polar_samples(&radii, angles, 2, |x, y, o| recon.interpolate_into(x, y, o));
    let b = polar_samples(&radii, angles, 2, |x, y, o| reference.interpolate_into(x, y, o));
    let measure = |fa: &dyn Fn(&[Vec<f64>]) -> Vec<Vec<f64>>| {
        let (mut num, mut den) = (0.0, 0.0);
        for ((ra, rb), w) in a.iter().zip(&b).zip(&weights) {
            let (pa, pb) = (fa(ra), fa(rb));
            for (va, vb) in pa.iter().zip(&pb) {
                let d: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x - y).collect();
                num += w * frobenius_sq(&d);
                den += w * frobenius_sq(vb);
            }
        }
        (num / den).sqrt()
    };
    let full_field = measure(&|ring: &[Vec<f64>]| ring.to_vec());
    let harmonic = measure(&|ring: &[Vec<f64>]| harmonic_filter(ring, &[2, 4]));
    let profile_radii: Vec<f64> = (0..=160).map(|k| 0.1 + 0.8 * k as f64 / 160.0).collect();
    let pa = polar_samples(&profile_radii, angles, 2, |x, y, o| recon.interpolate_into(x, y, o));
    let pb = polar_samples(&profile_radii, angles, 2, |x, y, o| reference.interpolate_into(x, y, o));
    let profile: Vec<f64> = pa
        .iter()
        .zip(&pb)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .enumerate()
                .map(|(k, (va, vb))| (va[1] - vb[1]) * (4.0 * TAU * k as f64 / angles as f64).sin())
                .sum::<f64>()
                * 2.0
                / angles as f64
        })
        .collect();
    Ok(AnnulusComparison {
        inner_radius: inner,
        outer_radius: outer,
        full_field,
        harmonic,
        ringing_sign_changes: sign_changes(&profile),
    })
}

/// Number of sign changes, ignoring exact zeros.
pub fn sign_changes(values: &[f64]) -> usize {
    let signs: Vec<bool> = values.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Filtered back-projection of a scalar sinogram with the Ram-Lak kernel and
/// linear interpolation in `s`. Masked bins count as zero.
pub fn filtered_back_projection(g: &Sinogram, grid: Grid) -> Result<TensorField> {
    if g.rank != 0 {
        return Err(Error::Rank { expected: 0, found: g.rank });
    }
    let (s_count, phi_count) = (g.s_count, g.phi_count);
    let ds = g.s_step();
    // Output offsets reach S-1 samples past either end, so the kernel spans
    // twice the data width.
    let reach = 2 * (s_count as i64 - 1);
    let size = (5 * s_count).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    // Spatial Ram-Lak kernel, stored circularly.
    let mut kernel = vec![Complex64::new(0.0, 0.0); size];
    for k in -reach..=reach {
        let v = if k == 0 {
            1.0 / (4.0 * ds * ds)
        } else if k % 2 != 0 {
            -1.0 / ((k * k) as f64 * PI * PI * ds * ds)
        } else {
            0.0
        };
        kernel[k.rem_euclid(size as i64) as usize] = Complex64::new(v, 0.0);
    }
    fwd.process(&mut kernel);
    let lead = s_count - 1;
    let filtered: Vec<Vec<f64>> = (0..phi_count)
        .into_par_iter()
        .map(|p| {
            let mut buf = vec![Complex64::new(0.0, 0.0); size];
            for i in 0..s_count {
                let k = g.index(i, p);
                if g.is_valid(k) {
                    buf[i] = Complex64::new(g.values[k], 0.0);
                }
            }
            fwd.process(&mut buf);
            buf.iter_mut().zip(&kernel).for_each(|(a, b)| *a *= b);
            inv.process(&mut buf);
            // Offsets from S-1 samples below the range to S-1 above it, so
            // points outside the sampled strip still receive the tails.
            (0..3 * s_count - 2)
                .map(|k| buf[(k + size - lead) % size].re * ds / size as f64)
                .collect()
        })
        .collect();
    let trig: Vec<(f64, f64)> = (0..phi_count).map(|p| g.phi(p).sin_cos()).collect();
    let scale = PI / phi_count as f64;
    Ok(TensorField::from_fn(0, grid, |x, y, out| {
        let mut acc = 0.0;
        for (q, &(s, c)) in filtered.iter().zip(&trig) {
            let t = (x * c + y * s - g.s_min) / ds + lead as f64;
            if t < 0.0 || t > (q.len() - 1) as f64 {
                continue;
            }
            let i = (t.floor() as usize).min(q.len() - 2);
            let f = t - i as f64;
            acc += (1.0 - f) * q[i] + f * q[i + 1];
        }
        out[0] = scale * acc;
    }))
}

/// Recovers `φ` from normal Radon data of `d^N φ` by integrating `N` times
/// in `s` from the low end and back-projecting.
pub fn recover_scalar_from_normal_data(g: &Sinogram, n_deg: usize, grid: Grid) -> Result<TensorField> {
    recover_scalar_with_tolerance(g, n_deg, grid, CONSISTENCY_TOLERANCE)
}

/// [`recover_scalar_from_normal_data`] with an explicit tolerance on the
/// relative value of each antiderivative at the high end of the offsets.
pub fn recover_scalar_with_tolerance(g: &Sinogram, n_deg: usize, grid: Grid, tolerance: f64) -> Result<TensorField> {
    if g.rank != n_deg {
        return Err(Error::Rank { expected: n_deg, found: g.rank });
    }
    if g.valid_count() != g.len() {
        return Err(Error::Domain("antiderivatives need complete offset columns".into()));
    }
    let (s_count, ds) = (g.s_count, g.s_step());
    let mut data = g.clone();
    for _ in 0..n_deg {
        let mut worst_end: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for p in 0..g.phi_count {
            let col = &mut data.values[p * s_count..(p + 1) * s_count];
            let mut acc = 0.0;
            let mut prev = col[0];
            col[0] = 0.0;
            for v in col.iter_mut().skip(1) {
                acc += 0.5 * ds * (prev + *v);
                prev = *v;
                *v = acc;
            }
            worst_end = worst_end.max(acc.abs());
            peak = col.iter().fold(peak, |m, v| m.max(v.abs()));
        }
        let residual = if peak > 0.0 { worst_end / peak } else { 0.0 };
        if residual > tolerance {
            return Err(Error::Inconsistent { residual, tolerance });
        }
    }
    data.rank = 0;
    filtered_back_projection(&data, grid)
}
