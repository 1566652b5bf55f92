//! Splitting rank-2 fields into solenoidal and potential parts, `F = G + dV`
//! with `δG = 0`, plus the closed-form deviatoric-delta example and a local
//! non-smoothness score.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::phantoms::{deviatoric_delta, gaussian};
use crate::quadrature::GaussLegendre;
use crate::tensor::{binomial, divergence, partial, sym_derivative, Grid, SymTensor, TensorField};

/// Nodes closer than this to the grid edge are excluded from residual checks.
pub const INTERIOR_MARGIN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub solenoidal: TensorField,
    pub potential_gradient: TensorField,
    pub potential: TensorField,
}

impl Decomposition {
    /// `‖δG‖ / ‖G‖` over the interior.
    pub fn divergence_residual(&self) -> Result<f64> {
        let g = &self.solenoidal;
        let dg = divergence(g)?;
        let n = g.interior_norm(INTERIOR_MARGIN);
        Ok(if n == 0.0 { 0.0 } else { dg.interior_norm(INTERIOR_MARGIN) / n })
    }
}

/// Fourier symbol of the interior first-derivative stencil, divided by `i`.
pub fn derivative_symbol(theta: f64, h: f64) -> f64 {
    (45.0 * theta.sin() - 9.0 * (2.0 * theta).sin() + (3.0 * theta).sin()) / (30.0 * h)
}

/// Smallest eigenvalue of the symbol of `-δd` over the nonzero frequencies of
/// an `m × m` periodic lattice with spacing `h`.
pub fn symbol_min_eigenvalue(m: usize, h: f64) -> f64 {
    let mut min = f64::INFINITY;
    for qy in 0..m {
        for qx in 0..m {
            if qx == 0 && qy == 0 {
                continue;
            }
            let kx = derivative_symbol(TAU * qx as f64 / m as f64, h);
            let ky = derivative_symbol(TAU * qy as f64 / m as f64, h);
            // Eigenvalues of ½(|κ|² I + κκᵀ) are ½|κ|² and |κ|².
            min = min.min(0.5 * (kx * kx + ky * ky));
        }
    }
    min
}

/// Smallest odd `3^a 5^b` not below `n`.
///
/// Odd lengths keep the half-sampling frequency, where central-difference
/// symbols vanish, off the lattice.
fn odd_smooth_size(n: usize) -> usize {
    let mut best = usize::MAX;
    let mut p3 = 1usize;
    while p3 < 2 * n.max(1) {
        let mut v = p3;
        while v < n {
            v *= 5;
        }
        best = best.min(v);
        p3 *= 3;
    }
    best
}

struct Fft2 {
    m: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { m, forward: planner.plan_fft_forward(m), inverse: planner.plan_fft_inverse(m) }
    }

    fn transpose(&self, data: &mut [Complex64]) {
        let m = self.m;
        for j in 0..m {
            for i in j + 1..m {
                data.swap(j * m + i, i * m + j);
            }
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        fft.process(data);
        self.transpose(data);
        fft.process(data);
        self.transpose(data);
        if inverse {
            let scale = 1.0 / (self.m * self.m) as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Rejects fields that reach the outer tenth of the grid.
fn check_padding(f: &TensorField) -> Result<()> {
    let g = f.grid();
    let peak = f.max_abs();
    if peak == 0.0 {
        return Ok(());
    }
    let edge = 0.9 * g.extent;
    let mut worst: f64 = 0.0;
    for idx in 0..g.len() {
        let [x, y] = g.position(idx);
        if x.abs() > edge || y.abs() > edge {
            for p in f.planes() {
                worst = worst.max(p[idx].abs());
            }
        }
    }
    let rel = worst / peak;
    if rel > 1e-6 {
        return Err(Error::InsufficientPadding(rel));
    }
    Ok(())
}

/// Solves `δdV = δF` on a zero-padded periodic grid and returns `G = F - dV`.
pub fn solenoidal_projection(f: &TensorField) -> Result<Decomposition> {
    solenoidal_projection_with(f, 4)
}

/// [`solenoidal_projection`] with a chosen padding factor.
///
/// `δ` and `d` are diagonalized with the symbol of the interior
/// finite-difference stencil, so in the interior the returned `G` is
/// divergence-free to rounding. Rigid motions are removed from `V` by least
/// squares; they do not change `dV`.
pub fn solenoidal_projection_with(f: &TensorField, pad_factor: usize) -> Result<Decomposition> {
    if f.rank() != 2 {
        return Err(Error::Rank { expected: 2, found: f.rank() });
    }
    if !f.atoms.is_empty() {
        return Err(Error::Domain("delta atoms must be mollified before decomposition".into()));
    }
    if pad_factor < 2 {
        return Err(Error::Domain(format!("padding factor must be at least 2, got {pad_factor}")));
    }
    let grid = f.grid();
    if grid.n < 2 * INTERIOR_MARGIN + 1 {
        return Err(Error::GridTooSmall(format!("{} nodes per axis", grid.n)));
    }
    check_padding(f)?;
    let n = grid.n;
    let h = grid.spacing();
    let m = odd_smooth_size(pad_factor * n);
    let fft = Fft2::new(m);
    let mut spectra: Vec<Vec<Complex64>> = (0..3)
        .map(|c| {
            let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
            let plane = f.plane(c);
            for j in 0..n {
                for i in 0..n {
                    buf[j * m + i] = Complex64::new(plane[j * n + i], 0.0);
                }
            }
            fft.run(&mut buf, false);
            buf
        })
        .collect();
    let kappa: Vec<f64> = (0..m).map(|q| derivative_symbol(TAU * q as f64 / m as f64, h)).collect();
    let mut v1 = vec![Complex64::new(0.0, 0.0); m * m];
    let mut v2 = vec![Complex64::new(0.0, 0.0); m * m];
    let i_unit = Complex64::new(0.0, 1.0);
    for qy in 0..m {
        for qx in 0..m {
            let (kx, ky) = (kappa[qx], kappa[qy]);
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                continue;
            }
            let idx = qy * m + qx;
            let (f11, f12, f22) = (spectra[0][idx], spectra[1][idx], spectra[2][idx]);
            let d1 = i_unit * (kx * f11 + ky * f12);
            let d2 = i_unit * (kx * f12 + ky * f22);
            // V = -M⁻¹ δF with M = ½(|κ|² I + κκᵀ), det M = ½|κ|⁴.
            let det = 0.5 * k2 * k2;
            let (m11, m12, m22) = (0.5 * (k2 + kx * kx), 0.5 * kx * ky, 0.5 * (k2 + ky * ky));
            v1[idx] = -(m22 * d1 - m12 * d2) / det;
            v2[idx] = -(-m12 * d1 + m11 * d2) / det;
        }
    }
    spectra.clear();
    fft.run(&mut v1, true);
    fft.run(&mut v2, true);
    let crop = |buf: &[Complex64]| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                out[j * n + i] = buf[j * m + i].re;
            }
        }
        out
    };
    let mut potential = TensorField::from_planes(1, grid, vec![crop(&v1), crop(&v2)])?;
    remove_rigid_motions(&mut potential);
    let potential_gradient = sym_derivative(&potential)?;
    let solenoidal = f.sub(&potential_gradient)?;
    Ok(Decomposition { solenoidal, potential_gradient, potential })
}

/// The part of a rank-2 field seen by the normal Radon transform: the quarter
/// turn of the solenoidal part of the quarter-turned field.
///
/// The normal transform of `F` is the longitudinal transform of `relabel(F)`,
/// whose kernel is `{dV}`; hence its kernel is `{relabel(dV)}`.
pub fn normal_recoverable_part(f: &TensorField) -> Result<TensorField> {
    Ok(solenoidal_projection(&f.relabel())?.solenoidal.relabel())
}

/// Subtracts the least-squares fit of `a + b (-y, x)` from a vector field.
pub fn remove_rigid_motions(v: &mut TensorField) {
    assert_eq!(v.rank(), 1);
    let g = v.grid();
    let count = g.len() as f64;
    let mean = |p: &[f64]| p.iter().sum::<f64>() / count;
    let (a1, a2) = (mean(v.plane(0)), mean(v.plane(1)));
    let (mut num, mut den) = (0.0, 0.0);
    for idx in 0..g.len() {
        let [x, y] = g.position(idx);
        num += -y * v.plane(0)[idx] + x * v.plane(1)[idx];
        den += x * x + y * y;
    }
    let b = num / den;
    for idx in 0..g.len() {
        let [x, y] = g.position(idx);
        v.plane_mut(0)[idx] -= a1 - b * y;
        v.plane_mut(1)[idx] -= a2 + b * x;
    }
}

/// `[[∂₂₂ψ, -∂₁₂ψ], [-∂₁₂ψ, ∂₁₁ψ]]`, divergence-free for any `ψ`.
pub fn make_solenoidal(psi: &TensorField) -> Result<TensorField> {
    if psi.rank() != 0 {
        return Err(Error::Rank { expected: 0, found: psi.rank() });
    }
    let g = psi.grid();
    if g.n < 5 {
        return Err(Error::GridTooSmall(format!("{} nodes per axis", g.n)));
    }
    let p = psi.plane(0);
    let px = partial(p, g, 0);
    let py = partial(p, g, 1);
    let pxx = partial(&px, g, 0);
    let pxy = partial(&px, g, 1);
    let pyy = partial(&py, g, 1);
    TensorField::from_planes(2, g, vec![pyy, pxy.iter().map(|v| -v).collect(), pxx])
}

/// Quarter-turn relabelling of `dV`, which the normal Radon transform annihilates.
pub fn make_null_field(v: &TensorField) -> Result<TensorField> {
    if v.rank() != 1 {
        return Err(Error::Rank { expected: 1, found: v.rank() });
    }
    let g = v.grid();
    let peak = v.max_abs();
    let rim = 1.0 - 2.0 * g.spacing();
    for idx in 0..g.len() {
        let [x, y] = g.position(idx);
        if x.hypot(y) >= rim && v.planes().iter().any(|p| p[idx].abs() > 1e-12 * peak) {
            return Err(Error::Domain(format!(
                "potential must vanish near the unit circle; nonzero at ({x:.4}, {y:.4})"
            )));
        }
    }
    Ok(sym_derivative(v)?.relabel())
}

/// Smooth part of the published closed-form potential gradient for
/// `F = diag(δ₀, -δ₀)`, taken verbatim:
/// `-1/(2π r²) [[3r⁴ + cos2θ (1+3r⁴) + cos4θ, sin4θ], [sin4θ, -3r⁴ + cos2θ (1+3r⁴) - cos4θ]]`.
pub fn worked_example_dv_smooth(r: f64, theta: f64) -> Result<SymTensor> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("closed form is distributional at r = {r}")));
    }
    let r4 = r.powi(4);
    let (c2, c4, s4) = ((2.0 * theta).cos(), (4.0 * theta).cos(), (4.0 * theta).sin());
    let k = -1.0 / (TAU * r * r);
    Ok(SymTensor::matrix(
        k * (3.0 * r4 + c2 * (1.0 + 3.0 * r4) + c4),
        k * s4,
        k * (-3.0 * r4 + c2 * (1.0 + 3.0 * r4) - c4),
    ))
}

/// Point-mass coefficient of the published closed form, `(3/4) diag(-1, 1)`.
pub fn worked_example_delta_coeff() -> SymTensor {
    SymTensor::matrix(-0.75, 0.0, 0.75)
}

/// Radial profile `H_m(r)` of the Gaussian-mollified principal value
/// `cos(mθ) / r²`, i.e. `(G_ε * cos(mθ)/r²)(x) = H_m(|x|) cos(mθ)`, `m >= 1`.
#[derive(Debug, Clone)]
pub struct MollifiedInverseSquare {
    step: f64,
    values: Vec<f64>,
}

impl MollifiedInverseSquare {
    pub fn new(m: usize, eps: f64, r_max: f64) -> Self {
        assert!(m >= 1, "the m = 0 term is not a principal value");
        let step = eps / 20.0;
        let count = (r_max / step).ceil() as usize + 4;
        let gl = GaussLegendre::new(16);
        let values = (0..count).map(|k| Self::evaluate(m, eps, k as f64 * step, &gl)).collect();
        Self { step, values }
    }

    fn evaluate(m: usize, eps: f64, r: f64, gl: &GaussLegendre) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let e2 = eps * eps;
        let rho_lo = (r - 12.0 * eps).max(0.0);
        let rho_hi = r + 12.0 * eps;
        let mf = m as f64;
        // (1 / (π ε²)) ∫ ρ⁻¹ ∫₀^π exp(-|x - y|² / 2ε²) cos(mφ) dφ dρ.
        let radial = gl.integrate_composite(rho_lo, rho_hi, 24, |rho| {
            if rho == 0.0 {
                return 0.0;
            }
            let base = (-(r - rho).powi(2) / (2.0 * e2)).exp();
            if base < 1e-300 {
                return 0.0;
            }
            let z = r * rho / e2;
            let cut = if z > 25.0 { (1.0 - 50.0 / z).acos() } else { PI };
            let angular = gl.integrate_composite(0.0, cut, 6, |phi| (-z * (1.0 - phi.cos())).exp() * (mf * phi).cos());
            base * angular / rho
        });
        radial / (PI * e2)
    }

    pub fn at(&self, r: f64) -> f64 {
        let f = r / self.step;
        let k = (f.floor() as usize).max(1).min(self.values.len() - 3);
        let t = f - k as f64;
        let (p0, p1, p2, p3) = (self.values[k - 1], self.values[k], self.values[k + 1], self.values[k + 2]);
        // Cubic Lagrange through four neighbouring samples.
        p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)))
    }
}

/// Solenoidal part predicted by the published closed form for the
/// `eps`-mollified deviatoric delta: `F_ε - (G_ε * dV)`.
///
/// The principal-value harmonics are mollified through [`MollifiedInverseSquare`]
/// and the polynomial terms exactly (`x² ↦ x² + ε²`).
pub fn worked_example_g(grid: Grid, eps: f64) -> Result<TensorField> {
    let f = deviatoric_delta(eps, grid)?;
    let dv = worked_example_dv_mollified(grid, eps)?;
    f.sub(&dv)
}

fn worked_example_dv_mollified(grid: Grid, eps: f64) -> Result<TensorField> {
    let r_max = grid.extent * 2f64.sqrt() + eps;
    let h2 = MollifiedInverseSquare::new(2, eps, r_max);
    let h4 = MollifiedInverseSquare::new(4, eps, r_max);
    let delta = worked_example_delta_coeff();
    let k = -1.0 / TAU;
    let e2 = eps * eps;
    Ok(TensorField::from_fn(2, grid, |x, y, o| {
        let r = x.hypot(y);
        let th = y.atan2(x);
        let (a2, a4) = if r > 0.0 { (h2.at(r), h4.at(r)) } else { (0.0, 0.0) };
        let (c2, c4, s4) = ((2.0 * th).cos(), (4.0 * th).cos(), (4.0 * th).sin());
        let g = gaussian(eps, x, y);
        o[0] = k * (6.0 * (x * x + e2) + a2 * c2 + a4 * c4) + delta.components()[0] * g;
        o[1] = k * a4 * s4;
        o[2] = k * (-6.0 * (y * y + e2) + a2 * c2 - a4 * c4) + delta.components()[2] * g;
    }))
}

/// Comparison of the published closed form against the Fourier solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormReport {
    pub epsilon: f64,
    pub annulus: (f64, f64),
    /// `‖G_closed - G_oracle‖ / ‖G_oracle‖` on the annulus.
    pub relative_l2: f64,
    pub per_component: [f64; 3],
    /// The same measure with the `3r⁴` terms dropped from the closed form.
    pub relative_l2_without_polynomial: f64,
    /// `δ` residual of the closed-form `G` relative to its norm on the annulus.
    pub closed_form_divergence: f64,
    /// Point-mass coefficient of the oracle's `dV`, from its integral over a small disk.
    pub oracle_delta_coeff: [f64; 3],
    pub published_delta_coeff: [f64; 3],
}

impl ClosedFormReport {
    pub fn to_text(&self) -> String {
        format!(
            "closed-form comparison (eps = {})\n\
             annulus {:.3} < r < {:.3}\n\
             relative L2 (G11+G12+G22): {:.6e}\n\
             relative L2 per component: {:.6e} {:.6e} {:.6e}\n\
             relative L2 without 3r^4 terms: {:.6e}\n\
             closed-form divergence residual: {:.6e}\n\
             oracle point-mass coefficient: [{:.6}, {:.6}, {:.6}]\n\
             published point-mass coefficient: [{:.6}, {:.6}, {:.6}]\n",
            self.epsilon,
            self.annulus.0,
            self.annulus.1,
            self.relative_l2,
            self.per_component[0],
            self.per_component[1],
            self.per_component[2],
            self.relative_l2_without_polynomial,
            self.closed_form_divergence,
            self.oracle_delta_coeff[0],
            self.oracle_delta_coeff[1],
            self.oracle_delta_coeff[2],
            self.published_delta_coeff[0],
            self.published_delta_coeff[1],
            self.published_delta_coeff[2],
        )
    }
}

/// Runs the Fourier solver on the mollified deviatoric delta and measures
/// the closed form against it on `5ε < r < 0.8`. Nothing is asserted.
pub fn closed_form_report(grid: Grid, eps: f64) -> Result<ClosedFormReport> {
    let f = deviatoric_delta(eps, grid)?;
    let oracle = solenoidal_projection(&f)?;
    let closed = worked_example_g(grid, eps)?;
    let (r0, r1) = (5.0 * eps, 0.8);
    let annulus = |x: f64, y: f64| {
        let r = x.hypot(y);
        r > r0 && r < r1
    };
    let diff = closed.sub(&oracle.solenoidal)?;
    let relative_l2 = diff.norm_where(annulus) / oracle.solenoidal.norm_where(annulus);
    let component_norm = |fld: &TensorField, c: usize| {
        let g = fld.grid();
        let mut acc = 0.0;
        for idx in 0..g.len() {
            let [x, y] = g.position(idx);
            if annulus(x, y) {
                acc += fld.plane(c)[idx].powi(2);
            }
        }
        acc.sqrt()
    };
    let per_component = [0, 1, 2].map(|c| component_norm(&diff, c) / component_norm(&oracle.solenoidal, c).max(1e-300));
    // 3r⁴/r² terms: -3x²/π in 11 and +3y²/π in 22 (mollified: plus ε²).
    let e2 = eps * eps;
    let poly = TensorField::from_fn(2, grid, |x, y, o| {
        o[0] = 3.0 * (x * x + e2) / PI;
        o[2] = -3.0 * (y * y + e2) / PI;
    });
    let without = closed.sub(&poly)?;
    let relative_l2_without_polynomial =
        without.sub(&oracle.solenoidal)?.norm_where(annulus) / oracle.solenoidal.norm_where(annulus);
    let div = divergence(&closed)?;
    let closed_form_divergence = div.norm_where(annulus) / closed.norm_where(annulus);
    let h2 = grid.spacing() * grid.spacing();
    let disk = 6.0 * eps;
    let mut oracle_delta_coeff = [0.0; 3];
    for idx in 0..grid.len() {
        let [x, y] = grid.position(idx);
        if x.hypot(y) < disk {
            for (c, acc) in oracle_delta_coeff.iter_mut().enumerate() {
                *acc += oracle.potential_gradient.plane(c)[idx] * h2;
            }
        }
    }
    let published = worked_example_delta_coeff();
    Ok(ClosedFormReport {
        epsilon: eps,
        annulus: (r0, r1),
        relative_l2,
        per_component,
        relative_l2_without_polynomial,
        closed_form_divergence,
        oracle_delta_coeff,
        published_delta_coeff: [published.components()[0], published.components()[1], published.components()[2]],
    })
}

/// Local non-smoothness: squared residual, at the node itself, of a
/// least-squares quadratic fit over the surrounding `window × window` patch,
/// summed over components with their multiplicities.
///
/// Nodes whose patch leaves the grid score zero.
pub fn singular_support_score(f: &TensorField, window: usize) -> Result<TensorField> {
    if window < 3 {
        return Err(Error::Domain(format!("window must span at least 3 nodes, got {window}")));
    }
    let w = window | 1;
    let half = w / 2;
    let g = f.grid();
    if g.n < w {
        return Err(Error::GridTooSmall(format!("{} nodes for a {w}-node window", g.n)));
    }
    // Residual projector I - B(BᵀB)⁻¹Bᵀ for the quadratic basis on the patch.
    let pts: Vec<(f64, f64)> = (0..w * w)
        .map(|k| ((k % w) as f64 - half as f64, (k / w) as f64 - half as f64))
        .collect();
    let basis = nalgebra::DMatrix::from_fn(w * w, 6, |r, c| {
        let (u, v) = pts[r];
        [1.0, u, v, u * u, u * v, v * v][c]
    });
    let gram = basis.transpose() * &basis;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Numerical("quadratic fit matrix is singular".into()))?;
    let centre = w * w / 2;
    let fit = basis.row(centre) * inv * basis.transpose();
    // High-pass stencil: value at the centre minus the fitted value there.
    let stencil: Vec<f64> = (0..w * w).map(|k| if k == centre { 1.0 } else { 0.0 } - fit[k]).collect();
    let mut out = vec![0.0; g.len()];
    for j in half..g.n - half {
        for i in half..g.n - half {
            let mut score = 0.0;
            for (c, plane) in f.planes().iter().enumerate() {
                let r: f64 = stencil
                    .iter()
                    .enumerate()
                    .map(|(k, s)| s * plane[g.index(i + k % w - half, j + k / w - half)])
                    .sum();
                score += binomial(f.rank(), c) * r * r;
            }
            out[g.index(i, j)] = score;
        }
    }
    TensorField::from_planes(0, g, vec![out])
}

/// Position of the largest score among nodes accepted by `region`.
pub fn score_argmax<R: Fn(f64, f64) -> bool>(score: &TensorField, region: R) -> Option<[f64; 2]> {
    let g = score.grid();
    (0..g.len())
        .filter(|&idx| {
            let [x, y] = g.position(idx);
            region(x, y)
        })
        .max_by(|&a, &b| score.plane(0)[a].total_cmp(&score.plane(0)[b]))
        .map(|idx| g.position(idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bump(x: f64, y: f64, cx: f64, cy: f64, w: f64) -> f64 {
        let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (w * w);
        if r2 >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - r2)).exp()
        }
    }

    fn grid(n: usize) -> Grid {
        Grid::new(n, 1.0).unwrap()
    }

    #[test]
    fn symbol_is_positive_definite_on_the_lattice() {
        assert!(symbol_min_eigenvalue(odd_smooth_size(4 * 33), 0.1) > 0.0);
        // An even lattice contains the half-sampling frequency, where it is not.
        assert!(symbol_min_eigenvalue(16, 0.1) < 1e-20);
        assert_eq!(odd_smooth_size(1028), 1125);
        assert_eq!(odd_smooth_size(1), 1);
    }

    #[test]
    fn make_solenoidal_examples() {
        let g = grid(65);
        let psi = TensorField::scalar_from_fn(g, |x, y| bump(x, y, 0.1, -0.05, 0.6));
        let s = make_solenoidal(&psi).unwrap();
        let d = divergence(&s).unwrap();
        assert!(d.norm() <= 1e-6 * s.norm(), "{} vs {}", d.norm(), s.norm());

        let q = TensorField::scalar_from_fn(g, |x, y| x * x + y * y);
        let s = make_solenoidal(&q).unwrap();
        for idx in 0..g.len() {
            assert!((s.plane(0)[idx] - 2.0).abs() < 1e-9);
            assert!(s.plane(1)[idx].abs() < 1e-9);
            assert!((s.plane(2)[idx] - 2.0).abs() < 1e-9);
        }

        let a = TensorField::scalar_from_fn(g, |x, y| x.powi(3) * y);
        let b = TensorField::scalar_from_fn(g, |x, y| (x + 2.0 * y).sin());
        let lhs = make_solenoidal(&a.add(&b.scaled(3.0)).unwrap()).unwrap();
        let rhs = make_solenoidal(&a).unwrap().add(&make_solenoidal(&b).unwrap().scaled(3.0)).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn zero_field_decomposes_to_zero() {
        let d = solenoidal_projection(&TensorField::zeros(2, grid(33))).unwrap();
        assert_eq!(d.solenoidal.max_abs(), 0.0);
        assert_eq!(d.potential_gradient.max_abs(), 0.0);
        assert_eq!(d.potential.max_abs(), 0.0);
    }

    #[test]
    fn solenoidal_input_is_fixed() {
        let g = grid(97);
        let psi = TensorField::scalar_from_fn(g, |x, y| bump(x, y, 0.0, 0.1, 0.5));
        let s = make_solenoidal(&psi).unwrap();
        let d = solenoidal_projection(&s).unwrap();
        assert!(d.potential_gradient.norm() < 1e-6 * s.norm());
        assert!(d.divergence_residual().unwrap() < 1e-6);
    }

    #[test]
    fn potential_input_is_recovered_up_to_rigid_motion() {
        let g = grid(97);
        let mut v0 = TensorField::from_fn(1, g, |x, y, o| {
            o[0] = bump(x, y, 0.1, 0.0, 0.5);
            o[1] = x * bump(x, y, -0.1, 0.1, 0.4);
        });
        let f = sym_derivative(&v0).unwrap();
        let d = solenoidal_projection(&f).unwrap();
        remove_rigid_motions(&mut v0);
        let err = d.potential.sub(&v0).unwrap().norm() / v0.norm();
        assert!(err < 1e-6, "potential error {err}");
        assert!(d.solenoidal.interior_norm(INTERIOR_MARGIN) < 1e-6 * f.norm());
    }

    #[test]
    fn padding_is_enforced() {
        let g = grid(65);
        let f = TensorField::from_fn(2, g, |x, _, o| o[0] = (x * 3.0).cos());
        assert!(matches!(solenoidal_projection(&f), Err(Error::InsufficientPadding(_))));
    }

    #[test]
    fn decomposition_of_mollified_delta() {
        let g = grid(129);
        let f = deviatoric_delta(0.08, g).unwrap();
        let d = solenoidal_projection(&f).unwrap();
        assert!(d.divergence_residual().unwrap() < 1e-6);
        let back = d.solenoidal.add(&d.potential_gradient).unwrap();
        assert!(back.sub(&f).unwrap().max_abs() < 1e-12 * f.max_abs());

        // Orthogonality against potential fields supported inside the grid.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (cx, cy, w) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.2..0.5));
            let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let wf = TensorField::from_fn(1, g, |x, y, o| {
                let e = bump(x, y, cx, cy, w);
                o[0] = a * e;
                o[1] = b * e * (1.0 + x);
            });
            let dw = sym_derivative(&wf).unwrap();
            let ip = d.solenoidal.inner(&dw) / (d.solenoidal.norm() * dw.norm());
            assert!(ip.abs() < 1e-5, "inner product {ip}");
        }
    }

    #[test]
    fn null_field_construction() {
        let g = grid(65);
        assert_eq!(make_null_field(&TensorField::zeros(1, g)).unwrap().max_abs(), 0.0);
        let touching = TensorField::from_fn(1, g, |x, y, o| o[0] = bump(x, y, 0.6, 0.0, 0.5));
        assert!(make_null_field(&touching).is_err());
        let v = TensorField::from_fn(1, g, |x, y, o| {
            o[0] = bump(x, y, 0.1, 0.0, 0.5);
            o[1] = bump(x, y, 0.0, -0.2, 0.4);
        });
        let nf = make_null_field(&v).unwrap();
        assert_eq!(nf.relabel(), sym_derivative(&v).unwrap());
    }

    #[test]
    fn closed_form_examples() {
        let t = worked_example_dv_smooth(1.0, 0.0).unwrap();
        assert!((t.components()[0] + 4.0 / PI).abs() < 1e-15);
        assert!(t.components()[1].abs() < 1e-15 && t.components()[2].abs() < 1e-15);
        let t = worked_example_dv_smooth(1.0, PI / 4.0).unwrap();
        assert!((t.components()[0] + 1.0 / PI).abs() < 1e-15);
        assert!(t.components()[1].abs() < 1e-15);
        assert!((t.components()[2] - 1.0 / PI).abs() < 1e-15);
        for r in [0.1, 0.5, 2.0] {
            let t = worked_example_dv_smooth(r, PI / 4.0).unwrap();
            assert!((t.components()[0] + t.components()[2]).abs() < 1e-12);
        }
        assert!(worked_example_dv_smooth(0.0, 0.3).is_err());

        let d = worked_example_delta_coeff();
        assert_eq!(d.components(), &[-0.75, 0.0, 0.75]);
        assert_eq!(d.relabel(), d.scaled(-1.0));
        assert_eq!(d.contract([1.0, 0.0]).unwrap(), -0.75);
    }

    #[test]
    fn mollified_harmonics_far_field() {
        let eps = 0.05;
        let h2 = MollifiedInverseSquare::new(2, eps, 1.5);
        let h4 = MollifiedInverseSquare::new(4, eps, 1.5);
        for r in [0.3, 0.5, 0.75, 1.0] {
            // cos2θ/r² is harmonic, so mollification leaves it unchanged;
            // for cos4θ/r² the heat-semigroup series stops after -6ε²/r⁴.
            assert!((h2.at(r) * r * r - 1.0).abs() < 1e-6, "m=2 at r={r}: {}", h2.at(r) * r * r);
            let want = 1.0 - 6.0 * eps * eps / (r * r);
            assert!((h4.at(r) * r * r - want).abs() < 1e-6, "m=4 at r={r}: {}", h4.at(r) * r * r);
        }
    }

    #[test]
    fn worked_example_g_structure() {
        let g = grid(129);
        let eps = 0.05;
        let gf = worked_example_g(g, eps).unwrap();
        // Off-diagonal far field against the unmollified closed form.
        let h4 = MollifiedInverseSquare::new(4, eps, 1.5);
        for (r, th) in [(0.75, 0.3), (0.8, 1.1), (0.5, 0.2)] {
            let smooth = worked_example_dv_smooth(r, th).unwrap();
            let (x, y) = (r * f64::cos(th), r * f64::sin(th));
            let got = gf.interpolate(x, y).components()[1];
            let want = -smooth.components()[1];
            let exact = (4.0 * th).sin() * h4.at(r) / TAU;
            assert!((got - exact).abs() < 2e-3 * exact.abs(), "r={r}: {got} vs {exact}");
            if r >= 0.75 {
                assert!((got - want).abs() < 0.03 * want.abs());
            }
        }
        assert!(gf.plane(1).iter().any(|v| v.abs() > 1e-3));
        // G11(x, y) = -G22(y, x).
        for j in 0..g.n {
            for i in 0..g.n {
                let a = gf.plane(0)[g.index(i, j)];
                let b = gf.plane(2)[g.index(j, i)];
                assert!((a + b).abs() < 1e-9 * (1.0 + a.abs()));
            }
        }
        assert!(worked_example_g(g, 0.01).is_err());
    }

    #[test]
    fn singular_support_examples() {
        let g = Grid::new(129, 2.0).unwrap();
        assert!(singular_support_score(&TensorField::zeros(2, g), 2).is_err());
        let smooth = TensorField::from_fn(2, g, |x, y, o| {
            let e = (-(x * x + y * y)).exp();
            o.copy_from_slice(&[e, 0.5 * e, -e]);
        });
        let spiky = deviatoric_delta(2.5 * g.spacing(), g).unwrap();
        let smooth_score = singular_support_score(&smooth, 5).unwrap();
        let spiky_score = singular_support_score(&spiky, 5).unwrap();
        // Same peak amplitude, so the scores compare like for like.
        let scale = (smooth.max_abs() / spiky.max_abs()).powi(2);
        let peak = spiky_score.max_abs() * scale;
        assert!(smooth_score.max_abs() < 1e-8 * peak.max(1.0) || smooth_score.max_abs() < 1e-4 * peak);
        let at = score_argmax(&spiky_score, |_, _| true).unwrap();
        assert!(at[0].abs() < 1e-12 && at[1].abs() < 1e-12, "argmax at {at:?}");
        // Decay along a ray.
        let s = spiky_score.plane(0);
        let c = g.n / 2;
        assert!(s[g.index(c + 2, c)] > s[g.index(c + 6, c)]);
    }

    #[test]
    fn decomposition_keeps_singular_support() {
        let g = grid(129);
        let f = deviatoric_delta(0.05, g).unwrap();
        let d = solenoidal_projection(&f).unwrap();
        let inner = |x: f64, y: f64| x.hypot(y) < 0.8;
        for fld in [&d.solenoidal, &d.potential_gradient] {
            let s = singular_support_score(fld, 5).unwrap();
            let at = score_argmax(&s, inner).unwrap();
            assert!(at[0].abs() < 1e-12 && at[1].abs() < 1e-12, "argmax at {at:?}");
        }
    }
}
