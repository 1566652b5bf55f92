//! Forward transforms: the elliptic volume transform and its time derivative
//! for direction-dependent reflectivities, the normal Radon transform of
//! tensor fields, and sinogram assembly.

use rayon::prelude::*;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{
    average_azimuth, bistatic_angle, flat_validity_ratio, isochrone, tangent_line_at_scene, Isochrone,
    SceneGeometry,
};
use crate::quadrature::GaussLegendre;
use crate::tensor::{binomial, Grid, TensorField};

type Evaluator = dyn Fn([f64; 2], [f64; 2], [f64; 2]) -> f64 + Send + Sync;

/// Scene reflectivity `f(x, ξ_in, ξ_out)` supported in a disk about the origin.
///
/// Models are symmetric under `ξ_in <-> ξ_out` by construction.
#[derive(Clone)]
pub struct ReflectivityModel {
    support_radius: f64,
    eval: Arc<Evaluator>,
}

impl std::fmt::Debug for ReflectivityModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReflectivityModel").field("support_radius", &self.support_radius).finish()
    }
}

impl ReflectivityModel {
    /// Wraps `f`, averaging it over the two direction orders.
    pub fn new<F>(support_radius: f64, f: F) -> Self
    where
        F: Fn([f64; 2], [f64; 2], [f64; 2]) -> f64 + Send + Sync + 'static,
    {
        Self {
            support_radius,
            eval: Arc::new(move |x, a, b| 0.5 * (f(x, a, b) + f(x, b, a))),
        }
    }

    /// Direction-independent reflectivity `g(x)`.
    pub fn isotropic<G>(support_radius: f64, g: G) -> Self
    where
        G: Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    {
        Self { support_radius, eval: Arc::new(move |x, _, _| g(x)) }
    }

    pub fn zero() -> Self {
        Self { support_radius: 0.0, eval: Arc::new(|_, _, _| 0.0) }
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn evaluate(&self, x: [f64; 2], xi_in: [f64; 2], xi_out: [f64; 2]) -> f64 {
        if x[0] * x[0] + x[1] * x[1] > self.support_radius * self.support_radius {
            return 0.0;
        }
        (self.eval)(x, xi_in, xi_out)
    }

    /// Pointwise sum of two models.
    pub fn sum(&self, other: &ReflectivityModel) -> ReflectivityModel {
        let (a, b) = (self.clone(), other.clone());
        let support_radius = self.support_radius.max(other.support_radius);
        Self { support_radius, eval: Arc::new(move |x, p, q| a.evaluate(x, p, q) + b.evaluate(x, p, q)) }
    }

    pub fn scaled(&self, s: f64) -> ReflectivityModel {
        let a = self.clone();
        Self { support_radius: self.support_radius, eval: Arc::new(move |x, p, q| s * a.evaluate(x, p, q)) }
    }

    fn at_scene_point(&self, x: [f64; 2], tx: [f64; 2], rx: [f64; 2]) -> f64 {
        let unit = |o: [f64; 2]| {
            let d = [x[0] - o[0], x[1] - o[1]];
            let r = d[0].hypot(d[1]);
            [d[0] / r, d[1] / r]
        };
        self.evaluate(x, unit(tx), unit(rx))
    }
}

/// Samples of a line transform on a uniform `(s, φ)` grid.
///
/// Values are stored with `s` fastest: entry `(i, p)` lives at `p * s_count + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub rank: usize,
    pub s_count: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub phi_count: usize,
    pub values: Vec<f64>,
    /// `None` means every bin is valid.
    pub mask: Option<Vec<bool>>,
}

impl Sinogram {
    pub fn zeros(rank: usize, s_count: usize, s_min: f64, s_max: f64, phi_count: usize) -> Result<Self> {
        if s_count < 2 || phi_count < 1 {
            return Err(Error::Domain(format!("sinogram needs >= 2 offsets and >= 1 angle, got {s_count}x{phi_count}")));
        }
        if !(s_min.is_finite() && s_max.is_finite() && s_max > s_min) {
            return Err(Error::Domain(format!("offset range [{s_min}, {s_max}] is not increasing")));
        }
        Ok(Self { rank, s_count, s_min, s_max, phi_count, values: vec![0.0; s_count * phi_count], mask: None })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn s_step(&self) -> f64 {
        (self.s_max - self.s_min) / (self.s_count - 1) as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        self.s_min + i as f64 * self.s_step()
    }

    pub fn phi(&self, p: usize) -> f64 {
        TAU * p as f64 / self.phi_count as f64
    }

    #[inline]
    pub fn index(&self, i: usize, p: usize) -> usize {
        p * self.s_count + i
    }

    pub fn get(&self, i: usize, p: usize) -> f64 {
        self.values[self.index(i, p)]
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[idx])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.as_ref().map_or(self.values.len(), |m| m.iter().filter(|v| **v).count())
    }

    /// Fraction of valid bins.
    pub fn coverage(&self) -> f64 {
        self.valid_count() as f64 / self.values.len() as f64
    }

    pub fn same_grid(&self, other: &Sinogram) -> bool {
        self.s_count == other.s_count
            && self.phi_count == other.phi_count
            && self.s_min == other.s_min
            && self.s_max == other.s_max
    }

    /// Euclidean norm over valid bins.
    pub fn norm(&self) -> f64 {
        (0..self.values.len())
            .filter(|&k| self.is_valid(k))
            .map(|k| self.values[k] * self.values[k])
            .sum::<f64>()
            .sqrt()
    }

    /// `‖self - reference‖ / ‖reference‖` over bins valid in both.
    pub fn relative_l2(&self, reference: &Sinogram) -> Result<f64> {
        if !self.same_grid(reference) {
            return Err(Error::GridMismatch("sinograms are sampled on different grids".into()));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..self.values.len() {
            if self.is_valid(k) && reference.is_valid(k) {
                num += (self.values[k] - reference.values[k]).powi(2);
                den += reference.values[k].powi(2);
            }
        }
        Ok((num / den).sqrt())
    }

    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Sinogram {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }
}

/// Reflectivity integrated over the interior of the isochrone at time `t`.
///
/// Quadrature in polar coordinates about the scene center: for each ray the
/// interior is an interval given by a quadratic, and the angular integral is
/// split at the tangent directions and at the crossings of the isochrone with
/// the support circle.
pub fn volume_transform(model: &ReflectivityModel, geom: &SceneGeometry<2>, t: f64) -> Result<f64> {
    volume_transform_with_order(model, geom, t, 24)
}

/// [`volume_transform`] with a chosen Gauss–Legendre order per panel.
pub fn volume_transform_with_order(
    model: &ReflectivityModel,
    geom: &SceneGeometry<2>,
    t: f64,
    order: usize,
) -> Result<f64> {
    let iso = isochrone(geom, t)?;
    let radius = model.support_radius();
    if radius <= 0.0 {
        return Ok(0.0);
    }
    let rays = RayIntervals::new(&iso, radius);
    let gl = GaussLegendre::new(order);
    let mut breaks = rays.breakpoints();
    breaks.push(0.0);
    breaks.push(TAU);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let theta_panels = 4;
        total += gl.integrate_composite(0.0, 1.0, theta_panels, |v| {
            let theta = lo + (hi - lo) * 0.5 * (1.0 - (PI * v).cos());
            let jac = (hi - lo) * 0.5 * PI * (PI * v).sin();
            let Some((r0, r1)) = rays.interval(theta) else { return 0.0 };
            let (c, s) = (theta.cos(), theta.sin());
            let inner = gl.integrate_composite(r0, r1, 2, |r| {
                r * model.at_scene_point([r * c, r * s], geom.transmitter, geom.receiver)
            });
            inner * jac
        });
    }
    Ok(total)
}

/// Interior intervals of rays from the origin in an ellipse, clipped to a disk.
struct RayIntervals {
    axis: [f64; 2],
    inv_a2: f64,
    inv_b2: f64,
    g1: f64,
    g2: f64,
    radius: f64,
}

impl RayIntervals {
    fn new(iso: &Isochrone, radius: f64) -> Self {
        let axis = iso.axis;
        let c = iso.center;
        Self {
            axis,
            inv_a2: 1.0 / (iso.semi_major * iso.semi_major),
            inv_b2: 1.0 / (iso.semi_minor * iso.semi_minor),
            g1: c[0] * axis[0] + c[1] * axis[1],
            g2: -c[0] * axis[1] + c[1] * axis[0],
            radius,
        }
    }

    /// Coefficients of `level(r) = A r² + B r + K` along direction `theta`.
    fn quadratic(&self, theta: f64) -> (f64, f64, f64) {
        let (c, s) = (theta.cos(), theta.sin());
        let al = c * self.axis[0] + s * self.axis[1];
        let be = -c * self.axis[1] + s * self.axis[0];
        let a = al * al * self.inv_a2 + be * be * self.inv_b2;
        let b = -2.0 * (al * self.g1 * self.inv_a2 + be * self.g2 * self.inv_b2);
        let k = self.g1 * self.g1 * self.inv_a2 + self.g2 * self.g2 * self.inv_b2 - 1.0;
        (a, b, k)
    }

    fn discriminant(&self, theta: f64) -> f64 {
        let (a, b, k) = self.quadratic(theta);
        b * b - 4.0 * a * k
    }

    fn level_at_radius(&self, theta: f64) -> f64 {
        let (a, b, k) = self.quadratic(theta);
        (a * self.radius + b) * self.radius + k
    }

    fn interval(&self, theta: f64) -> Option<(f64, f64)> {
        let (a, b, k) = self.quadratic(theta);
        let disc = b * b - 4.0 * a * k;
        if disc <= 0.0 {
            return None;
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let (mut r1, mut r2) = (q / a, k / q);
        if r1 > r2 {
            std::mem::swap(&mut r1, &mut r2);
        }
        let lo = r1.max(0.0);
        let hi = r2.min(self.radius);
        (hi > lo).then_some((lo, hi))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let samples = 4096;
        let step = TAU / samples as f64;
        let mut out = Vec::new();
        for f in [&|t: f64| self.discriminant(t) as f64, &|t: f64| self.level_at_radius(t) as f64]
            as [&dyn Fn(f64) -> f64; 2]
        {
            let mut prev = f(0.0);
            for i in 1..=samples {
                let t = i as f64 * step;
                let cur = f(t);
                if (prev < 0.0) != (cur < 0.0) {
                    out.push(bisect(f, t - step, t));
                }
                prev = cur;
            }
        }
        out
    }
}

fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let neg_lo = f(lo) < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Time derivative of [`volume_transform`], computed on the isochrone itself:
/// `c ∫ f / |∇T| dσ` with `|∇T| = 2 cos(β/2)`.
pub fn elliptic_radon(model: &ReflectivityModel, geom: &SceneGeometry<2>, t: f64) -> Result<f64> {
    let iso = isochrone(geom, t)?;
    let radius = model.support_radius();
    if radius <= 0.0 {
        return Ok(0.0);
    }
    let gl = GaussLegendre::new(16);
    let mut total = 0.0;
    for (u0, u1) in arcs_inside(&iso, radius) {
        let mut err = None;
        total += gl.integrate_composite(u0, u1, 8, |u| {
            let x = iso.point(u);
            let d = iso.tangent(u);
            let speed = d[0].hypot(d[1]);
            match average_azimuth(&x, &geom.transmitter, &geom.receiver) {
                Ok((_, mag)) if mag > 1e-9 => {
                    model.at_scene_point(x, geom.transmitter, geom.receiver) * speed / (2.0 * mag)
                }
                Ok((_, mag)) => {
                    err = Some(Error::SingularConfiguration(2.0 * mag));
                    0.0
                }
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(geom.wave_speed * total)
}

/// Parameter intervals of the ellipse lying inside the disk `|x| < radius`.
fn arcs_inside(iso: &Isochrone, radius: f64) -> Vec<(f64, f64)> {
    let u_near = iso.nearest_parameter([0.0, 0.0]);
    let inside = |u: f64| {
        let p = iso.point(u);
        p[0] * p[0] + p[1] * p[1] - radius * radius
    };
    let coarse = 2048;
    let mut us: Vec<f64> = (0..=coarse).map(|i| u_near - PI + TAU * i as f64 / coarse as f64).collect();
    // The arc through the disk spans at most πR/b in parameter.
    let window = (1.05 * PI * radius / iso.semi_minor).min(PI);
    let dense = 256;
    us.extend((0..=dense).map(|i| u_near - window + 2.0 * window * i as f64 / dense as f64));
    us.sort_by(f64::total_cmp);
    us.dedup();
    let mut arcs = Vec::new();
    let mut start = (inside(us[0]) < 0.0).then_some(us[0]);
    for w in us.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (inside(a), inside(b));
        if (fa < 0.0) != (fb < 0.0) {
            let root = bisect(&inside, a, b);
            match start.take() {
                Some(s) => arcs.push((s, root)),
                None => start = Some(root),
            }
        }
    }
    if let Some(s) = start {
        arcs.push((s, *us.last().unwrap_or(&s)));
    }
    arcs
}

/// Contraction weights `C(k, j) n1^(k-j) n2^j` for reduced components.
pub fn contraction_weights(rank: usize, n: [f64; 2]) -> Vec<f64> {
    (0..=rank)
        .map(|j| binomial(rank, j) * n[0].powi((rank - j) as i32) * n[1].powi(j as i32))
        .collect()
}

fn contracted_plane(field: &TensorField, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; field.grid().len()];
    for (plane, &w) in field.planes().iter().zip(weights) {
        if w != 0.0 {
            out.iter_mut().zip(plane).for_each(|(o, v)| *o += w * v);
        }
    }
    out
}

/// Cubic B-spline interpolant of a node plane with mirror boundary conditions.
///
/// The interpolant is `C²` and reproduces constants, so line integrals
/// through it can be differentiated in the offset without picking up kinks
/// from the grid.
struct SplinePlane {
    coeffs: Vec<f64>,
    grid: Grid,
}

impl SplinePlane {
    fn new(plane: &[f64], grid: Grid) -> Self {
        let n = grid.n;
        let mut coeffs = plane.to_vec();
        let mut line = vec![0.0; n];
        for j in 0..n {
            line.copy_from_slice(&coeffs[j * n..(j + 1) * n]);
            prefilter(&mut line);
            coeffs[j * n..(j + 1) * n].copy_from_slice(&line);
        }
        for i in 0..n {
            for j in 0..n {
                line[j] = coeffs[j * n + i];
            }
            prefilter(&mut line);
            for j in 0..n {
                coeffs[j * n + i] = line[j];
            }
        }
        Self { coeffs, grid }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let n = self.grid.n;
        let h = self.grid.spacing();
        let last = (n - 1) as f64;
        let fx = ((x + self.grid.extent) / h).clamp(0.0, last);
        let fy = ((y + self.grid.extent) / h).clamp(0.0, last);
        let (ix, wx) = spline_weights(fx, n);
        let (iy, wy) = spline_weights(fy, n);
        let mut acc = 0.0;
        for (b, &wyb) in iy.iter().zip(&wy) {
            let row = &self.coeffs[b * n..(b + 1) * n];
            let mut r = 0.0;
            for (a, &wxa) in ix.iter().zip(&wx) {
                r += wxa * row[*a];
            }
            acc += wyb * r;
        }
        acc
    }
}

fn mirror(k: i64, n: usize) -> usize {
    let last = n as i64 - 1;
    let k = if k < 0 { -k } else { k };
    (if k > last { 2 * last - k } else { k }) as usize
}

fn spline_weights(f: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let i = (f.floor() as i64).min(n as i64 - 2);
    let t = f - i as f64;
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ];
    ([mirror(i - 1, n), mirror(i, n), mirror(i + 1, n), mirror(i + 2, n)], w)
}

/// Solves `(c[k-1] + 4 c[k] + c[k+1]) / 6 = f[k]` in place with mirrored ends.
fn prefilter(f: &mut [f64]) {
    let n = f.len();
    if n < 2 {
        return;
    }
    // Thomas algorithm; the mirrored ends double the outer off-diagonals.
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let lower = |k: usize| if k == n - 1 { 2.0 / 6.0 } else { 1.0 / 6.0 };
    let up = |k: usize| if k == 0 { 2.0 / 6.0 } else { 1.0 / 6.0 };
    let diag = 4.0 / 6.0;
    upper[0] = up(0) / diag;
    rhs[0] = f[0] / diag;
    for k in 1..n {
        let m = diag - lower(k) * upper[k - 1];
        upper[k] = if k + 1 < n { up(k) / m } else { 0.0 };
        rhs[k] = (f[k] - lower(k) * rhs[k - 1]) / m;
    }
    f[n - 1] = rhs[n - 1];
    for k in (0..n - 1).rev() {
        f[k] = rhs[k] - upper[k] * f[k + 1];
    }
}

/// Integral of the spline interpolant along `{x · n = s}` within the disk of
/// radius `grid.extent`.
///
/// The chord is split where it crosses grid lines; on each piece the
/// interpolant is a polynomial of degree six in arc length, so four-point
/// Gauss–Legendre is exact.
fn line_integral(spline: &SplinePlane, s: f64, n: [f64; 2]) -> f64 {
    let grid = spline.grid;
    let l = grid.extent;
    if s.abs() >= l {
        return 0.0;
    }
    let half = (l * l - s * s).sqrt();
    let tau = [-n[1], n[0]];
    let base = [s * n[0], s * n[1]];
    let mut cuts = Vec::with_capacity(2 * grid.n + 2);
    cuts.push(-half);
    cuts.push(half);
    for axis in 0..2 {
        if tau[axis].abs() < 1e-15 {
            continue;
        }
        for i in 0..grid.n {
            let t = (grid.coord(i) - base[axis]) / tau[axis];
            if t > -half && t < half {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let (nodes, weights) = gauss4();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        for (x, wt) in nodes.iter().zip(&weights) {
            let t = mid + 0.5 * len * x;
            total += 0.5 * len * wt * spline.eval(base[0] + t * tau[0], base[1] + t * tau[1]);
        }
    }
    total
}

fn gauss4() -> ([f64; 4], [f64; 4]) {
    let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
    let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
    let wa = (18.0 + 30.0f64.sqrt()) / 36.0;
    let wb = (18.0 - 30.0f64.sqrt()) / 36.0;
    ([-b, -a, a, b], [wb, wa, wa, wb])
}

fn atom_contribution(field: &TensorField, s: f64, n: [f64; 2]) -> f64 {
    let grid = field.grid();
    let h = grid.spacing();
    field
        .atoms
        .iter()
        .filter(|a| {
            let d = a.location[0] * n[0] + a.location[1] * n[1] - s;
            let inside = a.location[0].hypot(a.location[1]) < grid.extent;
            inside && (-0.5 * h..0.5 * h).contains(&d)
        })
        .map(|a| a.coefficient.polynomial(n) / h)
        .sum()
}

/// Normal Radon transform `∫ F(x)(n, …, n) dℓ` over `{x · n = s}`, `n = (cos φ, sin φ)`.
///
/// The field is interpolated by cubic B-splines and the line is clipped to
/// the disk of radius equal to the field's extent.
/// Delta atoms are treated as mollified over a strip one grid spacing wide.
pub fn normal_radon_point(field: &TensorField, s: f64, phi: f64) -> f64 {
    let n = [phi.cos(), phi.sin()];
    let plane = contracted_plane(field, &contraction_weights(field.rank(), n));
    line_integral(&SplinePlane::new(&plane, field.grid()), s, n) + atom_contribution(field, s, n)
}

/// Scalar Radon transform of a rank-0 field.
pub fn scalar_radon(field: &TensorField, s: f64, phi: f64) -> Result<f64> {
    if field.rank() != 0 {
        return Err(Error::Rank { expected: 0, found: field.rank() });
    }
    Ok(normal_radon_point(field, s, phi))
}

/// Normal Radon transform on `s_count` offsets spanning `[-L, L]` and `phi_count` angles.
pub fn sinogram(field: &TensorField, s_count: usize, phi_count: usize) -> Result<Sinogram> {
    let l = field.grid().extent;
    let mut out = Sinogram::zeros(field.rank(), s_count, -l, l, phi_count)?;
    let columns: Vec<Vec<f64>> = (0..phi_count)
        .into_par_iter()
        .map(|p| {
            let phi = out.phi(p);
            let n = [phi.cos(), phi.sin()];
            let plane = contracted_plane(field, &contraction_weights(field.rank(), n));
            let spline = SplinePlane::new(&plane, field.grid());
            (0..s_count)
                .map(|i| {
                    let s = out.s(i);
                    line_integral(&spline, s, n) + atom_contribution(field, s, n)
                })
                .collect()
        })
        .collect();
    for (p, col) in columns.into_iter().enumerate() {
        out.values[p * s_count..(p + 1) * s_count].copy_from_slice(&col);
    }
    Ok(out)
}

/// Transmitter/receiver pairs sharing a wave speed, scene radius and time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub pairs: Vec<([f64; 2], [f64; 2])>,
    pub wave_speed: f64,
    pub scene_radius: f64,
    pub times: Vec<f64>,
}

/// Binning controls for [`multistatic_sinogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultistaticOptions {
    pub nominal_bistatic_angle: f64,
    pub bistatic_tolerance: f64,
    pub flat_threshold: f64,
    pub s_count: usize,
    pub phi_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultistaticReport {
    pub samples: usize,
    pub binned: usize,
    pub flat_failures: usize,
    pub missed_scene: usize,
    pub outside_grid: usize,
    pub collisions: usize,
    pub warnings: Vec<String>,
}

/// Time derivatives of the volume transform, rebinned onto the normalized
/// `(s, φ)` grid of the flat-isochrone approximation.
///
/// Each sample is scaled by `2 cos(β/2) / (c R_scene)` so that it approximates
/// the line integral through the unit disk after dividing lengths by the
/// scene radius. Samples failing the flat-validity threshold are dropped and
/// counted; colliding samples are averaged in pair order.
pub fn multistatic_sinogram(
    model: &ReflectivityModel,
    constellation: &Constellation,
    options: &MultistaticOptions,
) -> Result<(Sinogram, MultistaticReport)> {
    let mut sino = Sinogram::zeros(0, options.s_count, -1.0, 1.0, options.phi_count)?;
    let mut report = MultistaticReport::default();
    let r_scene = constellation.scene_radius;
    let mut geoms = Vec::with_capacity(constellation.pairs.len());
    for (k, &(tx, rx)) in constellation.pairs.iter().enumerate() {
        let geom = SceneGeometry::new(tx, rx, constellation.wave_speed, r_scene, constellation.times.clone())?;
        let beta = bistatic_angle(&[0.0, 0.0], &tx, &rx)?;
        if (beta - options.nominal_bistatic_angle).abs() > options.bistatic_tolerance {
            return Err(Error::Domain(format!(
                "pair {k} has bistatic angle {beta:.6} at the scene center, outside {:.6} ± {:.6}",
                options.nominal_bistatic_angle, options.bistatic_tolerance
            )));
        }
        geoms.push(geom);
    }

    enum Outcome {
        Binned(usize, f64),
        FlatFailure(f64),
        Missed,
        OutsideGrid,
    }
    let jobs: Vec<(usize, f64)> = (0..geoms.len())
        .flat_map(|k| constellation.times.iter().map(move |&t| (k, t)))
        .collect();
    let outcomes: Vec<Result<Outcome>> = jobs
        .par_iter()
        .map(|&(k, t)| {
            let geom = &geoms[k];
            let ratio = flat_validity_ratio(geom, t)?;
            if ratio > options.flat_threshold {
                return Ok(Outcome::FlatFailure(ratio));
            }
            let line = match tangent_line_at_scene(geom, t, [0.0, 0.0]) {
                Ok(line) => line,
                Err(Error::OutOfScene { .. }) => return Ok(Outcome::Missed),
                Err(e) => return Err(e),
            };
            let s_norm = (line.point[0] * line.normal[0] + line.point[1] * line.normal[1]) / r_scene;
            let phi = line.normal[1].atan2(line.normal[0]).rem_euclid(TAU);
            let i = ((s_norm - sino.s_min) / sino.s_step()).round();
            if i < 0.0 || i >= sino.s_count as f64 {
                return Ok(Outcome::OutsideGrid);
            }
            let p = ((phi / TAU * sino.phi_count as f64).round() as usize) % sino.phi_count;
            let value = elliptic_radon(model, geom, t)?;
            let scale = 2.0 * (0.5 * line.bistatic_angle).cos() / (geom.wave_speed * r_scene);
            Ok(Outcome::Binned(sino.index(i as usize, p), value * scale))
        })
        .collect();

    let mut counts = vec![0usize; sino.len()];
    for (job, outcome) in jobs.iter().zip(outcomes) {
        report.samples += 1;
        match outcome? {
            Outcome::Binned(idx, v) => {
                report.binned += 1;
                if counts[idx] > 0 {
                    report.collisions += 1;
                }
                counts[idx] += 1;
                sino.values[idx] += v;
            }
            Outcome::FlatFailure(ratio) => {
                report.flat_failures += 1;
                report.warnings.push(format!(
                    "pair {} at t = {}: flat validity ratio {ratio:.4e} exceeds {:.4e}",
                    job.0, job.1, options.flat_threshold
                ));
            }
            Outcome::Missed => report.missed_scene += 1,
            Outcome::OutsideGrid => report.outside_grid += 1,
        }
    }
    for (v, &c) in sino.values.iter_mut().zip(&counts) {
        if c > 1 {
            *v /= c as f64;
        }
    }
    sino.mask = Some(counts.iter().map(|&c| c > 0).collect());
    Ok((sino, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{DeltaAtom, SymTensor};
    use approx::assert_relative_eq;

    fn unit_disk_grid(n: usize) -> Grid {
        Grid::new(n, 1.0).unwrap()
    }

    fn constant_field(rank: usize, comps: &[f64], grid: Grid) -> TensorField {
        TensorField::from_fn(rank, grid, |_, _, o| o.copy_from_slice(comps))
    }

    #[test]
    fn chord_lengths_for_disk_indicator() {
        let f = constant_field(0, &[1.0], unit_disk_grid(65));
        for &s in &[-0.9, -0.3, 0.0, 0.55, 0.99] {
            for &phi in &[0.0, 0.4, 1.9, 4.0] {
                let want = 2.0 * (1.0 - s * s as f64).sqrt();
                assert_relative_eq!(normal_radon_point(&f, s, phi), want, epsilon = 1e-12);
            }
        }
        assert_eq!(normal_radon_point(&f, 1.2, 0.3), 0.0);
    }

    #[test]
    fn identity_and_deviatoric_tensors() {
        let g = unit_disk_grid(33);
        let id = constant_field(2, &[1.0, 0.0, 1.0], g);
        let dev = constant_field(2, &[1.0, 0.0, -1.0], g);
        for &s in &[-0.5f64, 0.2] {
            let chord = 2.0 * (1.0 - s * s).sqrt();
            for &phi in &[0.0, PI / 4.0, PI / 2.0, 2.2] {
                assert_relative_eq!(normal_radon_point(&id, s, phi), chord, epsilon = 1e-12);
                assert_relative_eq!(normal_radon_point(&dev, s, phi), (2.0 * phi).cos() * chord, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sinogram_basic_properties() {
        let g = unit_disk_grid(33);
        let z = sinogram(&TensorField::zeros(2, g), 21, 16).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));

        let id = sinogram(&constant_field(2, &[1.0, 0.0, 1.0], g), 21, 16).unwrap();
        for i in 0..21 {
            for p in 1..16 {
                assert!((id.get(i, p) - id.get(i, 0)).abs() < 1e-12);
            }
        }

        let f = TensorField::from_fn(2, g, |x, y, o| {
            o.copy_from_slice(&[x + y * y, x * y - 0.3 * y, (x - 0.2).powi(2)]);
        });
        let sg = sinogram(&f, 21, 16).unwrap();
        for i in 0..21 {
            for p in 0..16 {
                let q = (p + 8) % 16;
                assert!((sg.get(20 - i, q) - sg.get(i, p)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_atoms_use_mollified_line() {
        let g = unit_disk_grid(41);
        let h = g.spacing();
        let mut f = TensorField::zeros(2, g);
        f.atoms.push(DeltaAtom { location: [0.0, 0.0], coefficient: SymTensor::matrix(1.0, 0.0, -1.0) });
        assert_relative_eq!(normal_radon_point(&f, 0.0, 0.0), 1.0 / h, epsilon = 1e-12);
        assert_relative_eq!(normal_radon_point(&f, 0.0, PI / 2.0), -1.0 / h, epsilon = 1e-12);
        assert_eq!(normal_radon_point(&f, 0.6 * h, 0.0), 0.0);
    }

    #[test]
    fn gaussian_radon_transform() {
        let g = Grid::new(401, 4.0).unwrap();
        let f = TensorField::scalar_from_fn(g, |x, y| (-(x * x + y * y)).exp());
        for &s in &[0.0f64, 0.5, 1.3] {
            let want = PI.sqrt() * (-s * s).exp();
            let got = scalar_radon(&f, s, 0.7).unwrap();
            assert!((got - want).abs() < 1e-4, "s = {s}: {got} vs {want}");
        }
        assert!(scalar_radon(&TensorField::zeros(2, g), 0.0, 0.0).is_err());
    }

    #[test]
    fn translation_covariance() {
        let g = Grid::new(161, 2.0).unwrap();
        let v = [0.3, -0.2];
        let bump = |x: f64, y: f64| (-(x * x + y * y) * 8.0).exp();
        let f = TensorField::scalar_from_fn(g, bump);
        let shifted = TensorField::scalar_from_fn(g, move |x, y| bump(x - v[0], y - v[1]));
        for &phi in &[0.0f64, 1.0, 2.5] {
            let n = [phi.cos(), phi.sin()];
            let dv = v[0] * n[0] + v[1] * n[1];
            for &s in &[-0.2, 0.0, 0.15] {
                let a = scalar_radon(&shifted, s + dv, phi).unwrap();
                let b = scalar_radon(&f, s, phi).unwrap();
                assert!((a - b).abs() < 2e-3 * b.abs().max(0.05));
            }
        }
    }

    #[test]
    fn transforms_are_linear() {
        let g = unit_disk_grid(49);
        let a = TensorField::from_fn(2, g, |x, y, o| o.copy_from_slice(&[x, y * y, x * y]));
        let b = TensorField::from_fn(2, g, |x, y, o| o.copy_from_slice(&[(x + y).sin(), 1.0, -x]));
        let comb = a.add(&b.scaled(-2.5)).unwrap();
        let sa = sinogram(&a, 17, 12).unwrap();
        let sb = sinogram(&b, 17, 12).unwrap();
        let sc = sinogram(&comb, 17, 12).unwrap();
        for k in 0..sa.len() {
            assert!((sc.values[k] - (sa.values[k] - 2.5 * sb.values[k])).abs() < 1e-10);
        }

        let geom = SceneGeometry::new([-3.0, -2.0], [2.5, -2.2], 1.0, 1.0, vec![6.5]).unwrap();
        let ma = ReflectivityModel::isotropic(1.0, |x| 1.0 + x[0]);
        let mb = ReflectivityModel::new(1.0, |x, p, q| x[1] * (p[0] * q[0] + p[1] * q[1]));
        let mc = ma.sum(&mb.scaled(3.0));
        let ra = elliptic_radon(&ma, &geom, 6.5).unwrap();
        let rb = elliptic_radon(&mb, &geom, 6.5).unwrap();
        let rc = elliptic_radon(&mc, &geom, 6.5).unwrap();
        assert!((rc - (ra + 3.0 * rb)).abs() < 1e-10 * rc.abs().max(1.0));
        let va = volume_transform(&ma, &geom, 6.5).unwrap();
        let vb = volume_transform(&mb, &geom, 6.5).unwrap();
        let vc = volume_transform(&mc, &geom, 6.5).unwrap();
        assert!((vc - (va + 3.0 * vb)).abs() < 1e-10 * vc.abs().max(1.0));
    }

    fn monostatic(distance: f64, time: f64) -> SceneGeometry<2> {
        SceneGeometry::new([0.0, -distance], [0.0, -distance], 1.0, 1.0, vec![time]).unwrap()
    }

    #[test]
    fn volume_of_covered_disk_is_pi() {
        let model = ReflectivityModel::isotropic(1.0, |_| 1.0);
        let g = monostatic(3.0, 10.0);
        assert_relative_eq!(volume_transform(&model, &g, 10.0).unwrap(), PI, epsilon = 1e-10);
        let g = monostatic(3.0, 2.0);
        assert_eq!(volume_transform(&model, &g, 2.0).unwrap(), 0.0);
    }

    /// Polar-coordinates oracle for an isotropic radial profile fully covered
    /// by the isochrone interior.
    fn radial_oracle(profile: impl Fn(f64) -> f64, radius: f64) -> f64 {
        let gl = GaussLegendre::new(40);
        TAU * gl.integrate_composite(0.0, radius, 16, |r| r * profile(r))
    }

    #[test]
    fn volume_of_covered_gaussian() {
        let model = ReflectivityModel::isotropic(1.0, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let g = SceneGeometry::new([-4.0, -1.0], [3.0, -2.0], 1.0, 1.0, vec![14.0]).unwrap();
        let want = radial_oracle(|r| (-r * r).exp(), 1.0);
        assert_relative_eq!(want, PI * (1.0 - (-1.0f64).exp()), epsilon = 1e-13);
        let got = volume_transform(&model, &g, 14.0).unwrap();
        assert!(((got - want) / want).abs() < 1e-6);
    }

    #[test]
    fn volume_quadrature_refinement_estimate() {
        let model = ReflectivityModel::new(1.0, |x, p, q| {
            (1.0 + 0.5 * (p[0] * q[0] + p[1] * q[1])) * (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp()
        });
        let g = SceneGeometry::new([-2.0, -1.5], [1.8, -2.1], 1.0, 1.0, vec![5.0]).unwrap();
        let coarse = volume_transform_with_order(&model, &g, 5.0, 16).unwrap();
        let fine = volume_transform_with_order(&model, &g, 5.0, 32).unwrap();
        let default = volume_transform(&model, &g, 5.0).unwrap();
        assert!(((coarse - fine) / fine).abs() < 1e-6);
        assert!(((default - fine) / fine).abs() < 1e-8);
    }

    #[test]
    fn monostatic_arc_length() {
        // Circle of radius 4.5 centred at (0, -5) crossing the unit disk.
        let model = ReflectivityModel::isotropic(1.0, |x| if x[0].hypot(x[1]) > 0.2 { 1.0 } else { 0.0 });
        let g = monostatic(5.0, 9.0);
        let (rho, dist) = (4.5f64, 5.0f64);
        let alpha = ((dist * dist + rho * rho - 1.0) / (2.0 * dist * rho)).acos();
        let want = 2.0 * rho * alpha / 2.0;
        assert_relative_eq!(elliptic_radon(&model, &g, 9.0).unwrap(), want, epsilon = 1e-10);
        assert_eq!(elliptic_radon(&ReflectivityModel::zero(), &g, 9.0).unwrap(), 0.0);
    }

    fn richardson_derivative(model: &ReflectivityModel, geom: &SceneGeometry<2>, t: f64, h: f64) -> f64 {
        let e = |tt: f64| volume_transform_with_order(model, geom, tt, 32).unwrap();
        let d = |h: f64| (e(t + h) - e(t - h)) / (2.0 * h);
        (4.0 * d(0.5 * h) - d(h)) / 3.0
    }

    #[test]
    fn coarea_matches_finite_difference_of_volume() {
        let model = ReflectivityModel::new(1.0, |x, p, q| {
            (1.0 + 0.3 * (p[0] * q[0] + p[1] * q[1])) * (-(x[0] * x[0] + x[1] * x[1])).exp()
        });
        // Ten geometries with scene-crossing isochrones.
        for k in 0..10 {
            let a = 0.6 * k as f64;
            let tx = [3.0 * a.cos(), 3.0 * a.sin()];
            let rx = [2.5 * (a + 1.0 + 0.1 * k as f64).cos(), 2.5 * (a + 1.0 + 0.1 * k as f64).sin()];
            let base = tx[0].hypot(tx[1]) + rx[0].hypot(rx[1]);
            let t = base + 0.5 - 0.1 * k as f64;
            let geom = SceneGeometry::new(tx, rx, 1.0, 1.0, vec![t]).unwrap();
            let coarea = elliptic_radon(&model, &geom, t).unwrap();
            let fd = richardson_derivative(&model, &geom, t, 0.02);
            assert!(((coarea - fd) / coarea).abs() < 1e-4, "geometry {k}: {coarea} vs {fd}");
        }
    }

    #[test]
    fn multistatic_plumbing() {
        let model = ReflectivityModel::isotropic(1.0, |_| 1.0);
        let opts = MultistaticOptions {
            nominal_bistatic_angle: 0.0,
            bistatic_tolerance: 1e-6,
            flat_threshold: 0.02,
            s_count: 11,
            phi_count: 8,
        };
        let empty = Constellation { pairs: vec![], wave_speed: 1.0, scene_radius: 1.0, times: vec![200.0] };
        let (sino, report) = multistatic_sinogram(&model, &empty, &opts).unwrap();
        assert_eq!(sino.valid_count(), 0);
        assert_eq!(report.samples, 0);

        let times: Vec<f64> = (0..11).map(|i| 2.0 * (100.0 - 1.0 + 0.2 * i as f64)).collect();
        let one = Constellation {
            pairs: vec![([0.0, -100.0], [0.0, -100.0])],
            wave_speed: 1.0,
            scene_radius: 1.0,
            times,
        };
        let (sino, report) = multistatic_sinogram(&model, &one, &opts).unwrap();
        assert_eq!(report.binned, 11);
        // Every sample lands in the φ = π/2 column.
        let mask = sino.mask.as_ref().unwrap();
        for p in 0..8 {
            let col = (0..11).filter(|&i| mask[sino.index(i, p)]).count();
            assert_eq!(col, if p == 2 { 11 } else { 0 }, "column {p}");
        }
    }
}
