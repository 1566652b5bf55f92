//! Isochrone geometry for transmitter/receiver pairs.
//!
//! For a pair at `x_T`, `x_R` and wave speed `c`, the isochrone at time `t`
//! is the set `|x - x_T| + |x - x_R| = c t`, an ellipse in the plane and a
//! prolate spheroid in space.

use crate::error::{Error, Result};

/// Transmitter/receiver pair, wave speed, scene ball and time samples.
///
/// The scene ball is centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry<const D: usize> {
    pub transmitter: [f64; D],
    pub receiver: [f64; D],
    pub wave_speed: f64,
    pub scene_radius: f64,
    pub times: Vec<f64>,
}

impl<const D: usize> SceneGeometry<D> {
    pub fn new(
        transmitter: [f64; D],
        receiver: [f64; D],
        wave_speed: f64,
        scene_radius: f64,
        times: Vec<f64>,
    ) -> Result<Self> {
        if !(wave_speed > 0.0 && wave_speed.is_finite()) {
            return Err(Error::Domain(format!("wave speed must be positive, got {wave_speed}")));
        }
        if !(scene_radius >= 0.0 && scene_radius.is_finite()) {
            return Err(Error::Domain(format!("scene radius must be non-negative, got {scene_radius}")));
        }
        for p in [&transmitter, &receiver] {
            if norm(p) <= scene_radius {
                return Err(Error::Domain(format!(
                    "antenna at distance {} lies inside the scene ball of radius {scene_radius}",
                    norm(p)
                )));
            }
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("time grid must be strictly increasing".into()));
        }
        let geom = Self { transmitter, receiver, wave_speed, scene_radius, times };
        let focal = 2.0 * geom.half_focal_distance();
        if let Some(&t) = geom.times.iter().find(|&&t| wave_speed * t <= focal) {
            return Err(Error::DegenerateIsochrone { ct: wave_speed * t, focal });
        }
        Ok(geom)
    }

    /// Half the transmitter/receiver separation.
    pub fn half_focal_distance(&self) -> f64 {
        0.5 * distance(&self.transmitter, &self.receiver)
    }
}

/// The isochrone ellipse of a planar pair at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isochrone {
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Unit vector from transmitter to receiver (`(1, 0)` when they coincide).
    pub axis: [f64; 2],
    pub half_focal: f64,
}

impl Isochrone {
    pub fn from_foci(transmitter: [f64; 2], receiver: [f64; 2], path_length: f64) -> Result<Self> {
        let half_focal = 0.5 * distance(&transmitter, &receiver);
        if !(path_length > 2.0 * half_focal) {
            return Err(Error::DegenerateIsochrone { ct: path_length, focal: 2.0 * half_focal });
        }
        let center = [0.5 * (transmitter[0] + receiver[0]), 0.5 * (transmitter[1] + receiver[1])];
        let axis = if half_focal > 0.0 {
            [
                (receiver[0] - transmitter[0]) / (2.0 * half_focal),
                (receiver[1] - transmitter[1]) / (2.0 * half_focal),
            ]
        } else {
            [1.0, 0.0]
        };
        let a = 0.5 * path_length;
        let semi_minor = ((a - half_focal) * (a + half_focal)).sqrt();
        Ok(Self { center, semi_major: a, semi_minor, axis, half_focal })
    }

    /// Point at ellipse parameter `u`.
    pub fn point(&self, u: f64) -> [f64; 2] {
        let (c, s) = (u.cos(), u.sin());
        let (a, b) = (self.semi_major, self.semi_minor);
        let [e1x, e1y] = self.axis;
        [self.center[0] + a * c * e1x - b * s * e1y, self.center[1] + a * c * e1y + b * s * e1x]
    }

    /// Derivative of [`Isochrone::point`] with respect to `u`.
    pub fn tangent(&self, u: f64) -> [f64; 2] {
        let (c, s) = (u.cos(), u.sin());
        let (a, b) = (self.semi_major, self.semi_minor);
        let [e1x, e1y] = self.axis;
        [-a * s * e1x - b * c * e1y, -a * s * e1y + b * c * e1x]
    }

    /// Curvature at the ends of the minor axis, `b / a²`.
    pub fn minor_vertex_curvature(&self) -> f64 {
        self.semi_minor / (self.semi_major * self.semi_major)
    }

    /// Curvature at the ends of the major axis, `a / b²`.
    pub fn major_vertex_curvature(&self) -> f64 {
        self.semi_major / (self.semi_minor * self.semi_minor)
    }

    /// Ellipse parameter of the point nearest to `p`.
    pub fn nearest_parameter(&self, p: [f64; 2]) -> f64 {
        let dist2 = |u: f64| {
            let q = self.point(u);
            (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
        };
        // Sign of d/du |x(u) - p|² / 2.
        let slope = |u: f64| {
            let q = self.point(u);
            let t = self.tangent(u);
            (q[0] - p[0]) * t[0] + (q[1] - p[1]) * t[1]
        };
        let samples = 1440;
        let step = std::f64::consts::TAU / samples as f64;
        let best = (0..samples)
            .map(|i| i as f64 * step)
            .min_by(|a, b| dist2(*a).total_cmp(&dist2(*b)))
            .unwrap_or(0.0);
        let (mut lo, mut hi) = (best - step, best + step);
        if slope(lo) > 0.0 || slope(hi) < 0.0 {
            return best;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Isochrone of `geom` at time `t`.
pub fn isochrone(geom: &SceneGeometry<2>, t: f64) -> Result<Isochrone> {
    Isochrone::from_foci(geom.transmitter, geom.receiver, geom.wave_speed * t)
}

fn check_nondegenerate(t: f64, d: f64, c: f64) -> Result<f64> {
    let ct = c * t;
    if !(ct > 2.0 * d) {
        return Err(Error::DegenerateIsochrone { ct, focal: 2.0 * d });
    }
    Ok(ct)
}

/// Curvature bound for the planar isochrone, `4 sqrt((ct)²/4 - d²) / (ct)²`.
pub fn max_curvature_2d(t: f64, d: f64, c: f64) -> Result<f64> {
    let ct = check_nondegenerate(t, d, c)?;
    Ok(4.0 * (ct * ct / 4.0 - d * d).sqrt() / (ct * ct))
}

/// Gaussian curvature bound for the spheroid, `16 ((ct)²/4 - d²) / (ct)⁴`.
pub fn max_gauss_curvature_3d(t: f64, d: f64, c: f64) -> Result<f64> {
    let ct = check_nondegenerate(t, d, c)?;
    Ok(16.0 * (ct * ct / 4.0 - d * d) / (ct * ct * ct * ct))
}

/// Scene radius times the curvature bound; small values justify a flat isochrone.
pub fn flat_validity_ratio<const D: usize>(geom: &SceneGeometry<D>, t: f64) -> Result<f64> {
    let d = geom.half_focal_distance();
    match D {
        2 => Ok(geom.scene_radius * max_curvature_2d(t, d, geom.wave_speed)?),
        3 => Ok(geom.scene_radius * max_gauss_curvature_3d(t, d, geom.wave_speed)?.sqrt()),
        _ => Err(Error::Domain(format!("flat validity is defined in 2 or 3 dimensions, not {D}"))),
    }
}

/// Default threshold for [`flat_validity_ratio`].
pub const FLAT_VALIDITY_THRESHOLD: f64 = 0.01;

fn norm<const D: usize>(v: &[f64; D]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn unit_from<const D: usize>(x: &[f64; D], origin: &[f64; D]) -> Result<[f64; D]> {
    let mut v = [0.0; D];
    for i in 0..D {
        v[i] = x[i] - origin[i];
    }
    let r = norm(&v);
    if r == 0.0 {
        return Err(Error::Domain("scene point coincides with an antenna".into()));
    }
    v.iter_mut().for_each(|c| *c /= r);
    Ok(v)
}

/// Unit bisector of the antenna-to-point directions and its length `cos(β/2)`.
///
/// The bisector is the outward normal of the isochrone through `x`.
pub fn average_azimuth<const D: usize>(
    x: &[f64; D],
    transmitter: &[f64; D],
    receiver: &[f64; D],
) -> Result<([f64; D], f64)> {
    let a = unit_from(x, transmitter)?;
    let b = unit_from(x, receiver)?;
    let mut n = [0.0; D];
    for i in 0..D {
        n[i] = 0.5 * (a[i] + b[i]);
    }
    let mag = norm(&n);
    if mag < 1e-12 {
        return Err(Error::SingularConfiguration(mag));
    }
    n.iter_mut().for_each(|c| *c /= mag);
    Ok((n, mag))
}

/// Angle in `[0, π]` between the directions from each antenna to `x`.
pub fn bistatic_angle<const D: usize>(
    x: &[f64; D],
    transmitter: &[f64; D],
    receiver: &[f64; D],
) -> Result<f64> {
    let a = unit_from(x, transmitter)?;
    let b = unit_from(x, receiver)?;
    // atan2 of |a×b| and a·b stays accurate for nearly parallel directions.
    let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let mut cross2 = 0.0;
    for i in 0..D {
        for j in i + 1..D {
            let c = a[i] * b[j] - a[j] * b[i];
            cross2 += c * c;
        }
    }
    Ok(cross2.sqrt().atan2(dot))
}

/// The unordered direction pair with bisector `nhat` and opening angle `beta`.
pub fn directions_from_azimuth(nhat: [f64; 2], beta: f64) -> Result<[[f64; 2]; 2]> {
    if !(0.0..std::f64::consts::PI).contains(&beta) {
        return Err(Error::Domain(format!("bistatic angle must lie in [0, π), got {beta}")));
    }
    let rotate = |v: [f64; 2], a: f64| [a.cos() * v[0] - a.sin() * v[1], a.sin() * v[0] + a.cos() * v[1]];
    Ok([rotate(nhat, -0.5 * beta), rotate(nhat, 0.5 * beta)])
}

/// Flat approximation of an isochrone near the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentLine {
    /// Isochrone point nearest to the scene center.
    pub point: [f64; 2],
    pub normal: [f64; 2],
    /// `(point - isochrone center) · normal`.
    pub offset: f64,
    /// Bistatic angle at `point`.
    pub bistatic_angle: f64,
}

/// Tangent line to the isochrone at its point nearest to `scene_center`.
pub fn tangent_line_at_scene(
    geom: &SceneGeometry<2>,
    t: f64,
    scene_center: [f64; 2],
) -> Result<TangentLine> {
    let iso = isochrone(geom, t)?;
    let u = iso.nearest_parameter(scene_center);
    let point = iso.point(u);
    let gap = distance(&point, &scene_center);
    if gap > geom.scene_radius {
        return Err(Error::OutOfScene { distance: gap, radius: geom.scene_radius });
    }
    let (normal, _) = average_azimuth(&point, &geom.transmitter, &geom.receiver)?;
    let offset = (point[0] - iso.center[0]) * normal[0] + (point[1] - iso.center[1]) * normal[1];
    let beta = bistatic_angle(&point, &geom.transmitter, &geom.receiver)?;
    Ok(TangentLine { point, normal, offset, bistatic_angle: beta })
}
