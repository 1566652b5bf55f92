//! Test scenes: the mollified deviatoric delta, angular response models,
//! isotropic backgrounds with inclusions, noise and half-circle masks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::forward::{ReflectivityModel, Sinogram};
use crate::tensor::{profile_to_tensors, AngularProfile, Grid, SymTensor, TensorField, BANDLIMIT_TOLERANCE};

/// Unit-mass Gaussian `exp(-r²/(2ε²)) / (2πε²)`; `ε` is the per-axis standard deviation.
pub fn gaussian(eps: f64, x: f64, y: f64) -> f64 {
    (-(x * x + y * y) / (2.0 * eps * eps)).exp() / (TAU * eps * eps)
}

fn check_mollifier(eps: f64, grid: Grid) -> Result<()> {
    if !(eps > 2.0 * grid.spacing()) {
        return Err(Error::Domain(format!(
            "mollifier width {eps} must exceed twice the grid spacing {}",
            grid.spacing()
        )));
    }
    Ok(())
}

/// `diag(1, -1)` times a unit-mass Gaussian of width `eps` at the origin.
pub fn deviatoric_delta(eps: f64, grid: Grid) -> Result<TensorField> {
    deviatoric_delta_at(eps, grid, [0.0, 0.0])
}

/// [`deviatoric_delta`] centred at `center`.
pub fn deviatoric_delta_at(eps: f64, grid: Grid, center: [f64; 2]) -> Result<TensorField> {
    check_mollifier(eps, grid)?;
    Ok(TensorField::from_fn(2, grid, |x, y, o| {
        let g = gaussian(eps, x - center[0], y - center[1]);
        o[0] = g;
        o[2] = -g;
    }))
}

/// Angle between two unit directions, in `[0, π]`.
fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] * b[1] - a[1] * b[0]).abs().atan2(a[0] * b[0] + a[1] * b[1])
}

/// How an inclusion scatters as a function of the incoming and outgoing directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngularResponse {
    Isotropic,
    /// `exp(-angle(ξ_in, ξ_out)² / sharpness²)`: strongest for backscatter.
    CornerReflector { sharpness: f64 },
    /// `cos(2(ψ - orientation))` with `ψ` the direction of the bisector of
    /// `ξ_in` and `ξ_out`; a trace-free rank-2 response.
    Deviatoric { orientation: f64 },
}

impl AngularResponse {
    pub fn evaluate(&self, xi_in: [f64; 2], xi_out: [f64; 2]) -> f64 {
        match *self {
            AngularResponse::Isotropic => 1.0,
            AngularResponse::CornerReflector { sharpness } => {
                let a = angle_between(xi_in, xi_out);
                (-(a * a) / (sharpness * sharpness)).exp()
            }
            AngularResponse::Deviatoric { orientation } => {
                let b = [xi_in[0] + xi_out[0], xi_in[1] + xi_out[1]];
                if b[0] == 0.0 && b[1] == 0.0 {
                    return 0.0;
                }
                (2.0 * (b[1].atan2(b[0]) - orientation)).cos()
            }
        }
    }
}

/// Corner-reflector response with the given angular sharpness.
pub fn corner_reflector_profile(sharpness: f64) -> Result<AngularResponse> {
    if !(sharpness > 0.0) {
        return Err(Error::Domain(format!("sharpness must be positive, got {sharpness}")));
    }
    Ok(AngularResponse::CornerReflector { sharpness })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inclusion {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
    pub response: AngularResponse,
}

/// Limited-angle mask applied to generated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSpec {
    Full,
    /// Keep normals within a quarter turn of `axis`.
    HalfCircle { axis: f64 },
}

/// An isotropic background disk with direction-dependent inclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub background: f64,
    pub inclusions: Vec<Inclusion>,
    pub epsilon: f64,
    pub noise_sigma: f64,
    pub mask: MaskSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { background: 0.0, inclusions: Vec::new(), epsilon: 0.05, noise_sigma: 0.0, mask: MaskSpec::Full }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!("mollification width must be positive, got {}", self.epsilon)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Domain(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        for (k, inc) in self.inclusions.iter().enumerate() {
            let reach = inc.center[0].hypot(inc.center[1]) + inc.radius;
            if !(inc.radius > 0.0) || reach > 1.0 {
                return Err(Error::Domain(format!("inclusion {k} is not inside the unit disk")));
            }
        }
        Ok(())
    }

    /// Pairs of inclusions whose supports overlap.
    pub fn overlaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.inclusions.iter().enumerate() {
            for (j, b) in self.inclusions.iter().enumerate().skip(i + 1) {
                let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
                if d < a.radius + b.radius {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Reflectivity of a scene in unit-disk coordinates, plus overlap warnings.
pub fn scene_to_reflectivity(spec: &SceneSpec) -> Result<(ReflectivityModel, Vec<String>)> {
    spec.validate()?;
    let warnings = spec
        .overlaps()
        .into_iter()
        .map(|(i, j)| format!("inclusions {i} and {j} overlap; responses are summed"))
        .collect();
    if spec.background == 0.0 && spec.inclusions.is_empty() {
        return Ok((ReflectivityModel::zero(), warnings));
    }
    let background = spec.background;
    let inclusions = spec.inclusions.clone();
    let model = ReflectivityModel::new(1.0, move |x, a, b| {
        let mut v = background;
        for inc in &inclusions {
            let d2 = (x[0] - inc.center[0]).powi(2) + (x[1] - inc.center[1]).powi(2);
            if d2 <= inc.radius * inc.radius {
                v += inc.amplitude * inc.response.evaluate(a, b);
            }
        }
        v
    });
    Ok((model, warnings))
}

/// The rank-2 tensor whose contraction with `n` is the backscatter response
/// (`ξ_in = ξ_out = n`).
pub fn monostatic_tensor(response: AngularResponse) -> Result<SymTensor> {
    let profile = AngularProfile::from_fn(16, |a| {
        let n = [a.cos(), a.sin()];
        response.evaluate(n, n)
    });
    Ok(profile_to_tensors(&profile, 2, BANDLIMIT_TOLERANCE)?.0)
}

/// Samples the backscatter field of a scene on `grid`.
///
/// The result has rank 0 when every inclusion scatters back isotropically
/// and rank 2 otherwise, with the background as a multiple of the identity.
pub fn scene_to_field(spec: &SceneSpec, grid: Grid) -> Result<TensorField> {
    spec.validate()?;
    let tensors = spec
        .inclusions
        .iter()
        .map(|inc| monostatic_tensor(inc.response).map(|t| t.components().iter().map(|c| inc.amplitude * c).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let isotropic = tensors.iter().all(|t| t[1].abs() < 1e-12 && (t[0] - t[2]).abs() < 1e-12);
    let inside = |k: usize, x: f64, y: f64| {
        let c = spec.inclusions[k].center;
        let r = spec.inclusions[k].radius;
        (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r
    };
    if isotropic {
        return Ok(TensorField::scalar_from_fn(grid, |x, y| {
            spec.background + (0..tensors.len()).filter(|&k| inside(k, x, y)).map(|k| tensors[k][0]).sum::<f64>()
        }));
    }
    Ok(TensorField::from_fn(2, grid, |x, y, o| {
        o[0] = spec.background;
        o[2] = spec.background;
        for (k, t) in tensors.iter().enumerate() {
            if inside(k, x, y) {
                o.iter_mut().zip(t).for_each(|(a, b)| *a += b);
            }
        }
    }))
}

/// Reflectivity of the mollified deviatoric delta: the Gaussian times
/// `cos 2ψ`, with `ψ` the direction of the bisector of `ξ_in` and `ξ_out`.
pub fn deviatoric_delta_reflectivity(eps: f64) -> Result<ReflectivityModel> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("mollifier width must be positive, got {eps}")));
    }
    let response = AngularResponse::Deviatoric { orientation: 0.0 };
    Ok(ReflectivityModel::new(1.0, move |x, a, b| gaussian(eps, x[0], x[1]) * response.evaluate(a, b)))
}

/// Keeps bins whose normal angle lies within a quarter turn of `axis`.
///
/// Existing masked bins stay masked.
pub fn hemisphere_mask(sinogram: &Sinogram, axis: f64) -> Sinogram {
    let mut out = sinogram.clone();
    let mut mask = sinogram.mask.clone().unwrap_or_else(|| vec![true; sinogram.len()]);
    for p in 0..sinogram.phi_count {
        let rel = (sinogram.phi(p) - axis + PI).rem_euclid(TAU) - PI;
        let keep = rel >= -0.5 * PI - 1e-9 && rel < 0.5 * PI - 1e-9;
        if !keep {
            for i in 0..sinogram.s_count {
                mask[sinogram.index(i, p)] = false;
            }
        }
    }
    out.mask = Some(mask);
    out
}

/// Adds `N(0, σ²)` noise to valid bins; the stream is fixed by `seed`.
pub fn add_noise(sinogram: &Sinogram, sigma: f64, seed: u64) -> Result<Sinogram> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let mut out = sinogram.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..out.values.len() {
        // Draw for every bin so the noise at a bin does not depend on the mask.
        let z = normal.sample(&mut rng);
        if sinogram.is_valid(k) {
            out.values[k] += z;
        }
    }
    Ok(out)
}
