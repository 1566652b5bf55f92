//! Multistatic travel-time imaging as tensor tomography in the plane.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: symmetric tensors in dimension two, grid-sampled tensor
//!   fields, the symmetric derivative `d` and divergence `δ`, and the
//!   conversion between angular profiles and homogeneous tensors.
//! * [`geometry`]: isochrone ellipses/spheroids, curvature bounds, average
//!   azimuth and bistatic angle, and the flat-isochrone tangent line.
//! * [`forward`]: the anisotropic elliptic volume transform and its time
//!   derivative, the normal Radon transform of tensor fields and sinogram
//!   assembly (direct and multistatic).
//! * [`decomposition`]: Fourier-domain solenoidal/potential splitting, the
//!   closed-form deviatoric-delta example and singular-support diagnostics.
//! * [`sve`]: Zernike tensor bases, the block-structured forward operator,
//!   truncated singular value expansion and the scalar inversion path.
//! * [`phantoms`]: test scenes, noise and limited-angle masks.
//! * [`io`]: TSINO/TFLD binary formats, `key = value` configs and PGM output.

pub mod decomposition;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod phantoms;
pub mod quadrature;
pub mod sve;
pub mod tensor;
pub mod zernike;

pub use error::{Error, Result};
