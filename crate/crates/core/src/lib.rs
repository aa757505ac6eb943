//! Differentiable volume rendering along a single ray: opacity inversion
//! sampling, radiance estimators and a small reconstruction toolkit.

pub mod bench;
pub mod error;
pub mod estimators;
pub mod fields;
pub mod gradcheck;
pub mod opacity;
pub mod recon;
pub mod rng;
pub mod sampler;

pub type Rgb = [f64; 3];

pub use error::{Result, RvsError};
pub use fields::{
    discretize, GridMode, RadianceSpec, RayDensityGrid, RayInterval, RayRadiance, ScalarField1D,
};
pub use opacity::{build_profile, stable_target, OpacityProfile};
pub use sampler::{rvs_sample, sample, SampleBatch, SamplingMethod, UniformScheme};
