//! Differentiable ray sampling by opacity inversion.
//!
//! A uniform `u` is mapped to the optical-depth target `y = -log(1 - y_f u)`
//! and then through the inverse depth function, so every sample position is a
//! differentiable function of the grid densities. The sample Jacobian chains
//! the inverse's direct dependence on the densities with the dependence of
//! `y` on the total depth.

mod inverse;
mod uniform;

use serde::{Deserialize, Serialize};

pub use inverse::{
    default_bisect_tol, invert, invert_bisect, invert_constant, invert_linear, invert_nerf_cdf,
    invert_position, Inverse, BISECT_MAX_ITERS, CONSTANT_EPS, DEGENERATE_DENSITY, SQRT_EPS,
};
pub use uniform::{draw_uniforms, StrataDenominator, UniformKind, UniformScheme};

use crate::error::{Result, RvsError};
use crate::opacity::{opacity_depth_slope, stable_target, stable_target_slope, OpacityProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    /// Closed-form inverse of the grid's depth function.
    Rvs,
    /// Linear interpolation of `t` against knot opacities.
    NerfCdf,
    /// Bisection with implicit gradients.
    ImplicitBisect,
}

impl std::fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMethod::Rvs => "rvs",
            SamplingMethod::NerfCdf => "nerf",
            SamplingMethod::ImplicitBisect => "bisect",
        })
    }
}

/// Sample positions, the uniforms that produced them and `dt_i/dsigma_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub positions: Vec<f64>,
    pub uniforms: Vec<f64>,
    /// Row-major `k x P`; empty when the batch was drawn without gradients.
    pub jacobian: Vec<f64>,
    pub params: usize,
    pub mode_used: SamplingMethod,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn has_jacobian(&self) -> bool {
        !self.jacobian.is_empty() || self.params == 0
    }

    pub fn jacobian_row(&self, i: usize) -> &[f64] {
        &self.jacobian[i * self.params..(i + 1) * self.params]
    }

    /// Zeroes the Jacobian, cutting every gradient path through the positions.
    pub fn detach(&mut self) {
        self.jacobian.iter_mut().for_each(|j| *j = 0.0);
    }
}

/// Draws `scheme.k` samples with the closed-form inverse (RVS).
pub fn rvs_sample(profile: &OpacityProfile, scheme: &UniformScheme) -> Result<SampleBatch> {
    sample(profile, scheme, SamplingMethod::Rvs)
}

pub fn sample(
    profile: &OpacityProfile,
    scheme: &UniformScheme,
    method: SamplingMethod,
) -> Result<SampleBatch> {
    let uniforms = draw_uniforms(scheme)?;
    sample_from_uniforms(profile, uniforms, method, true)
}

/// Maps given uniforms to positions, optionally with the Jacobian.
///
/// A fully transparent ray has no inverse; it gets evenly mapped positions
/// `t_near + u (t_far - t_near)` and a zero Jacobian.
pub fn sample_from_uniforms(
    profile: &OpacityProfile,
    uniforms: Vec<f64>,
    method: SamplingMethod,
    with_jacobian: bool,
) -> Result<SampleBatch> {
    if uniforms.is_empty() {
        return Err(RvsError::EmptySamples);
    }
    let params = profile.param_count();
    let k = uniforms.len();
    let mut positions = Vec::with_capacity(k);
    let mut jacobian = if with_jacobian {
        vec![0.0; k * params]
    } else {
        Vec::new()
    };
    let iv = profile.grid().interval();
    let depth = profile.total_depth();

    if depth == 0.0 {
        for &u in &uniforms {
            if !(0.0..=1.0).contains(&u) {
                return Err(RvsError::OutOfRange {
                    what: "u",
                    value: u,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
            positions.push(iv.t_near + u * iv.length());
        }
        return Ok(SampleBatch {
            positions,
            uniforms,
            jacobian,
            params,
            mode_used: method,
        });
    }

    // d(total depth)/d(sigma), shared by every row
    let mut depth_grad = vec![0.0; params];
    if with_jacobian {
        profile.add_total_depth_grad(1.0, &mut depth_grad);
    }
    let tol = default_bisect_tol(iv.length());

    for (row, &u) in uniforms.iter().enumerate() {
        let (inv, target_slope) = match method {
            SamplingMethod::Rvs | SamplingMethod::ImplicitBisect => {
                let y = stable_target(depth, u)?;
                let inv = match (method, with_jacobian) {
                    (SamplingMethod::Rvs, true) => invert(profile, y)?,
                    (SamplingMethod::Rvs, false) => {
                        positions.push(invert_position(profile, y)?);
                        continue;
                    }
                    _ => inverse::bisect_inverse(profile, y, tol, with_jacobian)?,
                };
                (inv, stable_target_slope(depth, u, y))
            }
            SamplingMethod::NerfCdf => {
                if !(0.0..=1.0).contains(&u) {
                    return Err(RvsError::OutOfRange {
                        what: "u",
                        value: u,
                        lo: 0.0,
                        hi: 1.0,
                    });
                }
                let rhs = profile.total_opacity() * u;
                (
                    inverse::nerf_inverse(profile, rhs, with_jacobian)?,
                    u * opacity_depth_slope(depth),
                )
            }
        };
        positions.push(inv.t);
        if with_jacobian {
            let chain = inv.dt_dtarget * target_slope;
            let out = &mut jacobian[row * params..(row + 1) * params];
            for ((o, g), d) in out.iter_mut().zip(&inv.grad).zip(&depth_grad) {
                *o = g + chain * d;
            }
        }
    }
    Ok(SampleBatch {
        positions,
        uniforms,
        jacobian,
        params,
        mode_used: method,
    })
}

/// Positions only, for estimators that do not need gradients.
pub fn sample_positions(
    profile: &OpacityProfile,
    uniforms: Vec<f64>,
    method: SamplingMethod,
) -> Result<Vec<f64>> {
    Ok(sample_from_uniforms(profile, uniforms, method, false)?.positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{discretize, GridMode, RayDensityGrid, RayInterval, ScalarField1D};
    use crate::opacity::build_profile;

    #[test]
    fn transparent_ray_maps_uniforms_evenly() {
        let g = RayDensityGrid::uniform(
            RayInterval::new(1.0, 3.0).unwrap(),
            vec![0.0; 4],
            GridMode::Constant,
        )
        .unwrap();
        let p = build_profile(g);
        let b = sample_from_uniforms(&p, vec![0.0, 0.25, 1.0], SamplingMethod::Rvs, true).unwrap();
        assert_eq!(b.positions, vec![1.0, 1.5, 3.0]);
        assert!(b.jacobian.iter().all(|j| *j == 0.0));
    }

    #[test]
    fn sorted_uniforms_give_sorted_positions() {
        let iv = RayInterval::unit();
        for mode in [GridMode::Constant, GridMode::Linear] {
            let g = discretize(&ScalarField1D::wall(iv), iv, 256, mode).unwrap();
            let p = build_profile(g);
            for method in [SamplingMethod::Rvs, SamplingMethod::NerfCdf] {
                let b = sample(&p, &UniformScheme::stratified(64, 9), method).unwrap();
                assert!(b.positions.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn wall_samples_stay_in_the_wall() {
        let iv = RayInterval::unit();
        let g = discretize(&ScalarField1D::wall(iv), iv, 1024, GridMode::Linear).unwrap();
        let p = build_profile(g);
        let b = sample(&p, &UniformScheme::iid(2000, 3), SamplingMethod::Rvs).unwrap();
        // the bump has width 0.01 around 0.5; essentially all opacity lies within 5 widths
        let lo = p.eval_opacity(0.45).unwrap();
        let hi = p.eval_opacity(0.55).unwrap();
        assert!(lo < 1e-4 && hi > p.total_opacity() - 1e-4);
        assert!(b.positions.iter().all(|t| (0.45..=0.55).contains(t)));
    }

    #[test]
    fn rvs_and_nerf_sampling_differ() {
        let g =
            RayDensityGrid::new(vec![0.0, 0.5, 1.0], vec![0.5, 4.0], GridMode::Constant).unwrap();
        let p = build_profile(g);
        let us: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        let a = sample_positions(&p, us.clone(), SamplingMethod::Rvs).unwrap();
        let b = sample_positions(&p, us, SamplingMethod::NerfCdf).unwrap();
        let max_gap = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_gap > 1e-3, "{max_gap}");
    }
}
