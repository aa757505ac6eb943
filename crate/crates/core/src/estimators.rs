//! Expected-radiance estimators along one ray.
//!
//! * [`quadrature`]: the classic alpha-compositing sum over a Constant grid.
//! * [`plain_mc`] / [`reparam_mc`]: `(y_f / k) * sum c(t_i)` with `t_i` drawn
//!   by opacity inversion, differentiable through the sample positions.
//! * [`stratified_iw`] and [`uniform_mc_value`]: baselines that sample the
//!   ray uniformly and weight by `dF/dt`.
//!
//! RGB is treated as three channels sharing one sample batch. Gradients are
//! with respect to the grid's density values.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RvsError};
use crate::fields::{GridMode, RayDensityGrid, RayRadiance};
use crate::opacity::{opacity_depth_slope, OpacityProfile};
use crate::rng::rng_from_seed;
use crate::sampler::{
    draw_uniforms, sample_from_uniforms, sample_positions, SampleBatch, SamplingMethod,
    UniformScheme,
};
use crate::Rgb;

/// Step of the central difference used for `dc/dt` when the radiance has no
/// analytic derivative, relative to the ray length.
pub const RADIANCE_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Quadrature,
    PlainMc,
    ReparamMc,
    StratifiedIw,
    UniformMc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceEstimate {
    pub value: Rgb,
    /// `d value / d sigma_p`, one RGB triple per density parameter.
    /// Empty for value-only estimates.
    pub grad_density: Vec<Rgb>,
    pub radiance_queries: usize,
    pub kind: EstimatorKind,
}

/// Alpha compositing of per-bin optical thicknesses `taus` and colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub value: Rgb,
    pub weights: Vec<f64>,
    /// `d value / d tau_i` per channel.
    pub d_tau: Vec<Rgb>,
}

/// Composites `sum_i w_i c_i` with `w_i = (1 - e^{-tau_i}) e^{-sum_{j<i} tau_j}`.
///
/// Weights are formed as differences of consecutive opacities
/// `F_{i+1} - F_i`, which is the same quantity and makes the weight sum
/// equal the total opacity up to rounding of a single subtraction.
pub fn composite(taus: &[f64], colors: &[Rgb]) -> Composite {
    let n = taus.len();
    assert_eq!(n, colors.len());
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    prefix.push(acc);
    for tau in taus {
        acc += tau;
        prefix.push(acc);
    }
    composite_from_prefix(&prefix, colors)
}

fn composite_from_prefix(prefix: &[f64], colors: &[Rgb]) -> Composite {
    let n = colors.len();
    let opacity: Vec<f64> = prefix.iter().map(|p| -(-p).exp_m1()).collect();
    let weights: Vec<f64> = opacity.windows(2).map(|f| f[1] - f[0]).collect();
    let mut value = [0.0; 3];
    for (w, c) in weights.iter().zip(colors) {
        for ch in 0..3 {
            value[ch] += w * c[ch];
        }
    }
    // d/dtau_i = T_{i+1} c_i - sum_{j>i} w_j c_j
    let mut d_tau = vec![[0.0; 3]; n];
    let mut tail = [0.0; 3];
    for i in (0..n).rev() {
        let trans = (-prefix[i + 1]).exp();
        for ch in 0..3 {
            d_tau[i][ch] = trans * colors[i][ch] - tail[ch];
            tail[ch] += weights[i] * colors[i][ch];
        }
    }
    Composite {
        value,
        weights,
        d_tau,
    }
}

fn require_constant(grid: &RayDensityGrid) -> Result<()> {
    if grid.mode() != GridMode::Constant {
        return Err(RvsError::WrongMode {
            expected: GridMode::Constant,
            found: grid.mode(),
        });
    }
    Ok(())
}

/// Quadrature weights of a Constant grid.
pub fn quadrature_weights(grid: &RayDensityGrid) -> Result<Vec<f64>> {
    require_constant(grid)?;
    let profile = OpacityProfile::new(grid.clone());
    Ok(composite_from_prefix(profile.prefix_integrals(), &vec![[0.0; 3]; grid.bins()]).weights)
}

/// Piecewise-constant quadrature with radiance sampled at bin midpoints.
pub fn quadrature(grid: &RayDensityGrid, radiance: &RayRadiance) -> Result<RadianceEstimate> {
    require_constant(grid)?;
    let profile = OpacityProfile::new(grid.clone());
    let colors: Vec<Rgb> = grid
        .knots()
        .windows(2)
        .map(|w| radiance.eval(0.5 * (w[0] + w[1])))
        .collect();
    let comp = composite_from_prefix(profile.prefix_integrals(), &colors);
    let grad_density = comp
        .d_tau
        .iter()
        .enumerate()
        .map(|(i, d)| d.map(|v| v * grid.width(i)))
        .collect();
    Ok(RadianceEstimate {
        value: comp.value,
        grad_density,
        radiance_queries: grid.bins(),
        kind: EstimatorKind::Quadrature,
    })
}

/// `(y_f / k) sum_i c(t_i)` for samples drawn from the profile.
///
/// The gradient follows `y_f` and, through the batch Jacobian, every sample
/// position.
pub fn plain_mc(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    samples: &SampleBatch,
) -> Result<RadianceEstimate> {
    mc_estimate(profile, radiance, samples, EstimatorKind::PlainMc)
}

fn mc_estimate(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    samples: &SampleBatch,
    kind: EstimatorKind,
) -> Result<RadianceEstimate> {
    let k = samples.len();
    if k == 0 {
        return Err(RvsError::EmptySamples);
    }
    let yf = profile.total_opacity();
    let scale = yf / k as f64;
    let mut sum = [0.0; 3];
    let colors: Vec<Rgb> = samples
        .positions
        .iter()
        .map(|&t| radiance.eval(t))
        .collect();
    for c in &colors {
        for ch in 0..3 {
            sum[ch] += c[ch];
        }
    }
    let value = sum.map(|s| s * scale);

    let params = profile.param_count();
    let mut grad_density = Vec::new();
    if samples.has_jacobian() {
        grad_density = vec![[0.0; 3]; params];
        let mut dyf = vec![0.0; params];
        profile.add_total_depth_grad(opacity_depth_slope(profile.total_depth()), &mut dyf);
        for (g, d) in grad_density.iter_mut().zip(&dyf) {
            for ch in 0..3 {
                g[ch] = d * sum[ch] / k as f64;
            }
        }
        if yf > 0.0 {
            let h = RADIANCE_FD_STEP * profile.grid().interval().length();
            for (i, &t) in samples.positions.iter().enumerate() {
                let dc = radiance.derivative(t, h);
                let row = samples.jacobian_row(i);
                for (g, j) in grad_density.iter_mut().zip(row) {
                    for ch in 0..3 {
                        g[ch] += scale * dc[ch] * j;
                    }
                }
            }
        }
    }
    Ok(RadianceEstimate {
        value,
        grad_density,
        radiance_queries: k,
        kind,
    })
}

/// Reparameterized estimate: draws uniforms, inverts the opacity and
/// averages radiance, with the full density gradient.
pub fn reparam_mc(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    scheme: &UniformScheme,
) -> Result<RadianceEstimate> {
    let uniforms = draw_uniforms(scheme)?;
    let batch = sample_from_uniforms(profile, uniforms, SamplingMethod::Rvs, true)?;
    mc_estimate(profile, radiance, &batch, EstimatorKind::ReparamMc)
}

/// Value-only reparameterized estimate for an arbitrary sampling method.
pub fn reparam_mc_value(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    uniforms: Vec<f64>,
    method: SamplingMethod,
) -> Result<Rgb> {
    let k = uniforms.len();
    if k == 0 {
        return Err(RvsError::EmptySamples);
    }
    let positions = sample_positions(profile, uniforms, method)?;
    let scale = profile.total_opacity() / k as f64;
    let mut sum = [0.0; 3];
    for &t in &positions {
        let c = radiance.eval(t);
        for ch in 0..3 {
            sum[ch] += c[ch];
        }
    }
    Ok(sum.map(|s| s * scale))
}

/// Stratified importance-weighted baseline over a uniform `k`-bin split of
/// the ray: `sum_i w c(tau_i) (1 - F(tau_i)) sigma(tau_i)` with one uniform
/// `tau_i` per bin.
pub fn stratified_iw(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    k: usize,
    seed: u64,
) -> Result<RadianceEstimate> {
    weighted_uniform(profile, radiance, k, seed, true, true)
}

pub fn stratified_iw_value(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    k: usize,
    seed: u64,
) -> Result<Rgb> {
    Ok(weighted_uniform(profile, radiance, k, seed, true, false)?.value)
}

/// Naive baseline: `k` i.i.d. uniform positions weighted by `dF/dt`.
pub fn uniform_mc_value(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    k: usize,
    seed: u64,
) -> Result<Rgb> {
    Ok(weighted_uniform(profile, radiance, k, seed, false, false)?.value)
}

fn weighted_uniform(
    profile: &OpacityProfile,
    radiance: &RayRadiance,
    k: usize,
    seed: u64,
    stratified: bool,
    with_grad: bool,
) -> Result<RadianceEstimate> {
    if k == 0 {
        return Err(RvsError::EmptySamples);
    }
    let iv = profile.grid().interval();
    let width = iv.length() / k as f64;
    let mut rng = rng_from_seed(seed);
    let params = profile.param_count();
    let mut value = [0.0; 3];
    let mut grad_density = if with_grad {
        vec![[0.0; 3]; params]
    } else {
        Vec::new()
    };
    let mut scratch = vec![0.0; if with_grad { params } else { 0 }];
    for i in 0..k {
        let xi: f64 = rng.gen();
        let tau = if stratified {
            (iv.t_near + (i as f64 + xi) * width).min(iv.t_far)
        } else {
            iv.t_near + xi * iv.length()
        };
        let trans = (-profile.depth_unchecked(tau)).exp();
        let sigma = profile.density_at(tau);
        let c = radiance.eval(tau);
        for ch in 0..3 {
            value[ch] += width * c[ch] * trans * sigma;
        }
        if with_grad {
            // d[e^{-I} sigma] = e^{-I} (d sigma - sigma dI)
            scratch.iter_mut().for_each(|s| *s = 0.0);
            profile.add_density_grad(tau, trans, &mut scratch);
            profile.add_depth_grad(tau, -trans * sigma, &mut scratch);
            for (g, s) in grad_density.iter_mut().zip(&scratch) {
                for ch in 0..3 {
                    g[ch] += width * c[ch] * s;
                }
            }
        }
    }
    Ok(RadianceEstimate {
        value,
        grad_density,
        radiance_queries: k,
        kind: if stratified {
            EstimatorKind::StratifiedIw
        } else {
            EstimatorKind::UniformMc
        },
    })
}

/// `sum_ch (C1 - C_gt)(C2 - C_gt)` and its gradient by the product rule.
///
/// With independent estimates this is unbiased for the squared error of the
/// expected color.
pub fn two_sample_loss(
    est1: &RadianceEstimate,
    est2: &RadianceEstimate,
    target: Rgb,
) -> (f64, Vec<f64>) {
    let r1: Rgb = std::array::from_fn(|c| est1.value[c] - target[c]);
    let r2: Rgb = std::array::from_fn(|c| est2.value[c] - target[c]);
    let loss = (0..3).map(|c| r1[c] * r2[c]).sum();
    let grad = est1
        .grad_density
        .iter()
        .zip(&est2.grad_density)
        .map(|(g1, g2)| (0..3).map(|c| g1[c] * r2[c] + r1[c] * g2[c]).sum())
        .collect();
    (loss, grad)
}
