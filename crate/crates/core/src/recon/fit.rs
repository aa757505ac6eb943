use serde::{Deserialize, Serialize};

use crate::error::{Result, RvsError};
use crate::estimators::plain_mc;
use crate::opacity::OpacityProfile;
use crate::rng::derive_seed;
use crate::sampler::{
    draw_uniforms, sample_from_uniforms, SamplingMethod, StrataDenominator, UniformKind,
    UniformScheme,
};
use crate::Rgb;

use super::model::{ModelGrad, TrainableRayModel};

/// Divergence is declared when `|loss| > DIVERGENCE_FACTOR * initial`.
pub const DIVERGENCE_FACTOR: f64 = 1e3;
/// Lower bound on the initial loss used by the divergence test, so an
/// already-optimal start cannot trip it on rounding noise.
pub const DIVERGENCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error of one estimate, averaged over channels.
    Mse,
    /// `sum_ch (C1 - g)(C2 - g)` over two independent estimates.
    TwoSample,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::TwoSample => "two_sample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub steps: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub scheme: UniformKind,
    pub strata: StrataDenominator,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 32,
            steps: 1000,
            lr: 1e-2,
            loss: LossKind::Mse,
            scheme: UniformKind::Stratified,
            strata: StrataDenominator::K,
            seed: 0,
        }
    }
}

/// Reparameterized estimate of the model's color and its parameter gradient
/// (`grads[c]` is `d value[c] / d params`).
pub fn model_estimate(
    model: &TrainableRayModel,
    scheme: &UniformScheme,
) -> Result<(Rgb, [ModelGrad; 3])> {
    let profile = OpacityProfile::new(model.density_grid());
    let uniforms = draw_uniforms(scheme)?;
    let batch = sample_from_uniforms(&profile, uniforms, SamplingMethod::Rvs, true)?;
    let radiance = model.to_radiance();
    let est = plain_mc(&profile, &radiance, &batch)?;

    let mut grads = [
        ModelGrad::zeros(model),
        ModelGrad::zeros(model),
        ModelGrad::zeros(model),
    ];
    // d sigma_p / d pre_p = sigmoid(pre_p)
    let act: Vec<f64> = model
        .density_pre
        .iter()
        .map(|p| super::model::sigmoid(*p))
        .collect();
    for (p, g) in est.grad_density.iter().enumerate() {
        for c in 0..3 {
            grads[c].density_pre[p] = g[c] * act[p];
        }
    }
    let scale = profile.total_opacity() / batch.len() as f64;
    for &t in &batch.positions {
        for (c, g) in grads.iter_mut().enumerate() {
            let mut s = [0.0; 3];
            s[c] = scale;
            model.add_radiance_grad(t, s, &mut g.rgb);
        }
    }
    Ok((est.value, grads))
}

fn residual(value: Rgb, target: Rgb) -> Rgb {
    std::array::from_fn(|c| value[c] - target[c])
}

/// One stochastic loss and its gradient at the current parameters.
pub fn loss_and_grad(
    model: &TrainableRayModel,
    target: Rgb,
    config: &FitConfig,
    step: u64,
) -> Result<(f64, f64, ModelGrad)> {
    let scheme = |draw: u64| UniformScheme {
        kind: config.scheme,
        k: config.k,
        rng_seed: derive_seed(config.seed, &[step, draw]),
        strata: config.strata,
    };
    let (v1, g1) = model_estimate(model, &scheme(0))?;
    let r1 = residual(v1, target);
    let sq = r1.iter().map(|r| r * r).sum::<f64>() / 3.0;
    let mut grad = ModelGrad::zeros(model);
    let loss = match config.loss {
        LossKind::Mse => {
            for c in 0..3 {
                grad.add_scaled(&g1[c], 2.0 * r1[c] / 3.0);
            }
            sq
        }
        LossKind::TwoSample => {
            let (v2, g2) = model_estimate(model, &scheme(1))?;
            let r2 = residual(v2, target);
            for c in 0..3 {
                grad.add_scaled(&g1[c], r2[c]);
                grad.add_scaled(&g2[c], r1[c]);
            }
            (0..3).map(|c| r1[c] * r2[c]).sum()
        }
    };
    Ok((loss, sq, grad))
}

/// Fits `model` so its expected color matches `target`; returns the
/// per-step loss trace.
///
/// Aborts with [`RvsError::Divergence`] when the loss leaves
/// `DIVERGENCE_FACTOR` times the initial squared error or stops being
/// finite.
pub fn fit_ray(target: Rgb, model: &mut TrainableRayModel, config: &FitConfig) -> Result<Vec<f64>> {
    if config.steps == 0 {
        return Err(RvsError::InvalidConfig("steps must be at least 1".into()));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(RvsError::InvalidConfig(format!(
            "learning rate must be positive, got {}",
            config.lr
        )));
    }
    let mut trace = Vec::with_capacity(config.steps);
    let mut initial = None;
    for step in 0..config.steps {
        let (loss, sq, grad) = loss_and_grad(model, target, config, step as u64)?;
        let reference = *initial.get_or_insert(sq.max(loss.abs()).max(DIVERGENCE_FLOOR));
        if !loss.is_finite() || loss.abs() > DIVERGENCE_FACTOR * reference {
            return Err(RvsError::Divergence {
                step,
                loss,
                initial: reference,
            });
        }
        trace.push(loss);
        model.apply(&grad, config.lr);
    }
    Ok(trace)
}
