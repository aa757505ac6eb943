//! Single-ray variance study and ground-truth helpers.
//!
//! Trials are independent and seeded by `derive_seed(seed, [trial])`, so all
//! estimators and sample counts share common random numbers and the results
//! do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RvsError};
use crate::estimators::{quadrature, reparam_mc_value, stratified_iw_value, uniform_mc_value};
use crate::fields::{discretize, GridMode, RadianceSpec, RayInterval, RayRadiance, ScalarField1D};
use crate::opacity::OpacityProfile;
use crate::rng::derive_seed;
use crate::sampler::{draw_uniforms, SamplingMethod, StrataDenominator, UniformScheme};
use crate::Rgb;

/// Sample counts of the variance study.
pub const DEFAULT_KS: [usize; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];

/// Grid resolution of the benchmark profiles.
pub const BENCH_GRID_BINS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchEstimator {
    ReparamIid,
    ReparamStratified,
    StratifiedIw,
    PlainUniform,
}

impl BenchEstimator {
    pub const ALL: [BenchEstimator; 4] = [
        BenchEstimator::ReparamIid,
        BenchEstimator::ReparamStratified,
        BenchEstimator::StratifiedIw,
        BenchEstimator::PlainUniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchEstimator::ReparamIid => "reparam_mc",
            BenchEstimator::ReparamStratified => "reparam_mc",
            BenchEstimator::StratifiedIw => "stratified_iw",
            BenchEstimator::PlainUniform => "plain_uniform_mc",
        }
    }

    pub fn scheme(self) -> &'static str {
        match self {
            BenchEstimator::ReparamIid | BenchEstimator::PlainUniform => "iid",
            BenchEstimator::ReparamStratified | BenchEstimator::StratifiedIw => "stratified",
        }
    }
}

/// A density field with its radiance, discretized on one ray.
pub struct BenchScene {
    pub name: String,
    pub field: ScalarField1D,
    pub radiance_spec: RadianceSpec,
    pub interval: RayInterval,
    pub profile: OpacityProfile,
    pub radiance: RayRadiance,
}

impl BenchScene {
    pub fn new(
        name: impl Into<String>,
        field: ScalarField1D,
        radiance_spec: RadianceSpec,
        interval: RayInterval,
        bins: usize,
        mode: GridMode,
    ) -> Result<Self> {
        radiance_spec.validate()?;
        let grid = discretize(&field, interval, bins, mode)?;
        Ok(Self {
            name: name.into(),
            radiance: radiance_spec.to_radiance(),
            field,
            radiance_spec,
            interval,
            profile: OpacityProfile::new(grid),
        })
    }

    /// Semi-transparent fog with a faint radiance ripple.
    pub fn foggy() -> Self {
        Self::new(
            "foggy",
            ScalarField1D::foggy(),
            foggy_radiance(),
            RayInterval::unit(),
            BENCH_GRID_BINS,
            GridMode::Linear,
        )
        .expect("builtin scene is valid")
    }

    /// Opaque narrow wall; radiance varies quickly across it.
    pub fn wall() -> Self {
        let iv = RayInterval::unit();
        Self::new(
            "wall",
            ScalarField1D::wall(iv),
            wall_radiance(),
            iv,
            BENCH_GRID_BINS,
            GridMode::Linear,
        )
        .expect("builtin scene is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "foggy" => Some(Self::foggy()),
            "wall" => Some(Self::wall()),
            _ => None,
        }
    }
}

pub fn foggy_radiance() -> RadianceSpec {
    RadianceSpec::grey_sinusoid(0.5, FOGGY_RIPPLE, 1.0, 0.0)
}

pub fn wall_radiance() -> RadianceSpec {
    RadianceSpec::grey_sinusoid(0.5, WALL_RIPPLE, WALL_FREQUENCY, WALL_PHASE)
}

pub const FOGGY_RIPPLE: f64 = 0.0035;
pub const WALL_RIPPLE: f64 = 0.1;
pub const WALL_FREQUENCY: f64 = 20.0;
// Zero phase would make the radiance odd about the wall center, and the two
// halves of a k = 2 stratification would see the same mean.
pub const WALL_PHASE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub trials: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of the mean.
    pub stderr: f64,
}

impl TrialStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let d = v - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (v - mean);
        }
        let variance = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            trials: n,
            mean,
            variance,
            stderr: (variance / n.max(1) as f64).sqrt(),
        }
    }

    /// `|mean - truth| <= z * stderr`, with a rounding allowance for
    /// zero-variance estimators.
    pub fn covers(&self, truth: f64, z: f64) -> bool {
        (self.mean - truth).abs() <= z * self.stderr + 1e-12 * truth.abs().max(1.0)
    }
}

/// One RGB estimate of the scene's expected radiance.
pub fn estimate_once(
    scene: &BenchScene,
    estimator: BenchEstimator,
    k: usize,
    seed: u64,
    strata: StrataDenominator,
) -> Result<Rgb> {
    match estimator {
        BenchEstimator::ReparamIid => {
            let u = draw_uniforms(&UniformScheme::iid(k, seed))?;
            reparam_mc_value(&scene.profile, &scene.radiance, u, SamplingMethod::Rvs)
        }
        BenchEstimator::ReparamStratified => {
            let u = draw_uniforms(&UniformScheme::stratified(k, seed).with_strata(strata))?;
            reparam_mc_value(&scene.profile, &scene.radiance, u, SamplingMethod::Rvs)
        }
        BenchEstimator::StratifiedIw => {
            stratified_iw_value(&scene.profile, &scene.radiance, k, seed)
        }
        BenchEstimator::PlainUniform => uniform_mc_value(&scene.profile, &scene.radiance, k, seed),
    }
}

/// Runs `trials` independent estimates and summarizes channel `channel`.
pub fn run_trials(
    scene: &BenchScene,
    estimator: BenchEstimator,
    k: usize,
    trials: usize,
    seed: u64,
    strata: StrataDenominator,
    channel: usize,
) -> Result<TrialStats> {
    if trials == 0 {
        return Err(RvsError::InvalidConfig("trials must be positive".into()));
    }
    let values = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let s = derive_seed(seed, &[trial as u64]);
            estimate_once(scene, estimator, k, s, strata).map(|rgb| rgb[channel])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TrialStats::from_values(&values))
}

/// Like [`run_trials`] but summarizes all three channels from one set of
/// estimates.
pub fn run_trials_rgb(
    scene: &BenchScene,
    estimator: BenchEstimator,
    k: usize,
    trials: usize,
    seed: u64,
    strata: StrataDenominator,
) -> Result<[TrialStats; 3]> {
    if trials == 0 {
        return Err(RvsError::InvalidConfig("trials must be positive".into()));
    }
    let values = (0..trials)
        .into_par_iter()
        .map(|trial| {
            estimate_once(
                scene,
                estimator,
                k,
                derive_seed(seed, &[trial as u64]),
                strata,
            )
        })
        .collect::<Result<Vec<Rgb>>>()?;
    Ok(std::array::from_fn(|ch| {
        let column: Vec<f64> = values.iter().map(|rgb| rgb[ch]).collect();
        TrialStats::from_values(&column)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub field: String,
    pub estimator: String,
    pub scheme: String,
    pub k: usize,
    pub trials: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    #[serde(skip)]
    pub kind: Option<BenchEstimator>,
}

/// Variance of every estimator at every `k`, on channel 0.
pub fn variance_study(
    scene: &BenchScene,
    estimators: &[BenchEstimator],
    ks: &[usize],
    trials: usize,
    seed: u64,
    strata: StrataDenominator,
) -> Result<Vec<VarianceRow>> {
    let mut rows = Vec::with_capacity(estimators.len() * ks.len());
    for &est in estimators {
        for &k in ks {
            let stats = run_trials(scene, est, k, trials, seed, strata, 0)?;
            rows.push(VarianceRow {
                field: scene.name.clone(),
                estimator: est.name().to_string(),
                scheme: est.scheme().to_string(),
                k,
                trials: stats.trials,
                mean: stats.mean,
                variance: stats.variance,
                stderr: stats.stderr,
                kind: Some(est),
            });
        }
    }
    Ok(rows)
}

pub fn find_row(rows: &[VarianceRow], est: BenchEstimator, k: usize) -> Option<&VarianceRow> {
    rows.iter().find(|r| r.kind == Some(est) && r.k == k)
}

/// Expected radiance of `scene`'s discretized profile by midpoint quadrature
/// on a Constant grid with `bins` bins.
pub fn ground_truth(
    field: &ScalarField1D,
    radiance: &RadianceSpec,
    interval: RayInterval,
    bins: usize,
) -> Result<Rgb> {
    let grid = discretize(field, interval, bins, GridMode::Constant)?;
    Ok(quadrature(&grid, &radiance.to_radiance())?.value)
}
