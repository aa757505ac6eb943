use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RvsError};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformKind {
    Iid,
    Stratified,
}

/// Width denominator of the stratified bins.
///
/// `KPlusOne` draws `v_i ~ U[(i-1)/(k+1), i/(k+1)]` and leaves
/// `[k/(k+1), 1]` uncovered, which biases radiance estimates by the missing
/// tail. `K` is the usual full cover of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataDenominator {
    #[default]
    KPlusOne,
    K,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformScheme {
    pub kind: UniformKind,
    pub k: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub strata: StrataDenominator,
}

impl UniformScheme {
    pub fn iid(k: usize, rng_seed: u64) -> Self {
        Self {
            kind: UniformKind::Iid,
            k,
            rng_seed,
            strata: StrataDenominator::default(),
        }
    }

    pub fn stratified(k: usize, rng_seed: u64) -> Self {
        Self {
            kind: UniformKind::Stratified,
            k,
            rng_seed,
            strata: StrataDenominator::default(),
        }
    }

    pub fn with_strata(mut self, strata: StrataDenominator) -> Self {
        self.strata = strata;
        self
    }

    pub fn with_seed(mut self, rng_seed: u64) -> Self {
        self.rng_seed = rng_seed;
        self
    }
}

/// Draws `k` uniforms; deterministic in `rng_seed`. Stratified draws come out sorted.
pub fn draw_uniforms(scheme: &UniformScheme) -> Result<Vec<f64>> {
    if scheme.k == 0 {
        return Err(RvsError::EmptySamples);
    }
    let mut rng = rng_from_seed(scheme.rng_seed);
    let k = scheme.k;
    Ok(match scheme.kind {
        UniformKind::Iid => (0..k).map(|_| rng.gen::<f64>()).collect(),
        UniformKind::Stratified => {
            let denom = match scheme.strata {
                StrataDenominator::KPlusOne => (k + 1) as f64,
                StrataDenominator::K => k as f64,
            };
            (0..k)
                .map(|i| (i as f64 + rng.gen::<f64>()) / denom)
                .collect()
        }
    })
}
