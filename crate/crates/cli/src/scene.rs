use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::Serialize;

use rvs_core::bench::{foggy_radiance, wall_radiance};
use rvs_core::recon::LossKind;
use rvs_core::sampler::{StrataDenominator, UniformKind};
use rvs_core::{GridMode, RadianceSpec, RayInterval, SamplingMethod, ScalarField1D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Constant,
    Linear,
}

impl From<Mode> for GridMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Constant => GridMode::Constant,
            Mode::Linear => GridMode::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Rvs,
    Nerf,
    Bisect,
}

impl From<Sampling> for SamplingMethod {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Rvs => SamplingMethod::Rvs,
            Sampling::Nerf => SamplingMethod::NerfCdf,
            Sampling::Bisect => SamplingMethod::ImplicitBisect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Iid,
    Stratified,
}

impl From<Scheme> for UniformKind {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Iid => UniformKind::Iid,
            Scheme::Stratified => UniformKind::Stratified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strata {
    /// Bins of width 1/k covering [0, 1].
    K,
    /// Bins of width 1/(k+1); [k/(k+1), 1] is never drawn.
    #[value(name = "k_plus_1")]
    #[serde(rename = "k_plus_1")]
    KPlusOne,
}

impl From<Strata> for StrataDenominator {
    fn from(s: Strata) -> Self {
        match s {
            Strata::K => StrataDenominator::K,
            Strata::KPlusOne => StrataDenominator::KPlusOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    #[value(name = "two_sample")]
    TwoSample,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Mse => LossKind::Mse,
            Loss::TwoSample => LossKind::TwoSample,
        }
    }
}

/// A field from `foggy`, `wall` or a JSON definition file, with its radiance.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedField {
    pub name: String,
    pub field: ScalarField1D,
    pub radiance: RadianceSpec,
}

pub fn resolve_field(field: &str, radiance: Option<&PathBuf>) -> anyhow::Result<ResolvedField> {
    let (name, field, default_radiance) = match field {
        "foggy" => (
            "foggy".to_string(),
            ScalarField1D::foggy(),
            foggy_radiance(),
        ),
        "wall" => (
            "wall".to_string(),
            ScalarField1D::wall(RayInterval::unit()),
            wall_radiance(),
        ),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| {
                format!("field must be foggy, wall or a JSON file; reading {path}")
            })?;
            let field =
                ScalarField1D::from_json(&text).with_context(|| format!("parsing {path}"))?;
            let name = std::path::Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.to_string());
            (name, field, RadianceSpec::default())
        }
    };
    let radiance = match radiance {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RadianceSpec::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => default_radiance,
    };
    Ok(ResolvedField {
        name,
        field,
        radiance,
    })
}

pub fn check_positive(what: &str, v: usize) -> anyhow::Result<()> {
    if v == 0 {
        bail!("{what} must be at least 1");
    }
    Ok(())
}
