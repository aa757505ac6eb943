//! Rays, analytic test fields and per-ray discretized density grids.
//!
//! Field definitions round-trip through JSON as `{"kind": ..., "params": {...}}`,
//! which is the format the command-line harness consumes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RvsError};
use crate::Rgb;

/// Near/far bounds of a ray segment, in ray-parameter units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayInterval {
    pub t_near: f64,
    pub t_far: f64,
}

impl RayInterval {
    pub fn new(t_near: f64, t_far: f64) -> Result<Self> {
        if !(t_near.is_finite() && t_far.is_finite() && t_near < t_far) {
            return Err(RvsError::InvalidInterval { t_near, t_far });
        }
        Ok(Self { t_near, t_far })
    }

    pub fn unit() -> Self {
        Self {
            t_near: 0.0,
            t_far: 1.0,
        }
    }

    pub fn length(&self) -> f64 {
        self.t_far - self.t_near
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_near && t <= self.t_far
    }

    /// Knot `i` of an `m`-bin uniform partition. Knots shared between an
    /// `m` and a `2m` partition are bitwise identical.
    pub fn uniform_knot(&self, i: usize, m: usize) -> f64 {
        if i == m {
            return self.t_far;
        }
        self.t_near + self.length() * (i as f64 / m as f64)
    }

    pub fn uniform_knots(&self, m: usize) -> Vec<f64> {
        (0..=m).map(|i| self.uniform_knot(i, m)).collect()
    }
}

/// How density varies inside a grid bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// One density per bin, sampled at the bin midpoint.
    Constant,
    /// One density per knot, linearly interpolated inside bins.
    Linear,
}

impl fmt::Display for GridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridMode::Constant => "constant",
            GridMode::Linear => "linear",
        })
    }
}

/// Piecewise density approximation along one ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayDensityGrid {
    knots: Vec<f64>,
    values: Vec<f64>,
    mode: GridMode,
}

impl RayDensityGrid {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, mode: GridMode) -> Result<Self> {
        if knots.len() < 2 {
            return Err(RvsError::InvalidGrid(format!(
                "need at least two knots, got {}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(RvsError::InvalidGrid("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RvsError::InvalidGrid(
                "knots must be strictly increasing".into(),
            ));
        }
        let bins = knots.len() - 1;
        let expected = match mode {
            GridMode::Constant => bins,
            GridMode::Linear => bins + 1,
        };
        if values.len() != expected {
            return Err(RvsError::InvalidGrid(format!(
                "{mode} grid with {bins} bins needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(RvsError::InvalidGrid(format!(
                "densities must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self {
            knots,
            values,
            mode,
        })
    }

    pub fn uniform(interval: RayInterval, values: Vec<f64>, mode: GridMode) -> Result<Self> {
        let bins = match mode {
            GridMode::Constant => values.len(),
            GridMode::Linear => values.len().saturating_sub(1),
        };
        if bins == 0 {
            return Err(RvsError::InvalidGrid("need at least one bin".into()));
        }
        Self::new(interval.uniform_knots(bins), values, mode)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    /// Number of bins `m`.
    pub fn bins(&self) -> usize {
        self.knots.len() - 1
    }

    /// Number of density parameters the grid exposes to gradients.
    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn width(&self, bin: usize) -> f64 {
        self.knots[bin + 1] - self.knots[bin]
    }

    pub fn interval(&self) -> RayInterval {
        RayInterval {
            t_near: self.knots[0],
            t_far: self.knots[self.knots.len() - 1],
        }
    }

    /// Bin containing `t`; knots resolve to the bin on their right except the far end.
    pub fn bin_of(&self, t: f64) -> usize {
        let m = self.bins();
        self.knots
            .partition_point(|k| *k <= t)
            .saturating_sub(1)
            .min(m - 1)
    }

    /// Approximated density at `t` (clamped to the grid).
    pub fn density_at(&self, t: f64) -> f64 {
        let i = self.bin_of(t);
        match self.mode {
            GridMode::Constant => self.values[i],
            GridMode::Linear => {
                let frac = ((t - self.knots[i]) / self.width(i)).clamp(0.0, 1.0);
                self.values[i] + (self.values[i + 1] - self.values[i]) * frac
            }
        }
    }

    /// Returns a copy with one density value replaced, for perturbation studies.
    pub fn with_value(&self, p: usize, value: f64) -> Result<Self> {
        let mut values = self.values.clone();
        values[p] = value;
        Self::new(self.knots.clone(), values, self.mode)
    }
}

/// Ground-truth scalar field along a ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ScalarField1D {
    ConstantFog {
        level: f64,
    },
    /// Zero before `position`, `level` from there on.
    StepWall {
        position: f64,
        level: f64,
    },
    /// `amplitude * exp(-(t - center)^2 / (2 width^2))`.
    GaussianBump {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    /// Linear interpolation of a table, held constant past its ends.
    Tabulated {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
    /// Pointwise sum of the parts.
    Composite {
        parts: Vec<ScalarField1D>,
    },
}

impl ScalarField1D {
    pub const DEFAULT_FOG_LEVEL: f64 = 0.8;
    /// Optical depth the default wall deposits; total opacity 1 - e^-6 > 0.99.
    pub const DEFAULT_WALL_DEPTH: f64 = 6.0;

    /// Semi-transparent homogeneous medium over the whole ray.
    pub fn foggy() -> Self {
        ScalarField1D::ConstantFog {
            level: Self::DEFAULT_FOG_LEVEL,
        }
    }

    /// Narrow opaque bump in the middle of `interval`, 1% of its length wide.
    pub fn wall(interval: RayInterval) -> Self {
        let width = 0.01 * interval.length();
        ScalarField1D::GaussianBump {
            center: 0.5 * (interval.t_near + interval.t_far),
            width,
            amplitude: Self::DEFAULT_WALL_DEPTH / (width * (2.0 * PI).sqrt()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let field: ScalarField1D =
            serde_json::from_str(text).map_err(|e| RvsError::InvalidField(e.to_string()))?;
        field.validate()?;
        Ok(field)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("field serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RvsError::InvalidField(msg));
        match self {
            ScalarField1D::ConstantFog { level } => {
                if !(level.is_finite() && *level >= 0.0) {
                    return bad(format!("fog level must be >= 0, got {level}"));
                }
            }
            ScalarField1D::StepWall { position, level } => {
                if !position.is_finite() || !(level.is_finite() && *level >= 0.0) {
                    return bad(format!("bad step wall ({position}, {level})"));
                }
            }
            ScalarField1D::GaussianBump {
                center,
                width,
                amplitude,
            } => {
                if !center.is_finite()
                    || !(width.is_finite() && *width > 0.0)
                    || !(amplitude.is_finite() && *amplitude >= 0.0)
                {
                    return bad(format!(
                        "bad gaussian bump (center {center}, width {width}, amplitude {amplitude})"
                    ));
                }
            }
            ScalarField1D::Tabulated { knots, values } => {
                if knots.is_empty() || knots.len() != values.len() {
                    return bad("tabulated field needs equal-length, nonempty knots/values".into());
                }
                if knots.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("tabulated knots must be strictly increasing".into());
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("tabulated values must be finite and >= 0".into());
                }
            }
            ScalarField1D::Composite { parts } => {
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ScalarField1D::ConstantFog { level } => *level,
            ScalarField1D::StepWall { position, level } => {
                if t >= *position {
                    *level
                } else {
                    0.0
                }
            }
            ScalarField1D::GaussianBump {
                center,
                width,
                amplitude,
            } => {
                let z = (t - center) / width;
                amplitude * (-0.5 * z * z).exp()
            }
            ScalarField1D::Tabulated { knots, values } => {
                let n = knots.len();
                if t <= knots[0] {
                    return values[0];
                }
                if t >= knots[n - 1] {
                    return values[n - 1];
                }
                let i = knots.partition_point(|k| *k <= t) - 1;
                let frac = (t - knots[i]) / (knots[i + 1] - knots[i]);
                values[i] + (values[i + 1] - values[i]) * frac
            }
            ScalarField1D::Composite { parts } => parts.iter().map(|p| p.eval(t)).sum(),
        }
    }
}

fn checked_eval(field: &ScalarField1D, t: f64) -> Result<f64> {
    let value = field.eval(t);
    if !value.is_finite() {
        return Err(RvsError::NonFiniteField { t, value });
    }
    if value < 0.0 {
        return Err(RvsError::InvalidField(format!(
            "negative density {value} at t = {t}"
        )));
    }
    Ok(value)
}

/// Samples `field` on a uniform `m`-bin partition of `interval`.
///
/// Constant mode samples bin midpoints, Linear mode samples knots.
pub fn discretize(
    field: &ScalarField1D,
    interval: RayInterval,
    m: usize,
    mode: GridMode,
) -> Result<RayDensityGrid> {
    if m == 0 {
        return Err(RvsError::InvalidGrid("m must be at least 1".into()));
    }
    let knots = interval.uniform_knots(m);
    let values = match mode {
        GridMode::Constant => knots
            .windows(2)
            .map(|w| checked_eval(field, 0.5 * (w[0] + w[1])))
            .collect::<Result<Vec<_>>>()?,
        GridMode::Linear => knots
            .iter()
            .map(|&t| checked_eval(field, t))
            .collect::<Result<Vec<_>>>()?,
    };
    RayDensityGrid::new(knots, values, mode)
}

/// Serializable radiance definitions for test rays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum RadianceSpec {
    Constant {
        rgb: Rgb,
    },
    /// `offset + amplitude * sin(2 pi frequency t + phase)` per channel.
    Sinusoid {
        offset: Rgb,
        amplitude: Rgb,
        frequency: Rgb,
        phase: Rgb,
    },
}

impl Default for RadianceSpec {
    fn default() -> Self {
        RadianceSpec::Sinusoid {
            offset: [0.5, 0.5, 0.5],
            amplitude: [0.4, 0.3, 0.2],
            frequency: [1.0, 1.5, 2.0],
            phase: [0.0, 1.0, 2.0],
        }
    }
}

impl RadianceSpec {
    /// Same sinusoid on every channel.
    pub fn grey_sinusoid(offset: f64, amplitude: f64, frequency: f64, phase: f64) -> Self {
        RadianceSpec::Sinusoid {
            offset: [offset; 3],
            amplitude: [amplitude; 3],
            frequency: [frequency; 3],
            phase: [phase; 3],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: RadianceSpec =
            serde_json::from_str(text).map_err(|e| RvsError::InvalidField(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            RadianceSpec::Constant { rgb } => rgb.iter().all(|c| (0.0..=1.0).contains(c)),
            RadianceSpec::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => (0..3).all(|c| {
                let lo = offset[c] - amplitude[c].abs();
                let hi = offset[c] + amplitude[c].abs();
                lo >= 0.0 && hi <= 1.0 && frequency[c].is_finite() && phase[c].is_finite()
            }),
        };
        if ok {
            Ok(())
        } else {
            Err(RvsError::InvalidField(format!(
                "radiance must stay within [0, 1]: {self:?}"
            )))
        }
    }

    pub fn eval(&self, t: f64) -> Rgb {
        match self {
            RadianceSpec::Constant { rgb } => *rgb,
            RadianceSpec::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => std::array::from_fn(|c| {
                (offset[c] + amplitude[c] * (2.0 * PI * frequency[c] * t + phase[c]).sin())
                    .clamp(0.0, 1.0)
            }),
        }
    }

    pub fn derivative(&self, t: f64) -> Rgb {
        match self {
            RadianceSpec::Constant { .. } => [0.0; 3],
            RadianceSpec::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => std::array::from_fn(|c| {
                let w = 2.0 * PI * frequency[c];
                amplitude[c] * w * (w * t + phase[c]).cos()
            }),
        }
    }

    pub fn to_radiance(&self) -> RayRadiance {
        let value = self.clone();
        let slope = self.clone();
        RayRadiance::with_derivative(move |t| value.eval(t), move |t| slope.derivative(t))
    }
}

type RadianceFn = Box<dyn Fn(f64) -> Rgb + Send + Sync>;

/// Radiance along one ray with a thread-safe query counter.
pub struct RayRadiance {
    eval: RadianceFn,
    derivative: Option<RadianceFn>,
    queries: AtomicU64,
}

impl RayRadiance {
    pub fn new(eval: impl Fn(f64) -> Rgb + Send + Sync + 'static) -> Self {
        Self {
            eval: Box::new(eval),
            derivative: None,
            queries: AtomicU64::new(0),
        }
    }

    pub fn with_derivative(
        eval: impl Fn(f64) -> Rgb + Send + Sync + 'static,
        derivative: impl Fn(f64) -> Rgb + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Box::new(eval),
            derivative: Some(Box::new(derivative)),
            queries: AtomicU64::new(0),
        }
    }

    pub fn constant(rgb: Rgb) -> Self {
        Self::with_derivative(move |_| rgb, |_| [0.0; 3])
    }

    /// Evaluates and counts one query. Output is clamped to `[0, 1]`.
    pub fn eval(&self, t: f64) -> Rgb {
        self.queries.fetch_add(1, Ordering::Relaxed);
        (self.eval)(t).map(|c| c.clamp(0.0, 1.0))
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    /// dc/dt: analytic when supplied, otherwise a central difference of step `h`.
    pub fn derivative(&self, t: f64, h: f64) -> Rgb {
        match &self.derivative {
            Some(d) => d(t),
            None => {
                let hi = self.eval(t + h);
                let lo = self.eval(t - h);
                std::array::from_fn(|c| (hi[c] - lo[c]) / (2.0 * h))
            }
        }
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

impl fmt::Debug for RayRadiance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RayRadiance")
            .field("analytic_derivative", &self.derivative.is_some())
            .field("queries", &self.query_count())
            .finish()
    }
}
