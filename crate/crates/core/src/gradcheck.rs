//! Finite-difference checks of every analytic gradient, on random profiles.
//!
//! A failing case is kept in the report in serializable form so it can be
//! replayed bit for bit.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{plain_mc, reparam_mc_value};
use crate::fields::{GridMode, RadianceSpec, RayDensityGrid};
use crate::opacity::{stable_target, OpacityProfile};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::sampler::{invert_bisect, sample_from_uniforms, sample_positions, SamplingMethod};

pub const DEFAULT_CASES: usize = 200;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;
/// Allowed deviation between closed-form and bisection Jacobians.
pub const CROSS_METHOD_THRESHOLD: f64 = 1e-6;
/// Differences below this are treated as agreement regardless of scale.
pub const ABS_FLOOR: f64 = 1e-9;
pub const REPARAM_SAMPLES: usize = 8;

/// Random grid: 2..=64 jittered bins on `[t_n, t_n + L]` with
/// `t_n in [0, 1)`, `L in [0.5, 1]` and densities in `[0.5, 4]`.
///
/// Densities stay away from zero so the `1e-10` regularizer of the constant
/// inverse perturbs positions by far less than any tested tolerance.
pub fn random_grid(rng: &mut Rng, mode: GridMode) -> RayDensityGrid {
    let m = rng.gen_range(2..=64usize);
    let t_near: f64 = rng.gen();
    let length = rng.gen_range(0.5..=1.0);
    let mut knots = Vec::with_capacity(m + 1);
    knots.push(t_near);
    for i in 1..m {
        let jitter = rng.gen_range(-0.3..0.3);
        knots.push(t_near + length * (i as f64 + jitter) / m as f64);
    }
    knots.push(t_near + length);
    let n = match mode {
        GridMode::Constant => m,
        GridMode::Linear => m + 1,
    };
    let values = (0..n).map(|_| rng.gen_range(0.5..=4.0)).collect();
    RayDensityGrid::new(knots, values, mode).expect("random grid is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    InvertConstant,
    InvertLinear,
    InvertBisect,
    ReparamMc,
}

impl GradOp {
    pub const ALL: [GradOp; 4] = [
        GradOp::InvertConstant,
        GradOp::InvertLinear,
        GradOp::InvertBisect,
        GradOp::ReparamMc,
    ];
}

/// Everything needed to recompute one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub op: GradOp,
    pub mode: GridMode,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub uniforms: Vec<f64>,
}

impl GradCase {
    pub fn random(op: GradOp, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mode = match op {
            GradOp::InvertConstant => GridMode::Constant,
            GradOp::InvertLinear => GridMode::Linear,
            GradOp::InvertBisect | GradOp::ReparamMc => {
                if rng.gen::<bool>() {
                    GridMode::Constant
                } else {
                    GridMode::Linear
                }
            }
        };
        let grid = random_grid(&mut rng, mode);
        let k = if op == GradOp::ReparamMc {
            REPARAM_SAMPLES
        } else {
            1
        };
        let profile = OpacityProfile::new(grid.clone());
        let uniforms = (0..k)
            .map(|_| loop {
                let u: f64 = rng.gen();
                if mode == GridMode::Linear || !near_knot(&profile, u) {
                    break u;
                }
            })
            .collect();
        Self {
            op,
            mode,
            knots: grid.knots().to_vec(),
            values: grid.values().to_vec(),
            uniforms,
        }
    }

    pub fn grid(&self) -> Result<RayDensityGrid> {
        RayDensityGrid::new(self.knots.clone(), self.values.clone(), self.mode)
    }

    fn method(&self) -> SamplingMethod {
        match self.op {
            GradOp::InvertBisect => SamplingMethod::ImplicitBisect,
            _ => SamplingMethod::Rvs,
        }
    }

    /// Analytic derivative, flattened: `dt_i/dsigma_p` for the inverses,
    /// `dC_ch/dsigma_p` for the estimator.
    pub fn analytic(&self) -> Result<Vec<f64>> {
        let profile = OpacityProfile::new(self.grid()?);
        let batch = sample_from_uniforms(&profile, self.uniforms.clone(), self.method(), true)?;
        if self.op == GradOp::ReparamMc {
            let radiance = RadianceSpec::default().to_radiance();
            let est = plain_mc(&profile, &radiance, &batch)?;
            Ok(est.grad_density.iter().flatten().copied().collect())
        } else {
            Ok(batch.jacobian)
        }
    }

    fn evaluate(&self, grid: RayDensityGrid) -> Result<Vec<f64>> {
        let profile = OpacityProfile::new(grid);
        if self.op == GradOp::ReparamMc {
            let radiance = RadianceSpec::default().to_radiance();
            let v = reparam_mc_value(
                &profile,
                &radiance,
                self.uniforms.clone(),
                SamplingMethod::Rvs,
            )?;
            Ok(v.to_vec())
        } else if self.op == GradOp::InvertBisect {
            // the default tolerance would put ~1e-6 of bracketing noise into
            // the differences; run bisection to full precision instead
            self.uniforms
                .iter()
                .map(|&u| {
                    let y = stable_target(profile.total_depth(), u)?;
                    Ok(invert_bisect(&profile, y, f64::MIN_POSITIVE)?.t)
                })
                .collect()
        } else {
            Ok(
                sample_from_uniforms(&profile, self.uniforms.clone(), self.method(), false)?
                    .positions,
            )
        }
    }

    /// Central differences with step `1e-6 * max(|sigma_p|, 0.1)`, in the
    /// same layout as [`GradCase::analytic`].
    pub fn numeric(&self) -> Result<Vec<f64>> {
        let grid = self.grid()?;
        let params = grid.param_count();
        let outputs = self.evaluate(grid.clone())?.len();
        let mut out = vec![0.0; outputs * params];
        for p in 0..params {
            let s = grid.values()[p];
            let h = 1e-6 * s.abs().max(0.1);
            let up = self.evaluate(grid.with_value(p, s + h)?)?;
            let dn = self.evaluate(grid.with_value(p, (s - h).max(0.0))?)?;
            let span = s + h - (s - h).max(0.0);
            for o in 0..outputs {
                let d = (up[o] - dn[o]) / span;
                // analytic layouts: samples are rows over params, the
                // estimator is params over channels
                let idx = if self.op == GradOp::ReparamMc {
                    p * outputs + o
                } else {
                    o * params + p
                };
                out[idx] = d;
            }
        }
        Ok(out)
    }

    /// Largest relative error between analytic and numeric derivatives,
    /// ignoring entries that agree to [`ABS_FLOOR`].
    pub fn max_rel_error(&self) -> Result<f64> {
        Ok(self.errors()?.0)
    }

    /// `(max relative error, max absolute error)`.
    pub fn errors(&self) -> Result<(f64, f64)> {
        let a = self.analytic()?;
        let n = self.numeric()?;
        let abs = a
            .iter()
            .zip(&n)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        Ok((max_rel_error(&a, &n), abs))
    }
}

/// On a Constant grid the density jumps at knots, so `t(sigma)` has a kink
/// where a sample sits on a knot and central differences straddling it do
/// not measure the derivative. Such draws are skipped.
fn near_knot(profile: &OpacityProfile, u: f64) -> bool {
    let Ok(t) = sample_positions(profile, vec![u], SamplingMethod::Rvs) else {
        return true;
    };
    let gap = 1e-5 * profile.grid().interval().length();
    profile
        .grid()
        .knots()
        .iter()
        .any(|k| (k - t[0]).abs() < gap)
}

pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d <= ABS_FLOOR {
                0.0
            } else {
                d / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Max deviation between the closed-form and bisection sample Jacobians,
/// relative to `max(1, |J|)`.
pub fn cross_method_deviation(case: &GradCase) -> Result<f64> {
    let profile = OpacityProfile::new(case.grid()?);
    let explicit =
        sample_from_uniforms(&profile, case.uniforms.clone(), SamplingMethod::Rvs, true)?;
    let implicit = sample_from_uniforms(
        &profile,
        case.uniforms.clone(),
        SamplingMethod::ImplicitBisect,
        true,
    )?;
    Ok(explicit
        .jacobian
        .iter()
        .zip(&implicit.jacobian)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: GradOp,
    pub cases: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub threshold: f64,
    pub passed: bool,
    /// The case with the largest error, present when the check failed.
    pub worst_case: Option<GradCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub cases_per_op: usize,
    pub ops: Vec<OpReport>,
    pub cross_method_max_deviation: f64,
    pub cross_method_threshold: f64,
    pub cross_method_passed: bool,
    pub passed: bool,
}

/// Runs `cases` random checks per operation. Cases are seeded by
/// `(seed, op, case)` and evaluated in parallel.
pub fn run_suite(cases: usize, seed: u64, threshold: f64) -> Result<GradcheckReport> {
    let mut ops = Vec::new();
    for (oi, &op) in GradOp::ALL.iter().enumerate() {
        let errors = (0..cases)
            .into_par_iter()
            .map(|c| {
                let case = GradCase::random(op, derive_seed(seed, &[oi as u64, c as u64]));
                let (err, abs) = case.errors()?;
                Ok((err, abs, case))
            })
            .collect::<Result<Vec<_>>>()?;
        let max_abs = errors.iter().map(|e| e.1).fold(0.0, f64::max);
        let (max_err, worst) = errors.into_iter().fold((0.0, None), |(m, w), (e, _, c)| {
            if e > m || w.is_none() {
                (e.max(m), Some(c))
            } else {
                (m, w)
            }
        });
        let passed = max_err <= threshold;
        ops.push(OpReport {
            op,
            cases,
            max_rel_error: max_err,
            max_abs_error: max_abs,
            threshold,
            passed,
            worst_case: if passed { None } else { worst },
        });
    }
    let cross = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mode = if c % 2 == 0 {
                GradOp::InvertConstant
            } else {
                GradOp::InvertLinear
            };
            cross_method_deviation(&GradCase::random(mode, derive_seed(seed, &[99, c as u64])))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let cross_passed = cross <= CROSS_METHOD_THRESHOLD;
    let passed = cross_passed && ops.iter().all(|o| o.passed);
    Ok(GradcheckReport {
        seed,
        cases_per_op: cases,
        ops,
        cross_method_max_deviation: cross,
        cross_method_threshold: CROSS_METHOD_THRESHOLD,
        cross_method_passed: cross_passed,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_grids_respect_ranges() {
        let mut rng = rng_from_seed(1);
        for _ in 0..200 {
            let g = random_grid(&mut rng, GridMode::Linear);
            assert!((2..=64).contains(&g.bins()));
            assert!(g.values().iter().all(|v| (0.5..=4.0).contains(v)));
            let iv = g.interval();
            assert!(iv.t_near < 1.0 && (0.5..=1.0 + 1e-12).contains(&iv.length()));
        }
    }

    #[test]
    fn replay_is_bitwise() {
        let case = GradCase::random(GradOp::ReparamMc, 17);
        let text = serde_json::to_string(&case).unwrap();
        let back: GradCase = serde_json::from_str(&text).unwrap();
        assert_eq!(case, back);
        assert_eq!(
            case.max_rel_error().unwrap().to_bits(),
            back.max_rel_error().unwrap().to_bits()
        );
    }

    #[test]
    fn small_suite_passes() {
        let r = run_suite(20, 5, DEFAULT_THRESHOLD).unwrap();
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(max_rel_error(&[0.0, 1.0], &[1e-10, 1.0]), 0.0);
        assert!((max_rel_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
