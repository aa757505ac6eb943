//! Inverses of the piecewise optical-depth functions, each with its gradient
//! with respect to the grid's density values.

use crate::error::{Result, RvsError};
use crate::fields::GridMode;
use crate::opacity::OpacityProfile;

/// Added to the bin density in the Constant-mode inverse.
pub const CONSTANT_EPS: f64 = 1e-10;
/// Added under the square root in the Linear-mode inverse.
pub const SQRT_EPS: f64 = 1e-24;
/// Bisection iteration cap.
pub const BISECT_MAX_ITERS: usize = 60;
/// Densities below this make the implicit gradient undefined.
pub const DEGENERATE_DENSITY: f64 = 1e-10;

/// A ray position together with its sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct Inverse {
    pub t: f64,
    /// dt/d(sigma_p) with the input target held fixed.
    pub grad: Vec<f64>,
    /// dt/d(target): d/dy for depth-space inverses, d/d(rhs) for the CDF inverse.
    pub dt_dtarget: f64,
}

fn check_depth(profile: &OpacityProfile, y: f64) -> Result<()> {
    let total = profile.total_depth();
    if !(y >= 0.0 && y <= total) {
        return Err(RvsError::OutOfRange {
            what: "y",
            value: y,
            lo: 0.0,
            hi: total,
        });
    }
    Ok(())
}

fn require_mode(profile: &OpacityProfile, mode: GridMode) -> Result<()> {
    if profile.mode() != mode {
        return Err(RvsError::WrongMode {
            expected: mode,
            found: profile.mode(),
        });
    }
    Ok(())
}

/// Closed-form inverse of the piecewise-linear depth `I_0`.
pub fn invert_constant(profile: &OpacityProfile, y: f64) -> Result<Inverse> {
    constant_inverse(profile, y, true)
}

fn constant_inverse(profile: &OpacityProfile, y: f64, want_grad: bool) -> Result<Inverse> {
    require_mode(profile, GridMode::Constant)?;
    check_depth(profile, y)?;
    let grid = profile.grid();
    let i = profile.bin_of_depth(y);
    let t_i = grid.knots()[i];
    let denom = grid.values()[i] + CONSTANT_EPS;
    let rest = y - profile.prefix_integrals()[i];
    let t = (t_i + rest / denom).clamp(t_i, grid.knots()[i + 1]);

    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; grid.param_count()];
        profile.add_prefix_grad(i, -1.0 / denom, &mut grad);
        grad[i] = -rest / (denom * denom);
    }
    Ok(Inverse {
        t,
        grad,
        dt_dtarget: 1.0 / denom,
    })
}

/// Closed-form inverse of the piecewise-quadratic depth `I_1`.
///
/// Inside bin `i` with `dt = t - t_i` the depth satisfies
/// `a dt^2 + b dt - c = 0` with `a = (s_{i+1} - s_i)/2`, `b = s_i w`,
/// `c = (y - P_i) w`, and the increasing root is taken in the cancellation-free
/// form `dt = 2c / (b + sqrt(b^2 + 4ac))`.
pub fn invert_linear(profile: &OpacityProfile, y: f64) -> Result<Inverse> {
    linear_inverse(profile, y, true)
}

fn linear_inverse(profile: &OpacityProfile, y: f64, want_grad: bool) -> Result<Inverse> {
    require_mode(profile, GridMode::Linear)?;
    check_depth(profile, y)?;
    let grid = profile.grid();
    let v = grid.values();
    let i = profile.bin_of_depth(y);
    let t_i = grid.knots()[i];
    let w = grid.width(i);

    let a = 0.5 * (v[i + 1] - v[i]);
    let b = v[i] * w;
    let c = (y - profile.prefix_integrals()[i]) * w;
    let s = ((b * b + 4.0 * a * c).max(0.0) + SQRT_EPS).sqrt();
    let den = b + s;
    let dt = 2.0 * c / den;
    let t = (t_i + dt).clamp(t_i, grid.knots()[i + 1]);

    // partials of dt w.r.t. (c, a, b)
    let den2 = den * den;
    let k_c = (2.0 * den - 4.0 * a * c / s) / den2;
    let k_a = -4.0 * c * c / (s * den2);
    let k_b = -2.0 * c * (1.0 + b / s) / den2;

    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; grid.param_count()];
        // c depends on sigma through -P_i * w
        profile.add_prefix_grad(i, -k_c * w, &mut grad);
        grad[i] += -0.5 * k_a + k_b * w;
        grad[i + 1] += 0.5 * k_a;
    }
    Ok(Inverse {
        t,
        grad,
        dt_dtarget: k_c * w,
    })
}

/// Closed-form inverse for the grid's own mode.
pub fn invert(profile: &OpacityProfile, y: f64) -> Result<Inverse> {
    match profile.mode() {
        GridMode::Constant => invert_constant(profile, y),
        GridMode::Linear => invert_linear(profile, y),
    }
}

/// Like [`invert`] but skips the gradient, which costs a vector as long as
/// the grid.
pub fn invert_position(profile: &OpacityProfile, y: f64) -> Result<f64> {
    Ok(match profile.mode() {
        GridMode::Constant => constant_inverse(profile, y, false)?.t,
        GridMode::Linear => linear_inverse(profile, y, false)?.t,
    })
}

/// NeRF-style inverse: `t` linearly interpolated against knot opacities
/// `-expm1(-P_j)` at opacity level `rhs = y_f u`.
pub fn invert_nerf_cdf(profile: &OpacityProfile, rhs: f64) -> Result<Inverse> {
    nerf_inverse(profile, rhs, true)
}

pub(crate) fn nerf_inverse(profile: &OpacityProfile, rhs: f64, want_grad: bool) -> Result<Inverse> {
    let yf = profile.total_opacity();
    if !(rhs >= 0.0 && rhs <= yf) {
        return Err(RvsError::OutOfRange {
            what: "rhs",
            value: rhs,
            lo: 0.0,
            hi: yf,
        });
    }
    let grid = profile.grid();
    let prefix = profile.prefix_integrals();
    let m = grid.bins();
    let cdf = |j: usize| -(-prefix[j]).exp_m1();
    let i = prefix
        .partition_point(|p| -(-p).exp_m1() < rhs)
        .saturating_sub(1)
        .min(m - 1);
    let (f_lo, f_hi) = (cdf(i), cdf(i + 1));
    let w = grid.width(i);
    let t_i = grid.knots()[i];
    let mut grad = if want_grad {
        vec![0.0; grid.param_count()]
    } else {
        Vec::new()
    };
    let span = f_hi - f_lo;
    if span <= 0.0 {
        return Ok(Inverse {
            t: t_i,
            grad,
            dt_dtarget: 0.0,
        });
    }
    let t = (t_i + (rhs - f_lo) / span * w).clamp(t_i, grid.knots()[i + 1]);
    let d_lo = w * (rhs - f_hi) / (span * span);
    let d_hi = -w * (rhs - f_lo) / (span * span);
    if want_grad {
        // dF_j/dP_j = exp(-P_j)
        profile.add_prefix_grad(i, d_lo * (-prefix[i]).exp(), &mut grad);
        profile.add_prefix_grad(i + 1, d_hi * (-prefix[i + 1]).exp(), &mut grad);
    }
    Ok(Inverse {
        t,
        grad,
        dt_dtarget: w / span,
    })
}

/// Default bisection tolerance for `interval_length`.
pub fn default_bisect_tol(interval_length: f64) -> f64 {
    1e-12 * interval_length
}

/// Inverts the depth by bisection and differentiates the result implicitly:
/// `dt/dsigma_p = -(dI(t)/dsigma_p) / sigma(t)` at fixed `y`.
pub fn invert_bisect(profile: &OpacityProfile, y: f64, tol: f64) -> Result<Inverse> {
    bisect_inverse(profile, y, tol, true)
}

pub(crate) fn bisect_inverse(
    profile: &OpacityProfile,
    y: f64,
    tol: f64,
    want_grad: bool,
) -> Result<Inverse> {
    check_depth(profile, y)?;
    if !(tol > 0.0) {
        return Err(RvsError::InvalidConfig(format!(
            "bisection tolerance must be positive, got {tol}"
        )));
    }
    let iv = profile.grid().interval();
    let (mut lo, mut hi) = (iv.t_near, iv.t_far);
    for _ in 0..BISECT_MAX_ITERS {
        if hi - lo < tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if profile.depth_unchecked(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let sigma = profile.density_at(t);
    if sigma < DEGENERATE_DENSITY {
        return Err(RvsError::DegenerateGradient { t, sigma });
    }
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; profile.param_count()];
        profile.add_depth_grad(t, -1.0 / sigma, &mut grad);
    }
    Ok(Inverse {
        t,
        grad,
        dt_dtarget: 1.0 / sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::RayDensityGrid;
    use crate::opacity::build_profile;

    fn profile(knots: &[f64], values: &[f64], mode: GridMode) -> OpacityProfile {
        build_profile(RayDensityGrid::new(knots.to_vec(), values.to_vec(), mode).unwrap())
    }

    #[test]
    fn constant_single_bin() {
        let p = profile(&[0.0, 1.0], &[1.0], GridMode::Constant);
        let y = -(1.0 - 0.5 * (1.0 - (-1.0f64).exp())).ln();
        let inv = invert_constant(&p, y).unwrap();
        assert!((inv.t - 0.379_885_493_041_722_5).abs() < 1e-9);
        assert!((inv.t - y).abs() < 1e-9);
    }

    #[test]
    fn zero_target_hits_near_plane() {
        let p = profile(&[0.5, 1.0, 2.0], &[1.0, 3.0], GridMode::Constant);
        let inv = invert_constant(&p, 0.0).unwrap();
        assert_eq!(inv.t, 0.5);
        assert!(inv.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn constant_two_bins() {
        let p = profile(&[0.0, 0.5, 1.0], &[1.0, 3.0], GridMode::Constant);
        let inv = invert_constant(&p, 0.8).unwrap();
        assert!((inv.t - 0.6).abs() < 1e-9);
        // t = 0.5 + (y - 0.5 s1) / s2
        let expect = [-0.5 / 3.0, -0.3 / 9.0];
        for (g, e) in inv.grad.iter().zip(expect) {
            assert!((g - e).abs() < 1e-9, "{g} vs {e}");
        }
    }

    #[test]
    fn linear_flat_density_reduces_to_linear_solve() {
        let p = profile(&[0.0, 0.5, 1.0], &[1.0, 1.0, 1.0], GridMode::Linear);
        assert!((invert_linear(&p, 0.3).unwrap().t - 0.3).abs() < 1e-12);
    }

    #[test]
    fn linear_triangle() {
        let p = profile(&[0.0, 1.0], &[0.0, 2.0], GridMode::Linear);
        assert!((invert_linear(&p, 0.25).unwrap().t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nerf_cdf_examples() {
        let p = profile(&[0.0, 1.0], &[1.0], GridMode::Constant);
        let yf = p.total_opacity();
        assert!((invert_nerf_cdf(&p, 0.5 * yf).unwrap().t - 0.5).abs() < 1e-15);
        assert_eq!(invert_nerf_cdf(&p, 0.0).unwrap().t, 0.0);
        let p2 = profile(&[0.0, 0.5, 1.0], &[1.0, 1.0], GridMode::Constant);
        let rhs = -(-0.5f64).exp_m1();
        assert_eq!(invert_nerf_cdf(&p2, rhs).unwrap().t, 0.5);
        assert!(invert_nerf_cdf(&p2, 0.99).is_err());
    }

    #[test]
    fn out_of_range_targets() {
        let p = profile(&[0.0, 1.0], &[1.0], GridMode::Constant);
        assert!(invert_constant(&p, -1e-3).is_err());
        assert!(invert_constant(&p, 1.0 + 1e-9).is_err());
        assert!(invert_constant(&p, f64::NAN).is_err());
        let lin = profile(&[0.0, 1.0], &[1.0, 1.0], GridMode::Linear);
        assert!(invert_constant(&lin, 0.1).is_err());
        assert!(invert_linear(&p, 0.1).is_err());
    }

    #[test]
    fn bisect_flags_degenerate_density() {
        let p = profile(&[0.0, 0.5, 1.0], &[0.0, 0.0, 2.0], GridMode::Linear);
        assert!(matches!(
            invert_bisect(&p, 0.0, 1e-12),
            Err(RvsError::DegenerateGradient { .. })
        ));
        let inv = invert_bisect(&p, 0.25, 1e-12).unwrap();
        assert!((inv.t - (0.5 + 0.125f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn zero_density_bins_are_skipped() {
        let p = profile(&[0.0, 0.25, 0.5, 1.0], &[0.0, 2.0, 0.0], GridMode::Constant);
        let inv = invert_constant(&p, 0.25).unwrap();
        assert!((inv.t - 0.375).abs() < 1e-9);
        let top = invert_constant(&p, 0.5).unwrap();
        assert!((top.t - 0.5).abs() < 1e-9);
    }
}
