//! Optical depth and opacity for piecewise density grids.
//!
//! The prefix array holds the optical depth from `t_near` to every knot:
//! rectangle areas for Constant grids, trapezoid areas for Linear grids.
//! Opacity is `F(t) = 1 - exp(-I(t))` and the total opacity `y_f = F(t_far)`.

use crate::error::{Result, RvsError};
use crate::fields::{GridMode, RayDensityGrid};

/// Optical depth beyond which `exp(-depth)` is treated as zero.
pub const DEPTH_CAP: f64 = 80.0;

/// Below this total depth the log-sum-exp target loses every significant
/// digit and the first-order value `u * depth` is used instead.
pub const FIRST_ORDER_SWITCH: f64 = 1e-8;

/// Opacity of a segment with the given optical depth.
pub fn opacity_from_depth(depth: f64) -> f64 {
    -(-depth.min(DEPTH_CAP)).exp_m1()
}

/// d(opacity)/d(depth), with the capped region passing through the value at the cap.
pub fn opacity_depth_slope(depth: f64) -> f64 {
    (-depth.min(DEPTH_CAP)).exp()
}

/// Opacity function `F_r` of a ray in evaluable and invertible form.
#[derive(Debug, Clone, PartialEq)]
pub struct OpacityProfile {
    grid: RayDensityGrid,
    prefix: Vec<f64>,
    total_depth: f64,
    total_opacity: f64,
}

/// Builds the prefix optical depths of `grid`.
pub fn build_profile(grid: RayDensityGrid) -> OpacityProfile {
    OpacityProfile::new(grid)
}

impl OpacityProfile {
    pub fn new(grid: RayDensityGrid) -> Self {
        let m = grid.bins();
        let mut prefix = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for i in 0..m {
            acc += bin_depth(&grid, i);
            prefix.push(acc);
        }
        let total_depth = acc;
        Self {
            grid,
            prefix,
            total_depth,
            total_opacity: opacity_from_depth(total_depth),
        }
    }

    pub fn grid(&self) -> &RayDensityGrid {
        &self.grid
    }

    pub fn into_grid(self) -> RayDensityGrid {
        self.grid
    }

    pub fn mode(&self) -> GridMode {
        self.grid.mode()
    }

    pub fn prefix_integrals(&self) -> &[f64] {
        &self.prefix
    }

    pub fn total_depth(&self) -> f64 {
        self.total_depth
    }

    /// `y_f`.
    pub fn total_opacity(&self) -> f64 {
        self.total_opacity
    }

    pub fn param_count(&self) -> usize {
        self.grid.param_count()
    }

    fn check_t(&self, t: f64) -> Result<()> {
        let iv = self.grid.interval();
        if !iv.contains(t) {
            return Err(RvsError::OutOfRange {
                what: "t",
                value: t,
                lo: iv.t_near,
                hi: iv.t_far,
            });
        }
        Ok(())
    }

    /// Optical depth `I(t)` from `t_near`. Nondecreasing in `t`.
    pub fn depth_at(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.depth_unchecked(t))
    }

    pub(crate) fn depth_unchecked(&self, t: f64) -> f64 {
        let grid = &self.grid;
        let m = grid.bins();
        let knots = grid.knots();
        if t >= knots[m] {
            return self.prefix[m];
        }
        let i = grid.bin_of(t);
        if t <= knots[i] {
            return self.prefix[i];
        }
        let (lo, hi) = (self.prefix[i], self.prefix[i + 1]);
        let v = grid.values();
        let inside = match grid.mode() {
            GridMode::Constant => v[i] * (t - knots[i]),
            GridMode::Linear => {
                let width = grid.width(i);
                if v[i + 1] >= v[i] {
                    let dt = t - knots[i];
                    dt * (v[i] + (v[i + 1] - v[i]) / (2.0 * width) * dt)
                } else {
                    // Integrate back from the right knot so every factor stays
                    // monotone in t under rounding.
                    let rest = knots[i + 1] - t;
                    let tail = rest * (v[i + 1] + (v[i] - v[i + 1]) / (2.0 * width) * rest);
                    return (hi - tail).clamp(lo, hi);
                }
            }
        };
        (lo + inside).clamp(lo, hi)
    }

    /// `F(t) = 1 - exp(-I(t))`.
    pub fn eval_opacity(&self, t: f64) -> Result<f64> {
        Ok(-(-self.depth_at(t)?).exp_m1())
    }

    /// Approximated density at `t`.
    pub fn density_at(&self, t: f64) -> f64 {
        self.grid.density_at(t)
    }

    /// Bin `i` with `prefix[i] <= y <= prefix[i+1]`; ties go to the left bin.
    pub fn bin_of_depth(&self, y: f64) -> usize {
        self.prefix
            .partition_point(|p| *p < y)
            .saturating_sub(1)
            .min(self.grid.bins() - 1)
    }

    /// Adds `scale * d prefix[j] / d sigma_p` into `out` for every density parameter.
    pub fn add_prefix_grad(&self, j: usize, scale: f64, out: &mut [f64]) {
        let grid = &self.grid;
        match grid.mode() {
            GridMode::Constant => {
                for (p, o) in out.iter_mut().enumerate().take(j) {
                    *o += scale * grid.width(p);
                }
            }
            GridMode::Linear => {
                for q in 0..j {
                    let half = 0.5 * scale * grid.width(q);
                    out[q] += half;
                    out[q + 1] += half;
                }
            }
        }
    }

    /// Adds `scale * d total_depth / d sigma_p` into `out`.
    pub fn add_total_depth_grad(&self, scale: f64, out: &mut [f64]) {
        self.add_prefix_grad(self.grid.bins(), scale, out);
    }

    /// Adds `scale * d I(t) / d sigma_p` at fixed `t` into `out`.
    pub fn add_depth_grad(&self, t: f64, scale: f64, out: &mut [f64]) {
        let grid = &self.grid;
        let m = grid.bins();
        if t >= grid.knots()[m] {
            self.add_prefix_grad(m, scale, out);
            return;
        }
        let i = grid.bin_of(t);
        self.add_prefix_grad(i, scale, out);
        let dt = (t - grid.knots()[i]).max(0.0);
        match grid.mode() {
            GridMode::Constant => out[i] += scale * dt,
            GridMode::Linear => {
                let q = dt * dt / (2.0 * grid.width(i));
                out[i] += scale * (dt - q);
                out[i + 1] += scale * q;
            }
        }
    }

    /// Adds `scale * d sigma(t) / d sigma_p` at fixed `t` into `out`.
    pub fn add_density_grad(&self, t: f64, scale: f64, out: &mut [f64]) {
        let grid = &self.grid;
        let i = grid.bin_of(t);
        match grid.mode() {
            GridMode::Constant => out[i] += scale,
            GridMode::Linear => {
                let frac = ((t - grid.knots()[i]) / grid.width(i)).clamp(0.0, 1.0);
                out[i] += scale * (1.0 - frac);
                out[i + 1] += scale * frac;
            }
        }
    }
}

fn bin_depth(grid: &RayDensityGrid, i: usize) -> f64 {
    let v = grid.values();
    match grid.mode() {
        GridMode::Constant => v[i] * grid.width(i),
        GridMode::Linear => 0.5 * (v[i] + v[i + 1]) * grid.width(i),
    }
}

/// Optical-depth target `y = -log(1 - y_f u)` for uniform `u`, evaluated as
/// `-logsumexp(log(1 - u), log(u) - depth)`; for `depth` below
/// [`FIRST_ORDER_SWITCH`] the first-order value `u * depth` is returned.
/// The result lies in `[0, depth]`.
pub fn stable_target(total_depth: f64, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(RvsError::OutOfRange {
            what: "u",
            value: u,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if !(total_depth >= 0.0 && total_depth.is_finite()) {
        return Err(RvsError::OutOfRange {
            what: "total_depth",
            value: total_depth,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if total_depth < FIRST_ORDER_SWITCH {
        return Ok(u * total_depth);
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(total_depth);
    }
    if total_depth < 1.0 {
        // 1 + u expm1(-d) >= e^-1 here, and the logsumexp form would
        // cancel u against u e^-d.
        return Ok((-(u * (-total_depth).exp_m1()).ln_1p()).clamp(0.0, total_depth));
    }
    let a = (-u).ln_1p();
    let b = u.ln() - total_depth;
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let lse = hi + (lo - hi).exp().ln_1p();
    Ok((-lse).clamp(0.0, total_depth))
}

/// d(stable_target)/d(total_depth) at `(total_depth, u)` given the target value `y`.
pub fn stable_target_slope(total_depth: f64, u: f64, y: f64) -> f64 {
    if total_depth < FIRST_ORDER_SWITCH {
        u
    } else {
        // u e^{-d} / (1 - y_f u) with 1 - y_f u = e^{-y}
        u * (y - total_depth).exp()
    }
}
