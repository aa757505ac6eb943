use serde::{Deserialize, Serialize};

use crate::error::{Result, RvsError};
use crate::estimators::quadrature;
use crate::fields::{GridMode, RayDensityGrid, RayInterval, RayRadiance};
use crate::Rgb;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bin index and fractional position of `t` in a sorted knot table; `t` is
/// clamped to the table's range.
pub fn locate(knots: &[f64], t: f64) -> (usize, f64) {
    let m = knots.len() - 1;
    let t = t.clamp(knots[0], knots[m]);
    let i = knots
        .partition_point(|k| *k <= t)
        .saturating_sub(1)
        .min(m - 1);
    let w = knots[i + 1] - knots[i];
    (i, ((t - knots[i]) / w).clamp(0.0, 1.0))
}

/// First/second-moment adaptive optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            step: 0,
        }
    }

    /// One update. With zero moments a zero gradient leaves `params`
    /// bitwise unchanged.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p -= step;
        }
    }
}

/// Density and radiance tables on shared knots.
///
/// Densities are `softplus` of the stored pre-activations: one per bin in
/// Constant mode, one per knot in Linear mode, interpolated after
/// activation. RGB is stored per knot, interpolated linearly and clamped
/// to `[0, 1]` on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableRayModel {
    pub knots: Vec<f64>,
    pub mode: GridMode,
    pub density_pre: Vec<f64>,
    pub rgb: Vec<Rgb>,
    pub optimizer: Adam,
    pub step_count: u64,
}

/// Gradient with respect to a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub density_pre: Vec<f64>,
    pub rgb: Vec<Rgb>,
}

impl ModelGrad {
    pub fn zeros(model: &TrainableRayModel) -> Self {
        Self {
            density_pre: vec![0.0; model.density_pre.len()],
            rgb: vec![[0.0; 3]; model.rgb.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrad, scale: f64) {
        for (a, b) in self.density_pre.iter_mut().zip(&other.density_pre) {
            *a += scale * b;
        }
        for (a, b) in self.rgb.iter_mut().zip(&other.rgb) {
            for c in 0..3 {
                a[c] += scale * b[c];
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.density_pre.iter().all(|g| *g == 0.0) && self.rgb.iter().flatten().all(|g| *g == 0.0)
    }

    fn flat(&self) -> Vec<f64> {
        self.density_pre
            .iter()
            .copied()
            .chain(self.rgb.iter().flatten().copied())
            .collect()
    }
}

impl TrainableRayModel {
    /// `knot_count` uniform knots over `interval` with a homogeneous density
    /// and color.
    pub fn uniform(
        interval: RayInterval,
        knot_count: usize,
        mode: GridMode,
        density: f64,
        rgb: Rgb,
    ) -> Result<Self> {
        if knot_count < 2 {
            return Err(RvsError::InvalidConfig(format!(
                "a ray model needs at least 2 knots, got {knot_count}"
            )));
        }
        if !(density > 0.0 && density.is_finite()) {
            return Err(RvsError::InvalidConfig(format!(
                "initial density must be positive, got {density}"
            )));
        }
        let knots = interval.uniform_knots(knot_count - 1);
        let n = match mode {
            GridMode::Constant => knot_count - 1,
            GridMode::Linear => knot_count,
        };
        Self::from_tables(
            knots,
            mode,
            vec![softplus_inv(density); n],
            vec![rgb; knot_count],
        )
    }

    pub fn from_tables(
        knots: Vec<f64>,
        mode: GridMode,
        density_pre: Vec<f64>,
        rgb: Vec<Rgb>,
    ) -> Result<Self> {
        let expected = match mode {
            GridMode::Constant => knots.len().saturating_sub(1),
            GridMode::Linear => knots.len(),
        };
        if density_pre.len() != expected || rgb.len() != knots.len() {
            return Err(RvsError::InvalidConfig(format!(
                "table sizes do not match {} knots in {mode} mode",
                knots.len()
            )));
        }
        // validates the knots
        RayDensityGrid::new(
            knots.clone(),
            density_pre.iter().map(|p| softplus(*p)).collect(),
            mode,
        )?;
        let params = density_pre.len() + 3 * rgb.len();
        Ok(Self {
            knots,
            mode,
            density_pre,
            rgb,
            optimizer: Adam::new(params),
            step_count: 0,
        })
    }

    pub fn interval(&self) -> RayInterval {
        RayInterval {
            t_near: self.knots[0],
            t_far: self.knots[self.knots.len() - 1],
        }
    }

    pub fn densities(&self) -> Vec<f64> {
        self.density_pre.iter().map(|p| softplus(*p)).collect()
    }

    pub fn density_grid(&self) -> RayDensityGrid {
        RayDensityGrid::new(self.knots.clone(), self.densities(), self.mode)
            .expect("model tables stay valid")
    }

    /// `(index, weight)` pairs with `sigma(t) = sum w softplus(pre[index])`.
    pub fn density_weights(&self, t: f64) -> [(usize, f64); 2] {
        let (i, lam) = locate(&self.knots, t);
        match self.mode {
            GridMode::Constant => [(i, 1.0), (i, 0.0)],
            GridMode::Linear => [(i, 1.0 - lam), (i + 1, lam)],
        }
    }

    pub fn density_at(&self, t: f64) -> f64 {
        self.density_weights(t)
            .iter()
            .map(|(j, w)| w * softplus(self.density_pre[*j]))
            .sum()
    }

    /// `d sigma / dt`; zero inside Constant bins.
    pub fn density_slope(&self, t: f64) -> f64 {
        match self.mode {
            GridMode::Constant => 0.0,
            GridMode::Linear => {
                let (i, _) = locate(&self.knots, t);
                (softplus(self.density_pre[i + 1]) - softplus(self.density_pre[i]))
                    / (self.knots[i + 1] - self.knots[i])
            }
        }
    }

    fn rgb_raw(&self, t: f64) -> (usize, f64, Rgb) {
        let (i, lam) = locate(&self.knots, t);
        let a = self.rgb[i];
        let b = self.rgb[i + 1];
        (
            i,
            lam,
            std::array::from_fn(|c| (1.0 - lam) * a[c] + lam * b[c]),
        )
    }

    pub fn radiance_at(&self, t: f64) -> Rgb {
        self.rgb_raw(t).2.map(|c| c.clamp(0.0, 1.0))
    }

    /// `dc/dt`, zero on clamped channels.
    pub fn radiance_slope(&self, t: f64) -> Rgb {
        let (i, _, raw) = self.rgb_raw(t);
        let w = self.knots[i + 1] - self.knots[i];
        std::array::from_fn(|c| {
            if (0.0..=1.0).contains(&raw[c]) {
                (self.rgb[i + 1][c] - self.rgb[i][c]) / w
            } else {
                0.0
            }
        })
    }

    /// Adds `scale[c] * dc(t)/d rgb` to `out`.
    pub fn add_radiance_grad(&self, t: f64, scale: Rgb, out: &mut [Rgb]) {
        let (i, lam, raw) = self.rgb_raw(t);
        for c in 0..3 {
            if (0.0..=1.0).contains(&raw[c]) {
                out[i][c] += scale[c] * (1.0 - lam);
                out[i + 1][c] += scale[c] * lam;
            }
        }
    }

    /// Adds `scale * d sigma(t) / d pre` to `out`.
    pub fn add_density_grad(&self, t: f64, scale: f64, out: &mut [f64]) {
        for (j, w) in self.density_weights(t) {
            if w != 0.0 {
                out[j] += scale * w * sigmoid(self.density_pre[j]);
            }
        }
    }

    /// Radiance as an evaluator with its analytic derivative.
    pub fn to_radiance(&self) -> RayRadiance {
        let a = self.clone();
        let b = self.clone();
        RayRadiance::with_derivative(move |t| a.radiance_at(t), move |t| b.radiance_slope(t))
    }

    /// Expected color by midpoint quadrature on `bins` uniform bins.
    pub fn expected_color(&self, bins: usize) -> Rgb {
        let iv = self.interval();
        let knots = iv.uniform_knots(bins);
        let values = knots
            .windows(2)
            .map(|w| self.density_at(0.5 * (w[0] + w[1])))
            .collect();
        let grid = RayDensityGrid::new(knots, values, GridMode::Constant)
            .expect("uniform knots are valid");
        quadrature(&grid, &self.to_radiance())
            .expect("constant grid")
            .value
    }

    /// One optimizer step.
    pub fn apply(&mut self, grad: &ModelGrad, lr: f64) {
        let mut params: Vec<f64> = self
            .density_pre
            .iter()
            .copied()
            .chain(self.rgb.iter().flatten().copied())
            .collect();
        self.optimizer.update(&mut params, &grad.flat(), lr);
        let n = self.density_pre.len();
        self.density_pre.copy_from_slice(&params[..n]);
        for (j, rgb) in self.rgb.iter_mut().enumerate() {
            rgb.copy_from_slice(&params[n + 3 * j..n + 3 * j + 3]);
        }
        self.step_count += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_round_trip() {
        for y in [1e-6, 0.1, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
        assert!(softplus(-50.0) > 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut m = TrainableRayModel::uniform(
            RayInterval::unit(),
            5,
            GridMode::Linear,
            1.3,
            [0.2, 0.4, 0.6],
        )
        .unwrap();
        let before = m.clone();
        let g = ModelGrad::zeros(&m);
        for _ in 0..10 {
            m.apply(&g, 0.1);
        }
        assert_eq!(m.density_pre, before.density_pre);
        assert_eq!(m.rgb, before.rgb);
    }

    #[test]
    fn radiance_is_clamped_on_read() {
        let m = TrainableRayModel::from_tables(
            vec![0.0, 1.0],
            GridMode::Linear,
            vec![0.0, 0.0],
            vec![[-0.5, 0.5, 1.5], [-0.5, 0.5, 1.5]],
        )
        .unwrap();
        assert_eq!(m.radiance_at(0.3), [0.0, 0.5, 1.0]);
        let mut out = vec![[0.0; 3]; 2];
        m.add_radiance_grad(0.3, [1.0; 3], &mut out);
        assert_eq!(out[0], [0.0, 0.7, 0.0]);
    }

    #[test]
    fn homogeneous_model_renders_analytically() {
        let m = TrainableRayModel::uniform(RayInterval::unit(), 9, GridMode::Linear, 2.0, [0.5; 3])
            .unwrap();
        let c = m.expected_color(64);
        assert!((c[0] - 0.5 * (1.0 - (-2.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn locate_clamps_and_finds_bins() {
        let k = [0.0, 0.5, 1.0];
        assert_eq!(locate(&k, -1.0), (0, 0.0));
        assert_eq!(locate(&k, 0.5), (1, 0.0));
        assert_eq!(locate(&k, 1.0), (1, 1.0));
        assert_eq!(locate(&k, 0.25), (0, 0.5));
    }
}
