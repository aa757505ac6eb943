//! Coarse-to-fine rendering on a family of rays through one 1D scene.
//!
//! A proposal table defines a piecewise-linear density on every ray; `N_f`
//! positions are drawn from it by opacity inversion, sorted, and used as bin
//! edges for a quadrature render of the fine table (density and radiance read
//! at bin midpoints). The loss only sees the fine render, so the proposal is
//! trained solely through the sample Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::ground_truth;
use crate::error::{Result, RvsError};
use crate::estimators::composite;
use crate::fields::{GridMode, RadianceSpec, RayDensityGrid, RayInterval, ScalarField1D};
use crate::opacity::OpacityProfile;
use crate::rng::derive_seed;
use crate::sampler::{
    draw_uniforms, sample_from_uniforms, SamplingMethod, StrataDenominator, UniformScheme,
};
use crate::Rgb;

use super::fit::{DIVERGENCE_FACTOR, DIVERGENCE_FLOOR};
use super::model::{ModelGrad, TrainableRayModel};

/// Bins of the quadrature that produces target colors.
pub const TARGET_BINS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinePointPolicy {
    /// Bin edges are the ray ends and the drawn samples.
    SamplesOnly,
    /// Adds the ray's proposal knots to the edges.
    UnionWithGrid,
}

/// Ground truth for the toy: a density and radiance on `[0, 1]`, seen by
/// ray segments of varying start and length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScene {
    pub density: ScalarField1D,
    pub radiance: RadianceSpec,
    /// Rays start at `t_near in [0, near_spread)`.
    pub near_spread: f64,
    pub min_length: f64,
    pub max_length: f64,
}

pub const WALL_CENTER: f64 = 0.65;
pub const WALL_WIDTH: f64 = 0.03;
pub const FOG_LEVEL: f64 = 0.8;
pub const NEAR_SPREAD: f64 = 0.95;
pub const MIN_LENGTH: f64 = 0.05;
pub const MAX_LENGTH: f64 = 0.4;

impl ToyScene {
    /// Thin fog with a narrow opaque wall at [`WALL_CENTER`].
    pub fn wall() -> Self {
        let depth = 3.0;
        Self {
            density: ScalarField1D::Composite {
                parts: vec![
                    ScalarField1D::ConstantFog { level: FOG_LEVEL },
                    ScalarField1D::GaussianBump {
                        center: WALL_CENTER,
                        width: WALL_WIDTH,
                        amplitude: depth / (WALL_WIDTH * (2.0 * std::f64::consts::PI).sqrt()),
                    },
                ],
            },
            radiance: RadianceSpec::Constant {
                rgb: [0.9, 0.6, 0.3],
            },
            near_spread: NEAR_SPREAD,
            min_length: MIN_LENGTH,
            max_length: MAX_LENGTH,
        }
    }

    /// `count` rays with starts spread over `[0, near_spread)` and lengths
    /// over `[min_length, max_length]`, both from low-discrepancy sequences,
    /// clipped to end at 1.
    pub fn rays(&self, count: usize) -> Result<Vec<ToyRay>> {
        (0..count)
            .map(|r| {
                let a = (r as f64 * GOLDEN).fract();
                let b = (r as f64 * SILVER).fract();
                let t_near = self.near_spread * a;
                let length = self.min_length + (self.max_length - self.min_length) * b;
                let interval = RayInterval::new(t_near, (t_near + length).min(1.0))?;
                let target = ground_truth(&self.density, &self.radiance, interval, TARGET_BINS)?;
                Ok(ToyRay { interval, target })
            })
            .collect()
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const SILVER: f64 = 0.414_213_562_373_095_1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyRay {
    pub interval: RayInterval,
    pub target: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalConfig {
    /// Knots of the proposal table and of each ray's proposal grid.
    pub n_proposal: usize,
    /// Samples drawn per ray.
    pub n_fine: usize,
    /// Knots of the fine table.
    pub fine_knots: usize,
    pub n_rays: usize,
    pub sampling: SamplingMethod,
    pub policy: FinePointPolicy,
    /// Zero the sample Jacobian, cutting the proposal off from the loss.
    pub detach: bool,
    pub lr_fine: f64,
    pub lr_proposal: f64,
    /// Learning rates decay exponentially to this fraction over a
    /// [`HierarchicalToy::train`] run.
    pub lr_final_ratio: f64,
    pub seed: u64,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        Self {
            n_proposal: 16,
            n_fine: 8,
            fine_knots: 32,
            n_rays: 64,
            sampling: SamplingMethod::Rvs,
            policy: FinePointPolicy::SamplesOnly,
            detach: false,
            lr_fine: 5e-2,
            lr_proposal: 5e-3,
            lr_final_ratio: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub color: Rgb,
    /// Drawn sample positions, sorted.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalToy {
    pub config: HierarchicalConfig,
    pub proposal: TrainableRayModel,
    pub fine: TrainableRayModel,
    pub rays: Vec<ToyRay>,
    pub step: u64,
}

impl HierarchicalToy {
    pub fn new(scene: &ToyScene, config: HierarchicalConfig) -> Result<Self> {
        if config.n_proposal < 2 || config.n_fine < 1 || config.fine_knots < 2 || config.n_rays < 1
        {
            return Err(RvsError::InvalidConfig(format!(
                "need n_proposal >= 2, n_fine >= 1, fine_knots >= 2, n_rays >= 1: {config:?}"
            )));
        }
        if config.sampling == SamplingMethod::ImplicitBisect {
            return Err(RvsError::InvalidConfig(
                "hierarchical sampling supports rvs and nerf".into(),
            ));
        }
        let domain = RayInterval::unit();
        Ok(Self {
            proposal: TrainableRayModel::uniform(
                domain,
                config.n_proposal,
                GridMode::Linear,
                1.0,
                [0.5; 3],
            )?,
            fine: TrainableRayModel::uniform(
                domain,
                config.fine_knots,
                GridMode::Linear,
                0.5,
                [0.5; 3],
            )?,
            rays: scene.rays(config.n_rays)?,
            config,
            step: 0,
        })
    }

    /// Proposal density on `interval`, resampled at `n_proposal` uniform knots.
    pub fn ray_grid(&self, interval: RayInterval) -> RayDensityGrid {
        let knots = interval.uniform_knots(self.config.n_proposal - 1);
        let values = knots.iter().map(|t| self.proposal.density_at(*t)).collect();
        RayDensityGrid::new(knots, values, GridMode::Linear).expect("proposal grid is valid")
    }

    fn uniforms(&self, seed: u64) -> Result<Vec<f64>> {
        draw_uniforms(
            &UniformScheme::stratified(self.config.n_fine, seed).with_strata(StrataDenominator::K),
        )
    }

    /// Renders one ray and, for an upstream gradient `dL/dcolor`, returns
    /// the fine and proposal parameter gradients.
    pub fn render_ray(
        &self,
        interval: RayInterval,
        uniforms: Vec<f64>,
        upstream: Option<Rgb>,
    ) -> Result<(RayRender, Option<(ModelGrad, ModelGrad)>)> {
        let grid = self.ray_grid(interval);
        let profile = OpacityProfile::new(grid.clone());
        let with_grad = upstream.is_some();
        let mut batch = sample_from_uniforms(&profile, uniforms, self.config.sampling, with_grad)?;
        if self.config.detach {
            batch.detach();
        }

        // (position, index of the sample it came from)
        let mut edges: Vec<(f64, Option<usize>)> =
            vec![(interval.t_near, None), (interval.t_far, None)];
        edges.extend(
            batch
                .positions
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, Some(i))),
        );
        if self.config.policy == FinePointPolicy::UnionWithGrid {
            let knots = grid.knots();
            edges.extend(knots[1..knots.len() - 1].iter().map(|&t| (t, None)));
        }
        edges.sort_by(|a, b| a.0.total_cmp(&b.0));

        let bins = edges.len() - 1;
        let mut taus = Vec::with_capacity(bins);
        let mut colors = Vec::with_capacity(bins);
        for w in edges.windows(2) {
            let mid = 0.5 * (w[0].0 + w[1].0);
            taus.push(self.fine.density_at(mid) * (w[1].0 - w[0].0));
            colors.push(self.fine.radiance_at(mid));
        }
        let comp = composite(&taus, &colors);
        let mut samples = batch.positions.clone();
        samples.sort_by(f64::total_cmp);
        let render = RayRender {
            color: comp.value,
            samples,
        };
        let Some(g) = upstream else {
            return Ok((render, None));
        };

        let mut fine_grad = ModelGrad::zeros(&self.fine);
        let mut d_edge = vec![0.0; edges.len()];
        for i in 0..bins {
            let (a, b) = (edges[i].0, edges[i + 1].0);
            let mid = 0.5 * (a + b);
            let delta = b - a;
            let d_tau: f64 = (0..3).map(|c| g[c] * comp.d_tau[i][c]).sum();
            let d_color: Rgb = std::array::from_fn(|c| g[c] * comp.weights[i]);
            self.fine
                .add_density_grad(mid, d_tau * delta, &mut fine_grad.density_pre);
            self.fine
                .add_radiance_grad(mid, d_color, &mut fine_grad.rgb);

            let sigma = self.fine.density_at(mid);
            let slope = self.fine.density_slope(mid);
            let dc = self.fine.radiance_slope(mid);
            let via_color: f64 = (0..3).map(|c| d_color[c] * dc[c]).sum::<f64>() * 0.5;
            d_edge[i] += d_tau * (-sigma + 0.5 * delta * slope) + via_color;
            d_edge[i + 1] += d_tau * (sigma + 0.5 * delta * slope) + via_color;
        }

        let mut proposal_grad = ModelGrad::zeros(&self.proposal);
        if batch.has_jacobian() {
            let mut d_values = vec![0.0; batch.params];
            for (e, (_, src)) in edges.iter().enumerate() {
                if let Some(s) = src {
                    for (d, j) in d_values.iter_mut().zip(batch.jacobian_row(*s)) {
                        *d += d_edge[e] * j;
                    }
                }
            }
            for (knot, d) in grid.knots().iter().zip(&d_values) {
                if *d != 0.0 {
                    self.proposal
                        .add_density_grad(*knot, *d, &mut proposal_grad.density_pre);
                }
            }
        }
        Ok((render, Some((fine_grad, proposal_grad))))
    }

    /// Batch MSE over rays and channels, with gradients, at `seed`.
    pub fn loss_and_grads(&self, seed: u64) -> Result<(f64, ModelGrad, ModelGrad)> {
        let n = self.rays.len() as f64;
        let per_ray = self
            .rays
            .par_iter()
            .enumerate()
            .map(|(r, ray)| {
                let u = self.uniforms(derive_seed(seed, &[r as u64]))?;
                // forward once to get the residual, then backward with it
                let (render, _) = self.render_ray(ray.interval, u.clone(), None)?;
                let res: Rgb = std::array::from_fn(|c| render.color[c] - ray.target[c]);
                let upstream = res.map(|x| 2.0 * x / (3.0 * n));
                let (_, grads) = self.render_ray(ray.interval, u, Some(upstream))?;
                let loss = res.iter().map(|x| x * x).sum::<f64>() / (3.0 * n);
                Ok((loss, grads.expect("requested")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut fine = ModelGrad::zeros(&self.fine);
        let mut proposal = ModelGrad::zeros(&self.proposal);
        let mut loss = 0.0;
        for (l, (gf, gp)) in &per_ray {
            loss += l;
            fine.add_scaled(gf, 1.0);
            proposal.add_scaled(gp, 1.0);
        }
        Ok((loss, fine, proposal))
    }

    /// One optimizer step on the full ray batch; returns the batch loss
    /// before the update.
    pub fn hierarchical_step(&mut self) -> Result<f64> {
        self.step_scaled(1.0)
    }

    fn step_scaled(&mut self, lr_scale: f64) -> Result<f64> {
        let seed = derive_seed(self.config.seed, &[self.step]);
        let (loss, gf, gp) = self.loss_and_grads(seed)?;
        self.fine.apply(&gf, lr_scale * self.config.lr_fine);
        self.proposal.apply(&gp, lr_scale * self.config.lr_proposal);
        self.step += 1;
        Ok(loss)
    }

    /// Runs `steps` updates; aborts on divergence like [`super::fit_ray`].
    pub fn train(&mut self, steps: usize) -> Result<Vec<f64>> {
        let mut trace = Vec::with_capacity(steps);
        let mut initial = None;
        for step in 0..steps {
            let scale = self.config.lr_final_ratio.powf(step as f64 / steps as f64);
            let loss = self.step_scaled(scale)?;
            let reference = *initial.get_or_insert(loss.abs().max(DIVERGENCE_FLOOR));
            if !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference {
                return Err(RvsError::Divergence {
                    step,
                    loss,
                    initial: reference,
                });
            }
            trace.push(loss);
        }
        Ok(trace)
    }

    /// MSE over rays and channels, averaged over `draws` sample sets seeded
    /// from `eval_seed`.
    pub fn evaluate(&self, eval_seed: u64, draws: usize) -> Result<f64> {
        let total = (0..self.rays.len() * draws)
            .into_par_iter()
            .map(|idx| {
                let (r, d) = (idx / draws, idx % draws);
                let ray = &self.rays[r];
                let u = self.uniforms(derive_seed(eval_seed, &[r as u64, d as u64]))?;
                let (render, _) = self.render_ray(ray.interval, u, None)?;
                Ok((0..3)
                    .map(|c| (render.color[c] - ray.target[c]).powi(2))
                    .sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum::<f64>();
        Ok(total / (3 * self.rays.len() * draws) as f64)
    }

    /// Fraction of drawn samples within `radius` of `center`.
    pub fn sample_localization(&self, center: f64, radius: f64, seed: u64) -> Result<f64> {
        let mut hit = 0usize;
        let mut total = 0usize;
        for (r, ray) in self.rays.iter().enumerate() {
            let u = self.uniforms(derive_seed(seed, &[r as u64]))?;
            let (render, _) = self.render_ray(ray.interval, u, None)?;
            hit += render
                .samples
                .iter()
                .filter(|t| (*t - center).abs() <= radius)
                .count();
            total += render.samples.len();
        }
        Ok(hit as f64 / total as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(config: HierarchicalConfig) -> HierarchicalToy {
        let mut toy = HierarchicalToy::new(
            &ToyScene::wall(),
            HierarchicalConfig {
                n_rays: 4,
                ..config
            },
        )
        .unwrap();
        // break the symmetry of the initial tables
        for (j, p) in toy.proposal.density_pre.iter_mut().enumerate() {
            *p += 0.3 * (j as f64 * 1.7).sin();
        }
        for (j, p) in toy.fine.density_pre.iter_mut().enumerate() {
            *p += 0.5 * (j as f64 * 0.9).cos();
        }
        for (j, c) in toy.fine.rgb.iter_mut().enumerate() {
            c[1] += 0.2 * (j as f64 * 0.3).sin();
        }
        toy
    }

    fn directional_check(config: HierarchicalConfig) {
        let toy = small(config);
        let ray = toy.rays[1];
        let u = toy.uniforms(7).unwrap();
        for c in 0..3 {
            let mut up = [0.0; 3];
            up[c] = 1.0;
            let (_, grads) = toy.render_ray(ray.interval, u.clone(), Some(up)).unwrap();
            let (_, gp) = grads.unwrap();
            let dir: Vec<f64> = (0..toy.proposal.density_pre.len())
                .map(|j| ((j * 7 + 3) as f64).sin())
                .collect();
            let predicted: f64 = dir.iter().zip(&gp.density_pre).map(|(d, g)| d * g).sum();
            let h = 1e-4;
            let shifted = |s: f64| {
                let mut t = toy.clone();
                for (p, d) in t.proposal.density_pre.iter_mut().zip(&dir) {
                    *p += s * d;
                }
                t.render_ray(ray.interval, u.clone(), None).unwrap().0.color[c]
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let err = (fd - predicted).abs() / fd.abs().max(predicted.abs()).max(1e-8);
            assert!(err < 1e-3, "channel {c}: fd {fd} predicted {predicted}");
        }
    }

    #[test]
    fn proposal_gradient_matches_directional_difference() {
        directional_check(HierarchicalConfig::default());
        directional_check(HierarchicalConfig {
            sampling: SamplingMethod::NerfCdf,
            ..HierarchicalConfig::default()
        });
        directional_check(HierarchicalConfig {
            policy: FinePointPolicy::UnionWithGrid,
            ..HierarchicalConfig::default()
        });
    }

    #[test]
    fn fine_gradient_matches_differences() {
        let toy = small(HierarchicalConfig::default());
        let ray = toy.rays[2];
        let u = toy.uniforms(3).unwrap();
        let (_, grads) = toy
            .render_ray(ray.interval, u.clone(), Some([1.0, 0.0, 0.0]))
            .unwrap();
        let (gf, _) = grads.unwrap();
        let h = 1e-6;
        for j in (0..toy.fine.density_pre.len()).step_by(9) {
            let mut a = toy.clone();
            a.fine.density_pre[j] += h;
            let mut b = toy.clone();
            b.fine.density_pre[j] -= h;
            let fd = (a.render_ray(ray.interval, u.clone(), None).unwrap().0.color[0]
                - b.render_ray(ray.interval, u.clone(), None).unwrap().0.color[0])
                / (2.0 * h);
            assert!(
                (fd - gf.density_pre[j]).abs() < 1e-7,
                "{j}: {fd} {}",
                gf.density_pre[j]
            );
        }
    }

    #[test]
    fn detached_samples_freeze_the_proposal() {
        let mut toy = small(HierarchicalConfig {
            detach: true,
            ..HierarchicalConfig::default()
        });
        let before = toy.proposal.clone();
        let (_, _, gp) = toy.loss_and_grads(1).unwrap();
        assert!(gp.is_zero());
        toy.train(5).unwrap();
        assert_eq!(toy.proposal.density_pre, before.density_pre);
        assert_ne!(
            toy.fine.density_pre,
            small(HierarchicalConfig::default()).fine.density_pre
        );
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut toy = small(HierarchicalConfig::default());
            toy.train(5).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}
