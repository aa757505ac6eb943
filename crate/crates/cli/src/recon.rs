use std::path::PathBuf;

use clap::{Subcommand, ValueEnum};
use serde::Serialize;

use rvs_core::bench::ground_truth;
use rvs_core::recon::{
    fit_ray, FinePointPolicy, FitConfig, HierarchicalConfig, HierarchicalToy, ToyScene,
    TrainableRayModel, WALL_CENTER, WALL_WIDTH,
};
use rvs_core::{RayInterval, Rgb, RvsError};

use crate::output::{csv_with_schema, print_config, write_json};
use crate::scene::{
    check_positive, resolve_field, Loss, Mode, ResolvedField, Sampling, Scheme, Strata,
};
use crate::{CmdResult, Failure};

pub const SCHEMA: &str = "rvs-recon-trace/1";

/// Bins of the quadrature that scores a fitted model.
const SCORE_BINS: usize = 4096;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(subcommand)]
    demo: Demo,
}

#[derive(Subcommand, Debug)]
enum Demo {
    /// Fit one ray model to a target color through the reparameterized estimator.
    Fit(FitArgs),
    /// Train a proposal and a fine model on the wall scene, the proposal
    /// only through gradients of its samples.
    Hierarchical(HierArgs),
}

#[derive(clap::Args, Debug)]
struct FitArgs {
    /// Target RGB; defaults to the ground truth of `--field`.
    #[arg(long, value_parser = parse_rgb)]
    target: Option<Rgb>,
    /// `foggy`, `wall`, or a JSON field definition file.
    #[arg(long, default_value = "foggy")]
    field: String,
    #[arg(long)]
    radiance: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = Loss::Mse)]
    loss: Loss,
    #[arg(long, value_enum, default_value_t = Scheme::Stratified)]
    scheme: Scheme,
    #[arg(long, value_enum, default_value_t = Strata::K)]
    strata: Strata,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Linear)]
    mode: Mode,
    /// Knots of the model table.
    #[arg(long, default_value_t = 9)]
    knots: usize,
    #[arg(long, default_value_t = 0.5)]
    init_density: f64,
    #[arg(long, value_parser = parse_rgb, default_value = "0.5,0.5,0.5")]
    init_rgb: Rgb,
    /// Loss trace CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Final model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Policy {
    #[value(name = "samples_only")]
    SamplesOnly,
    #[value(name = "union_with_grid")]
    UnionWithGrid,
}

#[derive(clap::Args, Debug)]
struct HierArgs {
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = Sampling::Rvs)]
    sampling: Sampling,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    n_proposal: usize,
    #[arg(long, default_value_t = 8)]
    n_fine: usize,
    #[arg(long, default_value_t = 32)]
    fine_knots: usize,
    #[arg(long, default_value_t = 64)]
    rays: usize,
    #[arg(long, value_enum, default_value_t = Policy::SamplesOnly)]
    policy: Policy,
    /// Zero the sample Jacobian so the proposal receives no gradient.
    #[arg(long)]
    detach: bool,
    #[arg(long, default_value_t = 5e-2)]
    lr_fine: f64,
    #[arg(long, default_value_t = 5e-3)]
    lr_proposal: f64,
    #[arg(long, default_value_t = 1.0)]
    lr_final_ratio: f64,
    /// Sample sets per ray in the final evaluation.
    #[arg(long, default_value_t = 4)]
    eval_draws: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

pub fn run(args: Args) -> CmdResult {
    match args.demo {
        Demo::Fit(a) => fit(a),
        Demo::Hierarchical(a) => hierarchical(a),
    }
}

fn parse_rgb(s: &str) -> Result<Rgb, String> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<Vec<f64>, String>>()?;
    <Rgb>::try_from(v.as_slice()).map_err(|_| format!("expected r,g,b, got {} values", v.len()))
}

#[derive(Serialize)]
struct FitRunConfig<'a> {
    command: &'static str,
    target: Rgb,
    field: Option<&'a ResolvedField>,
    k: usize,
    steps: usize,
    lr: f64,
    loss: Loss,
    scheme: Scheme,
    strata: Strata,
    seed: u64,
    mode: Mode,
    knots: usize,
    init_density: f64,
    init_rgb: Rgb,
    out: Option<&'a PathBuf>,
    model: Option<&'a PathBuf>,
}

#[derive(Serialize)]
struct FitResult {
    final_loss: f64,
    color: Rgb,
    target: Rgb,
    max_channel_error: f64,
}

fn write_trace(path: Option<&std::path::Path>, trace: &[f64]) -> CmdResult {
    let mut w = csv_with_schema(path, SCHEMA)?;
    w.write_record(["step", "loss"])?;
    for (step, loss) in trace.iter().enumerate() {
        w.serialize((step, loss))?;
    }
    w.flush()?;
    Ok(())
}

fn print_result<T: Serialize>(result: &T) -> CmdResult {
    println!("# result {}", serde_json::to_string(result)?);
    Ok(())
}

fn fit(a: FitArgs) -> CmdResult {
    check_positive("steps", a.steps)?;
    check_positive("k", a.k)?;
    let field = match &a.target {
        Some(_) => None,
        None => Some(resolve_field(&a.field, a.radiance.as_ref())?),
    };
    let target = match (&a.target, &field) {
        (Some(t), _) => *t,
        (None, Some(f)) => ground_truth(&f.field, &f.radiance, RayInterval::unit(), 10_000)?,
        (None, None) => unreachable!("field resolved when no target is given"),
    };
    let init_rgb = a.init_rgb;
    print_config(&FitRunConfig {
        command: "recon fit",
        target,
        field: field.as_ref(),
        k: a.k,
        steps: a.steps,
        lr: a.lr,
        loss: a.loss,
        scheme: a.scheme,
        strata: a.strata,
        seed: a.seed,
        mode: a.mode,
        knots: a.knots,
        init_density: a.init_density,
        init_rgb,
        out: a.out.as_ref(),
        model: a.model.as_ref(),
    })?;
    let mut model = TrainableRayModel::uniform(
        RayInterval::unit(),
        a.knots,
        a.mode.into(),
        a.init_density,
        init_rgb,
    )?;
    let config = FitConfig {
        k: a.k,
        steps: a.steps,
        lr: a.lr,
        loss: a.loss.into(),
        scheme: a.scheme.into(),
        strata: a.strata.into(),
        seed: a.seed,
    };
    let trace = fit_ray(target, &mut model, &config)?;
    write_trace(a.out.as_deref(), &trace)?;
    if let Some(p) = &a.model {
        write_json(Some(p), &model)?;
    }
    let color = model.expected_color(SCORE_BINS);
    print_result(&FitResult {
        final_loss: *trace.last().expect("steps >= 1"),
        color,
        target,
        max_channel_error: (0..3)
            .map(|c| (color[c] - target[c]).abs())
            .fold(0.0, f64::max),
    })
}

#[derive(Serialize)]
struct HierRunConfig<'a> {
    command: &'static str,
    scene: &'static str,
    steps: usize,
    #[serde(flatten)]
    toy: HierarchicalConfig,
    eval_draws: usize,
    out: Option<&'a PathBuf>,
    model: Option<&'a PathBuf>,
}

#[derive(Serialize)]
struct HierResult {
    final_loss: f64,
    eval_mse: f64,
    /// Share of samples within three wall widths of the wall center.
    wall_localization: f64,
}

fn hierarchical(a: HierArgs) -> CmdResult {
    check_positive("steps", a.steps)?;
    check_positive("eval_draws", a.eval_draws)?;
    let config = HierarchicalConfig {
        n_proposal: a.n_proposal,
        n_fine: a.n_fine,
        fine_knots: a.fine_knots,
        n_rays: a.rays,
        sampling: a.sampling.into(),
        policy: match a.policy {
            Policy::SamplesOnly => FinePointPolicy::SamplesOnly,
            Policy::UnionWithGrid => FinePointPolicy::UnionWithGrid,
        },
        detach: a.detach,
        lr_fine: a.lr_fine,
        lr_proposal: a.lr_proposal,
        lr_final_ratio: a.lr_final_ratio,
        seed: a.seed,
    };
    print_config(&HierRunConfig {
        command: "recon hierarchical",
        scene: "wall",
        steps: a.steps,
        toy: config,
        eval_draws: a.eval_draws,
        out: a.out.as_ref(),
        model: a.model.as_ref(),
    })?;
    let mut toy = HierarchicalToy::new(&ToyScene::wall(), config)?;
    let trace = match toy.train(a.steps) {
        Ok(t) => t,
        Err(e @ RvsError::Divergence { .. }) => return Err(Failure::Diverged(e.into())),
        Err(e) => return Err(e.into()),
    };
    write_trace(a.out.as_deref(), &trace)?;
    if let Some(p) = &a.model {
        write_json(Some(p), &toy)?;
    }
    let eval_seed = rvs_core::rng::derive_seed(a.seed, &[u64::MAX]);
    print_result(&HierResult {
        final_loss: *trace.last().expect("steps >= 1"),
        eval_mse: toy.evaluate(eval_seed, a.eval_draws)?,
        wall_localization: toy.sample_localization(WALL_CENTER, 3.0 * WALL_WIDTH, eval_seed)?,
    })
}
