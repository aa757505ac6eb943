use std::path::PathBuf;

use serde::Serialize;

use rvs_core::bench::{variance_study, BenchEstimator, BenchScene, BENCH_GRID_BINS, DEFAULT_KS};
use rvs_core::RayInterval;

use crate::output::{csv_with_schema, print_config};
use crate::scene::{check_positive, resolve_field, Mode, ResolvedField, Strata};
use crate::CmdResult;

pub const SCHEMA: &str = "rvs-variance/1";

#[derive(clap::Args, Debug)]
pub struct Args {
    /// `foggy`, `wall`, or a JSON field definition file.
    #[arg(long, default_value = "wall")]
    field: String,
    /// JSON radiance definition; defaults to the field's calibrated radiance.
    #[arg(long)]
    radiance: Option<PathBuf>,
    /// Comma-separated sample counts.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS.to_vec())]
    k: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Linear)]
    mode: Mode,
    /// Bins of the discretized field.
    #[arg(long, default_value_t = BENCH_GRID_BINS)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = Strata::K)]
    strata: Strata,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Config<'a> {
    command: &'static str,
    field: &'a ResolvedField,
    k: &'a [usize],
    trials: usize,
    seed: u64,
    mode: Mode,
    bins: usize,
    strata: Strata,
    out: Option<&'a PathBuf>,
}

pub fn run(args: Args) -> CmdResult {
    let field = resolve_field(&args.field, args.radiance.as_ref())?;
    check_positive("trials", args.trials)?;
    check_positive("bins", args.bins)?;
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(anyhow::anyhow!("k values must be positive").into());
    }
    print_config(&Config {
        command: "variance",
        field: &field,
        k: &args.k,
        trials: args.trials,
        seed: args.seed,
        mode: args.mode,
        bins: args.bins,
        strata: args.strata,
        out: args.out.as_ref(),
    })?;
    let scene = BenchScene::new(
        &field.name,
        field.field.clone(),
        field.radiance.clone(),
        RayInterval::unit(),
        args.bins,
        args.mode.into(),
    )?;
    let rows = variance_study(
        &scene,
        &BenchEstimator::ALL,
        &args.k,
        args.trials,
        args.seed,
        args.strata.into(),
    )?;
    let mut w = csv_with_schema(args.out.as_deref(), SCHEMA)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
