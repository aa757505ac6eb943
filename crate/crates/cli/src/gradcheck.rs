use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use rvs_core::gradcheck::{
    run_suite, GradCase, GradOp, GradcheckReport, DEFAULT_CASES, DEFAULT_THRESHOLD,
};
use rvs_core::GridMode;

use crate::output::{print_config, write_json};
use crate::{CmdResult, Failure};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Random cases per operation.
    #[arg(long, default_value_t = DEFAULT_CASES)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Re-run one serialized case (a case object, or a report with a failing case).
    #[arg(long)]
    replay: Option<PathBuf>,
    /// JSON destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Config<'a> {
    command: &'static str,
    cases: usize,
    seed: u64,
    threshold: f64,
    replay: Option<&'a PathBuf>,
    out: Option<&'a PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReplayInput {
    Case(GradCase),
    Report(GradcheckReport),
}

#[derive(Serialize)]
struct ReplayReport {
    op: GradOp,
    mode: GridMode,
    max_rel_error: f64,
    max_abs_error: f64,
    threshold: f64,
    passed: bool,
    analytic: Vec<f64>,
    numeric: Vec<f64>,
}

pub fn run(args: Args) -> CmdResult {
    if !(args.threshold > 0.0) {
        return Err(anyhow::anyhow!("threshold must be positive").into());
    }
    print_config(&Config {
        command: "gradcheck",
        cases: args.cases,
        seed: args.seed,
        threshold: args.threshold,
        replay: args.replay.as_ref(),
        out: args.out.as_ref(),
    })?;
    match &args.replay {
        Some(path) => replay(path, &args),
        None => suite(&args),
    }
}

fn suite(args: &Args) -> CmdResult {
    if args.cases == 0 {
        return Err(anyhow::anyhow!("cases must be at least 1").into());
    }
    let report = run_suite(args.cases, args.seed, args.threshold)?;
    write_json(args.out.as_deref(), &report)?;
    if report.passed {
        return Ok(());
    }
    let failing: Vec<String> = report
        .ops
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{:?} max rel error {:e}", o.op, o.max_rel_error))
        .chain((!report.cross_method_passed).then(|| {
            format!(
                "explicit vs implicit deviation {:e}",
                report.cross_method_max_deviation
            )
        }))
        .collect();
    Err(Failure::Check(format!(
        "{}; worst cases are in the report for --replay",
        failing.join(", ")
    )))
}

fn replay(path: &PathBuf, args: &Args) -> CmdResult {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let input: ReplayInput =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let case = match input {
        ReplayInput::Case(c) => c,
        ReplayInput::Report(r) => r
            .ops
            .into_iter()
            .find_map(|o| o.worst_case)
            .ok_or_else(|| anyhow::anyhow!("report has no failing case to replay"))?,
    };
    let analytic = case.analytic()?;
    let numeric = case.numeric()?;
    let (rel, abs) = case.errors()?;
    let report = ReplayReport {
        op: case.op,
        mode: case.mode,
        max_rel_error: rel,
        max_abs_error: abs,
        threshold: args.threshold,
        passed: rel <= args.threshold,
        analytic,
        numeric,
    };
    write_json(args.out.as_deref(), &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "{:?} max rel error {rel:e} above {:e}",
            case.op, args.threshold
        )))
    }
}
