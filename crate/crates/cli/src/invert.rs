use std::path::PathBuf;

use serde::Serialize;

use rvs_core::sampler::{draw_uniforms, sample_from_uniforms};
use rvs_core::{discretize, OpacityProfile, RayInterval, UniformScheme};

use crate::output::{csv_with_schema, print_config};
use crate::scene::{check_positive, resolve_field, Mode, ResolvedField, Sampling, Scheme, Strata};
use crate::CmdResult;

pub const SCHEMA: &str = "rvs-invert/1";

#[derive(clap::Args, Debug)]
pub struct Args {
    /// `foggy`, `wall`, or a JSON field definition file.
    #[arg(long, default_value = "wall")]
    field: String,
    #[arg(long, value_enum, default_value_t = Mode::Linear)]
    mode: Mode,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = Sampling::Rvs)]
    sampling: Sampling,
    /// Explicit uniforms; when absent `--k` are drawn with `--scheme`.
    #[arg(long, value_delimiter = ',')]
    u: Option<Vec<f64>>,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Scheme::Stratified)]
    scheme: Scheme,
    #[arg(long, value_enum, default_value_t = Strata::K)]
    strata: Strata,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Config<'a> {
    command: &'static str,
    field: &'a ResolvedField,
    mode: Mode,
    bins: usize,
    sampling: Sampling,
    u: &'a [f64],
    seed: u64,
    out: Option<&'a PathBuf>,
}

#[derive(Serialize)]
struct Row {
    u: f64,
    t: f64,
    opacity: f64,
    /// Euclidean norm of dt/dsigma over all density parameters.
    jacobian_norm: f64,
}

pub fn run(args: Args) -> CmdResult {
    let field = resolve_field(&args.field, None)?;
    check_positive("bins", args.bins)?;
    let uniforms = match &args.u {
        Some(u) => u.clone(),
        None => {
            check_positive("k", args.k)?;
            let scheme = match args.scheme {
                Scheme::Iid => UniformScheme::iid(args.k, args.seed),
                Scheme::Stratified => UniformScheme::stratified(args.k, args.seed),
            }
            .with_strata(args.strata.into());
            draw_uniforms(&scheme)?
        }
    };
    print_config(&Config {
        command: "invert",
        field: &field,
        mode: args.mode,
        bins: args.bins,
        sampling: args.sampling,
        u: &uniforms,
        seed: args.seed,
        out: args.out.as_ref(),
    })?;
    let grid = discretize(
        &field.field,
        RayInterval::unit(),
        args.bins,
        args.mode.into(),
    )?;
    let profile = OpacityProfile::new(grid);
    let batch = sample_from_uniforms(&profile, uniforms.clone(), args.sampling.into(), true)?;
    let mut w = csv_with_schema(args.out.as_deref(), SCHEMA)?;
    for (i, (&u, &t)) in uniforms.iter().zip(&batch.positions).enumerate() {
        w.serialize(Row {
            u,
            t,
            opacity: profile.eval_opacity(t)?,
            jacobian_norm: batch
                .jacobian_row(i)
                .iter()
                .map(|j| j * j)
                .sum::<f64>()
                .sqrt(),
        })?;
    }
    w.flush()?;
    Ok(())
}
