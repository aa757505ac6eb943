//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::time::{Duration, Instant};

use rvs_core::bench::{
    find_row, ground_truth, run_trials_rgb, variance_study, BenchEstimator, BenchScene, DEFAULT_KS,
};
use rvs_core::estimators::quadrature_weights;
use rvs_core::gradcheck::{random_grid, run_suite, DEFAULT_THRESHOLD};
use rvs_core::opacity::stable_target;
use rvs_core::recon::{HierarchicalConfig, HierarchicalToy, ToyScene};
use rvs_core::rng::{derive_seed, rng_from_seed};
use rvs_core::sampler::{
    default_bisect_tol, draw_uniforms, invert, invert_bisect, sample_positions, StrataDenominator,
};
use rvs_core::{
    build_profile, GridMode, RadianceSpec, RayDensityGrid, RayInterval, SamplingMethod,
    ScalarField1D, UniformScheme,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn round_trip() -> Outcome {
    let mut worst_closed = 0.0f64;
    let mut worst_bisect = 0.0f64;
    for mode in [GridMode::Constant, GridMode::Linear] {
        for case in 0..1000u64 {
            let mut rng = rng_from_seed(derive_seed(1, &[mode as u64, case]));
            let p = build_profile(random_grid(&mut rng, mode));
            let tol = default_bisect_tol(p.grid().interval().length());
            for j in 0..16 {
                let u = (j as f64 + 0.5) / 16.0;
                let y = stable_target(p.total_depth(), u).unwrap();
                let t = invert(&p, y).unwrap().t;
                worst_closed = worst_closed.max((p.depth_at(t).unwrap() - y).abs());
                let tb = invert_bisect(&p, y, tol).unwrap().t;
                worst_bisect = worst_bisect.max((p.depth_at(tb).unwrap() - y).abs());
            }
        }
    }
    outcome(
        worst_closed < 1e-10 && worst_bisect < 1e-9,
        format!("max |I(t) - y|: closed form {worst_closed:.1e}, bisection {worst_bisect:.1e}"),
    )
}

fn gradient_suite() -> Outcome {
    let report = run_suite(200, 0, DEFAULT_THRESHOLD).unwrap();
    let per_op: Vec<String> = report
        .ops
        .iter()
        .map(|o| {
            format!(
                "{:?} rel {:.1e} abs {:.1e}",
                o.op, o.max_rel_error, o.max_abs_error
            )
        })
        .collect();
    outcome(
        report.passed,
        format!(
            "200 cases/op, entries within 1e-9 absolute count as exact, [{}], explicit vs implicit {:.1e}",
            per_op.join(", "),
            report.cross_method_max_deviation
        ),
    )
}

fn unbiasedness() -> Outcome {
    let iv = RayInterval::unit();
    let bump = ScalarField1D::GaussianBump {
        center: 0.35,
        width: 0.08,
        amplitude: 6.0,
    };
    let pairs = [
        ("foggy", ScalarField1D::foggy(), RadianceSpec::default()),
        ("wall", ScalarField1D::wall(iv), RadianceSpec::default()),
        (
            "bump",
            bump.clone(),
            RadianceSpec::grey_sinusoid(0.4, 0.3, 3.0, 0.5),
        ),
        (
            "fog+bump",
            ScalarField1D::Composite {
                parts: vec![ScalarField1D::ConstantFog { level: 0.3 }, bump],
            },
            RadianceSpec::Sinusoid {
                offset: [0.5, 0.3, 0.6],
                amplitude: [0.4, 0.25, 0.3],
                frequency: [2.0, 5.0, 1.0],
                phase: [0.0, 1.5, 3.0],
            },
        ),
    ];
    let mut worst_z = 0.0f64;
    let mut ok = true;
    for (name, field, spec) in pairs {
        let scene = BenchScene::new(
            name,
            field.clone(),
            spec.clone(),
            iv,
            100_000,
            GridMode::Constant,
        )
        .unwrap();
        let truth = ground_truth(&field, &spec, iv, 100_000).unwrap();
        for est in [
            BenchEstimator::ReparamIid,
            BenchEstimator::ReparamStratified,
        ] {
            let stats = run_trials_rgb(&scene, est, 8, 100_000, 17, StrataDenominator::K).unwrap();
            for (ch, s) in stats.iter().enumerate() {
                let z = (s.mean - truth[ch]).abs() / s.stderr.max(f64::MIN_POSITIVE);
                worst_z = worst_z.max(z);
                ok &= s.covers(truth[ch], 3.0);
            }
        }
    }
    outcome(
        ok,
        format!("4 field/radiance pairs x iid/stratified x 3 channels, 1e5 trials, worst |z| = {worst_z:.2}"),
    )
}

fn variance_study_shape() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (scene, match_k) in [(BenchScene::foggy(), 32), (BenchScene::wall(), 4)] {
        let rows = variance_study(
            &scene,
            &BenchEstimator::ALL,
            &DEFAULT_KS,
            10_000,
            0,
            StrataDenominator::K,
        )
        .unwrap();
        for &k in &DEFAULT_KS {
            let ours = find_row(&rows, BenchEstimator::ReparamStratified, k)
                .unwrap()
                .variance;
            for base in [
                BenchEstimator::ReparamIid,
                BenchEstimator::StratifiedIw,
                BenchEstimator::PlainUniform,
            ] {
                let theirs = find_row(&rows, base, k).unwrap().variance;
                if ours > theirs {
                    ok = false;
                    notes.push(format!(
                        "{} k={k}: {ours:.2e} > {base:?} {theirs:.2e}",
                        scene.name
                    ));
                }
            }
        }
        let ours = find_row(&rows, BenchEstimator::ReparamStratified, match_k)
            .unwrap()
            .variance;
        let iw = find_row(&rows, BenchEstimator::StratifiedIw, 256)
            .unwrap()
            .variance;
        let ratio = ours / iw;
        ok &= (0.5..=2.0).contains(&ratio);
        notes.push(format!(
            "{}: stratified k={match_k} / IW k=256 = {ratio:.2}",
            scene.name
        ));
    }
    outcome(ok, notes.join("; "))
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64).abs_diff(b.to_bits() as i64)
}

fn quadrature_identity() -> Outcome {
    let mut worst = 0u64;
    for case in 0..10_000u64 {
        let mut rng = rng_from_seed(derive_seed(5, &[case]));
        let g = random_grid(&mut rng, GridMode::Constant);
        // scale densities over several decades, zeroing some bins
        let values: Vec<f64> = g
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if (case + i as u64) % 7 == 0 {
                    0.0
                } else {
                    v * 10f64.powi((case % 9) as i32 - 5)
                }
            })
            .collect();
        let g = RayDensityGrid::new(g.knots().to_vec(), values, GridMode::Constant).unwrap();
        let sum: f64 = quadrature_weights(&g).unwrap().iter().sum();
        let tau: f64 = g
            .values()
            .iter()
            .enumerate()
            .map(|(i, s)| s * g.width(i))
            .sum();
        worst = worst.max(ulps(sum, -(-tau).exp_m1()));
    }
    outcome(worst <= 4, format!("10^4 random grids, max {worst} ULP"))
}

fn stability() -> Outcome {
    let text = include_str!("data/stable_target_oracle.csv");
    let mut worst = 0.0f64;
    let mut rows = 0;
    let mut ok = true;
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let y = stable_target(f[0], f[1]).unwrap();
        rows += 1;
        if !y.is_finite() {
            ok = false;
            continue;
        }
        let err = if f[2] == 0.0 {
            if y == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            ((y - f[2]) / f[2]).abs()
        };
        worst = worst.max(err);
    }
    outcome(
        ok && worst < 1e-6,
        format!("{rows} (depth, u) points vs 150-digit oracle, max rel error {worst:.1e}"),
    )
}

fn hierarchical() -> Outcome {
    let scene = ToyScene::wall();
    let median = |sampling: SamplingMethod| {
        let mut v: Vec<f64> = (0..5)
            .map(|seed| {
                let cfg = HierarchicalConfig {
                    sampling,
                    seed,
                    ..Default::default()
                };
                let mut toy = HierarchicalToy::new(&scene, cfg).unwrap();
                toy.train(2000).unwrap();
                toy.evaluate(12345, 4).unwrap()
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    let rvs = median(SamplingMethod::Rvs);
    let nerf = median(SamplingMethod::NerfCdf);

    let cfg = HierarchicalConfig {
        detach: true,
        ..Default::default()
    };
    let mut toy = HierarchicalToy::new(&scene, cfg).unwrap();
    let before = toy.proposal.density_pre.clone();
    let (_, _, grad) = toy.loss_and_grads(1).unwrap();
    let zero_grad = grad.density_pre.iter().all(|g| *g == 0.0);
    toy.train(200).unwrap();
    let frozen = toy.proposal.density_pre == before;
    outcome(
        rvs <= nerf && zero_grad && frozen,
        format!(
            "median MSE rvs {rvs:.3e} vs nerf {nerf:.3e}; detached proposal gradient zero: {zero_grad}, parameters frozen: {frozen}"
        ),
    )
}

fn sampler_distribution() -> Outcome {
    let sigma = 2.5;
    let grid =
        RayDensityGrid::uniform(RayInterval::unit(), vec![sigma; 8], GridMode::Constant).unwrap();
    let p = build_profile(grid);
    let u = draw_uniforms(&UniformScheme::iid(100_000, 8)).unwrap();
    let mut t = sample_positions(&p, u, SamplingMethod::Rvs).unwrap();
    t.sort_by(f64::total_cmp);
    let n = t.len() as f64;
    let norm = -(-sigma).exp_m1();
    let ks = t.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = -(-sigma * x).exp_m1() / norm;
        d.max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs())
    });
    outcome(
        ks < 0.01,
        format!("10^5 i.i.d. samples, KS statistic {ks:.2e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("round-trip inversion", round_trip, Duration::from_secs(10)),
        ("gradient suite", gradient_suite, Duration::from_secs(60)),
        ("unbiasedness", unbiasedness, Duration::from_secs(300)),
        (
            "variance study",
            variance_study_shape,
            Duration::from_secs(600),
        ),
        (
            "quadrature identity",
            quadrature_identity,
            Duration::from_secs(60),
        ),
        ("stable target", stability, Duration::from_secs(5)),
        ("hierarchical toy", hierarchical, Duration::from_secs(600)),
        (
            "sampler distribution",
            sampler_distribution,
            Duration::from_secs(60),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = o.passed && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {} {name}: {} ({:.1}s, budget {}s{})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
