use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn rvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn config_line(o: &Output) -> serde_json::Value {
    let text = stdout(o);
    let first = text.lines().next().expect("config line");
    let json = first
        .strip_prefix("# config ")
        .expect("first line is the config");
    serde_json::from_str(json).unwrap()
}

fn path_str(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn assert_golden_head(file: &str, golden: &str) {
    let text = fs::read_to_string(file).unwrap();
    let head: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    let want = fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(golden),
    )
    .unwrap();
    assert_eq!(head, want);
}

fn csv_rows(file: &str) -> Vec<Vec<String>> {
    fs::read_to_string(file)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn variance_writes_schema_and_config() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "v.csv");
    let o = rvs(&[
        "variance", "--field", "foggy", "--k", "2,8", "--trials", "200", "--bins", "64", "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = config_line(&o);
    assert_eq!(cfg["command"], "variance");
    assert_eq!(cfg["k"], serde_json::json!([2, 8]));
    assert_eq!(cfg["trials"], 200);
    assert_golden_head(&out, "variance.head");
    // four estimators at two sample counts
    assert_eq!(csv_rows(&out).len(), 8);
}

#[test]
fn constant_radiance_gives_zero_reparam_variance() {
    let dir = TempDir::new().unwrap();
    let radiance = path_str(&dir, "r.json");
    fs::write(
        &radiance,
        r#"{"kind":"constant","params":{"rgb":[0.3,0.6,0.9]}}"#,
    )
    .unwrap();
    let out = path_str(&dir, "v.csv");
    let o = rvs(&[
        "variance",
        "--field",
        "wall",
        "--radiance",
        &radiance,
        "--k",
        "1,4,16",
        "--trials",
        "300",
        "--bins",
        "128",
        "--out",
        &out,
    ]);
    assert!(o.status.success());
    let rows = csv_rows(&out);
    let reparam: Vec<_> = rows.iter().filter(|r| r[1] == "reparam_mc").collect();
    assert_eq!(reparam.len(), 6);
    for r in reparam {
        assert_eq!(r[6].parse::<f64>().unwrap(), 0.0, "{r:?}");
    }
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = path_str(&dir, name);
        let o = rvs(&[
            "variance", "--k", "3,5", "--trials", "500", "--bins", "256", "--seed", "9", "--out",
            &out,
        ]);
        assert!(o.status.success());
        fs::read(&out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));

    let fit = |name: &str| {
        let out = path_str(&dir, name);
        let o = rvs(&[
            "recon",
            "fit",
            "--steps",
            "30",
            "--knots",
            "5",
            "--loss",
            "two_sample",
            "--seed",
            "4",
            "--out",
            &out,
        ]);
        assert!(o.status.success());
        (fs::read(&out).unwrap(), stdout(&o))
    };
    let (a, a_log) = fit("fa.csv");
    let (b, b_log) = fit("fb.csv");
    assert_eq!(a, b);
    // the logged config names the output file, so compare only the result line
    assert_eq!(a_log.lines().last(), b_log.lines().last());
}

#[test]
fn invert_writes_one_row_per_uniform() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "i.csv");
    let o = rvs(&[
        "invert",
        "--u",
        "0.1,0.5,0.9",
        "--mode",
        "constant",
        "--out",
        &out,
    ]);
    assert!(o.status.success());
    assert_golden_head(&out, "invert.head");
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 3);
    let t: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(t.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(config_line(&o)["mode"], "constant");
}

#[test]
fn fit_logs_loss_and_reaches_target() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "trace.csv");
    let model = path_str(&dir, "model.json");
    let o = rvs(&[
        "recon",
        "fit",
        "--target",
        "0.25,0.15,0.35",
        "--steps",
        "600",
        "--loss",
        "two_sample",
        "--out",
        &out,
        "--model",
        &model,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(config_line(&o)["loss"], "two_sample");
    assert_golden_head(&out, "recon.head");
    assert_eq!(csv_rows(&out).len(), 600);
    let result = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("# result ").map(str::to_string))
        .unwrap();
    let result: serde_json::Value = serde_json::from_str(&result).unwrap();
    assert!(
        result["max_channel_error"].as_f64().unwrap() < 3e-2,
        "{result}"
    );
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(saved["knots"].as_array().unwrap().len(), 9);
}

#[test]
fn hierarchical_logs_the_sampler() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "h.csv");
    let o = rvs(&[
        "recon",
        "hierarchical",
        "--steps",
        "3",
        "--rays",
        "4",
        "--sampling",
        "nerf",
        "--out",
        &out,
    ]);
    assert!(o.status.success());
    assert_eq!(config_line(&o)["sampling"], "nerf_cdf");
    assert_golden_head(&out, "recon.head");
}

#[test]
fn gradcheck_default_suite_passes() {
    let o = rvs(&["gradcheck", "--cases", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let body: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
    let report: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn failing_replay_exits_2_and_reproduces() {
    // the sample sits exactly on the density jump, where t(sigma) has a kink
    let dir = TempDir::new().unwrap();
    let case = path_str(&dir, "kink.json");
    let u = -(-0.5f64).exp_m1() / -(-2.0f64).exp_m1();
    let json = serde_json::json!({
        "op": "invert_constant",
        "mode": "constant",
        "knots": [0.0, 0.5, 1.0],
        "values": [1.0, 3.0],
        "uniforms": [u],
    });
    fs::write(&case, json.to_string()).unwrap();
    let replay = |name: &str| {
        let out = path_str(&dir, name);
        let o = rvs(&["gradcheck", "--replay", &case, "--out", &out]);
        assert_eq!(o.status.code(), Some(2));
        fs::read_to_string(&out).unwrap()
    };
    let first = replay("a.json");
    assert_eq!(first, replay("b.json"));
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["passed"], false);
    assert!(report["max_rel_error"].as_f64().unwrap() > 0.1);
}

#[test]
fn divergent_fit_exits_3() {
    // the initial model already matches the target, so any step blows up the loss
    let t = 0.5 * -(-1.0f64).exp_m1() + 1e-5;
    let target = format!("{t},{t},{t}");
    let o = rvs(&[
        "recon",
        "fit",
        "--init-density",
        "1.0",
        "--knots",
        "5",
        "--init-rgb",
        "0.5,0.5,0.5",
        "--target",
        &target,
        "--lr",
        "1.0",
        "--steps",
        "20",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(rvs(&["nope"]).status.code(), Some(1));
    assert_eq!(rvs(&["variance", "--k", "x"]).status.code(), Some(1));
    assert_eq!(
        rvs(&["recon", "fit", "--target", "1,2"]).status.code(),
        Some(1)
    );
    assert_eq!(
        rvs(&["variance", "--field", "/no/such/file.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        rvs(&["gradcheck", "--threshold", "-1"]).status.code(),
        Some(1)
    );
}

#[test]
fn help_exits_0() {
    let o = rvs(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("variance"));
}
