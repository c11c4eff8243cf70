use std::path::Path;

use hilfer_core::cli::{self, report_path};

const TWO_IMPULSES: &str = include_str!("../configs/two_impulses.toml");

const HOMOGENEOUS: &str = r#"
schema_version = 1

[problem]
alpha = 0.6
beta = 0.5
dimension = 1
A = [1.0]
u0 = [1.0]
horizon = 1.0
"#;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("hilfer").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn homogeneous_solve_writes_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", HOMOGENEOUS);
    let traj = dir.path().join("u.csv");
    let (code, out, _) = run(&["solve", "--config", &cfg, "--out", s(&traj)]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let points: u64 = report["segments"].as_array().unwrap().iter().map(|x| x["points"].as_u64().unwrap()).sum();
    let text = std::fs::read_to_string(&traj).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("segment,t,side,u_1,weighted_norm"));
    assert_eq!(lines.count() as u64, points);
    assert!(report_path(&traj).exists());
}

#[test]
fn partition_violation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", &TWO_IMPULSES.replace("s = 0.4", "s = 0.25"));
    let (code, _, err) = run(&["solve", "--config", &cfg, "--out", s(&dir.path().join("u.csv"))]);
    assert_eq!(code, 1);
    assert!(err.contains("partition must satisfy"), "{err}");
}

#[test]
fn unknown_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", &HOMOGENEOUS.replace("horizon = 1.0", "horizon = 1.0\nhorizn = 1"));
    let (code, _, err) = run(&["check", "--config", &cfg]);
    assert_eq!(code, 1);
    assert!(err.contains("horizn"), "{err}");
}

#[test]
fn divergent_picard_exits_2_with_ratio_history() {
    // Strong expansive forcing: the criterion fails and Picard blows up.
    let text = HOMOGENEOUS.replace("horizon = 1.0", "horizon = 3.0\n\n[forcing]\nf = [\"40*u1\"]\nphi = \"40\"\npsi = \"r\"\n\n[solver]\nmax_picard_iters = 60");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", &text);
    let (check, _, _) = run(&["check", "--config", &cfg]);
    assert_eq!(check, 3);
    let traj = dir.path().join("u.csv");
    let (code, out, err) = run(&["solve", "--config", &cfg, "--out", s(&traj)]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("Picard ratio history"), "{err}");
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(!report["ratio_history"].as_array().unwrap().is_empty());
    assert!(!traj.exists());
}

fn check_config(m: f64, k: f64, lambda: f64, l: f64, rho: f64) -> String {
    format!("{HOMOGENEOUS}\n[checker]\nM = {m}\nK = {k}\nLambda = {lambda}\nL = {l}\nrho = {rho}\n")
}

#[test]
fn check_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let pass = write(dir.path(), "a.toml", &check_config(1.0, 0.1, 0.2, 0.1, 1.0));
    let (code, out, _) = run(&["check", "--config", &pass]);
    assert_eq!(code, 0);
    let cert: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(cert["verdict"], "PASS");
    assert!((cert["lhs_paper"].as_f64().unwrap() - 0.3).abs() < 1e-12);

    let fail = write(dir.path(), "b.toml", &check_config(2.0, 0.3, 0.2, 0.1, 1.0));
    let (code, out, _) = run(&["check", "--config", &fail]);
    assert_eq!(code, 3);
    let cert: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(cert["verdict"], "FAIL");
}

#[test]
fn check_without_envelope_for_nonlinear_f_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = HOMOGENEOUS.replace("horizon = 1.0", "horizon = 1.0\n\n[forcing]\nf = [\"sin(u1) * cos(t)\"]");
    let cfg = write(dir.path(), "p.toml", &text);
    let (code, _, err) = run(&["check", "--config", &cfg]);
    assert_eq!(code, 1);
    assert!(err.contains("psi"), "{err}");
}

#[test]
fn verify_round_trip_corruption_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", TWO_IMPULSES);
    let traj = dir.path().join("u.csv");
    assert_eq!(run(&["solve", "--config", &cfg, "--out", s(&traj)]).0, 0);
    let (code, out, _) = run(&["verify", "--config", &cfg, "--traj", s(&traj)]);
    assert_eq!(code, 0);
    let rep: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(rep["passed"], true);

    let text = std::fs::read_to_string(&traj).unwrap();
    // Corrupt the value column of one interior row of an evolving segment.
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let i = lines.iter().position(|l| l.starts_with("2,") && l.contains(",interior,")).unwrap() + 10;
    let mut fields: Vec<String> = lines[i].split(',').map(String::from).collect();
    let v: f64 = fields[3].parse().unwrap();
    fields[3] = cli::num(v + 0.05);
    lines[i] = fields.join(",");
    let corrupted = write(dir.path(), "bad.csv", &(lines.join("\n") + "\n"));
    assert_eq!(run(&["verify", "--config", &cfg, "--traj", &corrupted]).0, 4);

    let cut = write(dir.path(), "cut.csv", &text[..text.len() / 2]);
    let (code, _, err) = run(&["verify", "--config", &cfg, "--traj", &cut]);
    assert_eq!(code, 1, "{err}");
    // Cut at a line boundary: segments missing.
    let whole_lines = &text[..text[..text.len() / 2].rfind('\n').unwrap() + 1];
    let cut = write(dir.path(), "cut2.csv", whole_lines);
    assert_eq!(run(&["verify", "--config", &cfg, "--traj", &cut]).0, 1);
    let garbage = write(dir.path(), "junk.csv", "segment,t,side,u_1,weighted_norm\n0,abc,interior,1,1\n");
    assert_eq!(run(&["verify", "--config", &cfg, "--traj", &garbage]).0, 1);
}

#[test]
fn csv_numbers_round_trip_exactly() {
    for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, f64::MAX] {
        let y: f64 = cli::num(x).parse().unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn beta_sweep_writes_members_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.toml",
        &HOMOGENEOUS.replace("horizon = 1.0", "horizon = 1.0\n\n[forcing]\nf = [\"-u1 + sin(t)\"]"),
    );
    let out = dir.path().join("sweep");
    let (code, _, err) = run(&["sweep", "--config", &cfg, "--param", "beta", "--values", "0,0.5,1", "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["beta_00_0.csv", "beta_01_0.5.csv", "beta_02_1.csv", "summary.csv"]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.lines().skip(1).all(|l| l.split(',').nth(2) == Some("ok")), "{summary}");

    // A member outside the valid range is recorded and the sweep continues.
    let (code, _, _) = run(&["sweep", "--config", &cfg, "--param", "beta", "--values", "0.5,1.5", "--out", s(&out)]);
    assert_eq!(code, 1);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains(",ok,") && summary.contains(",config_error,"), "{summary}");
}

#[test]
fn sweep_members_match_the_limit_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let text = HOMOGENEOUS.replace("horizon = 1.0", "horizon = 1.0\n\n[forcing]\nf = [\"-u1 + sin(t)\"]");
    // beta = 1 against the frozen exact Caputo values (alpha = 0.6).
    let cfg = write(dir.path(), "p.toml", &text);
    let out = dir.path().join("b");
    assert_eq!(run(&["sweep", "--config", &cfg, "--param", "beta", "--values", "1", "--out", s(&out)]).0, 0);
    let traj = std::fs::read_to_string(out.join("beta_00_1.csv")).unwrap();
    let oracle = include_str!("oracles/caputo.csv");
    let find = |t: f64| -> f64 {
        traj.lines()
            .skip(1)
            .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
            .find(|f| (f[1].parse::<f64>().unwrap() - t).abs() < 1e-12)
            .map(|f| f[3].parse().unwrap())
            .unwrap()
    };
    for l in oracle.lines().skip(1).filter(|l| l.starts_with("0.6,")) {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((find(f[1]) - f[2]).abs() <= 1e-3 * f[2].abs(), "t = {}", f[1]);
    }
    // alpha = 1 against the classical solution.
    let out = dir.path().join("a");
    assert_eq!(run(&["sweep", "--config", &cfg, "--param", "alpha", "--values", "1", "--out", s(&out)]).0, 0);
    let traj = std::fs::read_to_string(out.join("alpha_00_1.csv")).unwrap();
    for l in traj.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        let (t, u): (f64, f64) = (f[1].parse().unwrap(), f[3].parse().unwrap());
        let exact = (2.0 * t.sin() - t.cos()) / 5.0 + 1.2 * (-2.0 * t).exp();
        assert!((u - exact).abs() <= 1e-6, "t = {t}");
    }
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", TWO_IMPULSES);
    let mut seen = Vec::new();
    for k in 0..2 {
        let traj = dir.path().join(format!("u{k}.csv"));
        let (_, out, _) = run(&["solve", "--config", &cfg, "--out", s(&traj)]);
        let (_, cert, _) = run(&["check", "--config", &cfg]);
        seen.push((std::fs::read(&traj).unwrap(), out, cert));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn help_exits_0_and_bad_usage_exits_1() {
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["solve"]).0, 1);
    assert_eq!(run(&["sweep", "--config", "x", "--param", "gamma", "--values", "1", "--out", "d"]).0, 1);
}
