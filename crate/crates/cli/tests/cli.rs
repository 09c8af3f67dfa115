use std::path::Path;
use std::process::{Command, Output};

const GEOMETRY: &[&str] = &["--a", "0.3", "--b", "0.2", "--theta", "0.6", "--e1", "1.03,0.17", "--e2", "-0.31,0.98"];

fn wtb(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wtb"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn with_geometry<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(GEOMETRY);
    v.extend_from_slice(extra);
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn trace_plane_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let o = wtb(&with_geometry("trace-plane", &["--events", "2000", "--seed", "4"]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let meta: serde_json::Value = serde_json::from_str(lines.next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(meta["config"]["params"]["a"], 0.3);
    assert!(meta["version"].is_string());
    assert!(lines.next().unwrap().starts_with("index,kind"));
    assert_eq!(lines.count(), 2000);
    let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
    assert!(svg.contains("<metadata>") && svg.contains("trajectory"));
}

#[test]
fn outputs_are_deterministic() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = with_geometry("trace-surface", &["--events", "500", "--seed", "9"]);
    assert!(wtb(&args, d1.path()).status.success());
    assert!(wtb(&args, d2.path()).status.success());
    for f in ["trajectory.csv", "surface.json"] {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_and_renorm() {
    let dir = tempfile::tempdir().unwrap();
    let o = wtb(&with_geometry("compare", &["--events", "1000", "--start", "0.5,0.3"]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["pass"], true);
    assert_eq!(r["meta"]["config"]["start"]["x"], 0.5);

    let o = wtb(&with_geometry("renorm", &[]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("renorm.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines[0]["meta"]["version"].is_string());
    assert!(lines[1]["level"]["k"] == 0);
    let theta = lines.last().unwrap()["estimate"]["theta_top"].as_f64().unwrap();
    assert!(theta > 0.0 && theta < 1.0);
}

#[test]
fn analyze_reports_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = wtb(&with_geometry("analyze", &["--events", "20000", "--start", "0.5,0.3"]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("report.json"));
    for key in ["Theta_fit", "width_profile", "Theta_predicted", "theta_top", "diffusion_slope", "audit_pass"] {
        assert!(r["analysis"].get(key).is_some(), "{key}");
    }
    // too few events for the trapping statistic
    let o = wtb(&with_geometry("analyze", &["--events", "50", "--check"]), dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_is_reproducible() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["sweep", "--samples", "3", "--events", "2000", "--seed", "5"];
    assert!(wtb(&args, d1.path()).status.success());
    assert!(wtb(&args, d2.path()).status.success());
    let a = std::fs::read(d1.path().join("report.json")).unwrap();
    assert_eq!(a, std::fs::read(d2.path().join("report.json")).unwrap());
    let r: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(r["samples"].as_array().unwrap().len(), 3);
}

#[test]
fn single_sample_sweep_matches_analyze() {
    let dir = tempfile::tempdir().unwrap();
    assert!(wtb(&["sweep", "--samples", "1", "--events", "3000", "--seed", "2"], dir.path()).status.success());
    let s = json(&dir.path().join("report.json"));
    let a = &s["samples"][0]["analysis"];
    let p = &a["params"];
    let pair = |v: &serde_json::Value| format!("{},{}", v["x"], v["y"]);
    let (e1, e2, st) = (pair(&p["e1"]), pair(&p["e2"]), pair(&a["start"]));
    let (pa, pb, pt) = (p["a"].to_string(), p["b"].to_string(), p["theta"].to_string());
    let args = ["analyze", "--a", &pa, "--b", &pb, "--theta", &pt, "--e1", &e1, "--e2", &e2, "--start", &st, "--events", "3000", "--seed", "2"];
    let o = wtb(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("report.json"))["analysis"], *a);
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let o = wtb(&["trace-plane", "--a", "1", "--b", "1", "--theta", "0", "--e1", "10,0", "--e2", "0,10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("θ = 0"));
    let o = wtb(&["trace-plane", "--a", "9", "--b", "9", "--theta", "0.5", "--e1", "10,0", "--e2", "0,10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not admissible"));
    let o = wtb(&with_geometry("trace-plane", &["--events", "0"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    // a start inside an obstacle
    let o = wtb(&with_geometry("trace-plane", &["--start", "0,0"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "a = 0.3\nb = 0.2\ntheta = 0.6\ne1 = [1.03, 0.17]\ne2 = [-0.31, 0.98]\nevents = 100\nseed = 3\n").unwrap();
    let c = cfg.to_str().unwrap();
    let o = wtb(&["trace-plane", "--config", c, "--events", "40"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 42);

    std::fs::write(&cfg, "a = 0.3\nspeed = 2\n").unwrap();
    let o = wtb(&["trace-plane", "--config", c], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("speed") && err.contains("line 2"), "{err}");
}
