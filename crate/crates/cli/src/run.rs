//! The commands: each traces or renormalizes, then writes its artifacts into
//! the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use wtb_core::{
    build_torus, compare_traces, decomposition_audit, diffusion_exponent, extents_along, fit_strip, lyapunov_estimate,
    predict_strip, random_admissible, random_start, run_induction, trace_instrumented, trace_plane, trace_surface,
    InductionOptions, SampleRanges, StripFit, SystemParams, TrajectoryRecord, Vec2, VERSION,
};

use crate::config::{ConfigError, Mode, RunConfig};
use crate::svg;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) | RunError::Io { .. } => 3,
            RunError::CheckFailed(_) => 4,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

/// Parameter tuple, start and version, embedded in every artifact.
pub fn meta(cfg: &RunConfig) -> Value {
    json!({ "version": VERSION, "config": cfg })
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<std::path::PathBuf, RunError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|source| RunError::Io { path: cfg.output_dir.clone(), source })?;
    Ok(cfg.output_dir.join(name))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), RunError> {
    let io = |source| RunError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    f(&mut w).and_then(|_| w.flush()).map_err(io)
}

fn write_json(cfg: &RunConfig, name: &str, v: &Value) -> Result<(), RunError> {
    let path = out_file(cfg, name)?;
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, v)?;
        writeln!(w)
    })
}

fn write_csv(cfg: &RunConfig, rec: &TrajectoryRecord) -> Result<(), RunError> {
    let path = out_file(cfg, "trajectory.csv")?;
    write_file(&path, |w| {
        writeln!(w, "# {}", meta(cfg))?;
        writeln!(w, "index,kind,cell1,cell2,x,y,direction,arclength,feature")?;
        for (i, e) in rec.events.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{},{}",
                e.kind.as_str(),
                e.obstacle_index[0],
                e.obstacle_index[1],
                e.point.x,
                e.point.y,
                e.dir_after.phi(),
                e.arclength,
                e.feature
            )?;
        }
        Ok(())
    })
}

fn write_svg(cfg: &RunConfig, rec: &TrajectoryRecord, fit: Option<&StripFit>) -> Result<(), RunError> {
    let path = out_file(cfg, "plot.svg")?;
    svg::write(&path, &rec.params, &rec.vertices(), rec.start, fit, &meta(cfg).to_string())
        .map_err(|source| RunError::Io { path, source })
}

pub fn run(cfg: &RunConfig, check: bool) -> Result<(), RunError> {
    match cfg.mode {
        Mode::TracePlane => trace_plane_cmd(cfg),
        Mode::TraceSurface => trace_surface_cmd(cfg),
        Mode::Compare => compare_cmd(cfg),
        Mode::Renorm => renorm_cmd(cfg),
        Mode::Analyze => analyze_cmd(cfg, check),
        Mode::Sweep => sweep_cmd(cfg),
    }
}

fn trace_plane_cmd(cfg: &RunConfig) -> Result<(), RunError> {
    let rec = trace_plane(&cfg.params(), cfg.start(), cfg.up, cfg.max_events, cfg.checkpoint_stride).map_err(runtime)?;
    write_csv(cfg, &rec)?;
    write_svg(cfg, &rec, fit_strip(&rec.checkpoints).ok().as_ref())
}

fn trace_surface_cmd(cfg: &RunConfig) -> Result<(), RunError> {
    let torus = build_torus(&cfg.params(), cfg.epsilon).map_err(runtime)?;
    let rec = trace_surface(&torus, cfg.start(), cfg.up, cfg.max_events).map_err(runtime)?;
    write_csv(cfg, &rec)?;
    write_json(
        cfg,
        "surface.json",
        &json!({
            "meta": meta(cfg),
            "torus": torus,
            "in_o_eps": torus.in_o_eps(),
            "homology": rec.crossings,
            "vertical_length": rec.final_arclength(),
            "stop": rec.stop,
        }),
    )
}

fn compare_cmd(cfg: &RunConfig) -> Result<(), RunError> {
    let torus = build_torus(&cfg.params(), cfg.epsilon).map_err(runtime)?;
    let report = compare_traces(&torus, cfg.start(), cfg.up, cfg.max_events).map_err(runtime)?;
    write_json(
        cfg,
        "report.json",
        &json!({
            "meta": meta(cfg),
            "equivalence": report,
            "relative_discrepancy": report.relative_discrepancy(),
            "pass": report.pass(1e-8),
        }),
    )
}

fn renorm_cmd(cfg: &RunConfig) -> Result<(), RunError> {
    let torus = build_torus(&cfg.params(), cfg.epsilon).map_err(runtime)?;
    let run = run_induction(&torus, InductionOptions::default()).map_err(runtime)?;
    let est = lyapunov_estimate(&run.acc, 1.0).map_err(runtime)?;
    let strip = est.contracted_dir.and_then(|d| predict_strip(d, &cfg.params()).ok());
    let path = out_file(cfg, "renorm.jsonl")?;
    write_file(&path, |w| {
        let line = |w: &mut BufWriter<fs::File>, v: Value| writeln!(w, "{v}");
        line(w, json!({ "meta": meta(cfg), "transversal": run.transversal, "branches": run.iet0.branches.len() }))?;
        for l in &run.levels {
            line(w, json!({ "level": l }))?;
        }
        line(w, json!({ "estimate": est, "k_const": run.k_const, "theta_strip": strip.map(|s| s.0) }))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WidthPoint {
    pub events: usize,
    pub width: f64,
    pub along: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trapping {
    pub width_ratio: f64,
    pub along_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub version: &'static str,
    pub params: SystemParams,
    pub start: Vec2,
    pub events: usize,
    #[serde(rename = "Theta_fit")]
    pub theta_fit: Option<f64>,
    pub strip_width: Option<f64>,
    pub width_profile: Vec<WidthPoint>,
    pub trapping: Option<Trapping>,
    #[serde(rename = "Theta_predicted")]
    pub theta_predicted: Option<f64>,
    pub theta_top: Option<f64>,
    pub theta_top_stderr: Option<f64>,
    pub diffusion_slope: Option<f64>,
    pub diffusion_stderr: Option<f64>,
    pub in_o_eps: Option<bool>,
    pub audit_pass: Option<bool>,
    /// Steps that could not run, with the reason.
    pub notes: Vec<String>,
}

impl AnalysisReport {
    /// Reasons the run fails the acceptance checks.
    pub fn check_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.trapping {
            Some(t) if !t.pass => out.push(format!(
                "trapping: width ratio {:.4} (need <= 1.05), along ratio {:.3} (need >= 3)",
                t.width_ratio, t.along_ratio
            )),
            None => out.push("trapping: fewer than 100 events".into()),
            _ => {}
        }
        if let (Some(f), Some(p)) = (self.theta_fit, self.theta_predicted) {
            let d = (f - p).rem_euclid(std::f64::consts::PI);
            let gap = d.min(std::f64::consts::PI - d).to_degrees();
            if gap > 2.0 {
                out.push(format!("strip direction: fitted and predicted differ by {gap:.3} deg"));
            }
        }
        if self.audit_pass == Some(false) {
            out.push("decomposition audit failed".into());
        }
        out
    }
}

const AUDIT_EVENTS: usize = 20_000;

/// Plane trace, strip fit, growth exponent, renormalization and, on tori of
/// the open set, the decomposition audit.
pub fn analyze(params: &SystemParams, start: Vec2, up: bool, events: usize, stride: f64, epsilon: f64) -> Result<(AnalysisReport, TrajectoryRecord, Option<StripFit>), RunError> {
    let rec = trace_plane(params, start, up, events, stride).map_err(runtime)?;
    let mut notes = Vec::new();
    let fit = fit_strip(&rec.checkpoints).map_err(|e| notes.push(format!("strip fit: {e}"))).ok();
    let pts: Vec<Vec2> = rec.events.iter().map(|e| e.point).collect();
    let mut width_profile = Vec::new();
    if let Some(f) = &fit {
        let mut n = 10;
        while n < pts.len() {
            let (width, along) = extents_along(&pts[..n], f.theta);
            width_profile.push(WidthPoint { events: n, width, along });
            n *= 10;
        }
        let (width, along) = extents_along(&pts, f.theta);
        width_profile.push(WidthPoint { events: pts.len(), width, along });
    }
    let trapping = (pts.len() >= 100 && fit.is_some()).then(|| {
        let f = fit.as_ref().unwrap();
        let (w1, a1) = extents_along(&pts[..pts.len() / 10], f.theta);
        let (w2, a2) = extents_along(&pts, f.theta);
        let (width_ratio, along_ratio) = (w2 / w1, a2 / a1);
        Trapping { width_ratio, along_ratio, pass: width_ratio <= 1.05 && along_ratio >= 3.0 }
    });
    let diffusion = diffusion_exponent(&rec.checkpoints).map_err(|e| notes.push(format!("diffusion: {e}"))).ok();

    let (mut theta_predicted, mut theta_top, mut theta_top_stderr, mut in_o_eps, mut audit_pass) = (None, None, None, None, None);
    match build_torus(params, epsilon) {
        Err(e) => notes.push(format!("torus: {e}")),
        Ok(torus) => {
            in_o_eps = Some(torus.in_o_eps());
            match run_induction(&torus, InductionOptions::default()) {
                Err(e) => notes.push(format!("renormalization: {e}")),
                Ok(run) => {
                    if let Ok(est) = lyapunov_estimate(&run.acc, 1.0) {
                        theta_top = Some(est.theta_top);
                        theta_top_stderr = Some(est.stderr);
                        theta_predicted = est.contracted_dir.and_then(|d| predict_strip(d, params).ok()).map(|s| s.0);
                    }
                    if torus.in_o_eps() {
                        match trace_instrumented(&torus, &run.transversal, start, up, AUDIT_EVENTS.min(events)) {
                            Err(e) => notes.push(format!("audit trace: {e}")),
                            Ok(tr) => match decomposition_audit(&tr, &torus, &run) {
                                Ok(a) => audit_pass = Some(a.pass),
                                Err(e) => notes.push(format!("audit: {e}")),
                            },
                        }
                    }
                }
            }
        }
    }
    let report = AnalysisReport {
        version: VERSION,
        params: *params,
        start,
        events: rec.events.len(),
        theta_fit: fit.as_ref().map(|f| f.theta),
        strip_width: fit.as_ref().map(|f| f.width),
        width_profile,
        trapping,
        theta_predicted,
        theta_top,
        theta_top_stderr,
        diffusion_slope: diffusion.map(|d| d.0),
        diffusion_stderr: diffusion.map(|d| d.1),
        in_o_eps,
        audit_pass,
        notes,
    };
    Ok((report, rec, fit))
}

fn analyze_cmd(cfg: &RunConfig, check: bool) -> Result<(), RunError> {
    let (report, rec, fit) = analyze(&cfg.params(), cfg.start(), cfg.up, cfg.max_events, cfg.checkpoint_stride, cfg.epsilon)?;
    let failures = report.check_failures();
    write_json(cfg, "report.json", &json!({ "meta": meta(cfg), "analysis": report, "check_failures": failures }))?;
    write_svg(cfg, &rec, fit.as_ref())?;
    if check && !failures.is_empty() {
        return Err(RunError::CheckFailed(failures.join("; ")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Histogram {
    lo: f64,
    width: f64,
    counts: Vec<usize>,
    below: usize,
    above: usize,
    mean: Option<f64>,
}

fn histogram(vals: &[f64], lo: f64, width: f64, bins: usize) -> Histogram {
    let mut h = Histogram { lo, width, counts: vec![0; bins], below: 0, above: 0, mean: None };
    for &v in vals {
        let k = ((v - lo) / width).floor();
        if k < 0.0 {
            h.below += 1;
        } else if k as usize >= bins {
            h.above += 1;
        } else {
            h.counts[k as usize] += 1;
        }
    }
    if !vals.is_empty() {
        h.mean = Some(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    h
}

/// One sample of a sweep: its own stream of the seeded generator.
fn sweep_sample(cfg: &RunConfig, i: usize) -> Result<AnalysisReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let p = random_admissible(&mut rng, &SampleRanges::default()).ok_or("no admissible tuple drawn")?;
    let start = random_start(&mut rng, &p).ok_or("no free start point drawn")?;
    analyze(&p, start, cfg.up, cfg.max_events, cfg.checkpoint_stride, cfg.epsilon).map(|r| r.0).map_err(|e| e.to_string())
}

pub fn sweep(cfg: &RunConfig) -> Value {
    let results: Vec<Result<AnalysisReport, String>> = (0..cfg.samples).into_par_iter().map(|i| sweep_sample(cfg, i)).collect();
    let ok: Vec<&AnalysisReport> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let trapped = ok.iter().filter(|r| r.trapping.as_ref().is_some_and(|t| t.pass)).count();
    let tested = ok.iter().filter(|r| r.trapping.is_some()).count();
    let thetas: Vec<f64> = ok.iter().filter_map(|r| r.theta_top).collect();
    let slopes: Vec<f64> = ok.iter().filter_map(|r| r.diffusion_slope).collect();
    let samples: Vec<Value> = results
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(a) => json!({ "index": i, "analysis": a }),
            Err(e) => json!({ "index": i, "error": e }),
        })
        .collect();
    json!({
        "meta": meta(cfg),
        "samples_requested": cfg.samples,
        "samples_ok": ok.len(),
        "errors": results.len() - ok.len(),
        "trapping_tested": tested,
        "trapping_pass_fraction": if tested > 0 { Some(trapped as f64 / tested as f64) } else { None },
        "theta_top": histogram(&thetas, 0.0, 0.1, 15),
        "diffusion_slope": histogram(&slopes, 0.0, 0.1, 15),
        "samples": samples,
    })
}

fn sweep_cmd(cfg: &RunConfig) -> Result<(), RunError> {
    write_json(cfg, "report.json", &sweep(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_and_tails() {
        let h = histogram(&[-0.1, 0.05, 0.15, 0.19, 2.0], 0.0, 0.1, 15);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[1], 2);
        assert_eq!((h.below, h.above), (1, 1));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Config(ConfigError::Validation(String::new())).exit_code(), 2);
        assert_eq!(RunError::Runtime(String::new()).exit_code(), 3);
        assert_eq!(RunError::CheckFailed(String::new()).exit_code(), 4);
    }
}
