//! Run configuration: a flat TOML file merged with command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wtb_core::{admissible, random_start, PlaneTracer, SystemParams, Vec2};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TracePlane,
    TraceSurface,
    Compare,
    Renorm,
    Analyze,
    Sweep,
}

/// Parses `x,y`.
pub fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let f = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([f(x)?, f(y)?])
}

/// Keys accepted both in the file and as flags.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Rectangle side along the tilted direction
    #[arg(long)]
    pub a: Option<f64>,
    /// Other rectangle side
    #[arg(long)]
    pub b: Option<f64>,
    /// Tilt angle in radians, strictly inside (0, π/2)
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// First lattice vector
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub e1: Option<[f64; 2]>,
    /// Second lattice vector
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub e2: Option<[f64; 2]>,
    /// Start point; random (from the seed) if omitted
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub start: Option<[f64; 2]>,
    /// Start downwards instead of upwards
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub down: Option<bool>,
    /// Maximum number of events
    #[arg(long)]
    pub events: Option<u64>,
    /// Arclength between checkpoints
    #[arg(long)]
    pub stride: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Margin of the open set of tori used by the audit
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of sweep samples
    #[arg(long)]
    pub samples: Option<usize>,
}

impl Settings {
    /// Reads a file of `key = value` lines; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let err = |msg: String| ConfigError::Parse { path: path.display().to_string(), msg };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| err(e.to_string().trim_end().to_string()))
    }

    /// Values set in `self` win.
    pub fn or(self, base: Settings) -> Settings {
        Settings {
            a: self.a.or(base.a),
            b: self.b.or(base.b),
            theta: self.theta.or(base.theta),
            e1: self.e1.or(base.e1),
            e2: self.e2.or(base.e2),
            start: self.start.or(base.start),
            down: self.down.or(base.down),
            events: self.events.or(base.events),
            stride: self.stride.or(base.stride),
            seed: self.seed.or(base.seed),
            epsilon: self.epsilon.or(base.epsilon),
            out: self.out.or(base.out),
            samples: self.samples.or(base.samples),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Absent for sweeps, which draw their own tuples.
    pub params: Option<SystemParams>,
    pub start: Option<Vec2>,
    pub up: bool,
    pub max_events: usize,
    pub checkpoint_stride: f64,
    pub seed: u64,
    pub epsilon: f64,
    /// Left out of the artifacts so that they depend only on the run.
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub samples: usize,
}

pub const DEFAULT_EVENTS: u64 = 100_000;

impl RunConfig {
    pub fn resolve(mode: Mode, s: Settings) -> Result<RunConfig, ConfigError> {
        let bad = |m: String| Err(ConfigError::Validation(m));
        let max_events = s.events.unwrap_or(DEFAULT_EVENTS);
        if max_events < 1 {
            return bad("events must be at least 1".into());
        }
        let checkpoint_stride = s.stride.unwrap_or(1.0);
        if !(checkpoint_stride > 0.0 && checkpoint_stride.is_finite()) {
            return bad(format!("stride must be positive, got {checkpoint_stride}"));
        }
        let epsilon = s.epsilon.unwrap_or(0.01);
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return bad(format!("epsilon must be non-negative, got {epsilon}"));
        }
        let samples = s.samples.unwrap_or(10);
        if samples < 1 {
            return bad("samples must be at least 1".into());
        }
        let geometry = [s.a.is_some(), s.b.is_some(), s.theta.is_some(), s.e1.is_some(), s.e2.is_some(), s.start.is_some()];
        let mut cfg = RunConfig {
            mode,
            params: None,
            start: s.start.map(|[x, y]| Vec2::new(x, y)),
            up: !s.down.unwrap_or(false),
            max_events: max_events as usize,
            checkpoint_stride,
            seed: s.seed.unwrap_or(0),
            epsilon,
            output_dir: s.out.unwrap_or_else(|| PathBuf::from(".")),
            samples,
        };
        if mode == Mode::Sweep {
            if geometry.iter().any(|&g| g) {
                return bad("sweep draws its own parameters and start points; drop a, b, theta, e1, e2 and start".into());
            }
            return Ok(cfg);
        }
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| ConfigError::Validation(format!("missing {k}")));
        let pair = |v: Option<[f64; 2]>, k: &str| {
            v.map(|[x, y]| Vec2::new(x, y)).ok_or_else(|| ConfigError::Validation(format!("missing {k}")))
        };
        let p = SystemParams::new(pair(s.e1, "e1")?, pair(s.e2, "e2")?, need(s.a, "a")?, need(s.b, "b")?, need(s.theta, "theta")?);
        p.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        if !admissible(&p).map_err(|e| ConfigError::Validation(e.to_string()))? {
            return bad("parameters are not admissible: rectangles overlap or touch".into());
        }
        let start = match cfg.start {
            Some(st) => {
                PlaneTracer::new(p, st, cfg.up).map_err(|e| ConfigError::Validation(e.to_string()))?;
                st
            }
            None => random_start(&mut ChaCha8Rng::seed_from_u64(cfg.seed), &p)
                .ok_or_else(|| ConfigError::Validation("no free start point found".into()))?,
        };
        cfg.params = Some(p);
        cfg.start = Some(start);
        Ok(cfg)
    }

    pub fn params(&self) -> SystemParams {
        self.params.expect("params are resolved for single runs")
    }

    pub fn start(&self) -> Vec2 {
        self.start.expect("start is resolved for single runs")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Settings {
        Settings { a: Some(1.0), b: Some(1.0), theta: Some(0.5236), e1: Some([10.0, 0.0]), e2: Some([0.0, 10.0]), ..Default::default() }
    }

    #[test]
    fn minimal_flags_fill_defaults() {
        let cfg = RunConfig::resolve(Mode::TracePlane, minimal()).unwrap();
        assert_eq!(cfg.max_events, DEFAULT_EVENTS as usize);
        assert_eq!(cfg.seed, 0);
        assert!(cfg.up);
        assert!(cfg.start.is_some());
        let again = RunConfig::resolve(Mode::TracePlane, minimal()).unwrap();
        assert_eq!(cfg.start, again.start);
    }

    #[test]
    fn zero_tilt_is_rejected() {
        let s = Settings { theta: Some(0.0), ..minimal() };
        let e = RunConfig::resolve(Mode::TracePlane, s).unwrap_err().to_string();
        assert!(e.contains("θ = 0"), "{e}");
    }

    #[test]
    fn overlapping_rectangles_are_rejected() {
        let s = Settings { a: Some(9.0), b: Some(9.0), ..minimal() };
        let e = RunConfig::resolve(Mode::TracePlane, s).unwrap_err().to_string();
        assert!(e.contains("not admissible"), "{e}");
    }

    #[test]
    fn flags_override_file_values() {
        let file: Settings = toml::from_str("a = 2.0\nevents = 5\nout = \"x\"\n").unwrap();
        let merged = Settings { a: Some(1.0), ..Default::default() }.or(file);
        assert_eq!(merged.a, Some(1.0));
        assert_eq!(merged.events, Some(5));
        assert_eq!(merged.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_line() {
        let e = toml::from_str::<Settings>("a = 1.0\ncolour = 3\n").unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("line 2"), "{e}");
    }

    #[test]
    fn pairs_parse() {
        assert_eq!(parse_pair("1.5, -2").unwrap(), [1.5, -2.0]);
        assert!(parse_pair("1.5").is_err());
    }
}
