//! Flat `key = value` run configuration with presets and overrides.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::driver::EvolveConfig;
use crate::evolution::{TiEnvironment, UpdatePolicy};
use crate::model::{EvolutionKind, SweepStyle};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown preset `{0}` (known: convergence, size-sweep, size-independence, bond-sweep)")]
    Preset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Initial state of a fresh run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    /// All spins up.
    Product,
    /// Random tensors drawn from `seed`.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub h: f64,
    pub ell: usize,
    pub m: usize,
    pub dt: f64,
    pub t_final: f64,
    pub kind: EvolutionKind,
    pub trotter_order: u32,
    pub sweep_style: SweepStyle,
    pub ti: bool,
    pub inner_sweeps: usize,
    pub inner_tol: f64,
    pub t_switch: f64,
    pub level_repeats: usize,
    pub ti_environment: TiEnvironment,
    pub measure_every: usize,
    pub early_stop_tol: Option<f64>,
    pub init: InitialState,
    pub seed: u64,
    pub output: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Level counts for `study-scaling`.
    pub ells: Vec<usize>,
    /// Bond dimensions for `study-m`.
    pub ms: Vec<usize>,
    /// Concurrent runs inside a study.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let policy = UpdatePolicy::default();
        Self {
            model: "ising".into(),
            h: 1.0,
            ell: 2,
            m: 4,
            dt: 0.1,
            t_final: 10.0,
            kind: EvolutionKind::Euclidean,
            trotter_order: 2,
            sweep_style: SweepStyle::OddEven,
            ti: false,
            inner_sweeps: policy.inner_sweeps,
            inner_tol: policy.inner_tol,
            t_switch: policy.disentangler_enable_time,
            level_repeats: policy.level_repeats,
            ti_environment: policy.ti_environment,
            measure_every: 10,
            early_stop_tol: None,
            init: InitialState::Product,
            seed: 1,
            output: PathBuf::from("run.csv"),
            checkpoint: None,
            checkpoint_every: 0,
            ells: vec![3, 4, 5, 6],
            ms: vec![2, 3, 4],
            jobs: 1,
        }
    }
}

pub const PRESETS: &[&str] = &["convergence", "size-sweep", "size-independence", "bond-sweep"];

fn preset_lines(name: &str) -> Option<&'static str> {
    Some(match name {
        // Convergence with a late disentangler switch-on.
        "convergence" => "ell=4\nm=4\ndt=0.1\nt_final=60\nt_switch=5\nmeasure_every=5\noutput=convergence.csv",
        // Energy against system size in translation-invariant mode.
        "size-sweep" => "ti=true\nm=4\ndt=0.1\nt_final=60\nells=3,4,5,6,7,8,9\nmeasure_every=50\noutput=size-sweep.csv",
        // Size independence of the error.
        "size-independence" => {
            "ti=true\nm=4\ndt=0.1\nt_final=60\nells=3,4,5,6\nmeasure_every=50\noutput=size-independence.csv"
        }
        // Error against bond dimension at L = 32.
        "bond-sweep" => "ell=4\nti=true\ndt=0.1\nt_final=100\nms=2,3,4\nmeasure_every=100\noutput=bond-sweep.csv",
        _ => return None,
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}")))
        .collect()
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(preset_lines(name).ok_or_else(|| ConfigError::Preset(name.into()))?)?;
        Ok(c)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let err = |message: String| ConfigError::Value {
            key: key.into(),
            message,
        };
        macro_rules! num {
            () => {
                value.parse().map_err(|e| err(format!("`{value}`: {e}")))?
            };
        }
        let opt_f64 = || -> Result<Option<f64>, ConfigError> {
            if value.is_empty() || value == "none" {
                Ok(None)
            } else {
                value.parse().map(Some).map_err(|e| err(format!("`{value}`: {e}")))
            }
        };
        match key {
            "model" => self.model = value.into(),
            "h" => self.h = num!(),
            "ell" => self.ell = num!(),
            "m" => self.m = num!(),
            "dt" => self.dt = num!(),
            "t_final" => self.t_final = num!(),
            "kind" => self.kind = value.parse().map_err(err)?,
            "trotter_order" => self.trotter_order = num!(),
            "sweep_style" => self.sweep_style = value.parse().map_err(err)?,
            "ti" => self.ti = parse_bool(value).ok_or_else(|| err(format!("`{value}` is not a boolean")))?,
            "inner_sweeps" => self.inner_sweeps = num!(),
            "inner_tol" => self.inner_tol = num!(),
            "t_switch" => self.t_switch = num!(),
            "level_repeats" => self.level_repeats = num!(),
            "ti_environment" => self.ti_environment = value.parse().map_err(err)?,
            "measure_every" => self.measure_every = num!(),
            "early_stop_tol" => self.early_stop_tol = opt_f64()?,
            "init" => {
                self.init = match value {
                    "product" => InitialState::Product,
                    "random" => InitialState::Random,
                    _ => return Err(err(format!("`{value}` is not `product` or `random`"))),
                }
            }
            "seed" => self.seed = num!(),
            "output" => self.output = PathBuf::from(value),
            "checkpoint" => {
                self.checkpoint = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "checkpoint_every" => self.checkpoint_every = num!(),
            "ells" => self.ells = parse_list(value).map_err(err)?,
            "ms" => self.ms = parse_list(value).map_err(err)?,
            "jobs" => self.jobs = num!(),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies a whole file body; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.into(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(&mut self, items: impl IntoIterator<Item = &'a str>) -> Result<(), ConfigError> {
        for item in items {
            let (k, v) = item.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                text: item.into(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn policy(&self) -> UpdatePolicy {
        UpdatePolicy {
            inner_sweeps: self.inner_sweeps,
            inner_tol: self.inner_tol,
            disentangler_enable_time: self.t_switch,
            level_repeats: self.level_repeats,
            ti_environment: self.ti_environment,
        }
    }

    pub fn evolve_config(&self) -> EvolveConfig {
        EvolveConfig {
            dt: self.dt,
            t_final: self.t_final,
            kind: self.kind,
            order: self.trotter_order,
            style: self.sweep_style,
            policy: self.policy(),
            measure_every: self.measure_every,
            early_stop_tol: self.early_stop_tol,
            start_step: 0,
        }
    }

    pub fn sites(&self) -> usize {
        1usize.checked_shl(self.ell as u32 + 1).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.ell < 1 || self.ell > 24 {
            return bad(format!("ell must be in 1..=24, got {}", self.ell));
        }
        if self.m < 2 {
            return bad(format!("m must be at least the local dimension 2, got {}", self.m));
        }
        if !(self.h.is_finite() && self.h >= 0.0) {
            return bad(format!("h must be non-negative, got {}", self.h));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) || self.t_final < self.dt * (1.0 - 1e-12) {
            return bad(format!("t_final must be at least dt, got {}", self.t_final));
        }
        if !matches!(self.trotter_order, 1 | 2) {
            return bad(format!("trotter_order must be 1 or 2, got {}", self.trotter_order));
        }
        if self.measure_every == 0 {
            return bad("measure_every must be at least 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.ti && self.sweep_style != SweepStyle::OddEven {
            return bad("translation-invariant runs need sweep_style = odd-even".into());
        }
        self.policy()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if crate::model::registered_models().iter().all(|m| *m != self.model) {
            return bad(format!("unknown model `{}`", self.model));
        }
        Ok(())
    }

    /// Every field as `key = value` lines, in a fixed order.
    pub fn echo(&self) -> String {
        let opt = |x: Option<f64>| x.map_or("none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model", self.model.clone());
        kv("h", self.h.to_string());
        kv("ell", self.ell.to_string());
        kv("sites", self.sites().to_string());
        kv("m", self.m.to_string());
        kv("dt", self.dt.to_string());
        kv("t_final", self.t_final.to_string());
        kv("kind", self.kind.name().into());
        kv("trotter_order", self.trotter_order.to_string());
        kv("sweep_style", self.sweep_style.name().into());
        kv("ti", self.ti.to_string());
        kv("inner_sweeps", self.inner_sweeps.to_string());
        kv("inner_tol", self.inner_tol.to_string());
        kv("t_switch", self.t_switch.to_string());
        kv("level_repeats", self.level_repeats.to_string());
        kv("ti_environment", self.ti_environment.name().into());
        kv("measure_every", self.measure_every.to_string());
        kv("early_stop_tol", opt(self.early_stop_tol));
        kv(
            "init",
            match self.init {
                InitialState::Product => "product",
                InitialState::Random => "random",
            }
            .into(),
        );
        kv("seed", self.seed.to_string());
        kv("output", self.output.display().to_string());
        kv(
            "checkpoint",
            self.checkpoint
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        );
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("ells", fmt_list(&self.ells));
        kv("ms", fmt_list(&self.ms));
        kv("jobs", self.jobs.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::preset("convergence").unwrap();
        c.set("early_stop_tol", "1e-6").unwrap();
        c.set("checkpoint", "a.ckpt").unwrap();
        let mut d = RunConfig::default();
        let text: String = c
            .echo()
            .lines()
            .filter(|l| !l.starts_with("sites"))
            .map(|l| format!("{l}\n"))
            .collect();
        d.apply_text(&text).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn later_assignments_win_and_errors_are_specific() {
        let mut c = RunConfig::default();
        c.apply_text("m = 3 # comment\n\nm=5").unwrap();
        c.apply_overrides(["ell=3", "m=2"]).unwrap();
        assert_eq!((c.ell, c.m), (3, 2));
        assert_eq!(c.set("colour", "red"), Err(ConfigError::UnknownKey("colour".into())));
        assert!(matches!(c.apply_text("m 4"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(c.set("m", "four"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn validation_rejects_degenerate_runs() {
        for (k, v) in [
            ("t_final", "0"),
            ("m", "1"),
            ("ell", "0"),
            ("trotter_order", "3"),
            ("dt", "-1"),
        ] {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
        for p in PRESETS {
            RunConfig::preset(p).unwrap().validate().unwrap();
        }
    }
}
