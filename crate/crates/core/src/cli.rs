//! Batch commands behind the `tmera` binary: single runs streamed to CSV,
//! finite-size and bond-dimension studies, checkpoint inspection.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, InitialState, RunConfig};
use crate::driver::{evolve, Control, EvolveConfig, Observer, RunLog, StopReason};
use crate::evolution::SweepReport;
use crate::exact::CRITICAL_ENERGY_PER_SITE;
use crate::mera::{MeraGeometry, MeraState};
use crate::model::{model_by_name, Model};
use crate::observables::{measure, Measurement, Reference};
use crate::tensor::C64;

/// Environment variable that relocates relative output paths.
pub const OUTPUT_DIR_VAR: &str = "TMERA_OUTPUT_DIR";

pub const CSV_COLUMNS: &str =
    "step,tau,energy_total,energy_per_site,err_vs_ff,err_vs_ed,sz_mean,sxsx_mean,lambda_entropy,wall_seconds";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{message}")]
    Numerical {
        message: String,
        checkpoint: Option<PathBuf>,
    },
}

impl CliError {
    /// 1 for configuration and input problems, 2 for numerical aborts and
    /// failed validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical { .. } => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ckpt_err(path: &Path, e: CheckpointError) -> CliError {
    match e {
        CheckpointError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Input(format!("{}: {other}", path.display())),
    }
}

/// Resolves relative paths under `TMERA_OUTPUT_DIR` when it is set.
pub fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(dir) if path.is_relative() && !dir.is_empty() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Preset, then config file, then overrides.
pub fn load_config(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut c = match preset {
        Some(p) => RunConfig::preset(p)?,
        None => RunConfig::default(),
    };
    if let Some(f) = file {
        let text = std::fs::read_to_string(f).map_err(io_err(f))?;
        c.apply_text(&text)?;
    }
    c.apply_overrides(overrides.iter().map(String::as_str))?;
    Ok(c)
}

pub fn build_model(config: &RunConfig) -> Result<Box<dyn Model>, CliError> {
    let h = config.h;
    model_by_name(&config.model, &|k| (k == "h").then_some(h)).map_err(|e| CliError::Input(e.to_string()))
}

pub fn initial_state(config: &RunConfig, model: &dyn Model) -> Result<MeraState, CliError> {
    let g = MeraGeometry::new(config.ell, model.local_dim(), config.m).map_err(|e| CliError::Input(e.to_string()))?;
    let state = match config.init {
        InitialState::Product => {
            let mut up = vec![C64::new(0.0, 0.0); model.local_dim()];
            up[0] = C64::new(1.0, 0.0);
            MeraState::init_product(g, &up).map_err(|e| CliError::Input(e.to_string()))?
        }
        InitialState::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            MeraState::random(g, false, &mut rng)
        }
    };
    Ok(if config.ti { state.ti_promote() } else { state })
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

/// One CSV data line without the trailing newline.
pub fn csv_row(m: &Measurement, wall_seconds: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{:.3}",
        m.step,
        m.tau,
        m.energy_total,
        m.energy_per_site,
        opt(m.err_vs_ff),
        opt(m.err_vs_ed),
        m.sz_mean(),
        m.sxsx_mean(),
        m.lambda_entropy,
        wall_seconds
    )
}

/// `#`-prefixed configuration echo.
pub fn csv_header(config: &RunConfig) -> String {
    let mut s = format!("# tmera {}\n", env!("CARGO_PKG_VERSION"));
    for line in config.echo().lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

struct CsvObserver {
    out: BufWriter<File>,
    path: PathBuf,
    started: Instant,
    checkpoint: Option<(PathBuf, usize)>,
    dt: f64,
    failure: Option<CliError>,
    verbose: bool,
}

impl Observer for CsvObserver {
    fn measured(&mut self, row: &Measurement, _state: &MeraState) -> Control {
        let line = csv_row(row, self.started.elapsed().as_secs_f64());
        let res = writeln!(self.out, "{line}").and_then(|_| self.out.flush());
        if let Err(e) = res {
            self.failure = Some(io_err(&self.path)(e));
            return Control::Stop;
        }
        if self.verbose {
            eprintln!(
                "step {:>7}  tau {:>9.3}  E/L {:.12}{}",
                row.step,
                row.tau,
                row.energy_per_site,
                row.err_vs_ff.map_or(String::new(), |e| format!("  err {e:.3e}"))
            );
        }
        Control::Continue
    }

    fn stepped(&mut self, step: usize, _tau: f64, state: &MeraState, _r: &SweepReport) -> Control {
        if let Some((path, every)) = &self.checkpoint {
            if *every > 0 && step.is_multiple_of(*every) {
                if let Err(e) = checkpoint::save(path, state, step as u64, step as f64 * self.dt) {
                    self.failure = Some(ckpt_err(path, e));
                    return Control::Stop;
                }
            }
        }
        Control::Continue
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub log: RunLog,
    pub output: PathBuf,
    pub final_row: Option<Measurement>,
}

/// Runs one evolution, streaming measurements to `config.output`. With
/// `resume`, continues from a checkpoint and appends to an existing log.
pub fn run(config: &RunConfig, resume: Option<&Path>, verbose: bool) -> Result<RunSummary, CliError> {
    config.validate()?;
    let model = build_model(config)?;
    let (mut state, start) = match resume {
        Some(p) => {
            let c = checkpoint::load(p).map_err(|e| ckpt_err(p, e))?;
            let g = c.state.geometry();
            if (g.levels(), g.m(), g.d(), c.state.is_ti()) != (config.ell, config.m, model.local_dim(), config.ti) {
                return Err(CliError::Input(format!(
                    "checkpoint {} holds ell={} m={} ti={}, configuration asks for ell={} m={} ti={}",
                    p.display(),
                    g.levels(),
                    g.m(),
                    c.state.is_ti(),
                    config.ell,
                    config.m,
                    config.ti
                )));
            }
            (c.state, c.step as usize)
        }
        None => (initial_state(config, model.as_ref())?, 0),
    };
    let evolve_cfg = EvolveConfig {
        start_step: start,
        ..config.evolve_config()
    };
    evolve_cfg
        .validate()
        .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;

    let output = resolve(&config.output);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let append = start > 0 && output.exists();
    let file = if append {
        OpenOptions::new().append(true).open(&output)
    } else {
        File::create(&output)
    }
    .map_err(io_err(&output))?;
    let mut out = BufWriter::new(file);
    if !append {
        writeln!(out, "{}{CSV_COLUMNS}", csv_header(config)).map_err(io_err(&output))?;
    }
    let ckpt_path = config.checkpoint.as_deref().map(resolve);
    let mut obs = CsvObserver {
        out,
        path: output.clone(),
        started: Instant::now(),
        checkpoint: ckpt_path.clone().map(|p| (p, config.checkpoint_every)),
        dt: config.dt,
        failure: None,
        verbose,
    };
    let result = evolve(&mut state, model.as_ref(), &evolve_cfg, &mut obs);
    if let Some(e) = obs.failure.take() {
        return Err(e);
    }
    match result {
        Ok(log) => {
            if let Some(p) = &ckpt_path {
                checkpoint::save(p, &state, log.step as u64, log.tau).map_err(|e| ckpt_err(p, e))?;
            }
            let final_row = log.rows.last().cloned();
            Ok(RunSummary { log, output, final_row })
        }
        Err(e) => {
            let path = ckpt_path.unwrap_or_else(|| output.with_extension("ckpt"));
            let saved = checkpoint::save(&path, &state, e.step as u64, e.tau).is_ok();
            Err(CliError::Numerical {
                message: format!(
                    "numerical abort: {e}{}",
                    if saved {
                        format!(" (state after step {} saved to {})", e.step, path.display())
                    } else {
                        String::new()
                    }
                ),
                checkpoint: saved.then_some(path),
            })
        }
    }
}

/// Final energy of one run, without CSV output.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyPoint {
    pub ell: usize,
    pub sites: usize,
    pub m: usize,
    pub energy_per_site: f64,
    /// Per-site deviation from the exact ring energy.
    pub delta_e: Option<f64>,
    pub steps: usize,
    pub wall_seconds: f64,
}

fn study_point(config: &RunConfig) -> Result<StudyPoint, CliError> {
    config.validate()?;
    let model = build_model(config)?;
    let mut state = initial_state(config, model.as_ref())?;
    let started = Instant::now();
    let evolve_cfg = config.evolve_config();
    let log = evolve(&mut state, model.as_ref(), &evolve_cfg, &mut ()).map_err(|e| CliError::Numerical {
        message: format!("ell={} m={}: {e}", config.ell, config.m),
        checkpoint: None,
    })?;
    let sites = config.sites();
    let reference = Reference {
        free_fermion: model.free_fermion_energy(sites),
        ed: None,
    };
    let row = match log.rows.last() {
        Some(r) if r.step == log.step => r.clone(),
        _ => measure(&state, model.as_ref(), log.step, log.tau, &reference).map_err(|e| CliError::Numerical {
            message: e.to_string(),
            checkpoint: None,
        })?,
    };
    Ok(StudyPoint {
        ell: config.ell,
        sites,
        m: config.m,
        energy_per_site: row.energy_per_site,
        delta_e: row.err_vs_ff,
        steps: log.step,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs independent configurations on up to `jobs` threads; results keep
/// the input order.
fn run_all(configs: &[RunConfig], jobs: usize, verbose: bool) -> Result<Vec<StudyPoint>, CliError> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<StudyPoint, CliError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(configs.len()).max(1) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(c) = configs.get(k) else { break };
                let r = study_point(c);
                if verbose {
                    if let Ok(p) = &r {
                        eprintln!(
                            "ell={} m={} E/L={:.12} ({:.1}s)",
                            p.ell, p.m, p.energy_per_site, p.wall_seconds
                        );
                    }
                }
                results.lock().expect("results lock")[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every configuration ran"))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Clone, Debug)]
pub struct ScalingSummary {
    pub points: Vec<StudyPoint>,
    /// `max / min` of `|delta_e|` over the study.
    pub spread: Option<f64>,
    pub csv: String,
}

/// Translation-invariant runs over `config.ells`.
pub fn study_scaling(config: &RunConfig, verbose: bool) -> Result<ScalingSummary, CliError> {
    if config.ells.is_empty() {
        return Err(ConfigError::Invalid("ells is empty".into()).into());
    }
    let configs: Vec<RunConfig> = config
        .ells
        .iter()
        .map(|&ell| RunConfig {
            ell,
            ti: true,
            ..config.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let points = run_all(&configs, config.jobs, verbose)?;
    let mut csv = csv_header(config);
    csv.push_str("ell,sites,m,energy_per_site,err_vs_inf,delta_e,steps,wall_seconds\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            p.ell,
            p.sites,
            p.m,
            p.energy_per_site,
            p.energy_per_site - CRITICAL_ENERGY_PER_SITE,
            opt(p.delta_e),
            p.steps,
            p.wall_seconds
        ));
    }
    let errs: Option<Vec<f64>> = points.iter().map(|p| p.delta_e.map(f64::abs)).collect();
    let spread = errs.filter(|e| !e.is_empty()).map(|e| {
        let max = e.iter().cloned().fold(f64::MIN, f64::max);
        let min = e.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    });
    if let Some(r) = spread {
        csv.push_str(&format!("# delta_e max/min = {r}\n"));
    }
    write_text(&resolve(&config.output), &csv)?;
    Ok(ScalingSummary { points, spread, csv })
}

/// Least-squares line through `(x, ln y)`: `(slope, intercept, rms residual)`.
pub fn log_linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(x, y)| (x, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Some((slope, intercept, rms))
}

#[derive(Clone, Debug)]
pub struct BondSummary {
    pub points: Vec<StudyPoint>,
    pub strictly_decreasing: bool,
    /// Slope, intercept and rms residual of `ln delta_e` against `m`.
    pub fit: Option<(f64, f64, f64)>,
    pub csv: String,
}

/// Runs over `config.ms` at fixed `config.ell`.
pub fn study_m(config: &RunConfig, verbose: bool) -> Result<BondSummary, CliError> {
    if config.ms.is_empty() {
        return Err(ConfigError::Invalid("ms is empty".into()).into());
    }
    let configs: Vec<RunConfig> = config.ms.iter().map(|&m| RunConfig { m, ..config.clone() }).collect();
    for c in &configs {
        c.validate()?;
    }
    let points = run_all(&configs, config.jobs, verbose)?;
    let mut csv = csv_header(config);
    csv.push_str("m,sites,energy_per_site,delta_e,steps,wall_seconds\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            p.m,
            p.sites,
            p.energy_per_site,
            opt(p.delta_e),
            p.steps,
            p.wall_seconds
        ));
    }
    let errs: Vec<Option<f64>> = points.iter().map(|p| p.delta_e).collect();
    let strictly_decreasing =
        errs.iter().all(Option::is_some) && errs.windows(2).all(|w| w[1].unwrap().abs() < w[0].unwrap().abs());
    let fit = log_linear_fit(
        &points
            .iter()
            .filter_map(|p| p.delta_e.map(|e| (p.m as f64, e.abs())))
            .collect::<Vec<_>>(),
    );
    csv.push_str(&format!("# strictly decreasing = {strictly_decreasing}\n"));
    if let Some((slope, intercept, rms)) = fit {
        csv.push_str(&format!(
            "# ln(delta_e) fit: slope = {slope}, intercept = {intercept}, rms residual = {rms}\n"
        ));
    }
    write_text(&resolve(&config.output), &csv)?;
    Ok(BondSummary {
        points,
        strictly_decreasing,
        fit,
        csv,
    })
}

/// Human-readable validation report; `Err` with exit code 2 when the state
/// violates its constraints.
pub fn validate_state(path: &Path) -> Result<String, CliError> {
    let c = checkpoint::load(path).map_err(|e| ckpt_err(path, e))?;
    let g = c.state.geometry();
    let report = c.state.validate();
    let mut s = format!(
        "{}: ell={} sites={} m={} ti={} step={} tau={}\n",
        path.display(),
        g.levels(),
        g.sites(),
        g.m(),
        c.state.is_ti(),
        c.step,
        c.tau
    );
    s.push_str(&format!(
        "tensors={} max_deviation={:.3e} lambda_deviation={:.3e}\n",
        report.tensors.len(),
        report.max_deviation(),
        report.lambda_deviation
    ));
    if let Some(w) = report.worst() {
        s.push_str(&format!(
            "worst: {:?} level {} position {} ({:.3e})\n",
            w.kind, w.level, w.position, w.deviation
        ));
    }
    if report.passed() {
        s.push_str("valid\n");
        Ok(s)
    } else {
        Err(CliError::Numerical {
            message: format!("{s}invalid"),
            checkpoint: None,
        })
    }
}

/// Largest ring `expand` will write.
pub const EXPAND_MAX_SITES: usize = 12;

/// Dense amplitudes as `index,re,im` lines (site 0 is the most significant
/// digit, state 0 is spin up).
pub fn expand(path: &Path) -> Result<String, CliError> {
    let c = checkpoint::load(path).map_err(|e| ckpt_err(path, e))?;
    let sites = c.state.geometry().sites();
    if sites > EXPAND_MAX_SITES {
        return Err(CliError::Input(format!(
            "dense expansion is limited to {EXPAND_MAX_SITES} sites, state has {sites}"
        )));
    }
    let psi = c.state.expand_dense().map_err(|e| CliError::Input(e.to_string()))?;
    let mut s = format!("# sites = {sites}\n# step = {}\nindex,re,im\n", c.step);
    for (k, z) in psi.iter().enumerate() {
        s.push_str(&format!("{k},{},{}\n", z.re, z.im));
    }
    Ok(s)
}

pub fn stop_reason_name(r: StopReason) -> &'static str {
    match r {
        StopReason::Completed => "completed",
        StopReason::Converged => "converged",
        StopReason::Observer => "stopped",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 1);
        assert_eq!(
            CliError::Numerical {
                message: "x".into(),
                checkpoint: None
            }
            .exit_code(),
            2
        );
    }

    #[test]
    fn fit_recovers_an_exponential() {
        let pts: Vec<(f64, f64)> = (2..6).map(|m| (m as f64, 3.0 * (-1.5 * m as f64).exp())).collect();
        let (slope, intercept, rms) = log_linear_fit(&pts).unwrap();
        assert!((slope + 1.5).abs() < 1e-12 && (intercept - 3f64.ln()).abs() < 1e-12 && rms < 1e-12);
    }

    #[test]
    fn csv_row_leaves_missing_references_empty() {
        let m = Measurement {
            step: 3,
            tau: 0.3,
            energy_total: -8.0,
            energy_per_site: -1.0,
            err_vs_ff: Some(0.25),
            err_vs_ed: None,
            sz: vec![1.0],
            sxsx: vec![0.0],
            lambda_entropy: 0.0,
        };
        assert_eq!(csv_row(&m, 1.5), "3,0.3,-8,-1,0.25,,1,0,0,1.500");
    }
}
