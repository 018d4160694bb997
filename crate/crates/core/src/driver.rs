//! Repeated Trotter steps with periodic measurements.

use crate::evolution::{sweep, EvolutionError, SweepReport, UpdatePolicy};
use crate::mera::MeraState;
use crate::model::{trotter_schedule_with, EvolutionKind, GateSchedule, Model, SweepStyle};
use crate::observables::{measure, Measurement, Reference};

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveConfig {
    pub dt: f64,
    pub t_final: f64,
    pub kind: EvolutionKind,
    pub order: u32,
    pub style: SweepStyle,
    pub policy: UpdatePolicy,
    /// Measure every this many steps (step 0 included).
    pub measure_every: usize,
    /// Stop once `|dE/dtau|` per site between two measurements drops below
    /// this value.
    pub early_stop_tol: Option<f64>,
    /// Step count already completed, when resuming.
    pub start_step: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            t_final: 10.0,
            kind: EvolutionKind::Euclidean,
            order: 2,
            style: SweepStyle::OddEven,
            policy: UpdatePolicy::default(),
            measure_every: 10,
            early_stop_tol: None,
            start_step: 0,
        }
    }
}

impl EvolveConfig {
    /// Total number of steps, `round(t_final / dt)`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |msg: String| Err(EvolutionError::Policy(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt * (1.0 - 1e-12)) {
            return bad(format!("t_final must be at least dt, got {}", self.t_final));
        }
        if self.measure_every == 0 {
            return bad("measurement interval must be at least 1".into());
        }
        if let Some(tol) = self.early_stop_tol {
            if !(tol > 0.0) {
                return bad(format!("early-stop tolerance must be positive, got {tol}"));
            }
        }
        if self.start_step > self.steps() {
            return bad(format!(
                "start step {} is past the final step {}",
                self.start_step,
                self.steps()
            ));
        }
        self.policy.validate()
    }

    pub fn schedule(&self, model: &dyn Model, sites: usize) -> Result<GateSchedule, EvolutionError> {
        let terms = model.terms(sites).map_err(|e| EvolutionError::Policy(e.to_string()))?;
        trotter_schedule_with(&terms, self.dt, self.kind, self.order, self.style)
            .map_err(|e| EvolutionError::Policy(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hooks called by [`evolve`].
pub trait Observer {
    fn measured(&mut self, _row: &Measurement, _state: &MeraState) -> Control {
        Control::Continue
    }

    /// After every completed step.
    fn stepped(&mut self, _step: usize, _tau: f64, _state: &MeraState, _report: &SweepReport) -> Control {
        Control::Continue
    }
}

impl Observer for () {}

impl<F: FnMut(&Measurement, &MeraState) -> Control> Observer for F {
    fn measured(&mut self, row: &Measurement, state: &MeraState) -> Control {
        self(row, state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    Converged,
    Observer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub rows: Vec<Measurement>,
    /// Last completed step.
    pub step: usize,
    pub tau: f64,
    pub stop: StopReason,
    /// `-ln ||U psi||^2 / (2 dt L)` from the last Euclidean step.
    pub norm_energy_estimate: Option<f64>,
}

/// A failed step; the state is left as it was after step `step`.
#[derive(Debug, thiserror::Error)]
#[error("step {} failed: {source}", .step + 1)]
pub struct EvolveError {
    pub step: usize,
    pub tau: f64,
    #[source]
    pub source: EvolutionError,
    pub rows: Vec<Measurement>,
}

/// Runs `config.steps() - config.start_step` Trotter steps.
pub fn evolve(
    state: &mut MeraState,
    model: &dyn Model,
    config: &EvolveConfig,
    observer: &mut dyn Observer,
) -> Result<RunLog, EvolveError> {
    let fail = |step: usize, source: EvolutionError, rows: Vec<Measurement>| EvolveError {
        step,
        tau: step as f64 * config.dt,
        source,
        rows,
    };
    let start = config.start_step;
    config.validate().map_err(|e| fail(start, e, Vec::new()))?;
    let sites = state.geometry().sites();
    let schedule = config.schedule(model, sites).map_err(|e| fail(start, e, Vec::new()))?;
    let reference = Reference::for_model(model, sites);
    let total = config.steps();
    let mut log = RunLog {
        rows: Vec::new(),
        step: start,
        tau: start as f64 * config.dt,
        stop: StopReason::Completed,
        norm_energy_estimate: None,
    };
    let mut previous: Option<(f64, f64)> = None;

    let mut observe = |observer: &mut dyn Observer,
                       state: &MeraState,
                       step: usize,
                       log: &mut RunLog|
     -> Result<Option<StopReason>, EvolutionError> {
        let tau = step as f64 * config.dt;
        let row = measure(state, model, step, tau, &reference)?;
        let converged = match (previous, config.early_stop_tol) {
            (Some((t0, e0)), Some(tol)) if tau > t0 => ((row.energy_per_site - e0) / (tau - t0)).abs() < tol,
            _ => false,
        };
        previous = Some((tau, row.energy_per_site));
        let control = observer.measured(&row, state);
        log.rows.push(row);
        Ok(if control == Control::Stop {
            Some(StopReason::Observer)
        } else if converged {
            Some(StopReason::Converged)
        } else {
            None
        })
    };

    if start == 0 {
        match observe(observer, state, 0, &mut log) {
            Ok(Some(reason)) => {
                log.stop = reason;
                return Ok(log);
            }
            Ok(None) => {}
            Err(e) => return Err(fail(0, e, log.rows)),
        }
    }
    for step in start + 1..=total {
        let backup = state.clone();
        let time = (step - 1) as f64 * config.dt;
        let report = match sweep(state, &schedule, time, &config.policy) {
            Ok(r) => r,
            Err(e) => {
                *state = backup;
                return Err(fail(step - 1, e, log.rows));
            }
        };
        log.step = step;
        log.tau = step as f64 * config.dt;
        if config.kind == EvolutionKind::Euclidean {
            log.norm_energy_estimate = Some(-report.log_norm_sq / (2.0 * config.dt * sites as f64));
        }
        if observer.stepped(step, log.tau, state, &report) == Control::Stop {
            log.stop = StopReason::Observer;
            return Ok(log);
        }
        if step % config.measure_every == 0 {
            match observe(observer, state, step, &mut log) {
                Ok(Some(reason)) => {
                    log.stop = reason;
                    return Ok(log);
                }
                Ok(None) => {}
                Err(e) => return Err(fail(step, e, log.rows)),
            }
        }
    }
    Ok(log)
}
