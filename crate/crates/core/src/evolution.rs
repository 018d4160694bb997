//! Gate absorption: after a two-site gate `U`, the tensors in the gate's
//! causal cone are re-optimized so that the new state maximizes
//! `|<new| U |old>|`.
//!
//! Levels are processed from the bottom up. At each level the in-cone
//! disentanglers and then the isometries are replaced, one at a time, by
//! the polar factor of their environment; at level 1 the two isometries and
//! the top weights are replaced together through a singular value
//! decomposition of their joint environment. Once a level is done the gate
//! is raised through it with the new bra tensors and becomes the operator
//! of the next level.

use nalgebra::DMatrix;

use crate::cone::{
    ascend, cone_of, contract_level, descend_all, trace_with, ConeError, ConeTensors, Lower, Omit, Upper,
};
use crate::mera::{chi_matricization, gamma_matricization, MeraState};
use crate::model::GateSchedule;
use crate::tensor::{polar_matrix, svd_matrix, Matricization, Tensor, TensorError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvolutionError {
    #[error("invalid update policy: {0}")]
    Policy(String),
    #[error("non-finite fidelity at level {level} while updating {tensor}")]
    NonFinite { level: usize, tensor: String },
    #[error("{0}")]
    Mode(String),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mera(#[from] crate::mera::MeraError),
}

pub type Result<T> = std::result::Result<T, EvolutionError>;

/// How environments of shared tensors are formed in translation-invariant
/// mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TiEnvironment {
    /// Density matrices averaged over all positions of each level.
    Averaged,
    /// Density matrices of the single cone of the bond at site 0.
    Single,
}

impl std::str::FromStr for TiEnvironment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "averaged" => Ok(Self::Averaged),
            "single" => Ok(Self::Single),
            _ => Err(format!("unknown environment mode `{s}`")),
        }
    }
}

impl TiEnvironment {
    pub fn name(self) -> &'static str {
        match self {
            TiEnvironment::Averaged => "averaged",
            TiEnvironment::Single => "single",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdatePolicy {
    /// Alternating passes over the tensors of one level.
    pub inner_sweeps: usize,
    /// Relative fidelity change below which a level stops early.
    pub inner_tol: f64,
    /// Simulated time before which disentanglers are frozen.
    pub disentangler_enable_time: f64,
    /// Passes over the whole level sequence per gate (general mode only).
    pub level_repeats: usize,
    pub ti_environment: TiEnvironment,
}

impl Default for UpdatePolicy {
    fn default() -> Self {
        Self {
            inner_sweeps: 2,
            inner_tol: 1e-9,
            disentangler_enable_time: 0.0,
            level_repeats: 1,
            ti_environment: TiEnvironment::Single,
        }
    }
}

impl UpdatePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.inner_sweeps == 0 {
            return Err(EvolutionError::Policy("inner_sweeps must be at least 1".into()));
        }
        if !(self.inner_tol > 0.0) {
            return Err(EvolutionError::Policy(format!(
                "inner_tol must be positive, got {}",
                self.inner_tol
            )));
        }
        if self.level_repeats == 0 {
            return Err(EvolutionError::Policy("level_repeats must be at least 1".into()));
        }
        if !self.disentangler_enable_time.is_finite() || self.disentangler_enable_time < 0.0 {
            return Err(EvolutionError::Policy(format!(
                "disentangler_enable_time must be finite and non-negative, got {}",
                self.disentangler_enable_time
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelFidelity {
    pub level: usize,
    /// `|F|` before the first and after the last update of the level.
    pub before: f64,
    pub after: f64,
    pub passes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateUpdateReport {
    /// 1-based bond index (bond `k` joins sites `k` and `k + 1`).
    pub bond: usize,
    pub levels: Vec<LevelFidelity>,
    /// `|F|` after every single tensor update, in order.
    pub history: Vec<f64>,
    /// `|<new| U |old>| / ||U |old>||`.
    pub fidelity: f64,
    /// `||U |old>||^2`, the squared norm removed by renormalization.
    pub norm_sq: f64,
}

impl GateUpdateReport {
    /// Largest drop of `|F|` between consecutive updates.
    pub fn max_decrease(&self) -> f64 {
        self.history.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

fn check_finite(f: C64, level: usize, tensor: impl FnOnce() -> String) -> Result<()> {
    if f.re.is_finite() && f.im.is_finite() {
        Ok(())
    } else {
        Err(EvolutionError::NonFinite {
            level,
            tensor: tensor(),
        })
    }
}

/// Polar factor of `env + eps * e^{i phi} old`, where `phi` is the phase of
/// `Tr(old^dagger env)` and `eps = 1e-10 ||env||`. The shift selects `old`
/// among equally good candidates; an environment already of the form
/// `old * P` returns `old`.
pub fn regularized_polar(env: &Tensor, old: &Tensor, m: &Matricization) -> Result<Tensor> {
    let scale = env.norm();
    if !env.is_finite() {
        return Err(TensorError::NonFinite.into());
    }
    if scale == 0.0 {
        return Ok(old.clone());
    }
    let f = old.inner(env);
    let phase = if f.norm() > 0.0 {
        f / f.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let mut b = env.clone();
    b.axpy(phase * (1e-10 * scale), old)?;
    let v = polar_matrix(&b.to_matrix(m)?)?;
    Ok(Tensor::from_matrix(old.dims(), &v)?)
}

/// Best replacement of the level-1 isometries and top weights for the
/// joint environment `v` (legs: the four lower sites of level 1).
/// Returns `None` when the current tensors are already optimal.
pub(crate) fn schmidt_step(v: &Tensor, current: C64, keep: usize) -> Result<Option<(Tensor, Tensor, Vec<f64>, f64)>> {
    let dims = v.dims().to_vec();
    let mat = v.to_matrix(&Matricization::split(4, 2))?;
    let (mut u, s, mut w) = svd_matrix(&mat)?;
    let kept = &s[..keep.min(s.len())];
    let norm = kept.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(TensorError::NonFinite.into());
    }
    if current.norm() >= norm * (1.0 - 1e-13) {
        return Ok(None);
    }
    for k in 0..keep {
        fix_column_phase(&mut u, &mut w, k);
    }
    let rows = u.nrows();
    let g0 = DMatrix::from_fn(
        rows,
        keep,
        |r, c| if c < s.len() { u[(r, c)] } else { C64::new(0.0, 0.0) },
    );
    let g1 = DMatrix::from_fn(w.nrows(), keep, |r, c| {
        if c < s.len() {
            w[(r, c)].conj()
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let mut lambda: Vec<f64> = kept.iter().map(|x| x / norm).collect();
    lambda.resize(keep, 0.0);
    let g0 = Tensor::from_matrix(&[dims[0], dims[1], keep], &g0)?;
    let g1 = Tensor::from_matrix(&[dims[2], dims[3], keep], &g1)?;
    Ok(Some((g0, g1, lambda, norm)))
}

/// Makes the first non-negligible entry of column `k` of `u` real positive,
/// rotating column `k` of `w` alike so that `u w^dagger` is unchanged.
fn fix_column_phase(u: &mut DMatrix<C64>, w: &mut DMatrix<C64>, k: usize) {
    let Some(r) = (0..u.nrows()).find(|&r| u[(r, k)].norm() > 1e-12) else {
        return;
    };
    let z = u[(r, k)];
    let phase = z.conj() / z.norm();
    u.column_mut(k).iter_mut().for_each(|x| *x *= phase);
    w.column_mut(k).iter_mut().for_each(|x| *x *= phase);
}

fn gate_norm_sq(gate: &Tensor, rho: &Tensor) -> Result<f64> {
    let udu = crate::tensor::contract(&gate.conj(), gate, &[(0, 0), (1, 1)])?;
    Ok(trace_with(&udu, rho).re)
}

/// Absorbs `gate` (legs `(out l, out r, in l, in r)`) acting on physical
/// sites `left_site` and `left_site + 1` into a general-mode state.
pub fn apply_gate(
    state: &mut MeraState,
    gate: &Tensor,
    left_site: usize,
    time: f64,
    policy: &UpdatePolicy,
) -> Result<GateUpdateReport> {
    policy.validate()?;
    if state.is_ti() {
        return Err(EvolutionError::Mode(
            "single-gate updates need a general-mode state; use layer updates for shared tensors".into(),
        ));
    }
    let g = *state.geometry();
    let d = g.d();
    if gate.dims() != [d, d, d, d] {
        return Err(ConeError::Operator {
            expected: vec![d; 4],
            got: gate.dims().to_vec(),
        }
        .into());
    }
    let cone = cone_of(&g, left_site)?;
    let ket = ConeTensors::take(state, &cone);
    let mut bra = ket.clone();
    let chis_on = time >= policy.disentangler_enable_time;
    let top = g.levels();
    let mut levels = Vec::new();
    let mut history = Vec::new();
    let mut norm_sq = f64::NAN;
    let mut f_last = C64::new(0.0, 0.0);

    for _ in 0..policy.level_repeats {
        let rho = descend_all(&cone, &ket, &bra)?;
        if norm_sq.is_nan() {
            norm_sq = gate_norm_sq(gate, &rho[top - 1])?;
        }
        let mut op = gate.clone();
        for i in (1..=top).rev() {
            let lc = cone.level(i);
            let mut before = None;
            let mut f = C64::new(0.0, 0.0);
            let mut passes = 0;
            for _ in 0..policy.inner_sweeps {
                let prev = f;
                passes += 1;
                if chis_on {
                    for &j in &lc.chis {
                        let e = {
                            let upper = upper_of(i, &ket, &bra, &rho);
                            contract_level(
                                lc,
                                ket.level(i),
                                bra.level(i),
                                upper,
                                Lower::Operator(&op),
                                Omit::Chi(j),
                            )?
                        };
                        let old = bra.level(i).chi(j);
                        let f_old = old.inner(&e);
                        check_finite(f_old, i, || format!("disentangler {j}"))?;
                        before.get_or_insert(f_old.norm());
                        let x = regularized_polar(&e, old, &chi_matricization())?;
                        f = x.inner(&e);
                        check_finite(f, i, || format!("disentangler {j}"))?;
                        bra.level_mut(i).set_chi(j, x);
                        history.push(f.norm());
                    }
                }
                if i > 1 {
                    for &c in &lc.gammas {
                        let e = {
                            let upper = upper_of(i, &ket, &bra, &rho);
                            contract_level(
                                lc,
                                ket.level(i),
                                bra.level(i),
                                upper,
                                Lower::Operator(&op),
                                Omit::Gamma(c),
                            )?
                        };
                        let old = bra.level(i).gamma(c);
                        let f_old = old.inner(&e);
                        check_finite(f_old, i, || format!("isometry {c}"))?;
                        before.get_or_insert(f_old.norm());
                        let x = regularized_polar(&e, old, &gamma_matricization())?;
                        f = x.inner(&e);
                        check_finite(f, i, || format!("isometry {c}"))?;
                        bra.level_mut(i).set_gamma(c, x);
                        history.push(f.norm());
                    }
                } else {
                    let v = contract_level(
                        lc,
                        ket.level(1),
                        bra.level(1),
                        Upper::Top {
                            ket: &ket.lambda,
                            bra: &bra.lambda,
                        },
                        Lower::Operator(&op),
                        Omit::Top,
                    )?;
                    let current = top_overlap(&bra, &v)?;
                    check_finite(current, 1, || "top pair".into())?;
                    before.get_or_insert(current.norm());
                    f = current;
                    if let Some((g0, g1, lambda, norm)) = schmidt_step(&v, current, bra.lambda.len())? {
                        bra.level_mut(1).set_gamma(0, g0);
                        bra.level_mut(1).set_gamma(1, g1);
                        bra.lambda = lambda;
                        f = C64::new(norm, 0.0);
                    }
                    history.push(f.norm());
                }
                if passes > 1 && (f.norm() - prev.norm()).abs() <= policy.inner_tol * f.norm() {
                    break;
                }
            }
            levels.push(LevelFidelity {
                level: i,
                before: before.unwrap_or(f.norm()),
                after: f.norm(),
                passes,
            });
            if i > 1 {
                op = ascend(lc, ket.level(i), bra.level(i), &op)?;
            }
            f_last = f;
        }
    }
    bra.write_back(state, &cone)?;
    let fidelity = if norm_sq > 0.0 {
        f_last.norm() / norm_sq.sqrt()
    } else {
        0.0
    };
    Ok(GateUpdateReport {
        bond: left_site + 1,
        levels,
        history,
        fidelity,
        norm_sq,
    })
}

fn upper_of<'a>(level: usize, ket: &'a ConeTensors, bra: &'a ConeTensors, rho: &'a [Tensor]) -> Upper<'a> {
    if level == 1 {
        Upper::Top {
            ket: &ket.lambda,
            bra: &bra.lambda,
        }
    } else {
        Upper::Rho(&rho[level - 2])
    }
}

/// `Tr(top^dagger v)` for the current level-1 isometries and weights.
fn top_overlap(bra: &ConeTensors, v: &Tensor) -> Result<C64> {
    let l1 = bra.level(1);
    let top = top_state(l1.gamma(0), l1.gamma(1), &bra.lambda)?;
    Ok(top.inner(v))
}

/// `sum_a lambda_a g0[.., .., a] g1[.., .., a]` with legs of `g0` then `g1`.
pub(crate) fn top_state(g0: &Tensor, g1: &Tensor, lambda: &[f64]) -> Result<Tensor> {
    let mut scaled = g0.clone();
    let k = lambda.len();
    for (idx, z) in scaled.data_mut().iter_mut().enumerate() {
        *z *= lambda[idx % k];
    }
    Ok(crate::tensor::contract(&scaled, g1, &[(2, 2)])?)
}

/// Per-sweep totals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub gates: Vec<GateUpdateReport>,
    /// Sum of `ln ||U psi||^2` over the sweep.
    pub log_norm_sq: f64,
    /// Smallest normalized gate fidelity of the sweep.
    pub min_fidelity: f64,
}

/// Applies one Trotter step. General-mode states absorb every gate in
/// schedule order; translation-invariant states absorb each parity layer
/// in one shared update.
pub fn sweep(state: &mut MeraState, schedule: &GateSchedule, time: f64, policy: &UpdatePolicy) -> Result<SweepReport> {
    if state.is_ti() {
        return crate::ti::sweep_ti(state, schedule, time, policy);
    }
    let mut out = SweepReport {
        min_fidelity: 1.0,
        ..Default::default()
    };
    for g in &schedule.gates {
        let left = g.bond - 1;
        let r = apply_gate(state, &g.gate, left, time, policy)?;
        out.log_norm_sq += r.norm_sq.ln();
        out.min_fidelity = out.min_fidelity.min(r.fidelity);
        out.gates.push(r);
    }
    Ok(out)
}
