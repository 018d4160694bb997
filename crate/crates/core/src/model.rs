//! Nearest-neighbor Hamiltonians, two-site Trotter gates and gate schedules.
//!
//! Bonds are numbered `1..=L`; bond `k` couples sites `k` and `k + 1`
//! (1-based, with site `L + 1` identified with site `1`). Two-site operators
//! carry legs `(out1, out2, in1, in2)`.

use nalgebra::DMatrix;

use crate::tensor::{herm_eig_matrix, Matricization, Tensor, TensorError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("site count {0} is not 2^(l+1) with l >= 1")]
    SiteCount(usize),
    #[error("transverse field must be finite and non-negative, got {0}")]
    Field(f64),
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("unsupported Trotter order {0} (expected 1 or 2)")]
    TrotterOrder(u32),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("missing or invalid model parameter `{0}`")]
    Parameter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn pauli_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn pauli_z() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Returns `log2(L) - 1` when `L = 2^(l+1)` for some `l >= 1`.
pub fn levels_for_sites(sites: usize) -> Option<usize> {
    (sites >= 4 && sites.is_power_of_two()).then(|| sites.trailing_zeros() as usize - 1)
}

/// Two-site operator as a tensor with legs `(out1, out2, in1, in2)`.
pub fn two_site_tensor(mat: &DMatrix<C64>, d: usize) -> Tensor {
    Tensor::from_matrix(&[d, d, d, d], mat).expect("d^2 x d^2 operator")
}

pub fn two_site_matrix(t: &Tensor) -> DMatrix<C64> {
    t.to_matrix(&Matricization::split(4, 2))
        .expect("rank-4 two-site operator")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoSiteTerm {
    /// Operator with legs `(out1, out2, in1, in2)`.
    pub h_term: Tensor,
    /// 1-based bond index.
    pub bond: usize,
}

impl TwoSiteTerm {
    pub fn matrix(&self) -> DMatrix<C64> {
        two_site_matrix(&self.h_term)
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let m = self.matrix();
        (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Bond terms of `H = -sum_k (h sz_k + sx_k sx_{k+1})` on a periodic ring;
/// each site's field is split evenly between its two bonds.
pub fn ising_terms(sites: usize, h: f64) -> Result<Vec<TwoSiteTerm>, ModelError> {
    levels_for_sites(sites).ok_or(ModelError::SiteCount(sites))?;
    if !h.is_finite() || h < 0.0 {
        return Err(ModelError::Field(h));
    }
    let term = ising_bond_matrix(h);
    Ok((1..=sites)
        .map(|bond| TwoSiteTerm {
            h_term: two_site_tensor(&term, 2),
            bond,
        })
        .collect())
}

pub fn ising_bond_matrix(h: f64) -> DMatrix<C64> {
    let id = DMatrix::<C64>::identity(2, 2);
    let xx = pauli_x().kronecker(&pauli_x());
    let field = pauli_z().kronecker(&id) + id.kronecker(&pauli_z());
    -(xx + field * c(0.5 * h))
}

/// Matrix exponential `exp(-tau * h)` of a Hermitian matrix.
pub fn exp_hermitian(h: &DMatrix<C64>, tau: C64) -> Result<DMatrix<C64>, TensorError> {
    let (e, q) = herm_eig_matrix(h)?;
    let diag = nalgebra::DVector::from_iterator(e.len(), e.iter().map(|&x| (-tau * x).exp()));
    Ok(&q * DMatrix::from_diagonal(&diag) * q.adjoint())
}

/// `exp(-tau * h_term)`; `tau = i dt` for real time, `tau = dt` for
/// imaginary time.
pub fn two_site_gate(term: &TwoSiteTerm, tau: C64) -> Result<Tensor, ModelError> {
    let d = term.h_term.dims()[0];
    let g = exp_hermitian(&term.matrix(), tau)?;
    Ok(two_site_tensor(&g, d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvolutionKind {
    Real,
    Euclidean,
}

impl EvolutionKind {
    pub fn tau(self, dt: f64) -> C64 {
        match self {
            EvolutionKind::Real => C64::new(0.0, dt),
            EvolutionKind::Euclidean => C64::new(dt, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvolutionKind::Real => "real",
            EvolutionKind::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for EvolutionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(Self::Real),
            "euclidean" | "imaginary" => Ok(Self::Euclidean),
            _ => Err(format!("unknown evolution kind `{s}`")),
        }
    }
}

/// How bonds are traversed within one Trotter step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepStyle {
    /// All odd bonds, then all even bonds.
    OddEven,
    /// Bonds `1..=L` in order (reversed in the second half of an order-2
    /// step).
    Sequential,
}

impl std::str::FromStr for SweepStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "odd-even" | "odd_even" => Ok(Self::OddEven),
            "sequential" => Ok(Self::Sequential),
            _ => Err(format!("unknown sweep style `{s}`")),
        }
    }
}

impl SweepStyle {
    pub fn name(self) -> &'static str {
        match self {
            SweepStyle::OddEven => "odd-even",
            SweepStyle::Sequential => "sequential",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScheduledGate {
    pub bond: usize,
    pub gate: Tensor,
    /// Time increment carried by this gate.
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct GateSchedule {
    pub gates: Vec<ScheduledGate>,
    pub dt: f64,
    pub kind: EvolutionKind,
    pub order: u32,
}

/// One Trotter step of `exp(-tau H)` as an ordered product of bond gates.
pub fn trotter_schedule(
    terms: &[TwoSiteTerm],
    dt: f64,
    kind: EvolutionKind,
    order: u32,
) -> Result<GateSchedule, ModelError> {
    trotter_schedule_with(terms, dt, kind, order, SweepStyle::OddEven)
}

pub fn trotter_schedule_with(
    terms: &[TwoSiteTerm],
    dt: f64,
    kind: EvolutionKind,
    order: u32,
    style: SweepStyle,
) -> Result<GateSchedule, ModelError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ModelError::TimeStep(dt));
    }
    let gate = |t: &TwoSiteTerm, step: f64| -> Result<ScheduledGate, ModelError> {
        Ok(ScheduledGate {
            bond: t.bond,
            gate: two_site_gate(t, kind.tau(step))?,
            step,
        })
    };
    let odd: Vec<&TwoSiteTerm> = terms.iter().filter(|t| t.bond % 2 == 1).collect();
    let even: Vec<&TwoSiteTerm> = terms.iter().filter(|t| t.bond % 2 == 0).collect();
    let mut gates = Vec::with_capacity(terms.len() * 2);
    match (style, order) {
        (SweepStyle::OddEven, 1) => {
            for t in odd.iter().chain(&even) {
                gates.push(gate(t, dt)?);
            }
        }
        (SweepStyle::OddEven, 2) => {
            for t in &odd {
                gates.push(gate(t, dt / 2.0)?);
            }
            for t in &even {
                gates.push(gate(t, dt)?);
            }
            for t in &odd {
                gates.push(gate(t, dt / 2.0)?);
            }
        }
        (SweepStyle::Sequential, 1) => {
            for t in terms {
                gates.push(gate(t, dt)?);
            }
        }
        (SweepStyle::Sequential, 2) => {
            for t in terms {
                gates.push(gate(t, dt / 2.0)?);
            }
            for t in terms.iter().rev() {
                gates.push(gate(t, dt / 2.0)?);
            }
        }
        (_, o) => return Err(ModelError::TrotterOrder(o)),
    }
    Ok(GateSchedule { gates, dt, kind, order })
}

/// A translation-invariant nearest-neighbor chain.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;
    fn local_dim(&self) -> usize;
    /// The bond operator, identical on every bond.
    fn bond_matrix(&self) -> DMatrix<C64>;
    /// Parameters as `key=value` pairs, for run headers.
    fn parameters(&self) -> Vec<(String, String)>;

    /// Closed-form ground-state energy of the periodic ring, if known.
    fn free_fermion_energy(&self, _sites: usize) -> Option<f64> {
        None
    }

    /// Exact-diagonalization ground-state energy, for small rings.
    fn ed_energy(&self, _sites: usize) -> Option<f64> {
        None
    }

    fn terms(&self, sites: usize) -> Result<Vec<TwoSiteTerm>, ModelError> {
        levels_for_sites(sites).ok_or(ModelError::SiteCount(sites))?;
        let m = self.bond_matrix();
        let d = self.local_dim();
        Ok((1..=sites)
            .map(|bond| TwoSiteTerm {
                h_term: two_site_tensor(&m, d),
                bond,
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransverseIsing {
    pub h: f64,
}

impl TransverseIsing {
    pub fn new(h: f64) -> Result<Self, ModelError> {
        if !h.is_finite() || h < 0.0 {
            return Err(ModelError::Field(h));
        }
        Ok(Self { h })
    }
}

impl Model for TransverseIsing {
    fn name(&self) -> &str {
        "ising"
    }

    fn local_dim(&self) -> usize {
        2
    }

    fn bond_matrix(&self) -> DMatrix<C64> {
        ising_bond_matrix(self.h)
    }

    fn parameters(&self) -> Vec<(String, String)> {
        vec![("h".into(), format!("{}", self.h))]
    }

    fn free_fermion_energy(&self, sites: usize) -> Option<f64> {
        crate::exact::free_fermion_energy(sites, self.h).ok().map(|r| r.energy)
    }

    fn ed_energy(&self, sites: usize) -> Option<f64> {
        if sites > crate::exact::ED_MAX_SITES {
            return None;
        }
        crate::exact::ed_ground_energy(sites, self.h).ok().map(|r| r.energy)
    }
}

type Constructor = fn(&dyn Fn(&str) -> Option<f64>) -> Result<Box<dyn Model>, ModelError>;

const REGISTRY: &[(&str, Constructor)] = &[("ising", |p| {
    let h = p("h").ok_or_else(|| ModelError::Parameter("h".into()))?;
    Ok(Box::new(TransverseIsing::new(h)?))
})];

/// Builds a registered model from its name and a parameter lookup.
pub fn model_by_name(name: &str, params: &dyn Fn(&str) -> Option<f64>) -> Result<Box<dyn Model>, ModelError> {
    REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ModelError::UnknownModel(name.into()))
        .and_then(|(_, ctor)| ctor(params))
}

pub fn registered_models() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}
