//! Expectation values from causal-cone density matrices.

use nalgebra::DMatrix;

use crate::cone::{bond_density, trace_with, ConeError};
use crate::evolution::EvolutionError;
use crate::mera::MeraState;
use crate::model::{pauli_x, pauli_z, two_site_tensor, Model};
use crate::tensor::{Tensor, C64};
use crate::ti::{embed, window_densities};

/// One row of a run log.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub step: usize,
    pub tau: f64,
    pub energy_total: f64,
    pub energy_per_site: f64,
    /// `energy_per_site - E_ff / L` against the free-fermion energy.
    pub err_vs_ff: Option<f64>,
    /// `energy_per_site - E_ed / L` against exact diagonalization.
    pub err_vs_ed: Option<f64>,
    /// `<sigma^z>` per site (ring average in translation-invariant mode).
    pub sz: Vec<f64>,
    /// `<sigma^x sigma^x>` per bond (ring average in translation-invariant
    /// mode).
    pub sxsx: Vec<f64>,
    pub lambda_entropy: f64,
}

impl Measurement {
    pub fn sz_mean(&self) -> f64 {
        mean(&self.sz)
    }

    pub fn sxsx_mean(&self) -> f64 {
        mean(&self.sxsx)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Reference ground-state energies (totals) for error columns.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Reference {
    pub free_fermion: Option<f64>,
    pub ed: Option<f64>,
}

impl Reference {
    pub fn for_model(model: &dyn Model, sites: usize) -> Self {
        Self {
            free_fermion: model.free_fermion_energy(sites),
            ed: model.ed_energy(sites),
        }
    }
}

/// `Tr(op rho)` on the bond joining `left_site` and `left_site + 1`.
pub fn expect_two_site(state: &MeraState, op: &Tensor, left_site: usize) -> Result<C64, ConeError> {
    let rho = bond_density(state, left_site)?;
    if op.dims() != rho.dims() {
        return Err(ConeError::Operator {
            expected: rho.dims().to_vec(),
            got: op.dims().to_vec(),
        });
    }
    Ok(trace_with(op, &rho))
}

/// `-sum lambda^2 ln lambda^2` of the top weights.
pub fn lambda_entropy(lambda: &[f64]) -> f64 {
    lambda
        .iter()
        .map(|x| x * x)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Sum of the bond energies over all `L` bonds.
pub fn energy_bond_sum(state: &MeraState, model: &dyn Model) -> Result<f64, ConeError> {
    let h = two_site_tensor(&model.bond_matrix(), model.local_dim());
    let mut total = 0.0;
    for k in 0..state.geometry().sites() {
        total += expect_two_site(state, &h, k)?.re;
    }
    Ok(total)
}

/// Total energy: bond sum in general mode, `L` times the ring-averaged
/// bond energy in translation-invariant mode.
pub fn energy(state: &MeraState, model: &dyn Model) -> Result<f64, EvolutionError> {
    if state.is_ti() {
        let h = two_site_tensor(&model.bond_matrix(), model.local_dim());
        let avg = crate::ti::average_bond_value(state, &h)?;
        Ok(avg.re * state.geometry().sites() as f64)
    } else {
        Ok(energy_bond_sum(state, model)?)
    }
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Energy, magnetizations, nearest-neighbour `xx` correlations and the top
/// entropy in one pass over the bond density matrices.
pub fn measure(
    state: &MeraState,
    model: &dyn Model,
    step: usize,
    tau: f64,
    reference: &Reference,
) -> Result<Measurement, EvolutionError> {
    let d = model.local_dim();
    let sites = state.geometry().sites();
    let h = two_site_tensor(&model.bond_matrix(), d);
    let spin = d == 2;
    let id = DMatrix::<C64>::identity(d, d);
    let (zi, xx) = if spin {
        (
            two_site_tensor(&kron(&pauli_z(), &id), d),
            two_site_tensor(&kron(&pauli_x(), &pauli_x()), d),
        )
    } else {
        (Tensor::zeros(&[d; 4]), Tensor::zeros(&[d; 4]))
    };
    let (energy_total, sz, sxsx) = if state.is_ti() {
        let rho = window_densities(state, crate::evolution::TiEnvironment::Averaged)?
            .pop()
            .expect("physical windows");
        let avg = |op: &Tensor| -> Result<f64, EvolutionError> {
            let a = trace_with(&embed(op, 3, &[0, 1], d)?, &rho);
            let b = trace_with(&embed(op, 3, &[1, 2], d)?, &rho);
            Ok(0.5 * (a + b).re)
        };
        let e = avg(&h)? * sites as f64;
        if spin {
            (e, vec![avg(&zi)?], vec![avg(&xx)?])
        } else {
            (e, Vec::new(), Vec::new())
        }
    } else {
        let mut e = 0.0;
        let mut sz = Vec::new();
        let mut sxsx = Vec::new();
        for k in 0..sites {
            let rho = bond_density(state, k)?;
            e += trace_with(&h, &rho).re;
            if spin {
                sz.push(trace_with(&zi, &rho).re);
                sxsx.push(trace_with(&xx, &rho).re);
            }
        }
        (e, sz, sxsx)
    };
    let per_site = energy_total / sites as f64;
    Ok(Measurement {
        step,
        tau,
        energy_total,
        energy_per_site: per_site,
        err_vs_ff: reference.free_fermion.map(|r| per_site - r / sites as f64),
        err_vs_ed: reference.ed.map(|r| per_site - r / sites as f64),
        sz,
        sxsx,
        lambda_entropy: lambda_entropy(state.lambda()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mera::MeraGeometry;
    use crate::model::TransverseIsing;

    #[test]
    fn product_state_observables() {
        let g = MeraGeometry::new(2, 2, 4).unwrap();
        let s = MeraState::init_product(g, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let model = TransverseIsing::new(1.0).unwrap();
        assert!((energy(&s, &model).unwrap() + 8.0).abs() < 1e-12);
        let id = Tensor::identity(&[2, 2]);
        assert!((expect_two_site(&s, &id, 3).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-12);
        let m = measure(&s, &model, 0, 0.0, &Reference::default()).unwrap();
        assert!((m.sz_mean() - 1.0).abs() < 1e-12);
        assert!(m.sxsx_mean().abs() < 1e-12);
        assert_eq!(m.lambda_entropy, 0.0);
        let t = s.ti_promote();
        assert!((energy(&t, &model).unwrap() - energy_bond_sum(&t, &model).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_uniform_weights() {
        let l = vec![0.5; 4];
        assert!((lambda_entropy(&l) - 4f64.ln()).abs() < 1e-12);
    }
}
