//! Dense-vector oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use tmera::exact::{apply_two_site_dense, dense_hamiltonian};
use tmera::model::{two_site_matrix, GateSchedule};
use tmera::C64;

pub fn overlap(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    overlap(a, a).re.sqrt()
}

pub fn normalize(a: &mut [C64]) {
    let n = norm(a);
    a.iter_mut().for_each(|z| *z /= n);
}

/// One Trotter step applied gate by gate to a dense state.
pub fn apply_schedule(psi: &[C64], sites: usize, schedule: &GateSchedule) -> Vec<C64> {
    let mut out = psi.to_vec();
    for g in &schedule.gates {
        let left = g.bond - 1;
        out = apply_two_site_dense(&out, sites, 2, left, (left + 1) % sites, &two_site_matrix(&g.gate));
    }
    out
}

/// `exp(-tau H)` of the Ising ring through a full eigendecomposition.
pub struct Propagator {
    q: DMatrix<f64>,
    e: Vec<f64>,
}

impl Propagator {
    pub fn new(sites: usize, h: f64) -> Self {
        let dec = dense_hamiltonian(sites, h).symmetric_eigen();
        Self {
            q: dec.eigenvectors,
            e: dec.eigenvalues.iter().copied().collect(),
        }
    }

    pub fn apply(&self, psi: &[C64], tau: C64) -> Vec<C64> {
        let n = psi.len();
        let coeff: Vec<C64> = (0..n)
            .map(|k| {
                let c: C64 = (0..n).map(|x| psi[x] * self.q[(x, k)]).sum();
                c * (-tau * self.e[k]).exp()
            })
            .collect();
        (0..n)
            .map(|x| (0..n).map(|k| coeff[k] * self.q[(x, k)]).sum())
            .collect()
    }
}
