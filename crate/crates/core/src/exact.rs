//! Reference energies for the periodic transverse-field Ising chain
//! `H = -sum_k (h sz_k + sx_k sx_{k+1})`.
//!
//! Dense vectors use the basis convention shared with
//! [`MeraState::expand_dense`](crate::mera::MeraState::expand_dense): site 0
//! is the most significant digit and local state 0 is spin up (`sz = +1`).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExactError {
    #[error("site count {sites} outside the supported range {min}..={max}")]
    SiteRange { sites: usize, min: usize, max: usize },
    #[error("free-fermion formula needs an even site count >= 4, got {0}")]
    OddSites(usize),
    #[error("field must be finite and non-negative, got {0}")]
    Field(f64),
    #[error("Lanczos iteration did not converge")]
    NoConvergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactMethod {
    Ed,
    FreeFermion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactResult {
    pub sites: usize,
    pub h: f64,
    pub energy: f64,
    pub energy_per_site: f64,
    pub method: ExactMethod,
}

impl ExactResult {
    fn new(sites: usize, h: f64, energy: f64, method: ExactMethod) -> Self {
        Self {
            sites,
            h,
            energy,
            energy_per_site: energy / sites as f64,
            method,
        }
    }
}

/// Per-site ground energy of the critical chain in the thermodynamic limit.
pub const CRITICAL_ENERGY_PER_SITE: f64 = -4.0 / std::f64::consts::PI;

pub const ED_MAX_SITES: usize = 14;
pub const ED_STATE_MAX_SITES: usize = 12;
/// Above this size the spectrum is obtained by Lanczos instead of a full
/// dense diagonalization.
const DENSE_EIG_MAX_SITES: usize = 10;

fn check_field(h: f64) -> Result<(), ExactError> {
    if h.is_finite() && h >= 0.0 {
        Ok(())
    } else {
        Err(ExactError::Field(h))
    }
}

/// Ground energy from the Jordan-Wigner solution: even fermion parity sector,
/// antiperiodic momenta `q = (2n - 1) pi / L`.
pub fn free_fermion_energy(sites: usize, h: f64) -> Result<ExactResult, ExactError> {
    if sites < 4 || sites % 2 == 1 {
        return Err(ExactError::OddSites(sites));
    }
    check_field(h)?;
    let l = sites as f64;
    // Kahan summation keeps 2^20-term sums accurate to ~1e-16 relative.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for n in 1..=sites / 2 {
        let q = (2 * n - 1) as f64 * std::f64::consts::PI / l;
        let term = 2.0 * (1.0 + h * h - 2.0 * h * q.cos()).max(0.0).sqrt();
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    Ok(ExactResult::new(sites, h, -sum, ExactMethod::FreeFermion))
}

/// `H psi` for a real dense state vector.
pub fn apply_hamiltonian(sites: usize, h: f64, psi: &[f64], out: &mut [f64]) {
    let dim = 1usize << sites;
    debug_assert_eq!(psi.len(), dim);
    for x in 0..dim {
        let ones = x.count_ones() as f64;
        let sz_sum = sites as f64 - 2.0 * ones;
        out[x] = -h * sz_sum * psi[x];
    }
    for s in 0..sites {
        let mask = bit(sites, s) | bit(sites, (s + 1) % sites);
        for x in 0..dim {
            out[x] -= psi[x ^ mask];
        }
    }
}

fn bit(sites: usize, site: usize) -> usize {
    1usize << (sites - 1 - site)
}

/// Dense real Hamiltonian matrix.
pub fn dense_hamiltonian(sites: usize, h: f64) -> DMatrix<f64> {
    let dim = 1usize << sites;
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for x in 0..dim {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[x] = 1.0;
        apply_hamiltonian(sites, h, &e, &mut col);
        m.set_column(x, &DVector::from_column_slice(&col));
    }
    m
}

#[derive(Clone, Debug)]
struct Lowest {
    e0: f64,
    e1: f64,
    vector: Vec<f64>,
}

fn lowest_dense(sites: usize, h: f64) -> Lowest {
    let m = dense_hamiltonian(sites, h);
    let dec = nalgebra::linalg::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..dec.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[i].total_cmp(&dec.eigenvalues[j]));
    Lowest {
        e0: dec.eigenvalues[order[0]],
        e1: dec.eigenvalues[order[1]],
        vector: dec.eigenvectors.column(order[0]).iter().copied().collect(),
    }
}

/// Lanczos with full reorthogonalization from a fixed pseudo-random start.
fn lowest_lanczos(sites: usize, h: f64) -> Result<Lowest, ExactError> {
    let dim = 1usize << sites;
    let max_iter = dim.min(400);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    let mut prev_e0 = f64::INFINITY;
    for it in 0..max_iter {
        apply_hamiltonian(sites, h, &basis[it], &mut w);
        let a = dot(&w, &basis[it]);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&w, b);
                axpy(&mut w, -p, b);
            }
        }
        let bnorm = dot(&w, &w).sqrt();
        let k = alpha.len();
        let (evals, evecs) = tridiagonal_eig(&alpha, &beta);
        let e0 = evals[0];
        let residual = bnorm * evecs[(k - 1, 0)].abs();
        let converged = k >= 2 && residual < 1e-12 && (e0 - prev_e0).abs() < 1e-13;
        if converged || bnorm < 1e-13 || it + 1 == max_iter {
            if !converged && bnorm >= 1e-13 && residual > 1e-9 {
                return Err(ExactError::NoConvergence);
            }
            let mut vector = vec![0.0; dim];
            for (j, b) in basis.iter().enumerate() {
                axpy(&mut vector, evecs[(j, 0)], b);
            }
            normalize(&mut vector);
            // second Ritz value; adequate for the gap check at this accuracy
            let e1 = if k > 1 { evals[1] } else { f64::INFINITY };
            return Ok(Lowest { e0, e1, vector });
        }
        prev_e0 = e0;
        beta.push(bnorm);
        let next: Vec<f64> = w.iter().map(|x| x / bnorm).collect();
        basis.push(next);
    }
    Err(ExactError::NoConvergence)
}

fn tridiagonal_eig(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let dec = nalgebra::linalg::SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[i].total_cmp(&dec.eigenvalues[j]));
    let evals = order.iter().map(|&i| dec.eigenvalues[i]).collect();
    let mut evecs = DMatrix::zeros(k, k);
    for (c, &o) in order.iter().enumerate() {
        evecs.set_column(c, &dec.eigenvectors.column(o));
    }
    (evals, evecs)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn lowest(sites: usize, h: f64) -> Result<Lowest, ExactError> {
    if sites <= DENSE_EIG_MAX_SITES {
        Ok(lowest_dense(sites, h))
    } else {
        lowest_lanczos(sites, h)
    }
}

/// Lowest eigenvalue of the full `2^L`-dimensional Hamiltonian.
pub fn ed_ground_energy(sites: usize, h: f64) -> Result<ExactResult, ExactError> {
    if !(4..=ED_MAX_SITES).contains(&sites) {
        return Err(ExactError::SiteRange {
            sites,
            min: 4,
            max: ED_MAX_SITES,
        });
    }
    check_field(h)?;
    Ok(ExactResult::new(sites, h, lowest(sites, h)?.e0, ExactMethod::Ed))
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub sites: usize,
    pub h: f64,
    pub energy: f64,
    /// Normalized; the largest-magnitude entry is real and positive.
    pub vector: Vec<C64>,
    pub gap: f64,
    /// Set when the gap is below `1e-10`; the vector is then one arbitrary
    /// member of the ground space.
    pub degenerate: bool,
}

pub fn ed_ground_state(sites: usize, h: f64) -> Result<GroundState, ExactError> {
    if !(4..=ED_STATE_MAX_SITES).contains(&sites) {
        return Err(ExactError::SiteRange {
            sites,
            min: 4,
            max: ED_STATE_MAX_SITES,
        });
    }
    check_field(h)?;
    let low = lowest(sites, h)?;
    let (imax, _) = low.vector.iter().enumerate().fold(
        (0, 0.0f64),
        |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc },
    );
    let sign = low.vector[imax].signum();
    let gap = low.e1 - low.e0;
    Ok(GroundState {
        sites,
        h,
        energy: low.e0,
        vector: low.vector.iter().map(|x| C64::new(sign * x, 0.0)).collect(),
        gap,
        degenerate: gap < 1e-10,
    })
}

/// `<psi|H|psi>` for a complex dense vector.
pub fn dense_energy(sites: usize, h: f64, psi: &[C64]) -> f64 {
    let dim = 1usize << sites;
    let re: Vec<f64> = psi.iter().map(|z| z.re).collect();
    let im: Vec<f64> = psi.iter().map(|z| z.im).collect();
    let mut hre = vec![0.0; dim];
    let mut him = vec![0.0; dim];
    apply_hamiltonian(sites, h, &re, &mut hre);
    apply_hamiltonian(sites, h, &im, &mut him);
    dot(&re, &hre) + dot(&im, &him)
}

/// Applies a `d^2 x d^2` operator (row-major, `(out1 out2 | in1 in2)`) to
/// sites `a` and `b` of a dense state of `sites` spins with local dimension
/// `d`.
pub fn apply_two_site_dense(psi: &[C64], sites: usize, d: usize, a: usize, b: usize, op: &DMatrix<C64>) -> Vec<C64> {
    let stride = |s: usize| d.pow((sites - 1 - s) as u32);
    let (sa, sb) = (stride(a), stride(b));
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    for x in 0..psi.len() {
        let ia = (x / sa) % d;
        let ib = (x / sb) % d;
        let base = x - ia * sa - ib * sb;
        let row = ia * d + ib;
        for ja in 0..d {
            for jb in 0..d {
                let v = op[(row, ja * d + jb)];
                if v != C64::new(0.0, 0.0) {
                    out[x] += v * psi[base + ja * sa + jb * sb];
                }
            }
        }
    }
    out
}

/// Reduced density matrix of `sites` (in the given order) from a dense pure
/// state; legs `(ket sites..., bra sites...)`.
pub fn dense_reduced_density(psi: &[C64], total: usize, d: usize, keep: &[usize]) -> DMatrix<C64> {
    let k = keep.len();
    let dk = d.pow(k as u32);
    let stride = |s: usize| d.pow((total - 1 - s) as u32);
    let mut rho = DMatrix::zeros(dk, dk);
    let rest: Vec<usize> = (0..total).filter(|s| !keep.contains(s)).collect();
    let nrest = d.pow(rest.len() as u32);
    for r in 0..nrest {
        let mut base = 0;
        let mut rr = r;
        for &s in rest.iter().rev() {
            base += (rr % d) * stride(s);
            rr /= d;
        }
        let idx = |a: usize| -> usize {
            let mut off = base;
            let mut aa = a;
            for &s in keep.iter().rev() {
                off += (aa % d) * stride(s);
                aa /= d;
            }
            off
        };
        for a in 0..dk {
            let pa = psi[idx(a)];
            if pa == C64::new(0.0, 0.0) {
                continue;
            }
            for b in 0..dk {
                rho[(a, b)] += pa * psi[idx(b)].conj();
            }
        }
    }
    rho
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_limit() {
        let r = ed_ground_energy(4, 0.0).unwrap();
        assert!((r.energy + 4.0).abs() < 1e-12);
        assert!((free_fermion_energy(4, 0.0).unwrap().energy + 4.0).abs() < 1e-12);
    }

    #[test]
    fn oracles_agree_on_small_rings() {
        let ff = free_fermion_energy(4, 1.0).unwrap();
        assert!((ff.energy + 5.226252).abs() < 1e-6);
        for l in [4, 8] {
            let ed = ed_ground_energy(l, 1.0).unwrap();
            let ff = free_fermion_energy(l, 1.0).unwrap();
            assert!(
                (ed.energy - ff.energy).abs() < 1e-10,
                "L={l}: {} vs {}",
                ed.energy,
                ff.energy
            );
            assert_eq!(ed.method, ExactMethod::Ed);
            assert!((ed.energy_per_site * l as f64 - ed.energy).abs() < 1e-14);
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        for h in [0.5, 1.0, 1.5] {
            let d = lowest_dense(8, h);
            let l = lowest_lanczos(8, h).unwrap();
            assert!((d.e0 - l.e0).abs() < 1e-11);
        }
    }

    #[test]
    fn thermodynamic_limit() {
        let r = free_fermion_energy(1 << 20, 1.0).unwrap();
        assert!((r.energy_per_site - CRITICAL_ENERGY_PER_SITE).abs() < 1e-6);
        assert!((CRITICAL_ENERGY_PER_SITE + 1.273240).abs() < 1e-6);
    }

    #[test]
    fn range_errors() {
        assert!(matches!(ed_ground_energy(16, 1.0), Err(ExactError::SiteRange { .. })));
        assert!(matches!(ed_ground_energy(2, 1.0), Err(ExactError::SiteRange { .. })));
        assert_eq!(free_fermion_energy(7, 1.0).unwrap_err(), ExactError::OddSites(7));
        assert!(ed_ground_state(14, 1.0).is_err());
    }

    #[test]
    fn ground_state_properties() {
        let gs = ed_ground_state(4, 50.0).unwrap();
        assert!(gs.vector[0].norm() > 0.999);
        for (l, h) in [(4, 0.3), (6, 1.0), (8, 1.7)] {
            let gs = ed_ground_state(l, h).unwrap();
            let norm: f64 = gs.vector.iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!((dense_energy(l, h, &gs.vector) - ed_ground_energy(l, h).unwrap().energy).abs() < 1e-10);
            assert!(!gs.degenerate);
        }
        assert!(ed_ground_state(4, 0.0).unwrap().degenerate);
    }

    #[test]
    fn finite_size_energies_approach_the_limit() {
        let dev: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&l| (free_fermion_energy(l, 1.0).unwrap().energy_per_site - CRITICAL_ENERGY_PER_SITE).abs())
            .collect();
        assert!(dev.windows(2).all(|w| w[1] < w[0]), "{dev:?}");
    }

    #[test]
    fn two_site_application_matches_hamiltonian() {
        let sites = 4;
        let h = 0.8;
        let psi: Vec<C64> = (0..16)
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let bond = crate::model::ising_bond_matrix(h);
        let mut acc = vec![C64::new(0.0, 0.0); 16];
        for s in 0..sites {
            let part = apply_two_site_dense(&psi, sites, 2, s, (s + 1) % sites, &bond);
            acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
        }
        let e: C64 = psi.iter().zip(&acc).map(|(a, b)| a.conj() * b).sum();
        assert!((e.re - dense_energy(sites, h, &psi)).abs() < 1e-12);
        assert!(e.im.abs() < 1e-12);
    }
}
