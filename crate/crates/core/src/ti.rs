//! Translation-invariant mode: one disentangler and one isometry per level.
//!
//! A layer of identical gates on all bonds of one parity is absorbed in a
//! single bottom-up pass. Each level is described by one unit cell (two
//! disentanglers on lower sites `1..=4`, three isometries above them). The
//! operator of a unit cell is the sum of two three-site window operators,
//! one for the window starting on an odd site and one for the window
//! starting on an even site; at the physical level each window carries half
//! of the gate on its bond of the layer's parity, so a cell holds the
//! identity plus the deviation `U - 1` of one gate. The environment of a
//! shared tensor is the sum of the environments of its copies in the cell.
//! Raising the cell operator through a level yields a three-site operator
//! `R`; both windows of the next level carry `R - 1/2`, so every cell again
//! holds one identity plus the deviations raised from the two cells below
//! it. Level 1 covers the whole four-site ring with one identity and closes
//! with a symmetric (Takagi) decomposition, since the two top isometries are
//! the same tensor.
//!
//! The density matrices above each cell come either from the cone of one
//! bond or from an average over all positions of the level; the average
//! makes the unit-cell sums exact ring averages and is always used for
//! measurements.

use nalgebra::DMatrix;

use crate::cone::{ascend, contract_level, trace_with, LevelCone, LevelTensors, Lower, Omit, Upper};
use crate::evolution::{
    regularized_polar, top_state, EvolutionError, GateUpdateReport, LevelFidelity, Result, SweepReport, TiEnvironment,
    UpdatePolicy,
};
use crate::mera::{chi_matricization, MeraState};
use crate::model::GateSchedule;
use crate::tensor::{contract, polar_matrix, Tensor, TensorError, C64};

/// `op` (acting on `sites`, legs `(out.., in..)`) tensored with the
/// identity on the remaining sites of `total`.
pub fn embed(op: &Tensor, total: usize, sites: &[usize], dim: usize) -> Result<Tensor> {
    let k = sites.len();
    let rest: Vec<usize> = (0..total).filter(|s| !sites.contains(s)).collect();
    let r = rest.len();
    let full = if r == 0 {
        op.clone()
    } else {
        contract(op, &Tensor::identity(&vec![dim; r]), &[])?
    };
    let leg = |p: usize, input: bool| match sites.iter().position(|&s| s == p) {
        Some(q) => q + if input { k } else { 0 },
        None => 2 * k + rest.iter().position(|&s| s == p).expect("site in ring") + if input { r } else { 0 },
    };
    let perm: Vec<usize> = (0..total)
        .map(|p| leg(p, false))
        .chain((0..total).map(|p| leg(p, true)))
        .collect();
    Ok(full.permute(&perm)?)
}

/// Reduced density matrix of `keep` (in that order) from a density matrix
/// on `n` sites with legs `(ket.., bra..)`.
pub fn reduce(rho: &Tensor, n: usize, keep: &[usize]) -> Result<Tensor> {
    let mut t = rho.clone();
    let mut sites: Vec<usize> = (0..n).collect();
    for s in (0..n).rev() {
        if keep.contains(&s) {
            continue;
        }
        let pos = sites.iter().position(|&x| x == s).expect("site present");
        let m = sites.len();
        let dim = t.dims()[pos];
        t = contract(&t, &Tensor::identity(&[dim]), &[(pos, 0), (m + pos, 1)])?;
        sites.remove(pos);
    }
    let m = sites.len();
    let perm: Vec<usize> = keep
        .iter()
        .map(|q| sites.iter().position(|s| s == q).expect("kept site"))
        .chain(
            keep.iter()
                .map(|q| m + sites.iter().position(|s| s == q).expect("kept site")),
        )
        .collect();
    Ok(t.permute(&perm)?)
}

fn scaled_sum(a: &Tensor, b: &Tensor, w: f64) -> Result<Tensor> {
    let mut out = a.scale(C64::new(w, 0.0));
    out.axpy(C64::new(w, 0.0), b)?;
    Ok(out)
}

fn shared(lc: &LevelCone, chi: &Tensor, gamma: &Tensor) -> LevelTensors {
    LevelTensors::shared(lc, chi, gamma)
}

/// Three-site window densities `out[k]` on the upper sites of level `k + 2`;
/// the last entry holds the physical windows. Averaged over positions, or
/// taken at the first window only.
pub fn window_densities(state: &MeraState, mode: TiEnvironment) -> Result<Vec<Tensor>> {
    if !state.is_ti() {
        return Err(EvolutionError::Mode(
            "window densities need a translation-invariant state".into(),
        ));
    }
    let levels = state.geometry().levels();
    let lc1 = LevelCone::unit_cell(1);
    let t1 = shared(&lc1, state.chi(1, 0), state.gamma(1, 0));
    let lam = state.lambda();
    let ring = contract_level(
        &lc1,
        &t1,
        &t1,
        Upper::Top { ket: lam, bra: lam },
        Lower::Open,
        Omit::None,
    )?;
    let windows: Vec<usize> = match mode {
        TiEnvironment::Averaged => (0..4).collect(),
        TiEnvironment::Single => vec![0],
    };
    let mut acc: Option<Tensor> = None;
    for &w in &windows {
        let r = reduce(&ring, 4, &[w, (w + 1) % 4, (w + 2) % 4])?;
        acc = Some(match acc {
            None => r,
            Some(a) => a.add(&r)?,
        });
    }
    let mut out = vec![acc.expect("window").scale(C64::new(1.0 / windows.len() as f64, 0.0))];
    for i in 2..=levels {
        let lc = LevelCone::unit_cell(i);
        let t = shared(&lc, state.chi(i, 0), state.gamma(i, 0));
        let rho4 = contract_level(
            &lc,
            &t,
            &t,
            Upper::Rho(out.last().expect("upper")),
            Lower::Open,
            Omit::None,
        )?;
        let first = reduce(&rho4, 4, &[0, 1, 2])?;
        let next = match mode {
            TiEnvironment::Averaged => scaled_sum(&first, &reduce(&rho4, 4, &[1, 2, 3])?, 0.5)?,
            TiEnvironment::Single => first,
        };
        out.push(next);
    }
    Ok(out)
}

/// Ring average of `<bond>` for a two-site operator on a translation-
/// invariant state.
pub fn average_bond_value(state: &MeraState, op: &Tensor) -> Result<C64> {
    let rho = window_densities(state, TiEnvironment::Averaged)?
        .pop()
        .expect("physical windows");
    let d = state.geometry().d();
    let left = embed(op, 3, &[0, 1], d)?;
    let right = embed(op, 3, &[1, 2], d)?;
    Ok((trace_with(&left, &rho) + trace_with(&right, &rho)) * 0.5)
}

/// Symmetric decomposition `m = u diag(s) u^T` truncated to the `keep`
/// largest values, via the real symmetric embedding
/// `[[Re m, Im m], [Im m, -Re m]]`.
pub fn takagi(m: &DMatrix<C64>, keep: usize) -> Result<(DMatrix<C64>, Vec<f64>)> {
    let n = m.nrows();
    let big = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (a, b) = (m[(r % n, c % n)].re, m[(r % n, c % n)].im);
        match (r < n, c < n) {
            (true, true) => a,
            (true, false) | (false, true) => b,
            (false, false) => -a,
        }
    });
    let dec = nalgebra::linalg::SymmetricEigen::try_new(big, f64::EPSILON, 0).ok_or(TensorError::NoConvergence)?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[j].total_cmp(&dec.eigenvalues[i]).then(i.cmp(&j)));
    let keep = keep.min(n);
    let u = DMatrix::from_fn(n, keep, |r, k| {
        let col = order[k];
        C64::new(dec.eigenvectors[(r, col)], dec.eigenvectors[(r + n, col)])
    });
    let s = order[..keep].iter().map(|&o| dec.eigenvalues[o].max(0.0)).collect();
    Ok((polar_matrix(&u)?, s))
}

/// Physical window operators `(odd start, even start)` for a gate on all
/// bonds whose left site has parity `parity`.
fn bottom_windows(gate: &Tensor, parity: usize, d: usize) -> Result<(Tensor, Tensor)> {
    let half = C64::new(0.5, 0.0);
    let sc: f64 = std::env::var("TI_SCALE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    let id = Tensor::identity(&[d, d]);
    let gate = &id.add(&gate.add(&id.scale(C64::new(-1.0, 0.0)))?.scale(C64::new(sc, 0.0)))?;
    let on_first = embed(gate, 3, &[0, 1], d)?.scale(half);
    let on_second = embed(gate, 3, &[1, 2], d)?.scale(half);
    let window = |start_parity: usize| {
        if start_parity == parity {
            on_first.clone()
        } else {
            on_second.clone()
        }
    };
    Ok((window(1), window(0)))
}

/// Absorbs one layer of identical gates on every bond with left-site parity
/// `parity` into a translation-invariant state.
pub fn apply_layer_ti(
    state: &mut MeraState,
    gate: &Tensor,
    parity: usize,
    time: f64,
    policy: &UpdatePolicy,
) -> Result<GateUpdateReport> {
    policy.validate()?;
    if !state.is_ti() {
        return Err(EvolutionError::Mode(
            "layer updates need a translation-invariant state".into(),
        ));
    }
    let g = *state.geometry();
    let d = g.d();
    let top = g.levels();
    let rhos = window_densities(state, policy.ti_environment)?;
    let physical = rhos.last().expect("physical windows");
    let udu = contract(&gate.conj(), gate, &[(0, 0), (1, 1)])?;
    let norm_sq = trace_with(&embed(&udu, 3, &[0, 1], d)?, physical).re;

    let chis_on = time >= policy.disentangler_enable_time;
    let (mut a_odd, mut a_even) = bottom_windows(gate, parity, d)?;
    let mut levels = Vec::new();
    let mut history = Vec::new();
    let value = |lc: &LevelCone, k: &LevelTensors, b: &LevelTensors, up: Upper<'_>, op: &Tensor| -> Result<C64> {
        Ok(contract_level(lc, k, b, up, Lower::Operator(op), Omit::None)?.data()[0])
    };
    let mut f = C64::new(0.0, 0.0);

    for i in (2..=top).rev() {
        let lc = LevelCone::unit_cell(i);
        let dim = g.bond_dim(i);
        let op = embed(&a_odd, 4, &[0, 1, 2], dim)?.add(&embed(&a_even, 4, &[1, 2, 3], dim)?)?;
        let ket = shared(&lc, state.chi(i, 0), state.gamma(i, 0));
        let mut chi = state.chi(i, 0).clone();
        let mut gamma = state.gamma(i, 0).clone();
        let rho = &rhos[i - 2];
        let before = value(&lc, &ket, &ket, Upper::Rho(rho), &op)?.norm();
        let mut passes = 0;
        for _ in 0..policy.inner_sweeps {
            passes += 1;
            let prev = f;
            if chis_on {
                let bra = shared(&lc, &chi, &gamma);
                let env = summed(&lc.chis.iter().map(|&j| Omit::Chi(j)).collect::<Vec<_>>(), |o| {
                    contract_level(&lc, &ket, &bra, Upper::Rho(rho), Lower::Operator(&op), o)
                })?;
                chi = regularized_polar(&env, &chi, &chi_matricization())?;
            }
            let bra = shared(&lc, &chi, &gamma);
            let env = summed(&lc.gammas.iter().map(|&c| Omit::Gamma(c)).collect::<Vec<_>>(), |o| {
                contract_level(&lc, &ket, &bra, Upper::Rho(rho), Lower::Operator(&op), o)
            })?;
            gamma = regularized_polar(&env, &gamma, &crate::mera::gamma_matricization())?;
            f = value(&lc, &ket, &shared(&lc, &chi, &gamma), Upper::Rho(rho), &op)?;
            if !(f.re.is_finite() && f.im.is_finite()) {
                return Err(EvolutionError::NonFinite {
                    level: i,
                    tensor: "shared tensors".into(),
                });
            }
            history.push(f.norm());
            if passes > 1 && (f.norm() - prev.norm()).abs() <= policy.inner_tol * f.norm() {
                break;
            }
        }
        levels.push(LevelFidelity {
            level: i,
            before,
            after: f.norm(),
            passes,
        });
        let bra = shared(&lc, &chi, &gamma);
        let mut raised = ascend(&lc, &ket, &bra, &op)?;
        raised.axpy(C64::new(-0.5, 0.0), &Tensor::identity(&[g.bond_dim(i - 1); 3]))?;
        a_odd = raised.clone();
        a_even = raised;
        state.set_chi(i, 0, chi)?;
        state.set_gamma(i, 0, gamma)?;
    }

    // Level 1: the whole ring.
    let lc = LevelCone::unit_cell(1);
    let dim = g.bond_dim(1);
    let mut op = Tensor::identity(&[dim; 4]).scale(C64::new(-1.0, 0.0));
    for w in 0..4 {
        let a = if w % 2 == 1 { &a_odd } else { &a_even };
        op = op.add(&embed(a, 4, &[w, (w + 1) % 4, (w + 2) % 4], dim)?)?;
    }
    let ket = shared(&lc, state.chi(1, 0), state.gamma(1, 0));
    let ket_lambda = state.lambda().to_vec();
    let mut chi = state.chi(1, 0).clone();
    let mut gamma = state.gamma(1, 0).clone();
    let mut lambda = ket_lambda.clone();
    let before = value(
        &lc,
        &ket,
        &ket,
        Upper::Top {
            ket: &ket_lambda,
            bra: &lambda,
        },
        &op,
    )?
    .norm();
    let mut passes = 0;
    for _ in 0..policy.inner_sweeps {
        passes += 1;
        let prev = f;
        if chis_on {
            let bra = shared(&lc, &chi, &gamma);
            let env = summed(&[Omit::Chi(0), Omit::Chi(1)], |o| {
                contract_level(
                    &lc,
                    &ket,
                    &bra,
                    Upper::Top {
                        ket: &ket_lambda,
                        bra: &lambda,
                    },
                    Lower::Operator(&op),
                    o,
                )
            })?;
            chi = regularized_polar(&env, &chi, &chi_matricization())?;
        }
        let bra = shared(&lc, &chi, &gamma);
        let v = contract_level(
            &lc,
            &ket,
            &bra,
            Upper::Top {
                ket: &ket_lambda,
                bra: &lambda,
            },
            Lower::Operator(&op),
            Omit::Top,
        )?;
        let sym = scaled_sum(&v, &v.permute(&[2, 3, 0, 1])?, 0.5)?;
        let current = top_state(&gamma, &gamma, &lambda)?.inner(&sym);
        let mat = sym.to_matrix(&crate::tensor::Matricization::split(4, 2))?;
        let (u, s) = takagi(&mat, lambda.len())?;
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(EvolutionError::NonFinite {
                level: 1,
                tensor: "top pair".into(),
            });
        }
        if current.norm() < norm * (1.0 - 1e-13) {
            gamma = Tensor::from_matrix(gamma.dims(), &u)?;
            lambda = s.iter().map(|x| x / norm).collect();
        }
        f = value(
            &lc,
            &ket,
            &shared(&lc, &chi, &gamma),
            Upper::Top {
                ket: &ket_lambda,
                bra: &lambda,
            },
            &op,
        )?;
        if !(f.re.is_finite() && f.im.is_finite()) {
            return Err(EvolutionError::NonFinite {
                level: 1,
                tensor: "top pair".into(),
            });
        }
        history.push(f.norm());
        if passes > 1 && (f.norm() - prev.norm()).abs() <= policy.inner_tol * f.norm() {
            break;
        }
    }
    levels.push(LevelFidelity {
        level: 1,
        before,
        after: f.norm(),
        passes,
    });
    state.set_chi(1, 0, chi)?;
    state.set_gamma(1, 0, gamma)?;
    state.set_lambda(lambda)?;
    Ok(GateUpdateReport {
        bond: parity + 1,
        levels,
        history,
        fidelity: f64::NAN,
        norm_sq,
    })
}

fn summed(omits: &[Omit], mut env: impl FnMut(Omit) -> crate::cone::Result<Tensor>) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for &o in omits {
        let e = env(o)?;
        acc = Some(match acc {
            None => e,
            Some(a) => a.add(&e)?,
        });
    }
    Ok(acc.expect("at least one copy"))
}

/// One Trotter step on a translation-invariant state: the schedule must
/// consist of complete parity layers of identical gates.
pub fn sweep_ti(
    state: &mut MeraState,
    schedule: &GateSchedule,
    time: f64,
    policy: &UpdatePolicy,
) -> Result<SweepReport> {
    let half = state.geometry().sites() / 2;
    let mut out = SweepReport {
        min_fidelity: f64::NAN,
        ..Default::default()
    };
    let mut k = 0;
    while k < schedule.gates.len() {
        let first = &schedule.gates[k];
        let parity = (first.bond - 1) % 2;
        let mut end = k;
        while end < schedule.gates.len()
            && (schedule.gates[end].bond - 1) % 2 == parity
            && schedule.gates[end].step == first.step
        {
            if schedule.gates[end].gate.max_abs_diff(&first.gate) > 1e-14 {
                return Err(EvolutionError::Mode(
                    "translation-invariant layers need identical gates".into(),
                ));
            }
            end += 1;
        }
        if end - k != half {
            return Err(EvolutionError::Mode(format!(
                "translation-invariant sweeps need complete parity layers of {half} gates, found {}",
                end - k
            )));
        }
        let r = apply_layer_ti(state, &first.gate, parity, time, policy)?;
        out.log_norm_sq += half as f64 * r.norm_sq.ln();
        out.gates.push(r);
        k = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mera::MeraGeometry;
    use crate::model::{ising_bond_matrix, two_site_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_and_reduction_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = MeraState::random(MeraGeometry::new(2, 2, 4).unwrap(), false, &mut rng);
        let psi = s.expand_dense().unwrap();
        let rho = crate::exact::dense_reduced_density(&psi, 8, 2, &[2, 3, 4]);
        let rho = Tensor::from_matrix(&[2; 6], &rho).unwrap();
        let h = two_site_tensor(&ising_bond_matrix(1.0), 2);
        let two = reduce(&rho, 3, &[1, 2]).unwrap();
        let a = trace_with(&embed(&h, 3, &[1, 2], 2).unwrap(), &rho);
        let b = trace_with(&h, &two);
        assert!((a - b).norm() < 1e-12);
        let wrapped = reduce(&rho, 3, &[2, 0]).unwrap();
        let c = trace_with(&embed(&h, 3, &[2, 0], 2).unwrap(), &rho);
        assert!((c - trace_with(&h, &wrapped)).norm() < 1e-12);
    }

    #[test]
    fn takagi_reconstructs_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        let a = DMatrix::from_fn(6, 6, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let m = &a + a.transpose();
        let (u, s) = takagi(&m, 6).unwrap();
        let rec =
            &u * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                6,
                s.iter().map(|&x| C64::new(x, 0.0)),
            )) * u.transpose();
        assert!((rec - &m).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn averaged_bond_value_is_the_ring_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = MeraGeometry::new(2, 2, 4).unwrap();
        let s = MeraState::random(g, true, &mut rng);
        let psi = s.expand_dense().unwrap();
        let h = two_site_tensor(&ising_bond_matrix(0.7), 2);
        let hm = ising_bond_matrix(0.7);
        let mut total = 0.0;
        for k in 0..8 {
            let out = crate::exact::apply_two_site_dense(&psi, 8, 2, k, (k + 1) % 8, &hm);
            total += psi.iter().zip(&out).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        }
        let avg = average_bond_value(&s, &h).unwrap();
        assert!((avg.re * 8.0 - total).abs() < 1e-10);
    }
}
