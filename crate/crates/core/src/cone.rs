//! Causal cones of nearest-neighbour bonds and the networks built on them.
//!
//! Going up one level from a set `S` of lower sites, the cone gains the
//! disentanglers touching `S` (their sites form `S'`), then the isometries
//! touching `S'` (their lower sites form `T`, their upper sites form `C`).
//! `C` becomes the `S` of the next level. Sets are contiguous arcs on the
//! ring and saturate to the whole ring.
//!
//! A level network joins an upper part (a density matrix on `C`, the top
//! vector, or nothing), the ket and conjugated bra tensors of the level and
//! a lower part (an operator on `S`, open legs, or a trace). Bra and ket
//! legs outside `S'` (isometry level) or outside `S` (disentangler level)
//! are joined directly, which is the identity left by unitarity outside
//! the cone.

use crate::mera::{MeraError, MeraGeometry, MeraState};
use crate::network::{Label, Network, Plan};
use crate::tensor::{Tensor, TensorError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConeError {
    #[error("bond with left site {site} is outside a ring of {sites} sites")]
    Bond { site: usize, sites: usize },
    #[error("operator dimensions {got:?} do not match region dimensions {expected:?}")]
    Operator { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid network request: {0}")]
    Request(&'static str),
    #[error(transparent)]
    Mera(#[from] MeraError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ConeError>;

/// Contiguous arc of `len` sites on a ring of `n`, starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arc {
    pub start: usize,
    pub len: usize,
    pub n: usize,
}

impl Arc {
    pub fn new(start: usize, len: usize, n: usize) -> Self {
        if len >= n {
            Arc { start: 0, len: n, n }
        } else {
            Arc {
                start: start % n,
                len,
                n,
            }
        }
    }

    pub fn full(n: usize) -> Self {
        Arc { start: 0, len: n, n }
    }

    pub fn is_full(&self) -> bool {
        self.len == self.n
    }

    pub fn end(&self) -> usize {
        (self.start + self.len - 1) % self.n
    }

    pub fn sites(&self) -> Vec<usize> {
        (0..self.len).map(|k| (self.start + k) % self.n).collect()
    }

    pub fn contains(&self, site: usize) -> bool {
        (site + self.n - self.start) % self.n < self.len
    }

    fn grow(&self, left: bool, right: bool) -> Self {
        if self.is_full() {
            return *self;
        }
        let start = if left { self.start + self.n - 1 } else { self.start };
        Arc::new(start, self.len + left as usize + right as usize, self.n)
    }
}

/// The part of a cone inside one level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelCone {
    pub level: usize,
    /// Lower sites of the level.
    pub n: usize,
    /// Sites carrying the operator or density matrix below the level.
    pub s: Arc,
    /// Lower sites of the in-cone disentanglers.
    pub s_prime: Arc,
    /// Lower sites of the in-cone isometries.
    pub t: Arc,
    /// Upper sites of the in-cone isometries.
    pub c: Arc,
    pub chis: Vec<usize>,
    pub gammas: Vec<usize>,
}

impl LevelCone {
    pub fn from_region(level: usize, s: Arc) -> Self {
        let n = s.n;
        let sp = s.grow(s.start.is_multiple_of(2), s.end() % 2 == 1);
        let t = sp.grow(sp.start % 2 == 1, sp.end().is_multiple_of(2));
        let c = Arc::new(t.start / 2, t.len / 2, n / 2);
        let mut chis = Vec::new();
        for site in s.sites() {
            let j = MeraGeometry::chi_of_site(site, n);
            if !chis.contains(&j) {
                chis.push(j);
            }
        }
        LevelCone {
            level,
            n,
            s,
            s_prime: sp,
            t,
            gammas: c.sites(),
            c,
            chis,
        }
    }

    /// Representative region of one unit cell of a translation-invariant
    /// level: two disentanglers on lower sites `1..=4`, three isometries
    /// below upper sites `0..=2`. Level 1 uses the whole ring.
    pub fn unit_cell(level: usize) -> Self {
        let n = 1 << (level + 1);
        if level == 1 {
            return LevelCone {
                level,
                n,
                s: Arc::full(4),
                s_prime: Arc::full(4),
                t: Arc::full(4),
                c: Arc::full(2),
                chis: vec![0, 1],
                gammas: vec![0, 1],
            };
        }
        LevelCone {
            level,
            n,
            s: Arc::new(1, 4, n),
            s_prime: Arc::new(1, 4, n),
            t: Arc::new(0, 6, n),
            c: Arc::new(0, 3, n / 2),
            chis: vec![0, 1],
            gammas: vec![0, 1, 2],
        }
    }
}

/// Cone of the bond joining physical sites `left` and `left + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalCone {
    pub left_site: usize,
    /// `levels[i - 1]` is the part inside level `i`.
    pub levels: Vec<LevelCone>,
}

impl CausalCone {
    pub fn level(&self, level: usize) -> &LevelCone {
        &self.levels[level - 1]
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn tensor_count(&self) -> usize {
        self.levels.iter().map(|l| l.chis.len() + l.gammas.len()).sum::<usize>() + 1
    }
}

pub fn cone_of(geometry: &MeraGeometry, left_site: usize) -> Result<CausalCone> {
    let sites = geometry.sites();
    if left_site >= sites {
        return Err(ConeError::Bond { site: left_site, sites });
    }
    let l = geometry.levels();
    let mut levels = Vec::with_capacity(l);
    let mut s = Arc::new(left_site, 2, sites);
    for i in (1..=l).rev() {
        let lc = LevelCone::from_region(i, s);
        s = lc.c;
        levels.push(lc);
    }
    levels.reverse();
    Ok(CausalCone { left_site, levels })
}

/// Copies of the in-cone tensors of one level, keyed by position.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTensors {
    pub chi: Vec<(usize, Tensor)>,
    pub gamma: Vec<(usize, Tensor)>,
}

impl LevelTensors {
    pub fn take(state: &MeraState, lc: &LevelCone) -> Self {
        LevelTensors {
            chi: lc.chis.iter().map(|&j| (j, state.chi(lc.level, j).clone())).collect(),
            gamma: lc
                .gammas
                .iter()
                .map(|&c| (c, state.gamma(lc.level, c).clone()))
                .collect(),
        }
    }

    pub fn chi(&self, j: usize) -> &Tensor {
        &self.chi.iter().find(|e| e.0 == j).expect("disentangler in cone").1
    }

    pub fn gamma(&self, c: usize) -> &Tensor {
        &self.gamma.iter().find(|e| e.0 == c).expect("isometry in cone").1
    }

    pub fn set_chi(&mut self, j: usize, t: Tensor) {
        self.chi.iter_mut().find(|e| e.0 == j).expect("disentangler in cone").1 = t;
    }

    pub fn set_gamma(&mut self, c: usize, t: Tensor) {
        self.gamma.iter_mut().find(|e| e.0 == c).expect("isometry in cone").1 = t;
    }

    /// Same tensors at every position of `lc` (translation-invariant mode).
    pub fn shared(lc: &LevelCone, chi: &Tensor, gamma: &Tensor) -> Self {
        LevelTensors {
            chi: lc.chis.iter().map(|&j| (j, chi.clone())).collect(),
            gamma: lc.gammas.iter().map(|&c| (c, gamma.clone())).collect(),
        }
    }
}

/// In-cone tensors of a whole cone plus the top weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeTensors {
    pub levels: Vec<LevelTensors>,
    pub lambda: Vec<f64>,
}

impl ConeTensors {
    pub fn take(state: &MeraState, cone: &CausalCone) -> Self {
        ConeTensors {
            levels: cone.levels.iter().map(|lc| LevelTensors::take(state, lc)).collect(),
            lambda: state.lambda().to_vec(),
        }
    }

    pub fn level(&self, level: usize) -> &LevelTensors {
        &self.levels[level - 1]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut LevelTensors {
        &mut self.levels[level - 1]
    }

    /// Copies the tensors back into a general-mode state.
    pub fn write_back(&self, state: &mut MeraState, cone: &CausalCone) -> Result<()> {
        for (lc, lt) in cone.levels.iter().zip(&self.levels) {
            for (j, t) in &lt.chi {
                state.set_chi(lc.level, *j, t.clone())?;
            }
            for (c, t) in &lt.gamma {
                state.set_gamma(lc.level, *c, t.clone())?;
            }
        }
        state.set_lambda(self.lambda.clone())?;
        Ok(())
    }
}

/// What sits above the level's isometries.
#[derive(Clone, Copy, Debug)]
pub enum Upper<'a> {
    /// Density matrix on `C`, legs `(ket C.., bra C..)`.
    Rho(&'a Tensor),
    /// Top vector of the ket and of the bra (level 1 only).
    Top { ket: &'a [f64], bra: &'a [f64] },
    /// Left open: the result carries `(bra C.., ket C..)` legs.
    Open,
}

/// What sits below the level's disentanglers.
#[derive(Clone, Copy, Debug)]
pub enum Lower<'a> {
    /// Operator on `S`, legs `(out S.., in S..)`.
    Operator(&'a Tensor),
    /// Left open: the result carries `(ket S.., bra S..)` legs.
    Open,
    /// Bra and ket joined on `S` as well.
    Identity,
}

/// Bra tensor removed from the network; its legs become the result's legs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Omit {
    None,
    Chi(usize),
    Gamma(usize),
    /// Both level-1 isometries and the top vector; legs are the four lower
    /// sites of level 1.
    Top,
}

const KF: u32 = 1;
const BF: u32 = 2;
const KX: u32 = 3;
const BX: u32 = 4;
const KC: u32 = 5;
const BC: u32 = 6;

fn lab(kind: u32, site: usize) -> Label {
    (kind << 24) | site as u32
}

fn diag(v: &[f64]) -> Tensor {
    let n = v.len();
    let mut t = Tensor::zeros(&[n, n]);
    for (a, &x) in v.iter().enumerate() {
        t.set(&[a, a], C64::new(x, 0.0));
    }
    t
}

/// Builds one level network and returns it with its open labels.
pub fn level_network<'a>(
    lc: &LevelCone,
    ket: &'a LevelTensors,
    bra: &'a LevelTensors,
    upper: Upper<'a>,
    lower: Lower<'a>,
    omit: Omit,
) -> Result<(Network<'a>, Vec<Label>)> {
    let opens = matches!(upper, Upper::Open) as u8 + matches!(lower, Lower::Open) as u8 + (omit != Omit::None) as u8;
    if opens > 1 {
        return Err(ConeError::Request("at most one part of a level network may be open"));
    }
    if omit == Omit::Top && !matches!(upper, Upper::Top { .. }) {
        return Err(ConeError::Request("the top pair exists only at level 1"));
    }
    let linked = !matches!(lower, Lower::Identity);
    let kf = |p: usize| lab(KF, p);
    let bf = |p: usize| if lc.s_prime.contains(p) { lab(BF, p) } else { lab(KF, p) };
    let kx = |p: usize| lab(KX, p);
    let bx = |p: usize| {
        if linked && lc.s.contains(p) {
            lab(BX, p)
        } else {
            lab(KX, p)
        }
    };
    let c_sites = lc.c.sites();
    let s_sites = lc.s.sites();

    let mut net = Network::new();
    match upper {
        Upper::Rho(r) => {
            let labels = c_sites
                .iter()
                .map(|&c| lab(KC, c))
                .chain(c_sites.iter().map(|&c| lab(BC, c)));
            net.push(r, labels.collect());
        }
        Upper::Top { ket: lk, bra: lb } => {
            net.push_owned(diag(lk), vec![lab(KC, 0), lab(KC, 1)]);
            if omit != Omit::Top {
                net.push_owned(diag(lb), vec![lab(BC, 0), lab(BC, 1)]);
            }
        }
        Upper::Open => {}
    }
    for (c, g) in &ket.gamma {
        net.push(g, vec![kf(2 * c), kf(2 * c + 1), lab(KC, *c)]);
    }
    for (c, g) in &bra.gamma {
        if omit == Omit::Gamma(*c) || omit == Omit::Top {
            continue;
        }
        net.push_owned(g.conj(), vec![bf(2 * c), bf(2 * c + 1), lab(BC, *c)]);
    }
    for (j, x) in &ket.chi {
        let (a, b) = MeraGeometry::chi_sites(*j, lc.n);
        net.push(x, vec![kx(a), kx(b), kf(a), kf(b)]);
    }
    for (j, x) in &bra.chi {
        if omit == Omit::Chi(*j) {
            continue;
        }
        let (a, b) = MeraGeometry::chi_sites(*j, lc.n);
        net.push_owned(x.conj(), vec![bx(a), bx(b), bf(a), bf(b)]);
    }
    if let Lower::Operator(o) = lower {
        let labels = s_sites.iter().map(|&p| bx(p)).chain(s_sites.iter().map(|&p| kx(p)));
        net.push(o, labels.collect());
    }

    let open: Vec<Label> = match (upper, lower, omit) {
        (Upper::Open, _, _) => c_sites
            .iter()
            .map(|&c| lab(BC, c))
            .chain(c_sites.iter().map(|&c| lab(KC, c)))
            .collect(),
        (_, Lower::Open, _) => s_sites
            .iter()
            .map(|&p| kx(p))
            .chain(s_sites.iter().map(|&p| lab(BX, p)))
            .collect(),
        (_, _, Omit::Chi(j)) => {
            let (a, b) = MeraGeometry::chi_sites(j, lc.n);
            vec![bx(a), bx(b), bf(a), bf(b)]
        }
        (_, _, Omit::Gamma(c)) => vec![bf(2 * c), bf(2 * c + 1), lab(BC, c)],
        (_, _, Omit::Top) => (0..4).map(bf).collect(),
        (_, _, Omit::None) => Vec::new(),
    };
    Ok((net, open))
}

pub fn contract_level(
    lc: &LevelCone,
    ket: &LevelTensors,
    bra: &LevelTensors,
    upper: Upper<'_>,
    lower: Lower<'_>,
    omit: Omit,
) -> Result<Tensor> {
    let (net, open) = level_network(lc, ket, bra, upper, lower, omit)?;
    Ok(net.contract(&open)?)
}

pub fn plan_level(
    lc: &LevelCone,
    ket: &LevelTensors,
    bra: &LevelTensors,
    upper: Upper<'_>,
    lower: Lower<'_>,
    omit: Omit,
) -> Result<Plan> {
    let (net, open) = level_network(lc, ket, bra, upper, lower, omit)?;
    Ok(net.plan(&open)?)
}

fn upper_for<'a>(level: usize, ket: &'a ConeTensors, bra: &'a ConeTensors, rho: &'a [Tensor]) -> Upper<'a> {
    if level == 1 {
        Upper::Top {
            ket: &ket.lambda,
            bra: &bra.lambda,
        }
    } else {
        Upper::Rho(&rho[level - 2])
    }
}

/// Density matrices `rho[i - 1]` on `S_i` for `i` in `1..=l`, each with legs
/// `(ket S.., bra S..)`. With distinct bra and ket these are transition
/// matrices.
pub fn descend_all(cone: &CausalCone, ket: &ConeTensors, bra: &ConeTensors) -> Result<Vec<Tensor>> {
    let mut rho: Vec<Tensor> = Vec::with_capacity(cone.depth());
    for lc in &cone.levels {
        let i = lc.level;
        let next = contract_level(
            lc,
            ket.level(i),
            bra.level(i),
            upper_for(i, ket, bra, &rho),
            Lower::Open,
            Omit::None,
        )?;
        rho.push(next);
    }
    Ok(rho)
}

/// Raises an operator on `S_i` through level `i` to `C_i`.
pub fn ascend(lc: &LevelCone, ket: &LevelTensors, bra: &LevelTensors, op: &Tensor) -> Result<Tensor> {
    contract_level(lc, ket, bra, Upper::Open, Lower::Operator(op), Omit::None)
}

fn check_operator(op: &Tensor, dims: &[usize]) -> Result<()> {
    let expected: Vec<usize> = dims.iter().chain(dims).copied().collect();
    if op.dims() != expected.as_slice() {
        return Err(ConeError::Operator {
            expected,
            got: op.dims().to_vec(),
        });
    }
    Ok(())
}

/// Two-site density matrix of the bond starting at `left_site`, legs
/// `(ket left, ket right, bra left, bra right)`.
pub fn bond_density(state: &MeraState, left_site: usize) -> Result<Tensor> {
    let cone = cone_of(state.geometry(), left_site)?;
    let t = ConeTensors::take(state, &cone);
    Ok(descend_all(&cone, &t, &t)?.pop().expect("at least one level"))
}

/// Location of a bra tensor for [`environment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Chi { level: usize, position: usize },
    Gamma { level: usize, position: usize },
    Top,
}

fn check_gate(geometry: &MeraGeometry, gate: &Tensor) -> Result<()> {
    check_operator(gate, &[geometry.d(), geometry.d()])
}

/// Environment of a bra tensor in `<bra| gate |ket>` restricted to the
/// cone of the bond at `left_site`: the result `E` has the target's legs and
/// `Tr(target^dagger E)` equals the overlap. Outside the cone bra and ket
/// must agree. For [`Target::Top`] the legs are the four lower sites of
/// level 1 and the target is `sum_a lambda_a Gamma_0[.., a] Gamma_1[.., a]`.
pub fn environment(
    ket: &MeraState,
    bra: &MeraState,
    gate: &Tensor,
    left_site: usize,
    target: Target,
) -> Result<Tensor> {
    let g = ket.geometry();
    check_gate(g, gate)?;
    let cone = cone_of(g, left_site)?;
    let k = ConeTensors::take(ket, &cone);
    let b = ConeTensors::take(bra, &cone);
    let (level, omit) = match target {
        Target::Chi { level, position } => (level, Omit::Chi(position)),
        Target::Gamma { level, position } => (level, Omit::Gamma(position)),
        Target::Top => (1, Omit::Top),
    };
    if level == 0 || level > g.levels() {
        return Err(ConeError::Request("target level out of range"));
    }
    let lc = cone.level(level);
    let in_cone = match omit {
        Omit::Chi(j) => lc.chis.contains(&j),
        Omit::Gamma(c) => lc.gammas.contains(&c),
        _ => true,
    };
    if !in_cone {
        return Err(ConeError::Request("target tensor is outside the causal cone"));
    }
    let mut op = gate.clone();
    for i in (level + 1..=g.levels()).rev() {
        op = ascend(cone.level(i), k.level(i), b.level(i), &op)?;
    }
    let rho = if level > 1 {
        let partial = CausalCone {
            left_site,
            levels: cone.levels[..level - 1].to_vec(),
        };
        descend_all(&partial, &k, &b)?
    } else {
        Vec::new()
    };
    contract_level(
        lc,
        k.level(level),
        b.level(level),
        upper_for(level, &k, &b, &rho),
        Lower::Operator(&op),
        omit,
    )
}

/// `<bra| gate |ket>` by contracting the cone of the bond at `left_site`.
pub fn cone_overlap(ket: &MeraState, bra: &MeraState, gate: &Tensor, left_site: usize) -> Result<C64> {
    check_gate(ket.geometry(), gate)?;
    let cone = cone_of(ket.geometry(), left_site)?;
    let k = ConeTensors::take(ket, &cone);
    let b = ConeTensors::take(bra, &cone);
    let rho = descend_all(&cone, &k, &b)?.pop().expect("at least one level");
    Ok(trace_with(gate, &rho))
}

/// `Tr(op rho)` for `op` with legs `(out.., in..)` and `rho` with legs
/// `(ket.., bra..)`.
pub fn trace_with(op: &Tensor, rho: &Tensor) -> C64 {
    let n = (rho.len() as f64).sqrt().round() as usize;
    let (o, r) = (op.data(), rho.data());
    let mut acc = C64::new(0.0, 0.0);
    for out in 0..n {
        for inp in 0..n {
            acc += o[out * n + inp] * r[inp * n + out];
        }
    }
    acc
}

/// Multiply-add counts of the cone networks for one geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopEstimate {
    /// Largest single environment over all levels and cone shapes.
    pub max_environment: u64,
    /// Environments, descents and ascents of one gate with one inner pass,
    /// averaged over bond parities.
    pub per_gate: u64,
    /// `per_gate` times the number of bonds.
    pub per_sweep: u64,
}

/// Plans the contractions of one gate update from shapes alone.
pub fn flops_estimate(geometry: &MeraGeometry) -> Result<FlopEstimate> {
    let local = vec![C64::new(1.0, 0.0); 1]
        .into_iter()
        .chain(std::iter::repeat_n(C64::new(0.0, 0.0), geometry.d() - 1))
        .collect::<Vec<_>>();
    let state = MeraState::init_product(*geometry, &local)?;
    let mut max_environment = 0u64;
    let mut total = 0u64;
    for left in [0usize, 1] {
        let cone = cone_of(geometry, left)?;
        let t = ConeTensors::take(&state, &cone);
        let rho = descend_all(&cone, &t, &t)?;
        for lc in &cone.levels {
            let i = lc.level;
            let lt = t.level(i);
            let upper = upper_for(i, &t, &t, &rho);
            let b = geometry.bond_dim(i);
            let op = Tensor::zeros(&vec![b; 2 * lc.s.len]);
            let mut level_cost = 0u64;
            let mut omits: Vec<Omit> = lc.chis.iter().map(|&j| Omit::Chi(j)).collect();
            if i == 1 {
                omits.push(Omit::Top);
            } else {
                omits.extend(lc.gammas.iter().map(|&c| Omit::Gamma(c)));
            }
            for omit in omits {
                let f = plan_level(lc, lt, lt, upper, Lower::Operator(&op), omit)?.flops;
                max_environment = max_environment.max(f);
                level_cost += f;
            }
            level_cost += plan_level(lc, lt, lt, Upper::Open, Lower::Operator(&op), Omit::None)?.flops;
            level_cost += plan_level(lc, lt, lt, upper, Lower::Open, Omit::None)?.flops;
            total += level_cost;
        }
    }
    let per_gate = total / 2;
    Ok(FlopEstimate {
        max_environment,
        per_gate,
        per_sweep: per_gate * geometry.sites() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{apply_two_site_dense, dense_reduced_density};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arcs_wrap_and_saturate() {
        let a = Arc::new(7, 2, 8);
        assert_eq!(a.sites(), vec![7, 0]);
        assert!(a.contains(0) && a.contains(7) && !a.contains(1));
        assert_eq!(Arc::new(3, 9, 8), Arc::full(8));
    }

    #[test]
    fn cone_shapes_follow_bond_parity() {
        let g = MeraGeometry::new(4, 2, 2).unwrap();
        let wide = cone_of(&g, 4).unwrap();
        let bottom = wide.level(4);
        assert_eq!((bottom.chis.len(), bottom.gammas.len()), (2, 3));
        let narrow = cone_of(&g, 5).unwrap();
        let bottom = narrow.level(4);
        assert_eq!((bottom.chis.len(), bottom.gammas.len()), (1, 2));
        for left in 0..g.sites() {
            let cone = cone_of(&g, left).unwrap();
            for lc in &cone.levels {
                assert!(lc.chis.len() <= 2 && lc.gammas.len() <= 3);
                assert!(lc.c.len <= 3);
            }
            assert!(cone.level(1).t.is_full());
        }
    }

    fn random_state(seed: u64) -> MeraState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MeraState::random(MeraGeometry::new(2, 2, 4).unwrap(), false, &mut rng)
    }

    #[test]
    fn bond_density_matches_dense_partial_trace() {
        let s = random_state(5);
        let psi = s.expand_dense().unwrap();
        for left in 0..8 {
            let rho = bond_density(&s, left).unwrap();
            let dense = dense_reduced_density(&psi, 8, 2, &[left, (left + 1) % 8]);
            for r in 0..4 {
                for c in 0..4 {
                    assert!((rho.data()[r * 4 + c] - dense[(r, c)]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn environments_reproduce_dense_overlap() {
        let ket = random_state(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gate = Tensor::from_fn(&[2, 2, 2, 2], |_| {
            use rand::Rng;
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        for left in [2usize, 3] {
            let cone = cone_of(ket.geometry(), left).unwrap();
            let mut bra = ket.clone();
            let other = random_state(9);
            for lc in &cone.levels {
                for &j in &lc.chis {
                    bra.set_chi(lc.level, j, other.chi(lc.level, j).clone()).unwrap();
                }
                for &c in &lc.gammas {
                    bra.set_gamma(lc.level, c, other.gamma(lc.level, c).clone()).unwrap();
                }
            }
            bra.set_lambda(other.lambda().to_vec()).unwrap();
            let psi = ket.expand_dense().unwrap();
            let phi = bra.expand_dense().unwrap();
            let upsi = apply_two_site_dense(&psi, 8, 2, left, (left + 1) % 8, &crate::model::two_site_matrix(&gate));
            let dense: C64 = phi.iter().zip(&upsi).map(|(a, b)| a.conj() * b).sum();
            assert!((cone_overlap(&ket, &bra, &gate, left).unwrap() - dense).norm() < 1e-10);
            for lc in &cone.levels {
                let i = lc.level;
                for &j in &lc.chis {
                    let e = environment(&ket, &bra, &gate, left, Target::Chi { level: i, position: j }).unwrap();
                    assert!((bra.chi(i, j).inner(&e) - dense).norm() < 1e-10);
                }
                if i > 1 {
                    for &c in &lc.gammas {
                        let e = environment(&ket, &bra, &gate, left, Target::Gamma { level: i, position: c }).unwrap();
                        assert!((bra.gamma(i, c).inner(&e) - dense).norm() < 1e-10);
                    }
                }
            }
            let v = environment(&ket, &bra, &gate, left, Target::Top).unwrap();
            let lt = LevelTensors::take(&bra, cone.level(1));
            let (g0, g1) = (lt.gamma(0), lt.gamma(1));
            let top = crate::tensor::contract(
                &crate::tensor::contract(g0, &diag(bra.lambda()), &[(2, 0)]).unwrap(),
                g1,
                &[(2, 2)],
            )
            .unwrap();
            assert_eq!(v.dims(), top.dims());
            assert!((top.inner(&v) - dense).norm() < 1e-10);
        }
    }

    #[test]
    fn identity_overlap_is_one() {
        let s = random_state(3);
        let id = Tensor::identity(&[2, 2]);
        for left in 0..8 {
            assert!((cone_overlap(&s, &s, &id, left).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn flop_estimate_respects_the_ninth_power() {
        let small = flops_estimate(&MeraGeometry::new(4, 2, 2).unwrap()).unwrap();
        let big = flops_estimate(&MeraGeometry::new(4, 2, 4).unwrap()).unwrap();
        assert!(big.max_environment as f64 <= small.max_environment as f64 * 2f64.powi(9));
        let deeper = flops_estimate(&MeraGeometry::new(6, 2, 4).unwrap()).unwrap();
        assert!(deeper.max_environment == big.max_environment);
    }
}
