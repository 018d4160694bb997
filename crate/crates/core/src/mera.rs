//! Binary MERA on a periodic ring of `L = 2^(l+1)` sites.
//!
//! Levels run from `1` (top) to `l` (adjacent to the physical sites). Level
//! `i` acts on `2^(i+1)` lower sites of dimension `D_i = min(m, d^(l-i+1))`
//! and produces `2^i` upper sites of dimension `D_{i-1}`; the top bond
//! carries `D_0 = min(m, d^(l+1))`.
//!
//! With lower sites `0..n` of level `i` (0-based):
//! - isometry `j` maps upper site `j` onto lower sites `(2j, 2j+1)`;
//!   legs `(lower_left, lower_right, upper)`, isometric as
//!   `(lower_left lower_right | upper)`;
//! - disentangler `j` acts on lower sites `(2j+1, 2j+2 mod n)`; legs
//!   `(out_left, out_right, in_left, in_right)`, unitary as `(out | in)`.
//!   "in" legs face the isometries, "out" legs face the next level down.
//!
//! The two upper sites of level 1 are joined by the top vector:
//! the state there is `sum_a lambda_a |a>|a>`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::network::Network;
use crate::tensor::{polar_matrix, Matricization, Tensor, TensorError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeraError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("local state must have unit norm and length {d}, got norm {norm} and length {len}")]
    LocalState { d: usize, len: usize, norm: f64 },
    #[error("dense expansion supports at most {max} sites, got {sites}")]
    TooLarge { sites: usize, max: usize },
    #[error("no tensor at level {level}, position {position}")]
    Position { level: usize, position: usize },
    #[error("tensor shape {got:?} does not match expected {expected:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub const EXPAND_MAX_SITES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MeraGeometry {
    levels: usize,
    d: usize,
    m: usize,
}

impl MeraGeometry {
    pub fn new(levels: usize, d: usize, m: usize) -> Result<Self, MeraError> {
        if levels == 0 || levels > 40 {
            return Err(MeraError::Geometry(format!("level count {levels} outside 1..=40")));
        }
        if d < 2 {
            return Err(MeraError::Geometry(format!("local dimension {d} < 2")));
        }
        if m < d {
            return Err(MeraError::Geometry(format!(
                "bond dimension {m} below the local dimension {d}"
            )));
        }
        Ok(Self { levels, d, m })
    }

    /// Geometry for a ring of `sites` spins.
    pub fn for_sites(sites: usize, d: usize, m: usize) -> Result<Self, MeraError> {
        let levels = crate::model::levels_for_sites(sites)
            .ok_or_else(|| MeraError::Geometry(format!("{sites} sites is not 2^(l+1) with l >= 1")))?;
        Self::new(levels, d, m)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sites(&self) -> usize {
        1 << (self.levels + 1)
    }

    /// `D_i = min(m, d^(l-i+1))` for `i` in `0..=l`.
    pub fn bond_dim(&self, level: usize) -> usize {
        assert!(level <= self.levels, "level {level} out of range");
        let exp = (self.levels - level + 1) as u32;
        match self.d.checked_pow(exp) {
            Some(p) => p.min(self.m),
            None => self.m,
        }
    }

    /// Number of lower sites of level `i`.
    pub fn lower_sites(&self, level: usize) -> usize {
        1 << (level + 1)
    }

    /// Number of disentanglers (and of isometries) at level `i`.
    pub fn width(&self, level: usize) -> usize {
        1 << level
    }

    pub fn chi_dims(&self, level: usize) -> [usize; 4] {
        let b = self.bond_dim(level);
        [b; 4]
    }

    pub fn gamma_dims(&self, level: usize) -> [usize; 3] {
        let b = self.bond_dim(level);
        [b, b, self.bond_dim(level - 1)]
    }

    /// Disentangler covering lower site `s` of a level with `n` lower sites.
    pub fn chi_of_site(s: usize, n: usize) -> usize {
        if s % 2 == 1 {
            (s - 1) / 2
        } else {
            (s / 2 + n / 2 - 1) % (n / 2)
        }
    }

    /// Lower sites `(left, right)` of disentangler `j`.
    pub fn chi_sites(j: usize, n: usize) -> (usize, usize) {
        (2 * j + 1, (2 * j + 2) % n)
    }
}

pub fn chi_matricization() -> Matricization {
    Matricization::split(4, 2)
}

pub fn gamma_matricization() -> Matricization {
    Matricization::split(3, 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeraState {
    geometry: MeraGeometry,
    /// `chi[i - 1][j]`; a single entry per level in TI mode.
    chi: Vec<Vec<Tensor>>,
    gamma: Vec<Vec<Tensor>>,
    lambda: Vec<f64>,
    ti: bool,
}

impl MeraState {
    /// Assembles a state from its parts, checking shapes only.
    pub fn from_parts(
        geometry: MeraGeometry,
        chi: Vec<Vec<Tensor>>,
        gamma: Vec<Vec<Tensor>>,
        lambda: Vec<f64>,
        ti: bool,
    ) -> Result<Self, MeraError> {
        let l = geometry.levels();
        if chi.len() != l || gamma.len() != l {
            return Err(MeraError::Geometry(format!(
                "expected {l} levels, got {} disentangler and {} isometry levels",
                chi.len(),
                gamma.len()
            )));
        }
        for i in 1..=l {
            let count = if ti { 1 } else { geometry.width(i) };
            if chi[i - 1].len() != count || gamma[i - 1].len() != count {
                return Err(MeraError::Geometry(format!(
                    "level {i} needs {count} tensors of each kind"
                )));
            }
            for t in &chi[i - 1] {
                check_shape(t, &geometry.chi_dims(i))?;
            }
            for t in &gamma[i - 1] {
                check_shape(t, &geometry.gamma_dims(i))?;
            }
        }
        if lambda.len() != geometry.bond_dim(0) {
            return Err(MeraError::Shape {
                expected: vec![geometry.bond_dim(0)],
                got: vec![lambda.len()],
            });
        }
        Ok(Self {
            geometry,
            chi,
            gamma,
            lambda,
            ti,
        })
    }

    /// The product state `local^{(x) L}` with identity disentanglers.
    ///
    /// Each isometry maps upper basis state 0 onto `phi (x) phi`, where
    /// `phi` is `local` at the bottom level and basis state 0 above; the
    /// remaining columns come from Gram-Schmidt over the canonical basis.
    pub fn init_product(geometry: MeraGeometry, local: &[C64]) -> Result<Self, MeraError> {
        let norm = local.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if local.len() != geometry.d() || (norm - 1.0).abs() > 1e-12 {
            return Err(MeraError::LocalState {
                d: geometry.d(),
                len: local.len(),
                norm,
            });
        }
        let l = geometry.levels();
        let mut chi = Vec::with_capacity(l);
        let mut gamma = Vec::with_capacity(l);
        for i in 1..=l {
            let b = geometry.bond_dim(i);
            let up = geometry.bond_dim(i - 1);
            let phi: Vec<C64> = if i == l {
                local.to_vec()
            } else {
                (0..b).map(|k| C64::new(if k == 0 { 1.0 } else { 0.0 }, 0.0)).collect()
            };
            let first: Vec<C64> = phi.iter().flat_map(|a| phi.iter().map(move |c| a * c)).collect();
            let iso = complete_isometry(&first, up);
            let g = Tensor::from_matrix(&[b, b, up], &iso)?;
            let id = Tensor::identity(&[b, b]);
            let n = geometry.width(i);
            chi.push(vec![id; n]);
            gamma.push(vec![g; n]);
        }
        let mut lambda = vec![0.0; geometry.bond_dim(0)];
        lambda[0] = 1.0;
        Ok(Self {
            geometry,
            chi,
            gamma,
            lambda,
            ti: false,
        })
    }

    /// Random unitaries, isometries and top weights.
    pub fn random(geometry: MeraGeometry, ti: bool, rng: &mut impl Rng) -> Self {
        let l = geometry.levels();
        let mut chi = Vec::with_capacity(l);
        let mut gamma = Vec::with_capacity(l);
        for i in 1..=l {
            let count = if ti { 1 } else { geometry.width(i) };
            let b = geometry.bond_dim(i);
            let up = geometry.bond_dim(i - 1);
            chi.push(
                (0..count)
                    .map(|_| Tensor::from_matrix(&[b, b, b, b], &random_isometry(b * b, b * b, rng)).unwrap())
                    .collect(),
            );
            gamma.push(
                (0..count)
                    .map(|_| Tensor::from_matrix(&[b, b, up], &random_isometry(b * b, up, rng)).unwrap())
                    .collect(),
            );
        }
        let mut lambda: Vec<f64> = (0..geometry.bond_dim(0)).map(|_| rng.gen_range(0.05..1.0)).collect();
        normalize(&mut lambda);
        lambda.sort_by(|a, b| b.total_cmp(a));
        Self {
            geometry,
            chi,
            gamma,
            lambda,
            ti,
        }
    }

    pub fn geometry(&self) -> &MeraGeometry {
        &self.geometry
    }

    pub fn is_ti(&self) -> bool {
        self.ti
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    fn slot(&self, level: usize, position: usize) -> Result<usize, MeraError> {
        if level == 0 || level > self.geometry.levels() || position >= self.geometry.width(level) {
            return Err(MeraError::Position { level, position });
        }
        Ok(if self.ti { 0 } else { position })
    }

    /// Disentangler `j` of level `i` (shared tensor in TI mode).
    pub fn chi(&self, level: usize, position: usize) -> &Tensor {
        let s = self.slot(level, position).expect("valid disentangler position");
        &self.chi[level - 1][s]
    }

    pub fn gamma(&self, level: usize, position: usize) -> &Tensor {
        let s = self.slot(level, position).expect("valid isometry position");
        &self.gamma[level - 1][s]
    }

    /// Replaces disentangler `j` of level `i`; in TI mode this replaces the
    /// shared tensor.
    pub fn set_chi(&mut self, level: usize, position: usize, t: Tensor) -> Result<(), MeraError> {
        let s = self.slot(level, position)?;
        check_shape(&t, &self.geometry.chi_dims(level))?;
        self.chi[level - 1][s] = t;
        Ok(())
    }

    pub fn set_gamma(&mut self, level: usize, position: usize, t: Tensor) -> Result<(), MeraError> {
        let s = self.slot(level, position)?;
        check_shape(&t, &self.geometry.gamma_dims(level))?;
        self.gamma[level - 1][s] = t;
        Ok(())
    }

    pub fn set_lambda(&mut self, lambda: Vec<f64>) -> Result<(), MeraError> {
        if lambda.len() != self.geometry.bond_dim(0) {
            return Err(MeraError::Shape {
                expected: vec![self.geometry.bond_dim(0)],
                got: vec![lambda.len()],
            });
        }
        self.lambda = lambda;
        Ok(())
    }

    /// Stored disentanglers of level `i` (one in TI mode).
    pub fn chi_level(&self, level: usize) -> &[Tensor] {
        &self.chi[level - 1]
    }

    pub fn gamma_level(&self, level: usize) -> &[Tensor] {
        &self.gamma[level - 1]
    }

    /// Number of stored tensor structures (disentanglers, isometries and
    /// the top vector).
    pub fn tensor_count(&self) -> usize {
        self.chi.iter().map(Vec::len).sum::<usize>() + self.gamma.iter().map(Vec::len).sum::<usize>() + 1
    }

    /// Number of stored complex (and top real) coefficients.
    pub fn coefficient_count(&self) -> usize {
        self.chi.iter().flatten().map(Tensor::len).sum::<usize>()
            + self.gamma.iter().flatten().map(Tensor::len).sum::<usize>()
            + self.lambda.len()
    }

    /// Top state `sum_a lambda_a |a>|a>` as a `D_0 x D_0` tensor.
    pub fn top_tensor(&self) -> Tensor {
        let n = self.lambda.len();
        let mut t = Tensor::zeros(&[n, n]);
        for (a, &l) in self.lambda.iter().enumerate() {
            t.set(&[a, a], C64::new(l, 0.0));
        }
        t
    }

    /// Translation-invariant copy sharing the position-0 tensors of every
    /// level.
    pub fn ti_promote(&self) -> MeraState {
        MeraState {
            geometry: self.geometry,
            chi: self.chi.iter().map(|v| vec![v[0].clone()]).collect(),
            gamma: self.gamma.iter().map(|v| vec![v[0].clone()]).collect(),
            lambda: self.lambda.clone(),
            ti: true,
        }
    }

    /// General-mode copy with every shared tensor replicated.
    pub fn ti_expand(&self) -> MeraState {
        if !self.ti {
            return self.clone();
        }
        let g = self.geometry;
        MeraState {
            geometry: g,
            chi: (1..=g.levels())
                .map(|i| vec![self.chi[i - 1][0].clone(); g.width(i)])
                .collect(),
            gamma: (1..=g.levels())
                .map(|i| vec![self.gamma[i - 1][0].clone(); g.width(i)])
                .collect(),
            lambda: self.lambda.clone(),
            ti: false,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut tensors = Vec::new();
        for i in 1..=self.geometry.levels() {
            for (j, t) in self.chi[i - 1].iter().enumerate() {
                let m = t.to_matrix(&chi_matricization()).expect("chi shape");
                let dev = identity_deviation(&(m.adjoint() * &m)).max(identity_deviation(&(&m * m.adjoint())));
                tensors.push(TensorDeviation {
                    kind: TensorKind::Disentangler,
                    level: i,
                    position: j,
                    deviation: dev,
                });
            }
            for (j, t) in self.gamma[i - 1].iter().enumerate() {
                let m = t.to_matrix(&gamma_matricization()).expect("gamma shape");
                tensors.push(TensorDeviation {
                    kind: TensorKind::Isometry,
                    level: i,
                    position: j,
                    deviation: identity_deviation(&(m.adjoint() * &m)),
                });
            }
        }
        let norm: f64 = self.lambda.iter().map(|x| x * x).sum();
        let negative = self.lambda.iter().any(|&x| x < 0.0 || !x.is_finite());
        let lambda_deviation = if negative { f64::INFINITY } else { (norm - 1.0).abs() };
        ValidationReport {
            tensors,
            lambda_deviation,
        }
    }

    /// Full state vector of length `d^L`; site 0 is the most significant
    /// digit.
    pub fn expand_dense(&self) -> Result<Vec<C64>, MeraError> {
        let g = self.geometry;
        if g.sites() > EXPAND_MAX_SITES {
            return Err(MeraError::TooLarge {
                sites: g.sites(),
                max: EXPAND_MAX_SITES,
            });
        }
        let mut v = self.top_tensor();
        for i in 1..=g.levels() {
            let n = g.lower_sites(i);
            let mut net = Network::new();
            net.push_owned(v, (0..n as u32 / 2).map(|c| 1000 + c).collect());
            for c in 0..n / 2 {
                net.push(self.gamma(i, c), vec![2 * c as u32, 2 * c as u32 + 1, 1000 + c as u32]);
            }
            v = net.contract(&(0..n as u32).collect::<Vec<_>>())?;
            let mut net = Network::new();
            net.push_owned(v, (0..n as u32).collect());
            for j in 0..n / 2 {
                let (a, b) = MeraGeometry::chi_sites(j, n);
                let (a, b) = (a as u32, b as u32);
                net.push(self.chi(i, j), vec![2000 + a, 2000 + b, a, b]);
            }
            v = net.contract(&(0..n as u32).map(|s| 2000 + s).collect::<Vec<_>>())?;
        }
        Ok(v.into_data())
    }
}

fn check_shape(t: &Tensor, expected: &[usize]) -> Result<(), MeraError> {
    if t.dims() != expected {
        return Err(MeraError::Shape {
            expected: expected.to_vec(),
            got: t.dims().to_vec(),
        });
    }
    Ok(())
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn identity_deviation(m: &DMatrix<C64>) -> f64 {
    let mut dev = 0.0f64;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let target = if r == c { 1.0 } else { 0.0 };
            dev = dev.max((m[(r, c)] - C64::new(target, 0.0)).norm());
        }
    }
    dev
}

/// `rows x cols` isometry whose first column is `first` (normalized) and
/// whose other columns are Gram-Schmidt completions over `e_0, e_1, ...`.
pub fn complete_isometry(first: &[C64], cols: usize) -> DMatrix<C64> {
    let rows = first.len();
    let mut columns: Vec<Vec<C64>> = Vec::with_capacity(cols);
    let n0 = first.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    columns.push(first.iter().map(|z| z / n0).collect());
    for k in 0..rows {
        if columns.len() == cols {
            break;
        }
        let mut v = vec![C64::new(0.0, 0.0); rows];
        v[k] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for c in &columns {
                let p: C64 = c.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                v.iter_mut().zip(c).for_each(|(x, a)| *x -= p * a);
            }
        }
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-10 {
            columns.push(v.iter().map(|z| z / n).collect());
        }
    }
    DMatrix::from_fn(rows, cols, |r, c| columns[c][r])
}

/// Random `rows x cols` matrix with orthonormal columns.
pub fn random_isometry(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<C64> {
    let m = DMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    polar_matrix(&m).expect("tall random matrix")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Disentangler,
    Isometry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorDeviation {
    pub kind: TensorKind,
    pub level: usize,
    pub position: usize,
    /// Largest entry of `X^dagger X - 1` (and `X X^dagger - 1` for
    /// disentanglers), in absolute value.
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub tensors: Vec<TensorDeviation>,
    /// `|sum lambda^2 - 1|`, infinite if any weight is negative.
    pub lambda_deviation: f64,
}

impl ValidationReport {
    pub const TOLERANCE: f64 = 1e-8;

    pub fn max_deviation(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.deviation)
            .fold(self.lambda_deviation, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorDeviation> {
        self.tensors.iter().max_by(|a, b| a.deviation.total_cmp(&b.deviation))
    }

    pub fn passed(&self) -> bool {
        self.max_deviation() < Self::TOLERANCE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn up() -> Vec<C64> {
        vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    }

    #[test]
    fn bond_dimension_law() {
        let g = MeraGeometry::new(4, 2, 4).unwrap();
        assert_eq!((1..=4).map(|i| g.bond_dim(i)).collect::<Vec<_>>(), vec![4, 4, 4, 2]);
        assert_eq!(g.sites(), 32);
        assert_eq!(g.bond_dim(0), 4);
        let g = MeraGeometry::new(2, 2, 8).unwrap();
        assert_eq!((0..=2).map(|i| g.bond_dim(i)).collect::<Vec<_>>(), vec![8, 4, 2]);
        assert!(MeraGeometry::new(2, 2, 1).is_err());
        assert!(MeraGeometry::for_sites(12, 2, 4).is_err());
    }

    #[test]
    fn site_bookkeeping() {
        for n in [4usize, 8, 16] {
            for j in 0..n / 2 {
                let (a, b) = MeraGeometry::chi_sites(j, n);
                assert_eq!(MeraGeometry::chi_of_site(a, n), j);
                assert_eq!(MeraGeometry::chi_of_site(b, n), j);
            }
        }
    }

    #[test]
    fn product_state_expands_exactly() {
        for levels in [2, 3] {
            let g = MeraGeometry::new(levels, 2, 4).unwrap();
            let s = MeraState::init_product(g, &up()).unwrap();
            assert!(s.validate().max_deviation() < 1e-12);
            let v = s.expand_dense().unwrap();
            assert!((v[0].norm() - 1.0).abs() < 1e-12);
            let rest: f64 = v[1..].iter().map(|z| z.norm_sqr()).sum();
            assert!(rest < 1e-24);
        }
    }

    #[test]
    fn arbitrary_product_state() {
        let g = MeraGeometry::new(2, 2, 4).unwrap();
        let phi = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let s = MeraState::init_product(g, &phi).unwrap();
        let v = s.expand_dense().unwrap();
        for (x, amp) in v.iter().enumerate() {
            let mut expect = C64::new(1.0, 0.0);
            for site in 0..8 {
                expect *= phi[(x >> (7 - site)) & 1];
            }
            assert!((amp - expect).norm() < 1e-12);
        }
        assert!(MeraState::init_product(g, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn random_states_are_valid_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = MeraGeometry::new(2, 2, 4).unwrap();
        for _ in 0..5 {
            let s = MeraState::random(g, false, &mut rng);
            assert!(s.validate().passed());
            let norm: f64 = s.expand_dense().unwrap().iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn perturbation_is_reported() {
        let g = MeraGeometry::new(2, 2, 4).unwrap();
        let mut s = MeraState::init_product(g, &up()).unwrap();
        let mut chi = s.chi(2, 1).clone();
        let v = chi.get(&[0, 1, 1, 0]);
        chi.set(&[0, 1, 1, 0], v + C64::new(1e-3, 0.0));
        s.set_chi(2, 1, chi).unwrap();
        let report = s.validate();
        let worst = report.worst().unwrap();
        assert_eq!(
            (worst.kind, worst.level, worst.position),
            (TensorKind::Disentangler, 2, 1)
        );
        assert!((worst.deviation - 1e-3).abs() < 1e-5);
        assert!(!report.passed());
    }

    #[test]
    fn ti_promotion() {
        let g = MeraGeometry::new(2, 2, 4).unwrap();
        let s = MeraState::init_product(g, &up()).unwrap();
        let t = s.ti_promote();
        assert!(t.is_ti());
        assert_eq!(t.tensor_count(), 2 * g.levels() + 1);
        assert!(t.validate().passed());
        let a = s.expand_dense().unwrap();
        let b = t.expand_dense().unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-14));
        assert_eq!(t.ti_expand().expand_dense().unwrap(), b);
    }

    #[test]
    fn too_large_to_expand() {
        let g = MeraGeometry::new(4, 2, 2).unwrap();
        let s = MeraState::init_product(g, &up()).unwrap();
        assert!(matches!(s.expand_dense(), Err(MeraError::TooLarge { .. })));
    }
}
