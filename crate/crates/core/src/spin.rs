//! Spin-1/2 operators, Heisenberg-type Hamiltonians and sector-resolved exact
//! diagonalization.
//!
//! Basis convention: a product state of `n` spins is indexed by an `n`-bit
//! integer whose most significant bit is site 1. A clear bit is spin up, a set
//! bit is spin down, so the single-site basis is `(|↑⟩, |↓⟩)` and
//! `s^z = diag(+1/2, -1/2)`.

use std::io::{self, Write};
use std::ops::Mul;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Default cap on the number of sites.
pub const DEFAULT_MAX_SITES: usize = 14;

const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Plus,
    Minus,
    Z,
}

/// Change of total `S_z` produced by an operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SzShift {
    Definite(i32),
    Mixed,
}

impl SzShift {
    fn compose(self, other: SzShift) -> SzShift {
        match (self, other) {
            (SzShift::Definite(a), SzShift::Definite(b)) => SzShift::Definite(a + b),
            _ => SzShift::Mixed,
        }
    }
}

/// Sparse operator on the `2^n` spin space with its `S_z` bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinOperator {
    n_sites: usize,
    matrix: CsrMatrix,
    sz_shift: SzShift,
}

impl SpinOperator {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn sz_shift(&self) -> SzShift {
        self.sz_shift
    }

    pub fn adjoint(&self) -> SpinOperator {
        SpinOperator {
            n_sites: self.n_sites,
            matrix: self.matrix.adjoint(),
            sz_shift: match self.sz_shift {
                SzShift::Definite(s) => SzShift::Definite(-s),
                SzShift::Mixed => SzShift::Mixed,
            },
        }
    }

    pub fn scale(&self, s: f64) -> SpinOperator {
        SpinOperator {
            matrix: self.matrix.scale(C64::new(s, 0.0)),
            ..self.clone()
        }
    }

    pub fn scale_complex(&self, s: C64) -> SpinOperator {
        SpinOperator {
            matrix: self.matrix.scale(s),
            ..self.clone()
        }
    }

    /// Sum of two operators; the shift stays definite only when both agree.
    pub fn add(&self, other: &SpinOperator) -> SpinOperator {
        assert_eq!(self.n_sites, other.n_sites);
        let sz_shift = if self.sz_shift == other.sz_shift {
            self.sz_shift
        } else if self.matrix.nnz() == 0 {
            other.sz_shift
        } else if other.matrix.nnz() == 0 {
            self.sz_shift
        } else {
            SzShift::Mixed
        };
        SpinOperator {
            n_sites: self.n_sites,
            matrix: self.matrix.add(&other.matrix),
            sz_shift,
        }
    }

    /// Zero operator carrying a definite shift, used as a fold seed.
    pub fn zero(n_sites: usize, shift: i32) -> SpinOperator {
        let d = 1 << n_sites;
        SpinOperator {
            n_sites,
            matrix: CsrMatrix::zeros(d, d),
            sz_shift: SzShift::Definite(shift),
        }
    }
}

impl Mul for &SpinOperator {
    type Output = SpinOperator;

    fn mul(self, rhs: &SpinOperator) -> SpinOperator {
        assert_eq!(self.n_sites, rhs.n_sites);
        SpinOperator {
            n_sites: self.n_sites,
            matrix: self.matrix.matmul(&rhs.matrix),
            sz_shift: self.sz_shift.compose(rhs.sz_shift),
        }
    }
}

/// The product space of `n` spin-1/2 sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpinSpace {
    n_sites: usize,
}

impl SpinSpace {
    pub fn new(n_sites: usize) -> Result<Self> {
        Self::with_cap(n_sites, DEFAULT_MAX_SITES)
    }

    pub fn with_cap(n_sites: usize, cap: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidParameter {
                name: "n_sites",
                reason: "must be at least 1".into(),
            });
        }
        if n_sites > cap {
            return Err(Error::TooManySites { n_sites, cap });
        }
        Ok(Self { n_sites })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    fn bit(&self, site: usize) -> usize {
        1 << (self.n_sites - site)
    }

    /// True if `site` (1-based) is spin up in basis state `b`.
    pub fn is_up(&self, b: usize, site: usize) -> bool {
        b & self.bit(site) == 0
    }

    /// Total `S_z` of basis state `b`.
    pub fn sz_of(&self, b: usize) -> f64 {
        let down = b.count_ones() as f64;
        self.n_sites as f64 / 2.0 - down
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site == 0 || site > self.n_sites {
            return Err(Error::SiteOutOfRange {
                site,
                n_sites: self.n_sites,
            });
        }
        Ok(())
    }

    /// `I ⊗ … ⊗ s^kind ⊗ … ⊗ I` with the single-site factor at `site` (1-based).
    pub fn site_operator(&self, kind: SiteKind, site: usize) -> Result<SpinOperator> {
        self.check_site(site)?;
        let bit = self.bit(site);
        let d = self.dim();
        let (trip, shift): (Vec<_>, i32) = match kind {
            SiteKind::Z => (
                (0..d)
                    .map(|b| {
                        let v = if b & bit == 0 { 0.5 } else { -0.5 };
                        (b, b, C64::new(v, 0.0))
                    })
                    .collect(),
                0,
            ),
            // s^+ = |↑⟩⟨↓| clears the bit
            SiteKind::Plus => (
                (0..d).filter(|b| b & bit != 0).map(|b| (b ^ bit, b, ONE)).collect(),
                1,
            ),
            SiteKind::Minus => (
                (0..d).filter(|b| b & bit == 0).map(|b| (b | bit, b, ONE)).collect(),
                -1,
            ),
        };
        Ok(SpinOperator {
            n_sites: self.n_sites,
            matrix: CsrMatrix::from_triplets(d, d, trip),
            sz_shift: SzShift::Definite(shift),
        })
    }

    /// Total `S_z = Σ_j s_j^z`.
    pub fn total_sz(&self) -> SpinOperator {
        let d = self.dim();
        SpinOperator {
            n_sites: self.n_sites,
            matrix: CsrMatrix::from_triplets(d, d, (0..d).map(|b| (b, b, C64::new(self.sz_of(b), 0.0)))),
            sz_shift: SzShift::Definite(0),
        }
    }
}

/// Convenience wrapper around [`SpinSpace::site_operator`] with the default cap.
pub fn site_operator(kind: SiteKind, site: usize, n_sites: usize) -> Result<SpinOperator> {
    SpinSpace::new(n_sites)?.site_operator(kind, site)
}

/// One term of a spin Hamiltonian. Sites are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Term {
    /// `strength · s_i · s_j`
    Exchange { i: usize, j: usize, strength: f64 },
    /// `strength · s_i^z s_j^z`
    Ising { i: usize, j: usize, strength: f64 },
    /// `strength · s_site^z`
    Field { site: usize, strength: f64 },
}

/// Plain description of a Hamiltonian, serializable as a key-value document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub n_sites: usize,
    pub terms: Vec<Term>,
}

impl HamiltonianSpec {
    /// Open Heisenberg chain `J Σ_{j<N} s_j·s_{j+1} + B S_z`.
    pub fn chain(n_sites: usize, j: f64, b: f64) -> Self {
        let mut terms: Vec<Term> = (1..n_sites)
            .map(|i| Term::Exchange {
                i,
                j: i + 1,
                strength: j,
            })
            .collect();
        if b != 0.0 {
            terms.extend((1..=n_sites).map(|site| Term::Field { site, strength: b }));
        }
        Self { n_sites, terms }
    }

    pub fn build(&self) -> Result<SpinHamiltonian> {
        SpinHamiltonian::from_spec(self.clone(), DEFAULT_MAX_SITES)
    }
}

/// A Hermitian spin Hamiltonian assembled from [`Term`]s.
#[derive(Clone, Debug)]
pub struct SpinHamiltonian {
    spec: HamiltonianSpec,
    space: SpinSpace,
    matrix: CsrMatrix,
}

impl SpinHamiltonian {
    pub fn from_spec(spec: HamiltonianSpec, cap: usize) -> Result<Self> {
        let space = SpinSpace::with_cap(spec.n_sites, cap)?;
        let d = space.dim();
        let mut trip = Vec::new();
        for term in &spec.terms {
            let strength = match *term {
                Term::Exchange { strength, .. } | Term::Ising { strength, .. } | Term::Field { strength, .. } => strength,
            };
            if !strength.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "strength",
                    reason: format!("non-finite coupling in {term:?}"),
                });
            }
            match *term {
                Term::Field { site, strength } => {
                    space.check_site(site)?;
                    for b in 0..d {
                        let sz = if space.is_up(b, site) { 0.5 } else { -0.5 };
                        trip.push((b, b, C64::new(strength * sz, 0.0)));
                    }
                }
                Term::Ising { i, j, strength } | Term::Exchange { i, j, strength } => {
                    space.check_site(i)?;
                    space.check_site(j)?;
                    if i == j {
                        return Err(Error::InvalidParameter {
                            name: "terms",
                            reason: format!("two-site term on a single site {i}"),
                        });
                    }
                    let flip = space.bit(i) | space.bit(j);
                    let exchange = matches!(term, Term::Exchange { .. });
                    for b in 0..d {
                        let same = space.is_up(b, i) == space.is_up(b, j);
                        let zz = if same { 0.25 } else { -0.25 };
                        trip.push((b, b, C64::new(strength * zz, 0.0)));
                        if exchange && !same {
                            // ½(s_i^+ s_j^- + s_i^- s_j^+) swaps antiparallel pairs
                            trip.push((b ^ flip, b, C64::new(0.5 * strength, 0.0)));
                        }
                    }
                }
            }
        }
        Ok(Self {
            matrix: CsrMatrix::from_triplets(d, d, trip),
            spec,
            space,
        })
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn space(&self) -> SpinSpace {
        self.space
    }

    pub fn n_sites(&self) -> usize {
        self.space.n_sites
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Frobenius norm of the matrix.
    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn as_operator(&self) -> SpinOperator {
        SpinOperator {
            n_sites: self.n_sites(),
            matrix: self.matrix.clone(),
            sz_shift: if self.conserves_sz() {
                SzShift::Definite(0)
            } else {
                SzShift::Mixed
            },
        }
    }

    /// True if every matrix element connects basis states of equal `S_z`.
    pub fn conserves_sz(&self) -> bool {
        self.matrix
            .triplets()
            .all(|(r, c, _)| self.space.sz_of(r) == self.space.sz_of(c))
    }
}

/// Open Heisenberg chain `J Σ s_j·s_{j+1} + B S_z` with even `n_sites`.
pub fn heisenberg_chain(n_sites: usize, j: f64, b: f64) -> Result<SpinHamiltonian> {
    heisenberg_chain_with(n_sites, j, b, false)
}

/// As [`heisenberg_chain`], optionally accepting odd site counts.
pub fn heisenberg_chain_with(n_sites: usize, j: f64, b: f64, allow_odd: bool) -> Result<SpinHamiltonian> {
    if !(j >= 0.0) || !j.is_finite() {
        return Err(Error::InvalidParameter {
            name: "J",
            reason: format!("exchange must be finite and non-negative, got {j}"),
        });
    }
    if !b.is_finite() {
        return Err(Error::InvalidParameter {
            name: "B",
            reason: format!("field must be finite, got {b}"),
        });
    }
    if n_sites % 2 == 1 && !allow_odd {
        return Err(Error::OddSiteCount(n_sites));
    }
    HamiltonianSpec::chain(n_sites, j, b).build()
}

/// `B (s_1^z + s_2^z) + J s_1·s_2`.
pub fn two_spin_model(b: f64, j: f64) -> Result<SpinHamiltonian> {
    if !(j > 0.0) || !j.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter {
            name: "J",
            reason: format!("need finite J > 0 and finite B, got J = {j}, B = {b}"),
        });
    }
    HamiltonianSpec::chain(2, j, b).build()
}

/// Eigenvalues, eigenvectors and `S_z` labels of a spin Hamiltonian.
///
/// Energies ascend. Inside a numerically degenerate cluster states are ordered
/// by `S_z`, then by the order in which the solver produced them.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    n_sites: usize,
    energies: Vec<f64>,
    states: DMatrix<C64>,
    sz_values: Vec<f64>,
    h_norm: f64,
    sector_resolved: bool,
}

/// Relative tolerance defining degenerate clusters.
pub const DEGENERACY_RTOL: f64 = 1e-9;

impl EigenSystem {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Eigenvectors as columns.
    pub fn states(&self) -> &DMatrix<C64> {
        &self.states
    }

    pub fn state(&self, mu: usize) -> DVector<C64> {
        self.states.column(mu).into_owned()
    }

    pub fn sz_values(&self) -> &[f64] {
        &self.sz_values
    }

    /// Whether each eigenvector was computed inside a single `S_z` sector.
    pub fn is_sector_resolved(&self) -> bool {
        self.sector_resolved
    }

    /// Frobenius norm of the diagonalized matrix.
    pub fn h_norm(&self) -> f64 {
        self.h_norm
    }

    /// `E_μ - E_ν`.
    pub fn gap(&self, mu: usize, nu: usize) -> f64 {
        self.energies[mu] - self.energies[nu]
    }

    /// Matrix of `⟨Ψ_μ|op|Ψ_ν⟩`.
    pub fn matrix_elements(&self, op: &CsrMatrix) -> DMatrix<C64> {
        self.states.adjoint() * op.mul_dense(&self.states)
    }

    /// Clusters of indices whose energies agree within the degeneracy tolerance.
    pub fn degenerate_clusters(&self) -> Vec<Vec<usize>> {
        cluster_indices(&self.energies, DEGENERACY_RTOL * self.h_norm.max(1.0))
    }

    /// Replaces the eigenvectors, keeping energies and labels. Used to probe
    /// invariance under rotations inside degenerate manifolds.
    pub fn with_states(&self, states: DMatrix<C64>) -> EigenSystem {
        assert_eq!(states.shape(), self.states.shape());
        EigenSystem {
            states,
            ..self.clone()
        }
    }

    /// Writes `index,energy,sz` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,energy,sz")?;
        for (i, (e, sz)) in self.energies.iter().zip(&self.sz_values).enumerate() {
            writeln!(w, "{i},{e:.15e},{sz}")?;
        }
        Ok(())
    }
}

fn cluster_indices(sorted: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        match out.last_mut() {
            Some(cl) if (e - sorted[*cl.last().unwrap()]).abs() <= tol => cl.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

struct EigenPair {
    energy: f64,
    sz: f64,
    order: usize,
    vector: DVector<C64>,
}

fn hermitian_eigen(block: DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    if block.iter().all(|v| v.im == 0.0) {
        let real = block.map(|v| v.re);
        let eig = SymmetricEigen::new(real);
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(|v| C64::new(v, 0.0)),
        )
    } else {
        let eig = SymmetricEigen::new(block);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    }
}

/// Exact diagonalization. `S_z`-conserving Hamiltonians are solved sector by
/// sector so that every eigenvector carries an exact `S_z` label; otherwise
/// the full matrix is solved and the label is the expectation value.
pub fn diagonalize(h: &SpinHamiltonian) -> Result<EigenSystem> {
    let space = h.space();
    let d = space.dim();
    let m = h.matrix();
    if m.hermiticity_residual() > 1e-12 * m.norm().max(1.0) {
        return Err(Error::InvalidParameter {
            name: "H",
            reason: "matrix is not Hermitian".into(),
        });
    }
    let h_norm = m.norm();
    let sector_resolved = h.conserves_sz();

    let mut pairs: Vec<EigenPair> = Vec::with_capacity(d);
    if sector_resolved {
        let n = space.n_sites();
        // ascending S_z means descending number of down spins
        for down in (0..=n).rev() {
            let members: Vec<usize> = (0..d).filter(|b| b.count_ones() as usize == down).collect();
            let mut pos = vec![usize::MAX; d];
            for (k, &b) in members.iter().enumerate() {
                pos[b] = k;
            }
            let k = members.len();
            let mut block = DMatrix::<C64>::zeros(k, k);
            for (ci, &b) in members.iter().enumerate() {
                for (r, v) in m.row(b) {
                    block[(ci, pos[r])] = v;
                }
            }
            let sz = space.sz_of(members[0]);
            let (vals, vecs) = hermitian_eigen(block);
            for (idx, &e) in vals.iter().enumerate() {
                let mut full = DVector::<C64>::zeros(d);
                for (row, &b) in members.iter().enumerate() {
                    full[b] = vecs[(row, idx)];
                }
                pairs.push(EigenPair {
                    energy: e,
                    sz,
                    order: pairs.len(),
                    vector: full,
                });
            }
        }
    } else {
        let (vals, vecs) = hermitian_eigen(m.to_dense());
        let sz_op = space.total_sz();
        for (idx, &e) in vals.iter().enumerate() {
            let v = vecs.column(idx).into_owned();
            let sz = v.dotc(&sz_op.matrix().mul_vec(&v)).re;
            pairs.push(EigenPair {
                energy: e,
                sz,
                order: idx,
                vector: v,
            });
        }
    }

    pairs.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.order.cmp(&b.order)));
    let energies: Vec<f64> = pairs.iter().map(|p| p.energy).collect();
    let tol = DEGENERACY_RTOL * h_norm.max(1.0);
    let mut ordered: Vec<EigenPair> = Vec::with_capacity(d);
    let mut slots: Vec<Option<EigenPair>> = pairs.into_iter().map(Some).collect();
    for cluster in cluster_indices(&energies, tol) {
        let mut members: Vec<EigenPair> = cluster.iter().map(|&i| slots[i].take().unwrap()).collect();
        members.sort_by(|a, b| a.sz.total_cmp(&b.sz).then(a.order.cmp(&b.order)));
        ordered.extend(members);
    }

    let mut states = DMatrix::<C64>::zeros(d, d);
    for (mu, p) in ordered.iter().enumerate() {
        states.set_column(mu, &p.vector);
    }
    let energies: Vec<f64> = ordered.iter().map(|p| p.energy).collect();
    let sz_values: Vec<f64> = ordered.iter().map(|p| p.sz).collect();

    let hv = m.mul_dense(&states);
    let mut max_residual: f64 = 0.0;
    for (mu, &e) in energies.iter().enumerate() {
        let r = (hv.column(mu) - states.column(mu) * C64::new(e, 0.0)).norm();
        max_residual = max_residual.max(r);
    }
    if max_residual > 1e-10 * h_norm.max(1.0) {
        return Err(Error::EigenNonConvergence { max_residual });
    }

    Ok(EigenSystem {
        n_sites: space.n_sites(),
        energies,
        states,
        sz_values,
        h_norm,
        sector_resolved,
    })
}
