//! Density-matrix integration of the Lindblad master equation and stationary
//! states of the Liouvillian.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use petgraph::unionfind::UnionFind;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, min_hermitian_eigenvalue};
use crate::model::{EffectiveModel, LevelLabel};
use crate::ode::{integrate, OdeOptions, OdeStats};
use crate::sparse::CsrMatrix;

/// Population threshold in the top Fock level above which a run is flagged.
pub const TRUNCATION_LIMIT: f64 = 1e-3;

/// A density matrix on the composite space, in the labeled basis.
#[derive(Clone, Debug)]
pub struct DensityState {
    pub rho: DMatrix<C64>,
    pub time: f64,
}

impl DensityState {
    /// Pure composite basis state `|Ψ_μ, n₁, n₂⟩`.
    pub fn level(model: &EffectiveModel, label: LevelLabel) -> Self {
        Self::mixture(model, &[(label, 1.0)]).expect("single level is a valid mixture")
    }

    /// Incoherent mixture of labeled levels; weights must be non-negative and
    /// sum to one.
    pub fn mixture(model: &EffectiveModel, weights: &[(LevelLabel, f64)]) -> Result<Self> {
        let d = model.dim();
        let mut rho = DMatrix::zeros(d, d);
        let mut total = 0.0;
        for &(label, w) in weights {
            if !(w >= 0.0) {
                return Err(Error::InvalidState(format!("negative weight {w} on {label}")));
            }
            let i = model.index(label);
            rho[(i, i)] += C64::new(w, 0.0);
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("weights sum to {total}")));
        }
        Ok(Self { rho, time: 0.0 })
    }

    /// Maximally mixed spin state with both cavity modes empty.
    pub fn maximally_mixed_spin(model: &EffectiveModel) -> Self {
        let ds = model.spin_dim();
        let w: Vec<_> = (0..ds)
            .map(|mu| (LevelLabel { mu, n1: 0, n2: 0 }, 1.0 / ds as f64))
            .collect();
        Self::mixture(model, &w).expect("uniform weights are valid")
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn validate(&self) -> Result<()> {
        let herm = max_abs(&(&self.rho - self.rho.adjoint()));
        if herm > 1e-10 {
            return Err(Error::InvalidState(format!("not Hermitian (residual {herm:e})")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min = min_hermitian_eigenvalue(&self.rho);
        if min < -1e-8 {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.rho.nrows()).map(|i| self.rho[(i, i)].re).collect()
    }

    /// `tr(ρ O)`.
    pub fn expectation(&self, op: &CsrMatrix) -> C64 {
        op.mul_dense(&self.rho).trace()
    }

    /// Population of spin eigenstate `mu`, summed over photon numbers.
    pub fn spin_population(&self, model: &EffectiveModel, mu: usize) -> f64 {
        spin_population(model, &self.populations(), mu)
    }
}

pub(crate) fn spin_population(model: &EffectiveModel, pops: &[f64], mu: usize) -> f64 {
    let per = (model.cutoffs().mode1 + 1) * (model.cutoffs().mode2 + 1);
    pops[mu * per..(mu + 1) * per].iter().sum()
}

/// Solver settings for [`evolve_density`].
#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    pub ode: OdeOptions,
    /// Abort when the minimum eigenvalue of ρ drops below `-positivity_abort`.
    pub positivity_abort: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions::default(),
            positivity_abort: 1e-6,
        }
    }
}

/// Level populations on a time grid.
#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub labels: Vec<LevelLabel>,
    /// `populations[k][i]` is the population of `labels[i]` at `times[k]`.
    pub populations: Vec<Vec<f64>>,
    /// Population in any top Fock level, per time.
    pub truncation: Vec<f64>,
    pub final_state: DensityState,
    pub stats: OdeStats,
    /// Worst values over the run, for diagnostics.
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

impl EvolutionResult {
    /// Largest top-Fock-level population over the run.
    pub fn truncation_max(&self) -> f64 {
        self.truncation.iter().copied().fold(0.0, f64::max)
    }

    /// True if the photon cutoff was adequate for this run.
    pub fn truncation_ok(&self) -> bool {
        self.truncation_max() < TRUNCATION_LIMIT
    }

    /// Population of spin eigenstate `mu` (all photon numbers) at each time.
    pub fn spin_population(&self, mu: usize) -> Vec<f64> {
        let per = self.labels.iter().filter(|l| l.mu == 0).count();
        self.populations
            .iter()
            .map(|p| p[mu * per..(mu + 1) * per].iter().sum())
            .collect()
    }

    pub fn n_spin_levels(&self) -> usize {
        self.labels.iter().map(|l| l.mu).max().map_or(0, |m| m + 1)
    }

    /// CSV with a time column, one column per labeled level and the
    /// truncation monitor.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "time")?;
        for l in &self.labels {
            write!(w, ",p_{l}")?;
        }
        writeln!(w, ",top_fock")?;
        for ((t, p), trunc) in self.times.iter().zip(&self.populations).zip(&self.truncation) {
            write!(w, "{t}")?;
            for x in p {
                write!(w, ",{x:.12e}")?;
            }
            writeln!(w, ",{trunc:.6e}")?;
        }
        Ok(())
    }
}

/// Precomputed right-hand side `dρ/dt = -i H_eff ρ + i ρ H_eff† + Σ L ρ L†`.
struct Generator {
    /// `-i H_eff`
    drift: CsrMatrix,
    jumps: Vec<CsrMatrix>,
}

impl Generator {
    fn new(model: &EffectiveModel) -> Self {
        let drift = model.effective_hamiltonian().scale(C64::new(0.0, -1.0));
        let jumps = model
            .channels()
            .iter()
            .map(|c| c.operator.clone())
            .collect();
        Self { drift, jumps }
    }

    fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        // Z = -i H_eff ρ + ½ Σ L ρ L†, then dρ = Z + Z† is exactly Hermitian
        let mut z = self.drift.mul_dense(rho);
        for l in &self.jumps {
            let lr = l.mul_dense(rho);
            // L ρ L† = (L (L ρ)†)†
            let lrl = l.mul_dense(&lr.adjoint()).adjoint();
            z += lrl * C64::new(0.5, 0.0);
        }
        let zt = z.adjoint();
        z + zt
    }
}

fn as_matrix(y: &DVector<C64>, d: usize) -> DMatrix<C64> {
    DMatrix::from_column_slice(d, d, y.as_slice())
}

fn as_vector(m: DMatrix<C64>) -> DVector<C64> {
    let d = m.nrows() * m.ncols();
    DVector::from_vec(m.reshape_generic(nalgebra::Dyn(d), nalgebra::Const::<1>).as_slice().to_vec())
}

fn check_grid(rho0: &DensityState, t_grid: &[f64]) -> Result<()> {
    rho0.validate()?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter {
            name: "t_grid",
            reason: "must be non-empty and strictly increasing".into(),
        });
    }
    Ok(())
}

/// Integrates the master equation of `model` from `rho0` over `t_grid`.
///
/// The grid starts at `t_grid[0]`; the initial state is taken to be at that
/// time.
pub fn evolve_density(
    model: &EffectiveModel,
    rho0: &DensityState,
    t_grid: &[f64],
    opts: EvolveOptions,
) -> Result<EvolutionResult> {
    let gen = Generator::new(model);
    run(model, rho0, t_grid, opts, |_, rho| gen.apply(rho))
}

/// Integrates with the explicitly time-dependent lab-frame Hamiltonian,
/// `h(t)`, and the model's jump channels. Used as a reference for the
/// rotating-frame construction.
pub fn evolve_density_lab_frame(
    model: &EffectiveModel,
    rho0: &DensityState,
    t_grid: &[f64],
    opts: EvolveOptions,
) -> Result<EvolutionResult> {
    let gen = Generator::new(model);
    let h_rf = model.hamiltonian().to_dense();
    run(model, rho0, t_grid, opts, |t, rho| {
        // rotating-frame generator minus its Hamiltonian part, plus the lab one
        let h = model.lab_hamiltonian(t);
        let mut out = gen.apply(rho);
        let comm_rf = &h_rf * rho - rho * &h_rf;
        let comm_lab = &h * rho - rho * &h;
        out += comm_rf * C64::new(0.0, 1.0);
        out -= comm_lab * C64::new(0.0, 1.0);
        out
    })
}

fn run<F>(
    model: &EffectiveModel,
    rho0: &DensityState,
    t_grid: &[f64],
    opts: EvolveOptions,
    mut rhs: F,
) -> Result<EvolutionResult>
where
    F: FnMut(f64, &DMatrix<C64>) -> DMatrix<C64>,
{
    check_grid(rho0, t_grid)?;
    let d = model.dim();
    let top = model.top_fock_indices();
    let mut populations = Vec::with_capacity(t_grid.len());
    let mut truncation = Vec::with_capacity(t_grid.len());
    let mut max_trace_error: f64 = 0.0;
    let mut max_hermiticity_error: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    let mut last = rho0.rho.clone();
    let stats = integrate(
        |t, y| as_vector(rhs(t, &as_matrix(y, d))),
        as_vector(rho0.rho.clone()),
        t_grid,
        opts.ode,
        |_, t, y| {
            let rho = as_matrix(y, d);
            let min = min_hermitian_eigenvalue(&rho);
            if min < -opts.positivity_abort {
                return Err(Error::PositivityViolation { t, min_eigenvalue: min });
            }
            min_eigenvalue = min_eigenvalue.min(min);
            max_trace_error = max_trace_error.max((rho.trace() - C64::new(1.0, 0.0)).norm());
            max_hermiticity_error = max_hermiticity_error.max(max_abs(&(&rho - rho.adjoint())));
            let pops: Vec<f64> = (0..d).map(|i| rho[(i, i)].re).collect();
            truncation.push(top.iter().map(|&i| pops[i]).sum());
            populations.push(pops);
            last = rho;
            Ok(())
        },
    )?;
    let result = EvolutionResult {
        times: t_grid.to_vec(),
        labels: model.labels(),
        populations,
        truncation,
        final_state: DensityState {
            rho: last,
            time: *t_grid.last().unwrap(),
        },
        stats,
        max_trace_error,
        max_hermiticity_error,
        min_eigenvalue,
    };
    if !result.truncation_ok() {
        log::warn!(
            "top Fock level population reached {:.3e}; raise the photon cutoff",
            result.truncation_max()
        );
    }
    Ok(result)
}

/// Vectorized Liouvillian acting on column-major `vec(ρ)`.
pub fn liouvillian(model: &EffectiveModel) -> CsrMatrix {
    let d = model.dim();
    let id = CsrMatrix::identity(d);
    let heff = model.effective_hamiltonian();
    let conj = |m: &CsrMatrix| CsrMatrix::from_triplets(m.nrows(), m.ncols(), m.triplets().map(|(r, c, v)| (r, c, v.conj())));
    // vec(AρB) = (Bᵀ ⊗ A) vec(ρ)
    let mut l = id
        .kron(&heff)
        .scale(C64::new(0.0, -1.0))
        .add(&conj(&heff).kron(&id).scale(C64::new(0.0, 1.0)));
    for ch in model.channels() {
        l = l.add(&conj(&ch.operator).kron(&ch.operator));
    }
    l
}

/// Largest entry of `L[ρ]`.
pub fn liouvillian_residual(model: &EffectiveModel, rho: &DMatrix<C64>) -> f64 {
    max_abs(&Generator::new(model).apply(rho))
}

/// Largest block of the vectorized Liouvillian solved directly.
pub const DIRECT_SOLVE_MAX: usize = 2500;

/// Shifted-resolvent solver for long-time limits.
///
/// With a small shift `s`, `s (s - L)^{-1}` maps any state onto its stationary
/// component up to `O(s/λ)`, where `λ` is the slowest nonzero relaxation rate.
/// A few passes remove that bias. `L` is split into the connected components
/// of its sparsity graph (symmetry sectors of the coherences), which are
/// factorized separately.
struct Resolvent {
    d: usize,
    shift: f64,
    blocks: Vec<Block>,
}

struct Block {
    idx: Vec<usize>,
    lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Resolvent {
    /// `None` when a sector is too large for a dense factorization.
    fn try_new(model: &EffectiveModel) -> Result<Option<Self>> {
        let d = model.dim();
        let n = d * d;
        let l = liouvillian(model);
        let mut uf = UnionFind::<usize>::new(n);
        for (r, c, _) in l.triplets() {
            uf.union(r, c);
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for (i, root) in uf.into_labeling().into_iter().enumerate() {
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push(i);
        }
        let largest = groups.iter().map(Vec::len).max().unwrap_or(0);
        if largest > DIRECT_SOLVE_MAX {
            log::debug!("Liouvillian sector of size {largest} exceeds the direct-solve limit");
            return Ok(None);
        }
        let scale = l.triplets().map(|(_, _, v)| v.norm()).fold(1.0, f64::max);
        let shift = 1e-9 * scale;
        let mut local = vec![0; n];
        let blocks = groups
            .into_iter()
            .map(|idx| {
                for (k, &i) in idx.iter().enumerate() {
                    local[i] = k;
                }
                let mut m = DMatrix::<C64>::zeros(idx.len(), idx.len());
                for (k, &i) in idx.iter().enumerate() {
                    for (j, v) in l.row(i) {
                        m[(k, local[j])] -= v;
                    }
                    m[(k, k)] += C64::new(shift, 0.0);
                }
                Block { idx, lu: m.lu() }
            })
            .collect();
        Ok(Some(Self { d, shift, blocks }))
    }

    fn new(model: &EffectiveModel) -> Result<Self> {
        Self::try_new(model)?.ok_or_else(|| Error::InvalidParameter {
            name: "model",
            reason: format!("a Liouvillian sector exceeds the direct-solve limit {DIRECT_SOLVE_MAX}"),
        })
    }

    fn project(&self, rho: &DMatrix<C64>, passes: usize) -> Result<DMatrix<C64>> {
        let v = as_vector(rho.clone());
        let mut out = DVector::<C64>::zeros(v.len());
        for b in &self.blocks {
            let mut x = DVector::from_iterator(b.idx.len(), b.idx.iter().map(|&i| v[i]));
            if x.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            for _ in 0..passes {
                x = b.lu.solve(&x).ok_or(Error::Singular("shifted Liouvillian"))? * C64::new(self.shift, 0.0);
            }
            for (k, &i) in b.idx.iter().enumerate() {
                out[i] = x[k];
            }
        }
        Ok(as_matrix(&out, self.d))
    }
}

fn normalize(rho: DMatrix<C64>) -> DMatrix<C64> {
    let herm = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let tr = herm.trace();
    herm / tr
}

/// Long-time limit `lim_{t→∞} e^{Lt} ρ₀`, defined also when the stationary
/// state is not unique (conserved quantities keep their initial values).
pub fn asymptotic_state(model: &EffectiveModel, rho0: &DensityState) -> Result<DensityState> {
    rho0.validate()?;
    let Some(res) = Resolvent::try_new(model)? else {
        let t_max = 1e4 / model.params().kappa;
        return steady_state_by_integration(model, rho0, t_max);
    };
    let rho = normalize(res.project(&rho0.rho, 4)?);
    Ok(DensityState { rho, time: f64::INFINITY })
}

/// Number of independent stationary states, estimated from the rank of the
/// resolvent projection of a few random states.
pub fn stationary_dimension(model: &EffectiveModel) -> Result<usize> {
    let res = Resolvent::new(model)?;
    Ok(stationary_dimension_with(&res, model.dim()))
}

fn stationary_dimension_with(res: &Resolvent, d: usize) -> usize {
    const PROBES: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut vecs: Vec<DVector<C64>> = Vec::with_capacity(PROBES);
    for _ in 0..PROBES {
        let a = DMatrix::<C64>::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let rho = &a * a.adjoint();
        let rho = &rho / rho.trace();
        let p = res.project(&rho, 4).unwrap_or_else(|_| DMatrix::zeros(d, d));
        let v = as_vector(p);
        let n = v.norm();
        vecs.push(if n > 0.0 { v / C64::new(n, 0.0) } else { v });
    }
    let gram = DMatrix::<C64>::from_fn(PROBES, PROBES, |i, j| vecs[i].dotc(&vecs[j]));
    let eig = nalgebra::SymmetricEigen::new(gram).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    eig.iter().filter(|&&e| e > 1e-8 * max).count()
}

/// Unique stationary state of the Liouvillian.
///
/// Fails with [`Error::DegenerateSteadyState`] when conserved quantities leave
/// more than one stationary state.
pub fn steady_state(model: &EffectiveModel) -> Result<DensityState> {
    let d = model.dim();
    let Some(res) = Resolvent::try_new(model)? else {
        let start = DensityState::maximally_mixed_spin(model);
        return steady_state_by_integration(model, &start, 1e4 / model.params().kappa);
    };
    let dim = stationary_dimension_with(&res, d);
    if dim != 1 {
        return Err(Error::DegenerateSteadyState { dimension: dim });
    }
    let start = DensityState::maximally_mixed_spin(model);
    let rho = normalize(res.project(&start.rho, 4)?);
    let residual = liouvillian_residual(model, &rho);
    if residual > 1e-8 {
        log::warn!("stationary residual {residual:e} above 1e-8");
    }
    Ok(DensityState { rho, time: f64::INFINITY })
}

/// Integrates until `t_max`, in doubling windows, and stops early once the
/// state is stationary to 1e-10 per unit time.
pub fn steady_state_by_integration(model: &EffectiveModel, rho0: &DensityState, t_max: f64) -> Result<DensityState> {
    let mut state = rho0.clone();
    let mut t = 0.0;
    let mut window = 10.0 / model.params().kappa;
    let opts = EvolveOptions {
        ode: OdeOptions {
            max_step: 1.0,
            ..OdeOptions::default()
        },
        ..EvolveOptions::default()
    };
    while t < t_max {
        let r = evolve_density(model, &state, &[t, t + window], opts)?;
        state = r.final_state;
        t += window;
        if liouvillian_residual(model, &state.rho) < 1e-10 {
            break;
        }
        window *= 2.0;
    }
    state.rho = normalize(state.rho);
    state.time = t;
    Ok(state)
}
