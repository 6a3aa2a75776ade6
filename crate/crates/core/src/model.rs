//! Effective atom–cavity model after adiabatic elimination of the excited
//! atomic level, assembled on spin ⊗ Fock(a₁) ⊗ Fock(a₂).
//!
//! The composite basis is labeled `|Ψ_μ, n₁, n₂⟩`, with `Ψ_μ` the eigenstates
//! of the bare spin Hamiltonian, so level populations are diagonal entries.
//! The explicit `e^{iδ_x t}` phases are removed by a cavity rotating frame,
//! which adds `δ_x a_x†a_x` to the Hamiltonian.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::spin::{diagonalize, EigenSystem, SiteKind, SpinHamiltonian, SpinOperator, SpinSpace};

/// Drive, coupling and bath parameters, in units of κ.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveParams {
    /// Atom–cavity coupling of each site to mode a₁.
    pub g1: Vec<C64>,
    /// Atom–cavity coupling of each site to mode a₂.
    pub g2: Vec<C64>,
    /// Rabi frequency of the classical field paired with mode a₁.
    pub omega1: Vec<C64>,
    /// Rabi frequency of the classical field paired with mode a₂.
    pub omega2: Vec<C64>,
    /// Single-photon detunings Δ₁, Δ₂.
    pub detuning1: f64,
    pub detuning2: f64,
    /// Two-photon (Raman) detunings δ₁, δ₂.
    pub raman1: f64,
    pub raman2: f64,
    pub kappa: f64,
    /// Mean thermal photon number of the cavity bath.
    pub nbar: f64,
    /// Intrinsic spontaneous emission rate of the excited level.
    pub gamma: f64,
}

impl DriveParams {
    /// Identical real parameters on every site.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        n_sites: usize,
        g: f64,
        omega1: f64,
        omega2: f64,
        detuning: f64,
        raman: f64,
        kappa: f64,
        nbar: f64,
        gamma: f64,
    ) -> Self {
        let v = |x: f64| vec![C64::new(x, 0.0); n_sites];
        Self {
            g1: v(g),
            g2: v(g),
            omega1: v(omega1),
            omega2: v(omega2),
            detuning1: detuning,
            detuning2: detuning,
            raman1: raman,
            raman2: raman,
            kappa,
            nbar,
            gamma,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.g1.len()
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        for (name, list) in [
            ("g1", &self.g1),
            ("g2", &self.g2),
            ("omega1", &self.omega1),
            ("omega2", &self.omega2),
        ] {
            if list.len() != n_sites {
                return Err(Error::LengthMismatch {
                    name,
                    got: list.len(),
                    expected: n_sites,
                });
            }
            if list.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "non-finite entry".into(),
                });
            }
        }
        for (name, d) in [("detuning1", self.detuning1), ("detuning2", self.detuning2)] {
            if d == 0.0 || !d.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("detuning must be finite and nonzero, got {d}"),
                });
            }
        }
        for (name, x) in [("raman1", self.raman1), ("raman2", self.raman2)] {
            if !x.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "non-finite".into(),
                });
            }
        }
        for (name, x) in [("kappa", self.kappa), ("nbar", self.nbar), ("gamma", self.gamma)] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be non-negative, got {x}"),
                });
            }
        }
        Ok(())
    }

    /// Raman coupling `g₁ⱼΩ₁ⱼ/Δ₁` of each site (coefficients of Γ₋).
    pub fn lowering_couplings(&self) -> Vec<C64> {
        self.g1
            .iter()
            .zip(&self.omega1)
            .map(|(g, o)| g * o / self.detuning1)
            .collect()
    }

    /// Raman coupling `g₂ⱼΩ₂ⱼ/Δ₂` of each site (coefficients of Γ₊).
    pub fn raising_couplings(&self) -> Vec<C64> {
        self.g2
            .iter()
            .zip(&self.omega2)
            .map(|(g, o)| g * o / self.detuning2)
            .collect()
    }

    /// Per-site scattering weight `|Ω/Δ|²`, averaged over the two drives so
    /// that it reduces to the common value when `|Ω₁ⱼ/Δ₁| = |Ω₂ⱼ/Δ₂|`.
    pub fn scattering_weights(&self) -> Vec<f64> {
        self.omega1
            .iter()
            .zip(&self.omega2)
            .map(|(o1, o2)| 0.5 * ((o1 / self.detuning1).norm_sqr() + (o2 / self.detuning2).norm_sqr()))
            .collect()
    }
}

/// The spin operators appearing in the effective Hamiltonian.
#[derive(Clone, Debug)]
pub struct EffectiveOperators {
    pub eps_z: SpinOperator,
    pub eps_1: SpinOperator,
    pub eps_2: SpinOperator,
    pub gamma_minus: SpinOperator,
    pub gamma_plus: SpinOperator,
}

pub fn build_effective_operators(params: &DriveParams, n_sites: usize) -> Result<EffectiveOperators> {
    params.validate(n_sites)?;
    let space = SpinSpace::new(n_sites)?;
    let (d1, d2) = (params.detuning1, params.detuning2);
    let mut eps_z = SpinOperator::zero(n_sites, 0);
    let mut eps_1 = SpinOperator::zero(n_sites, 0);
    let mut eps_2 = SpinOperator::zero(n_sites, 0);
    let mut gamma_minus = SpinOperator::zero(n_sites, -1);
    let mut gamma_plus = SpinOperator::zero(n_sites, 1);
    let low = params.lowering_couplings();
    let high = params.raising_couplings();
    for j in 0..n_sites {
        let site = j + 1;
        let z = space.site_operator(SiteKind::Z, site)?;
        let plus = space.site_operator(SiteKind::Plus, site)?;
        let minus = space.site_operator(SiteKind::Minus, site)?;
        let z_coeff = params.omega2[j].norm_sqr() / d2 - params.omega1[j].norm_sqr() / d1;
        eps_z = eps_z.add(&z.scale(z_coeff));
        eps_1 = eps_1.add(&(&minus * &plus).scale(params.g1[j].norm_sqr() / d1));
        eps_2 = eps_2.add(&(&plus * &minus).scale(params.g2[j].norm_sqr() / d2));
        gamma_minus = gamma_minus.add(&minus.scale_complex(low[j]));
        gamma_plus = gamma_plus.add(&plus.scale_complex(high[j]));
    }
    Ok(EffectiveOperators {
        eps_z,
        eps_1,
        eps_2,
        gamma_minus,
        gamma_plus,
    })
}

/// Which physical process a jump channel represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ChannelKind {
    /// Photon leaking out of mode `x` (x = 1, 2).
    CavityLoss(u8),
    /// Thermal photon entering mode `x`.
    CavityGain(u8),
    /// Spontaneous emission leaving site `j` raised (`s_j^+`).
    SpontaneousRaise(usize),
    /// Spontaneous emission leaving site `j` lowered (`s_j^-`).
    SpontaneousLower(usize),
    /// Spontaneous emission returning to the same spin state (`s_j^z`).
    SpontaneousDephase(usize),
}

impl ChannelKind {
    pub fn is_cavity_loss(&self) -> bool {
        matches!(self, ChannelKind::CavityLoss(_))
    }

    pub fn is_spontaneous(&self) -> bool {
        matches!(
            self,
            ChannelKind::SpontaneousRaise(_) | ChannelKind::SpontaneousLower(_) | ChannelKind::SpontaneousDephase(_)
        )
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::CavityLoss(x) => write!(f, "a{x}_loss"),
            ChannelKind::CavityGain(x) => write!(f, "a{x}_gain"),
            ChannelKind::SpontaneousRaise(j) => write!(f, "spont_plus_{j}"),
            ChannelKind::SpontaneousLower(j) => write!(f, "spont_minus_{j}"),
            ChannelKind::SpontaneousDephase(j) => write!(f, "spont_z_{j}"),
        }
    }
}

/// A Lindblad jump operator `√rate · A` with its provenance.
#[derive(Clone, Debug)]
pub struct JumpChannel {
    pub kind: ChannelKind,
    /// Prefactor squared.
    pub rate: f64,
    /// The full operator, rate included, on the composite space.
    pub operator: CsrMatrix,
}

/// Photon-number cutoffs: mode `x` keeps Fock states `0..=cutoff_x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cutoffs {
    pub mode1: usize,
    pub mode2: usize,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self { mode1: 2, mode2: 2 }
    }
}

/// Composite level label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LevelLabel {
    pub mu: usize,
    pub n1: usize,
    pub n2: usize,
}

impl fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{}", self.mu, self.n1, self.n2)
    }
}

/// Assembled open-system model in the rotating frame.
#[derive(Clone, Debug)]
pub struct EffectiveModel {
    eig: EigenSystem,
    ops: EffectiveOperators,
    params: DriveParams,
    cutoffs: Cutoffs,
    /// `H_0 + H_d` on the composite space.
    h_static: CsrMatrix,
    /// `a₁†Γ₋` and `a₂†Γ₊`.
    raising_terms: [CsrMatrix; 2],
    h_rf: CsrMatrix,
    channels: Vec<JumpChannel>,
}

fn fock_annihilation(cutoff: usize) -> CsrMatrix {
    CsrMatrix::from_triplets(
        cutoff + 1,
        cutoff + 1,
        (1..=cutoff).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    )
}

fn fock_number(cutoff: usize) -> CsrMatrix {
    CsrMatrix::from_triplets(cutoff + 1, cutoff + 1, (1..=cutoff).map(|n| (n, n, C64::new(n as f64, 0.0))))
}

pub fn assemble_model(
    h0: &SpinHamiltonian,
    ops: &EffectiveOperators,
    params: &DriveParams,
    cutoffs: Cutoffs,
) -> Result<EffectiveModel> {
    let eig = diagonalize(h0)?;
    assemble_with_eigensystem(eig, ops, params, cutoffs)
}

/// As [`assemble_model`] with a precomputed eigensystem of `H_0`.
pub fn assemble_with_eigensystem(
    eig: EigenSystem,
    ops: &EffectiveOperators,
    params: &DriveParams,
    cutoffs: Cutoffs,
) -> Result<EffectiveModel> {
    let n_sites = eig.n_sites();
    params.validate(n_sites)?;
    if cutoffs.mode1 < 1 || cutoffs.mode2 < 1 {
        return Err(Error::InvalidParameter {
            name: "cutoffs",
            reason: "photon cutoffs must be at least 1".into(),
        });
    }
    let ds = eig.dim();
    let chop = 1e-13;
    let in_eigenbasis = |op: &SpinOperator| -> CsrMatrix {
        let m = eig.matrix_elements(op.matrix());
        let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max);
        CsrMatrix::from_dense(&m).chop(chop * scale)
    };
    let id_s = CsrMatrix::identity(ds);
    let id_1 = CsrMatrix::identity(cutoffs.mode1 + 1);
    let id_2 = CsrMatrix::identity(cutoffs.mode2 + 1);
    let a1 = fock_annihilation(cutoffs.mode1);
    let a2 = fock_annihilation(cutoffs.mode2);
    let n1 = fock_number(cutoffs.mode1);
    let n2 = fock_number(cutoffs.mode2);
    let on_spin = |s: &CsrMatrix| s.kron(&id_1).kron(&id_2);
    let on_mode1 = |m: &CsrMatrix| id_s.kron(m).kron(&id_2);
    let on_mode2 = |m: &CsrMatrix| id_s.kron(&id_1).kron(m);

    let e0 = CsrMatrix::from_triplets(
        ds,
        ds,
        eig.energies().iter().enumerate().map(|(i, &e)| (i, i, C64::new(e, 0.0))),
    );
    let eps_z = in_eigenbasis(&ops.eps_z);
    let eps_1 = in_eigenbasis(&ops.eps_1);
    let eps_2 = in_eigenbasis(&ops.eps_2);
    let g_minus = in_eigenbasis(&ops.gamma_minus);
    let g_plus = in_eigenbasis(&ops.gamma_plus);

    let minus_one = C64::new(-1.0, 0.0);
    let h_static = on_spin(&e0.add(&eps_z.scale(minus_one)))
        .add(&eps_1.kron(&n1).kron(&id_2).scale(minus_one))
        .add(&eps_2.kron(&id_1).kron(&n2).scale(minus_one));
    let raising_terms = [
        g_minus.kron(&a1.adjoint()).kron(&id_2),
        g_plus.kron(&id_1).kron(&a2.adjoint()),
    ];
    let mut h_rf = h_static
        .add(&on_mode1(&n1).scale(C64::new(params.raman1, 0.0)))
        .add(&on_mode2(&n2).scale(C64::new(params.raman2, 0.0)));
    for t in &raising_terms {
        h_rf = h_rf.add(&t.scale(minus_one)).add(&t.adjoint().scale(minus_one));
    }

    let mut channels = Vec::new();
    let mut push = |kind: ChannelKind, rate: f64, op: CsrMatrix| {
        if rate > 0.0 {
            let operator = op.scale(C64::new(rate.sqrt(), 0.0));
            channels.push(JumpChannel { kind, rate, operator });
        }
    };
    let k = params.kappa;
    push(ChannelKind::CavityLoss(1), k * (params.nbar + 1.0), on_mode1(&a1));
    push(ChannelKind::CavityLoss(2), k * (params.nbar + 1.0), on_mode2(&a2));
    push(ChannelKind::CavityGain(1), k * params.nbar, on_mode1(&a1.adjoint()));
    push(ChannelKind::CavityGain(2), k * params.nbar, on_mode2(&a2.adjoint()));
    let space = SpinSpace::new(n_sites)?;
    let weights = params.scattering_weights();
    for j in 0..n_sites {
        let site = j + 1;
        let w = params.gamma * weights[j];
        let plus = in_eigenbasis(&space.site_operator(SiteKind::Plus, site)?);
        let minus = in_eigenbasis(&space.site_operator(SiteKind::Minus, site)?);
        let z = in_eigenbasis(&space.site_operator(SiteKind::Z, site)?);
        push(ChannelKind::SpontaneousRaise(site), w / 4.0, on_spin(&plus));
        push(ChannelKind::SpontaneousLower(site), w / 4.0, on_spin(&minus));
        push(ChannelKind::SpontaneousDephase(site), w / 2.0, on_spin(&z));
    }

    Ok(EffectiveModel {
        eig,
        ops: ops.clone(),
        params: params.clone(),
        cutoffs,
        h_static,
        raising_terms,
        h_rf,
        channels,
    })
}

impl EffectiveModel {
    pub fn eigensystem(&self) -> &EigenSystem {
        &self.eig
    }

    pub fn operators(&self) -> &EffectiveOperators {
        &self.ops
    }

    pub fn params(&self) -> &DriveParams {
        &self.params
    }

    pub fn cutoffs(&self) -> Cutoffs {
        self.cutoffs
    }

    pub fn spin_dim(&self) -> usize {
        self.eig.dim()
    }

    /// Dimension of spin ⊗ Fock ⊗ Fock.
    pub fn dim(&self) -> usize {
        self.eig.dim() * (self.cutoffs.mode1 + 1) * (self.cutoffs.mode2 + 1)
    }

    pub fn index(&self, label: LevelLabel) -> usize {
        (label.mu * (self.cutoffs.mode1 + 1) + label.n1) * (self.cutoffs.mode2 + 1) + label.n2
    }

    pub fn label(&self, index: usize) -> LevelLabel {
        let c2 = self.cutoffs.mode2 + 1;
        let c1 = self.cutoffs.mode1 + 1;
        LevelLabel {
            mu: index / (c1 * c2),
            n1: (index / c2) % c1,
            n2: index % c2,
        }
    }

    pub fn labels(&self) -> Vec<LevelLabel> {
        (0..self.dim()).map(|i| self.label(i)).collect()
    }

    /// Rotating-frame Hamiltonian.
    pub fn hamiltonian(&self) -> &CsrMatrix {
        &self.h_rf
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    /// `H_rf - (i/2) Σ_k L_k†L_k`.
    pub fn effective_hamiltonian(&self) -> CsrMatrix {
        let mut h = self.h_rf.clone();
        for ch in &self.channels {
            let ll = ch.operator.adjoint().matmul(&ch.operator);
            h = h.add(&ll.scale(C64::new(0.0, -0.5)));
        }
        h
    }

    /// Lab-frame Hamiltonian with the explicit drive phases `e^{iδ_x t}`.
    pub fn lab_hamiltonian(&self, t: f64) -> DMatrix<C64> {
        let mut h = self.h_static.to_dense();
        let phases = [
            C64::new(0.0, self.params.raman1 * t).exp(),
            C64::new(0.0, self.params.raman2 * t).exp(),
        ];
        for (term, phase) in self.raising_terms.iter().zip(phases) {
            let m = term.to_dense() * phase;
            h -= &m;
            h -= m.adjoint();
        }
        h
    }

    /// Indices of composite states with a mode at its top Fock level.
    pub fn top_fock_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| {
                let l = self.label(i);
                l.n1 == self.cutoffs.mode1 || l.n2 == self.cutoffs.mode2
            })
            .collect()
    }
}

/// Outcome of one regime check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Warn,
    /// Ratio above one: the perturbative picture does not apply.
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeCheck {
    pub condition: String,
    pub ratio: f64,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeReport {
    pub threshold: f64,
    pub checks: Vec<RegimeCheck>,
}

impl RegimeReport {
    pub fn get(&self, condition: &str) -> Option<&RegimeCheck> {
        self.checks.iter().find(|c| c.condition == condition)
    }

    pub fn has_failure(&self) -> bool {
        self.checks.iter().any(|c| c.status == CheckStatus::Fail)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }

    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("{}={:.3e}:{:?}", c.condition, c.ratio, c.status))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Default warning threshold for [`validate_regime`].
pub const DEFAULT_REGIME_THRESHOLD: f64 = 0.2;

/// Ratios that must be small for the perturbative cooling picture to hold.
///
/// Gap conditions are evaluated between the ground state and every other
/// level, which is where they matter for stability of the ground state.
pub fn validate_regime(model: &EffectiveModel, threshold: f64) -> RegimeReport {
    let eig = model.eigensystem();
    let p = model.params();
    let tol = crate::spin::DEGENERACY_RTOL * eig.h_norm().max(1.0);
    let excited: Vec<usize> = (1..eig.dim()).filter(|&mu| eig.gap(mu, 0).abs() > tol).collect();

    let mut checks = Vec::new();
    let mut push = |condition: &str, ratio: f64| {
        let status = if ratio > 1.0 || ratio.is_nan() {
            CheckStatus::Fail
        } else if ratio > threshold {
            CheckStatus::Warn
        } else {
            CheckStatus::Pass
        };
        checks.push(RegimeCheck {
            condition: condition.to_string(),
            ratio,
            status,
        });
    };

    let min_gap = excited
        .iter()
        .map(|&mu| eig.gap(mu, 0).abs())
        .fold(f64::INFINITY, f64::min);
    push("kappa_over_min_gap", p.kappa / min_gap);

    let ops = model.operators();
    let gm = eig.matrix_elements(ops.gamma_minus.matrix());
    let gp = eig.matrix_elements(ops.gamma_plus.matrix());
    let diag_max = (0..eig.dim())
        .map(|mu| gm[(mu, mu)].norm().max(gp[(mu, mu)].norm()))
        .fold(0.0, f64::max);
    push("diag_gamma_over_kappa", diag_max / p.kappa);

    let drive_max = p
        .g1
        .iter()
        .chain(&p.g2)
        .chain(&p.omega1)
        .chain(&p.omega2)
        .map(|v| v.norm())
        .chain([p.raman1.abs(), p.raman2.abs()])
        .fold(0.0, f64::max);
    push(
        "drive_over_detuning",
        drive_max / p.detuning1.abs().min(p.detuning2.abs()),
    );

    let mats = [
        ("eps_z", eig.matrix_elements(ops.eps_z.matrix())),
        ("eps_1", eig.matrix_elements(ops.eps_1.matrix())),
        ("eps_2", eig.matrix_elements(ops.eps_2.matrix())),
        ("gamma_minus", gm),
        ("gamma_plus", gp),
    ];
    for (name, m) in mats {
        let r = excited
            .iter()
            .map(|&mu| m[(mu, 0)].norm().max(m[(0, mu)].norm()) / eig.gap(mu, 0).abs())
            .fold(0.0, f64::max);
        push(&format!("{name}_over_gap"), r);
    }
    RegimeReport { threshold, checks }
}
