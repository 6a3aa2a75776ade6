//! Parameter presets for the two reference experiments, resolved from κ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{calibrate_omega, golden_rule_rates, make_flat_band, make_full_band, MarkovOptions, RateMatrix, SpectralDensity};
use crate::model::{assemble_model, build_effective_operators, Cutoffs, DriveParams, EffectiveModel};
use crate::spin::{diagonalize, heisenberg_chain, two_spin_model, EigenSystem};

/// Two-spin relaxation experiment: `H_0 = B(s₁ᶻ+s₂ᶻ) + J s₁·s₂` with
/// `B = 2J`, `Δ/100 = Ω₁/10 = g = 7κ`, `δ = 10κ = B`, `Ω₂ = −Ω₁`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoSpinPreset {
    pub kappa: f64,
    pub j: f64,
    pub b: f64,
    pub g: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub detuning: f64,
    pub raman: f64,
    pub nbar: f64,
    pub gamma: f64,
    pub cutoffs: Cutoffs,
}

impl TwoSpinPreset {
    pub fn new(kappa: f64) -> Self {
        let g = 7.0 * kappa;
        Self {
            kappa,
            j: 5.0 * kappa,
            b: 10.0 * kappa,
            g,
            omega1: 10.0 * g,
            omega2: -10.0 * g,
            detuning: 100.0 * g,
            raman: 10.0 * kappa,
            nbar: 0.0,
            gamma: 0.0,
            cutoffs: Cutoffs { mode1: 3, mode2: 2 },
        }
    }

    pub fn drive(&self) -> DriveParams {
        DriveParams::uniform(
            2,
            self.g,
            self.omega1,
            self.omega2,
            self.detuning,
            self.raman,
            self.kappa,
            self.nbar,
            self.gamma,
        )
    }

    pub fn build(&self) -> Result<EffectiveModel> {
        let h0 = two_spin_model(self.b, self.j)?;
        let drive = self.drive();
        let ops = build_effective_operators(&drive, 2)?;
        assemble_model(&h0, &ops, &drive, self.cutoffs)
    }
}

impl Default for TwoSpinPreset {
    fn default() -> Self {
        Self::new(1.0)
    }
}

/// Which gap fixes the field through `B = E₁₀/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapConvention {
    /// Gap of `J Σ s·s` alone.
    #[default]
    ZeroField,
    /// Gap of the full `J Σ s·s + B S_z`.
    InField,
}

/// Heisenberg-chain relaxation under a flat broadband drive: `Δ = g²/κ`,
/// `κ = γ = B/10`, `B = E₁₀/2`, Ω calibrated so that `|(Γ₊)₁₀| = κ`, and
/// `I` flat for `0.5B < δ − (ε)₀₀ < 3.5B`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainPreset {
    pub n_sites: usize,
    pub kappa: f64,
    pub g: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub gap_convention: GapConvention,
    /// Band edges in units of B, measured from `(ε_x)₀₀`.
    pub band: (f64, f64),
    pub options: MarkovOptions,
    /// Explicit exchange constant, bypassing the gap convention.
    pub j: Option<f64>,
    /// Explicit field, replacing `B = 10κ`.
    pub field: Option<f64>,
}

/// Everything a chain run needs, derived from a [`ChainPreset`].
#[derive(Clone, Debug)]
pub struct ChainSetup {
    pub j: f64,
    pub b: f64,
    pub detuning: f64,
    pub omega: f64,
    pub eig: EigenSystem,
    pub drive: DriveParams,
    pub i1: SpectralDensity,
    pub i2: SpectralDensity,
    /// `(ε₁)₀₀` and `(ε₂)₀₀`, the band offsets.
    pub eps_00: (f64, f64),
}

impl ChainSetup {
    /// Replaces both bands by ones covering every downward gap.
    pub fn with_full_band(mut self) -> Result<Self> {
        self.i1 = make_full_band(&self.eig, self.b, self.eps_00.0)?;
        self.i2 = make_full_band(&self.eig, self.b, self.eps_00.1)?;
        Ok(self)
    }

    pub fn rates(&self, options: MarkovOptions) -> Result<RateMatrix> {
        golden_rule_rates(&self.eig, &self.drive, &self.i1, &self.i2, options)
    }
}

/// Lowest gap above the ground level of `heisenberg_chain(n, j, b)`.
fn lowest_gap(n_sites: usize, j: f64, b: f64) -> Result<f64> {
    let eig = diagonalize(&heisenberg_chain(n_sites, j, b)?)?;
    let clusters = eig.degenerate_clusters();
    if clusters.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "N",
            reason: "spectrum has a single level".into(),
        });
    }
    Ok(eig.gap(clusters[1][0], 0))
}

impl ChainPreset {
    pub fn new(n_sites: usize, g: f64) -> Self {
        Self {
            n_sites,
            kappa: 1.0,
            g,
            gamma: 1.0,
            nbar: 0.0,
            gap_convention: GapConvention::ZeroField,
            band: (0.5, 3.5),
            options: MarkovOptions::default(),
            j: None,
            field: None,
        }
    }

    pub fn b(&self) -> f64 {
        self.field.unwrap_or(10.0 * self.kappa)
    }

    /// Exchange constant giving `E₁₀ = 2B`.
    pub fn exchange(&self) -> Result<f64> {
        if let Some(j) = self.j {
            return Ok(j);
        }
        let b = self.b();
        let unit = lowest_gap(self.n_sites, 1.0, 0.0)?;
        match self.gap_convention {
            GapConvention::ZeroField => Ok(2.0 * b / unit),
            GapConvention::InField => {
                // the in-field gap is monotone in J for fixed B; bisect on it
                let (mut lo, mut hi) = (0.0, 8.0 * b / unit);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if lowest_gap(self.n_sites, mid, b)? < 2.0 * b {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    pub fn resolve(&self) -> Result<ChainSetup> {
        if self.n_sites > 8 {
            log::warn!("N = {} exceeds the reference sizes; expect long runs", self.n_sites);
        }
        let b = self.b();
        let j = self.exchange()?;
        let eig = diagonalize(&heisenberg_chain(self.n_sites, j, b)?)?;
        let detuning = self.g * self.g / self.kappa;
        let g = vec![self.g; self.n_sites];
        let omega = calibrate_omega(&eig, &g, detuning, self.kappa)?;
        let drive = DriveParams::uniform(
            self.n_sites,
            self.g,
            omega,
            omega,
            detuning,
            0.0,
            self.kappa,
            self.nbar,
            self.gamma,
        );
        let ops = build_effective_operators(&drive, self.n_sites)?;
        let ground = eig.state(0);
        let diag00 = |op: &crate::spin::SpinOperator| -> f64 {
            let v = op.matrix().mul_vec(&ground);
            ground.dotc(&v).re
        };
        let (lo, hi) = self.band;
        let eps_00 = (diag00(&ops.eps_1), diag00(&ops.eps_2));
        let i1 = make_flat_band(b, eps_00.0, lo, hi)?;
        let i2 = make_flat_band(b, eps_00.1, lo, hi)?;
        Ok(ChainSetup {
            j,
            b,
            detuning,
            omega,
            eig,
            drive,
            i1,
            i2,
            eps_00,
        })
    }
}
