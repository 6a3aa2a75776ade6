//! Turns a [`RunConfig`] into concrete models, in units of κ.

use anyhow::{bail, Context};
use cavcool::markov::{make_flat_band, make_full_band, MarkovOptions, SpectralDensity};
use cavcool::model::{assemble_with_eigensystem, build_effective_operators, Cutoffs, DriveParams, EffectiveModel};
use cavcool::presets::{ChainPreset, TwoSpinPreset};
use cavcool::spin::{diagonalize, heisenberg_chain_with, two_spin_model, EigenSystem, HamiltonianSpec, SpinHamiltonian, SpinOperator, Term};
use cavcool::C64;
use serde::Serialize;

use crate::config::{ModelKind, PerSite, RunConfig};

/// Coupling used by chain runs when none is given.
pub const DEFAULT_CHAIN_G: f64 = 40.0;

/// Parameters of a run after presets and overrides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub model: ModelKind,
    pub n_sites: usize,
    pub j: Option<f64>,
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<Term>,
    pub g: Vec<f64>,
    pub omega1: Vec<f64>,
    pub omega2: Vec<f64>,
    pub detuning: f64,
    pub delta: f64,
    pub kappa: f64,
    pub nbar: f64,
    pub gamma: f64,
    pub cutoffs: Cutoffs,
}

impl Resolved {
    pub fn drive(&self) -> DriveParams {
        let c = |v: &[f64]| v.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>();
        DriveParams {
            g1: c(&self.g),
            g2: c(&self.g),
            omega1: c(&self.omega1),
            omega2: c(&self.omega2),
            detuning1: self.detuning,
            detuning2: self.detuning,
            raman1: self.delta,
            raman2: self.delta,
            kappa: self.kappa,
            nbar: self.nbar,
            gamma: self.gamma,
        }
    }
}

/// A resolved run: parameters plus the spin Hamiltonian and its spectrum.
pub struct Physical {
    pub params: Resolved,
    pub h0: SpinHamiltonian,
    pub eig: EigenSystem,
}

impl Physical {
    pub fn model(&self) -> anyhow::Result<EffectiveModel> {
        self.model_with(&self.params)
    }

    /// Effective model for `params`, reusing this spectrum.
    pub fn model_with(&self, params: &Resolved) -> anyhow::Result<EffectiveModel> {
        let drive = params.drive();
        let ops = build_effective_operators(&drive, params.n_sites)?;
        Ok(assemble_with_eigensystem(self.eig.clone(), &ops, &drive, params.cutoffs)?)
    }

    /// `((ε₁)₀₀, (ε₂)₀₀)` of the ground level.
    pub fn eps_00(&self) -> anyhow::Result<(f64, f64)> {
        let ops = build_effective_operators(&self.params.drive(), self.params.n_sites)?;
        let ground = self.eig.state(0);
        let diag = |op: &SpinOperator| ground.dotc(&op.matrix().mul_vec(&ground)).re;
        Ok((diag(&ops.eps_1), diag(&ops.eps_2)))
    }

    /// Spectral densities for the rate equations.
    pub fn spectra(&self, c: &RunConfig) -> anyhow::Result<(SpectralDensity, SpectralDensity)> {
        if let Some(spec) = &c.markov.spectrum {
            let i = spec.build().context("markov.spectrum")?;
            return Ok((i.clone(), i));
        }
        let Some(b) = self.params.b else {
            bail!("a flat band needs spin.b; give it or set markov.spectrum");
        };
        let eps = self.eps_00()?;
        if c.markov.full_band {
            return Ok((make_full_band(&self.eig, b, eps.0)?, make_full_band(&self.eig, b, eps.1)?));
        }
        let (lo, hi) = c.markov.band;
        Ok((make_flat_band(b, eps.0, lo, hi)?, make_flat_band(b, eps.1, lo, hi)?))
    }
}

pub fn markov_options(c: &RunConfig) -> MarkovOptions {
    MarkovOptions {
        cutoff: c.markov.cutoff,
        resonance: c.markov.resonance,
        site_sum: c.markov.site_sum,
    }
}

/// Chain preset for `n` sites at coupling `g`, with config overrides.
pub fn chain_preset(c: &RunConfig, n: usize, g: f64) -> ChainPreset {
    let mut p = ChainPreset::new(n, g);
    p.gamma = c.drive.gamma.unwrap_or(p.gamma);
    p.nbar = c.drive.nbar.unwrap_or(p.nbar);
    p.gap_convention = c.markov.gap_convention;
    p.band = c.markov.band;
    p.options = markov_options(c);
    p.j = c.spin.j;
    p.field = c.spin.b;
    p
}

fn uniform_g(c: &RunConfig) -> anyhow::Result<Option<f64>> {
    match &c.drive.g {
        None => Ok(None),
        Some(PerSite::Uniform(g)) => Ok(Some(*g)),
        Some(PerSite::Sites(v)) => match v.first() {
            Some(&g) if v.iter().all(|&x| x == g) => Ok(Some(g)),
            _ => bail!("the chain preset calibrates Ω for a uniform g; give drive.omega1/omega2 explicitly or use model = \"terms\""),
        },
    }
}

/// Resolves the spin model and drive of `c`, falling back to `default_kind`.
pub fn resolve(c: &RunConfig, default_kind: ModelKind) -> anyhow::Result<Physical> {
    let kind = c.spin.model.unwrap_or(default_kind);
    let d = &c.drive;
    let (mut p, h0) = match kind {
        ModelKind::TwoSpin => {
            if let Some(n) = c.spin.n_sites {
                anyhow::ensure!(n == 2, "model two-spin has 2 sites, got spin.n_sites = {n}");
            }
            let pre = TwoSpinPreset::default();
            let j = c.spin.j.unwrap_or(pre.j);
            let b = c.spin.b.unwrap_or(pre.b);
            let p = Resolved {
                model: kind,
                n_sites: 2,
                j: Some(j),
                b: Some(b),
                terms: Vec::new(),
                g: vec![pre.g; 2],
                omega1: vec![pre.omega1; 2],
                omega2: vec![pre.omega2; 2],
                detuning: pre.detuning,
                delta: pre.raman,
                kappa: pre.kappa,
                nbar: pre.nbar,
                gamma: pre.gamma,
                cutoffs: pre.cutoffs,
            };
            (p, two_spin_model(b, j)?)
        }
        ModelKind::Chain => {
            let n = c.spin.n_sites.unwrap_or(4);
            let g = uniform_g(c)?.unwrap_or(DEFAULT_CHAIN_G);
            let explicit_omega = d.omega1.is_some() && d.omega2.is_some();
            let pre = chain_preset(c, n, g);
            // the preset's Ω calibration needs a nondegenerate ground level
            let (j, b, omega, detuning) = if explicit_omega && c.spin.j.is_some() {
                (pre.exchange()?, pre.b(), 0.0, g * g / pre.kappa)
            } else {
                let s = pre.resolve()?;
                (s.j, s.b, s.omega, s.detuning)
            };
            let p = Resolved {
                model: kind,
                n_sites: n,
                j: Some(j),
                b: Some(b),
                terms: Vec::new(),
                g: vec![g; n],
                omega1: vec![omega; n],
                omega2: vec![omega; n],
                detuning,
                delta: 0.0,
                kappa: pre.kappa,
                nbar: pre.nbar,
                gamma: pre.gamma,
                cutoffs: Cutoffs { mode1: 1, mode2: 1 },
            };
            (p, heisenberg_chain_with(n, j, b, c.spin.allow_odd)?)
        }
        ModelKind::Terms => {
            let Some(n) = c.spin.n_sites else {
                bail!("model = \"terms\" needs spin.n_sites");
            };
            anyhow::ensure!(!c.spin.terms.is_empty(), "model = \"terms\" needs at least one [[spin.terms]] entry");
            let need = |x: Option<&PerSite>, name: &str| -> anyhow::Result<Vec<f64>> {
                x.with_context(|| format!("model = \"terms\" needs drive.{name}"))?.expand(n, name)
            };
            let p = Resolved {
                model: kind,
                n_sites: n,
                j: c.spin.j,
                b: c.spin.b,
                terms: c.spin.terms.clone(),
                g: need(d.g.as_ref(), "g")?,
                omega1: need(d.omega1.as_ref(), "omega1")?,
                omega2: need(d.omega2.as_ref(), "omega2")?,
                detuning: d.detuning.context("model = \"terms\" needs drive.detuning")?,
                delta: 0.0,
                kappa: 1.0,
                nbar: 0.0,
                gamma: 0.0,
                cutoffs: Cutoffs { mode1: 1, mode2: 1 },
            };
            let spec = HamiltonianSpec {
                n_sites: n,
                terms: c.spin.terms.clone(),
            };
            (p, spec.build()?)
        }
    };
    if kind != ModelKind::Terms {
        if let Some(g) = &d.g {
            p.g = g.expand(p.n_sites, "g")?;
        }
        if let Some(x) = &d.omega1 {
            p.omega1 = x.expand(p.n_sites, "omega1")?;
        }
        if let Some(x) = &d.omega2 {
            p.omega2 = x.expand(p.n_sites, "omega2")?;
        }
        if let Some(x) = d.detuning {
            p.detuning = x;
        }
    }
    if let Some(x) = d.delta {
        p.delta = x;
    }
    if let Some(x) = d.nbar {
        p.nbar = x;
    }
    if let Some(x) = d.gamma {
        p.gamma = x;
    }
    if let Some(k) = c.lindblad.cutoff1 {
        p.cutoffs.mode1 = k;
    }
    if let Some(k) = c.lindblad.cutoff2 {
        p.cutoffs.mode2 = k;
    }
    p.drive().validate(p.n_sites)?;
    let eig = diagonalize(&h0)?;
    Ok(Physical { params: p, h0, eig })
}
