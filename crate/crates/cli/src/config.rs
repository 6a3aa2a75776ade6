//! Run configuration: a TOML file with one table per solver stage, overlaid
//! by command-line flags.
//!
//! All physical quantities are in units of κ (κ = 1). Unknown keys are
//! rejected with the offending name and position.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cavcool::markov::{Resonance, SiteSum, SpectralDensity};
use cavcool::presets::GapConvention;
use cavcool::spin::Term;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Lindblad,
    Trajectory,
    Markov,
}

/// Initial state of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// Highest spin level, empty cavity.
    #[default]
    Top,
    /// Ground level, empty cavity.
    Ground,
    /// Uniform mixture of spin levels, empty cavity.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TwoSpin,
    Chain,
    Terms,
}

/// A scalar shared by every site, or one value per site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSite {
    Uniform(f64),
    Sites(Vec<f64>),
}

impl PerSite {
    pub fn expand(&self, n: usize, name: &str) -> anyhow::Result<Vec<f64>> {
        match self {
            PerSite::Uniform(x) => Ok(vec![*x; n]),
            PerSite::Sites(v) if v.len() == n => Ok(v.clone()),
            PerSite::Sites(v) => bail!("drive.{name} has {} entries for {n} sites", v.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Value of κ in the user's physical unit; only used to annotate metadata.
    pub kappa_units: Option<f64>,
    pub solver: Option<Solver>,
    pub t_max: Option<f64>,
    pub dt: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub start: Start,
    pub force: bool,
    pub regime_threshold: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            kappa_units: None,
            solver: None,
            t_max: None,
            dt: None,
            seed: 1,
            out: None,
            start: Start::Top,
            force: false,
            regime_threshold: cavcool::model::DEFAULT_REGIME_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinSection {
    pub model: Option<ModelKind>,
    pub n_sites: Option<usize>,
    pub j: Option<f64>,
    pub b: Option<f64>,
    /// Explicit terms for `model = "terms"`.
    pub terms: Vec<Term>,
    pub allow_odd: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    /// Atom-cavity coupling, shared by both modes.
    pub g: Option<PerSite>,
    pub omega1: Option<PerSite>,
    pub omega2: Option<PerSite>,
    /// One-photon detuning Δ, shared by both drives.
    pub detuning: Option<f64>,
    /// Two-photon detuning δ, shared by both drives.
    pub delta: Option<f64>,
    pub nbar: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LindbladSection {
    pub tol: f64,
    pub cutoff1: Option<usize>,
    pub cutoff2: Option<usize>,
    pub nbar_sweep: Vec<f64>,
}

impl Default for LindbladSection {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            cutoff1: None,
            cutoff2: None,
            nbar_sweep: vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub n_traj: usize,
    pub bin_width: f64,
    pub include_spontaneous: bool,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            n_traj: 2000,
            bin_width: 1.0,
            include_spontaneous: false,
        }
    }
}

/// Spectral density as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpectrumSpec {
    Flat { lo: f64, hi: f64 },
    Table { points: Vec<(f64, f64)> },
    Comb { lines: Vec<(f64, f64)>, linewidth: Option<f64> },
}

impl SpectrumSpec {
    pub fn build(&self) -> cavcool::Result<SpectralDensity> {
        match self {
            SpectrumSpec::Flat { lo, hi } => SpectralDensity::flat_band(*lo, *hi),
            SpectrumSpec::Table { points } => SpectralDensity::table(points.clone()),
            SpectrumSpec::Comb { lines, linewidth } => SpectralDensity::delta_comb(lines.clone(), linewidth.unwrap_or(1.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovSection {
    pub cutoff: usize,
    pub resonance: Resonance,
    pub site_sum: SiteSum,
    pub gap_convention: GapConvention,
    /// Flat-band edges in units of B above `(ε)₀₀`.
    pub band: (f64, f64),
    /// Use a band covering every downward gap instead of `band`.
    pub full_band: bool,
    /// Explicit density for custom runs (both modes).
    pub spectrum: Option<SpectrumSpec>,
    pub sweep_n_sites: Vec<usize>,
    pub sweep_g: Vec<f64>,
    /// Coupling used for the time series and path diagnostics.
    pub series_g: f64,
}

impl Default for MarkovSection {
    fn default() -> Self {
        Self {
            cutoff: 1,
            resonance: Resonance::Corrected,
            site_sum: SiteSum::Incoherent,
            gap_convention: GapConvention::ZeroField,
            band: (0.5, 3.5),
            full_band: false,
            spectrum: None,
            sweep_n_sites: vec![4, 6, 8],
            sweep_g: vec![10.0, 20.0, 30.0, 40.0],
            series_g: 40.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub spin: SpinSection,
    pub drive: DriveSection,
    pub lindblad: LindbladSection,
    pub trajectory: TrajectorySection,
    pub markov: MarkovSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses `lo:hi`.
pub fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("band lower edge: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("band upper edge: {e}"))?;
    if !(hi > lo) {
        return Err(format!("band must satisfy lo < hi, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}
