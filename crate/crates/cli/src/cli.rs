use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_band, RunConfig, Solver, Start};

#[derive(Debug, Parser)]
#[command(name = "cavcool", version, about = "Cavity-assisted relaxation experiments (units of κ)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-spin cascade: populations, detection rates and thermal sweep.
    Fig2(Flags),
    /// Heisenberg chains under a flat broadband drive.
    Fig3(Flags),
    /// Run the solver selected in a config file.
    Custom(Flags),
    /// Print the regime report of a model.
    Validate(Flags),
    /// Dump the spectrum of a spin Hamiltonian.
    Spectrum(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Fig2(f) | Command::Fig3(f) | Command::Custom(f) | Command::Validate(f) | Command::Spectrum(f) => f,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Fig2(_) => "fig2",
            Command::Fig3(_) => "fig3",
            Command::Custom(_) => "custom",
            Command::Validate(_) => "validate",
            Command::Spectrum(_) => "spectrum",
        }
    }
}

/// Flags shared by all subcommands; each overrides the matching config key.
#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub echo: bool,
    /// Value of κ in your physical unit, recorded in metadata.
    #[arg(long = "kappa-units", value_name = "VALUE")]
    pub kappa_units: Option<f64>,
    /// Number of sites; a comma-separated list for fig3.
    #[arg(long = "N", value_delimiter = ',', value_name = "N")]
    pub n_sites: Vec<usize>,
    #[arg(long = "J")]
    pub j: Option<f64>,
    #[arg(long = "B")]
    pub b: Option<f64>,
    /// Atom-cavity coupling; a comma-separated list for fig3.
    #[arg(long, value_delimiter = ',')]
    pub g: Vec<f64>,
    /// Two-photon detuning δ.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub nbar: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Photon cutoff (per mode for the master equation, total for rate equations).
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Flat band `lo:hi` in units of B above (ε)₀₀.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    #[arg(long, value_enum)]
    pub solver: Option<Solver>,
    #[arg(long, value_enum)]
    pub start: Option<Start>,
    /// Count spontaneous-emission events in the cavity detection histograms.
    #[arg(long)]
    pub include_spontaneous: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run even when the regime validator reports a failure.
    #[arg(long)]
    pub force: bool,
}

impl Flags {
    /// Loads the config file (if any) and applies the flags on top.
    pub fn resolve(&self, command: &str) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let fig3 = command == "fig3";
        if self.kappa_units.is_some() {
            c.run.kappa_units = self.kappa_units;
        }
        if !self.n_sites.is_empty() {
            if fig3 {
                c.markov.sweep_n_sites = self.n_sites.clone();
            } else {
                c.spin.n_sites = Some(self.n_sites[0]);
            }
        }
        if !self.g.is_empty() {
            if fig3 {
                c.markov.sweep_g = self.g.clone();
                if !self.g.contains(&c.markov.series_g) {
                    c.markov.series_g = *self.g.last().unwrap();
                }
            } else {
                c.drive.g = Some(crate::config::PerSite::Uniform(self.g[0]));
            }
        }
        macro_rules! set {
            ($flag:expr, $slot:expr) => {
                if let Some(v) = $flag {
                    $slot = Some(v);
                }
            };
        }
        set!(self.j, c.spin.j);
        set!(self.b, c.spin.b);
        set!(self.delta, c.drive.delta);
        set!(self.nbar, c.drive.nbar);
        set!(self.gamma, c.drive.gamma);
        set!(self.tmax, c.run.t_max);
        set!(self.dt, c.run.dt);
        set!(self.solver, c.run.solver);
        set!(self.out.clone(), c.run.out);
        if let Some(n) = self.trajectories {
            c.trajectory.n_traj = n;
        }
        if let Some(s) = self.seed {
            c.run.seed = s;
        }
        if let Some(k) = self.cutoff {
            c.lindblad.cutoff1 = Some(k);
            c.lindblad.cutoff2 = Some(k);
            c.markov.cutoff = k;
        }
        if let Some(b) = self.band {
            c.markov.band = b;
        }
        if let Some(s) = self.start {
            c.run.start = s;
        }
        c.trajectory.include_spontaneous |= self.include_spontaneous;
        c.run.force |= self.force;
        Ok(c)
    }
}
