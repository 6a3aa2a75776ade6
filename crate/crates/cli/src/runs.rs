//! Experiment runners behind the subcommands.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use cavcool::lindblad::{asymptotic_state, evolve_density, DensityState, EvolutionResult, EvolveOptions};
use cavcool::markov::{asymptotic_population, evolve_populations, golden_rule_rates, relaxation_path_length, RateMatrix};
use cavcool::model::{validate_regime, CheckStatus, EffectiveModel, LevelLabel, RegimeReport};
use cavcool::ode::OdeOptions;
use cavcool::presets::ChainSetup;
use cavcool::trajectory::{basis_state, detection_rate_histogram, run_trajectories, DetectionFilter, DetectionHistogram, TrajectoryEnsemble};
use cavcool::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::cli::Command;
use crate::config::{ModelKind, RunConfig, Solver, Start};
use crate::output::{time_grid, Metadata, OutDir};
use crate::resolve::{chain_preset, markov_options, resolve, Physical};

pub const FIG2_T_MAX: f64 = 200.0;
pub const FIG2_DT: f64 = 0.5;
pub const FIG3_T_MAX: f64 = 2000.0;
pub const FIG3_DT: f64 = 10.0;

/// Photon occupancy above which a rate-equation cutoff is reported as too low.
const OCCUPANCY_WARNING: f64 = 0.1;

/// Runs one subcommand and returns the process exit code.
pub fn execute(cmd: &Command) -> anyhow::Result<i32> {
    let flags = cmd.flags();
    let config = flags.resolve(cmd.name())?;
    if flags.echo {
        echo(cmd, &config)?;
        return Ok(0);
    }
    match cmd {
        Command::Fig2(_) => run_fig2(&config).map(|_| 0),
        Command::Fig3(_) => run_fig3(&config).map(|_| 0),
        Command::Custom(_) => run_custom(&config).map(|_| 0),
        Command::Validate(_) => run_validate(&config),
        Command::Spectrum(_) => run_spectrum(&config).map(|_| 0),
    }
}

fn default_kind(cmd: &Command) -> ModelKind {
    match cmd {
        Command::Fig3(_) => ModelKind::Chain,
        _ => ModelKind::TwoSpin,
    }
}

fn echo(cmd: &Command, c: &RunConfig) -> anyhow::Result<()> {
    print!("{}", c.to_toml());
    if !matches!(cmd, Command::Fig3(_)) {
        #[derive(serde::Serialize)]
        struct Wrap<'a> {
            resolved: &'a crate::resolve::Resolved,
        }
        let phys = resolve(c, default_kind(cmd))?;
        println!();
        print!("{}", toml::to_string_pretty(&Wrap { resolved: &phys.params })?);
    }
    Ok(())
}

fn out_dir(c: &RunConfig, command: &str) -> PathBuf {
    c.run.out.clone().unwrap_or_else(|| Path::new("cavcool-out").join(command))
}

fn evolve_options(c: &RunConfig) -> EvolveOptions {
    EvolveOptions {
        ode: OdeOptions {
            tol: c.lindblad.tol,
            ..OdeOptions::default()
        },
        ..EvolveOptions::default()
    }
}

/// Runs the regime validator; a failing check aborts unless forced.
fn check_regime(model: &EffectiveModel, c: &RunConfig) -> anyhow::Result<RegimeReport> {
    let report = validate_regime(model, c.run.regime_threshold);
    for ch in report.checks.iter().filter(|ch| ch.status != CheckStatus::Pass) {
        log::warn!("regime check {} = {:.3e} ({:?})", ch.condition, ch.ratio, ch.status);
    }
    if report.has_failure() && !c.run.force {
        bail!("regime validator failed: {}; rerun with --force to override", report.summary());
    }
    Ok(report)
}

fn start_label(model: &EffectiveModel, start: Start) -> Option<LevelLabel> {
    match start {
        Start::Top => Some(LevelLabel {
            mu: model.spin_dim() - 1,
            n1: 0,
            n2: 0,
        }),
        Start::Ground => Some(LevelLabel { mu: 0, n1: 0, n2: 0 }),
        Start::Mixed => None,
    }
}

fn start_density(model: &EffectiveModel, start: Start) -> DensityState {
    match start_label(model, start) {
        Some(l) => DensityState::level(model, l),
        None => DensityState::maximally_mixed_spin(model),
    }
}

fn start_distribution(r: &RateMatrix, start: Start) -> Vec<f64> {
    let mut p = vec![0.0; r.dim()];
    match start {
        Start::Top => {
            let top = r.levels().iter().map(|l| l.label.mu).max().unwrap_or(0);
            p[r.index(LevelLabel { mu: top, n1: 0, n2: 0 }).expect("top level present")] = 1.0;
        }
        Start::Ground => p[r.ground()] = 1.0,
        Start::Mixed => p = r.maximally_mixed(),
    }
    p
}

/// Stationary photon flux `κ⟨a_x†a_x⟩` out of each mode.
fn photon_flux(model: &EffectiveModel, rho: &DensityState) -> (f64, f64) {
    let kappa = model.params().kappa;
    let pops = rho.populations();
    let labels = model.labels();
    let flux = |n: fn(&LevelLabel) -> usize| -> f64 {
        kappa * labels.iter().zip(&pops).map(|(l, p)| n(l) as f64 * p).sum::<f64>()
    };
    (flux(|l| l.n1), flux(|l| l.n2))
}

fn write_histogram<W: Write>(h: &DetectionHistogram, mut w: W) -> io::Result<()> {
    writeln!(w, "bin_center,rate,std_error,channel")?;
    for ((c, r), e) in h.centers.iter().zip(&h.rates).zip(h.std_errors()) {
        writeln!(w, "{c},{r:.10e},{e:.10e},{}", h.channel)?;
    }
    Ok(())
}

fn write_spin_populations<W: Write>(times: &[f64], cols: &[(String, Vec<f64>)], mut w: W) -> io::Result<()> {
    write!(w, "time")?;
    for (name, _) in cols {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (k, t) in times.iter().enumerate() {
        write!(w, "{t}")?;
        for (_, v) in cols {
            write!(w, ",{:.10e}", v[k])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn lindblad_columns(res: &EvolutionResult) -> Vec<(String, Vec<f64>)> {
    (0..res.n_spin_levels())
        .map(|mu| (format!("lindblad_p{mu}"), res.spin_population(mu)))
        .collect()
}

fn trajectory_columns(ens: &TrajectoryEnsemble, n_levels: usize) -> Vec<(String, Vec<f64>)> {
    (0..n_levels)
        .map(|mu| (format!("trajectory_p{mu}"), ens.spin_population(mu)))
        .collect()
}

fn detection(c: &RunConfig, ens: &TrajectoryEnsemble, mode: u8) -> anyhow::Result<DetectionHistogram> {
    let filter = DetectionFilter::Cavity {
        mode,
        include_spontaneous: c.trajectory.include_spontaneous,
    };
    Ok(detection_rate_histogram(ens, c.trajectory.bin_width, &filter)?)
}

fn run_fig2(c: &RunConfig) -> anyhow::Result<PathBuf> {
    let started = Instant::now();
    let phys = resolve(c, ModelKind::TwoSpin)?;
    let model = phys.model()?;
    let report = check_regime(&model, c)?;
    let (t_max, dt) = (c.run.t_max.unwrap_or(FIG2_T_MAX), c.run.dt.unwrap_or(FIG2_DT));
    let grid = time_grid(t_max, dt)?;
    let label = start_label(&model, c.run.start).context("fig2 runs trajectories and needs a pure start (top or ground)")?;
    let rho0 = DensityState::level(&model, label);

    let lind = evolve_density(&model, &rho0, &grid, evolve_options(c))?;
    if !lind.truncation_ok() {
        log::warn!("photon truncation monitor reached {:.3e}", lind.truncation_max());
    }
    let ens = run_trajectories(&model, &basis_state(&model, label), &grid, c.trajectory.n_traj, c.run.seed)?;
    let h1 = detection(c, &ens, 1)?;
    let h2 = detection(c, &ens, 2)?;
    let flux = photon_flux(&model, &asymptotic_state(&model, &rho0)?);

    let sweep = c
        .lindblad
        .nbar_sweep
        .par_iter()
        .map(|&nbar| {
            let mut p = phys.params.clone();
            p.nbar = nbar;
            let m = phys.model_with(&p)?;
            let s = asymptotic_state(&m, &DensityState::level(&m, label))?;
            Ok((nbar, s.spin_population(&m, 0)))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    for w in sweep.windows(2) {
        if w[1].0 > w[0].0 && w[1].1 >= w[0].1 {
            log::warn!("ground population does not drop between n̄ = {} and {}", w[0].0, w[1].0);
        }
    }

    let n_levels = model.spin_dim();
    let lcols = lindblad_columns(&lind);
    let tcols = trajectory_columns(&ens, n_levels);
    let gap = lcols
        .iter()
        .zip(&tcols)
        .flat_map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);

    let mut out = OutDir::create(&out_dir(c, "fig2"))?;
    let cols: Vec<_> = lcols.iter().chain(&tcols).cloned().collect();
    out.write("populations.csv", |w| write_spin_populations(&grid, &cols, w))?;
    out.write("lindblad_levels.csv", |w| lind.write_csv(w))?;
    out.write("detection_a1.csv", |w| write_histogram(&h1, w))?;
    out.write("detection_a2.csv", |w| write_histogram(&h2, w))?;
    out.write("records.csv", |w| ens.write_records_csv(w))?;
    out.write("nbar_sweep.csv", |w| {
        writeln!(w, "nbar,ground_population")?;
        for (nbar, p) in &sweep {
            writeln!(w, "{nbar},{p:.12e}")?;
        }
        Ok(())
    })?;

    let mut meta = Metadata::new("fig2", c, started);
    meta.resolved = json!({
        "params": phys.params,
        "t_max": t_max,
        "dt": dt,
        "start": label.to_string(),
        "n_traj": c.trajectory.n_traj,
        "bin_width": c.trajectory.bin_width,
    });
    meta.steps = json!({
        "lindblad_accepted": lind.stats.accepted,
        "lindblad_rejected": lind.stats.rejected,
        "trajectory_jumps": ens.n_jumps(),
    });
    meta.regime = Some(report);
    meta.diagnostics = json!({
        "truncation_max": lind.truncation_max(),
        "max_trace_error": lind.max_trace_error,
        "min_eigenvalue": lind.min_eigenvalue,
        "max_population_gap": gap,
        "stationary_photon_flux": { "a1": flux.0, "a2": flux.1 },
    });
    finish(out, meta)
}

fn finish(out: OutDir, meta: Metadata) -> anyhow::Result<PathBuf> {
    let path = out.finish(meta)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn chain_setup(c: &RunConfig, n: usize, g: f64) -> anyhow::Result<ChainSetup> {
    let setup = chain_preset(c, n, g).resolve().with_context(|| format!("chain N = {n}, g = {g}"))?;
    Ok(if c.markov.full_band { setup.with_full_band()? } else { setup })
}

struct SweepPoint {
    n: usize,
    g: f64,
    j: f64,
    omega: f64,
    ground: f64,
    occupancy: f64,
    classes: usize,
}

struct ChainSeries {
    n: usize,
    ground: Vec<f64>,
    paths: Vec<(usize, f64, f64, Option<usize>)>,
    uniformized: usize,
}

fn run_fig3(c: &RunConfig) -> anyhow::Result<PathBuf> {
    let started = Instant::now();
    let opts = markov_options(c);
    let ns = &c.markov.sweep_n_sites;
    anyhow::ensure!(!ns.is_empty() && !c.markov.sweep_g.is_empty(), "fig3 needs at least one N and one g");
    let (t_max, dt) = (c.run.t_max.unwrap_or(FIG3_T_MAX), c.run.dt.unwrap_or(FIG3_DT));
    let grid = time_grid(t_max, dt)?;

    let jobs: Vec<(usize, f64)> = ns.iter().flat_map(|&n| c.markov.sweep_g.iter().map(move |&g| (n, g))).collect();
    let points = jobs
        .par_iter()
        .map(|&(n, g)| {
            let s = chain_setup(c, n, g)?;
            let r = s.rates(opts)?;
            let a = asymptotic_population(&r, &r.maximally_mixed())?;
            if !a.is_unique() {
                log::warn!("N = {n}, g = {g}: {} closed classes", a.recurrent_classes.len());
            }
            Ok(SweepPoint {
                n,
                g,
                j: s.j,
                omega: s.omega,
                ground: r.spin_population(&a.distribution, 0),
                occupancy: r.photon_occupancy(&a.distribution),
                classes: a.recurrent_classes.len(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let series = ns
        .par_iter()
        .map(|&n| {
            let s = chain_setup(c, n, c.markov.series_g)?;
            let r = s.rates(opts)?;
            let p = evolve_populations(&r, &r.maximally_mixed(), &grid)?;
            let ground = p.populations.iter().map(|x| r.spin_population(x, 0)).collect();
            let paths = (0..s.eig.dim())
                .map(|mu| {
                    let len = match relaxation_path_length(&r, mu) {
                        Ok(l) => Some(l),
                        Err(Error::Unreachable(_)) => None,
                        Err(e) => return Err(e.into()),
                    };
                    Ok((mu, s.eig.energies()[mu], s.eig.sz_values()[mu], len))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok(ChainSeries {
                n,
                ground,
                paths,
                uniformized: r.dim(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let unreachable: Vec<_> = series
        .iter()
        .flat_map(|s| s.paths.iter().filter(|p| p.3.is_none()).map(move |p| json!({"n_sites": s.n, "level": p.0})))
        .collect();
    if !unreachable.is_empty() {
        eprintln!("warning: {} levels cannot reach the ground level; see paths.csv", unreachable.len());
    }
    let max_occupancy = points.iter().map(|p| p.occupancy).fold(0.0, f64::max);
    if max_occupancy > OCCUPANCY_WARNING {
        log::warn!("photon occupancy {max_occupancy:.3} is high for cutoff {}", opts.cutoff);
    }

    let mut out = OutDir::create(&out_dir(c, "fig3"))?;
    out.write("asymptotic.csv", |w| {
        writeln!(w, "n_sites,g,j,omega,ground_population,photon_occupancy,closed_classes")?;
        for p in &points {
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{:.12e},{:.6e},{}",
                p.n, p.g, p.j, p.omega, p.ground, p.occupancy, p.classes
            )?;
        }
        Ok(())
    })?;
    let cols: Vec<_> = series.iter().map(|s| (format!("ground_N{}", s.n), s.ground.clone())).collect();
    out.write("timeseries.csv", |w| write_spin_populations(&grid, &cols, w))?;
    out.write("paths.csv", |w| {
        writeln!(w, "n_sites,level,energy,sz,path_length")?;
        for s in &series {
            for (mu, e, sz, len) in &s.paths {
                let len = len.map_or_else(|| "unreachable".to_string(), |l| l.to_string());
                writeln!(w, "{},{mu},{e:.12e},{sz},{len}", s.n)?;
            }
        }
        Ok(())
    })?;

    let mut meta = Metadata::new("fig3", c, started);
    meta.resolved = json!({
        "kappa": 1.0,
        "b": c.spin.b.unwrap_or(10.0),
        "points": points.iter().map(|p| json!({"n_sites": p.n, "g": p.g, "j": p.j, "omega": p.omega, "detuning": p.g * p.g})).collect::<Vec<_>>(),
        "series_g": c.markov.series_g,
        "t_max": t_max,
        "dt": dt,
        "markov": opts,
    });
    meta.steps = json!({
        "sweep_points": points.len(),
        "levels": series.iter().map(|s| json!({"n_sites": s.n, "levels": s.uniformized})).collect::<Vec<_>>(),
    });
    meta.diagnostics = json!({
        "max_photon_occupancy": max_occupancy,
        "unreachable_levels": unreachable,
        "non_unique_points": points.iter().filter(|p| p.classes != 1).map(|p| json!({"n_sites": p.n, "g": p.g, "classes": p.classes})).collect::<Vec<_>>(),
    });
    finish(out, meta)
}

fn run_custom(c: &RunConfig) -> anyhow::Result<PathBuf> {
    let started = Instant::now();
    let solver = c.run.solver.context("custom runs need run.solver (or --solver)")?;
    let phys = resolve(c, ModelKind::TwoSpin)?;
    let model = phys.model()?;
    let report = check_regime(&model, c)?;
    let mut out = OutDir::create(&out_dir(c, "custom"))?;
    let (t_max, dt) = match solver {
        Solver::Markov => (c.run.t_max.unwrap_or(FIG3_T_MAX), c.run.dt.unwrap_or(FIG3_DT)),
        _ => (c.run.t_max.unwrap_or(FIG2_T_MAX), c.run.dt.unwrap_or(FIG2_DT)),
    };
    let grid = time_grid(t_max, dt)?;
    let (steps, diagnostics) = match solver {
        Solver::Lindblad => custom_lindblad(c, &model, &grid, &mut out)?,
        Solver::Trajectory => custom_trajectory(c, &model, &grid, &mut out)?,
        Solver::Markov => custom_markov(c, &phys, &grid, &mut out)?,
    };
    let mut meta = Metadata::new("custom", c, started);
    meta.resolved = json!({
        "params": phys.params,
        "solver": solver,
        "start": c.run.start,
        "t_max": t_max,
        "dt": dt,
    });
    meta.steps = steps;
    meta.regime = Some(report);
    meta.diagnostics = diagnostics;
    finish(out, meta)
}

type Summary = (serde_json::Value, serde_json::Value);

fn custom_lindblad(c: &RunConfig, model: &EffectiveModel, grid: &[f64], out: &mut OutDir) -> anyhow::Result<Summary> {
    let rho0 = start_density(model, c.run.start);
    let res = evolve_density(model, &rho0, grid, evolve_options(c))?;
    out.write("lindblad_levels.csv", |w| res.write_csv(w))?;
    let cols = lindblad_columns(&res);
    out.write("spin_populations.csv", |w| write_spin_populations(grid, &cols, w))?;
    Ok((
        json!({"accepted": res.stats.accepted, "rejected": res.stats.rejected}),
        json!({
            "truncation_max": res.truncation_max(),
            "max_trace_error": res.max_trace_error,
            "min_eigenvalue": res.min_eigenvalue,
        }),
    ))
}

fn custom_trajectory(c: &RunConfig, model: &EffectiveModel, grid: &[f64], out: &mut OutDir) -> anyhow::Result<Summary> {
    let label = start_label(model, c.run.start).context("trajectories need a pure start (top or ground)")?;
    let ens = run_trajectories(model, &basis_state(model, label), grid, c.trajectory.n_traj, c.run.seed)?;
    let cols = trajectory_columns(&ens, model.spin_dim());
    out.write("spin_populations.csv", |w| write_spin_populations(grid, &cols, w))?;
    out.write("trajectory_levels.csv", |w| ens.write_populations_csv(w))?;
    out.write("records.csv", |w| ens.write_records_csv(w))?;
    let h1 = detection(c, &ens, 1)?;
    let h2 = detection(c, &ens, 2)?;
    out.write("detection_a1.csv", |w| write_histogram(&h1, w))?;
    out.write("detection_a2.csv", |w| write_histogram(&h2, w))?;
    Ok((json!({"jumps": ens.n_jumps()}), json!({"n_traj": ens.n_traj})))
}

fn custom_markov(c: &RunConfig, phys: &Physical, grid: &[f64], out: &mut OutDir) -> anyhow::Result<Summary> {
    let (i1, i2) = phys.spectra(c)?;
    let r = golden_rule_rates(&phys.eig, &phys.params.drive(), &i1, &i2, markov_options(c))?;
    let p0 = start_distribution(&r, c.run.start);
    let series = evolve_populations(&r, &p0, grid)?;
    let a = asymptotic_population(&r, &p0)?;
    out.write("markov_populations.csv", |w| series.write_csv(w, r.levels()))?;
    out.write("rates.csv", |w| r.write_triplets(w))?;
    out.write("asymptotic.csv", |w| {
        writeln!(w, "level,probability")?;
        for (l, p) in r.levels().iter().zip(&a.distribution) {
            writeln!(w, "{},{p:.12e}", l.label)?;
        }
        Ok(())
    })?;
    let mut unreachable = Vec::new();
    out.write("paths.csv", |w| {
        writeln!(w, "level,path_length")?;
        for mu in 0..phys.eig.dim() {
            match relaxation_path_length(&r, mu) {
                Ok(l) => writeln!(w, "{mu},{l}")?,
                Err(_) => {
                    unreachable.push(mu);
                    writeln!(w, "{mu},unreachable")?
                }
            }
        }
        Ok(())
    })?;
    if !unreachable.is_empty() {
        eprintln!("warning: levels {unreachable:?} cannot reach the ground level");
    }
    Ok((
        json!({"levels": r.dim(), "transitions": r.transitions().len()}),
        json!({
            "ground_population": r.spin_population(&a.distribution, 0),
            "closed_classes": a.recurrent_classes.len(),
            "stationary_residual": a.residual,
            "photon_occupancy": r.photon_occupancy(&a.distribution),
            "unreachable_levels": unreachable,
        }),
    ))
}

fn run_validate(c: &RunConfig) -> anyhow::Result<i32> {
    let started = Instant::now();
    let phys = resolve(c, ModelKind::TwoSpin)?;
    let report = validate_regime(&phys.model()?, c.run.regime_threshold);
    for ch in &report.checks {
        println!("{:<44} {:>12.4e}  {:?}", ch.condition, ch.ratio, ch.status);
    }
    let verdict = if report.has_failure() {
        "FAIL"
    } else if report.all_pass() {
        "PASS"
    } else {
        "WARN"
    };
    println!("regime: {verdict}");
    if let Some(dir) = &c.run.out {
        let out = OutDir::create(dir)?;
        let mut meta = Metadata::new("validate", c, started);
        meta.resolved = json!({ "params": phys.params });
        meta.regime = Some(report.clone());
        finish(out, meta)?;
    }
    Ok(if report.has_failure() { 2 } else { 0 })
}

fn run_spectrum(c: &RunConfig) -> anyhow::Result<()> {
    let started = Instant::now();
    let phys = resolve(c, ModelKind::TwoSpin)?;
    match &c.run.out {
        None => phys.eig.write_csv(io::stdout().lock())?,
        Some(dir) => {
            let mut out = OutDir::create(dir)?;
            out.write("spectrum.csv", |w| phys.eig.write_csv(w))?;
            let mut meta = Metadata::new("spectrum", c, started);
            meta.resolved = json!({ "params": phys.params, "h_norm": phys.h0.norm() });
            finish(out, meta)?;
        }
    }
    Ok(())
}
