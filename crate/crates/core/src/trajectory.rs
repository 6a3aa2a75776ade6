//! Monte Carlo wave-function unraveling with photodetection records.
//!
//! Each trajectory evolves an unnormalized state under
//! `H_eff = H_rf − (i/2) Σ L†L` and jumps when its squared norm falls below
//! a uniform threshold. Propagators are exact matrix exponentials of dyadic
//! fractions of the grid step, so the jump time is located by a descending
//! binary search to a fixed resolution.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::model::{ChannelKind, EffectiveModel, LevelLabel};

/// Finest time step used to locate a jump, in units of 1/κ.
pub const JUMP_TIME_RESOLUTION: f64 = 1e-3;

/// Trajectories summed together before the ordered reduction.
const CHUNK: usize = 32;

/// Recorded in run metadata so that ensembles can be regenerated.
pub const RNG_DESCRIPTION: &str =
    "ChaCha20 (rand_chacha), seed_from_u64(master_seed), set_stream(trajectory id)";

/// Photodetections of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub trajectory: usize,
    /// `(time, channel)` in order of occurrence.
    pub jumps: Vec<(f64, ChannelKind)>,
    /// Most populated composite level at the final time.
    pub final_label: LevelLabel,
}

/// Averaged outcome of many trajectories.
#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub master_seed: u64,
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub labels: Vec<LevelLabel>,
    /// `populations[k][i]`: mean population of `labels[i]` at `times[k]`.
    pub populations: Vec<Vec<f64>>,
    pub records: Vec<DetectionRecord>,
}

impl TrajectoryEnsemble {
    /// Mean population of spin level `mu` summed over photon numbers.
    pub fn spin_population(&self, mu: usize) -> Vec<f64> {
        self.populations
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&self.labels)
                    .filter(|(_, l)| l.mu == mu)
                    .map(|(x, _)| x)
                    .sum()
            })
            .collect()
    }

    pub fn n_jumps(&self) -> usize {
        self.records.iter().map(|r| r.jumps.len()).sum()
    }

    /// CSV with columns `trajectory,time,channel`.
    pub fn write_records_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "trajectory,time,channel")?;
        for r in &self.records {
            for (t, k) in &r.jumps {
                writeln!(w, "{},{t:.6},{k}", r.trajectory)?;
            }
        }
        Ok(())
    }

    /// CSV of averaged populations, one column per composite level.
    pub fn write_populations_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "time")?;
        for l in &self.labels {
            write!(w, ",p_{l}")?;
        }
        writeln!(w)?;
        for (t, pops) in self.times.iter().zip(&self.populations) {
            write!(w, "{t}")?;
            for p in pops {
                write!(w, ",{p:.10e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Pure initial state `|Ψ_μ, n1, n2⟩`.
pub fn basis_state(model: &EffectiveModel, label: LevelLabel) -> DVector<C64> {
    let mut psi = DVector::zeros(model.dim());
    psi[model.index(label)] = C64::new(1.0, 0.0);
    psi
}

/// Propagators `exp(−i H_eff h/2^j)` for `j = 0..=depth` of one grid step.
struct StepPropagators {
    depth: usize,
    /// `by_level[j]` advances by `2^(depth − j)` ticks.
    by_level: Vec<DMatrix<C64>>,
}

impl StepPropagators {
    fn new(h_eff: &DMatrix<C64>, step: f64) -> Result<Self> {
        let mut depth = 0;
        while step / (1u64 << depth) as f64 > JUMP_TIME_RESOLUTION {
            depth += 1;
        }
        let by_level = (0..=depth)
            .map(|j| {
                let tau = step / (1u64 << j) as f64;
                expm(&(h_eff * C64::new(0.0, -tau)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { depth, by_level })
    }

    fn ticks(&self) -> u64 {
        1u64 << self.depth
    }

    /// Propagator for `2^e` ticks.
    fn pow2(&self, e: usize) -> &DMatrix<C64> {
        &self.by_level[self.depth - e]
    }

    fn tick(&self) -> f64 {
        1.0 / self.ticks() as f64
    }
}

fn norm_sqr(psi: &DVector<C64>) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

/// Advances `psi` by `n` ticks using the binary expansion of `n`.
fn advance(props: &StepPropagators, psi: &DVector<C64>, n: u64) -> DVector<C64> {
    let mut out = psi.clone();
    for e in 0..=props.depth {
        if n & (1 << e) != 0 {
            out = props.pow2(e) * out;
        }
    }
    out
}

struct Unraveling<'a> {
    model: &'a EffectiveModel,
    /// One propagator set per distinct grid step.
    props: Vec<StepPropagators>,
    step_index: Vec<usize>,
}

struct TrajectoryOutcome {
    populations: Vec<Vec<f64>>,
    record: DetectionRecord,
}

impl<'a> Unraveling<'a> {
    fn new(model: &'a EffectiveModel, t_grid: &[f64]) -> Result<Self> {
        let h_eff = model.effective_hamiltonian().to_dense();
        let mut steps: BTreeMap<u64, usize> = BTreeMap::new();
        let mut props = Vec::new();
        let mut step_index = Vec::with_capacity(t_grid.len().saturating_sub(1));
        for w in t_grid.windows(2) {
            let h = w[1] - w[0];
            let idx = match steps.get(&h.to_bits()) {
                Some(&i) => i,
                None => {
                    props.push(StepPropagators::new(&h_eff, h)?);
                    steps.insert(h.to_bits(), props.len() - 1);
                    props.len() - 1
                }
            };
            step_index.push(idx);
        }
        Ok(Self {
            model,
            props,
            step_index,
        })
    }

    fn jump(&self, psi: &DVector<C64>, rng: &mut ChaCha20Rng) -> Option<(ChannelKind, DVector<C64>)> {
        let candidates: Vec<(ChannelKind, DVector<C64>, f64)> = self
            .model
            .channels()
            .iter()
            .map(|c| {
                let v = c.operator.mul_vec(psi);
                let w = norm_sqr(&v);
                (c.kind, v, w)
            })
            .collect();
        let total: f64 = candidates.iter().map(|c| c.2).sum();
        if !(total > 0.0) {
            return None;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = candidates.iter().rposition(|c| c.2 > 0.0).unwrap();
        for (k, c) in candidates.iter().enumerate() {
            acc += c.2;
            if target < acc && c.2 > 0.0 {
                chosen = k;
                break;
            }
        }
        let (kind, v, w) = candidates.into_iter().nth(chosen).unwrap();
        Some((kind, v.unscale(w.sqrt())))
    }

    fn run(&self, psi0: &DVector<C64>, t_grid: &[f64], seed: u64, id: usize) -> TrajectoryOutcome {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let draw = |rng: &mut ChaCha20Rng| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        let snapshot = |psi: &DVector<C64>| {
            let n = norm_sqr(psi);
            psi.iter().map(|z| z.norm_sqr() / n).collect::<Vec<f64>>()
        };
        let mut psi = psi0.clone();
        let mut u = draw(&mut rng);
        let mut jumps = Vec::new();
        let mut populations = Vec::with_capacity(t_grid.len());
        populations.push(snapshot(&psi));
        for (k, w) in t_grid.windows(2).enumerate() {
            let props = &self.props[self.step_index[k]];
            let dt_tick = (w[1] - w[0]) * props.tick();
            let total = props.ticks();
            let mut pos = 0u64;
            while pos < total {
                let end = advance(props, &psi, total - pos);
                if norm_sqr(&end) > u {
                    psi = end;
                    break;
                }
                // largest advance that stays above the threshold
                for e in (0..=props.depth).rev() {
                    let stride = 1u64 << e;
                    if pos + stride >= total {
                        continue;
                    }
                    let trial = props.pow2(e) * &psi;
                    if norm_sqr(&trial) > u {
                        psi = trial;
                        pos += stride;
                    }
                }
                psi = props.pow2(0) * &psi;
                pos += 1;
                let t = w[0] + pos as f64 * dt_tick;
                match self.jump(&psi, &mut rng) {
                    Some((kind, next)) => {
                        jumps.push((if pos == total { w[1] } else { t }, kind));
                        psi = next;
                    }
                    // the norm loss came from rounding, not from a channel
                    None => psi = psi.unscale(norm_sqr(&psi).sqrt()),
                }
                u = draw(&mut rng);
            }
            populations.push(snapshot(&psi));
        }
        let last = populations.last().unwrap();
        let (imax, _) = last
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &p)| if p > b.1 { (i, p) } else { b });
        TrajectoryOutcome {
            record: DetectionRecord {
                trajectory: id,
                jumps,
                final_label: self.model.label(imax),
            },
            populations,
        }
    }
}

/// Unravels the master equation into `n_traj` trajectories from `psi0`.
///
/// Trajectory `i` draws from its own ChaCha20 stream, so the ensemble does not
/// depend on scheduling. Averages are summed in fixed-size chunks and then in
/// trajectory order.
pub fn run_trajectories(
    model: &EffectiveModel,
    psi0: &DVector<C64>,
    t_grid: &[f64],
    n_traj: usize,
    master_seed: u64,
) -> Result<TrajectoryEnsemble> {
    if n_traj == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if psi0.len() != model.dim() {
        return Err(Error::LengthMismatch {
            name: "psi0",
            got: psi0.len(),
            expected: model.dim(),
        });
    }
    if (norm_sqr(psi0) - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("initial state has squared norm {}", norm_sqr(psi0))));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter {
            name: "t_grid",
            reason: "must be non-empty and strictly increasing".into(),
        });
    }
    let engine = Unraveling::new(model, t_grid)?;
    let d = model.dim();
    let n_chunks = n_traj.div_ceil(CHUNK);
    let chunks: Vec<(Vec<Vec<f64>>, Vec<DetectionRecord>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![vec![0.0; d]; t_grid.len()];
            let mut records = Vec::new();
            for id in c * CHUNK..((c + 1) * CHUNK).min(n_traj) {
                let out = engine.run(psi0, t_grid, master_seed, id);
                for (acc, p) in sum.iter_mut().zip(&out.populations) {
                    for (a, x) in acc.iter_mut().zip(p) {
                        *a += x;
                    }
                }
                records.push(out.record);
            }
            (sum, records)
        })
        .collect();
    let mut populations = vec![vec![0.0; d]; t_grid.len()];
    let mut records = Vec::with_capacity(n_traj);
    for (sum, recs) in chunks {
        for (acc, p) in populations.iter_mut().zip(&sum) {
            for (a, x) in acc.iter_mut().zip(p) {
                *a += x;
            }
        }
        records.extend(recs);
    }
    for row in &mut populations {
        for x in row.iter_mut() {
            *x /= n_traj as f64;
        }
    }
    Ok(TrajectoryEnsemble {
        master_seed,
        n_traj,
        times: t_grid.to_vec(),
        labels: model.labels(),
        populations,
        records,
    })
}

/// Which detections a histogram counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DetectionFilter {
    /// Photons leaking from mode `x`, optionally lumped with spontaneous events.
    Cavity { mode: u8, include_spontaneous: bool },
    /// All spontaneous-emission channels.
    Spontaneous,
    /// An explicit channel list.
    Kinds(Vec<ChannelKind>),
}

impl DetectionFilter {
    pub fn cavity(mode: u8) -> Self {
        DetectionFilter::Cavity {
            mode,
            include_spontaneous: false,
        }
    }

    pub fn matches(&self, kind: &ChannelKind) -> bool {
        match self {
            DetectionFilter::Cavity {
                mode,
                include_spontaneous,
            } => *kind == ChannelKind::CavityLoss(*mode) || (*include_spontaneous && kind.is_spontaneous()),
            DetectionFilter::Spontaneous => kind.is_spontaneous(),
            DetectionFilter::Kinds(list) => list.contains(kind),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DetectionFilter::Cavity {
                mode,
                include_spontaneous: false,
            } => format!("a{mode}_loss"),
            DetectionFilter::Cavity { mode, .. } => format!("a{mode}_loss+spont"),
            DetectionFilter::Spontaneous => "spontaneous".into(),
            DetectionFilter::Kinds(list) => list.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("+"),
        }
    }
}

/// Detection rate per time bin, averaged over trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionHistogram {
    pub channel: String,
    pub bin_width: f64,
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// `counts / (bin_width · n_traj)`.
    pub rates: Vec<f64>,
    pub n_traj: usize,
}

impl DetectionHistogram {
    /// Poisson standard error of each rate.
    pub fn std_errors(&self) -> Vec<f64> {
        let norm = self.bin_width * self.n_traj as f64;
        self.counts.iter().map(|&c| (c as f64).sqrt() / norm).collect()
    }

    /// CSV with columns `bin_center,rate,channel`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_center,rate,channel")?;
        for (c, r) in self.centers.iter().zip(&self.rates) {
            writeln!(w, "{c},{r:.10e},{}", self.channel)?;
        }
        Ok(())
    }
}

/// Bins the ensemble's detections over its time span.
pub fn detection_rate_histogram(
    ensemble: &TrajectoryEnsemble,
    bin_width: f64,
    filter: &DetectionFilter,
) -> Result<DetectionHistogram> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidParameter {
            name: "bin_width",
            reason: format!("must be positive, got {bin_width}"),
        });
    }
    if ensemble.n_traj == 0 || ensemble.times.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let t0 = ensemble.times[0];
    let span = ensemble.times.last().unwrap() - t0;
    let n_bins = ((span / bin_width).ceil() as usize).max(1);
    let mut counts = vec![0u64; n_bins];
    for r in &ensemble.records {
        for (t, k) in &r.jumps {
            if filter.matches(k) {
                let b = (((t - t0) / bin_width) as usize).min(n_bins - 1);
                counts[b] += 1;
            }
        }
    }
    let norm = bin_width * ensemble.n_traj as f64;
    Ok(DetectionHistogram {
        channel: filter.name(),
        bin_width,
        centers: (0..n_bins).map(|b| t0 + (b as f64 + 0.5) * bin_width).collect(),
        rates: counts.iter().map(|&c| c as f64 / norm).collect(),
        counts,
        n_traj: ensemble.n_traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{evolve_density, DensityState, EvolveOptions};
    use crate::model::{assemble_model, build_effective_operators, Cutoffs, DriveParams};
    use crate::presets::TwoSpinPreset;
    use crate::spin::two_spin_model;

    fn grid(t_max: f64, dt: f64) -> Vec<f64> {
        let n = (t_max / dt).round() as usize;
        (0..=n).map(|k| k as f64 * dt).collect()
    }

    fn model(kappa: f64, g: f64) -> EffectiveModel {
        let h0 = two_spin_model(10.0, 5.0).unwrap();
        let p = DriveParams::uniform(2, g, 10.0 * g, -10.0 * g, 100.0 * g.max(1.0), 10.0, kappa, 0.0, 0.0);
        let ops = build_effective_operators(&p, 2).unwrap();
        assemble_model(&h0, &ops, &p, Cutoffs { mode1: 2, mode2: 1 }).unwrap()
    }

    fn sup_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn closed_system_matches_density_evolution() {
        let m = model(0.0, 7.0);
        assert!(m.channels().is_empty());
        let label = LevelLabel { mu: 3, n1: 0, n2: 0 };
        let t = grid(5.0, 0.25);
        let ens = run_trajectories(&m, &basis_state(&m, label), &t, 3, 1).unwrap();
        assert_eq!(ens.n_jumps(), 0);
        let opts = EvolveOptions {
            ode: crate::ode::OdeOptions { tol: 1e-12, max_step: 0.01, ..Default::default() },
            ..Default::default()
        };
        let exact = evolve_density(&m, &DensityState::level(&m, label), &t, opts).unwrap();
        let gap = sup_gap(&ens.populations, &exact.populations);
        assert!(gap <= 1e-8, "gap {gap:e}");
    }

    #[test]
    fn photon_escape_times_are_exponential() {
        let m = model(1.0, 0.0);
        let psi0 = basis_state(&m, LevelLabel { mu: 0, n1: 1, n2: 0 });
        let ens = run_trajectories(&m, &psi0, &grid(40.0, 1.0), 10_000, 42).unwrap();
        let mut times: Vec<f64> = ens.records.iter().map(|r| r.jumps[0].0).collect();
        assert!(ens.records.iter().all(|r| r.jumps.len() == 1));
        times.sort_by(f64::total_cmp);
        let n = times.len() as f64;
        let ks = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let cdf = 1.0 - (-t).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample statistic
        assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");

        let h = detection_rate_histogram(&ens, 1.0, &DetectionFilter::cavity(1)).unwrap();
        let err = h.std_errors();
        for ((c, r), e) in h.centers.iter().zip(&h.rates).zip(&err).take(5) {
            let exact = (-(c - 0.5)).exp() - (-(c + 0.5)).exp();
            assert!((r - exact).abs() <= 4.0 * e.max(1e-3), "bin {c}: {r} vs {exact}");
        }
        let none = detection_rate_histogram(&ens, 1.0, &DetectionFilter::cavity(2)).unwrap();
        assert!(none.rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn ensembles_are_reproducible_and_seed_dependent() {
        let preset = TwoSpinPreset::default();
        let m = preset.build().unwrap();
        let psi0 = basis_state(&m, LevelLabel { mu: 3, n1: 0, n2: 0 });
        let t = grid(20.0, 0.5);
        let a = run_trajectories(&m, &psi0, &t, 40, 7).unwrap();
        let b = run_trajectories(&m, &psi0, &t, 40, 7).unwrap();
        let c = run_trajectories(&m, &psi0, &t, 40, 8).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.populations, b.populations);
        assert_ne!(a.records, c.records);
        for r in &a.records {
            assert!(r.jumps.windows(2).all(|w| w[1].0 > w[0].0));
        }
        // prefixes agree: trajectory i does not depend on the ensemble size
        let short = run_trajectories(&m, &psi0, &t, 10, 7).unwrap();
        assert_eq!(short.records[..], a.records[..10]);
    }

    #[test]
    fn unraveling_converges_to_master_equation() {
        let m = TwoSpinPreset::default().build().unwrap();
        let label = LevelLabel { mu: 3, n1: 0, n2: 0 };
        let t = grid(30.0, 0.5);
        let exact = evolve_density(&m, &DensityState::level(&m, label), &t, EvolveOptions::default()).unwrap();
        let ens = run_trajectories(&m, &basis_state(&m, label), &t, 500, 3).unwrap();
        let gap = sup_gap(&ens.populations, &exact.populations);
        assert!(gap <= 5.0 / 500f64.sqrt(), "gap {gap}");
        for row in &ens.populations {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let m = model(1.0, 1.0);
        let psi0 = basis_state(&m, LevelLabel { mu: 0, n1: 0, n2: 0 });
        assert!(matches!(run_trajectories(&m, &psi0, &[0.0, 1.0], 0, 1), Err(Error::EmptyEnsemble)));
        assert!(run_trajectories(&m, &(psi0.clone() * C64::new(2.0, 0.0)), &[0.0, 1.0], 1, 1).is_err());
        assert!(run_trajectories(&m, &psi0, &[1.0, 0.0], 1, 1).is_err());
        let ens = run_trajectories(&m, &psi0, &[0.0, 1.0], 1, 1).unwrap();
        assert!(detection_rate_histogram(&ens, 0.0, &DetectionFilter::Spontaneous).is_err());
    }
}
