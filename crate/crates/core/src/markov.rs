//! Classical rate equations for broadband, spectrally incoherent driving.
//!
//! Levels are `|Ψ_μ, n₁, n₂⟩` with `n₁ + n₂` at most a photon cutoff. Raman
//! processes enter through golden-rule rates evaluated at the
//! shift-corrected gap, cavity loss at `nκ`, and spontaneous emission through
//! the single-site scattering rates.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_effective_operators, DriveParams, LevelLabel};
use crate::spin::{EigenSystem, SiteKind, SpinSpace};

/// Tolerance on `∫I = 1` for tabulated and comb densities.
const NORMALIZATION_TOL: f64 = 1e-9;

/// Normalized spectral density `I(δ)` of a broadband drive.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum SpectralDensity {
    /// Constant `1/(hi − lo)` on `(lo, hi)`.
    FlatBand { lo: f64, hi: f64 },
    /// Piecewise-linear interpolation of `(δ_k, I_k)`, zero outside.
    Table { points: Vec<(f64, f64)> },
    /// Sharp lines `(δ_k, w_k)`, each broadened into a Lorentzian of the
    /// given full width (the cavity linewidth is the natural choice).
    DeltaComb { lines: Vec<(f64, f64)>, linewidth: f64 },
}

impl SpectralDensity {
    pub fn flat_band(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter {
                name: "band",
                reason: format!("need finite lo < hi, got ({lo}, {hi})"),
            });
        }
        Ok(SpectralDensity::FlatBand { lo, hi })
    }

    /// Tabulated density; rejected unless its trapezoid integral is 1.
    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 || points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidParameter {
                name: "table",
                reason: "need at least two points with increasing δ".into(),
            });
        }
        if points.iter().any(|p| !(p.1 >= 0.0) || !p.0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "table",
                reason: "values must be finite and non-negative".into(),
            });
        }
        let s = SpectralDensity::Table { points };
        let integral = s.integral();
        if (integral - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Unnormalized { integral });
        }
        Ok(s)
    }

    /// As [`SpectralDensity::table`] after rescaling to unit integral.
    pub fn table_normalized(points: Vec<(f64, f64)>) -> Result<Self> {
        let raw = trapezoid(&points);
        if !(raw > 0.0) {
            return Err(Error::Unnormalized { integral: raw });
        }
        Self::table(points.into_iter().map(|(d, i)| (d, i / raw)).collect())
    }

    pub fn delta_comb(lines: Vec<(f64, f64)>, linewidth: f64) -> Result<Self> {
        if !(linewidth > 0.0) {
            return Err(Error::InvalidParameter {
                name: "linewidth",
                reason: format!("must be positive, got {linewidth}"),
            });
        }
        if lines.is_empty() || lines.iter().any(|l| !(l.1 >= 0.0) || !l.0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lines",
                reason: "need at least one line with non-negative weight".into(),
            });
        }
        let total: f64 = lines.iter().map(|l| l.1).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Unnormalized { integral: total });
        }
        Ok(SpectralDensity::DeltaComb { lines, linewidth })
    }

    pub fn evaluate(&self, delta: f64) -> f64 {
        match self {
            SpectralDensity::FlatBand { lo, hi } => {
                if delta > *lo && delta < *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            SpectralDensity::Table { points } => {
                let k = points.partition_point(|p| p.0 <= delta);
                if k == 0 || k == points.len() {
                    return 0.0;
                }
                let (x0, y0) = points[k - 1];
                let (x1, y1) = points[k];
                y0 + (y1 - y0) * (delta - x0) / (x1 - x0)
            }
            SpectralDensity::DeltaComb { lines, linewidth } => {
                let hw = 0.5 * linewidth;
                lines
                    .iter()
                    .map(|(d, w)| w * hw / PI / ((delta - d).powi(2) + hw * hw))
                    .sum()
            }
        }
    }

    /// `∫I(δ)dδ`, exact for every shape.
    pub fn integral(&self) -> f64 {
        match self {
            SpectralDensity::FlatBand { .. } => 1.0,
            SpectralDensity::Table { points } => trapezoid(points),
            SpectralDensity::DeltaComb { lines, .. } => lines.iter().map(|l| l.1).sum(),
        }
    }

    /// True when all spectral weight sits at positive detuning.
    pub fn is_cooling(&self) -> bool {
        match self {
            SpectralDensity::FlatBand { lo, .. } => *lo >= 0.0,
            SpectralDensity::Table { points } => points.iter().all(|p| p.0 > 0.0 || p.1 == 0.0),
            SpectralDensity::DeltaComb { lines, .. } => lines.iter().all(|l| l.0 > 0.0 || l.1 == 0.0),
        }
    }

    /// The density with every detuning moved by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        match self {
            SpectralDensity::FlatBand { lo, hi } => SpectralDensity::FlatBand {
                lo: lo + shift,
                hi: hi + shift,
            },
            SpectralDensity::Table { points } => SpectralDensity::Table {
                points: points.iter().map(|&(d, i)| (d + shift, i)).collect(),
            },
            SpectralDensity::DeltaComb { lines, linewidth } => SpectralDensity::DeltaComb {
                lines: lines.iter().map(|&(d, w)| (d + shift, w)).collect(),
                linewidth: *linewidth,
            },
        }
    }
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// Flat band on `(eps1_00 + lo·B, eps1_00 + hi·B)`, height `1/((hi − lo)B)`.
pub fn make_flat_band(b: f64, eps1_00: f64, lo: f64, hi: f64) -> Result<SpectralDensity> {
    if !(b > 0.0) {
        return Err(Error::InvalidParameter {
            name: "B",
            reason: format!("must be positive, got {b}"),
        });
    }
    if !(hi > lo) {
        return Err(Error::InvalidParameter {
            name: "band",
            reason: format!("width must be positive, got ({lo}, {hi})"),
        });
    }
    SpectralDensity::flat_band(eps1_00 + lo * b, eps1_00 + hi * b)
}

/// A flat band reaching from `0.5B` above `eps_00` to one `B` past the
/// width of the whole spectrum, so that every downward gap is driven.
pub fn make_full_band(eig: &EigenSystem, b: f64, eps_00: f64) -> Result<SpectralDensity> {
    let e = eig.energies();
    let span = e[e.len() - 1] - e[0];
    make_flat_band(b, eps_00, 0.5, span / b + 1.0)
}

/// Resonance argument of the golden-rule rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resonance {
    /// Gap between shift-corrected energies `W`.
    #[default]
    Corrected,
    /// Bare gap `E_ν − E_μ`.
    Bare,
}

/// How site contributions combine in `|(Γ_±)_{μν}|²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteSum {
    /// `Σ_j |c_j (s_j^±)_{μν}|²`: spatially incoherent fields.
    #[default]
    Incoherent,
    /// `|Σ_j c_j (s_j^±)_{μν}|²`: a single phase-locked field, as in the
    /// master equation.
    Coherent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MarkovOptions {
    /// Largest total photon number `n₁ + n₂`.
    pub cutoff: usize,
    pub resonance: Resonance,
    pub site_sum: SiteSum,
}

impl Default for MarkovOptions {
    fn default() -> Self {
        Self {
            cutoff: 1,
            resonance: Resonance::Corrected,
            site_sum: SiteSum::Incoherent,
        }
    }
}

/// Node of the Markov chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CompositeLevel {
    pub label: LevelLabel,
    pub sz: f64,
    /// `E_μ − (ε_z)_μμ − n₁(ε₁)_μμ − n₂(ε₂)_μμ`.
    pub w: f64,
}

/// Physical process behind a rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Provenance {
    Cavity1Emit,
    Cavity1Absorb,
    Cavity2Emit,
    Cavity2Absorb,
    CavityDecay,
    CavityThermal,
    Spontaneous,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Cavity1Emit => "cavity1-emit",
            Provenance::Cavity1Absorb => "cavity1-absorb",
            Provenance::Cavity2Emit => "cavity2-emit",
            Provenance::Cavity2Absorb => "cavity2-absorb",
            Provenance::CavityDecay => "cavity-decay",
            Provenance::CavityThermal => "cavity-thermal",
            Provenance::Spontaneous => "spontaneous",
        };
        f.write_str(s)
    }
}

/// One contribution to the generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    pub provenance: Provenance,
}

/// Generator `R` with `dp/dt = R p`; `R[(to, from)]` is a rate.
#[derive(Clone, Debug)]
pub struct RateMatrix {
    levels: Vec<CompositeLevel>,
    transitions: Vec<Transition>,
    generator: DMatrix<f64>,
}

impl RateMatrix {
    /// Builds the generator from individual transitions.
    pub fn from_transitions(levels: Vec<CompositeLevel>, transitions: Vec<Transition>) -> Result<Self> {
        let n = levels.len();
        let mut generator = DMatrix::zeros(n, n);
        for t in &transitions {
            if !(t.rate >= 0.0) || !t.rate.is_finite() || t.from == t.to || t.from >= n || t.to >= n {
                return Err(Error::NotAGenerator(format!(
                    "bad transition {} -> {} with rate {}",
                    t.from, t.to, t.rate
                )));
            }
            generator[(t.to, t.from)] += t.rate;
            generator[(t.from, t.from)] -= t.rate;
        }
        Ok(Self {
            levels,
            transitions,
            generator,
        })
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[CompositeLevel] {
        &self.levels
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn index(&self, label: LevelLabel) -> Option<usize> {
        self.levels.iter().position(|l| l.label == label)
    }

    pub fn ground(&self) -> usize {
        self.index(LevelLabel { mu: 0, n1: 0, n2: 0 }).unwrap()
    }

    /// Total rate `from → to` over all processes.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else {
            self.generator[(to, from)]
        }
    }

    /// Largest column-sum magnitude relative to the largest rate.
    pub fn generator_residual(&self) -> f64 {
        let scale = self.generator.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        (0..self.dim())
            .map(|c| self.generator.column(c).sum().abs())
            .fold(0.0, f64::max)
            / scale
    }

    /// Sum of populations on levels with spin index `mu`.
    pub fn spin_population(&self, p: &[f64], mu: usize) -> f64 {
        self.levels
            .iter()
            .zip(p)
            .filter(|(l, _)| l.label.mu == mu)
            .map(|(_, x)| x)
            .sum()
    }

    /// `Σ p·W`.
    pub fn mean_energy(&self, p: &[f64]) -> f64 {
        self.levels.iter().zip(p).map(|(l, x)| l.w * x).sum()
    }

    /// Probability of at least one photon in the cavity.
    pub fn photon_occupancy(&self, p: &[f64]) -> f64 {
        self.levels
            .iter()
            .zip(p)
            .filter(|(l, _)| l.label.n1 + l.label.n2 > 0)
            .map(|(_, x)| x)
            .sum()
    }

    /// Uniform distribution over spin levels with an empty cavity.
    pub fn maximally_mixed(&self) -> Vec<f64> {
        let n_spin = self.levels.iter().filter(|l| l.label.n1 + l.label.n2 == 0).count();
        self.levels
            .iter()
            .map(|l| if l.label.n1 + l.label.n2 == 0 { 1.0 / n_spin as f64 } else { 0.0 })
            .collect()
    }

    /// One `from to rate provenance` line per transition, with a header
    /// listing the level labels.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "from,to,from_label,to_label,rate,provenance")?;
        for t in &self.transitions {
            writeln!(
                w,
                "{},{},{},{},{:.17e},{}",
                t.from, t.to, self.levels[t.from].label, self.levels[t.to].label, t.rate, t.provenance
            )?;
        }
        Ok(())
    }

    fn sparse(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.dim();
        (0..n)
            .map(|r| {
                (0..n)
                    .filter(|&c| self.generator[(r, c)] != 0.0)
                    .map(|c| (c, self.generator[(r, c)]))
                    .collect()
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        for c in 0..n {
            for r in 0..n {
                if r != c && self.generator[(r, c)] < 0.0 {
                    return Err(Error::NotAGenerator(format!("negative rate {c} -> {r}")));
                }
            }
        }
        let res = self.generator_residual();
        if res > 1e-12 {
            return Err(Error::NotAGenerator(format!("column sums off by {res:e}")));
        }
        Ok(())
    }
}

/// `|(Γ)_{μν}|²` in the eigenbasis for `Γ = Σ_j c_j s_j^kind`, combined
/// according to `site_sum`.
pub fn transition_strengths(eig: &EigenSystem, couplings: &[C64], kind: SiteKind, site_sum: SiteSum) -> Result<DMatrix<f64>> {
    let space = SpinSpace::new(eig.n_sites())?;
    let ops: Vec<_> = couplings.iter().map(|&c| (c, kind)).collect();
    squared_elements(eig, &ops, &space, site_sum)
}

fn squared_elements(eig: &EigenSystem, ops: &[(C64, SiteKind)], space: &SpinSpace, site_sum: SiteSum) -> Result<DMatrix<f64>> {
    let n = eig.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut coherent = DMatrix::<C64>::zeros(n, n);
    for (j, &(c, kind)) in ops.iter().enumerate() {
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        let m = eig.matrix_elements(space.site_operator(kind, j + 1)?.matrix()) * c;
        match site_sum {
            SiteSum::Incoherent => out += m.map(|z| z.norm_sqr()),
            SiteSum::Coherent => coherent += m,
        }
    }
    if site_sum == SiteSum::Coherent {
        out = coherent.map(|z| z.norm_sqr());
    }
    Ok(out)
}

/// Per-pair spontaneous rates `ν → μ` (diagonal excluded).
fn spontaneous_rates(eig: &EigenSystem, gamma: f64, weights: &[f64], space: &SpinSpace) -> Result<DMatrix<f64>> {
    let n = eig.dim();
    let mut out = DMatrix::zeros(n, n);
    if gamma == 0.0 {
        return Ok(out);
    }
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let site = j + 1;
        let mut site_sum = DMatrix::zeros(n, n);
        for (kind, factor) in [(SiteKind::Plus, 1.0), (SiteKind::Minus, 1.0), (SiteKind::Z, 2.0)] {
            let m = eig.matrix_elements(space.site_operator(kind, site)?.matrix());
            site_sum += m.map(|z| factor * z.norm_sqr());
        }
        out += site_sum * (0.25 * gamma * w);
    }
    for i in 0..n {
        out[(i, i)] = 0.0;
    }
    Ok(out)
}

/// Golden-rule rate matrix over `|Ψ_μ, n₁, n₂⟩`.
///
/// Emission into mode 1 takes `|ν, n₁−1, n₂⟩ → |μ, n₁, n₂⟩` at
/// `2π n₁ |(Γ₋)_{μν}|² I₁(δ*)`, with `δ*` the corrected gap; the reverse
/// absorption has the same rate. Mode 2 is analogous with `Γ₊`.
pub fn golden_rule_rates(
    eig: &EigenSystem,
    drive: &DriveParams,
    i1: &SpectralDensity,
    i2: &SpectralDensity,
    opts: MarkovOptions,
) -> Result<RateMatrix> {
    let n_sites = eig.n_sites();
    drive.validate(n_sites)?;
    if !eig.is_sector_resolved() {
        return Err(Error::InvalidParameter {
            name: "eigensystem",
            reason: "eigenstates must carry definite S_z".into(),
        });
    }
    if opts.cutoff < 1 {
        return Err(Error::InvalidParameter {
            name: "cutoff",
            reason: "photon cutoff must be at least 1".into(),
        });
    }
    for (name, i) in [("I1", i1), ("I2", i2)] {
        let integral = i.integral();
        if (integral - 1.0).abs() > NORMALIZATION_TOL {
            log::error!("{name} integrates to {integral}");
            return Err(Error::Unnormalized { integral });
        }
    }
    let space = SpinSpace::new(n_sites)?;
    let ops = build_effective_operators(drive, n_sites)?;
    let diag = |op: &crate::spin::SpinOperator| -> Vec<f64> {
        let m = eig.matrix_elements(op.matrix());
        (0..eig.dim()).map(|i| m[(i, i)].re).collect()
    };
    let ez = diag(&ops.eps_z);
    let e1 = diag(&ops.eps_1);
    let e2 = diag(&ops.eps_2);
    let energies = eig.energies();

    let mut levels = Vec::new();
    let mut index = HashMap::new();
    for mu in 0..eig.dim() {
        for n1 in 0..=opts.cutoff {
            for n2 in 0..=(opts.cutoff - n1) {
                let label = LevelLabel { mu, n1, n2 };
                index.insert(label, levels.len());
                levels.push(CompositeLevel {
                    label,
                    sz: eig.sz_values()[mu],
                    w: energies[mu] - ez[mu] - n1 as f64 * e1[mu] - n2 as f64 * e2[mu],
                });
            }
        }
    }
    let gap = |from: usize, to: usize| match opts.resonance {
        Resonance::Corrected => levels[from].w - levels[to].w,
        Resonance::Bare => energies[levels[from].label.mu] - energies[levels[to].label.mu],
    };

    let low: Vec<_> = drive.lowering_couplings().into_iter().map(|c| (c, SiteKind::Minus)).collect();
    let high: Vec<_> = drive.raising_couplings().into_iter().map(|c| (c, SiteKind::Plus)).collect();
    let gm = squared_elements(eig, &low, &space, opts.site_sum)?;
    let gp = squared_elements(eig, &high, &space, opts.site_sum)?;
    let spont = spontaneous_rates(eig, drive.gamma, &drive.scattering_weights(), &space)?;

    let mut transitions = Vec::new();
    let ds = eig.dim();
    for (mode, g2, density, emit, absorb) in [
        (1, &gm, i1, Provenance::Cavity1Emit, Provenance::Cavity1Absorb),
        (2, &gp, i2, Provenance::Cavity2Emit, Provenance::Cavity2Absorb),
    ] {
        for mu in 0..ds {
            for nu in 0..ds {
                let m2 = g2[(mu, nu)];
                if m2 == 0.0 {
                    continue;
                }
                for lower in levels.iter().filter(|l| l.label.mu == nu) {
                    let l = lower.label;
                    let upper = if mode == 1 {
                        LevelLabel { mu, n1: l.n1 + 1, n2: l.n2 }
                    } else {
                        LevelLabel { mu, n1: l.n1, n2: l.n2 + 1 }
                    };
                    let (Some(&to), Some(&from)) = (index.get(&upper), index.get(&l)) else {
                        continue;
                    };
                    let n = if mode == 1 { upper.n1 } else { upper.n2 } as f64;
                    let rate = 2.0 * PI * n * m2 * density.evaluate(gap(from, to));
                    if rate > 0.0 {
                        transitions.push(Transition { from, to, rate, provenance: emit });
                        transitions.push(Transition {
                            from: to,
                            to: from,
                            rate,
                            provenance: absorb,
                        });
                    }
                }
            }
        }
    }
    let kappa = drive.kappa;
    for (from, lev) in levels.iter().enumerate() {
        let l = lev.label;
        for (n, down, up) in [
            (l.n1, (l.n1 > 0).then(|| LevelLabel { n1: l.n1 - 1, ..l }), LevelLabel { n1: l.n1 + 1, ..l }),
            (l.n2, (l.n2 > 0).then(|| LevelLabel { n2: l.n2 - 1, ..l }), LevelLabel { n2: l.n2 + 1, ..l }),
        ] {
            if let Some(to) = down.and_then(|d| index.get(&d)) {
                let rate = n as f64 * kappa * (drive.nbar + 1.0);
                if rate > 0.0 {
                    transitions.push(Transition { from, to: *to, rate, provenance: Provenance::CavityDecay });
                }
            }
            if let Some(&to) = index.get(&up) {
                let rate = (n + 1) as f64 * kappa * drive.nbar;
                if rate > 0.0 {
                    transitions.push(Transition { from, to, rate, provenance: Provenance::CavityThermal });
                }
            }
        }
        for mu in 0..ds {
            let rate = spont[(mu, l.mu)];
            if rate > 0.0 {
                let to = index[&LevelLabel { mu, ..l }];
                transitions.push(Transition { from, to, rate, provenance: Provenance::Spontaneous });
            }
        }
    }
    RateMatrix::from_transitions(levels, transitions)
}

fn check_distribution(p0: &[f64], n: usize) -> Result<()> {
    if p0.len() != n {
        return Err(Error::LengthMismatch {
            name: "p0",
            got: p0.len(),
            expected: n,
        });
    }
    let sum: f64 = p0.iter().sum();
    if p0.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("not a probability vector (sum {sum})")));
    }
    Ok(())
}

/// Populations on a time grid, `populations[k][i]` at `times[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSeries {
    pub times: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
}

impl PopulationSeries {
    pub fn write_csv<W: Write>(&self, mut w: W, levels: &[CompositeLevel]) -> io::Result<()> {
        write!(w, "time")?;
        for l in levels {
            write!(w, ",p_{}", l.label)?;
        }
        writeln!(w)?;
        for (t, p) in self.times.iter().zip(&self.populations) {
            write!(w, "{t}")?;
            for x in p {
                write!(w, ",{x:.10e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Largest uniformized step `Λh` taken at once.
const MAX_POISSON_MEAN: f64 = 30.0;

/// `p(t) = exp(Rt) p₀` by uniformization, which keeps every iterate a
/// probability vector.
pub fn evolve_populations(r: &RateMatrix, p0: &[f64], t_grid: &[f64]) -> Result<PopulationSeries> {
    r.check()?;
    check_distribution(p0, r.dim())?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter {
            name: "t_grid",
            reason: "must be non-empty and strictly increasing".into(),
        });
    }
    let rows = r.sparse();
    let lambda = (0..r.dim()).map(|i| -r.generator[(i, i)]).fold(0.0, f64::max);
    let apply = |p: &[f64]| -> Vec<f64> {
        rows.iter()
            .enumerate()
            .map(|(i, row)| p[i] + row.iter().map(|&(c, v)| v * p[c]).sum::<f64>() / lambda)
            .collect()
    };
    let mut p = p0.to_vec();
    let mut populations = vec![p.clone()];
    for w in t_grid.windows(2) {
        if lambda > 0.0 {
            let h = w[1] - w[0];
            let chunks = ((lambda * h) / MAX_POISSON_MEAN).ceil().max(1.0) as usize;
            let mean = lambda * h / chunks as f64;
            for _ in 0..chunks {
                let mut term = p.clone();
                let mut weight = (-mean).exp();
                let mut acc: Vec<f64> = term.iter().map(|x| x * weight).collect();
                let mut cumulative = weight;
                let mut k = 0usize;
                while cumulative < 1.0 - 1e-15 && k < 10_000 {
                    k += 1;
                    term = apply(&term);
                    weight *= mean / k as f64;
                    cumulative += weight;
                    for (a, t) in acc.iter_mut().zip(&term) {
                        *a += weight * t;
                    }
                }
                let s: f64 = acc.iter().sum();
                p = acc.into_iter().map(|x| x.max(0.0) / s).collect();
            }
        }
        populations.push(p.clone());
    }
    Ok(PopulationSeries {
        times: t_grid.to_vec(),
        populations,
    })
}

/// Long-time limit of `exp(Rt)p₀` with the chain's closed classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Asymptotic {
    pub distribution: Vec<f64>,
    /// Closed communicating classes, each sorted by level index.
    pub recurrent_classes: Vec<Vec<usize>>,
    pub residual: f64,
}

impl Asymptotic {
    pub fn is_unique(&self) -> bool {
        self.recurrent_classes.len() == 1
    }
}

/// Closed communicating classes of the transition graph.
pub fn recurrent_classes(r: &RateMatrix) -> Vec<Vec<usize>> {
    let n = r.dim();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for from in 0..n {
        for to in 0..n {
            if from != to && r.generator[(to, from)] > 0.0 {
                g.add_edge(nodes[from], nodes[to], ());
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .filter(|class| {
            class
                .iter()
                .all(|&from| (0..n).all(|to| r.generator[(to, from)] <= 0.0 || from == to || class.binary_search(&to).is_ok()))
        })
        .collect();
    classes.sort();
    classes
}

/// Stationary distribution reached from `p0`.
///
/// Each closed class carries its own stationary law; transient mass is
/// split among classes by absorption probabilities.
pub fn asymptotic_population(r: &RateMatrix, p0: &[f64]) -> Result<Asymptotic> {
    r.check()?;
    check_distribution(p0, r.dim())?;
    let n = r.dim();
    let classes = recurrent_classes(r);
    let mut in_class = vec![None; n];
    for (k, c) in classes.iter().enumerate() {
        for &i in c {
            in_class[i] = Some(k);
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&i| in_class[i].is_none()).collect();
    let mut tpos = vec![usize::MAX; n];
    for (k, &i) in transient.iter().enumerate() {
        tpos[i] = k;
    }
    // h[c][i]: probability that transient level i ends in class c
    let absorption = if transient.is_empty() {
        Vec::new()
    } else {
        let m = DMatrix::from_fn(transient.len(), transient.len(), |a, b| r.generator[(transient[b], transient[a])]);
        let lu = m.lu();
        classes
            .iter()
            .map(|c| {
                let rhs = DVector::from_fn(transient.len(), |a, _| -c.iter().map(|&j| r.generator[(j, transient[a])]).sum::<f64>());
                lu.solve(&rhs).ok_or(Error::Singular("transient block"))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut distribution = vec![0.0; n];
    for (k, c) in classes.iter().enumerate() {
        let mut mass: f64 = c.iter().map(|&i| p0[i]).sum();
        if !transient.is_empty() {
            mass += transient.iter().map(|&i| p0[i] * absorption[k][tpos[i]]).sum::<f64>();
        }
        if mass <= 0.0 {
            continue;
        }
        let pi = class_stationary(r, c)?;
        for (&i, x) in c.iter().zip(pi) {
            distribution[i] = mass * x;
        }
    }
    let total: f64 = distribution.iter().sum();
    for x in &mut distribution {
        *x /= total;
    }
    let v = DVector::from_column_slice(&distribution);
    let scale = r.generator.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let residual = (&r.generator * &v).amax() / scale;
    if residual > 1e-10 {
        return Err(Error::NotAGenerator(format!("stationary residual {residual:e}")));
    }
    if classes.len() > 1 {
        log::info!("{} recurrent classes", classes.len());
    }
    Ok(Asymptotic {
        distribution,
        recurrent_classes: classes,
        residual,
    })
}

fn class_stationary(r: &RateMatrix, class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let mut m = DMatrix::from_fn(k, k, |a, b| r.generator[(class[a], class[b])]);
    for c in 0..k {
        m[(0, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(k);
    rhs[0] = 1.0;
    let pi = m.lu().solve(&rhs).ok_or(Error::Singular("recurrent class"))?;
    Ok(pi.iter().map(|x| x.max(0.0)).collect())
}

/// Sum over the lowest excited manifold `D` of
/// `|⟨d|s_j^+|0⟩|² + |⟨0|s_j^+|d⟩|²`, per site.
fn first_gap_weights(eig: &EigenSystem) -> Result<Vec<f64>> {
    let n_sites = eig.n_sites();
    let space = SpinSpace::new(n_sites)?;
    let manifold = eig
        .degenerate_clusters()
        .into_iter()
        .nth(1)
        .ok_or(Error::DarkTransition)?;
    let ground = eig.degenerate_clusters()[0][0];
    (1..=n_sites)
        .map(|site| {
            let m = eig.matrix_elements(space.site_operator(SiteKind::Plus, site)?.matrix());
            Ok(manifold
                .iter()
                .map(|&d| m[(d, ground)].norm_sqr() + m[(ground, d)].norm_sqr())
                .sum())
        })
        .collect()
}

/// Uniform Ω making `|(Γ₊)₁₀|² = Σ_j |g_jΩ/Δ|² w_j` equal to `κ²`,
/// where `w_j` collects the site's matrix elements between the ground level
/// and the first excited manifold in either direction.
pub fn calibrate_omega(eig: &EigenSystem, g: &[f64], detuning: f64, kappa: f64) -> Result<f64> {
    if g.len() != eig.n_sites() {
        return Err(Error::LengthMismatch {
            name: "g",
            got: g.len(),
            expected: eig.n_sites(),
        });
    }
    let w = first_gap_weights(eig)?;
    let sigma: f64 = g.iter().zip(&w).map(|(g, w)| g * g * w).sum();
    if !(sigma > 0.0) {
        return Err(Error::DarkTransition);
    }
    Ok(kappa * detuning.abs() / sigma.sqrt())
}

/// Fewest transitions from `(level, 0, 0)` to `(0, 0, 0)`.
pub fn relaxation_path_length(r: &RateMatrix, level: usize) -> Result<usize> {
    let start = r
        .index(LevelLabel { mu: level, n1: 0, n2: 0 })
        .ok_or(Error::InvalidParameter {
            name: "level",
            reason: format!("no spin level {level}"),
        })?;
    let goal = r.ground();
    let n = r.dim();
    let mut dist = vec![usize::MAX; n];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        if i == goal {
            return Ok(dist[i]);
        }
        for to in 0..n {
            if to != i && r.generator[(to, i)] > 0.0 && dist[to] == usize::MAX {
                dist[to] = dist[i] + 1;
                queue.push_back(to);
            }
        }
    }
    Err(Error::Unreachable(level))
}
