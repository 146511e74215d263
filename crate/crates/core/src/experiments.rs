//! Zero-hole scaling limits, staircase sweeps, orbit conditions, the
//! cylinder-matrix oracle and the tent/logistic counterexample.

use crate::error::{Error, Result};
use crate::linalg::{fixed_sum, EigenOptions};
use crate::maps::{conjugacy_g_inv, Branch, CriticalPoint, IntervalMap, Orientation};
use crate::openmap::{monte_carlo_escape, simulate_survival, Hole, HoleInterval, InitialMeasure, SurvivalCounts};
use crate::potentials::{birkhoff_sum, normalize, Potential};
use crate::stats::{linear_fit, LinearFit};
use crate::ulam::{snap_hole, snap_hole_fixed, SpectralResult, UlamOperator};
use crate::ExactReal;
use nalgebra::DMatrix;
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

pub const PERIOD_SEARCH_MAX: usize = 64;
pub const PERIOD_TOL: f64 = 1e-9;
pub const MIN_STAIRCASE_POINTS: usize = 200;

/// Where μ(H) comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSource {
    /// Unpunctured Ulam density paired with the conformal left vector.
    #[default]
    Ulam,
    /// ∫_H dx/(π√(x(1−x))) for the logistic map at t = 1.
    ClosedFormLogistic,
}

/// Hole family indexed by ε.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum HoleFamily {
    /// (z − ε, z + ε) ∩ [0, 1].
    Symmetric { z: f64 },
    /// [0, ε).
    LeftEnd,
    /// [0, g⁻¹(ε)) with g(x) = sin²(πx/2): the tent-side image of [0, ε).
    LeftEndConjugate,
}

impl HoleFamily {
    pub fn hole(&self, eps: f64) -> Result<Hole> {
        match *self {
            HoleFamily::Symmetric { z } => Hole::symmetric(z, eps),
            HoleFamily::LeftEnd => Hole::left_end(eps),
            HoleFamily::LeftEndConjugate => Hole::left_end(conjugacy_g_inv(eps)),
        }
    }

    /// The point the holes shrink to.
    pub fn center(&self) -> f64 {
        match *self {
            HoleFamily::Symmetric { z } => z,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingOptions {
    pub mu_source: MuSource,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions { mu_source: MuSource::Ulam, tol: 1e-10, max_iter: 100_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub eps_requested: f64,
    /// Half-width (symmetric family) or length (left-end families) after snapping.
    pub eps_snapped: f64,
    pub n: usize,
    pub lambda: f64,
    pub rate: f64,
    pub m_hole: f64,
    pub mu_hole: f64,
    pub ratio: f64,
    pub residual: f64,
    pub failed: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    Aperiodic,
    Periodic { period: usize, birkhoff: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub lo: f64,
    pub hi: f64,
    pub fit: LinearFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingSeries {
    pub rows: Vec<ScalingRow>,
    pub extrapolated: Option<Extrapolation>,
    pub predicted_limit: f64,
    pub prediction: Prediction,
    pub mu_source: MuSource,
    pub notes: Vec<String>,
}

impl ScalingSeries {
    pub fn extrapolated_limit(&self) -> Option<f64> {
        self.extrapolated.as_ref().map(|e| e.limit)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("eps_requested,eps_snapped,n,lambda,rate,m_hole,mu_hole,ratio,residual,failed\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.eps_requested,
                r.eps_snapped,
                r.n,
                r.lambda,
                r.rate,
                r.m_hole,
                r.mu_hole,
                r.ratio,
                r.residual,
                r.failed.as_deref().unwrap_or("")
            ));
        }
        s
    }
}

/// 1 for aperiodic z, 1 − e^{S_pφ(z)} for z of prime period p.
pub fn predicted_limit(map: &IntervalMap, pot: &Potential, z: f64) -> Result<(f64, Prediction)> {
    match map.detect_period(z, PERIOD_SEARCH_MAX, PERIOD_TOL) {
        Some(p) => {
            let s = birkhoff_sum(pot, map, z, p)?;
            Ok((1.0 - s.exp(), Prediction::Periodic { period: p, birkhoff: s }))
        }
        None => Ok((1.0, Prediction::Aperiodic)),
    }
}

fn acip_mass(a: f64, b: f64) -> f64 {
    conjugacy_g_inv(b.clamp(0.0, 1.0)) - conjugacy_g_inv(a.clamp(0.0, 1.0))
}

/// Grid operators shared between rows, keyed by bin count.
struct Reference {
    op: UlamOperator,
    spectral: SpectralResult,
}

impl Reference {
    fn new(map: &IntervalMap, pot: &Potential, n: usize, opts: &EigenOptions<f64>) -> Result<Self> {
        let op = UlamOperator::build(map, pot, n)?;
        let spectral = op.leading_eigen(opts)?;
        Ok(Reference { op, spectral })
    }

    /// (m(H), μ(H)) summed over the bins of the snapped hole.
    fn hole_masses(&self, mask: &[bool]) -> (f64, f64) {
        let r = &self.spectral;
        let gm: Vec<f64> = r.right.iter().zip(&r.left).map(|(g, m)| g * m).collect();
        let total = fixed_sum(&gm);
        let m: Vec<f64> = r.left.iter().zip(mask).map(|(&m, &h)| if h { m } else { 0.0 }).collect();
        let mu: Vec<f64> = gm.iter().zip(mask).map(|(&v, &h)| if h { v } else { 0.0 }).collect();
        (fixed_sum(&m), fixed_sum(&mu) / total)
    }
}

fn snapped_size(family: &HoleFamily, hole: &Hole) -> f64 {
    let iv = &hole.intervals()[0];
    match family {
        HoleFamily::Symmetric { z } => (z - iv.lo).max(iv.hi - z),
        _ => iv.hi - iv.lo,
    }
}

/// LS line through (μ(H), ratio) over the last three rows; the intercept is
/// the limit as the hole shrinks. Interval half-width: 3·SE plus the
/// distance from the intercept to the last observed ratio.
pub fn extrapolate(rows: &[ScalingRow]) -> Option<Extrapolation> {
    let ok: Vec<&ScalingRow> = rows.iter().filter(|r| r.failed.is_none() && r.ratio.is_finite()).collect();
    if ok.len() < 3 {
        return None;
    }
    let tail = &ok[ok.len() - 3..];
    let x: Vec<f64> = tail.iter().map(|r| r.mu_hole).collect();
    let y: Vec<f64> = tail.iter().map(|r| r.ratio).collect();
    let fit = linear_fit(&x, &y)?;
    let last = tail[2].ratio;
    let half = 3.0 * fit.intercept_se + (fit.intercept - last).abs();
    Some(Extrapolation { limit: fit.intercept, lo: fit.intercept - half, hi: fit.intercept + half, fit })
}

/// One spectral escape rate per ε. Holes are snapped with `snap_hole`, so
/// rows may use a finer grid than `n_base`.
pub fn scaling_limit(
    map: &IntervalMap,
    pot: &Potential,
    family: HoleFamily,
    eps_list: &[f64],
    n_base: usize,
    opts: &ScalingOptions,
) -> Result<ScalingSeries> {
    if eps_list.is_empty() {
        return Err(Error::Config("eps_list is empty".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("eps_list must be strictly decreasing".into()));
    }
    if !pot.is_normalized() {
        return Err(Error::Config("scaling_limit needs a normalized potential".into()));
    }
    let eig = EigenOptions { tol: opts.tol, max_iter: opts.max_iter };
    let snapped: Vec<Result<(Hole, usize)>> =
        eps_list.iter().map(|&e| family.hole(e).map(|h| snap_hole(&h, n_base))).collect();
    let grids: Vec<usize> = {
        let mut g: Vec<usize> = snapped.iter().filter_map(|s| s.as_ref().ok().map(|s| s.1)).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    let refs: BTreeMap<usize, Result<Reference>> =
        grids.par_iter().map(|&n| (n, Reference::new(map, pot, n, &eig))).collect();
    let rows: Vec<ScalingRow> = eps_list
        .par_iter()
        .zip(snapped.par_iter())
        .map(|(&eps, s)| {
            let failed = |n: usize, msg: String| ScalingRow {
                eps_requested: eps,
                eps_snapped: f64::NAN,
                n,
                lambda: f64::NAN,
                rate: f64::NAN,
                m_hole: f64::NAN,
                mu_hole: f64::NAN,
                ratio: f64::NAN,
                residual: f64::NAN,
                failed: Some(msg),
            };
            let (hole, n) = match s {
                Ok(v) => v,
                Err(e) => return failed(n_base, e.to_string()),
            };
            let reference = match refs.get(n) {
                Some(Ok(r)) => r,
                Some(Err(e)) => return failed(*n, e.to_string()),
                None => return failed(*n, "missing reference operator".into()),
            };
            let row = (|| -> Result<ScalingRow> {
                let op = reference.op.puncture(hole)?;
                let res = op.leading_eigen(&eig)?;
                let (m_hole, mu_ulam) = reference.hole_masses(op.hole_mask());
                let mu_hole = match opts.mu_source {
                    MuSource::Ulam => mu_ulam,
                    MuSource::ClosedFormLogistic => hole.intervals().iter().map(|iv| acip_mass(iv.lo, iv.hi)).sum(),
                };
                if !(mu_hole > 0.0) {
                    return Err(Error::Degenerate(format!("hole has μ-measure {mu_hole}")));
                }
                let rate = res.rate();
                Ok(ScalingRow {
                    eps_requested: eps,
                    eps_snapped: snapped_size(&family, hole),
                    n: *n,
                    lambda: res.lambda,
                    rate,
                    m_hole,
                    mu_hole,
                    ratio: rate / mu_hole,
                    residual: res.residual,
                    failed: None,
                })
            })();
            row.unwrap_or_else(|e| failed(*n, e.to_string()))
        })
        .collect();
    let (predicted_limit, prediction) = predicted_limit(map, pot, family.center())?;
    let mut notes = Vec::new();
    if pot.geometric_t().is_some_and(|t| t != 1.0) && opts.mu_source == MuSource::Ulam {
        notes.push("μ(H) for t ≠ 1 comes from the Ulam equilibrium density only; no independent oracle".into());
    }
    Ok(ScalingSeries { extrapolated: extrapolate(&rows), rows, predicted_limit, prediction, mu_source: opts.mu_source, notes })
}

#[derive(Clone, Debug, Serialize)]
pub struct SlowApproachReport {
    pub z: f64,
    pub theta: f64,
    pub r: f64,
    pub n_max: usize,
    pub delta_hat: f64,
    /// (critical point, n) pairs with fⁿ(c) within 1e-12 of z.
    pub hits: Vec<(f64, usize)>,
    pub pass: bool,
}

/// δ̂ = min over c ∈ Crit and 1 ≤ n ≤ n_max of d(fⁿc, z)·n^{r(1−θ)}.
pub fn slow_approach_check(map: &IntervalMap, z: f64, theta: f64, r: f64, n_max: usize) -> Result<SlowApproachReport> {
    if !(theta > 0.0 && theta < 1.0) || !(r > 0.0) || n_max < 10 {
        return Err(Error::Config(format!("slow approach needs θ ∈ (0,1), r > 0, n_max ≥ 10 (got {theta}, {r}, {n_max})")));
    }
    let mut delta_hat = f64::INFINITY;
    let mut hits = Vec::new();
    for c in map.crit() {
        let mut y = c.point;
        for n in 1..=n_max {
            y = map.eval_unchecked(y);
            let d = (y - z).abs();
            if d <= 1e-12 {
                hits.push((c.point, n));
            }
            delta_hat = delta_hat.min(d * (n as f64).powf(r * (1.0 - theta)));
        }
    }
    let pass = delta_hat > 0.0 && hits.is_empty();
    Ok(SlowApproachReport { z, theta, r, n_max, delta_hat, hits, pass })
}

#[derive(Clone, Debug, Serialize)]
pub struct DnSeries {
    pub critical_point: f64,
    /// D_n = |Dfⁿ(f(c))| for n = 1..=capped_at.
    pub values: Vec<f64>,
    pub capped_at: usize,
    pub overflow: bool,
    pub hits_critical: bool,
    /// Slope of log D_n against log n.
    pub q_hat: f64,
    /// Slope of log D_n against n.
    pub gamma_hat: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DnReport {
    pub q_min: f64,
    pub series: Vec<DnSeries>,
    pub pass: bool,
}

const DN_OVERFLOW: f64 = 1e300;

pub fn dn_growth_check(map: &IntervalMap, q_min: f64, n_max: usize) -> Result<DnReport> {
    if n_max < 2 {
        return Err(Error::Config("D_n check needs n_max ≥ 2".into()));
    }
    if map.crit().is_empty() {
        return Err(Error::Unsupported(format!("{} has no registered critical points", map.tag())));
    }
    let crit: Vec<f64> = map.crit().iter().map(|c| c.point).collect();
    let mut series = Vec::new();
    let mut pass = true;
    for &c in &crit {
        let mut y = map.eval_unchecked(c);
        let mut d = 1.0f64;
        let mut values = Vec::new();
        let mut overflow = false;
        let mut hits = false;
        for _ in 0..n_max {
            if crit.iter().any(|&p| (p - y).abs() <= 1e-12) {
                hits = true;
                break;
            }
            d *= map.abs_derivative(y);
            if !(d < DN_OVERFLOW) {
                overflow = true;
                break;
            }
            values.push(d);
            y = map.eval_unchecked(y);
        }
        let pts: Vec<(f64, f64)> = values.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(k, v)| ((k + 1) as f64, v.ln())).collect();
        let xs_log: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let q_hat = linear_fit(&xs_log, &ys).map_or(f64::NAN, |f| f.slope);
        let gamma_hat = linear_fit(&xs, &ys).map_or(f64::NAN, |f| f.slope);
        let ok = !hits && (q_min <= 0.0 || overflow || q_hat >= q_min);
        pass &= ok;
        series.push(DnSeries { critical_point: c, capped_at: values.len(), values, overflow, hits_critical: hits, q_hat, gamma_hat });
    }
    Ok(DnReport { q_min, series, pass })
}

/// Unimodal map with x + 8x² − 12x³ on [0, 1/2], mirrored on [1/2, 1].
/// Critical orbit 1/2 → 1 → 0 → 0 with |Df(0)| = |Df(1)| = 1, so D_n ≡ 1.
pub fn flat_dn_fixture() -> IntervalMap {
    let f = |x: f64| x + 8.0 * x * x - 12.0 * x * x * x;
    let df = |x: f64| 1.0 + 16.0 * x - 36.0 * x * x;
    let left = Branch::new(0.0, 0.5, Orientation::Increasing, Arc::new(f), Arc::new(df));
    let right = Branch::new(0.5, 1.0, Orientation::Decreasing, Arc::new(move |x| f(1.0 - x)), Arc::new(move |x| -df(1.0 - x)));
    IntervalMap::custom("flat_dn", vec![left, right], vec![CriticalPoint { point: 0.5, order: 2 }])
        .expect("fixture branches are valid")
}

#[derive(Clone, Debug, Serialize)]
pub struct StairPoint {
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
    pub rate: f64,
    pub failed: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StaircaseSample {
    pub z: f64,
    pub n: usize,
    pub plateau_tol: f64,
    pub grid: Vec<StairPoint>,
    /// Maximal index runs [start, end] with spread below the tolerance.
    pub plateaus: Vec<(usize, usize)>,
    pub plateau_fraction: f64,
    /// Like `plateau_fraction`, but only counting runs that contain at least
    /// two distinct snapped holes.
    pub genuine_plateau_fraction: f64,
    pub distinct_holes: usize,
    pub monotone: bool,
    pub max_decrease: f64,
    /// Fraction of grid holes whose two endpoints both fall back into the
    /// open hole under exact rational iteration.
    pub boundary_capture_fraction: f64,
}

impl StaircaseSample {
    pub fn csv(&self) -> String {
        let mut s = String::from("eps,lo,hi,rate,failed\n");
        for p in &self.grid {
            s.push_str(&format!("{},{},{},{},{}\n", p.eps, p.lo, p.hi, p.rate, p.failed.as_deref().unwrap_or("")));
        }
        s
    }
}

/// First n ≥ 1 with fⁿ(x) in (lo, hi) under exact arithmetic; `None` if the
/// orbit cycles or `n_max` is reached first.
pub fn exact_capture_time(map: &IntervalMap, x: ExactReal, lo: &ExactReal, hi: &ExactReal, n_max: usize) -> Option<usize> {
    let mut seen = HashSet::new();
    let mut y = x;
    for n in 1..=n_max {
        y = map.eval_exact(&y)?;
        if &y > lo && &y < hi {
            return Some(n);
        }
        if !seen.insert(y) {
            return None;
        }
    }
    None
}

fn to_exact(x: f64, n: usize) -> ExactReal {
    ExactReal::new((x * n as f64).round() as i128, n as i128)
}

pub fn devil_staircase(
    map: &IntervalMap,
    pot: &Potential,
    z: f64,
    eps_grid: &[f64],
    n: usize,
    plateau_tol: f64,
    opts: &EigenOptions<f64>,
) -> Result<StaircaseSample> {
    if eps_grid.len() < MIN_STAIRCASE_POINTS {
        return Err(Error::Config(format!(
            "staircase grid has {} points, need at least {MIN_STAIRCASE_POINTS}",
            eps_grid.len()
        )));
    }
    if eps_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("eps_grid must be strictly ascending".into()));
    }
    let base = UlamOperator::build(map, pot, n)?;
    let holes: Vec<Result<Hole>> = eps_grid.iter().map(|&e| Hole::symmetric(z, e).map(|h| snap_hole_fixed(&h, n))).collect();
    let keys: Vec<Option<(u64, u64)>> = holes
        .iter()
        .map(|h| h.as_ref().ok().map(|h| (h.intervals()[0].lo.to_bits(), h.intervals()[0].hi.to_bits())))
        .collect();
    let mut distinct: Vec<(u64, u64)> = keys.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    let rates: BTreeMap<(u64, u64), std::result::Result<f64, String>> = distinct
        .par_iter()
        .map(|&k| {
            let h = Hole::from_intervals(vec![HoleInterval::open(f64::from_bits(k.0), f64::from_bits(k.1))]);
            let r = h
                .and_then(|h| base.puncture(&h))
                .and_then(|op| op.leading_eigen(opts))
                .map(|r| r.rate())
                .map_err(|e| e.to_string());
            (k, r)
        })
        .collect();
    let grid: Vec<StairPoint> = eps_grid
        .iter()
        .zip(&holes)
        .zip(&keys)
        .map(|((&eps, h), k)| match (h, k) {
            (Ok(h), Some(k)) => {
                let iv = h.intervals()[0];
                match &rates[k] {
                    Ok(rate) => StairPoint { eps, lo: iv.lo, hi: iv.hi, rate: *rate, failed: None },
                    Err(e) => StairPoint { eps, lo: iv.lo, hi: iv.hi, rate: f64::NAN, failed: Some(e.clone()) },
                }
            }
            (Err(e), _) => StairPoint { eps, lo: f64::NAN, hi: f64::NAN, rate: f64::NAN, failed: Some(e.to_string()) },
            (Ok(_), None) => unreachable!("every valid hole has a key"),
        })
        .collect();
    let mut plateaus = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if grid[i].failed.is_some() {
            i += 1;
            continue;
        }
        let (mut lo, mut hi) = (grid[i].rate, grid[i].rate);
        let mut j = i;
        while j + 1 < grid.len() && grid[j + 1].failed.is_none() {
            let r = grid[j + 1].rate;
            if hi.max(r) - lo.min(r) >= plateau_tol {
                break;
            }
            lo = lo.min(r);
            hi = hi.max(r);
            j += 1;
        }
        if j > i {
            plateaus.push((i, j));
        }
        i = j + 1;
    }
    let total = grid.len() as f64;
    let covered: usize = plateaus.iter().map(|(a, b)| b - a + 1).sum();
    let genuine: usize = plateaus
        .iter()
        .filter(|(a, b)| (*a..=*b).any(|k| keys[k] != keys[*a]))
        .map(|(a, b)| b - a + 1)
        .sum();
    let mut max_decrease: f64 = 0.0;
    let mut prev: Option<f64> = None;
    for p in grid.iter().filter(|p| p.failed.is_none()) {
        if let Some(q) = prev {
            max_decrease = max_decrease.max(q - p.rate);
        }
        prev = Some(p.rate);
    }
    let captured = grid
        .par_iter()
        .filter(|p| p.failed.is_none())
        .filter(|p| {
            let (lo, hi) = (to_exact(p.lo, n), to_exact(p.hi, n));
            exact_capture_time(map, lo, &lo, &hi, 100_000).is_some() && exact_capture_time(map, hi, &lo, &hi, 100_000).is_some()
        })
        .count();
    Ok(StaircaseSample {
        z,
        n,
        plateau_tol,
        plateaus,
        plateau_fraction: covered as f64 / total,
        genuine_plateau_fraction: genuine as f64 / total,
        distinct_holes: distinct.len(),
        monotone: max_decrease <= 10.0 * opts.tol,
        max_decrease,
        boundary_capture_fraction: captured as f64 / total,
        grid,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConjugacyMcOptions {
    pub eps: f64,
    pub n_samples: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Compare survivor fractions every `stride` steps.
    pub stride: usize,
}

impl Default for ConjugacyMcOptions {
    fn default() -> Self {
        ConjugacyMcOptions { eps: 1.0 / 64.0, n_samples: 200_000, n_steps: 100, seed: 0, stride: 5 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjugacyCheck {
    pub eps: f64,
    pub steps_compared: usize,
    /// Largest |difference| / combined standard error.
    pub max_z: f64,
    pub pass: bool,
    pub tent_rate: f64,
    pub logistic_rate: f64,
}

/// Tent with holes [0, g⁻¹ε) against logistic with [0, ε), Lebesgue vs acip.
pub fn conjugacy_survival_check(opts: &ConjugacyMcOptions) -> Result<ConjugacyCheck> {
    let t = IntervalMap::tent2();
    let f = IntervalMap::logistic4();
    let tent = simulate_survival(&t, &HoleFamily::LeftEndConjugate.hole(opts.eps)?, InitialMeasure::Lebesgue, opts.n_samples, opts.n_steps, opts.seed)?;
    let logi = simulate_survival(
        &f,
        &HoleFamily::LeftEnd.hole(opts.eps)?,
        InitialMeasure::AcipLogistic4,
        opts.n_samples,
        opts.n_steps,
        opts.seed.wrapping_add(1),
    )?;
    let (max_z, steps) = compare_counts(&tent, &logi, opts.stride.max(1));
    let tr = crate::openmap::fit_decay(&tent.counts).map(|f| f.rate).unwrap_or(f64::NAN);
    let lr = crate::openmap::fit_decay(&logi.counts).map(|f| f.rate).unwrap_or(f64::NAN);
    Ok(ConjugacyCheck { eps: opts.eps, steps_compared: steps, max_z, pass: max_z <= 3.0, tent_rate: tr, logistic_rate: lr })
}

fn compare_counts(a: &SurvivalCounts, b: &SurvivalCounts, stride: usize) -> (f64, usize) {
    let mut max_z: f64 = 0.0;
    let mut steps = 0;
    for n in (0..=a.n_steps.min(b.n_steps)).step_by(stride) {
        let se = (a.fraction_se(n).powi(2) + b.fraction_se(n).powi(2)).sqrt();
        let d = (a.fraction(n) - b.fraction(n)).abs();
        if se > 0.0 {
            max_z = max_z.max(d / se);
            steps += 1;
        } else if d > 0.0 {
            max_z = f64::INFINITY;
        }
    }
    (max_z, steps)
}

#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleReport {
    pub n: usize,
    pub tent: ScalingSeries,
    pub logistic: ScalingSeries,
    pub tent_limit: Option<f64>,
    pub logistic_limit: Option<f64>,
    /// 1 − 1/|Df(0)| for the logistic map.
    pub naive: f64,
    /// 1 − (1/|Df(0)|)^{1/2}.
    pub alternate: f64,
    pub naive_outside_interval: bool,
    pub conjugacy: Option<ConjugacyCheck>,
}

pub fn counterexample_ex(n: usize, eps_list: &[f64], mc: Option<&ConjugacyMcOptions>) -> Result<CounterexampleReport> {
    if eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0 && (e.log2().round() - e.log2()).abs() < 1e-12)) {
        return Err(Error::Config("counterexample eps_list must hold dyadic values in (0, 1)".into()));
    }
    let t = IntervalMap::tent2();
    let f = IntervalMap::logistic4();
    let pt = normalize(&Potential::geometric(1.0)?, &t, n.max(64))?;
    let pf = normalize(&Potential::geometric(1.0)?, &f, n.max(64))?;
    let opts = ScalingOptions::default();
    let tent = scaling_limit(&t, &pt, HoleFamily::LeftEndConjugate, eps_list, n, &opts)?;
    let logistic = scaling_limit(
        &f,
        &pf,
        HoleFamily::LeftEnd,
        eps_list,
        n,
        &ScalingOptions { mu_source: MuSource::ClosedFormLogistic, ..opts },
    )?;
    let df0 = f.abs_derivative(0.0);
    let naive = 1.0 - 1.0 / df0;
    let alternate = 1.0 - (1.0 / df0).sqrt();
    let naive_outside_interval = logistic.extrapolated.as_ref().is_some_and(|e| naive < e.lo || naive > e.hi);
    let conjugacy = mc.map(conjugacy_survival_check).transpose()?;
    Ok(CounterexampleReport {
        n,
        tent_limit: tent.extrapolated_limit(),
        logistic_limit: logistic.extrapolated_limit(),
        tent,
        logistic,
        naive,
        alternate,
        naive_outside_interval,
        conjugacy,
    })
}

/// A piecewise-linear full-branch map with a hole made of k-cylinders.
#[derive(Clone, Debug)]
pub struct MarkovInstance {
    pub map: IntervalMap,
    pub t: f64,
    pub k: usize,
    /// Indices (left to right) of the k-cylinders forming the hole.
    pub cylinders: Vec<usize>,
}

/// Sorted k-cylinder boundaries, 0 and 1 included.
pub fn cylinder_partition(map: &IntervalMap, k: usize) -> Vec<f64> {
    let mut pts = vec![0.0, 1.0];
    let mut layer: Vec<f64> = map.breakpoints();
    for _ in 0..k.saturating_sub(1) {
        pts.extend_from_slice(&layer);
        let mut next = Vec::new();
        for &y in &layer {
            if let Ok(pre) = map.preimages(y) {
                next.extend(pre);
            }
        }
        layer = next;
    }
    if k >= 1 {
        pts.extend_from_slice(&layer);
    }
    pts.retain(|x| (0.0..=1.0).contains(x));
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13);
    pts
}

impl MarkovInstance {
    pub fn partition(&self) -> Vec<f64> {
        cylinder_partition(&self.map, self.k)
    }

    /// Adjacent hole cylinders merge into one open interval.
    pub fn hole(&self) -> Result<Hole> {
        let p = self.partition();
        let mut idx = self.cylinders.clone();
        idx.sort_unstable();
        idx.dedup();
        if idx.last().is_some_and(|&i| i + 1 >= p.len()) {
            return Err(Error::Config(format!("cylinder index out of range (there are {})", p.len() - 1)));
        }
        let mut ivs: Vec<HoleInterval> = Vec::new();
        for i in idx {
            match ivs.last_mut() {
                Some(last) if last.hi == p[i] => last.hi = p[i + 1],
                _ => ivs.push(HoleInterval::open(p[i], p[i + 1])),
            }
        }
        Hole::from_intervals(ivs)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VariationalReport {
    pub n: usize,
    pub ulam_log_lambda: f64,
    pub symbolic_log_lambda: f64,
    pub difference: f64,
}

/// Spectral radius as the largest over irreducible diagonal blocks. Each
/// block's Perron root is simple, whereas eigenvalues of the full matrix can
/// sit in Jordan blocks and come back with error of order ε^(1/size).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] != 0.0 {
                g.add_edge(nodes[j], nodes[i], ());
            }
        }
    }
    kosaraju_scc(&g)
        .iter()
        .map(|class| {
            let idx: Vec<usize> = class.iter().map(|v| v.index()).collect();
            let block = m.select_rows(&idx).select_columns(&idx);
            block.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// log λ of the punctured Ulam operator against log of the spectral radius
/// of the weighted transition matrix on surviving k-cylinders.
pub fn variational_oracle(inst: &MarkovInstance) -> Result<VariationalReport> {
    let slopes = inst
        .map
        .pl_slopes()
        .ok_or_else(|| Error::Unsupported("variational oracle needs a piecewise-linear map".into()))?;
    if !inst.map.is_full_branch() {
        return Err(Error::Unsupported("variational oracle needs full branches".into()));
    }
    let pot = normalize(&Potential::geometric_any_t(inst.t), &inst.map, 1024)?;
    let p = pot.base_pressure().unwrap_or(0.0);
    let part = inst.partition();
    let hole = inst.hole()?;
    let n0 = 1usize << (inst.k + 2).min(20);
    let (snapped, n) = snap_hole(&hole, n0);
    let aligned = snapped.intervals().len() == hole.intervals().len()
        && snapped.intervals().iter().zip(hole.intervals()).all(|(a, b)| (a.lo - b.lo).abs() < 1e-12 && (a.hi - b.hi).abs() < 1e-12);
    if !aligned {
        return Err(Error::Unsupported("hole is not aligned with a uniform grid".into()));
    }
    let op = UlamOperator::build(&inst.map, &pot, n)?.puncture(&snapped)?;
    let lam = op.leading_eigen(&EigenOptions { tol: 1e-13, max_iter: 200_000 })?.lambda;
    let cyl = part.len() - 1;
    let alive: Vec<usize> = (0..cyl).filter(|&i| !hole.contains(0.5 * (part[i] + part[i + 1]))).collect();
    let mut m = DMatrix::<f64>::zeros(alive.len(), alive.len());
    for (a, &i) in alive.iter().enumerate() {
        let mid = 0.5 * (part[i] + part[i + 1]);
        let b = inst.map.branch_index(mid);
        let w = slopes[b].abs().powf(-inst.t) * (-p).exp();
        let (u, v) = inst.map.image_hull(part[i], part[i + 1]);
        for (c, &j) in alive.iter().enumerate() {
            if part[j] >= u - 1e-13 && part[j + 1] <= v + 1e-13 {
                // Row = target, column = source, as in the Ulam matrix.
                m[(c, a)] = w;
            }
        }
    }
    let rho = spectral_radius(&m);
    let (ul, sl) = (lam.ln(), rho.ln());
    let difference = if lam == 0.0 && rho < 1e-12 { 0.0 } else { (ul - sl).abs() };
    Ok(VariationalReport { n, ulam_log_lambda: ul, symbolic_log_lambda: sl, difference })
}

/// Linear ε grid with `points` values in [lo, hi].
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

/// Monte Carlo rate for one hole next to the spectral rate on the same
/// snapped hole.
#[derive(Clone, Debug, Serialize)]
pub struct CrossCheck {
    pub spectral_rate: f64,
    pub mc_rate: f64,
    pub mc_std_err: f64,
    pub z_score: f64,
    pub flagged_fit: bool,
    pub agree: bool,
}

pub fn cross_check(
    map: &IntervalMap,
    pot: &Potential,
    hole: &Hole,
    n: usize,
    measure: InitialMeasure,
    n_samples: usize,
    n_steps: usize,
    seed: u64,
) -> Result<CrossCheck> {
    let est = crate::ulam::escape_rate_spectral(map, pot, hole, n, &EigenOptions::default())?;
    let mc = monte_carlo_escape(map, &est.snapped, measure, n_samples, n_steps, seed)?;
    let z = (mc.fit.rate - est.rate).abs() / mc.fit.std_err;
    Ok(CrossCheck {
        spectral_rate: est.rate,
        mc_rate: mc.fit.rate,
        mc_std_err: mc.fit.std_err,
        z_score: z,
        flagged_fit: mc.fit.flagged,
        agree: z <= 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent_geo() -> (IntervalMap, Potential) {
        let t = IntervalMap::tent2();
        let p = normalize(&Potential::geometric(1.0).unwrap(), &t, 1024).unwrap();
        (t, p)
    }

    #[test]
    fn predictions() {
        let (t, p) = tent_geo();
        assert!((predicted_limit(&t, &p, 2.0 / 3.0).unwrap().0 - 0.5).abs() < 1e-12);
        assert!((predicted_limit(&t, &p, 0.4).unwrap().0 - 0.75).abs() < 1e-12);
        assert_eq!(predicted_limit(&t, &p, 0.5_f64.sqrt()).unwrap().0, 1.0);
        let f = IntervalMap::logistic4();
        let pf = normalize(&Potential::geometric(1.0).unwrap(), &f, 1024).unwrap();
        assert!((predicted_limit(&f, &pf, 0.75).unwrap().0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slow_approach_examples() {
        let f = IntervalMap::logistic4();
        assert!(!slow_approach_check(&f, 0.0, 0.5, 1.0, 50).unwrap().pass);
        let r = slow_approach_check(&f, 0.75, 0.5, 1.0, 50).unwrap();
        assert!(r.pass && r.delta_hat >= 0.25);
        assert!(slow_approach_check(&IntervalMap::tent2(), 2.0 / 3.0, 0.5, 1.0, 50).unwrap().pass);
        assert!(slow_approach_check(&f, 0.75, 1.5, 1.0, 50).is_err());
    }

    #[test]
    fn dn_examples() {
        let f = IntervalMap::logistic4();
        let r = dn_growth_check(&f, 1.0, 20).unwrap();
        let v = &r.series[0].values;
        for (k, d) in v.iter().enumerate() {
            assert!((d / 4f64.powi(k as i32 + 1) - 1.0).abs() < 1e-12);
        }
        assert!(r.pass && (r.series[0].gamma_hat - 4f64.ln()).abs() < 1e-9);
        let flat = flat_dn_fixture();
        let r = dn_growth_check(&flat, 1.0, 50).unwrap();
        assert!(r.series[0].values.iter().all(|&d| (d - 1.0).abs() < 1e-12));
        assert!(!r.pass);
        assert!(dn_growth_check(&flat, 0.0, 50).unwrap().pass);
    }

    #[test]
    fn markov_oracle_examples() {
        let t = IntervalMap::tent2();
        let inst = MarkovInstance { map: t.clone(), t: 1.0, k: 2, cylinders: vec![1] };
        let r = variational_oracle(&inst).unwrap();
        assert!((r.ulam_log_lambda + 2f64.ln()).abs() < 1e-8 && r.difference < 1e-8, "{r:?}");
        let empty = MarkovInstance { map: t.clone(), t: 1.0, k: 2, cylinders: vec![] };
        let r = variational_oracle(&empty).unwrap();
        assert!(r.ulam_log_lambda.abs() < 1e-10 && r.symbolic_log_lambda.abs() < 1e-10);
        let ends = MarkovInstance { map: t, t: 1.0, k: 2, cylinders: vec![0, 3] };
        let r = variational_oracle(&ends).unwrap();
        assert!(r.difference < 1e-8, "{r:?}");
    }

    #[test]
    fn staircase_rejects_small_grid() {
        let (t, p) = tent_geo();
        let g = linear_grid(0.001, 0.06, 10);
        assert!(matches!(devil_staircase(&t, &p, 2.0 / 3.0, &g, 1024, 5e-10, &EigenOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn small_scaling_series() {
        let (t, p) = tent_geo();
        let eps: Vec<f64> = (4..=8).map(|k| 2f64.powi(-k)).collect();
        let s = scaling_limit(&t, &p, HoleFamily::Symmetric { z: 2.0 / 3.0 }, &eps, 1024, &ScalingOptions::default()).unwrap();
        assert!(s.rows.iter().all(|r| r.failed.is_none() && r.rate == -r.lambda.ln()));
        assert_eq!(s.rows[0].n, 3072);
        let last = s.rows.last().unwrap();
        assert!((last.ratio - 0.5).abs() < 0.05, "{:?}", s.rows);
        assert!(matches!(
            scaling_limit(&t, &p, HoleFamily::Symmetric { z: 0.5 }, &[0.1, 0.2], 64, &ScalingOptions::default()),
            Err(Error::Config(_))
        ));
    }
}
