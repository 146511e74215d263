use crate::error::{check_unit, Error, Result};
use crate::maps::{conjugacy_g, IntervalMap, MapKind};
use crate::stats::linear_fit;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const BLOCK_SIZE: usize = 8192;
pub const SURVIVOR_FLOOR: u64 = 30;
pub const R2_FLAG: f64 = 0.99;

/// Interval of a hole; open unless a closed flag is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleInterval {
    pub lo: f64,
    pub hi: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub closed_lo: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub closed_hi: bool,
}

impl HoleInterval {
    pub fn open(lo: f64, hi: f64) -> Self {
        HoleInterval { lo, hi, closed_lo: false, closed_hi: false }
    }

    pub fn contains(&self, x: f64) -> bool {
        (x > self.lo || (self.closed_lo && x == self.lo)) && (x < self.hi || (self.closed_hi && x == self.hi))
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Hole {
    intervals: Vec<HoleInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<(f64, f64)>,
}

impl Hole {
    pub fn empty() -> Self {
        Hole::default()
    }

    /// (z − ε, z + ε) ∩ [0, 1]; a side clipped at 0 or 1 includes that endpoint.
    pub fn symmetric(z: f64, eps: f64) -> Result<Self> {
        check_unit("z", z)?;
        if !(eps > 0.0) {
            return Err(Error::Config(format!("hole radius must be positive, got {eps}")));
        }
        let (mut lo, mut hi) = (z - eps, z + eps);
        let mut iv = HoleInterval::open(lo, hi);
        if lo <= 0.0 {
            lo = 0.0;
            iv.closed_lo = true;
        }
        if hi >= 1.0 {
            hi = 1.0;
            iv.closed_hi = true;
        }
        iv.lo = lo;
        iv.hi = hi;
        let mut h = Hole::from_intervals(vec![iv])?;
        h.center = Some((z, eps));
        Ok(h)
    }

    /// [0, ε).
    pub fn left_end(eps: f64) -> Result<Self> {
        Hole::from_intervals(vec![HoleInterval { lo: 0.0, hi: eps, closed_lo: true, closed_hi: false }])
    }

    pub fn open(lo: f64, hi: f64) -> Result<Self> {
        Hole::from_intervals(vec![HoleInterval::open(lo, hi)])
    }

    pub fn from_intervals(mut intervals: Vec<HoleInterval>) -> Result<Self> {
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for iv in &intervals {
            check_unit("hole endpoint", iv.lo)?;
            check_unit("hole endpoint", iv.hi)?;
            if !(iv.lo < iv.hi) {
                return Err(Error::Config(format!("empty hole interval ({}, {})", iv.lo, iv.hi)));
            }
        }
        for w in intervals.windows(2) {
            let touching_closed = w[0].hi == w[1].lo && w[0].closed_hi && w[1].closed_lo;
            if w[0].hi > w[1].lo || touching_closed {
                return Err(Error::Config(format!(
                    "hole intervals ({}, {}) and ({}, {}) overlap",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        let total: f64 = intervals.iter().map(HoleInterval::len).sum();
        if total > 1.0 + 1e-15 {
            return Err(Error::Config(format!("hole has total length {total} > 1")));
        }
        Ok(Hole { intervals, center: None })
    }

    pub fn intervals(&self) -> &[HoleInterval] {
        &self.intervals
    }

    /// (z, ε) when the hole was built in canonical form.
    pub fn center(&self) -> Option<(f64, f64)> {
        self.center
    }

    pub(crate) fn with_center(mut self, center: Option<(f64, f64)>) -> Self {
        self.center = center;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(x))
    }

    pub fn lebesgue(&self) -> f64 {
        self.intervals.iter().map(HoleInterval::len).sum()
    }

    pub fn endpoints(&self) -> Vec<f64> {
        self.intervals.iter().flat_map(|iv| [iv.lo, iv.hi]).collect()
    }

    pub fn contains_hole(&self, other: &Hole) -> bool {
        other.intervals.iter().all(|o| self.intervals.iter().any(|s| s.lo <= o.lo && o.hi <= s.hi))
    }
}

/// Smallest n ≤ n_max with fⁿ(x) in the hole, else n_max + 1.
pub fn survival_time(map: &IntervalMap, hole: &Hole, x: f64, n_max: usize) -> Result<usize> {
    check_unit("x", x)?;
    let mut y = x;
    for n in 0..=n_max {
        if hole.contains(y) {
            return Ok(n);
        }
        if n < n_max {
            y = map.eval_unchecked(y);
        }
    }
    Ok(n_max + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMeasure {
    Lebesgue,
    /// Push-forward of Lebesgue under g(u) = sin²(πu/2).
    AcipLogistic4,
}

/// Spacing of the f64 uniform grid from `Rng::gen`.
const UNIFORM_ULP: f64 = 1.0 / (1u64 << 53) as f64;

impl InitialMeasure {
    /// `u` lies on the 2^-53 grid and `w` in [0, 1) refines it. Without the
    /// refinement, logistic orbits of g(dyadic) shadow tent orbits that land
    /// on 0 after about 53 steps, which shows up as a burst of deaths there.
    fn draw(self, u: f64, w: f64) -> f64 {
        let du = w * UNIFORM_ULP;
        match self {
            InitialMeasure::Lebesgue => (u + du).min(1.0 - f64::EPSILON / 2.0),
            InitialMeasure::AcipLogistic4 => {
                (conjugacy_g(u) + 0.5 * PI * (PI * u).sin() * du).clamp(0.0, 1.0)
            }
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        let u = rng.gen::<f64>();
        self.draw(u, rng.gen::<f64>())
    }
}

/// ChaCha8 stream `block` of `seed`: a counter-based generator, so blocks
/// are independent of scheduling.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

pub struct AcipSampler {
    rng: ChaCha8Rng,
}

impl Iterator for AcipSampler {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(InitialMeasure::AcipLogistic4.sample(&mut self.rng))
    }
}

/// Samples with density 1/(π√(x(1−x))).
pub fn acip_sampler_logistic4(seed: u64) -> AcipSampler {
    AcipSampler { rng: block_rng(seed, 0) }
}

#[derive(Clone, Debug, Serialize)]
pub struct SurvivalCounts {
    pub counts: Vec<u64>,
    pub n_samples: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub block_size: usize,
    pub measure: InitialMeasure,
    /// Tent orbits were simulated on 64-bit fixed-point expansions with a
    /// fresh random trailing bit each step (exact for Lebesgue-random points).
    pub exact_tent_bits: bool,
}

impl SurvivalCounts {
    pub fn fraction(&self, n: usize) -> f64 {
        self.counts[n] as f64 / self.n_samples as f64
    }

    pub fn fraction_se(&self, n: usize) -> f64 {
        let p = self.fraction(n);
        (p * (1.0 - p) / self.n_samples as f64).sqrt()
    }
}

fn tent_bits_step(s: u64, bit: u64) -> u64 {
    let flipped = if s >> 63 == 1 { !(s << 1) } else { s << 1 };
    (flipped & !1) | bit
}

fn bits_to_unit(s: u64) -> f64 {
    (s >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn simulate_block(
    map: &IntervalMap,
    hole: &Hole,
    measure: InitialMeasure,
    count: usize,
    n_steps: usize,
    mut rng: ChaCha8Rng,
    exact_tent: bool,
) -> Vec<u64> {
    let mut deaths = vec![0u64; n_steps + 2];
    // Each sample owns a fixed slice of the stream (in 32-bit words), so a
    // sample's randomness does not depend on when earlier samples died.
    let stride = 2 * (4 + n_steps as u128 / 64 + 1);
    for i in 0..count {
        rng.set_word_pos(i as u128 * stride);
        let mut death = n_steps + 1;
        if exact_tent {
            let mut s = match measure {
                InitialMeasure::Lebesgue => rng.next_u64(),
                m => {
                    let x = m.sample(&mut rng).min(1.0 - f64::EPSILON);
                    (((x * (1u64 << 53) as f64) as u64) << 11) | (rng.next_u64() & 0x7ff)
                }
            };
            let mut bits = rng.next_u64();
            let mut used = 0;
            for n in 0..=n_steps {
                if hole.contains(bits_to_unit(s)) {
                    death = n;
                    break;
                }
                if used == 64 {
                    bits = rng.next_u64();
                    used = 0;
                }
                s = tent_bits_step(s, (bits >> used) & 1);
                used += 1;
            }
        } else {
            let mut x = measure.sample(&mut rng);
            for n in 0..=n_steps {
                if hole.contains(x) {
                    death = n;
                    break;
                }
                x = map.eval_unchecked(x);
            }
        }
        deaths[death] += 1;
    }
    deaths
}

/// Survivor counts c_n = #{samples whose first n iterates avoid the hole}.
pub fn simulate_survival(
    map: &IntervalMap,
    hole: &Hole,
    measure: InitialMeasure,
    n_samples: usize,
    n_steps: usize,
    seed: u64,
) -> Result<SurvivalCounts> {
    if n_samples < 1000 || n_steps < 20 {
        return Err(Error::Config(format!(
            "Monte Carlo needs n_samples ≥ 1000 and n_steps ≥ 20 (got {n_samples}, {n_steps})"
        )));
    }
    let exact_tent = matches!(map.kind(), MapKind::Tent2);
    let blocks = n_samples.div_ceil(BLOCK_SIZE);
    let per_block: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK_SIZE.min(n_samples - b * BLOCK_SIZE);
            simulate_block(map, hole, measure, count, n_steps, block_rng(seed, b as u64), exact_tent)
        })
        .collect();
    let mut deaths = vec![0u64; n_steps + 2];
    for d in &per_block {
        for (acc, v) in deaths.iter_mut().zip(d) {
            *acc += v;
        }
    }
    let mut counts = vec![0u64; n_steps + 1];
    let mut alive = n_samples as u64;
    for n in 0..=n_steps {
        counts[n] = alive;
        alive -= deaths[n];
    }
    Ok(SurvivalCounts { counts, n_samples, n_steps, seed, block_size: BLOCK_SIZE, measure, exact_tent_bits: exact_tent })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// −slope of log c_n.
    pub rate: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub window: (usize, usize),
    pub points: usize,
    /// max of the two standard errors below.
    pub std_err: f64,
    /// Textbook regression SE (ignores the autocorrelation of log c_n).
    pub std_err_regression: f64,
    /// SE of the same slope under a binomial death process.
    pub std_err_process: f64,
    /// r² below 0.99: the window may not show a clean exponential.
    pub flagged: bool,
}

/// Least squares on log c_n over [n_steps/4, n_steps] restricted to c_n ≥ 30.
pub fn fit_decay(counts: &[u64]) -> Result<DecayFit> {
    let n_steps = counts.len() - 1;
    let a = n_steps / 4;
    let idx: Vec<usize> = (a..=n_steps).filter(|&n| counts[n] >= SURVIVOR_FLOOR).collect();
    if idx.len() < 5 {
        return Err(Error::InsufficientDecay { points: idx.len() });
    }
    let x: Vec<f64> = idx.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = idx.iter().map(|&n| (counts[n] as f64).ln()).collect();
    let fit = linear_fit(&x, &y).expect("at least five distinct abscissae");
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let w: Vec<f64> = x.iter().map(|v| (v - mx) / sxx).collect();
    let p = fit.slope.exp().min(1.0);
    let mut var = 0.0;
    let mut tail = 0.0;
    // Increment k (from idx[k-1] to idx[k]) is weighted by the sum of w over points at or after k.
    for k in (1..idx.len()).rev() {
        tail += w[k];
        let prev = counts[idx[k - 1]] as f64;
        var += (1.0 - p) / (prev * p.max(1e-300)) * tail * tail;
    }
    let se_process = var.sqrt();
    Ok(DecayFit {
        rate: -fit.slope,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        window: (idx[0], *idx.last().unwrap()),
        points: idx.len(),
        std_err: fit.slope_se.max(se_process),
        std_err_regression: fit.slope_se,
        std_err_process: se_process,
        flagged: fit.r2 < R2_FLAG,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SurvivalSeries {
    #[serde(flatten)]
    pub counts: SurvivalCounts,
    pub fit: DecayFit,
}

impl SurvivalSeries {
    pub fn rate(&self) -> f64 {
        self.fit.rate
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("step,survivors\n");
        for (n, c) in self.counts.counts.iter().enumerate() {
            s.push_str(&format!("{n},{c}\n"));
        }
        s
    }

    /// Sidecar metadata: everything but the counts.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "n_samples": self.counts.n_samples,
            "n_steps": self.counts.n_steps,
            "seed": self.counts.seed,
            "rng": "chacha8 (stream = block index)",
            "block_size": self.counts.block_size,
            "measure": self.counts.measure,
            "exact_tent_bits": self.counts.exact_tent_bits,
            "fit": self.fit,
        })
    }
}

pub fn monte_carlo_escape(
    map: &IntervalMap,
    hole: &Hole,
    measure: InitialMeasure,
    n_samples: usize,
    n_steps: usize,
    seed: u64,
) -> Result<SurvivalSeries> {
    let counts = simulate_survival(map, hole, measure, n_samples, n_steps, seed)?;
    let fit = fit_decay(&counts.counts)?;
    Ok(SurvivalSeries { counts, fit })
}
