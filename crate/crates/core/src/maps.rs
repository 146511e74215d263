use crate::error::{check_unit, Error, Result};
use crate::scalar::Field;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Increasing,
    Decreasing,
}

#[derive(Clone)]
pub struct Branch {
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub orientation: Orientation,
    forward: Eval,
    derivative: Eval,
    inverse: Option<Eval>,
}

impl fmt::Debug for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Branch")
            .field("domain", &(self.domain_lo, self.domain_hi))
            .field("orientation", &self.orientation)
            .field("closed_form_inverse", &self.inverse.is_some())
            .finish()
    }
}

impl Branch {
    pub fn new(domain_lo: f64, domain_hi: f64, orientation: Orientation, forward: Eval, derivative: Eval) -> Self {
        Branch { domain_lo, domain_hi, orientation, forward, derivative, inverse: None }
    }

    pub fn with_inverse(mut self, inverse: Eval) -> Self {
        self.inverse = Some(inverse);
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.forward)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    /// Image interval as (lo, hi).
    pub fn image(&self) -> (f64, f64) {
        let a = self.eval(self.domain_lo);
        let b = self.eval(self.domain_hi);
        (a.min(b), a.max(b))
    }

    pub fn contains_value(&self, y: f64) -> bool {
        let (lo, hi) = self.image();
        y >= lo - 1e-15 && y <= hi + 1e-15
    }

    /// Preimage of `y` in this branch, clamped to the branch domain.
    pub fn invert(&self, y: f64) -> f64 {
        let x = match &self.inverse {
            Some(inv) => inv(y),
            None => self.bisect(y),
        };
        x.clamp(self.domain_lo, self.domain_hi)
    }

    fn bisect(&self, y: f64) -> f64 {
        let (mut a, mut b) = (self.domain_lo, self.domain_hi);
        let inc = self.orientation == Orientation::Increasing;
        while b - a > 1e-15 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if (self.eval(m) < y) == inc {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub point: f64,
    pub order: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSpec {
    Logistic4,
    Tent2,
    PiecewiseLinear {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        left_values: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum MapKind {
    Logistic4,
    Tent2,
    PiecewiseLinear { breakpoints: Vec<f64>, slopes: Vec<f64>, left_values: Vec<f64> },
    Custom { name: String },
}

#[derive(Clone, Debug)]
pub struct IntervalMap {
    kind: MapKind,
    branches: Vec<Branch>,
    crit: Vec<CriticalPoint>,
}

fn ev(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Eval {
    Arc::new(f)
}

impl IntervalMap {
    pub fn logistic4() -> Self {
        // (1 - sqrt(1 - y)) / 2 written without cancellation near y = 0.
        let small = |y: f64| y / (2.0 * (1.0 + (1.0 - y).max(0.0).sqrt()));
        let left = Branch::new(0.0, 0.5, Orientation::Increasing, ev(|x| 4.0 * x * (1.0 - x)), ev(|x| 4.0 - 8.0 * x))
            .with_inverse(ev(small));
        let right = Branch::new(0.5, 1.0, Orientation::Decreasing, ev(|x| 4.0 * x * (1.0 - x)), ev(|x| 4.0 - 8.0 * x))
            .with_inverse(ev(move |y| 1.0 - small(y)));
        IntervalMap {
            kind: MapKind::Logistic4,
            branches: vec![left, right],
            crit: vec![CriticalPoint { point: 0.5, order: 2 }],
        }
    }

    pub fn tent2() -> Self {
        let left =
            Branch::new(0.0, 0.5, Orientation::Increasing, ev(|x| 2.0 * x), ev(|_| 2.0)).with_inverse(ev(|y| 0.5 * y));
        let right = Branch::new(0.5, 1.0, Orientation::Decreasing, ev(|x| 2.0 * (1.0 - x)), ev(|_| -2.0))
            .with_inverse(ev(|y| 1.0 - 0.5 * y));
        IntervalMap {
            kind: MapKind::Tent2,
            branches: vec![left, right],
            crit: vec![CriticalPoint { point: 0.5, order: 1 }],
        }
    }

    /// Branch `i` maps [b_i, b_{i+1}] affinely with slope `s_i` and value
    /// `v_i` at b_i. Without explicit values each branch starts at 0
    /// (increasing) or 1 (decreasing).
    pub fn piecewise_linear(breakpoints: Vec<f64>, slopes: Vec<f64>, left_values: Option<Vec<f64>>) -> Result<Self> {
        let k = slopes.len();
        if k == 0 || breakpoints.len() != k + 1 {
            return Err(Error::Config(format!(
                "piecewise_linear needs {} breakpoints for {} slopes, got {}",
                k + 1,
                k,
                breakpoints.len()
            )));
        }
        if breakpoints[0] != 0.0 || breakpoints[k] != 1.0 || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("breakpoints must increase strictly from 0 to 1".into()));
        }
        if slopes.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            return Err(Error::Config("slopes must be finite and nonzero".into()));
        }
        let values = match left_values {
            Some(v) if v.len() == k => v,
            Some(v) => {
                return Err(Error::Config(format!("left_values has length {}, expected {k}", v.len())));
            }
            None => slopes.iter().map(|&s| if s > 0.0 { 0.0 } else { 1.0 }).collect(),
        };
        let mut branches = Vec::with_capacity(k);
        for i in 0..k {
            let (b, s, v) = (breakpoints[i], slopes[i], values[i]);
            let end = v + s * (breakpoints[i + 1] - b);
            for y in [v, end] {
                if !(-1e-12..=1.0 + 1e-12).contains(&y) {
                    return Err(Error::Config(format!("branch {i} leaves [0, 1] (value {y})")));
                }
            }
            let orientation = if s > 0.0 { Orientation::Increasing } else { Orientation::Decreasing };
            branches.push(
                Branch::new(breakpoints[i], breakpoints[i + 1], orientation, ev(move |x| (v + s * (x - b)).clamp(0.0, 1.0)), ev(move |_| s))
                    .with_inverse(ev(move |y| b + (y - v) / s)),
            );
        }
        let mut crit = Vec::new();
        for i in 1..k {
            let continuous = (branches[i - 1].eval(breakpoints[i]) - values[i]).abs() < 1e-12;
            if continuous && (slopes[i - 1] > 0.0) != (slopes[i] > 0.0) {
                crit.push(CriticalPoint { point: breakpoints[i], order: 1 });
            }
        }
        Ok(IntervalMap { kind: MapKind::PiecewiseLinear { breakpoints, slopes, left_values: values }, branches, crit })
    }

    /// User-supplied branches. The derivative is cross-checked against
    /// central differences and each inverse against the forward map.
    pub fn custom(name: &str, branches: Vec<Branch>, crit: Vec<CriticalPoint>) -> Result<Self> {
        if branches.is_empty() || branches[0].domain_lo != 0.0 || branches.last().unwrap().domain_hi != 1.0 {
            return Err(Error::Config("custom branches must cover [0, 1]".into()));
        }
        if branches.windows(2).any(|w| w[0].domain_hi != w[1].domain_lo) || branches.iter().any(|b| b.domain_hi <= b.domain_lo) {
            return Err(Error::Config("custom branch domains must be consecutive and nonempty".into()));
        }
        let boundaries: Vec<f64> = branches.iter().skip(1).map(|b| b.domain_lo).collect();
        for c in &crit {
            if !boundaries.iter().any(|&b| (b - c.point).abs() < 1e-12) {
                return Err(Error::Config(format!("critical point {} is not a branch boundary", c.point)));
            }
        }
        let h = 1e-6;
        for (bi, b) in branches.iter().enumerate() {
            let w = b.domain_hi - b.domain_lo;
            let mut prev: Option<f64> = None;
            for k in 0..100 {
                let x = b.domain_lo + w * (k as f64 + 0.5) / 100.0;
                let y = b.eval(x);
                if !(0.0..=1.0).contains(&y) {
                    return Err(Error::Config(format!("branch {bi} maps {x} to {y}")));
                }
                if let Some(p) = prev {
                    let ok = match b.orientation {
                        Orientation::Increasing => y > p,
                        Orientation::Decreasing => y < p,
                    };
                    if !ok {
                        return Err(Error::Config(format!("branch {bi} is not strictly monotone near {x}")));
                    }
                }
                prev = Some(y);
                let (lo, hi) = ((x - h).max(b.domain_lo), (x + h).min(b.domain_hi));
                let fd = (b.eval(hi) - b.eval(lo)) / (hi - lo);
                let d = b.deriv(x);
                if (fd - d).abs() > 1e-6 * d.abs().max(1.0) {
                    return Err(Error::Config(format!(
                        "branch {bi}: supplied derivative {d} disagrees with finite difference {fd} at {x}"
                    )));
                }
                let back = b.invert(y);
                if (back - x).abs() > 1e-12_f64.max(1e-9 * w) {
                    return Err(Error::Config(format!("branch {bi}: inverse returns {back} for x = {x}")));
                }
            }
        }
        Ok(IntervalMap { kind: MapKind::Custom { name: name.to_string() }, branches, crit })
    }

    pub fn from_spec(spec: &MapSpec) -> Result<Self> {
        match spec {
            MapSpec::Logistic4 => Ok(Self::logistic4()),
            MapSpec::Tent2 => Ok(Self::tent2()),
            MapSpec::PiecewiseLinear { breakpoints, slopes, left_values } => {
                Self::piecewise_linear(breakpoints.clone(), slopes.clone(), left_values.clone())
            }
        }
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn tag(&self) -> String {
        match &self.kind {
            MapKind::Logistic4 => "logistic4".into(),
            MapKind::Tent2 => "tent2".into(),
            MapKind::PiecewiseLinear { .. } => "piecewise_linear".into(),
            MapKind::Custom { name } => format!("custom:{name}"),
        }
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, i: usize) -> &Branch {
        &self.branches[i]
    }

    pub fn crit(&self) -> &[CriticalPoint] {
        &self.crit
    }

    /// Interior branch boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.branches.iter().skip(1).map(|b| b.domain_lo).collect()
    }

    /// Constant slopes per branch for piecewise-linear kinds.
    pub fn pl_slopes(&self) -> Option<Vec<f64>> {
        match &self.kind {
            MapKind::Tent2 => Some(vec![2.0, -2.0]),
            MapKind::PiecewiseLinear { slopes, .. } => Some(slopes.clone()),
            _ => None,
        }
    }

    pub fn is_full_branch(&self) -> bool {
        self.branches.iter().all(|b| {
            let (lo, hi) = b.image();
            lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12
        })
    }

    /// Branch holding `x`; shared endpoints go to the left branch.
    pub fn branch_index(&self, x: f64) -> usize {
        self.branches.iter().position(|b| x <= b.domain_hi).unwrap_or(self.branches.len() - 1)
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        check_unit("x", x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        self.branches[self.branch_index(x)].eval(x).clamp(0.0, 1.0)
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        check_unit("x", x)?;
        let i = self.branch_index(x);
        if let Some(slopes) = self.pl_slopes() {
            if i + 1 < self.branches.len() && x == self.branches[i].domain_hi && slopes[i] != slopes[i + 1] {
                return Err(Error::Kink { x, left: slopes[i], right: slopes[i + 1] });
            }
        }
        Ok(self.branches[i].deriv(x))
    }

    /// |Df(x)|, taking the left one-sided value at kinks.
    pub fn abs_derivative(&self, x: f64) -> f64 {
        self.branches[self.branch_index(x)].deriv(x).abs()
    }

    pub fn preimages(&self, y: f64) -> Result<Vec<f64>> {
        check_unit("y", y)?;
        let mut out: Vec<f64> =
            self.branches.iter().filter(|b| b.contains_value(y)).map(|b| b.invert(y)).collect();
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        Ok(out)
    }

    pub fn orbit(&self, x: f64, n: usize) -> Result<Vec<f64>> {
        check_unit("x", x)?;
        let mut out = Vec::with_capacity(n + 1);
        let mut y = x;
        out.push(y);
        for _ in 0..n {
            y = self.eval_unchecked(y);
            out.push(y);
        }
        Ok(out)
    }

    pub fn iterate(&self, x: f64, n: usize) -> f64 {
        (0..n).fold(x, |y, _| self.eval_unchecked(y))
    }

    /// Smallest p with |f^p(z) - z| < tol, confirmed by a Newton step on
    /// f^p(x) - x landing within 10·tol of z.
    pub fn detect_period(&self, z: f64, p_max: usize, tol: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&z) {
            return None;
        }
        let mut y = z;
        for p in 1..=p_max {
            y = self.eval_unchecked(y);
            if (y - z).abs() >= tol {
                continue;
            }
            let mut d = 1.0;
            let mut w = z;
            for _ in 0..p {
                d *= self.branches[self.branch_index(w)].deriv(w);
                w = self.eval_unchecked(w);
            }
            let denom = d - 1.0;
            if denom.abs() < 1e-12 || !denom.is_finite() {
                return Some(p);
            }
            let x1 = (z - (y - z) / denom).clamp(0.0, 1.0);
            let r = self.iterate(x1, p) - x1;
            if (x1 - z).abs() <= 10.0 * tol && r.abs() <= 10.0 * tol {
                return Some(p);
            }
        }
        None
    }

    /// Hull of f([a, b]), using branch endpoints inside the interval.
    pub fn image_hull(&self, a: f64, b: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for br in &self.branches {
            let l = a.max(br.domain_lo);
            let r = b.min(br.domain_hi);
            if l > r {
                continue;
            }
            for x in [l, r] {
                let y = br.eval(x).clamp(0.0, 1.0);
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        (lo, hi)
    }

    /// Exact forward evaluation for polynomial and piecewise-linear kinds.
    pub fn eval_exact<T: Field>(&self, x: &T) -> Option<T> {
        let one = T::one();
        let two = one.clone() + one.clone();
        match &self.kind {
            MapKind::Logistic4 => Some((two.clone() * two) * x.clone() * (one - x.clone())),
            MapKind::Tent2 => {
                let half = T::from_f64(0.5)?;
                if *x <= half {
                    Some(two * x.clone())
                } else {
                    Some(two * (one - x.clone()))
                }
            }
            MapKind::PiecewiseLinear { breakpoints, slopes, left_values } => {
                let k = slopes.len();
                let mut i = k - 1;
                for j in 0..k {
                    if *x <= T::from_f64(breakpoints[j + 1])? {
                        i = j;
                        break;
                    }
                }
                let b = T::from_f64(breakpoints[i])?;
                Some(T::from_f64(left_values[i])? + T::from_f64(slopes[i])? * (x.clone() - b))
            }
            MapKind::Custom { .. } => None,
        }
    }
}

/// Tent map T and logistic map f with f∘g = g∘T, g(x) = sin²(πx/2).
#[derive(Clone, Debug)]
pub struct ConjugacyPair {
    pub source: IntervalMap,
    pub target: IntervalMap,
}

impl ConjugacyPair {
    pub fn forward(&self, x: f64) -> f64 {
        conjugacy_g(x)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        conjugacy_g_inv(y)
    }

    /// Tent-side radius of the preimage of the logistic hole [0, eps).
    pub fn hole_radius(&self, eps: f64) -> f64 {
        conjugacy_g_inv(eps)
    }

    /// max |f(g(x)) - g(T(x))| over a uniform grid of `samples` points.
    pub fn max_defect(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|k| {
                let x = (k as f64 + 0.5) / samples as f64;
                let lhs = self.target.eval_unchecked(self.forward(x));
                let rhs = self.forward(self.source.eval_unchecked(x));
                (lhs - rhs).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn conjugacy_g(x: f64) -> f64 {
    (0.5 * PI * x).sin().powi(2)
}

pub fn conjugacy_g_inv(y: f64) -> f64 {
    2.0 / PI * y.clamp(0.0, 1.0).sqrt().asin()
}

pub fn conjugacy_logistic_tent() -> ConjugacyPair {
    ConjugacyPair { source: IntervalMap::tent2(), target: IntervalMap::logistic4() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        let f = IntervalMap::logistic4();
        let t = IntervalMap::tent2();
        assert_eq!(f.evaluate(0.5).unwrap(), 1.0);
        assert_eq!(t.evaluate(0.5).unwrap(), 1.0);
        assert_eq!(f.evaluate(0.75).unwrap(), 0.75);
        assert!(matches!(f.evaluate(1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn derivative_examples() {
        let f = IntervalMap::logistic4();
        let t = IntervalMap::tent2();
        assert_eq!(f.derivative(0.0).unwrap(), 4.0);
        assert_eq!(f.derivative(0.75).unwrap(), -2.0);
        assert_eq!(f.derivative(0.5).unwrap(), 0.0);
        assert_eq!(t.derivative(0.25).unwrap(), 2.0);
        match t.derivative(0.5) {
            Err(Error::Kink { left, right, .. }) => assert_eq!((left, right), (2.0, -2.0)),
            other => panic!("expected kink, got {other:?}"),
        }
    }

    #[test]
    fn preimage_examples() {
        let f = IntervalMap::logistic4();
        let t = IntervalMap::tent2();
        let p = f.preimages(0.75).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert_eq!(t.preimages(1.0).unwrap(), vec![0.5]);
        assert_eq!(t.preimages(0.5).unwrap(), vec![0.25, 0.75]);
        assert_eq!(f.preimages(1.0).unwrap(), vec![0.5]);
    }

    #[test]
    fn orbit_examples() {
        let f = IntervalMap::logistic4();
        let t = IntervalMap::tent2();
        assert_eq!(f.orbit(0.5, 3).unwrap(), vec![0.5, 1.0, 0.0, 0.0]);
        let o = t.orbit(0.4, 2).unwrap();
        assert!((o[1] - 0.8).abs() < 1e-15 && (o[2] - 0.4).abs() < 1e-15);
        assert_eq!(t.orbit(0.3, 0).unwrap(), vec![0.3]);
    }

    #[test]
    fn period_detection() {
        let t = IntervalMap::tent2();
        let f = IntervalMap::logistic4();
        assert_eq!(t.detect_period(2.0 / 3.0, 20, 1e-9), Some(1));
        assert_eq!(t.detect_period(0.4, 20, 1e-9), Some(2));
        assert_eq!(f.detect_period(0.75, 20, 1e-9), Some(1));
        assert_eq!(f.detect_period(0.123_456_789_1, 20, 1e-9), None);
        assert_eq!(f.detect_period(1.0, 20, 1e-9), None);
    }

    #[test]
    fn conjugacy_examples() {
        let c = conjugacy_logistic_tent();
        assert!((c.forward(0.5) - 0.5).abs() < 1e-15);
        assert!((c.forward(2.0 / 3.0) - 0.75).abs() < 1e-15);
        let eps: f64 = 1.0 / 64.0;
        assert!((c.hole_radius(eps) - 2.0 / PI * eps.sqrt().asin()).abs() < 1e-16);
        assert!(c.max_defect(10_000) < 1e-12);
    }

    #[test]
    fn pl_kind_validation() {
        assert!(IntervalMap::piecewise_linear(vec![0.0, 0.5, 1.0], vec![2.0], None).is_err());
        assert!(IntervalMap::piecewise_linear(vec![0.0, 0.5, 1.0], vec![3.0, -2.0], None).is_err());
        let m = IntervalMap::piecewise_linear(vec![0.0, 0.25, 1.0], vec![4.0, -4.0 / 3.0], None).unwrap();
        assert!(m.is_full_branch());
        assert_eq!(m.crit().len(), 1);
        let doubling = IntervalMap::piecewise_linear(vec![0.0, 0.5, 1.0], vec![2.0, 2.0], None).unwrap();
        assert!(doubling.crit().is_empty());
    }

    #[test]
    fn custom_rejects_wrong_derivative() {
        let good = Branch::new(0.0, 1.0, Orientation::Increasing, ev(|x| x * x), ev(|x| 2.0 * x));
        assert!(IntervalMap::custom("sq", vec![good], vec![]).is_ok());
        let bad = Branch::new(0.0, 1.0, Orientation::Increasing, ev(|x| x * x), ev(|x| 2.1 * x));
        assert!(matches!(IntervalMap::custom("sq", vec![bad], vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn exact_evaluation_matches_float() {
        use num_rational::Ratio;
        let t = IntervalMap::tent2();
        let x = Ratio::<i128>::new(5, 12);
        assert_eq!(t.eval_exact(&x), Some(Ratio::new(5, 6)));
        let f = IntervalMap::logistic4();
        assert_eq!(f.eval_exact(&Ratio::<i128>::new(3, 4)), Some(Ratio::new(3, 4)));
    }
}
