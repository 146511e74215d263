use crate::error::{Error, Result};
use crate::linalg::EigenOptions;
use crate::maps::{Branch, Eval, IntervalMap};
use crate::ulam::UlamOperator;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub const T_RANGE: (f64, f64) = (-1.0, 1.5);
pub const DEFAULT_PRESSURE_BINS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Geometric {
        t: f64,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        allow_any_t: bool,
    },
    Holder {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
    },
}

#[derive(Clone)]
pub enum PotentialKind {
    Geometric { t: f64 },
    Holder { name: String, eval: Eval, exponent: f64 },
}

#[derive(Clone)]
pub struct Potential {
    kind: PotentialKind,
    shift: f64,
    base_pressure: Option<f64>,
    normalized: bool,
    spec: Option<PotentialSpec>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("tag", &self.tag())
            .field("shift", &self.shift)
            .field("normalized", &self.normalized)
            .finish()
    }
}

impl Potential {
    pub fn geometric(t: f64) -> Result<Self> {
        if !(T_RANGE.0..=T_RANGE.1).contains(&t) {
            return Err(Error::Config(format!(
                "geometric t = {t} outside [{}, {}]; set allow_any_t to override",
                T_RANGE.0, T_RANGE.1
            )));
        }
        Ok(Self::geometric_any_t(t))
    }

    pub fn geometric_any_t(t: f64) -> Self {
        Potential {
            kind: PotentialKind::Geometric { t },
            shift: 0.0,
            base_pressure: None,
            normalized: false,
            spec: Some(PotentialSpec::Geometric { t, allow_any_t: !(T_RANGE.0..=T_RANGE.1).contains(&t) }),
        }
    }

    pub fn holder(name: &str, eval: Eval, exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::Config(format!("Hölder exponent {exponent} outside (0, 1]")));
        }
        let sup = (0..10_000).map(|k| eval(k as f64 / 9_999.0).abs()).fold(0.0, f64::max);
        if !sup.is_finite() {
            return Err(Error::Config(format!("potential '{name}' is unbounded on [0, 1]")));
        }
        Ok(Potential {
            kind: PotentialKind::Holder { name: name.to_string(), eval, exponent },
            shift: 0.0,
            base_pressure: None,
            normalized: false,
            spec: None,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::catalog("constant", Some(c)).expect("constant potential is always valid")
    }

    /// Built-in Hölder catalog: `constant` (φ ≡ c), `cos2pi` (c·cos 2πx),
    /// `neg_square` (−c·x²). `c` defaults to 0 for the constant, 1 otherwise.
    pub fn catalog(name: &str, c: Option<f64>) -> Result<Self> {
        let (eval, c): (Eval, f64) = match name {
            "constant" => {
                let c = c.unwrap_or(0.0);
                (Arc::new(move |_| c), c)
            }
            "cos2pi" => {
                let c = c.unwrap_or(1.0);
                (Arc::new(move |x: f64| c * (2.0 * PI * x).cos()), c)
            }
            "neg_square" => {
                let c = c.unwrap_or(1.0);
                (Arc::new(move |x: f64| -c * x * x), c)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown potential '{other}' (catalog: constant, cos2pi, neg_square)"
                )))
            }
        };
        let mut p = Self::holder(name, eval, 1.0)?;
        p.spec = Some(PotentialSpec::Holder { name: name.to_string(), c: Some(c) });
        Ok(p)
    }

    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        match spec {
            PotentialSpec::Geometric { t, allow_any_t: false } => Self::geometric(*t),
            PotentialSpec::Geometric { t, allow_any_t: true } => Ok(Self::geometric_any_t(*t)),
            PotentialSpec::Holder { name, c } => Self::catalog(name, *c),
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn spec(&self) -> Option<&PotentialSpec> {
        self.spec.as_ref()
    }

    pub fn geometric_t(&self) -> Option<f64> {
        match self.kind {
            PotentialKind::Geometric { t } => Some(t),
            PotentialKind::Holder { .. } => None,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Amount subtracted from the raw potential.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// P(φ₀) of the raw potential, once known.
    pub fn base_pressure(&self) -> Option<f64> {
        self.base_pressure
    }

    /// Pressure of the potential as it evaluates: zero once normalized.
    pub fn pressure(&self) -> Option<f64> {
        if self.normalized {
            Some(0.0)
        } else {
            self.base_pressure
        }
    }

    pub fn tag(&self) -> String {
        let base = match &self.kind {
            PotentialKind::Geometric { t } => format!("geometric(t={t})"),
            PotentialKind::Holder { name, .. } => match &self.spec {
                Some(PotentialSpec::Holder { c: Some(c), .. }) => format!("holder:{name}(c={c})"),
                _ => format!("holder:{name}"),
            },
        };
        if self.normalized {
            format!("{base} normalized (P = {})", self.base_pressure.unwrap_or(0.0))
        } else {
            base
        }
    }

    /// φ(x); −∞ where Df vanishes for geometric potentials. Kinks of
    /// piecewise-linear maps use the left slope.
    pub fn value(&self, map: &IntervalMap, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Geometric { t } => {
                let d = map.abs_derivative(x);
                if d == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -t * d.ln() - self.shift
                }
            }
            PotentialKind::Holder { eval, .. } => eval(x) - self.shift,
        }
    }

    /// Transfer weight density e^{φ(y)}·|Df(y)| on a branch.
    pub fn jacobian_weight(&self, branch: &Branch, y: f64) -> f64 {
        let d = branch.deriv(y).abs();
        match &self.kind {
            PotentialKind::Geometric { t } => {
                if *t == 1.0 {
                    (-self.shift).exp()
                } else if d == 0.0 {
                    if *t < 1.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    ((1.0 - t) * d.ln() - self.shift).exp()
                }
            }
            PotentialKind::Holder { eval, .. } => (eval(y) - self.shift).exp() * d,
        }
    }

    /// The weight when it is constant along the branch, which makes the
    /// Ulam integrals exact.
    pub fn constant_weight(&self, map: &IntervalMap, branch: usize) -> Option<f64> {
        let b = map.branch(branch);
        let mid = 0.5 * (b.domain_lo + b.domain_hi);
        match &self.kind {
            PotentialKind::Geometric { t } if *t == 1.0 => Some((-self.shift).exp()),
            PotentialKind::Geometric { .. } if map.pl_slopes().is_some() => Some(self.jacobian_weight(b, mid)),
            PotentialKind::Holder { name, .. } if name == "constant" && map.pl_slopes().is_some() => {
                Some(self.jacobian_weight(b, mid))
            }
            _ => None,
        }
    }

    /// sup φ on a uniform grid.
    pub fn sup_on_grid(&self, map: &IntervalMap, samples: usize) -> f64 {
        (0..samples).map(|k| self.value(map, k as f64 / (samples - 1) as f64)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Hölder potentials used downstream must satisfy sup φ < 0 after normalisation.
    pub fn ensure_admissible(&self, map: &IntervalMap) -> Result<()> {
        if let PotentialKind::Holder { name, .. } = &self.kind {
            let sup = self.sup_on_grid(map, 10_000);
            if !(sup < 0.0) {
                return Err(Error::Config(format!(
                    "Hölder potential '{name}' is not admissible: sup φ = {sup} ≥ 0 after normalisation"
                )));
            }
        }
        Ok(())
    }

    fn shifted(&self, p: f64) -> Self {
        let mut out = self.clone();
        out.shift = self.shift + p;
        out.base_pressure = Some(p);
        out.normalized = true;
        out
    }
}

/// S_nφ(x) = Σ_{i<n} φ(f^i x); −∞ as soon as a term is.
pub fn birkhoff_sum(pot: &Potential, map: &IntervalMap, x: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("birkhoff_sum needs n ≥ 1".into()));
    }
    crate::error::check_unit("x", x)?;
    let mut s = 0.0;
    let mut y = x;
    for i in 0..n {
        let v = pot.value(map, y);
        if v == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        s += v;
        if i + 1 < n {
            y = map.eval_unchecked(y);
        }
    }
    Ok(s)
}

/// log Σ |s_i|^{−t} for piecewise-linear maps with full branches.
pub fn pressure_pl_full_branch(map: &IntervalMap, t: f64) -> Result<f64> {
    let slopes = map
        .pl_slopes()
        .ok_or_else(|| Error::Unsupported(format!("{} is not piecewise linear", map.tag())))?;
    if !map.is_full_branch() {
        return Err(Error::Unsupported(format!("{} has a branch that is not onto [0, 1]", map.tag())));
    }
    Ok(slopes.iter().map(|s| s.abs().powf(-t)).sum::<f64>().ln())
}

/// log of the leading eigenvalue of the unpunctured Ulam operator built from
/// the raw potential.
pub fn pressure_numeric(map: &IntervalMap, pot: &Potential, n: usize) -> Result<f64> {
    if n < 64 || !n.is_power_of_two() {
        return Err(Error::Config(format!("pressure grid N = {n} must be a power of two ≥ 64")));
    }
    let op = UlamOperator::assemble(map, pot, n)?;
    let res = op.leading_eigen(&EigenOptions { tol: 1e-12, max_iter: 100_000 })?;
    Ok(res.lambda.ln() + pot.shift)
}

pub fn normalize(pot: &Potential, map: &IntervalMap, n: usize) -> Result<Potential> {
    if pot.normalized {
        return Ok(pot.clone());
    }
    let analytic = match pot.kind {
        PotentialKind::Geometric { t } => pressure_pl_full_branch(map, t).ok(),
        PotentialKind::Holder { .. } => None,
    };
    let p = match analytic {
        Some(p) => p,
        None => pressure_numeric(map, pot, n)?,
    };
    Ok(pot.shifted(p))
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingExponent {
    pub t: f64,
    pub pressure: f64,
    pub lyapunov: f64,
    pub s_t: f64,
}

/// s_t = t + p_t/λ(μ_t), with λ(μ_t) the μ_t-average of log|Df| taken from
/// the Ulam equilibrium density. Diagnostic only.
pub fn local_scaling_exponent(map: &IntervalMap, t: f64, n: usize) -> Result<ScalingExponent> {
    let pot = normalize(&Potential::geometric(t)?, map, n)?;
    let op = UlamOperator::build(map, &pot, n)?;
    let res = op.leading_eigen(&EigenOptions::default())?;
    let mut lyap = 0.0;
    let mut mass = 0.0;
    for j in 0..n {
        let w = res.right[j] * res.left[j];
        let mid = (j as f64 + 0.5) / n as f64;
        lyap += w * map.abs_derivative(mid).ln();
        mass += w;
    }
    let lyapunov = lyap / mass;
    let pressure = pot.base_pressure().unwrap_or(0.0);
    Ok(ScalingExponent { t, pressure, lyapunov, s_t: t + pressure / lyapunov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn birkhoff_examples() {
        let t = IntervalMap::tent2();
        let f = IntervalMap::logistic4();
        let g = normalize(&Potential::geometric(1.0).unwrap(), &t, 1024).unwrap();
        assert!((birkhoff_sum(&g, &t, 2.0 / 3.0, 1).unwrap() + LN_2).abs() < 1e-15);
        let g1 = Potential::geometric(1.0).unwrap();
        assert!((birkhoff_sum(&g1, &f, 0.75, 1).unwrap() + LN_2).abs() < 1e-15);
        assert!((birkhoff_sum(&g1, &f, 0.25, 3).unwrap() + 3.0 * LN_2).abs() < 1e-14);
        assert_eq!(birkhoff_sum(&g1, &f, 0.5, 3).unwrap(), f64::NEG_INFINITY);
        let c = Potential::constant(0.3);
        assert_eq!(birkhoff_sum(&c, &f, 0.1, 1).unwrap(), 0.3);
    }

    #[test]
    fn analytic_pressure() {
        let t = IntervalMap::tent2();
        assert!(pressure_pl_full_branch(&t, 1.0).unwrap().abs() < 1e-15);
        assert!((pressure_pl_full_branch(&t, 0.0).unwrap() - LN_2).abs() < 1e-15);
        assert!((pressure_pl_full_branch(&t, 2.0).unwrap() + LN_2).abs() < 1e-15);
        assert!(matches!(pressure_pl_full_branch(&IntervalMap::logistic4(), 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn numeric_pressure_examples() {
        let t = IntervalMap::tent2();
        let f = IntervalMap::logistic4();
        let g1 = Potential::geometric(1.0).unwrap();
        assert!(pressure_numeric(&t, &g1, 1024).unwrap().abs() < 1e-8);
        assert!(pressure_numeric(&f, &g1, 4096).unwrap().abs() < 1e-3);
        for c in [-1.0, 0.0, 0.7] {
            let p = pressure_numeric(&t, &Potential::constant(c), 256).unwrap();
            assert!((p - (c + LN_2)).abs() < 1e-10, "c = {c}: {p}");
        }
        assert!(matches!(pressure_numeric(&t, &g1, 100), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_examples() {
        let t = IntervalMap::tent2();
        let g = normalize(&Potential::geometric(1.0).unwrap(), &t, 1024).unwrap();
        assert_eq!(g.value(&t, 0.3), -LN_2);
        assert_eq!(g.pressure(), Some(0.0));
        let c = normalize(&Potential::constant(1.0), &t, 256).unwrap();
        assert!((c.value(&t, 0.9) + LN_2).abs() < 1e-10);
        c.ensure_admissible(&t).unwrap();
        let g2 = normalize(&Potential::geometric_any_t(2.0), &t, 1024).unwrap();
        assert!((g2.value(&t, 0.1) - (-2.0 * LN_2 + LN_2)).abs() < 1e-15);
    }

    #[test]
    fn t_guard_and_catalog() {
        assert!(matches!(Potential::geometric(2.0), Err(Error::Config(_))));
        assert!(Potential::from_spec(&PotentialSpec::Geometric { t: 2.0, allow_any_t: true }).is_ok());
        assert!(matches!(Potential::catalog("nope", None), Err(Error::Config(_))));
        let p = Potential::catalog("neg_square", None).unwrap();
        assert_eq!(p.value(&IntervalMap::tent2(), 0.5), -0.25);
    }

    #[test]
    fn inadmissible_holder_rejected() {
        let t = IntervalMap::tent2();
        // A tall bump away from low-period orbits: sup exceeds the pressure.
        let bump: Eval = Arc::new(|x: f64| 5.0 * (-((x - 0.3) / 0.01).powi(2)).exp());
        let p = normalize(&Potential::holder("bump", bump, 1.0).unwrap(), &t, 1024).unwrap();
        assert!(matches!(p.ensure_admissible(&t), Err(Error::Config(_))));
        let c = normalize(&Potential::catalog("cos2pi", Some(2.0)).unwrap(), &t, 1024).unwrap();
        c.ensure_admissible(&t).unwrap();
    }

    #[test]
    fn geometric_is_minus_infinity_at_smooth_critical_point() {
        let f = IntervalMap::logistic4();
        assert_eq!(Potential::geometric(0.5).unwrap().value(&f, 0.5), f64::NEG_INFINITY);
    }
}
