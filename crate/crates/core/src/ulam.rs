use crate::error::{Error, Result};
use crate::linalg::{fixed_sum, leading_eigenpair, CsrMatrix, EigenOptions};
use crate::maps::IntervalMap;
use crate::openmap::{Hole, HoleInterval};
use crate::potentials::Potential;
use crate::quadrature;
use crate::stats::{linear_fit, LinearFit};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub const MAX_SNAP_MULTIPLIER: usize = 64;

/// Weighted Ulam matrix on a uniform grid. `W[i][j]` is the weight carried
/// from source bin `j` into target bin `i`.
#[derive(Clone, Debug)]
pub struct UlamOperator {
    n: usize,
    matrix: CsrMatrix<f64>,
    hole_mask: Vec<bool>,
    punctured: bool,
    potential_tag: String,
    map_tag: String,
    hole: Option<Hole>,
}

impl UlamOperator {
    /// Requires a normalized (and, for Hölder potentials, admissible) potential.
    pub fn build(map: &IntervalMap, pot: &Potential, n: usize) -> Result<Self> {
        if !pot.is_normalized() {
            return Err(Error::Config("build_ulam needs a normalized potential".into()));
        }
        pot.ensure_admissible(map)?;
        Self::assemble(map, pot, n)
    }

    /// Galerkin projection W[i][j] = N·∫_{B_j ∩ f⁻¹B_i} e^{φ}|Df| dy for any
    /// potential, normalized or not.
    pub fn assemble(map: &IntervalMap, pot: &Potential, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {n}")));
        }
        let nf = n as f64;
        let columns: Vec<Vec<(usize, usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|j| assemble_column(map, pot, n, j))
            .collect::<Result<_>>()?;
        let _ = nf;
        let triplets = columns.into_iter().flatten().collect();
        Ok(UlamOperator {
            n,
            matrix: CsrMatrix::from_triplets(n, n, triplets),
            hole_mask: vec![false; n],
            punctured: false,
            potential_tag: pot.tag(),
            map_tag: map.tag(),
            hole: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n).map(|k| k as f64 / self.n as f64).collect()
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn hole_mask(&self) -> &[bool] {
        &self.hole_mask
    }

    pub fn is_punctured(&self) -> bool {
        self.punctured
    }

    pub fn hole(&self) -> Option<&Hole> {
        self.hole.as_ref()
    }

    pub fn map_tag(&self) -> &str {
        &self.map_tag
    }

    pub fn potential_tag(&self) -> &str {
        &self.potential_tag
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.matrix.column_sums()
    }

    /// Zero the columns of bins inside the hole. Hole endpoints must sit on
    /// bin edges (see [`snap_hole`]).
    pub fn puncture(&self, hole: &Hole) -> Result<Self> {
        let nf = self.n as f64;
        for e in hole.endpoints() {
            let k = (e * nf).round();
            if (e - k / nf).abs() > 1e-12 {
                return Err(Error::Alignment { endpoint: e, n: self.n });
            }
        }
        let mut mask = self.hole_mask.clone();
        for iv in hole.intervals() {
            let a = (iv.lo * nf).round() as usize;
            let b = (iv.hi * nf).round() as usize;
            for m in &mut mask[a..b] {
                *m = true;
            }
        }
        let mut out = self.clone();
        out.matrix = self.matrix.without_columns(&mask);
        out.hole_mask = mask;
        out.punctured = true;
        out.hole = Some(hole.clone());
        Ok(out)
    }

    pub fn leading_eigen(&self, opts: &EigenOptions<f64>) -> Result<SpectralResult> {
        let e = leading_eigenpair(&self.matrix, opts)?;
        let nf = self.n as f64;
        let (right, normalization) = if e.pairing > 1e-12 {
            (e.right.iter().map(|g| g / e.pairing).collect(), Normalization::Conformal)
        } else {
            (e.right.iter().map(|g| g * nf).collect(), Normalization::LebesgueFallback)
        };
        Ok(SpectralResult {
            n: self.n,
            lambda: e.lambda,
            right,
            left: e.left,
            residual: e.residual,
            left_residual: e.left_residual,
            iterations: e.iterations,
            classes: e.classes,
            basic_classes: e.basic_classes,
            normalization,
            hole_mask: self.hole_mask.clone(),
        })
    }

    pub fn header_json(&self) -> serde_json::Value {
        let (z, eps) = self.hole.as_ref().and_then(Hole::center).map_or((None, None), |(z, e)| (Some(z), Some(e)));
        serde_json::json!({
            "n": self.n,
            "map": self.map_tag,
            "potential": self.potential_tag,
            "punctured": self.punctured,
            "hole": self.hole,
            "z": z,
            "snapped_eps": eps,
            "nnz": self.matrix.nnz(),
        })
    }

    /// Triplet export: one `# {json header}` line, then `i,j,weight` rows.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# {}", self.header_json())?;
        writeln!(f, "i,j,weight")?;
        for (i, j, w) in self.matrix.triplets() {
            writeln!(f, "{i},{j},{w:e}")?;
        }
        Ok(())
    }
}

fn assemble_column(map: &IntervalMap, pot: &Potential, n: usize, j: usize) -> Result<Vec<(usize, usize, f64)>> {
    let nf = n as f64;
    let (x0, x1) = (j as f64 / nf, (j + 1) as f64 / nf);
    let mut out = Vec::new();
    for (bi, br) in map.branches().iter().enumerate() {
        let a = x0.max(br.domain_lo);
        let c = x1.min(br.domain_hi);
        if c <= a {
            continue;
        }
        let cw = pot.constant_weight(map, bi);
        let (fa, fc) = (br.eval(a).clamp(0.0, 1.0), br.eval(c).clamp(0.0, 1.0));
        let (ylo, yhi) = (fa.min(fc), fa.max(fc));
        let i0 = ((ylo * nf).floor() as usize).min(n - 1);
        let i1 = ((yhi * nf).ceil() as usize).clamp(i0 + 1, n);
        for i in i0..i1 {
            let l = ylo.max(i as f64 / nf);
            let r = yhi.min((i + 1) as f64 / nf);
            if r <= l {
                continue;
            }
            let (p, q) = (br.invert(l).clamp(a, c), br.invert(r).clamp(a, c));
            let (p, q) = (p.min(q), p.max(q));
            if q <= p {
                continue;
            }
            let w = match cw {
                Some(w) => w * (q - p),
                None => {
                    let f = |y: f64| pot.jacobian_weight(br, y);
                    quadrature::integrate(&f, p, q, 1e-10, 1e-16 / nf, 20)
                        .ok_or(Error::Quadrature { lo: p, hi: q, depth: 20 })?
                }
            };
            if w > 0.0 {
                out.push((i, j, w * nf));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Σ g_j m_j = 1.
    Conformal,
    /// Left and right vectors are orthogonal (reducible survivor chain);
    /// Σ g_j / N = 1 instead.
    LebesgueFallback,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralResult {
    pub n: usize,
    pub lambda: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    pub residual: f64,
    pub left_residual: f64,
    pub iterations: usize,
    pub classes: usize,
    pub basic_classes: usize,
    pub normalization: Normalization,
    pub hole_mask: Vec<bool>,
}

impl SpectralResult {
    pub fn rate(&self) -> f64 {
        -self.lambda.ln()
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "lambda": self.lambda,
            "rate": self.rate(),
            "residual": self.residual,
            "left_residual": self.left_residual,
            "iterations": self.iterations,
            "classes": self.classes,
            "basic_classes": self.basic_classes,
            "normalization": self.normalization,
        })
    }

    /// `bin,lo,hi,g,m` rows.
    pub fn density_csv(&self) -> String {
        let nf = self.n as f64;
        let mut s = String::from("bin,lo,hi,g,m\n");
        for j in 0..self.n {
            s.push_str(&format!("{j},{},{},{:e},{:e}\n", j as f64 / nf, (j + 1) as f64 / nf, self.right[j], self.left[j]));
        }
        s
    }
}

pub fn build_ulam(map: &IntervalMap, pot: &Potential, n: usize) -> Result<UlamOperator> {
    UlamOperator::build(map, pot, n)
}

pub fn puncture(op: &UlamOperator, hole: &Hole) -> Result<UlamOperator> {
    op.puncture(hole)
}

pub fn leading_eigen(op: &UlamOperator, tol: f64, max_iter: usize) -> Result<SpectralResult> {
    op.leading_eigen(&EigenOptions { tol, max_iter })
}

fn snap_with(hole: &Hole, n: usize) -> Hole {
    let nf = n as f64;
    let ivs: Vec<HoleInterval> = hole
        .intervals()
        .iter()
        .map(|iv| HoleInterval { lo: (iv.lo * nf).round() / nf, hi: (iv.hi * nf).round() / nf, ..*iv })
        .filter(|iv| iv.hi > iv.lo)
        .collect();
    let center = hole.center().and_then(|_| match ivs.as_slice() {
        [iv] => Some((0.5 * (iv.lo + iv.hi), 0.5 * (iv.hi - iv.lo))),
        _ => None,
    });
    Hole::from_intervals(ivs).expect("snapping preserves order").with_center(center)
}

/// Align hole endpoints with a grid. Multipliers k = 1..64 of `n` are tried
/// and the first grid holding every endpoint within 1e-9 is used; otherwise
/// endpoints are rounded to the nearest multiple of 1/n.
pub fn snap_hole(hole: &Hole, n: usize) -> (Hole, usize) {
    let ends = hole.endpoints();
    for k in 1..=MAX_SNAP_MULTIPLIER {
        let m = (k * n) as f64;
        if ends.iter().all(|e| (e - (e * m).round() / m).abs() < 1e-9) {
            return (snap_with(hole, k * n), k * n);
        }
    }
    (snap_with(hole, n), n)
}

/// Round endpoints to multiples of 1/n without changing the grid; holes
/// grown around a fixed centre stay nested.
pub fn snap_hole_fixed(hole: &Hole, n: usize) -> Hole {
    snap_with(hole, n)
}

#[derive(Clone, Debug, Serialize)]
pub struct EscapeEstimate {
    pub rate: f64,
    pub lambda: f64,
    pub snapped: Hole,
    pub n: usize,
    pub spectral: SpectralResult,
}

pub fn escape_rate_spectral(
    map: &IntervalMap,
    pot: &Potential,
    hole: &Hole,
    n: usize,
    opts: &EigenOptions<f64>,
) -> Result<EscapeEstimate> {
    let (snapped, n2) = snap_hole(hole, n);
    let op = UlamOperator::build(map, pot, n2)?.puncture(&snapped)?;
    let spectral = op.leading_eigen(opts)?;
    Ok(EscapeEstimate { rate: spectral.rate(), lambda: spectral.lambda, snapped, n: n2, spectral })
}

/// Right vector restricted to the complement of the hole, normalized
/// against the unpunctured left vector `reference`.
pub fn accim_density(result: &SpectralResult, reference: &[f64]) -> Result<Vec<f64>> {
    if !(result.lambda > 0.0) {
        return Err(Error::Degenerate("accim needs λ > 0".into()));
    }
    if reference.len() != result.n {
        return Err(Error::Config("reference measure has the wrong length".into()));
    }
    let mut g: Vec<f64> = result.right.iter().zip(&result.hole_mask).map(|(&g, &h)| if h { 0.0 } else { g }).collect();
    let prod: Vec<f64> = g.iter().zip(reference).map(|(a, b)| a * b).collect();
    let s = fixed_sum(&prod);
    if !(s > 0.0) {
        return Err(Error::Degenerate("accim vanishes off the hole".into()));
    }
    g.iter_mut().for_each(|x| *x /= s);
    Ok(g)
}

#[derive(Clone, Debug, Serialize)]
pub struct Evolution {
    /// L¹(m⁰) distance of the conditioned density to the accim, steps 0..=n.
    pub distances: Vec<f64>,
    #[serde(skip)]
    pub densities: Vec<Vec<f64>>,
    /// exp(slope) of log distance over the second half of the steps before it
    /// first drops to 1e-11.
    pub theta_hat: Option<f64>,
    pub theta_fit: Option<LinearFit>,
}

const DISTANCE_FLOOR: f64 = 1e-11;

fn conditioned(psi: &[f64], mask: &[bool], reference: &[f64]) -> Option<Vec<f64>> {
    let off: Vec<f64> = psi.iter().zip(mask).map(|(&p, &h)| if h { 0.0 } else { p }).collect();
    let prod: Vec<f64> = off.iter().zip(reference).map(|(a, b)| a * b).collect();
    let s = fixed_sum(&prod);
    (s > 0.0).then(|| off.iter().map(|x| x / s).collect())
}

fn l1_distance(a: &[f64], b: &[f64], reference: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).zip(reference).map(|((x, y), m)| (x - y).abs() * m).collect();
    fixed_sum(&d)
}

/// ψ_{k+1} = Wψ_k/‖Wψ_k‖₁, compared with the accim after conditioning on the
/// complement of the hole.
pub fn conditional_evolve(
    op: &UlamOperator,
    psi: &[f64],
    n: usize,
    accim: &[f64],
    reference: &[f64],
) -> Result<Evolution> {
    if psi.len() != op.n() || psi.iter().any(|&p| p < 0.0) {
        return Err(Error::Config("psi must be a nonnegative vector on the grid".into()));
    }
    let mask = op.hole_mask();
    let mut cur = conditioned(psi, mask, reference)
        .ok_or_else(|| Error::Config("psi vanishes off the hole".into()))?;
    let mut distances = vec![l1_distance(&cur, accim, reference)];
    let mut densities = vec![cur.clone()];
    for step in 1..=n {
        let next = op.matrix().mul_vec(&cur);
        let total = fixed_sum(&next);
        if !(total > 0.0) {
            return Err(Error::TotalEscape { step });
        }
        cur = conditioned(&next, mask, reference).ok_or(Error::TotalEscape { step })?;
        distances.push(l1_distance(&cur, accim, reference));
        densities.push(cur.clone());
    }
    // Once the distance reaches the accuracy of `accim` it stops decaying;
    // fit the last half of the steps still above that floor.
    let above: Vec<usize> = (1..distances.len()).take_while(|&k| distances[k] > DISTANCE_FLOOR).collect();
    let window = above[above.len() / 2..].to_vec();
    let theta_fit = if window.len() >= 3 {
        let x: Vec<f64> = window.iter().map(|&k| k as f64).collect();
        let y: Vec<f64> = window.iter().map(|&k| distances[k].ln()).collect();
        linear_fit(&x, &y)
    } else {
        None
    };
    Ok(Evolution { distances, densities, theta_hat: theta_fit.map(|f| f.slope.exp()), theta_fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::normalize;

    fn tent_op(n: usize) -> UlamOperator {
        let t = IntervalMap::tent2();
        let p = normalize(&Potential::geometric(1.0).unwrap(), &t, 1024).unwrap();
        UlamOperator::build(&t, &p, n).unwrap()
    }

    #[test]
    fn four_bin_tent_matrix() {
        let op = tent_op(4);
        let d = op.matrix().to_dense();
        let want = [
            [0.5, 0.0, 0.0, 0.5],
            [0.5, 0.0, 0.0, 0.5],
            [0.0, 0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5, 0.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((d[i][j] - want[i][j]).abs() < 1e-15, "W[{i}][{j}] = {}", d[i][j]);
            }
        }
    }

    #[test]
    fn markov_hole_three_state_reduction() {
        let op = tent_op(4).puncture(&Hole::open(0.25, 0.5).unwrap()).unwrap();
        assert!(op.column_sums()[1] == 0.0);
        let r = op.leading_eigen(&EigenOptions::default()).unwrap();
        assert!((r.lambda - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misaligned_hole_rejected() {
        let err = tent_op(64).puncture(&Hole::open(0.1, 0.5).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Alignment { endpoint, .. } if endpoint == 0.1));
    }

    #[test]
    fn snap_examples() {
        let (h, n) = snap_hole(&Hole::symmetric(0.5, 0.125).unwrap(), 64);
        assert_eq!((h.intervals()[0].lo, h.intervals()[0].hi, n), (0.375, 0.625, 64));
        let (h, n) = snap_hole(&Hole::symmetric(2.0 / 3.0, 0.01).unwrap(), 300);
        assert_eq!(n, 300);
        assert!((h.intervals()[0].lo - 197.0 / 300.0).abs() < 1e-15);
        assert!((h.intervals()[0].hi - 203.0 / 300.0).abs() < 1e-15);
        let (h, n) = snap_hole(&Hole::symmetric(1.0 / 3.0, 1.0 / 7.0).unwrap(), 21);
        assert_eq!(n, 21);
        assert!((h.intervals()[0].lo - 4.0 / 21.0).abs() < 1e-15);
        assert!((h.intervals()[0].hi - 10.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn total_hole_has_zero_eigenvalue() {
        let op = tent_op(64).puncture(&Hole::open(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(op.matrix().nnz(), 0);
        assert_eq!(op.leading_eigen(&EigenOptions::default()).unwrap().lambda, 0.0);
    }

    #[test]
    fn evolve_from_eigenvector_stays_put() {
        let op = tent_op(256);
        let r0 = op.leading_eigen(&EigenOptions::default()).unwrap();
        let p = op.puncture(&Hole::open(0.375, 0.5).unwrap()).unwrap();
        let r = p.leading_eigen(&EigenOptions::default()).unwrap();
        let g = accim_density(&r, &r0.left).unwrap();
        let ev = conditional_evolve(&p, &g, 10, &g, &r0.left).unwrap();
        // Stationary up to the eigen-solver tolerance.
        assert!(ev.distances.iter().all(|&d| d < 1e-10), "{:?}", ev.distances);
    }
}
