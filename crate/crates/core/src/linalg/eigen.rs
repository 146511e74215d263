//! Leading eigenpair of a nonnegative sparse matrix.
//!
//! Power iteration alone stalls on reducible matrices whose irreducible
//! classes share the spectral radius (Jordan blocks) and on periodic classes.
//! The matrix is split into strongly connected classes; each class gets its
//! own power iteration (with a shift fallback for periodic classes), and the
//! global vectors are grown from the extremal basic classes.

use super::sparse::{fixed_sum, CsrMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use petgraph::algo::kosaraju_scc;
use petgraph::graph::{DiGraph, NodeIndex};

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl Default for EigenOptions<f64> {
    fn default() -> Self {
        EigenOptions { tol: 1e-10, max_iter: 100_000 }
    }
}

/// `right` has unit L1 norm, `left` sums to one; `pairing` is their inner product.
#[derive(Clone, Debug)]
pub struct Eigenpair<T> {
    pub lambda: T,
    pub right: Vec<T>,
    pub left: Vec<T>,
    pub pairing: T,
    pub residual: T,
    pub left_residual: T,
    pub iterations: usize,
    pub classes: usize,
    pub basic_classes: usize,
}

fn l1<T: Scalar>(v: &[T]) -> T {
    let a: Vec<T> = v.iter().map(|x| x.abs()).collect();
    fixed_sum(&a)
}

fn residual<T: Scalar>(a: &CsrMatrix<T>, v: &[T], lambda: T) -> T {
    let av = a.mul_vec(v);
    let d: Vec<T> = av.iter().zip(v).map(|(x, y)| (*x - lambda * *y).abs()).collect();
    let n = l1(v);
    if n == T::zero() {
        T::zero()
    } else {
        fixed_sum(&d) / n
    }
}

struct ClassSolve<T> {
    rho: T,
    vector: Vec<T>,
    iterations: usize,
}

/// Perron root and vector of an irreducible block.
fn perron<T: Scalar>(a: &CsrMatrix<T>, opts: &EigenOptions<T>) -> Result<ClassSolve<T>> {
    let n = a.nrows();
    if n == 1 {
        return Ok(ClassSolve { rho: a.get(0, 0), vector: vec![T::one()], iterations: 0 });
    }
    let nf = T::from_usize(n).unwrap();
    let phase = (opts.max_iter / 2).max(1);
    let mut used = 0usize;
    let mut last_res = T::infinity();
    let mut shift = T::zero();
    for attempt in 0..2 {
        let mut v = vec![T::one() / nf; n];
        let mut lam = T::zero();
        let mut w = vec![T::zero(); n];
        let budget = if attempt == 0 { phase } else { opts.max_iter - phase };
        for _ in 0..budget {
            used += 1;
            a.mul_vec_into(&v, &mut w);
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi = *wi + shift * *vi;
            }
            let norm = fixed_sum(&w);
            if norm <= T::zero() {
                return Ok(ClassSolve { rho: T::zero(), vector: v, iterations: used });
            }
            let lam_new = norm - shift;
            for wi in w.iter_mut() {
                *wi = *wi / norm;
            }
            std::mem::swap(&mut v, &mut w);
            if (lam_new - lam).abs() < opts.tol {
                let r = residual(a, &v, lam_new);
                last_res = r;
                if r < opts.tol * T::lit(10.0) {
                    return Ok(ClassSolve { rho: lam_new, vector: v, iterations: used });
                }
            }
            lam = lam_new;
        }
        // Periodic classes oscillate; a positive shift removes the other
        // peripheral eigenvalues from the circle of radius rho.
        shift = lam.max(T::lit(1e-3));
    }
    Err(Error::NonConvergence { iterations: used, residual: last_res.to_f64().unwrap_or(f64::NAN) })
}

/// Grow a vector seeded on some classes by plain power iteration until it
/// is an eigenvector for `lambda`. `lambda` itself is only known to the
/// class acceptance level of 10·tol, so that is the target here too.
fn grow<T: Scalar>(
    a: &CsrMatrix<T>,
    mut v: Vec<T>,
    lambda: T,
    opts: &EigenOptions<T>,
    iterations: &mut usize,
) -> Result<Vec<T>> {
    let n0 = l1(&v);
    for x in v.iter_mut() {
        *x = *x / n0;
    }
    let mut w = vec![T::zero(); v.len()];
    let mut r = residual(a, &v, lambda);
    let mut k = 0;
    while r >= opts.tol * T::lit(10.0) {
        if k >= opts.max_iter {
            return Err(Error::NonConvergence { iterations: *iterations, residual: r.to_f64().unwrap() });
        }
        a.mul_vec_into(&v, &mut w);
        let norm = l1(&w);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = *wi / norm;
        }
        *iterations += 1;
        k += 1;
        r = residual(a, &v, lambda);
    }
    Ok(v)
}

pub fn leading_eigenpair<T: Scalar>(a: &CsrMatrix<T>, opts: &EigenOptions<T>) -> Result<Eigenpair<T>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix required");
    if a.triplets().any(|(_, _, v)| !v.is_finite() || v < T::zero()) {
        return Err(Error::Degenerate("matrix must be finite and nonnegative".into()));
    }

    // Mass flows from column j to row i.
    let mut g = DiGraph::<(), ()>::with_capacity(n, a.nnz());
    for _ in 0..n {
        g.add_node(());
    }
    for (i, j, _) in a.triplets() {
        g.add_edge(NodeIndex::new(j), NodeIndex::new(i), ());
    }
    // Reverse topological order: every edge goes from a later to an earlier class.
    let sccs = kosaraju_scc(&g);
    let nc = sccs.len();
    let mut class_of = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            class_of[v.index()] = c;
        }
    }

    let at = a.transpose();
    let mut iterations = 0usize;
    let mut rho = vec![T::zero(); nc];
    let mut members_sorted: Vec<Vec<usize>> = Vec::with_capacity(nc);
    for (c, members) in sccs.iter().enumerate() {
        let mut idx: Vec<usize> = members.iter().map(|v| v.index()).collect();
        idx.sort_unstable();
        let nontrivial = idx.len() > 1 || a.get(idx[0], idx[0]) > T::zero();
        if nontrivial {
            let block = a.principal_submatrix(&idx);
            let s = perron(&block, opts)?;
            iterations += s.iterations;
            rho[c] = s.rho;
        }
        members_sorted.push(idx);
    }
    let lambda = rho.iter().fold(T::zero(), |m, &r| m.max(r));

    if lambda == T::zero() {
        // Nilpotent: the graph is acyclic, so a sink (zero column) and a
        // source (zero row) exist and give exact null vectors.
        let col = a.column_sums();
        let mut right: Vec<T> = col.iter().map(|&s| if s == T::zero() { T::one() } else { T::zero() }).collect();
        let mut left: Vec<T> =
            (0..n).map(|i| if a.row(i).next().is_none() { T::one() } else { T::zero() }).collect();
        for v in [&mut right, &mut left] {
            let s = fixed_sum(v);
            if s == T::zero() {
                v.iter_mut().for_each(|x| *x = T::one());
            }
            let s = fixed_sum(v);
            v.iter_mut().for_each(|x| *x = *x / s);
        }
        let pairing = right.iter().zip(&left).fold(T::zero(), |s, (x, y)| s + *x * *y);
        return Ok(Eigenpair {
            lambda,
            residual: residual(a, &right, lambda),
            left_residual: residual(&at, &left, lambda),
            right,
            left,
            pairing,
            iterations,
            classes: nc,
            basic_classes: 0,
        });
    }

    let thr = lambda * (T::one() - T::lit(1e-9)) - opts.tol * T::lit(10.0);
    let basic: Vec<bool> = rho.iter().map(|&r| r > T::zero() && r >= thr).collect();

    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); nc];
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (i, j, _) in a.triplets() {
        let (cj, ci) = (class_of[j], class_of[i]);
        if cj != ci {
            succ[cj].push(ci);
            pred[ci].push(cj);
        }
    }
    // Successors come earlier in `sccs`, predecessors later.
    let mut basic_below = vec![false; nc];
    for c in 0..nc {
        basic_below[c] = succ[c].iter().any(|&d| basic[d] || basic_below[d]);
    }
    let mut basic_above = vec![false; nc];
    for c in (0..nc).rev() {
        basic_above[c] = pred[c].iter().any(|&d| basic[d] || basic_above[d]);
    }

    let seed = |transposed: bool, iterations: &mut usize| -> Result<Vec<T>> {
        let mut v = vec![T::zero(); n];
        for c in 0..nc {
            let extremal = if transposed { !basic_above[c] } else { !basic_below[c] };
            if !(basic[c] && extremal) {
                continue;
            }
            let idx = &members_sorted[c];
            let block = if transposed { at.principal_submatrix(idx) } else { a.principal_submatrix(idx) };
            let s = perron(&block, opts)?;
            *iterations += s.iterations;
            let norm = fixed_sum(&s.vector);
            for (k, &gidx) in idx.iter().enumerate() {
                v[gidx] = s.vector[k] / norm;
            }
        }
        Ok(v)
    };

    let right0 = seed(false, &mut iterations)?;
    let right = grow(a, right0, lambda, opts, &mut iterations)?;
    let left0 = seed(true, &mut iterations)?;
    let mut left = grow(&at, left0, lambda, opts, &mut iterations)?;
    let s = fixed_sum(&left);
    left.iter_mut().for_each(|x| *x = *x / s);

    let prod: Vec<T> = right.iter().zip(&left).map(|(x, y)| *x * *y).collect();
    let pairing = fixed_sum(&prod);
    Ok(Eigenpair {
        lambda,
        residual: residual(a, &right, lambda),
        left_residual: residual(&at, &left, lambda),
        right,
        left,
        pairing,
        iterations,
        classes: nc,
        basic_classes: basic.iter().filter(|&&b| b).count(),
    })
}
