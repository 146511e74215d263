use crate::scalar::Scalar;

const NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Eight-point Gauss-Legendre rule on [a, b].
pub fn gauss_legendre_8<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T) -> T {
    let half = (b - a) / T::lit(2.0);
    let mid = (a + b) / T::lit(2.0);
    let mut s = T::zero();
    for k in 0..4 {
        let dx = half * T::lit(NODES[k]);
        s = s + T::lit(WEIGHTS[k]) * (f(mid - dx) + f(mid + dx));
    }
    s * half
}

/// Adaptive bisection on the 8-point rule. Returns `None` when some piece has
/// not settled (|coarse - fine| <= rel * |fine| + abs) by `max_depth`.
pub fn integrate<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T, rel: T, abs: T, max_depth: usize) -> Option<T> {
    fn go<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T, coarse: T, rel: T, abs: T, depth: usize) -> Option<T> {
        let m = (a + b) / T::lit(2.0);
        let l = gauss_legendre_8(f, a, m);
        let r = gauss_legendre_8(f, m, b);
        let fine = l + r;
        if !fine.is_finite() {
            return None;
        }
        if (fine - coarse).abs() <= rel * fine.abs() + abs {
            return Some(fine);
        }
        if depth == 0 {
            return None;
        }
        Some(go(f, a, m, l, rel, abs, depth - 1)? + go(f, m, b, r, rel, abs, depth - 1)?)
    }
    if b <= a {
        return Some(T::zero());
    }
    let coarse = gauss_legendre_8(f, a, b);
    go(f, a, b, coarse, rel, abs, max_depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_degree_fifteen() {
        let f = |x: f64| x.powi(15) - 3.0 * x.powi(7) + 1.0;
        let exact = 1.0 / 16.0 - 3.0 / 8.0 + 1.0;
        assert!((gauss_legendre_8(&f, 0.0, 1.0) - exact).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_square_root_cusp() {
        let f = |x: f32| x.sqrt();
        let v = integrate(&f, 0.0f32, 1.0, 1e-6, 1e-9, 30).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-5);
        let g = |x: f64| x.sqrt();
        let v = integrate(&g, 0.0, 1.0, 1e-12, 1e-15, 40).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }
}
