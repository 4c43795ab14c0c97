//! Dense LU with partial pivoting on caller-owned buffers.
//!
//! The Newton systems here are tiny (at most a few dozen unknowns) and get
//! factored thousands of times per run; factoring in place and reusing the
//! pivot buffer keeps the hot loops free of allocation.

use crate::{DMat, DVec};

/// Factor `a` in place as `P A = L U`, recording row swaps in `piv`.
/// Returns `false` if a pivot vanishes (singular to working precision).
pub fn factor_in_place(a: &mut DMat, piv: &mut Vec<usize>) -> bool {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    piv.clear();
    piv.resize(n, 0);
    for k in 0..n {
        let mut p = k;
        let mut best = a[(k, k)].abs();
        for r in k + 1..n {
            let v = a[(r, k)].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 {
            return false;
        }
        piv[k] = p;
        if p != k {
            a.swap_rows(k, p);
        }
        let inv = 1.0 / a[(k, k)];
        for r in k + 1..n {
            let m = a[(r, k)] * inv;
            a[(r, k)] = m;
            if m != 0.0 {
                for c in k + 1..n {
                    a[(r, c)] -= m * a[(k, c)];
                }
            }
        }
    }
    true
}

/// Solve `A x = b` in place using a factorization from `factor_in_place`.
pub fn solve_factored(a: &DMat, piv: &[usize], b: &mut DVec) {
    let n = a.nrows();
    // apply the recorded swaps first: the multipliers are stored in their
    // final (fully permuted) row positions
    for k in 0..n {
        if piv[k] != k {
            b.swap_rows(k, piv[k]);
        }
    }
    for k in 0..n {
        let bk = b[k];
        if bk != 0.0 {
            for r in k + 1..n {
                b[r] -= a[(r, k)] * bk;
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s -= a[(k, c)] * b[c];
        }
        b[k] = s / a[(k, k)];
    }
}

/// One-shot convenience: factor `a` and overwrite `b` with the solution.
pub fn solve_in_place(a: &mut DMat, piv: &mut Vec<usize>, b: &mut DVec) -> bool {
    if !factor_in_place(a, piv) {
        return false;
    }
    solve_factored(a, piv, b);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_reference_lu_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut piv = Vec::new();
        for n in [1usize, 2, 5, 12, 28, 42] {
            for _ in 0..20 {
                let a = DMat::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
                let b = DVec::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
                let reference = a.clone().lu().solve(&b).unwrap();
                let mut fa = a.clone();
                let mut x = b.clone();
                assert!(solve_in_place(&mut fa, &mut piv, &mut x));
                let resid = (&a * &x - &b).amax();
                assert!(resid < 1e-9, "n={n}: residual {resid}");
                assert!((&x - &reference).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn factorization_reuses_for_multiple_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10;
        let a = DMat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut fa = a.clone();
        let mut piv = Vec::new();
        assert!(factor_in_place(&mut fa, &mut piv));
        for _ in 0..3 {
            let b = DVec::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let mut x = b.clone();
            solve_factored(&fa, &piv, &mut x);
            assert!((&a * &x - &b).amax() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_reported() {
        let mut a = DMat::zeros(3, 3);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0; // third row/column identically zero
        let mut piv = Vec::new();
        assert!(!factor_in_place(&mut a, &mut piv));
    }
}
