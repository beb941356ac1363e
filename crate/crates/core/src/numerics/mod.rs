//! Dense-tensor kernel, special functions and gradient checking.
//!
//! Everything here is `f64`. Gradients are accumulated by explicit per-layer
//! backward functions elsewhere in the crate; this module only provides the
//! storage ([`Param`]) and the finite-difference checker used to audit them.

mod gradcheck;
pub(crate) mod special;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use special::{digamma, lgamma, ln_beta, reg_inc_beta, student_t_two_sided_p, trigamma};
pub use tensor::{Param, ParamSet, Tensor};

/// Numerically stable `ln Σ exp(v_i)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax with max-subtraction, safe for logits of any finite magnitude.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `out += W x` for a row-major `rows x cols` matrix.
#[inline]
pub fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ y` for a row-major `rows x cols` matrix.
#[inline]
pub fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

/// `G += y xᵀ` for a row-major `len(y) x len(x)` gradient.
#[inline]
pub fn outer_add(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), y.len() * cols);
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += yr * xv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform() {
        for p in softmax(&[0.0; 4]) {
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn softmax_no_overflow() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let v = [0.3, -1.2, 2.0];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-14);
    }

    #[test]
    fn matvec_helpers() {
        // W = [[1,2,3],[4,5,6]]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = vec![0.0; 2];
        matvec_add(&w, 2, 3, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, vec![-2.0, -2.0]);
        let mut back = vec![0.0; 3];
        matvec_t_add(&w, 2, 3, &[1.0, 1.0], &mut back);
        assert_eq!(back, vec![5.0, 7.0, 9.0]);
        let mut g = vec![0.0; 6];
        outer_add(&mut g, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(g, vec![1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }

    proptest! {
        #[test]
        fn softmax_is_distribution(v in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let p = softmax(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0 && x.is_finite()));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(argmax(&p), argmax(&v));
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-50f64..50.0, 2..12), c in -100f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v);
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
