//! Dirichlet view of a softmax layer: concentrations, posterior mean,
//! closed-form entropy, confidence and the bounded subtractive calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::special::{digamma_unchecked, entropy_residual, trigamma_residual, trigamma_unchecked};

/// Lower clamp applied to calibrated concentrations.
pub const POSITIVITY_FLOOR: f64 = 1e-6;
pub const DEFAULT_DELTA: f64 = 0.1;

// Guards the rescale ratio against a zero ε.
const TINY: f64 = 1e-300;

/// Concentration vector of a Dirichlet distribution, with its cached sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Concentration {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl Concentration {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Shape("concentration must have at least one component".into()));
        }
        if let Some((i, a)) = alpha.iter().enumerate().find(|(_, a)| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Domain(format!("concentration component {i} is {a}, expected positive and finite")));
        }
        let alpha0: f64 = alpha.iter().sum();
        if !alpha0.is_finite() {
            return Err(Error::Overflow("concentration sum overflows".into()));
        }
        Ok(Concentration { alpha, alpha0 })
    }

    /// `α = M·exp(m)`.
    pub fn from_logits(m: &[f64], scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("scale constant must be positive, got {scale}")));
        }
        let mut alpha = Vec::with_capacity(m.len());
        for (i, &x) in m.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("logit {i} is {x}")));
            }
            let a = scale * x.exp();
            if !a.is_finite() || a == 0.0 {
                return Err(Error::Overflow(format!("logit {i} = {x} leaves the representable range of exp")));
            }
            alpha.push(a);
        }
        Concentration::new(alpha)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn into_alpha(self) -> Vec<f64> {
        self.alpha
    }
}

/// Rectified calibration weights `W_c` (row-major `K×K`) with ratio bound `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMatrix {
    k: usize,
    w: Vec<f64>,
    delta: f64,
}

impl CalibrationMatrix {
    pub fn new(k: usize, w: Vec<f64>, delta: f64) -> Result<Self> {
        if w.len() != k * k {
            return Err(Error::Shape(format!("calibration matrix needs {} entries, got {}", k * k, w.len())));
        }
        check_delta(delta)?;
        if let Some(x) = w.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::Domain(format!("calibration weight {x} is not a finite non-negative number")));
        }
        Ok(CalibrationMatrix { k, w, delta })
    }

    pub fn zeros(k: usize, delta: f64) -> Result<Self> {
        CalibrationMatrix::new(k, vec![0.0; k * k], delta)
    }

    /// `W_c = max(W_raw, 0)` elementwise.
    pub fn rectify(k: usize, w_raw: &[f64], delta: f64) -> Result<Self> {
        if let Some(x) = w_raw.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("raw calibration weight {x}")));
        }
        CalibrationMatrix::new(k, w_raw.iter().map(|&x| x.max(0.0)).collect(), delta)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.k + j]
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().all(|&x| x == 0.0)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `p_i = α_i / α_0`.
pub fn posterior_mean(alpha: &Concentration) -> Vec<f64> {
    alpha.alpha.iter().map(|a| a / alpha.alpha0).collect()
}

/// Differential entropy of `Dir(α)`.
///
/// Evaluated as `Σ r(α_i) − r(α_0) − (K − 1)·ψ(α_0)` with
/// `r(x) = ln Γ(x) − (x − 1)·ψ(x) + x`; the linear parts cancel exactly since
/// `Σ α_i = α_0`, which keeps full precision for concentrations near `e^30`
/// and beyond, where trained taggers routinely sit.
pub fn dirichlet_entropy(alpha: &Concentration) -> Result<f64> {
    let k = alpha.k() as f64;
    let a0 = alpha.alpha0;
    let mut h = -entropy_residual(a0) - (k - 1.0) * digamma_unchecked(a0);
    for &a in &alpha.alpha {
        h += entropy_residual(a);
    }
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::NonFinite(format!("Dirichlet entropy is {h}")))
    }
}

/// `∂H/∂α_i = (α_0 − K)·ψ'(α_0) − (α_i − 1)·ψ'(α_i)`, evaluated through
/// `x·ψ'(x) − 1` so the two leading 1s cancel before rounding.
pub fn entropy_grad(alpha: &Concentration) -> Result<Vec<f64>> {
    let k = alpha.k() as f64;
    let a0 = alpha.alpha0;
    let shared = trigamma_residual(a0) - k * trigamma_unchecked(a0);
    let g: Vec<f64> = alpha
        .alpha
        .iter()
        .map(|&a| shared - trigamma_residual(a) + trigamma_unchecked(a))
        .collect();
    match g.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("entropy gradient component {i} is {}", g[i]))),
        None => Ok(g),
    }
}

/// Negated maximum class probability; larger is more uncertain.
pub fn confidence(alpha: &Concentration) -> f64 {
    let max = alpha.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    -max / alpha.alpha0
}

/// Output of [`calibrate`], with the intermediate state the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub alpha_tilde: Concentration,
    /// The applied (rescaled) noise `ε'`.
    pub epsilon: Vec<f64>,
    /// Rescale factor `s ∈ (0, 1]`.
    pub scale: f64,
    /// Components clamped to [`POSITIVITY_FLOOR`].
    pub floored: Vec<bool>,
}

/// `α̃ = max(α − s·W_c·α, floor)` with `s` chosen so `‖s·W_c·α‖∞ ≤ δ‖α‖∞`.
pub fn calibrate(alpha: &Concentration, cal: &CalibrationMatrix) -> Result<Calibrated> {
    let k = alpha.k();
    if cal.k != k {
        return Err(Error::Shape(format!("calibration matrix is {}x{}, concentration has {k} components", cal.k, cal.k)));
    }
    let a = &alpha.alpha;
    let mut eps: Vec<f64> = (0..k).map(|i| (0..k).map(|j| cal.w[i * k + j] * a[j]).sum()).collect();
    let eps_max = eps.iter().copied().fold(0.0, f64::max);
    let a_max = a.iter().copied().fold(0.0, f64::max);
    let scale = (cal.delta * a_max / eps_max.max(TINY)).min(1.0);
    if scale < 1.0 {
        // the product can overshoot the bound by an ulp
        let bound = cal.delta * a_max;
        for e in eps.iter_mut() {
            *e = (*e * scale).min(bound);
        }
    }
    let mut floored = vec![false; k];
    let tilde: Vec<f64> = (0..k)
        .map(|i| {
            let v = a[i] - eps[i];
            if v < POSITIVITY_FLOOR {
                floored[i] = true;
                POSITIVITY_FLOOR
            } else {
                v
            }
        })
        .collect();
    Ok(Calibrated { alpha_tilde: Concentration::new(tilde)?, epsilon: eps, scale, floored })
}

/// Back-propagates `g = ∂L/∂α̃` through [`calibrate`].
///
/// Adds `∂L/∂W_c` into `grad_w` (row-major `K×K`) and returns `∂L/∂α`. The
/// rescale factor is treated as a constant and floored components pass no
/// gradient.
pub fn calibrate_backward(
    alpha: &Concentration,
    cal: &CalibrationMatrix,
    out: &Calibrated,
    g: &[f64],
    grad_w: Option<&mut [f64]>,
) -> Vec<f64> {
    let k = alpha.k();
    let s = out.scale;
    let live: Vec<f64> = (0..k).map(|i| if out.floored[i] { 0.0 } else { g[i] }).collect();
    if let Some(grad_w) = grad_w {
        for i in 0..k {
            if live[i] != 0.0 {
                let row = &mut grad_w[i * k..(i + 1) * k];
                for (gw, &aj) in row.iter_mut().zip(&alpha.alpha) {
                    *gw -= s * live[i] * aj;
                }
            }
        }
    }
    (0..k)
        .map(|j| live[j] - s * (0..k).map(|i| live[i] * cal.w[i * k + j]).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::lgamma_unchecked;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};
    use statrs::function::gamma::ln_gamma;

    fn conc(a: &[f64]) -> Concentration {
        Concentration::new(a.to_vec()).unwrap()
    }

    // Mean and standard error of -ln pdf over normalized Gamma draws.
    fn mc_entropy(alpha: &[f64], draws: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let a0: f64 = alpha.iter().sum();
        let log_norm = ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let mut g = vec![0.0; alpha.len()];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            for (x, d) in g.iter_mut().zip(&gammas) {
                *x = d.sample(rng);
            }
            let total: f64 = g.iter().sum();
            let log_pdf = log_norm + alpha.iter().zip(&g).map(|(&a, &x)| (a - 1.0) * (x / total).ln()).sum::<f64>();
            sum += -log_pdf;
            sum_sq += log_pdf * log_pdf;
        }
        let n = draws as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn posterior_mean_examples() {
        assert_eq!(posterior_mean(&conc(&[2.0, 1.0, 1.0])), vec![0.5, 0.25, 0.25]);
        for c in [0.01, 1.0, 37.5] {
            for p in posterior_mean(&conc(&[c; 5])) {
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn posterior_mean_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let alpha = [0.7, 3.0, 12.0, 1.5];
        let a = conc(&alpha);
        let mean = posterior_mean(&a);
        let n = 200_000;
        let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&x| Gamma::new(x, 1.0).unwrap()).collect();
        let mut sums = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
            let t: f64 = g.iter().sum();
            for i in 0..4 {
                sums[i] += g[i] / t;
                sq[i] += (g[i] / t).powi(2);
            }
        }
        for i in 0..4 {
            let m = sums[i] / n as f64;
            let se = ((sq[i] / n as f64 - m * m) / n as f64).sqrt();
            assert!((m - mean[i]).abs() < 3.0 * se, "component {i}: {m} vs {}", mean[i]);
        }
    }

    #[test]
    fn entropy_exact_values() {
        assert_eq!(dirichlet_entropy(&conc(&[1.0, 1.0])).unwrap(), 0.0);
        let h = dirichlet_entropy(&conc(&[1.0, 1.0, 1.0])).unwrap();
        assert!((h + 2f64.ln()).abs() < 1e-12, "{h}");
        // Beta(2,2): ln B = ln(1/6); ψ(4)·2 − 2·ψ(2) = 2(11/6 − γ) − 2(1 − γ) = 5/3
        let hand = (1.0f64 / 6.0).ln() + 5.0 / 3.0;
        let h = dirichlet_entropy(&conc(&[2.0, 2.0])).unwrap();
        assert!((h - hand).abs() < 1e-12);
        assert!((h + 0.125_092).abs() < 1e-6);
    }

    #[test]
    fn entropy_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for alpha in [vec![2.0, 2.0], vec![0.5, 3.0, 7.0, 1.2, 20.0]] {
            let (mean, se) = mc_entropy(&alpha, 100_000, &mut rng);
            let h = dirichlet_entropy(&conc(&alpha)).unwrap();
            assert!((h - mean).abs() < 3.0 * se, "alpha={alpha:?}: closed {h}, mc {mean} ± {se}");
        }
    }

    #[test]
    fn symmetric_entropy_decreases_with_concentration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in [2, 5] {
            let grid = [1.0, 2.0, 4.0, 8.0];
            let hs: Vec<f64> = grid.iter().map(|&c| dirichlet_entropy(&conc(&vec![c; k])).unwrap()).collect();
            assert!(hs.windows(2).all(|w| w[1] < w[0]), "{hs:?}");
            let mcs: Vec<f64> = grid.iter().map(|&c| mc_entropy(&vec![c; k], 50_000, &mut rng).0).collect();
            assert!(mcs.windows(2).all(|w| w[1] < w[0]), "{mcs:?}");
        }
    }

    #[test]
    fn entropy_grad_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let k = rng.random_range(2..8);
            let alpha: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
            let g = entropy_grad(&conc(&alpha)).unwrap();
            for i in 0..k {
                let h = 1e-6 * alpha[i];
                let mut up = alpha.clone();
                up[i] += h;
                let mut dn = alpha.clone();
                dn[i] -= h;
                let fd = (dirichlet_entropy(&conc(&up)).unwrap() - dirichlet_entropy(&conc(&dn)).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * (fd.abs() + g[i].abs()).max(1e-3), "{fd} vs {}", g[i]);
            }
        }
    }

    // Reference values from 60-digit arbitrary-precision evaluation of the
    // textbook lgamma/digamma formula.
    const HIGH_PRECISION: [(&str, f64, &[f64]); 4] = [
        ("e30", -464.00000000002395551, &[0.0]),
        ("big", -42.588410471761541676, &[-1.583333333332524537e-13, 4.1666666666827546296e-14, 0.11470817705133036522]),
        ("sym", -8.8311226121114279709, &[-2.499999987499999875e-9, -2.499999987499999875e-9]),
        (
            "mixed",
            -55.112833374373936928,
            &[-0.000022475777227343200127, 0.000011879886624732670732, 385.79972344454759905, 1.8501891991123955719, 0.020518533930598271725],
        ),
    ];

    fn high_precision_alpha(name: &str) -> Vec<f64> {
        match name {
            "e30" => std::iter::once(30f64.exp()).chain(std::iter::repeat_n(1.0, 16)).collect(),
            "big" => vec![1e13, 2e12, 5.0],
            "sym" => vec![1e8, 1e8],
            _ => vec![12f64.exp(), 9.5f64.exp(), (-3f64).exp(), 0.7, 25.0],
        }
    }

    #[test]
    fn entropy_keeps_precision_at_large_concentration() {
        for (name, h, grad) in HIGH_PRECISION {
            let a = conc(&high_precision_alpha(name));
            let got = dirichlet_entropy(&a).unwrap();
            assert!((got - h).abs() < 1e-12 * h.abs(), "{name}: {got} vs {h}");
            let g = entropy_grad(&a).unwrap();
            if name == "e30" {
                // the sixteen unit components share one value
                for x in &g[1..] {
                    assert!((x - 0.99999999999845599221).abs() < 1e-14, "{x}");
                }
                assert!(g[0].abs() < 1e-11);
                continue;
            }
            for (x, want) in g.iter().zip(grad) {
                assert!((x - want).abs() < 1e-9 * want.abs() + 1e-20, "{name}: {x} vs {want}");
            }
        }
    }

    #[test]
    fn residual_forms_agree_at_the_switch() {
        use crate::numerics::special::{entropy_residual, trigamma_residual};
        for x in [19.0, 19.999999, 20.0, 20.000001, 21.0, 40.0] {
            let direct = lgamma_unchecked(x) - (x - 1.0) * digamma_unchecked(x) + x;
            assert!((entropy_residual(x) - direct).abs() < 1e-13, "{x}");
            let direct = x * trigamma_unchecked(x) - 1.0;
            assert!((trigamma_residual(x) - direct).abs() < 1e-14, "{x}");
        }
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(&conc(&[2.0, 1.0, 1.0])), -0.5);
        assert_eq!(confidence(&conc(&[3.0; 4])), -0.25);
    }

    #[test]
    fn concentrations_from_logits() {
        assert_eq!(Concentration::from_logits(&[0.0; 3], 1.0).unwrap().alpha(), &[1.0, 1.0, 1.0]);
        let a = Concentration::from_logits(&[2f64.ln(), 0.0, 0.0], 1.0).unwrap();
        assert!((a.alpha()[0] - 2.0).abs() < 1e-15);
        assert!(matches!(Concentration::from_logits(&[710.0, 0.0], 1.0), Err(Error::Overflow(_))));
        assert!(matches!(Concentration::from_logits(&[-750.0, 0.0], 1.0), Err(Error::Overflow(_))));
        assert!(Concentration::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn calibrate_identity_and_rescale() {
        let a = conc(&[3.0, 0.5, 8.0]);
        let out = calibrate(&a, &CalibrationMatrix::zeros(3, 0.1).unwrap()).unwrap();
        assert_eq!(out.alpha_tilde, a);
        assert_eq!(out.epsilon, vec![0.0; 3]);
        assert_eq!(posterior_mean(&out.alpha_tilde), posterior_mean(&a));

        let cal = CalibrationMatrix::new(2, vec![0.5, 0.0, 0.0, 0.5], 0.1).unwrap();
        let out = calibrate(&conc(&[10.0, 10.0]), &cal).unwrap();
        assert!((out.epsilon[0] - 1.0).abs() < 1e-15 && (out.epsilon[1] - 1.0).abs() < 1e-15);
        assert!((out.alpha_tilde.alpha()[0] - 9.0).abs() < 1e-14);
        assert!((out.alpha_tilde.alpha()[1] - 9.0).abs() < 1e-14);
    }

    #[test]
    fn calibrate_bounds_hold_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let k = rng.random_range(2..10);
            let alpha: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-4.0..12.0))).collect();
            let w: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..3.0)).collect();
            let delta = rng.random_range(0.01..0.99);
            let a = conc(&alpha);
            let out = calibrate(&a, &CalibrationMatrix::new(k, w, delta).unwrap()).unwrap();
            let a_max = alpha.iter().copied().fold(0.0, f64::max);
            let e_max = out.epsilon.iter().copied().fold(0.0, f64::max);
            assert!(e_max <= delta * a_max + 1e-12, "{e_max} > {}", delta * a_max);
            assert!(out.alpha_tilde.alpha().iter().all(|&x| x >= POSITIVITY_FLOOR));
        }
    }

    #[test]
    fn rectify_examples() {
        let c = CalibrationMatrix::rectify(2, &[-1.0, 2.0, 3.0, -4.0], 0.1).unwrap();
        assert_eq!(c.weights(), &[0.0, 2.0, 3.0, 0.0]);
        assert!(CalibrationMatrix::rectify(2, &[0.0; 4], 0.1).unwrap().is_zero());
        assert!(CalibrationMatrix::zeros(2, 1.0).is_err());
    }

    #[test]
    fn calibrate_backward_matches_finite_difference() {
        // Small weights keep the rescale inactive; alphas well above the floor.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let k = rng.random_range(2..6);
            let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..5.0)).collect();
            let w: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..0.01)).collect();
            let g: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |alpha: &[f64], w: &[f64]| -> f64 {
                let out = calibrate(&conc(alpha), &CalibrationMatrix::new(k, w.to_vec(), 0.5).unwrap()).unwrap();
                out.alpha_tilde.alpha().iter().zip(&g).map(|(a, g)| a * g).sum()
            };
            let a = conc(&alpha);
            let cal = CalibrationMatrix::new(k, w.clone(), 0.5).unwrap();
            let out = calibrate(&a, &cal).unwrap();
            assert_eq!(out.scale, 1.0);
            let mut gw = vec![0.0; k * k];
            let ga = calibrate_backward(&a, &cal, &out, &g, Some(&mut gw));
            let h = 1e-6;
            for j in 0..k {
                let mut up = alpha.clone();
                up[j] += h;
                let mut dn = alpha.clone();
                dn[j] -= h;
                let fd = (loss(&up, &w) - loss(&dn, &w)) / (2.0 * h);
                assert!((fd - ga[j]).abs() < 1e-8);
            }
            for idx in 0..k * k {
                let mut up = w.clone();
                up[idx] += h;
                let mut dn = w.clone();
                dn[idx] = (dn[idx] - h).max(0.0);
                let fd = (loss(&alpha, &up) - loss(&alpha, &dn)) / (up[idx] - dn[idx]);
                assert!((fd - gw[idx]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn confidence_is_scale_invariant(alpha in prop::collection::vec(0.01f64..50.0, 2..12)) {
            let a = conc(&alpha);
            let u = confidence(&a);
            prop_assert!(u <= -1.0 / alpha.len() as f64 + 1e-15 && u >= -1.0);
            for c in [0.1, 3.0, 100.0] {
                let scaled = conc(&alpha.iter().map(|x| c * x).collect::<Vec<_>>());
                prop_assert!((confidence(&scaled) - u).abs() < 1e-14);
            }
        }

        #[test]
        fn posterior_mean_argmax_follows_alpha(alpha in prop::collection::vec(0.01f64..50.0, 2..12)) {
            let p = posterior_mean(&conc(&alpha));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(crate::numerics::argmax(&p), crate::numerics::argmax(&alpha));
        }
    }
}
