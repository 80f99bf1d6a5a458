//! Fitting criteria on the accelerated failure time scale.
//!
//! With linear predictor `eta_i = u_i' theta`, the fitted time is
//! `exp(eta_i)` and each criterion measures how far it sits from the observed
//! time `y_i`:
//!
//! * `Lare`: `|1 - y^-1 e^eta| + |1 - y e^-eta|`, the sum of the additive and
//!   multiplicative relative errors. Equals `2 sinh|eta - ln y|`.
//! * `Lpre`: `y e^-eta + y^-1 e^eta - 2`, the product of the two relative
//!   errors. Equals `2 cosh(eta - ln y) - 2` and is smooth.
//! * `Ls` / `Lad`: squared and absolute error on the log scale.
//!
//! All criteria are averaged with Kaplan-Meier weights, which removes the
//! censoring bias of a naive average over observed times.
//!
//! `Lare` and `Lad` are minimized by iteratively majorizing each absolute
//! value as `r^2/(2|r_s|) + |r_s|/2` around the current residual `r_s`;
//! [`lare_majorizer`] and [`lad_majorizer`] evaluate those upper bounds.

use ndarray::{Array1, ArrayView1};
use crate::data::InteractionDesign;

/// Largest linear-predictor magnitude fed to `exp`. Beyond it the objective
/// reports `+inf`, which line searches reject without overflow.
pub const ETA_BOUND: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Lare,
    Lpre,
    Lad,
    Ls,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Lare, LossKind::Lpre, LossKind::Lad, LossKind::Ls];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Lare => "lare",
            LossKind::Lpre => "lpre",
            LossKind::Lad => "lad",
            LossKind::Ls => "ls",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        match s {
            "lare" => Some(LossKind::Lare),
            "lpre" => Some(LossKind::Lpre),
            "lad" => Some(LossKind::Lad),
            "ls" => Some(LossKind::Ls),
            _ => None,
        }
    }
}

/// The two relative-error factors `(|1 - y^-1 e^eta|, |1 - y e^-eta|)`.
///
/// `y` must be positive; `eta` is clamped to `[-ETA_BOUND, ETA_BOUND]` so the
/// result is always finite.
pub fn relative_terms(y: f64, eta: f64) -> (f64, f64) {
    debug_assert!(y > 0.0);
    let eta = eta.clamp(-ETA_BOUND, ETA_BOUND);
    let a = (1.0 - eta.exp() / y).abs();
    let b = (1.0 - y * (-eta).exp()).abs();
    (a, b)
}

/// One observation's contribution to the criterion, unweighted.
/// Returns `+inf` when `|eta|` exceeds [`ETA_BOUND`].
pub fn loss_term(kind: LossKind, y: f64, eta: f64) -> f64 {
    if eta.abs() > ETA_BOUND {
        return f64::INFINITY;
    }
    match kind {
        LossKind::Lare => {
            let (a, b) = relative_terms(y, eta);
            a + b
        }
        LossKind::Lpre => y * (-eta).exp() + eta.exp() / y - 2.0,
        LossKind::Ls => {
            let r = y.ln() - eta;
            r * r
        }
        LossKind::Lad => (y.ln() - eta).abs(),
    }
}

/// Weighted criterion value `sum_i w_i * term(y_i, eta_i)`.
pub fn objective_from_etas(
    kind: LossKind,
    etas: ArrayView1<f64>,
    times: &[f64],
    weights: &[f64],
) -> f64 {
    let mut total = 0.0;
    for ((&eta, &y), &w) in etas.iter().zip(times).zip(weights) {
        if w == 0.0 {
            continue;
        }
        total += w * loss_term(kind, y, eta);
        if !total.is_finite() {
            return total;
        }
    }
    total
}

/// Weighted criterion value at `theta` for a design.
pub fn weighted_objective(
    kind: LossKind,
    design: &InteractionDesign,
    theta: &Array1<f64>,
    times: &[f64],
    weights: &[f64],
) -> f64 {
    let etas = design.matrix().dot(theta);
    objective_from_etas(kind, etas.view(), times, weights)
}

/// First and second derivatives of the LPRE term with respect to `eta`.
pub fn lpre_eta_derivatives(y: f64, eta: f64) -> (f64, f64) {
    let eta = eta.clamp(-ETA_BOUND, ETA_BOUND);
    let a = eta.exp() / y;
    let b = y * (-eta).exp();
    (a - b, a + b)
}

/// Evaluates the quadratic upper bound on the weighted LARE criterion built
/// at anchor `etas_anchor`:
///
/// ```text
/// sum_i w_i/2 [ r1_i^2/D1_i + D1_i + r2_i^2/D2_i + D2_i ]
/// ```
///
/// with `r1 = 1 - y^-1 e^eta`, `r2 = 1 - y e^-eta`, and `D` the anchor
/// residual magnitudes floored at `eps_denom`. Where no floor engages the
/// bound touches the criterion at the anchor; the arithmetic-geometric mean
/// inequality `|r| <= r^2/(2D) + D/2` makes it an upper bound for any
/// positive `D`.
pub fn lare_majorizer(
    etas: ArrayView1<f64>,
    etas_anchor: ArrayView1<f64>,
    times: &[f64],
    weights: &[f64],
    eps_denom: f64,
) -> f64 {
    let mut total = 0.0;
    for i in 0..times.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let (a_s, b_s) = signed_relative_residuals(times[i], etas_anchor[i]);
        let d1 = a_s.abs().max(eps_denom);
        let d2 = b_s.abs().max(eps_denom);
        let (a, b) = signed_relative_residuals(times[i], etas[i]);
        total += 0.5 * w * (a * a / d1 + d1 + b * b / d2 + d2);
    }
    total
}

/// Evaluates the quadratic upper bound on the weighted LAD criterion built
/// at anchor `etas_anchor`: `sum_i w_i [ r_i^2/(2 D_i) + D_i/2 ]` with
/// `r = ln y - eta` and `D` the anchor residual magnitude floored at
/// `eps_denom`.
pub fn lad_majorizer(
    etas: ArrayView1<f64>,
    etas_anchor: ArrayView1<f64>,
    times: &[f64],
    weights: &[f64],
    eps_denom: f64,
) -> f64 {
    let mut total = 0.0;
    for i in 0..times.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let ly = times[i].ln();
        let d = (ly - etas_anchor[i]).abs().max(eps_denom);
        let r = ly - etas[i];
        total += w * (r * r / (2.0 * d) + d / 2.0);
    }
    total
}

/// Signed versions of the relative-error factors: `(1 - y^-1 e^eta,
/// 1 - y e^-eta)`.
fn signed_relative_residuals(y: f64, eta: f64) -> (f64, f64) {
    let eta = eta.clamp(-ETA_BOUND, ETA_BOUND);
    (1.0 - eta.exp() / y, 1.0 - y * (-eta).exp())
}

/// The smooth surrogate one MM step minimizes: exact for `Lpre` and `Ls`,
/// the quadratic upper bounds above for `Lare` and `Lad`. Denominators are
/// anchored once at construction, so per-coordinate slices are cheap.
pub(crate) struct Surrogate {
    kind: LossKind,
    // Anchor residual magnitudes, floored: (d1, d2) for Lare, d1 for Lad.
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Surrogate {
    pub fn build(
        kind: LossKind,
        etas_anchor: ArrayView1<f64>,
        times: &[f64],
        eps_denom: f64,
    ) -> Self {
        let n = times.len();
        let (mut d1, mut d2) = (Vec::new(), Vec::new());
        match kind {
            LossKind::Lare => {
                d1.reserve(n);
                d2.reserve(n);
                for i in 0..n {
                    let (a_s, b_s) = signed_relative_residuals(times[i], etas_anchor[i]);
                    d1.push(a_s.abs().max(eps_denom));
                    d2.push(b_s.abs().max(eps_denom));
                }
            }
            LossKind::Lad => {
                d1.reserve(n);
                for i in 0..n {
                    d1.push((times[i].ln() - etas_anchor[i]).abs().max(eps_denom));
                }
            }
            LossKind::Lpre | LossKind::Ls => {}
        }
        Surrogate { kind, d1, d2 }
    }

    /// Surrogate term for observation `i`, unweighted. `+inf` past the eta
    /// bound, which rejects runaway steps in line searches.
    #[allow(dead_code)]
    pub fn value_i(&self, i: usize, y: f64, eta: f64) -> f64 {
        if eta.abs() > ETA_BOUND {
            return f64::INFINITY;
        }
        match self.kind {
            LossKind::Lpre | LossKind::Ls => loss_term(self.kind, y, eta),
            LossKind::Lare => {
                let (a, b) = signed_relative_residuals(y, eta);
                0.5 * (a * a / self.d1[i] + self.d1[i] + b * b / self.d2[i] + self.d2[i])
            }
            LossKind::Lad => {
                let r = y.ln() - eta;
                let d = self.d1[i];
                r * r / (2.0 * d) + d / 2.0
            }
        }
    }

    /// d/d(eta) of the surrogate term.
    pub fn grad_i(&self, i: usize, y: f64, eta: f64) -> f64 {
        let eta = eta.clamp(-ETA_BOUND, ETA_BOUND);
        match self.kind {
            LossKind::Lpre => {
                let (g, _) = lpre_eta_derivatives(y, eta);
                g
            }
            LossKind::Ls => -2.0 * (y.ln() - eta),
            LossKind::Lare => {
                let a = eta.exp() / y;
                let b = y * (-eta).exp();
                -(1.0 - a) * a / self.d1[i] + (1.0 - b) * b / self.d2[i]
            }
            LossKind::Lad => -(y.ln() - eta) / self.d1[i],
        }
    }

    /// d2/d(eta)2 of the surrogate term. May be negative for `Lare`, whose
    /// surrogate is quadratic in the relative errors, not in `eta`.
    pub fn hess_i(&self, i: usize, y: f64, eta: f64) -> f64 {
        let eta = eta.clamp(-ETA_BOUND, ETA_BOUND);
        match self.kind {
            LossKind::Lpre => {
                let (_, h) = lpre_eta_derivatives(y, eta);
                h
            }
            LossKind::Ls => 2.0,
            LossKind::Lare => {
                let a = eta.exp() / y;
                let b = y * (-eta).exp();
                a * (2.0 * a - 1.0) / self.d1[i] + b * (2.0 * b - 1.0) / self.d2[i]
            }
            LossKind::Lad => 1.0 / self.d1[i],
        }
    }

    /// Positive curvature proxy (the Gauss-Newton part of `hess_i`), used
    /// when the full second derivative is not safely positive.
    pub fn gn_hess_i(&self, i: usize, y: f64, eta: f64) -> f64 {
        let eta = eta.clamp(-ETA_BOUND, ETA_BOUND);
        match self.kind {
            LossKind::Lpre => {
                let (_, h) = lpre_eta_derivatives(y, eta);
                h
            }
            LossKind::Ls => 2.0,
            LossKind::Lare => {
                let a = eta.exp() / y;
                let b = y * (-eta).exp();
                2.0 * (a * a / self.d1[i] + b * b / self.d2[i])
            }
            LossKind::Lad => 1.0 / self.d1[i],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn relative_terms_at_e() {
        let e = std::f64::consts::E;
        let (a, b) = relative_terms(e, 0.0);
        assert_relative_eq!(a, (e - 1.0) / e, max_relative = 1e-15);
        assert_relative_eq!(b, e - 1.0, max_relative = 1e-15);
    }

    #[test]
    fn relative_terms_at_log_two() {
        let (a, b) = relative_terms(1.0, 2.0_f64.ln());
        assert_relative_eq!(a, 1.0, max_relative = 1e-15);
        assert_relative_eq!(b, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn lare_equals_two_sinh_of_log_residual() {
        let mut s = crate::rng::Stream::new(17);
        for _ in 0..1000 {
            let y = s.uniform(0.05, 20.0);
            let eta = s.uniform(-3.0, 3.0);
            let term = loss_term(LossKind::Lare, y, eta);
            let sinh_form = 2.0 * (eta - y.ln()).abs().sinh();
            assert_relative_eq!(term, sinh_form, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn lpre_equals_product_of_relative_terms() {
        let mut s = crate::rng::Stream::new(18);
        for _ in 0..1000 {
            let y = s.uniform(0.05, 20.0);
            let eta = s.uniform(-3.0, 3.0);
            let term = loss_term(LossKind::Lpre, y, eta);
            let (a, b) = relative_terms(y, eta);
            assert_relative_eq!(term, a * b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn losses_vanish_at_perfect_fit() {
        for kind in LossKind::ALL {
            let v = loss_term(kind, 3.0, 3.0_f64.ln());
            assert!(v.abs() < 1e-12, "{kind:?} gives {v}");
        }
    }

    #[test]
    fn eta_overflow_is_infinite_not_nan() {
        for kind in LossKind::ALL {
            let v = loss_term(kind, 1.0, 800.0);
            assert!(v.is_infinite() && v > 0.0);
        }
    }

    #[test]
    fn lpre_derivatives_match_finite_differences() {
        let mut s = crate::rng::Stream::new(19);
        for _ in 0..500 {
            let y = s.uniform(0.1, 10.0);
            let eta = s.uniform(-2.0, 2.0);
            let h = 1e-6;
            let (g, hess) = lpre_eta_derivatives(y, eta);
            let fd_g = (loss_term(LossKind::Lpre, y, eta + h)
                - loss_term(LossKind::Lpre, y, eta - h))
                / (2.0 * h);
            let fd_h = (lpre_eta_derivatives(y, eta + h).0 - lpre_eta_derivatives(y, eta - h).0)
                / (2.0 * h);
            assert_relative_eq!(g, fd_g, max_relative = 1e-5, epsilon = 1e-7);
            assert_relative_eq!(hess, fd_h, max_relative = 1e-5, epsilon = 1e-7);
        }
    }

    #[test]
    fn lpre_second_derivative_is_positive() {
        let mut s = crate::rng::Stream::new(20);
        for _ in 0..500 {
            let (_, h) = lpre_eta_derivatives(s.uniform(0.1, 10.0), s.uniform(-5.0, 5.0));
            assert!(h > 0.0);
        }
    }

    #[test]
    fn lare_majorizer_hand_value() {
        // One observation, w = 1, y = 1, anchored at eta_s = ln 2, evaluated
        // at eta = 0: residuals vanish, leaving the constant (D1 + D2)/2 =
        // (1 + 1/2)/2 = 3/4.
        let etas = array![0.0];
        let anchor = array![2.0_f64.ln()];
        let v = lare_majorizer(etas.view(), anchor.view(), &[1.0], &[1.0], 1e-8);
        assert_relative_eq!(v, 0.75, max_relative = 1e-12);
    }

    #[test]
    fn lare_majorizer_touches_criterion_at_anchor() {
        let anchor = array![2.0_f64.ln()];
        let v = lare_majorizer(anchor.view(), anchor.view(), &[1.0], &[1.0], 1e-8);
        assert_relative_eq!(v, 1.5, max_relative = 1e-12);
        assert_relative_eq!(v, loss_term(LossKind::Lare, 1.0, 2.0_f64.ln()), max_relative = 1e-12);
    }

    #[test]
    fn lad_majorizer_hand_value() {
        let e = std::f64::consts::E;
        let anchor = array![0.0];
        let at_fit = array![1.0];
        let v = lad_majorizer(at_fit.view(), anchor.view(), &[e], &[1.0], 1e-8);
        assert_relative_eq!(v, 0.5, max_relative = 1e-12);
        let at_anchor = lad_majorizer(anchor.view(), anchor.view(), &[e], &[1.0], 1e-8);
        assert_relative_eq!(at_anchor, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn majorizers_dominate_pointwise() {
        let mut s = crate::rng::Stream::new(21);
        for _ in 0..2000 {
            let y = s.uniform(0.05, 10.0);
            let anchor = array![s.uniform(-2.5, 2.5)];
            let eta = array![s.uniform(-2.5, 2.5)];
            let w = [1.0];
            let t = [y];
            let lare_bound = lare_majorizer(eta.view(), anchor.view(), &t, &w, 1e-8);
            assert!(lare_bound >= loss_term(LossKind::Lare, y, eta[0]) - 1e-10);
            let lad_bound = lad_majorizer(eta.view(), anchor.view(), &t, &w, 1e-8);
            assert!(lad_bound >= loss_term(LossKind::Lad, y, eta[0]) - 1e-10);
        }
    }

    #[test]
    fn surrogate_matches_majorizer_functions() {
        let times = [0.5, 2.0, 1.0];
        let weights = [0.2, 0.3, 0.5];
        let anchor = array![0.3, -0.7, 1.1];
        let etas = array![-0.2, 0.4, 0.9];
        for kind in [LossKind::Lare, LossKind::Lad] {
            let surrogate = Surrogate::build(kind, anchor.view(), &times, 1e-8);
            let direct: f64 = (0..3)
                .map(|i| weights[i] * surrogate.value_i(i, times[i], etas[i]))
                .sum();
            let via_fn = match kind {
                LossKind::Lare => {
                    lare_majorizer(etas.view(), anchor.view(), &times, &weights, 1e-8)
                }
                _ => lad_majorizer(etas.view(), anchor.view(), &times, &weights, 1e-8),
            };
            assert_relative_eq!(direct, via_fn, max_relative = 1e-12);
        }
    }

    #[test]
    fn surrogate_derivatives_match_finite_differences() {
        let mut s = crate::rng::Stream::new(22);
        for kind in LossKind::ALL {
            for _ in 0..200 {
                let y = s.uniform(0.2, 5.0);
                let anchor = array![s.uniform(-1.5, 1.5)];
                let eta = s.uniform(-1.5, 1.5);
                let surrogate = Surrogate::build(kind, anchor.view(), &[y], 1e-8);
                let h = 1e-6;
                let fd_g =
                    (surrogate.value_i(0, y, eta + h) - surrogate.value_i(0, y, eta - h))
                        / (2.0 * h);
                let fd_h =
                    (surrogate.grad_i(0, y, eta + h) - surrogate.grad_i(0, y, eta - h))
                        / (2.0 * h);
                let g = surrogate.grad_i(0, y, eta);
                let hess = surrogate.hess_i(0, y, eta);
                assert_relative_eq!(g, fd_g, max_relative = 1e-4, epsilon = 1e-6);
                assert_relative_eq!(hess, fd_h, max_relative = 1e-4, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn objective_skips_zero_weight_rows() {
        let times = [1.0, 5.0];
        let weights = [1.0, 0.0];
        // The second row has eta past the bound but carries no weight.
        let etas = array![0.0, 1000.0];
        let v = objective_from_etas(LossKind::Lpre, etas.view(), &times, &weights);
        assert!(v.is_finite());
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
    }
}
