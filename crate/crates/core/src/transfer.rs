//! Closed-form transfer function of the ASN.
//!
//! `f(S)` maps a constant activation to the mean postsynaptic contribution of
//! the neuron's spike train. It comes from a steady-state analysis: once the
//! neuron has settled, threshold, refractory response and outgoing PSC return
//! to the same values `ϑ_l`, `Ŝ_l`, `I_l` at every spike, separated by a fixed
//! inter-spike interval `t_e`. A second-order expansion of the exponentials
//! gives `t_e` in closed form; substituting it into `I_l` and shifting so the
//! curve starts at `S = ϑ₀/2` yields
//!
//! ```text
//! f(S) = max(0, h / (exp((c1·S + c2)/(c3·S + c4)) − 1) − c0 + h/2)   for S > ϑ₀/2
//! ```
//!
//! and zero otherwise. The `+h/2` term is the mean-between-spikes correction
//! (`I` oscillates between `I_l` and `I_l + h`), so `f` jumps to roughly `h/2`
//! just above `ϑ₀/2`. [`floor`] is the same curve without that term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronParams;

/// Exponent arguments above this bound make `h/(e^x − 1)` vanish in f64.
pub const EXPONENT_GUARD: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub h: f64,
}

impl TransferConstants {
    /// `(c1·S + c2)/(c3·S + c4)`.
    pub fn exponent(&self, s: f64) -> f64 {
        (self.c1 * s + self.c2) / (self.c3 * s + self.c4)
    }

    /// `h/(exp(exponent(S)) − 1)`, with the overflow guard.
    fn decayed_term(&self, s: f64) -> f64 {
        let x = self.exponent(s);
        if x > EXPONENT_GUARD {
            0.0
        } else {
            self.h / x.exp_m1()
        }
    }
}

/// Constants `c0..c4` of the closed form. Accepts `m_f = 0` (no adaptation),
/// which the neuron itself does not.
pub fn constants_from(params: &NeuronParams) -> Result<TransferConstants> {
    if params.m_f == 0.0 {
        NeuronParams {
            m_f: 1.0,
            ..*params
        }
        .validate()?;
    } else {
        params.validate()?;
    }
    let NeuronParams {
        theta0,
        m_f,
        tau_gamma: tg,
        tau_eta: te,
        h,
        ..
    } = *params;
    let c1 = 2.0 * m_f * tg * tg;
    let c2 = 2.0 * theta0 * te * tg;
    let c3 = tg * (m_f * tg + 2.0 * (m_f + 1.0) * te);
    let c4 = theta0 * te * (tg + te);
    let mut c = TransferConstants {
        c0: 0.0,
        c1,
        c2,
        c3,
        c4,
        h,
    };
    c.c0 = c.decayed_term(theta0 / 2.0);
    Ok(c)
}

/// `f(S)` with the mean-between-spikes correction.
pub fn f(s: f64, consts: &TransferConstants, theta0: f64) -> f64 {
    if !(s > theta0 / 2.0) {
        return 0.0;
    }
    (consts.decayed_term(s) - consts.c0 + consts.h / 2.0).max(0.0)
}

/// The shifted steady-state PSC floor `I_l(S) − I_l(ϑ₀/2)`, zero at `ϑ₀/2`.
pub fn floor(s: f64, consts: &TransferConstants, theta0: f64) -> f64 {
    if !(s > theta0 / 2.0) {
        return 0.0;
    }
    (consts.decayed_term(s) - consts.c0).max(0.0)
}

/// Analytic `df/dS`; zero on the flat region and where the rectifier clamps.
pub fn f_prime(s: f64, consts: &TransferConstants, theta0: f64) -> f64 {
    if !(s > theta0 / 2.0) {
        return 0.0;
    }
    let x = consts.exponent(s);
    if x > EXPONENT_GUARD || consts.decayed_term(s) - consts.c0 + consts.h / 2.0 <= 0.0 {
        return 0.0;
    }
    let denom = consts.c3 * s + consts.c4;
    let dx = (consts.c1 * consts.c4 - consts.c2 * consts.c3) / (denom * denom);
    let em1 = x.exp_m1();
    -consts.h * (em1 + 1.0) * dx / (em1 * em1)
}

fn firing_domain(params: &NeuronParams, s: f64) -> Result<()> {
    params.validate()?;
    if !(s.is_finite() && s > params.theta0 / 2.0) {
        return Err(Error::Domain(format!(
            "S = {s} must exceed theta0/2 = {}",
            params.theta0 / 2.0
        )));
    }
    Ok(())
}

/// Closed-form inter-spike interval (ms) from the second-order expansion.
pub fn steady_state_isi(params: &NeuronParams, s: f64) -> Result<f64> {
    firing_domain(params, s)?;
    let NeuronParams {
        theta0,
        m_f,
        tau_gamma: tg,
        tau_eta: te,
        ..
    } = *params;
    let num = 2.0 * tg * te * (s * m_f * tg + theta0 * te);
    let den = s * tg * (m_f * tg + 2.0 * (m_f + 1.0) * te) + theta0 * tg * te + theta0 * te * te;
    Ok(num / den)
}

/// Inter-spike interval as `S → ∞` under the closed form.
pub fn isi_ceiling(params: &NeuronParams) -> f64 {
    let NeuronParams {
        m_f,
        tau_gamma: tg,
        tau_eta: te,
        ..
    } = *params;
    2.0 * te * m_f * tg / (m_f * tg + 2.0 * (m_f + 1.0) * te)
}

/// Residual of the exact steady-state balance (valid for `τ_β = τ_η`):
///
/// `(2S+ϑ₀)e^{-t/τη} − (2S(m+1)+ϑ₀)e^{-t(1/τγ+1/τη)} + (2S(m+1)−ϑ₀)e^{-t/τγ} − (2S−ϑ₀)`.
pub fn balance_residual(params: &NeuronParams, s: f64, t: f64) -> f64 {
    let NeuronParams {
        theta0,
        m_f,
        tau_gamma: tg,
        tau_eta: te,
        ..
    } = *params;
    let a = (-t / te).exp();
    let b = (-t / tg).exp();
    let up = 2.0 * s * (m_f + 1.0);
    (2.0 * s + theta0) * a - (up + theta0) * a * b + (up - theta0) * b - (2.0 * s - theta0)
}

/// Inter-spike interval (ms) from the exact steady-state balance, without the
/// series expansion. Solved by bracketing and bisection.
///
/// The residual vanishes at `t = 0`, rises (its slope there is
/// `2S·m_f/τη + 2ϑ₀/τγ > 0`) and tends to `ϑ₀ − 2S < 0`, so exactly one
/// positive root is bracketed by scanning outward.
pub fn steady_state_isi_exact(params: &NeuronParams, s: f64) -> Result<f64> {
    firing_domain(params, s)?;
    let g = |t: f64| balance_residual(params, s, t);
    let mut lo = 1e-6 * params.tau_gamma.min(params.tau_eta);
    if g(lo) <= 0.0 {
        return Err(Error::Domain(format!("no positive interval for S = {s}")));
    }
    let mut hi = lo;
    loop {
        hi *= 1.5;
        if g(hi) < 0.0 {
            break;
        }
        lo = hi;
        if hi > 1e12 {
            return Err(Error::Domain(format!("interval diverges for S = {s}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Steady-state spike-time values for a given inter-spike interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub theta_l: f64,
    pub s_hat_l: f64,
    pub i_l: f64,
    pub t_e: f64,
}

impl SteadyState {
    pub fn with_interval(params: &NeuronParams, s: f64, t_e: f64) -> Self {
        let g = (-t_e / params.tau_gamma).exp();
        let n = (-t_e / params.tau_eta).exp();
        let theta_l = params.theta0 * (1.0 - g) / (1.0 - (params.m_f + 1.0) * g);
        Self {
            theta_l,
            s_hat_l: s - 0.5 * theta_l,
            i_l: params.h * n / (1.0 - n),
            t_e,
        }
    }

    /// Uses the closed-form interval.
    pub fn closed_form(params: &NeuronParams, s: f64) -> Result<Self> {
        Ok(Self::with_interval(params, s, steady_state_isi(params, s)?))
    }

    /// Uses the exactly solved interval.
    pub fn exact(params: &NeuronParams, s: f64) -> Result<Self> {
        Ok(Self::with_interval(
            params,
            s,
            steady_state_isi_exact(params, s)?,
        ))
    }
}

/// The spike height that makes `f(1) = 1`.
///
/// Both the main term and `c0` scale linearly with `h`, so the answer is the
/// reciprocal of `f(1)` evaluated at unit height.
pub fn normalize_h(params: &NeuronParams) -> Result<f64> {
    let unit = constants_from(&params.with_h(1.0))?;
    let at_one = f(1.0, &unit, params.theta0);
    if !(at_one > 0.0) {
        return Err(Error::Parameter(format!(
            "theta0 = {} leaves f(1) = {at_one}; cannot normalize",
            params.theta0
        )));
    }
    Ok(1.0 / at_one)
}

/// Parameters with `h` replaced by its normalized value.
pub fn normalized(params: &NeuronParams) -> Result<NeuronParams> {
    Ok(params.with_h(normalize_h(params)?))
}

/// A transfer curve bound to a parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub theta0: f64,
    pub consts: TransferConstants,
}

impl Transfer {
    pub fn new(params: &NeuronParams) -> Result<Self> {
        Ok(Self {
            theta0: params.theta0,
            consts: constants_from(params)?,
        })
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        f(s, &self.consts, self.theta0)
    }

    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        f_prime(s, &self.consts, self.theta0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(theta0: f64) -> NeuronParams {
        NeuronParams::default().with_precision(theta0)
    }

    #[test]
    fn constants_at_defaults() {
        let c = constants_from(&NeuronParams::default()).unwrap();
        assert_relative_eq!(c.c1, 45.0, max_relative = 1e-12);
        assert_relative_eq!(c.c2, 150.0, max_relative = 1e-12);
        assert_relative_eq!(c.c3, 1672.5, max_relative = 1e-12);
        assert_relative_eq!(c.c4, 325.0, max_relative = 1e-12);
        assert_eq!(c.h, 1.0);
    }

    #[test]
    fn constants_match_independent_recomputation() {
        for (theta0, m_f, tg, te) in [(0.05, 0.2, 10.0, 30.0), (1.0, 0.5, 15.0, 80.0)] {
            let p = NeuronParams {
                theta0,
                m_f,
                tau_gamma: tg,
                tau_eta: te,
                h: 0.7,
                ..Default::default()
            };
            let c = constants_from(&p).unwrap();
            assert_relative_eq!(c.c1, 2.0 * m_f * tg.powi(2), max_relative = 1e-12);
            assert_relative_eq!(c.c2, 2.0 * theta0 * te * tg, max_relative = 1e-12);
            assert_relative_eq!(
                c.c3,
                tg * (m_f * tg + 2.0 * (m_f + 1.0) * te),
                max_relative = 1e-12
            );
            assert_relative_eq!(c.c4, theta0 * te * (tg + te), max_relative = 1e-12);
            let s = theta0 / 2.0;
            let c0 = 0.7 / (((c.c1 * s + c.c2) / (c.c3 * s + c.c4)).exp() - 1.0);
            assert_relative_eq!(c.c0, c0, max_relative = 1e-12);
        }
    }

    #[test]
    fn degenerate_and_linear_constants() {
        let p = NeuronParams::default();
        assert_eq!(
            constants_from(&NeuronParams { m_f: 0.0, ..p }).unwrap().c1,
            0.0
        );
        let c = constants_from(&p).unwrap();
        let doubled = constants_from(&NeuronParams { theta0: 0.2, ..p }).unwrap();
        assert_relative_eq!(doubled.c2, 2.0 * c.c2, max_relative = 1e-12);
        assert_relative_eq!(doubled.c4, 2.0 * c.c4, max_relative = 1e-12);
        assert_eq!(doubled.c1, c.c1);
        assert_eq!(doubled.c3, c.c3);
    }

    #[test]
    fn floor_is_zero_at_half_threshold() {
        for theta0 in [0.05, 0.1, 0.3, 1.0] {
            let p = params(theta0);
            let c = constants_from(&p).unwrap();
            assert_eq!(floor(theta0 / 2.0, &c, theta0), 0.0);
            let just_above = theta0 / 2.0 * (1.0 + 1e-12);
            assert!(floor(just_above, &c, theta0) < 1e-9);
            // f keeps the +h/2 offset just above the threshold.
            assert_relative_eq!(f(just_above, &c, theta0), 0.5, max_relative = 1e-6);
        }
    }

    #[test]
    fn f_is_zero_on_the_flat_region() {
        let p = NeuronParams::default();
        let c = constants_from(&p).unwrap();
        for s in [-3.0, 0.0, 0.02, 0.05] {
            assert_eq!(f(s, &c, p.theta0), 0.0);
            assert_eq!(f_prime(s, &c, p.theta0), 0.0);
        }
    }

    #[test]
    fn overflow_guard_returns_asymptote() {
        let c = TransferConstants {
            c0: 0.0,
            c1: 1e6,
            c2: 0.0,
            c3: 1.0,
            c4: 0.0,
            h: 1.0,
        };
        assert_eq!(f(1.0, &c, 0.1), 0.5);
        assert_eq!(f_prime(1.0, &c, 0.1), 0.0);
    }

    #[test]
    fn normalization() {
        for theta0 in [0.03, 0.05, 0.1, 0.3, 0.5, 1.0] {
            let p = normalized(&params(theta0)).unwrap();
            let t = Transfer::new(&p).unwrap();
            assert!((t.eval(1.0) - 1.0).abs() <= 1e-12, "theta0 {theta0}");
        }
    }

    #[test]
    fn normalization_is_reciprocal_of_unit_height_value() {
        let p = params(0.1);
        let unit = Transfer::new(&p.with_h(1.0)).unwrap().eval(1.0);
        assert_eq!(normalize_h(&p).unwrap(), 1.0 / unit);
    }

    #[test]
    fn higher_rate_needs_smaller_spikes() {
        let grid = [1.0, 0.5, 0.3, 0.1, 0.05, 0.03];
        let hs: Vec<f64> = grid
            .iter()
            .map(|&t| normalize_h(&params(t)).unwrap())
            .collect();
        assert!(hs.windows(2).all(|w| w[1] < w[0]), "{hs:?}");
    }

    #[test]
    fn normalization_fails_when_one_is_subthreshold() {
        assert!(matches!(
            normalize_h(&params(2.5)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn derivative_matches_central_differences() {
        for theta0 in [0.05, 0.1, 0.3, 1.0] {
            let p = params(theta0);
            let t = Transfer::new(&p).unwrap();
            let lo = theta0 / 2.0;
            for i in 1..=100 {
                let s = lo + (3.0 - lo) * i as f64 / 100.0;
                let step = 1e-5;
                let fd = (t.eval(s + step) - t.eval(s - step)) / (2.0 * step);
                let an = t.derivative(s);
                assert!(an > 0.0);
                assert!(
                    (an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()),
                    "theta0 {theta0} S {s}: analytic {an} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn f_is_nondecreasing_and_bounded_by_the_ceiling() {
        for theta0 in [0.05, 0.1, 0.3, 1.0] {
            let p = params(theta0);
            let t = Transfer::new(&p).unwrap();
            let ceiling = p.h / (isi_ceiling(&p) / p.tau_eta).exp_m1() - t.consts.c0 + p.h / 2.0;
            let mut prev = 0.0;
            for i in 0..2000 {
                let s = i as f64 * 0.05;
                let y = t.eval(s);
                assert!(y >= prev);
                assert!(y <= ceiling + 1e-12);
                prev = y;
            }
        }
    }

    #[test]
    fn isi_limit_and_ordering() {
        let p = NeuronParams::default();
        let far = steady_state_isi(&p, 1e9).unwrap();
        assert_relative_eq!(far, isi_ceiling(&p), max_relative = 1e-6);
        let grid = [1.0, 0.5, 0.3, 0.1, 0.05, 0.03];
        let isis: Vec<f64> = grid
            .iter()
            .map(|&t| steady_state_isi(&params(t), 1.0).unwrap())
            .collect();
        assert!(isis.windows(2).all(|w| w[1] < w[0]), "{isis:?}");
    }

    #[test]
    fn isi_domain_error() {
        let p = NeuronParams::default();
        assert!(matches!(steady_state_isi(&p, 0.05), Err(Error::Domain(_))));
        assert!(matches!(
            steady_state_isi_exact(&p, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn exact_interval_solves_the_balance() {
        for theta0 in [0.05, 0.1, 0.3, 1.0] {
            let p = params(theta0);
            for s in [0.6 * theta0, theta0, 1.0, 2.0] {
                let t = steady_state_isi_exact(&p, s).unwrap();
                assert!(t > 0.0);
                assert!(balance_residual(&p, s, t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn steady_state_relations() {
        let p = NeuronParams::default();
        let ss = SteadyState::exact(&p, 1.0).unwrap();
        // Fixed point of the threshold recursion.
        let g = (-ss.t_e / p.tau_gamma).exp();
        let back = p.theta0 + (ss.theta_l - p.theta0) * g + p.m_f * ss.theta_l * g;
        assert_relative_eq!(back, ss.theta_l, max_relative = 1e-9);
        // Fixed point of the refractory recursion.
        let n = (-ss.t_e / p.tau_eta).exp();
        assert_relative_eq!(
            (ss.s_hat_l + ss.theta_l) * n,
            ss.s_hat_l,
            max_relative = 1e-9
        );
        // Fixed point of the PSC recursion.
        assert_relative_eq!((ss.i_l + p.h) * n, ss.i_l, max_relative = 1e-9);
        assert_relative_eq!(1.0 - ss.s_hat_l, ss.theta_l / 2.0, max_relative = 1e-12);
    }
}
