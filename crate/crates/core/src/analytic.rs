//! Closed-form rate functions, the radial extremal functions behind the lower
//! bounds, the iterated-logarithm counterexamples, and grid-free radial
//! quadrature on the unit ball in any dimension.
//!
//! All ball integrals are reduced to `int f(r) r^{d-1} dr`; the sphere
//! measure cancels in every ratio computed here.

use serde::{Deserialize, Serialize};

use crate::quadrature::integrate_with;
use crate::{Error, Result};

/// Sharp growth factor `rho` or the weaker critical-case rate `rho~`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateVariant {
    Sharp,
    Tilde,
}

/// Growth of the subsampled Poincaré constant in `x = H/h`:
/// `1` for `d < p`, `x^{(d-p)/p}` for `d > p`, and at `d = p` either
/// `(ln(x+1))^{(d-1)/d}` (sharp) or `ln(x+1)` (tilde).
pub fn rho(variant: RateVariant, p: f64, d: usize, x: f64) -> f64 {
    let df = d as f64;
    if df < p {
        1.0
    } else if df > p {
        x.powf((df - p) / p)
    } else {
        let l = (x + 1.0).ln();
        match variant {
            RateVariant::Sharp => l.powf((df - 1.0) / df),
            RateVariant::Tilde => l,
        }
    }
}

/// Radially symmetric profile `u(|x|)` on the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RadialFunction {
    /// `max{0, ln(1+r/h) - ln 2} / ln(1+1/h)`, extremal in the critical case.
    CriticalLog { h: f64 },
    /// `min{max{r-h, 0}/h, 1}`, extremal when `d > p`.
    CriticalRamp { h: f64 },
    /// `ln ln(1/r + 1)`: finite weighted norm yet infinite at the origin.
    LogLog,
    /// `ln ln ln(1/r + 1)`, the counterexample for the borderline
    /// logarithmic weight; defined for `r < 1/(e-1)`.
    LogLogLog,
    /// `r^exponent`.
    Power { exponent: f64 },
    Constant { value: f64 },
}

impl RadialFunction {
    pub fn name(&self) -> &'static str {
        match self {
            RadialFunction::CriticalLog { .. } => "critical_log",
            RadialFunction::CriticalRamp { .. } => "critical_ramp",
            RadialFunction::LogLog => "loglog",
            RadialFunction::LogLogLog => "logloglog",
            RadialFunction::Power { .. } => "power",
            RadialFunction::Constant { .. } => "constant",
        }
    }

    /// Radii where the profile has a kink.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            RadialFunction::CriticalLog { h } => vec![h],
            RadialFunction::CriticalRamp { h } => vec![h, 2.0 * h],
            _ => Vec::new(),
        }
    }

    fn singular_at_origin(&self) -> bool {
        match *self {
            RadialFunction::LogLog | RadialFunction::LogLogLog => true,
            RadialFunction::Power { exponent } => exponent < 0.0,
            _ => false,
        }
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("radius must be nonnegative, got {r}")));
        }
        if r == 0.0 && self.singular_at_origin() {
            return Err(Error::Domain(format!("{} diverges at the origin", self.name())));
        }
        if let RadialFunction::LogLogLog = self {
            if r >= 1.0 / (std::f64::consts::E - 1.0) {
                return Err(Error::Domain(format!("logloglog is only defined for r < 1/(e-1), got {r}")));
            }
        }
        Ok(())
    }

    /// `u(r)`; errors signal divergence at the origin or evaluation outside
    /// the profile's domain.
    pub fn eval(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        Ok(self.eval_unchecked(r))
    }

    /// `u'(r)`, one-sided (from the right) at kinks.
    pub fn deriv(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        if r == 0.0 {
            if let RadialFunction::Power { exponent } = *self {
                if exponent < 1.0 && exponent != 0.0 {
                    return Err(Error::Domain("power profile has an infinite slope at the origin".into()));
                }
            }
        }
        Ok(self.deriv_unchecked(r))
    }

    fn eval_unchecked(&self, r: f64) -> f64 {
        match *self {
            RadialFunction::CriticalLog { h } => {
                ((1.0 + r / h).ln() - std::f64::consts::LN_2).max(0.0) / (1.0 + 1.0 / h).ln()
            }
            RadialFunction::CriticalRamp { h } => ((r - h).max(0.0) / h).min(1.0),
            RadialFunction::LogLog => (1.0 / r).ln_1p().ln(),
            RadialFunction::LogLogLog => (1.0 / r).ln_1p().ln().ln(),
            RadialFunction::Power { exponent } => r.powf(exponent),
            RadialFunction::Constant { value } => value,
        }
    }

    fn deriv_unchecked(&self, r: f64) -> f64 {
        match *self {
            RadialFunction::CriticalLog { h } => {
                if r < h {
                    0.0
                } else {
                    1.0 / ((h + r) * (1.0 + 1.0 / h).ln())
                }
            }
            RadialFunction::CriticalRamp { h } => {
                if r < h || r >= 2.0 * h {
                    0.0
                } else {
                    1.0 / h
                }
            }
            RadialFunction::LogLog => -1.0 / ((r + r * r) * (1.0 / r).ln_1p()),
            RadialFunction::LogLogLog => {
                let l = (1.0 / r).ln_1p();
                -1.0 / (l.ln() * l * (r + r * r))
            }
            RadialFunction::Power { exponent } => {
                if exponent == 0.0 {
                    0.0
                } else {
                    exponent * r.powf(exponent - 1.0)
                }
            }
            RadialFunction::Constant { .. } => 0.0,
        }
    }
}

/// Extremal family used by [`critical_ratio`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    /// Logarithmic profile, for the critical case `d = p`.
    Log,
    /// Linear ramp between `h` and `2h`, for `d > p`.
    Ramp,
}

/// Geometric breakpoints `h, 2h, 4h, .. < 1` that help the adaptive rule on
/// integrands varying on the scale of `r`.
fn dyadic_breaks(h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = h;
    while r < 1.0 {
        out.push(r);
        r *= 2.0;
    }
    out
}

fn radial_lp(f: impl Fn(f64) -> f64, d: usize, p: f64, breaks: &[f64]) -> f64 {
    let dm1 = (d - 1) as i32;
    integrate_with(|r: f64| f(r).abs().powf(p) * r.powi(dm1), 0.0, 1.0, breaks, 1e-13, 1e-12)
        .value
        .powf(1.0 / p)
}

/// `|u_h - avg_{B(0,h)} u_h|_{L^p(B)} / |grad u_h|_{L^p(B)}` on the unit
/// ball `B` for the extremal profile of the regime. Both profiles vanish on
/// `B(0,h)`, so the subtracted average is zero.
pub fn critical_ratio(kind: CriticalKind, d: usize, p: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 0.25) {
        return Err(Error::Domain(format!("extremal profiles need 0 < h <= 1/4, got {h}")));
    }
    if !(p >= 1.0) || d == 0 {
        return Err(Error::Domain(format!("need p >= 1 and d >= 1, got p = {p}, d = {d}")));
    }
    let df = d as f64;
    let f = match kind {
        CriticalKind::Log if df == p => RadialFunction::CriticalLog { h },
        CriticalKind::Ramp if df > p => RadialFunction::CriticalRamp { h },
        CriticalKind::Log => return Err(Error::Domain(format!("logarithmic profile is for d = p, got d = {d}, p = {p}"))),
        CriticalKind::Ramp => return Err(Error::Domain(format!("ramp profile is for d > p, got d = {d}, p = {p}"))),
    };
    let mut breaks = dyadic_breaks(h);
    breaks.extend(f.kinks());
    // Both profiles vanish on the averaging ball, so the average is zero.
    let num = radial_lp(|r| f.eval_unchecked(r), d, p, &breaks);
    let den = radial_lp(|r| f.deriv_unchecked(r), d, p, &breaks);
    Ok(num / den)
}

/// Ball averages and the magnitudes of successive differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallAverages {
    pub radii: Vec<f64>,
    pub averages: Vec<f64>,
    /// `|avg_{k+1} - avg_k|`, one shorter than `averages`.
    pub differences: Vec<f64>,
}

/// Upper limit of the logarithmic variable `s` with `r = h e^{-s}`; the
/// neglected weight `e^{-d s}` is below `1e-34`.
const LOG_DEPTH: f64 = 80.0;

/// `avg_{B(0,h)} f = d int_0^h f(r) r^{d-1} dr / h^d` for each radius. The
/// integral is evaluated as `d int_0^inf f(h e^{-s}) e^{-d s} ds`, which
/// resolves logarithmic singularities at the origin.
pub fn ball_average_sequence(f: &RadialFunction, d: usize, radii: &[f64]) -> Result<BallAverages> {
    if d == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if radii.windows(2).any(|w| !(w[1] < w[0])) || radii.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::Domain("radii must lie in (0, 1] and strictly decrease".into()));
    }
    if let RadialFunction::Power { exponent } = *f {
        if exponent <= -(d as f64) {
            return Err(Error::Domain(format!("r^{exponent} is not integrable near the origin in dimension {d}")));
        }
    }
    if let RadialFunction::LogLogLog = f {
        if radii[0] >= 1.0 / (std::f64::consts::E - 1.0) {
            return Err(Error::Domain("logloglog averages need radii below 1/(e-1)".into()));
        }
    }
    let df = d as f64;
    let averages = radii
        .iter()
        .map(|&h| {
            let breaks: Vec<f64> = f.kinks().iter().filter(|&&k| k < h).map(|&k| (h / k).ln()).collect();
            let g = |s: f64| f.eval_unchecked(h * (-s).exp()) * (-df * s).exp();
            let est = integrate_with(g, 0.0, LOG_DEPTH, &breaks, 1e-14, 1e-13);
            if est.value.is_finite() {
                Ok(df * est.value)
            } else {
                Err(Error::Domain(format!("ball average of {} diverges at radius {h}", f.name())))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let differences = averages.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(BallAverages { radii: radii.to_vec(), averages, differences })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_branches() {
        assert_eq!(rho(RateVariant::Sharp, 2.0, 1, 123.0), 1.0);
        assert!((rho(RateVariant::Tilde, 2.0, 2, 3.0) - 4f64.ln()).abs() < 1e-15);
        assert!((rho(RateVariant::Sharp, 2.0, 2, 3.0) - 4f64.ln().sqrt()).abs() < 1e-15);
        assert!((rho(RateVariant::Sharp, 2.0, 2, 3.0) - 1.1774).abs() < 1e-4);
        assert!((rho(RateVariant::Sharp, 2.0, 3, 4.0) - 2.0).abs() < 1e-15);
        assert_eq!(rho(RateVariant::Tilde, 2.0, 3, 4.0), rho(RateVariant::Sharp, 2.0, 3, 4.0));
    }

    #[test]
    fn sharp_rate_is_below_tilde_once_log_exceeds_one() {
        for k in 0..50 {
            let x = std::f64::consts::E - 1.0 + k as f64 * 3.0;
            for d in 2..=4 {
                let p = d as f64;
                assert!(rho(RateVariant::Sharp, p, d, x) <= rho(RateVariant::Tilde, p, d, x) + 1e-15);
            }
        }
    }

    #[test]
    fn point_values() {
        let ramp = RadialFunction::CriticalRamp { h: 0.1 };
        assert_eq!(ramp.eval(0.05).unwrap(), 0.0);
        assert!((ramp.eval(0.15).unwrap() - 0.5).abs() < 1e-15);
        assert!((RadialFunction::LogLog.eval(0.1).unwrap() - 11f64.ln().ln()).abs() < 1e-15);
        assert!((RadialFunction::LogLog.eval(0.1).unwrap() - 0.8746).abs() < 1e-3);
        assert!(matches!(RadialFunction::LogLog.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(RadialFunction::LogLogLog.eval(0.7), Err(Error::Domain(_))));
        let log = RadialFunction::CriticalLog { h: 0.05 };
        for k in 0..=10 {
            assert_eq!(log.eval(0.05 * k as f64 / 10.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn derivative_rules_match_finite_differences() {
        let kinds = [
            RadialFunction::CriticalLog { h: 0.1 },
            RadialFunction::CriticalRamp { h: 0.1 },
            RadialFunction::LogLog,
            RadialFunction::LogLogLog,
            RadialFunction::Power { exponent: 0.9 },
            RadialFunction::Constant { value: 2.0 },
        ];
        for f in kinds {
            let top = if f == RadialFunction::LogLogLog { 0.55 } else { 1.0 };
            for k in 1..=100 {
                let r = top * (k as f64 - 0.37) / 100.0;
                if f.kinks().iter().any(|&c| (r - c).abs() < 1e-3) {
                    continue;
                }
                let eps = 1e-6 * r.max(1e-3);
                let fd = (f.eval(r + eps).unwrap() - f.eval(r - eps).unwrap()) / (2.0 * eps);
                let exact = f.deriv(r).unwrap();
                assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "{f:?} at {r}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn ramp_gradient_closed_form() {
        // int_h^{2h} h^{-2} r^2 dr = 7h/3
        for h in [0.25, 0.1, 1.0 / 64.0] {
            let f = RadialFunction::CriticalRamp { h };
            let v = integrate_with(|r: f64| f.deriv_unchecked(r).powi(2) * r * r, 0.0, 1.0, &[h, 2.0 * h], 1e-14, 1e-14).value;
            assert!((v - 7.0 * h / 3.0).abs() < 1e-8 * h);
        }
    }

    #[test]
    fn regime_and_range_checks() {
        assert!(matches!(critical_ratio(CriticalKind::Log, 3, 2.0, 0.1), Err(Error::Domain(_))));
        assert!(matches!(critical_ratio(CriticalKind::Ramp, 2, 2.0, 0.1), Err(Error::Domain(_))));
        assert!(matches!(critical_ratio(CriticalKind::Log, 2, 2.0, 0.3), Err(Error::Domain(_))));
        assert!(critical_ratio(CriticalKind::Log, 2, 2.0, 0.25).unwrap() > 0.0);
    }

    #[test]
    fn ratios_grow_as_h_shrinks() {
        let hs = [0.25, 0.125, 0.0625, 0.03125];
        for (kind, d, p) in [(CriticalKind::Log, 2, 2.0), (CriticalKind::Ramp, 3, 2.0), (CriticalKind::Ramp, 2, 1.0)] {
            let v: Vec<f64> = hs.iter().map(|&h| critical_ratio(kind, d, p, h).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[1] > w[0]), "{kind:?} {v:?}");
        }
    }

    #[test]
    fn ramp_in_two_dimensions_with_p_one_scales_like_one_over_h() {
        let v: Vec<f64> = [0.25, 0.125, 0.0625, 0.03125].iter().map(|&h| h * critical_ratio(CriticalKind::Ramp, 2, 1.0, h).unwrap()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(v.iter().all(|x| (x / mean - 1.0).abs() <= 0.25), "{v:?}");
    }

    #[test]
    fn ball_averages_of_simple_profiles() {
        let radii = [0.5, 0.25, 0.125];
        let c = ball_average_sequence(&RadialFunction::Constant { value: 3.0 }, 2, &radii).unwrap();
        assert!(c.averages.iter().all(|a| (a - 3.0).abs() < 1e-12));
        assert!(c.differences.iter().all(|&x| x < 1e-12));
        // avg of r over B(0,h) in 2D is 2h/3
        let r = ball_average_sequence(&RadialFunction::Power { exponent: 1.0 }, 2, &radii).unwrap();
        for (a, h) in r.averages.iter().zip(radii) {
            assert!((a - 2.0 * h / 3.0).abs() < 1e-12);
        }
        assert!(ball_average_sequence(&RadialFunction::Power { exponent: 1.0 }, 2, &[0.1, 0.2]).is_err());
        assert!(ball_average_sequence(&RadialFunction::Power { exponent: -2.0 }, 2, &[0.1]).is_err());
    }

    #[test]
    fn loglog_averages_blow_up() {
        let radii: Vec<f64> = (1..=12).map(|k| 10f64.powi(-k)).collect();
        let s = ball_average_sequence(&RadialFunction::LogLog, 2, &radii).unwrap();
        assert!(s.averages.windows(2).all(|w| w[1] > w[0]));
        assert!(*s.averages.last().unwrap() > 3.0);
    }
}
