use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible b5·P_max (natural-log units).
pub const OVERFLOW_GUARD: f64 = 700.0;
/// Points used when scanning the domain for invariant violations.
pub const DOMAIN_SCAN: usize = 200;

/// The seven coefficients of the analytic activation
/// `P_out = b1·ln{b2 + b3·ln[b4 + (exp(b5·P) − 1)^b6]} + b7·P`,
/// together with the input domain they are valid on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationCoeffs {
    pub b: [f64; 7],
    /// mW
    pub p_max: f64,
    /// mW
    pub fit_rmse: f64,
    /// Hash of the transfer curve these were fitted to.
    pub source_hash: String,
    /// Detuning (rad/s) and pulse FWHM (ps) of the source curve.
    pub detuning: f64,
    pub fwhm_ps: f64,
    /// Set when the best fit missed the quality target.
    pub quality_warning: bool,
}

/// Intermediate quantities shared by the value, the input derivative and
/// the coefficient gradient.
#[derive(Debug, Clone, Copy)]
struct Parts {
    /// ln L where L = b4 + v, v = u^b6, u = exp(b5·P) − 1
    ln_l: f64,
    /// v / L
    v_over_l: f64,
    u: f64,
    /// ln u (−∞ at P = 0)
    ln_u: f64,
    /// A = b2 + b3·ln L
    a: f64,
}

impl ActivationCoeffs {
    pub fn new(b: [f64; 7], p_max: f64) -> Result<Self> {
        let c = Self {
            b,
            p_max,
            fit_rmse: 0.0,
            source_hash: String::new(),
            detuning: 0.0,
            fwhm_ps: 0.0,
            quality_warning: false,
        };
        c.validate()?;
        Ok(c)
    }

    /// Coefficients for which the activation is the identity map.
    pub fn identity(p_max: f64) -> Self {
        Self::new([0.0, std::f64::consts::E, 1.0, 1.0, 1.0, 1.0, 1.0], p_max)
            .expect("identity coefficients are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.b;
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Coefficients(format!("non-finite coefficient in {b:?}")));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::Coefficients(format!("P_max must be > 0, got {}", self.p_max)));
        }
        if !(b[4] > 0.0) || !(b[5] > 0.0) {
            return Err(Error::Coefficients(format!(
                "b5 and b6 must be positive (b5={}, b6={})",
                b[4], b[5]
            )));
        }
        if b[4] * self.p_max > OVERFLOW_GUARD {
            return Err(Error::Coefficients(format!(
                "b5·P_max = {} exceeds overflow guard {OVERFLOW_GUARD}",
                b[4] * self.p_max
            )));
        }
        if !domain_ok(b, self.p_max) {
            return Err(Error::Coefficients(format!(
                "log arguments not positive on [0, {}] for {b:?}",
                self.p_max
            )));
        }
        Ok(())
    }

    fn check_input(&self, p: f64) -> Result<()> {
        if !(0.0..=self.p_max).contains(&p) {
            return Err(Error::Domain {
                value: p,
                max: self.p_max,
            });
        }
        Ok(())
    }

    /// Activation value in mW.
    pub fn eval(&self, p: f64) -> Result<f64> {
        self.check_input(p)?;
        let parts = parts(&self.b, p).ok_or_else(|| self.breach(p))?;
        let y = value(&self.b, p, &parts);
        if !y.is_finite() {
            return Err(self.breach(p));
        }
        Ok(y)
    }

    /// dP_out/dP_in.
    pub fn derivative(&self, p: f64) -> Result<f64> {
        self.check_input(p)?;
        let parts = parts(&self.b, p).ok_or_else(|| self.breach(p))?;
        let d = input_derivative(&self.b, &parts).ok_or(Error::Singularity(p))?;
        if !d.is_finite() {
            return Err(self.breach(p));
        }
        Ok(d)
    }

    /// Value and derivative with saturation outside [0, P_max]: the input is
    /// clamped into the domain and the derivative is zero beyond it. Inputs
    /// below `floor` use the derivative at `floor` (avoids the b6 < 1 pole).
    pub fn eval_saturating(&self, p: f64, floor: f64) -> (f64, f64) {
        if p >= self.p_max {
            return (self.eval_unchecked(self.p_max), 0.0);
        }
        let p = p.max(0.0);
        let Some(pt) = parts(&self.b, p) else {
            return (f64::NAN, 0.0);
        };
        let v = value(&self.b, p, &pt);
        let d = if p >= floor {
            input_derivative(&self.b, &pt)
        } else {
            parts(&self.b, floor).and_then(|pt| input_derivative(&self.b, &pt))
        };
        (v, d.unwrap_or(0.0))
    }

    fn eval_unchecked(&self, p: f64) -> f64 {
        parts(&self.b, p).map_or(f64::NAN, |pt| value(&self.b, p, &pt))
    }

    fn breach(&self, p: f64) -> Error {
        Error::Coefficients(format!("log/pow domain violated at P_in={p} for {:?}", self.b))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

fn parts(b: &[f64; 7], p: f64) -> Option<Parts> {
    let x = b[4] * p;
    let u = x.exp_m1();
    if u < 0.0 {
        return None;
    }
    let ln_u = u.ln();
    let ln_v = b[5] * ln_u;
    // ln(b4 + v) without overflowing v.
    let (ln_l, v_over_l) = if ln_v == f64::NEG_INFINITY {
        if b[3] <= 0.0 {
            return None;
        }
        (b[3].ln(), 0.0)
    } else if ln_v > 30.0 {
        let r = b[3] * (-ln_v).exp();
        if 1.0 + r <= 0.0 {
            return None;
        }
        (ln_v + r.ln_1p(), 1.0 / (1.0 + r))
    } else {
        let v = ln_v.exp();
        let l = b[3] + v;
        if l <= 0.0 {
            return None;
        }
        (l.ln(), v / l)
    };
    let a = b[1] + b[2] * ln_l;
    if a <= 0.0 || !a.is_finite() {
        return None;
    }
    Some(Parts {
        ln_l,
        v_over_l,
        u,
        ln_u,
        a,
    })
}

fn value(b: &[f64; 7], p: f64, pt: &Parts) -> f64 {
    b[0] * pt.a.ln() + b[6] * p
}

/// (1/L)·∂v/∂P divided by b5, i.e. b6·u^(b6−1)·e^(b5P)/L. `None` at the
/// b6 < 1 pole.
fn dv_scaled(b: &[f64; 7], pt: &Parts) -> Option<f64> {
    if pt.ln_u == f64::NEG_INFINITY {
        // P = 0 (or b5 = 0): limit depends on b6.
        return if b[5] > 1.0 {
            Some(0.0)
        } else if b[5] == 1.0 {
            Some((-pt.ln_l).exp())
        } else {
            None
        };
    }
    // e^x / u = (1 + u) / u
    Some(b[5] * pt.v_over_l * (1.0 + pt.u) / pt.u)
}

fn input_derivative(b: &[f64; 7], pt: &Parts) -> Option<f64> {
    let g = dv_scaled(b, pt)?;
    Some(b[0] * b[2] / pt.a * g * b[4] + b[6])
}

/// Residual-space gradient ∂P_out/∂b_k. `None` where undefined.
pub(crate) fn coeff_gradient(b: &[f64; 7], p: f64) -> Option<(f64, [f64; 7])> {
    let pt = parts(b, p)?;
    let y = value(b, p, &pt);
    let k = b[0] / pt.a;
    let kl = k * b[2] * (-pt.ln_l).exp();
    let g = dv_scaled(b, &pt).unwrap_or(0.0);
    let dlog_v = if pt.ln_u == f64::NEG_INFINITY {
        0.0
    } else {
        // ∂L/∂b6 / L = (v/L)·ln u
        pt.v_over_l * pt.ln_u
    };
    let grad = [
        pt.a.ln(),
        k,
        k * pt.ln_l,
        kl,
        k * b[2] * g * p,
        k * b[2] * dlog_v,
        p,
    ];
    Some((y, grad))
}

/// True when both log arguments stay positive across a uniform scan of
/// [0, P_max] (plus the endpoints).
pub fn domain_ok(b: &[f64; 7], p_max: f64) -> bool {
    if !(b[4] > 0.0 && b[5] > 0.0) || b[4] * p_max > OVERFLOW_GUARD {
        return false;
    }
    (0..DOMAIN_SCAN).all(|i| {
        let p = p_max * i as f64 / (DOMAIN_SCAN - 1) as f64;
        parts(b, p).is_some_and(|pt| value(b, p, &pt).is_finite())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn generic() -> ActivationCoeffs {
        ActivationCoeffs::new([1.7, 1.3, 0.8, 0.6, 0.35, 1.4, 0.05], 60.0).unwrap()
    }

    // Frozen from tests/oracles/activation_mpmath.py (50-digit arithmetic).
    const REFERENCE: [(f64, f64); 10] = [
        (0.0, -0.19555081373191783406),
        (0.01, -0.19412216115849166372),
        (0.5, 0.047209746660975360524),
        (1.25, 0.54088891334403039699),
        (3.0, 1.4697749018521597289),
        (7.5, 2.8021247133234049331),
        (12.0, 3.6427145236966288559),
        (20.0, 4.7613375566184025427),
        (37.5, 6.5884005909679034808),
        (60.0, 8.4598046255618219751),
    ];

    #[test]
    fn matches_extended_precision_reference() {
        let c = generic();
        for (p, want) in REFERENCE {
            let got = c.eval(p).unwrap();
            assert!(((got - want) / want).abs() < 1e-12, "p={p}: {got} vs {want}");
        }
    }

    #[test]
    fn linear_degeneracy() {
        let c = ActivationCoeffs::new([0.0, 2.0, 0.5, 1.0, 0.3, 0.7, 1.0], 50.0).unwrap();
        for p in [0.0, 0.1, 3.3, 50.0] {
            assert_eq!(c.eval(p).unwrap(), p);
        }
        for p in [0.1, 3.3, 49.0] {
            assert_eq!(c.derivative(p).unwrap(), 1.0);
        }
    }

    #[test]
    fn constant_branch() {
        let c = ActivationCoeffs::new([5.0, E, 0.0, 1.0, 0.3, 1.0, 0.0], 50.0).unwrap();
        for p in [0.0, 7.0, 50.0] {
            assert!((c.eval(p).unwrap() - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn outside_domain_is_an_error() {
        let c = generic();
        assert!(matches!(c.eval(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(c.eval(60.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn singular_derivative_at_zero() {
        let c = ActivationCoeffs::new([1.0, 2.0, 1.0, 1.0, 0.2, 0.5, 0.0], 20.0).unwrap();
        assert!(matches!(c.derivative(0.0), Err(Error::Singularity(_))));
        assert!(c.derivative(1e-3).unwrap().is_finite());
    }

    #[test]
    fn invalid_coefficients_rejected() {
        // b2 + b3 ln b4 < 0 at P = 0
        assert!(ActivationCoeffs::new([1.0, 0.1, 1.0, 0.5, 0.2, 1.0, 0.0], 10.0).is_err());
        assert!(ActivationCoeffs::new([1.0, 2.0, 1.0, 1.0, 20.0, 1.0, 0.0], 40.0).is_err());
        assert!(ActivationCoeffs::new([1.0, 2.0, 1.0, 1.0, -0.2, 1.0, 0.0], 10.0).is_err());
    }

    #[test]
    fn large_arguments_stay_finite() {
        let c = ActivationCoeffs::new([1.0, 1.0, 1.0, 1.0, 6.0, 8.0, 0.0], 100.0).unwrap();
        let y = c.eval(100.0).unwrap();
        // ln(1 + 8·600) ≈ 8.476
        assert!((y - (1.0 + 8.0 * (600f64.exp_m1()).ln()).ln()).abs() < 1e-9, "{y}");
        assert!(c.derivative(100.0).unwrap().is_finite());
    }

    #[test]
    fn derivative_matches_central_differences() {
        let c = generic();
        let h = 1e-4;
        for i in 1..=20 {
            let p = 0.5 + i as f64 * 2.8;
            let fd = (c.eval(p + h).unwrap() - c.eval(p - h).unwrap()) / (2.0 * h);
            let an = c.derivative(p).unwrap();
            assert!(((an - fd) / an).abs() < 1e-5, "p={p} an={an} fd={fd}");
        }
    }

    #[test]
    fn coefficient_gradient_matches_differences() {
        let c = generic();
        for p in [0.0, 0.7, 5.0, 22.0, 59.0] {
            let (_, g) = coeff_gradient(&c.b, p).unwrap();
            for k in 0..7 {
                let h = 1e-6 * c.b[k].abs().max(1e-3);
                let mut up = c.b;
                let mut dn = c.b;
                up[k] += h;
                dn[k] -= h;
                let fd = (coeff_gradient(&up, p).unwrap().0 - coeff_gradient(&dn, p).unwrap().0)
                    / (2.0 * h);
                let scale = g[k].abs().max(1e-3);
                assert!((g[k] - fd).abs() / scale < 1e-5, "p={p} k={k} {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn saturating_evaluation() {
        let c = generic();
        let (v, d) = c.eval_saturating(80.0, 1e-6);
        assert_eq!(v, c.eval(60.0).unwrap());
        assert_eq!(d, 0.0);
        let (v0, _) = c.eval_saturating(-1.0, 1e-6);
        assert_eq!(v0, c.eval(0.0).unwrap());
    }

    #[test]
    fn json_round_trip_bit_exact() {
        let mut c = generic();
        c.fit_rmse = 0.012345678901234567;
        c.source_hash = "abc".into();
        c.detuning = -2.9e11;
        let back = ActivationCoeffs::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
