//! Pointwise link functions standing in for the MLP.

use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A scalar map with `phi((a + b) / 2) = a * b` on `{-1, +1}`.
pub trait Link<S: Scalar>: Debug + Send + Sync {
    fn name(&self) -> &str;

    fn eval(&self, t: S) -> S;

    fn deriv(&self, t: S) -> S;

    /// `phi''(0) / 2`, by a five-point stencil unless overridden.
    fn curvature(&self) -> S {
        let h = S::of(1e-3);
        let f = |x: S| self.eval(x);
        let second = (-f(h + h) + S::of(16.0) * f(h) - S::of(30.0) * f(S::zero()) + S::of(16.0) * f(-h) - f(-h - h))
            / (S::of(12.0) * h * h);
        second / S::of(2.0)
    }

    /// Global bound on `|phi''| / 2`, used by the concentration bounds.
    fn second_order_bound(&self) -> S {
        self.curvature().abs()
    }
}

/// `phi(t) = -cos(pi t)`; curvature `pi^2 / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CosineLink;

impl<S: Scalar> Link<S> for CosineLink {
    fn name(&self) -> &str {
        "cosine"
    }

    fn eval(&self, t: S) -> S {
        -(S::PI() * t).cos()
    }

    fn deriv(&self, t: S) -> S {
        S::PI() * (S::PI() * t).sin()
    }

    fn curvature(&self) -> S {
        S::PI() * S::PI() / S::of(2.0)
    }

    fn second_order_bound(&self) -> S {
        S::PI() * S::PI() / S::of(2.0)
    }
}

/// Checks the link properties the model relies on.
///
/// `tol` bounds the endpoint values and slopes; the derivative is compared
/// to a central difference with step `1e-5` against tolerance `1e-7`.
pub fn validate_link<S: Scalar>(link: &dyn Link<S>, tol: f64) -> Result<()> {
    let fail = |property, detail: String| Err(Error::Link { property, detail });
    let one = S::one();
    let checks = [
        ("phi(0) = -1", link.eval(S::zero()) + one),
        ("phi(1) = 1", link.eval(one) - one),
        ("phi(-1) = 1", link.eval(-one) - one),
        ("phi'(0) = 0", link.deriv(S::zero())),
        ("phi'(1) = 0", link.deriv(one)),
        ("phi'(-1) = 0", link.deriv(-one)),
    ];
    for (property, err) in checks {
        if err.as_f64().abs() > tol || !err.is_finite() {
            return fail(property, format!("residual {err}"));
        }
    }
    for a in [-1.0, 1.0] {
        for b in [-1.0, 1.0] {
            let got = link.eval(S::of((a + b) / 2.0)).as_f64();
            if (got - a * b).abs() > tol {
                return fail("phi((a+b)/2) = ab", format!("a = {a}, b = {b}: {got}"));
            }
        }
    }
    let h = 1e-5;
    for i in 0..=40 {
        let t = -1.0 + 0.05 * i as f64;
        let fd = (link.eval(S::of(t + h)).as_f64() - link.eval(S::of(t - h)).as_f64()) / (2.0 * h);
        let d = link.deriv(S::of(t)).as_f64();
        if (fd - d).abs() > 1e-7 {
            return fail("derivative", format!("at {t}: analytic {d}, difference {fd}"));
        }
    }
    Ok(())
}
