//! Scalar abstraction over `f64` and first-order dual numbers.
//!
//! Network evaluation and backpropagation are written once, generically over
//! [`Real`]. Instantiated at `f64` they produce values and exact reverse-mode
//! gradients; instantiated at [`Dual`] with a seeded direction they produce
//! directional derivatives of the gradient, i.e. exact Hessian columns
//! (forward-over-reverse). No finite differencing is involved anywhere in
//! this path.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic interface needed by the generic network evaluator.
pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal (value) part.
    fn value(self) -> f64;
    fn is_finite(self) -> bool;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn recip(self) -> Self;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
}

/// First-order dual number `re + du * eps` with `eps^2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub const fn new(re: f64, du: f64) -> Self {
        Dual { re, du }
    }

    /// Constant (zero derivative part).
    pub const fn constant(re: f64) -> Self {
        Dual { re, du: 0.0 }
    }

    /// Variable seeded with unit derivative.
    pub const fn seeded(re: f64) -> Self {
        Dual { re, du: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.du + rhs.du)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.du - rhs.du)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.re * rhs.du + self.du * rhs.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.re;
        Dual::new(self.re * inv, (self.du - self.re * rhs.du * inv) * inv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.du)
    }
}

impl Real for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.du.is_finite()
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, self.du * (1.0 - t * t))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }
    fn recip(self) -> Self {
        let inv = 1.0 / self.re;
        Dual::new(inv, -self.du * inv * inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_product_rule() {
        // d/dx [x * (x + 2)] = 2x + 2 at x = 3.
        let x = Dual::seeded(3.0);
        let y = x * (x + Dual::constant(2.0));
        assert_eq!(y.re, 15.0);
        assert_eq!(y.du, 8.0);
    }

    #[test]
    fn dual_tanh_derivative() {
        let x = Dual::seeded(0.7);
        let y = x.tanh();
        let t = 0.7f64.tanh();
        assert!((y.re - t).abs() < 1e-15);
        assert!((y.du - (1.0 - t * t)).abs() < 1e-15);
    }

    #[test]
    fn dual_quotient_and_recip_agree() {
        let x = Dual::new(1.3, 0.4);
        let one = Dual::constant(1.0);
        let a = one / x;
        let b = x.recip();
        assert!((a.re - b.re).abs() < 1e-15);
        assert!((a.du - b.du).abs() < 1e-15);
    }

    #[test]
    fn dual_exp_at_zero_is_exact() {
        let x = Dual::seeded(0.0);
        let y = x.exp();
        assert_eq!(y.re, 1.0);
        assert_eq!(y.du, 1.0);
    }
}
