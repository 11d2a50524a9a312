//! Truncated Taylor jets for exact derivatives of closed-form profiles.
//!
//! A [`Jet`] of order `K` at a point `x₀` stores `c_n = f^{(n)}(x₀)/n!` for
//! `n = 0..=K`. Arithmetic follows the usual power-series recurrences, so every
//! derivative up to order `K` is exact to roundoff. The cutoff functions, the
//! λ-integrands and the coefficient profiles are all written generically over
//! jets, which gives the x-derivatives needed by the symbol-level conjugation
//! without finite differences.

use std::ops::{Add, Mul, Neg, Sub};

/// Truncated Taylor series `Σ_{n≤K} c_n (x - x₀)^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    c: Vec<f64>,
}

impl Jet {
    /// Constant `v` at order `k`.
    pub fn constant(v: f64, k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[0] = v;
        Jet { c }
    }

    /// The independent variable at `x0`, order `k`.
    pub fn variable(x0: f64, k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[0] = x0;
        if k >= 1 {
            c[1] = 1.0;
        }
        Jet { c }
    }

    /// Builds a jet from raw Taylor coefficients.
    pub fn from_coeffs(c: Vec<f64>) -> Self {
        assert!(!c.is_empty(), "a jet needs at least the value coefficient");
        Jet { c }
    }

    /// Truncation order `K`.
    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    /// Value `f(x₀)`.
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Taylor coefficients `f^{(n)}(x₀)/n!`.
    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Derivative `f^{(n)}(x₀)`.
    pub fn derivative(&self, n: usize) -> f64 {
        if n > self.order() {
            return 0.0;
        }
        self.c[n] * factorial(n)
    }

    /// Multiplies by a scalar.
    pub fn scale(&self, s: f64) -> Jet {
        Jet { c: self.c.iter().map(|v| v * s).collect() }
    }

    /// Adds a scalar.
    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut c = self.c.clone();
        c[0] += s;
        Jet { c }
    }

    /// `1/f`; requires `f(x₀) ≠ 0`.
    pub fn recip(&self) -> Jet {
        let k = self.order();
        let mut r = vec![0.0; k + 1];
        r[0] = 1.0 / self.c[0];
        for n in 1..=k {
            let s: f64 = (1..=n).map(|m| self.c[m] * r[n - m]).sum();
            r[n] = -s / self.c[0];
        }
        Jet { c: r }
    }

    /// `f/g`.
    pub fn div(&self, other: &Jet) -> Jet {
        self * &other.recip()
    }

    /// `exp(f)`.
    pub fn exp(&self) -> Jet {
        let k = self.order();
        let mut e = vec![0.0; k + 1];
        e[0] = self.c[0].exp();
        for n in 1..=k {
            let s: f64 = (1..=n).map(|m| m as f64 * self.c[m] * e[n - m]).sum();
            e[n] = s / n as f64;
        }
        Jet { c: e }
    }

    /// `ln f`; requires `f(x₀) > 0`.
    pub fn ln(&self) -> Jet {
        let k = self.order();
        let mut l = vec![0.0; k + 1];
        l[0] = self.c[0].ln();
        for n in 1..=k {
            let s: f64 = (1..n).map(|m| m as f64 * l[m] * self.c[n - m]).sum();
            l[n] = (self.c[n] - s / n as f64) / self.c[0];
        }
        Jet { c: l }
    }

    /// `f^a` for `f(x₀) > 0`.
    pub fn powf(&self, a: f64) -> Jet {
        let k = self.order();
        let mut q = vec![0.0; k + 1];
        q[0] = self.c[0].powf(a);
        for n in 1..=k {
            let s: f64 = (1..=n).map(|m| (a * m as f64 - (n - m) as f64) * self.c[m] * q[n - m]).sum();
            q[n] = s / (n as f64 * self.c[0]);
        }
        Jet { c: q }
    }

    /// `√f` for `f(x₀) > 0`.
    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    /// `|f|` for `f(x₀) ≠ 0` (sign frozen at `x₀`; the zero case returns the
    /// jet of `f` itself, which is only used where the function is even).
    pub fn abs(&self) -> Jet {
        if self.c[0] < 0.0 {
            -self
        } else {
            self.clone()
        }
    }

    /// `cosh f`.
    pub fn cosh(&self) -> Jet {
        let e = self.exp();
        let em = (-self).exp();
        (&e + &em).scale(0.5)
    }

    /// `sech f`.
    pub fn sech(&self) -> Jet {
        self.cosh().recip()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }
}

impl Mul for &Jet {
    type Output = Jet;
    // Cauchy product of the Taylor coefficients.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, o: &Jet) -> Jet {
        let k = self.order().min(o.order());
        let mut c = vec![0.0; k + 1];
        for n in 0..=k {
            c[n] = (0..=n).map(|m| self.c[m] * o.c[n - m]).sum();
        }
        Jet { c }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Scalar functions that can be evaluated on `f64` and on [`Jet`]s.
///
/// Implemented by the cutoff pair and the coefficient profiles so that the
/// same formula yields values and exact derivatives.
pub trait Smooth {
    /// Point value.
    fn eval(&self, y: f64) -> f64;
    /// Jet value.
    fn eval_jet(&self, y: &Jet) -> Jet;
}

/// Flat building block `f(s) = e^{-1/s}` for `s > 0`, `0` otherwise.
pub fn flat_exp(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Jet version of [`flat_exp`] (all derivatives vanish for `s ≤ 0`).
pub fn flat_exp_jet(s: &Jet) -> Jet {
    if s.value() > 0.0 {
        (-&s.recip()).exp()
    } else {
        Jet::constant(0.0, s.order())
    }
}

/// Smoothstep glue `g(t) = f(t)/(f(t)+f(1-t))`: `0` for `t ≤ 0`, `1` for
/// `t ≥ 1`, `C^∞` and monotone in between.
pub fn glue(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = flat_exp(t);
        let b = flat_exp(1.0 - t);
        a / (a + b)
    }
}

/// Jet version of [`glue`].
pub fn glue_jet(t: &Jet) -> Jet {
    let k = t.order();
    let t0 = t.value();
    if t0 <= 0.0 {
        Jet::constant(0.0, k)
    } else if t0 >= 1.0 {
        Jet::constant(1.0, k)
    } else {
        let a = flat_exp_jet(t);
        let b = flat_exp_jet(&(-t).add_scalar(1.0));
        a.div(&(&a + &b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn elementary_derivatives() {
        let x = Jet::variable(0.7, 4);
        let e = x.exp();
        for n in 0..=4 {
            assert!((e.derivative(n) - 0.7f64.exp()).abs() < 1e-13);
        }
        let p = x.powf(-1.5);
        let exact = [0.7f64.powf(-1.5), -1.5 * 0.7f64.powf(-2.5), 3.75 * 0.7f64.powf(-3.5)];
        for (n, v) in exact.iter().enumerate() {
            assert!((p.derivative(n) - v).abs() < 1e-11 * v.abs().max(1.0));
        }
        let l = x.ln();
        assert!((l.derivative(2) + 1.0 / 0.49).abs() < 1e-12);
        let s = x.sech();
        let ds = fd(|y| 1.0 / y.cosh(), 0.7, 1e-3);
        assert!((s.derivative(1) - ds).abs() < 1e-10);
    }

    #[test]
    fn glue_jet_matches_finite_differences() {
        for &t in &[0.2, 0.5, 0.83] {
            let j = glue_jet(&Jet::variable(t, 2));
            assert!((j.value() - glue(t)).abs() < 1e-15);
            assert!((j.derivative(1) - fd(glue, t, 1e-4)).abs() < 1e-9);
        }
        assert_eq!(glue_jet(&Jet::variable(-0.1, 3)).coeffs(), &[0.0; 4]);
        assert_eq!(glue_jet(&Jet::variable(1.2, 3)).coeffs(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
