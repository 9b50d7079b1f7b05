//! Double-double arithmetic.
//!
//! A `Dd` value is an unevaluated sum `hi + lo` of two `f64` with
//! `|lo| <= ulp(hi)/2`, giving roughly 106 significand bits. Moment Gram
//! matrices of high-degree monomial bases are too ill-conditioned for plain
//! `f64` Cholesky (condition numbers past 1e16 around degree 12), so the
//! moment assembly, factorization and orthonormality checks run in `Dd`.
//!
//! The algorithms are the classical error-free transformations (Dekker,
//! Knuth) as organized in the QD library; `two_prod` relies on a fused
//! multiply-add.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Requires |a| >= |b| (or a == 0).
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, f64::mul_add(a, b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    pub const PI: Dd = Dd {
        hi: 3.141592653589793,
        lo: 1.2246467991473532e-16,
    };
    pub const LN2: Dd = Dd {
        hi: 0.6931471805599453,
        lo: 2.3190468138462996e-17,
    };

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Dd {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn from_u64(x: u64) -> Dd {
        let hi = x as f64;
        // hi rounds to nearest; the remainder fits an i64 and converts exactly.
        let lo = if hi >= 9.007_199_254_740_992e15 {
            (x as i128 - hi as i128) as f64
        } else {
            0.0
        };
        Dd::new(hi, lo)
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    pub fn recip(self) -> Dd {
        Dd::ONE / self
    }

    /// Square root by one double-width Newton step from the f64 seed.
    /// Panics on negative input (callers validate positivity first).
    pub fn sqrt(self) -> Dd {
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::ZERO;
        }
        assert!(self.hi > 0.0, "Dd::sqrt of negative value {self:?}");
        let s = Dd::from_f64(self.hi.sqrt());
        let s = (s + self / s) * Dd::from_f64(0.5);
        (s + self / s) * Dd::from_f64(0.5)
    }

    pub fn powi(self, mut e: u32) -> Dd {
        let mut base = self;
        let mut acc = Dd::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    /// Natural logarithm via exponent extraction and the atanh series,
    /// accurate to ~1e-31 relative. Used by budget-formula cross-checks.
    pub fn ln(self) -> Dd {
        assert!(
            self.hi > 0.0 && self.hi.is_finite(),
            "Dd::ln domain error: {self:?}"
        );
        let mut e = ((self.hi.to_bits() >> 52) & 0x7ff) as i32 - 1023;
        let mut m = self * Dd::from_f64((2.0f64).powi(-e));
        // Fold m into [0.75, 1.5) so the series argument stays below 0.2.
        if m.hi >= 1.5 {
            m = m * Dd::from_f64(0.5);
            e += 1;
        }
        let r = (m - Dd::ONE) / (m + Dd::ONE);
        let r2 = r * r;
        let mut term = r;
        let mut sum = r;
        let mut k = 1u32;
        loop {
            term = term * r2;
            k += 2;
            let contrib = term / Dd::from_u64(k as u64);
            sum = sum + contrib;
            // The second clause never fires at r = 0 (both sides are zero),
            // so terminate explicitly once terms vanish.
            if contrib.hi == 0.0 || contrib.hi.abs() < 1e-35 * sum.hi.abs() {
                break;
            }
        }
        Dd::from_f64(e as f64) * Dd::LN2 + sum * Dd::from_f64(2.0)
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Dd {
        Dd::from_f64(x)
    }
}

impl From<u32> for Dd {
    fn from(x: u32) -> Dd {
        Dd::from_f64(x as f64)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, rhs: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, rhs.hi);
        let (t1, t2) = two_sum(self.lo, rhs.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, rhs: Dd) -> Dd {
        self + (-rhs)
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, rhs: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, rhs.hi);
        let p2 = p2 + self.hi * rhs.lo + self.lo * rhs.hi;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, rhs: Dd) -> Dd {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * Dd::from_f64(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Dd::from_f64(q2);
        let q3 = r.hi / rhs.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd::new(s, e) + Dd::from_f64(q3)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}
