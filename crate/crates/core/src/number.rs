//! Exact scalar arithmetic: rationals extended by the imaginary unit.
//!
//! Every numeric coefficient in the kernel is a [`GaussRat`], a complex number
//! with arbitrary-precision rational real and imaginary parts. Keeping the
//! coefficient field exact is what makes "reduced residual is canonically zero"
//! a meaningful test: there is no epsilon anywhere in the symbolic layer.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Complex number with exact rational parts (an element of Q(i)).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GaussRat {
    pub re: BigRational,
    pub im: BigRational,
}

impl GaussRat {
    pub fn new(re: BigRational, im: BigRational) -> Self {
        GaussRat { re, im }
    }

    pub fn zero() -> Self {
        GaussRat::new(BigRational::zero(), BigRational::zero())
    }

    pub fn one() -> Self {
        GaussRat::new(BigRational::one(), BigRational::zero())
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        GaussRat::new(BigRational::zero(), BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        GaussRat::new(BigRational::from_integer(BigInt::from(n)), BigRational::zero())
    }

    /// Exact rational p/q. Panics if q = 0 (construction-time programming error).
    pub fn from_ratio(p: i64, q: i64) -> Self {
        assert!(q != 0, "rational with zero denominator");
        GaussRat::new(
            BigRational::new(BigInt::from(p), BigInt::from(q)),
            BigRational::zero(),
        )
    }

    pub fn from_rational(r: BigRational) -> Self {
        GaussRat::new(r, BigRational::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.re.is_one() && self.im.is_zero()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    /// The rational value, if the imaginary part vanishes.
    pub fn as_rational(&self) -> Option<&BigRational> {
        if self.im.is_zero() {
            Some(&self.re)
        } else {
            None
        }
    }

    /// The integer value, if this is a rational integer.
    pub fn as_integer(&self) -> Option<BigInt> {
        let r = self.as_rational()?;
        if r.is_integer() {
            Some(r.to_integer())
        } else {
            None
        }
    }

    pub fn conj(&self) -> Self {
        GaussRat::new(self.re.clone(), -self.im.clone())
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let norm = &self.re * &self.re + &self.im * &self.im;
        Some(GaussRat::new(&self.re / &norm, -(&self.im / &norm)))
    }

    /// Integer power (negative exponents invert; zero base with negative
    /// exponent returns `None`).
    pub fn pow_int(&self, e: i64) -> Option<Self> {
        if e < 0 {
            return self.inv().map(|v| v.pow_int(-e).expect("positive power"));
        }
        let mut acc = GaussRat::one();
        let mut base = self.clone();
        let mut e = e as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        Some(acc)
    }

    /// Floating-point value of each part (for the numeric harness).
    pub fn to_f64_parts(&self) -> (f64, f64) {
        (
            self.re.to_f64().unwrap_or(f64::NAN),
            self.im.to_f64().unwrap_or(f64::NAN),
        )
    }
}

impl Add for &GaussRat {
    type Output = GaussRat;
    fn add(self, rhs: &GaussRat) -> GaussRat {
        GaussRat::new(&self.re + &rhs.re, &self.im + &rhs.im)
    }
}

impl Sub for &GaussRat {
    type Output = GaussRat;
    fn sub(self, rhs: &GaussRat) -> GaussRat {
        GaussRat::new(&self.re - &rhs.re, &self.im - &rhs.im)
    }
}

impl Mul for &GaussRat {
    type Output = GaussRat;
    fn mul(self, rhs: &GaussRat) -> GaussRat {
        GaussRat::new(
            &self.re * &rhs.re - &self.im * &rhs.im,
            &self.re * &rhs.im + &self.im * &rhs.re,
        )
    }
}

impl Neg for &GaussRat {
    type Output = GaussRat;
    fn neg(self) -> GaussRat {
        GaussRat::new(-self.re.clone(), -self.im.clone())
    }
}

fn fmt_rational(r: &BigRational, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if r.is_integer() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            return fmt_rational(&self.re, f);
        }
        let im_alone = |f: &mut fmt::Formatter<'_>, im: &BigRational| -> fmt::Result {
            if im.is_one() {
                write!(f, "i")
            } else if (-im).is_one() {
                write!(f, "-i")
            } else {
                fmt_rational(im, f)?;
                write!(f, "*i")
            }
        };
        if self.re.is_zero() {
            return im_alone(f, &self.im);
        }
        fmt_rational(&self.re, f)?;
        if self.im.is_positive() {
            write!(f, "+")?;
        }
        im_alone(f, &self.im)
    }
}

impl fmt::Debug for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_ops() {
        let a = GaussRat::from_ratio(3, 2);
        let b = GaussRat::i();
        let prod = &a * &b; // 3/2 i
        assert_eq!(prod, GaussRat::new(BigRational::zero(), BigRational::new(3.into(), 2.into())));
        let sq = &b * &b;
        assert_eq!(sq, GaussRat::from_int(-1));
    }

    #[test]
    fn inverse_and_norm() {
        // (1 + 2i)^-1 = (1 - 2i)/5
        let z = &GaussRat::one() + &(&GaussRat::from_int(2) * &GaussRat::i());
        let w = z.inv().unwrap();
        assert_eq!(&z * &w, GaussRat::one());
        assert!(GaussRat::zero().inv().is_none());
    }

    #[test]
    fn integer_powers() {
        let z = GaussRat::i();
        assert_eq!(z.pow_int(4).unwrap(), GaussRat::one());
        assert_eq!(z.pow_int(-1).unwrap(), -&GaussRat::i());
        let h = GaussRat::from_ratio(1, 2);
        assert_eq!(h.pow_int(-2).unwrap(), GaussRat::from_int(4));
        assert!(GaussRat::zero().pow_int(-1).is_none());
    }

    #[test]
    fn display_forms() {
        assert_eq!(GaussRat::zero().to_string(), "0");
        assert_eq!(GaussRat::from_ratio(-3, 2).to_string(), "-3/2");
        assert_eq!(GaussRat::i().to_string(), "i");
        assert_eq!((&GaussRat::from_int(1) + &GaussRat::i()).to_string(), "1+i");
        assert_eq!(
            (&GaussRat::from_int(2) * &GaussRat::i()).to_string(),
            "2*i"
        );
    }
}
