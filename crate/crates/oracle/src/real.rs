//! Scalar types the reference model can run in: plain `f64`, and
//! double-double (`Dd`, about 106 significant bits) for finite
//! differences that must resolve loss changes far below one f64 ulp.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use twofloat::TwoFloat;

pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn erf(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn ln(self) -> Self {
        f64::ln(self)
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }
}

const LN2: (f64, f64) = (std::f64::consts::LN_2, 2.3190468138462996e-17);
const INV_SQRT_PI: (f64, f64) = (0.5641895835477563, 7.66772980658294e-18);
const TWO_OVER_SQRT_PI: (f64, f64) = (std::f64::consts::FRAC_2_SQRT_PI, 1.533545961316588e-17);

/// Double-double scalar. Addition, multiplication and square root come from
/// `twofloat`; division is redone here because `twofloat`'s quotient is only
/// accurate to about 1e-17.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Dd(pub TwoFloat);

impl Dd {
    pub fn new(hi: f64, lo: f64) -> Self {
        Dd(TwoFloat::new_add(hi, lo))
    }

    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }

    fn abs(self) -> Self {
        if self.hi() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn scale(self, k: f64) -> Self {
        Dd(self.0 * k)
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd(TwoFloat::from(v))
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, rhs: Dd) -> Dd {
        Dd(self.0 + rhs.0)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, rhs: Dd) -> Dd {
        Dd(self.0 - rhs.0)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, rhs: Dd) -> Dd {
        Dd(self.0 * rhs.0)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, rhs: Dd) -> Dd {
        let b = rhs.0;
        let q1 = self.hi() / b.hi();
        let r = self.0 - b * q1;
        let q2 = r.hi() / b.hi();
        let r = r - b * q2;
        let q3 = r.hi() / b.hi();
        Dd(TwoFloat::new_add(q1, q2) + q3)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, rhs: Dd) {
        self.0 += rhs.0;
    }
}

fn dd(c: (f64, f64)) -> Dd {
    Dd::new(c.0, c.1)
}

/// Below this `|x|` the error function uses its Taylor series; above, the
/// continued fraction for the complement.
const ERF_SERIES_LIMIT: f64 = 2.5;
const ERFC_CF_DEPTH: usize = 400;

fn dd_exp(x: Dd) -> Dd {
    if x.hi() < -745.0 {
        return Dd::from(0.0);
    }
    let k = (x.hi() / LN2.0).round();
    // exp(r) = exp(r / 2^5)^(2^5)
    let r = (x - dd(LN2).scale(k)).scale(1.0 / 32.0);
    let mut sum = Dd::from(1.0);
    let mut term = Dd::from(1.0);
    for n in 1..40 {
        term = term * r / Dd::from(n as f64);
        sum += term;
        if term.hi().abs() < 1e-36 {
            break;
        }
    }
    for _ in 0..5 {
        sum = sum * sum;
    }
    sum.scale(2f64.powi(k as i32))
}

fn dd_ln(x: Dd) -> Dd {
    let mut y = Dd::from(x.hi().ln());
    for _ in 0..2 {
        y = y + x * dd_exp(-y) - Dd::from(1.0);
    }
    y
}

fn dd_erf(x: Dd) -> Dd {
    let z = x.abs();
    let value = if z.hi() < ERF_SERIES_LIMIT {
        erf_series(z)
    } else {
        Dd::from(1.0) - erfc_fraction(z)
    };
    if x.hi() < 0.0 {
        -value
    } else {
        value
    }
}

/// `2/√π · Σ (−1)ⁿ z^(2n+1) / (n! (2n+1))`
fn erf_series(z: Dd) -> Dd {
    let z2 = z * z;
    let mut power = z;
    let mut sum = z;
    for n in 1..200 {
        power = -power * z2 / Dd::from(n as f64);
        let term = power / Dd::from((2 * n + 1) as f64);
        sum += term;
        if term.hi().abs() < 1e-36 {
            break;
        }
    }
    sum * dd(TWO_OVER_SQRT_PI)
}

/// `erfc(z) = e^(−z²)/√π · 1/(z + ½/(z + 1/(z + 3⁄2/(z + …))))`, evaluated
/// backwards at a fixed depth.
fn erfc_fraction(z: Dd) -> Dd {
    let mut tail = z;
    for k in (1..=ERFC_CF_DEPTH).rev() {
        tail = z + Dd::from(k as f64 * 0.5) / tail;
    }
    dd_exp(-(z * z)) * dd(INV_SQRT_PI) / tail
}

impl Real for Dd {
    fn from_f64(v: f64) -> Self {
        Dd::from(v)
    }

    fn to_f64(self) -> f64 {
        self.hi() + self.lo()
    }

    fn exp(self) -> Self {
        dd_exp(self)
    }

    fn ln(self) -> Self {
        dd_ln(self)
    }

    fn sqrt(self) -> Self {
        Dd(self.0.sqrt())
    }

    fn erf(self) -> Self {
        dd_erf(self)
    }
}
