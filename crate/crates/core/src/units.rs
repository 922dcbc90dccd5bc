//! Unit-space bookkeeping for the time, length and mass spaces.
//!
//! A [`DimTag`] records the exponents of 𝕋, 𝕃 and 𝕄 carried by a quantity.
//! Tags are checked once when a scenario is loaded; after the rescalings
//! `G = (m/ħ) g` and `F = (q/ħ) f` every downstream module works with plain
//! chart numbers.

use std::fmt;
use std::ops::{Div, Mul};

use num_rational::Rational32;
use thiserror::Error;

use crate::expr::Expr;

/// Exponents of (𝕋, 𝕃, 𝕄). The dual 𝕋* carries exponent −1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DimTag {
    pub t_exp: Rational32,
    pub l_exp: Rational32,
    pub m_exp: Rational32,
}

fn r(n: i32, d: i32) -> Rational32 {
    Rational32::new(n, d)
}

impl DimTag {
    pub const NONE: DimTag = DimTag::from_ints(0, 0, 0);
    pub const TIME: DimTag = DimTag::from_ints(1, 0, 0);
    pub const LENGTH: DimTag = DimTag::from_ints(0, 1, 0);
    pub const MASS: DimTag = DimTag::from_ints(0, 0, 1);

    pub const fn from_ints(t: i32, l: i32, m: i32) -> DimTag {
        DimTag {
            t_exp: Rational32::new_raw(t, 1),
            l_exp: Rational32::new_raw(l, 1),
            m_exp: Rational32::new_raw(m, 1),
        }
    }

    pub fn new(t: Rational32, l: Rational32, m: Rational32) -> DimTag {
        DimTag {
            t_exp: t,
            l_exp: l,
            m_exp: m,
        }
    }

    /// 𝕋* ⊗ 𝕃² ⊗ 𝕄, the space of the Planck constant.
    pub fn planck() -> DimTag {
        DimTag::from_ints(-1, 2, 1)
    }

    /// 𝕋* ⊗ 𝕃^{3/2} ⊗ 𝕄^{1/2}, the space of a charge.
    pub fn charge() -> DimTag {
        DimTag::new(r(-1, 1), r(3, 2), r(1, 2))
    }

    /// 𝕃² for the unscaled spacelike metric.
    pub fn metric() -> DimTag {
        DimTag::from_ints(0, 2, 0)
    }

    /// 𝕃^{1/2} ⊗ 𝕄^{1/2} for the unscaled electromagnetic 2-form.
    pub fn em_field() -> DimTag {
        DimTag::new(r(0, 1), r(1, 2), r(1, 2))
    }

    pub fn inv(self) -> DimTag {
        DimTag::new(-self.t_exp, -self.l_exp, -self.m_exp)
    }

    pub fn is_none(self) -> bool {
        self == DimTag::NONE
    }
}

impl Mul for DimTag {
    type Output = DimTag;
    fn mul(self, o: DimTag) -> DimTag {
        DimTag::new(self.t_exp + o.t_exp, self.l_exp + o.l_exp, self.m_exp + o.m_exp)
    }
}

impl Div for DimTag {
    type Output = DimTag;
    fn div(self, o: DimTag) -> DimTag {
        self * o.inv()
    }
}

impl fmt::Display for DimTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[T^{} L^{} M^{}]", self.t_exp, self.l_exp, self.m_exp)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: DimTag,
        found: DimTag,
    },
    #[error("{what} must be strictly positive, got {value}")]
    Domain { what: &'static str, value: f64 },
}

/// A number carrying its unit-space tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledScalar {
    pub value: f64,
    pub tag: DimTag,
}

impl ScaledScalar {
    pub fn new(value: f64, tag: DimTag) -> ScaledScalar {
        ScaledScalar { value, tag }
    }

    pub fn checked_add(self, o: ScaledScalar) -> Result<ScaledScalar, UnitError> {
        if self.tag != o.tag {
            return Err(UnitError::Dimension {
                what: "sum operand",
                expected: self.tag,
                found: o.tag,
            });
        }
        Ok(ScaledScalar::new(self.value + o.value, self.tag))
    }

    pub fn inv(self) -> ScaledScalar {
        ScaledScalar::new(1.0 / self.value, self.tag.inv())
    }

    fn expect(self, what: &'static str, tag: DimTag) -> Result<ScaledScalar, UnitError> {
        if self.tag != tag {
            return Err(UnitError::Dimension {
                what,
                expected: tag,
                found: self.tag,
            });
        }
        if !(self.value > 0.0) {
            return Err(UnitError::Domain {
                what,
                value: self.value,
            });
        }
        Ok(self)
    }
}

impl Mul for ScaledScalar {
    type Output = ScaledScalar;
    fn mul(self, o: ScaledScalar) -> ScaledScalar {
        ScaledScalar::new(self.value * o.value, self.tag * o.tag)
    }
}

impl Div for ScaledScalar {
    type Output = ScaledScalar;
    fn div(self, o: ScaledScalar) -> ScaledScalar {
        ScaledScalar::new(self.value / o.value, self.tag / o.tag)
    }
}

/// Field values that can be multiplied pointwise by a real constant.
pub trait Scalable: Sized {
    fn scaled(&self, k: f64) -> Self;
}

impl Scalable for f64 {
    fn scaled(&self, k: f64) -> f64 {
        self * k
    }
}

impl Scalable for Expr {
    fn scaled(&self, k: f64) -> Expr {
        k * self
    }
}

impl<T: Scalable> Scalable for Vec<T> {
    fn scaled(&self, k: f64) -> Vec<T> {
        self.iter().map(|x| x.scaled(k)).collect()
    }
}

/// A field together with the unit tag of its values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagged<T> {
    pub field: T,
    pub tag: DimTag,
}

impl<T> Tagged<T> {
    pub fn new(field: T, tag: DimTag) -> Tagged<T> {
        Tagged { field, tag }
    }
}

fn check_field<T>(f: &Tagged<T>, what: &'static str, tag: DimTag) -> Result<(), UnitError> {
    if f.tag != tag {
        return Err(UnitError::Dimension {
            what,
            expected: tag,
            found: f.tag,
        });
    }
    Ok(())
}

/// `G = (m/ħ) g`: 𝕃²-valued metric to 𝕋-valued metric.
pub fn rescale_metric<T: Scalable>(
    g: &Tagged<T>,
    m: ScaledScalar,
    hbar: ScaledScalar,
) -> Result<Tagged<T>, UnitError> {
    check_field(g, "spacelike metric", DimTag::metric())?;
    let m = m.expect("mass", DimTag::MASS)?;
    let hbar = hbar.expect("Planck constant", DimTag::planck())?;
    let ratio = m / hbar;
    Ok(Tagged::new(g.field.scaled(ratio.value), ratio.tag * g.tag))
}

/// `F = (q/ħ) f`: the electromagnetic 2-form made dimensionless.
pub fn rescale_em<T: Scalable>(
    f_em: &Tagged<T>,
    q: ScaledScalar,
    hbar: ScaledScalar,
) -> Result<Tagged<T>, UnitError> {
    check_field(f_em, "electromagnetic field", DimTag::em_field())?;
    if q.tag != DimTag::charge() {
        return Err(UnitError::Dimension {
            what: "charge",
            expected: DimTag::charge(),
            found: q.tag,
        });
    }
    let hbar = hbar.expect("Planck constant", DimTag::planck())?;
    let ratio = q / hbar;
    Ok(Tagged::new(f_em.field.scaled(ratio.value), ratio.tag * f_em.tag))
}
