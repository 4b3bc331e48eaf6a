//! Exact scalars: rationals, and coefficients affine in named model parameters
//! (so that `t3 = g/6` stays symbolic in printed loop equations).

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational with the same shortest decimal rendering as `x`
/// (so `0.1` becomes `1/10`, not the binary expansion).
pub fn q_from_f64(x: f64) -> Result<Q> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("{x}")));
    }
    parse_rational(&format!("{x}"))
}

/// Parse `"3"`, `"-1/4"`, `"0.125"`, `"1e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::invalid(format!("cannot parse `{s}` as a rational number"));
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rational(n)?;
        let d = parse_rational(d)?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(n / d);
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all: BigInt = format!("{int_part}{frac_part}0").parse::<BigInt>().map_err(|_| bad())? / 10;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = if scale >= 0 {
        Q::from_integer(all * num_traits::pow(ten, scale as usize))
    } else {
        Q::new(all, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        value = -value;
    }
    Ok(value)
}

/// `p/q` or `p` for integers.
pub fn fmt_q(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Coefficient affine in named parameters: `c0 + c_g * g + ...`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Coeff {
    // `None` is the constant part
    parts: BTreeMap<Option<String>, Q>,
}

impl Coeff {
    pub fn zero() -> Self {
        Coeff::default()
    }

    pub fn constant(c: Q) -> Self {
        let mut out = Coeff::zero();
        out.add_part(None, c);
        out
    }

    pub fn param(name: &str, c: Q) -> Self {
        let mut out = Coeff::zero();
        out.add_part(Some(name.to_string()), c);
        out
    }

    fn add_part(&mut self, key: Option<String>, c: Q) {
        if c.is_zero() {
            return;
        }
        let entry = self.parts.entry(key.clone()).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            self.parts.remove(&key);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.parts.is_empty()
    }

    /// The constant part, if the coefficient has no parameter dependence.
    pub fn as_constant(&self) -> Option<Q> {
        match self.parts.len() {
            0 => Some(Q::zero()),
            1 => self.parts.get(&None).cloned(),
            _ => None,
        }
    }

    pub fn parts(&self) -> impl Iterator<Item = (Option<&str>, &Q)> {
        self.parts.iter().map(|(k, v)| (k.as_deref(), v))
    }

    pub fn params(&self) -> impl Iterator<Item = &str> {
        self.parts.keys().filter_map(|k| k.as_deref())
    }

    pub fn add(&self, other: &Coeff) -> Coeff {
        let mut out = self.clone();
        for (k, v) in &other.parts {
            out.add_part(k.clone(), v.clone());
        }
        out
    }

    pub fn scale(&self, c: &Q) -> Coeff {
        let mut out = Coeff::zero();
        for (k, v) in &self.parts {
            out.add_part(k.clone(), v * c);
        }
        out
    }

    /// Substitute parameter values.
    pub fn eval(&self, values: &BTreeMap<String, Q>) -> Result<Q> {
        let mut total = Q::zero();
        for (k, v) in &self.parts {
            match k {
                None => total += v,
                Some(name) => {
                    let x = values
                        .get(name)
                        .ok_or_else(|| Error::invalid(format!("no value for parameter `{name}`")))?;
                    total += v * x;
                }
            }
        }
        Ok(total)
    }

    /// Parse an affine expression such as `1/4`, `g`, `g/6`, `-2*g + 1/2`, `0.5*t2`.
    pub fn parse(s: &str) -> Result<Coeff> {
        let src = s.trim();
        if src.is_empty() {
            return Err(Error::invalid("empty coupling expression"));
        }
        let mut out = Coeff::zero();
        let mut terms = Vec::new();
        let mut current = String::new();
        for (i, c) in src.chars().enumerate() {
            let prev = current.trim_end().chars().last();
            let exponent_sign = matches!(prev, Some('e') | Some('E'))
                && current.trim().chars().next().is_some_and(|d| d.is_ascii_digit() || d == '.');
            if (c == '+' || c == '-') && i > 0 && !current.trim().is_empty() && !exponent_sign {
                terms.push(current.clone());
                current.clear();
            }
            current.push(c);
        }
        terms.push(current);
        for term in terms {
            let t: String = term.chars().filter(|c| !c.is_whitespace()).collect();
            let (sign, body) = match t.strip_prefix('-') {
                Some(rest) => (-Q::one(), rest.to_string()),
                None => (Q::one(), t.strip_prefix('+').unwrap_or(&t).to_string()),
            };
            let mut c = sign;
            let mut name: Option<String> = None;
            for factor in body.split('*') {
                let (num, den) = match factor.split_once('/') {
                    Some((a, b)) => (a, Some(b)),
                    None => (factor, None),
                };
                if num.chars().next().is_some_and(|ch| ch.is_ascii_alphabetic() || ch == '_') {
                    if name.is_some() {
                        return Err(Error::invalid(format!("`{s}` is not affine in the parameters")));
                    }
                    name = Some(num.to_string());
                } else {
                    c *= parse_rational(num)?;
                }
                if let Some(d) = den {
                    let d = parse_rational(d)?;
                    if d.is_zero() {
                        return Err(Error::invalid(format!("division by zero in `{s}`")));
                    }
                    c /= d;
                }
            }
            out.add_part(name, c);
        }
        Ok(out)
    }
}

impl From<Q> for Coeff {
    fn from(c: Q) -> Self {
        Coeff::constant(c)
    }
}

impl fmt::Display for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.parts.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (k, v) in &self.parts {
            let neg = v.is_negative();
            if first {
                if neg {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if neg { " - " } else { " + " })?;
            }
            first = false;
            let a = v.abs();
            match k {
                None => f.write_str(&fmt_q(&a))?,
                Some(name) if a.is_one() => f.write_str(name)?,
                Some(name) => write!(f, "{}*{}", fmt_q(&a), name)?,
            }
        }
        Ok(())
    }
}
