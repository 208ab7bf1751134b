//! Minimal complex arithmetic over arbitrary-precision floats, sized for the
//! alternating outcome sums.

use astro_float::{BigFloat, Consts, Radix, RoundingMode, Sign};
use num_bigint::BigInt;

const RM: RoundingMode = RoundingMode::ToEven;

/// Precision context: mantissa width plus the shared constants cache.
pub struct BigCtx {
    prec: usize,
    cc: Consts,
}

impl BigCtx {
    pub fn new(prec: usize) -> Self {
        Self {
            prec,
            cc: Consts::new().expect("big-float constants cache"),
        }
    }

    pub fn real(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, self.prec)
    }

    /// Exact conversion of a big integer (the precision must cover its bits).
    pub fn integer(&mut self, x: &BigInt) -> BigFloat {
        BigFloat::parse(&x.to_string(), Radix::Dec, self.prec, RM, &mut self.cc)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.prec, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.prec, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.prec, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.prec, RM)
    }

    pub fn neg(&self, a: &BigFloat) -> BigFloat {
        a.neg()
    }

    /// e^{re + i·im} as (e^re cos im, e^re sin im).
    pub fn exp_complex(&mut self, re: &BigFloat, im: &BigFloat) -> BigC {
        let mag = re.exp(self.prec, RM, &mut self.cc);
        let c = im.cos(self.prec, RM, &mut self.cc);
        let s = im.sin(self.prec, RM, &mut self.cc);
        BigC {
            re: mag.mul(&c, self.prec, RM),
            im: mag.mul(&s, self.prec, RM),
        }
    }

    /// Saturating conversion to f64.
    pub fn to_f64(&self, x: &BigFloat) -> f64 {
        big_to_f64(x)
    }

    /// ln |x| evaluated without overflowing f64 (the exponent is handled
    /// separately from the mantissa).
    pub fn ln_abs(&self, x: &BigFloat) -> f64 {
        if x.is_zero() {
            return f64::NEG_INFINITY;
        }
        let Some((words, _, _, exp, _)) = x.as_raw_parts() else {
            return f64::NAN;
        };
        let top = *words.last().expect("nonempty mantissa") as f64;
        let frac = top / 2f64.powi(64);
        frac.ln() + exp as f64 * std::f64::consts::LN_2
    }
}

/// Total order for finite big floats.
pub fn cmp(a: &BigFloat, b: &BigFloat) -> i64 {
    a.cmp(b).map(|o| o as i64).unwrap_or(0)
}

fn big_to_f64(x: &BigFloat) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let Some((words, _, sign, exp, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    // The mantissa is a little-endian word array representing a fraction in
    // [0.5, 1); the top 64 bits carry more than f64 needs.
    let top = *words.last().expect("nonempty mantissa");
    let frac = top as f64 / 2f64.powi(64);
    let mag = frac * 2f64.powi(exp);
    match sign {
        Sign::Pos => mag,
        Sign::Neg => -mag,
    }
}

/// A complex number with big-float components.
#[derive(Clone)]
pub struct BigC {
    pub re: BigFloat,
    pub im: BigFloat,
}

impl BigC {
    pub fn zero(ctx: &BigCtx) -> Self {
        Self {
            re: ctx.real(0.0),
            im: ctx.real(0.0),
        }
    }

    pub fn add(&self, other: &Self, ctx: &mut BigCtx) -> Self {
        Self {
            re: ctx.add(&self.re, &other.re),
            im: ctx.add(&self.im, &other.im),
        }
    }

    pub fn mul(&self, other: &Self, ctx: &mut BigCtx) -> Self {
        let ac = ctx.mul(&self.re, &other.re);
        let bd = ctx.mul(&self.im, &other.im);
        let ad = ctx.mul(&self.re, &other.im);
        let bc = ctx.mul(&self.im, &other.re);
        Self {
            re: ctx.sub(&ac, &bd),
            im: ctx.add(&ad, &bc),
        }
    }

    pub fn scale(&self, f: &BigFloat, ctx: &mut BigCtx) -> Self {
        Self {
            re: ctx.mul(&self.re, f),
            im: ctx.mul(&self.im, f),
        }
    }

    /// Multiply by i^k (an exact component rotation).
    pub fn mul_i_pow(&self, k: i64) -> Self {
        match k.rem_euclid(4) {
            0 => self.clone(),
            1 => Self {
                re: self.im.neg(),
                im: self.re.clone(),
            },
            2 => Self {
                re: self.re.neg(),
                im: self.im.neg(),
            },
            _ => Self {
                re: self.im.clone(),
                im: self.re.neg(),
            },
        }
    }

    pub fn abs_sq(&self, ctx: &mut BigCtx) -> BigFloat {
        let rr = ctx.mul(&self.re, &self.re);
        let ii = ctx.mul(&self.im, &self.im);
        ctx.add(&rr, &ii)
    }
}
