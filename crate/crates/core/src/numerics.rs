//! Exact rational helpers and the power-of-`(1 + 1/L)` price representation.
//!
//! Prices in fixed-precision mode are stored as exponents `k` of the base
//! `g = 1 + 1/L`. Only approximations of `g^k` are ever materialized: a
//! fixed-point value with `Z` fractional bits whose absolute error is tracked
//! alongside the value and checked against `1/(4L)`.

use std::sync::Mutex;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::Q;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericsError {
    #[error("fixed-point precision of {bits} bits is too low: error bound exceeds 1/(4L)")]
    PrecisionTooLow { bits: u64 },
    #[error("factor {0} is below 1 and has no power-of-(1+1/L) exponent")]
    OutOfRange(Q),
    #[error("zero utilities are never rounded")]
    ZeroUtility,
    #[error("L must be at least 3, got {0}")]
    BaseTooSmall(BigUint),
}

/// Fixed-point number `val / 2^Z` with an absolute error bound of `err` ulps.
#[derive(Clone, Debug)]
struct Fixed {
    val: BigUint,
    err: BigUint,
}

impl Fixed {
    fn one(z: u64) -> Self {
        Fixed { val: BigUint::one() << z, err: BigUint::zero() }
    }

    fn mul(&self, other: &Fixed, z: u64) -> Fixed {
        let val = (&self.val * &other.val) >> z;
        // |AB - ab| <= a*eb + b*ea + ea*eb, plus one ulp for the truncating shift.
        let spread = &self.val * &other.err + &other.val * &self.err + &self.err * &other.err;
        let (quot, rem) = spread.div_rem(&(BigUint::one() << z));
        let err = quot + if rem.is_zero() { 0u32 } else { 1u32 } + 1u32;
        Fixed { val, err }
    }

    fn to_q(&self, z: u64) -> Q {
        // the denominator is a power of two, so reducing is a shift
        let tz = self.val.trailing_zeros().unwrap_or(z).min(z);
        BigRational::new_raw(BigInt::from(&self.val >> tz), BigInt::from(BigUint::one() << (z - tz)))
    }
}

fn base_fixed(l: &BigUint, z: u64) -> Fixed {
    let one = BigUint::one() << z;
    let frac = &one / l;
    Fixed { val: one + frac, err: BigUint::one() }
}

fn check_error(acc: &Fixed, l: &BigUint, z: u64) -> Result<(), NumericsError> {
    if (&acc.err * l) << 2u32 > BigUint::one() << z {
        return Err(NumericsError::PrecisionTooLow { bits: z });
    }
    Ok(())
}

/// Approximates `(1 + 1/L)^k` by repeated squaring in fixed point with `z_bits`
/// fractional bits. The result has denominator `2^z_bits` and is within
/// `1/(4L)` of the true power, or the call fails.
pub fn approx_power(k: &BigUint, l: &BigUint, z_bits: u64) -> Result<Q, NumericsError> {
    let mut acc = Fixed::one(z_bits);
    let bits = k.bits();
    if bits == 0 {
        return Ok(Q::one());
    }
    let mut base = base_fixed(l, z_bits);
    for i in 0..bits {
        if k.bit(i) {
            acc = acc.mul(&base, z_bits);
        }
        if i + 1 < bits {
            base = base.mul(&base, z_bits);
        }
    }
    check_error(&acc, l, z_bits)?;
    Ok(acc.to_q(z_bits))
}

/// Nearest integer to `value * L`, ties to even.
pub fn round_to_denominator(value: &Q, l: &BigUint) -> BigInt {
    let num = value.numer() * BigInt::from(l.clone());
    half_even_div(&num, value.denom())
}

/// `a / b` rounded to the nearest integer, ties to even; `b > 0`.
fn half_even_div(a: &BigInt, b: &BigInt) -> BigInt {
    let (base, rem) = a.div_mod_floor(b);
    let twice = rem << 1u32;
    match twice.cmp(b) {
        std::cmp::Ordering::Less => base,
        std::cmp::Ordering::Greater => base + 1,
        std::cmp::Ordering::Equal => {
            if base.is_even() {
                base
            } else {
                base + 1
            }
        }
    }
}

/// `ceil(log2(x))` for a positive integer.
pub fn ceil_log2(x: &BigUint) -> u64 {
    if x <= &BigUint::one() {
        0
    } else {
        (x - 1u32).bits()
    }
}

/// Shared context for the power-of-`(1 + 1/L)` representation: the base `L`,
/// the fixed-point precision `Z`, and a lazily grown table of `g^(2^m)`.
#[derive(Debug)]
pub struct PowerBasis {
    l: BigUint,
    z_bits: u64,
    squares: Mutex<Vec<Fixed>>,
}

impl Clone for PowerBasis {
    fn clone(&self) -> Self {
        let table = self.squares.lock().expect("power table poisoned").clone();
        PowerBasis { l: self.l.clone(), z_bits: self.z_bits, squares: Mutex::new(table) }
    }
}

impl PowerBasis {
    pub fn new(l: BigUint, z_bits: u64) -> Result<Self, NumericsError> {
        if l < BigUint::from(3u32) {
            return Err(NumericsError::BaseTooSmall(l));
        }
        Ok(PowerBasis { l, z_bits, squares: Mutex::new(Vec::new()) })
    }

    /// Precision for values bounded by `2^log2_bound`:
    /// `Z = 4 * log2_bound + 2 * ceil(log2 L) + 64`.
    pub fn with_bound(l: BigUint, log2_bound: u64) -> Result<Self, NumericsError> {
        let z = 4 * log2_bound + 2 * ceil_log2(&l) + 64;
        Self::new(l, z)
    }

    /// Precision sized for a market with `n` agents and max utility `u_max`,
    /// whose prices never exceed `(n U)^n`.
    pub fn for_market(n: usize, u_max: u64, l: BigUint) -> Result<Self, NumericsError> {
        let bound = BigUint::from(n as u64 * u_max).pow(n as u32);
        Self::with_bound(l, ceil_log2(&bound))
    }

    pub fn l(&self) -> &BigUint {
        &self.l
    }

    pub fn z_bits(&self) -> u64 {
        self.z_bits
    }

    /// `1 + 1/L` as an exact rational.
    pub fn step(&self) -> Q {
        let l = BigInt::from(self.l.clone());
        Q::new(&l + 1, l)
    }

    fn square(&self, m: usize) -> Fixed {
        let mut table = self.squares.lock().expect("power table poisoned");
        if table.is_empty() {
            table.push(base_fixed(&self.l, self.z_bits));
        }
        while table.len() <= m {
            let last = table.last().expect("non-empty").clone();
            table.push(last.mul(&last, self.z_bits));
        }
        table[m].clone()
    }

    fn power_fixed(&self, k: &BigUint) -> Fixed {
        let mut acc = Fixed::one(self.z_bits);
        for i in 0..k.bits() {
            if k.bit(i) {
                acc = acc.mul(&self.square(i as usize), self.z_bits);
            }
        }
        acc
    }

    /// `b` with `|b - (1 + 1/L)^k| <= 1/(4L)`.
    pub fn approx_power(&self, k: &BigUint) -> Result<Q, NumericsError> {
        let acc = self.power_fixed(k);
        check_error(&acc, &self.l, self.z_bits)?;
        Ok(acc.to_q(self.z_bits))
    }

    /// The rounded price `q / L`: an additive `1/L` and multiplicative
    /// `(1 + 1/L)` approximation of `(1 + 1/L)^k`.
    pub fn rounded_price(&self, k: &BigUint) -> Result<Q, NumericsError> {
        let acc = self.power_fixed(k);
        check_error(&acc, &self.l, self.z_bits)?;
        // round(val * L / 2^Z), ties to even, in integers
        let t = &acc.val * &self.l;
        let mut q = &t >> self.z_bits;
        let rem = t - (&q << self.z_bits);
        let half = BigUint::one() << (self.z_bits - 1);
        if rem > half || (rem == half && q.bit(0)) {
            q += 1u32;
        }
        Ok(Q::new(BigInt::from(q), BigInt::from(self.l.clone())))
    }

    /// Exponent `k` with `x_hat / (1 + 1/L)^k` in `[1/(1 + 1/L), 1 + 1/L]`.
    ///
    /// The exponent is the smallest `k` for which `x_hat` is not provably above
    /// `g^k * g`; it is found top-down one bit at a time, so each step costs a
    /// single fixed-point multiplication.
    pub fn round_factor_to_power(&self, x_hat: &Q) -> Result<BigUint, NumericsError> {
        if x_hat < &Q::one() {
            return Err(NumericsError::OutOfRange(x_hat.clone()));
        }
        let z = self.z_bits;
        let g = self.step();
        let scale = Q::from_integer(BigInt::from(BigUint::one() << z));
        let l4 = Q::from_integer(BigInt::from(&self.l << 2u32));
        // x_hat = a / d lies strictly above every power reachable from `acc`:
        // a * 2^Z * L > (val - err) * (L + 1) * d
        let a = x_hat.numer().to_biguint().expect("x_hat >= 1");
        let lhs = (a << z) * &self.l;
        let rhs_factor = x_hat.denom().to_biguint().expect("positive denominator") * (&self.l + 1u32);
        let too_low = |acc: &Fixed, exact: bool| -> bool {
            let low = if exact {
                acc.val.clone()
            } else if acc.err >= acc.val {
                BigUint::zero()
            } else {
                &acc.val - &acc.err
            };
            lhs > low * &rhs_factor
        };
        let one = Fixed::one(z);
        if !too_low(&one, true) {
            return Ok(BigUint::zero());
        }
        let mut top = 0usize;
        while too_low(&self.square(top), false) {
            top += 1;
        }
        let mut acc = one;
        let mut k = BigUint::zero();
        for m in (0..top).rev() {
            let trial = acc.mul(&self.square(m), z);
            if too_low(&trial, false) {
                acc = trial;
                k.set_bit(m as u64, true);
            }
        }
        let result = acc.mul(&self.square(0), z);
        check_error(&result, &self.l, z)?;
        // the lower side of the contract: (b + err) / g <= x_hat
        let b = result.to_q(z);
        let err = Q::from_integer(BigInt::from(result.err.clone())) / &scale;
        debug_assert!(err <= Q::one() / &l4);
        debug_assert!((b + err) / &g <= *x_hat);
        Ok(k + 1u32)
    }

    /// Exponent `e` with `u / (1 + 1/L) <= (1 + 1/L)^e <= u (1 + 1/L)`.
    pub fn round_utility(&self, u: u64) -> Result<BigUint, NumericsError> {
        if u == 0 {
            return Err(NumericsError::ZeroUtility);
        }
        self.round_factor_to_power(&Q::from_integer(BigInt::from(u)))
    }
}

/// Which set of solver constants to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// The provably sufficient constants.
    Paper,
    /// Reduced constants; results are always verified exactly.
    Fast,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Fast => "fast",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Profile::Paper),
            "fast" => Ok(Profile::Fast),
            other => Err(format!("unknown profile `{other}` (expected paper|fast)")),
        }
    }
}

/// Fixed-mode constants: the base `L`, the exponent cap `K` and the exponent
/// of `x_max`.
#[derive(Clone, Debug)]
pub struct FixedConstants {
    pub basis: PowerBasis,
    pub k_cap: BigUint,
    pub x_max_exponent: BigUint,
}

#[derive(Clone, Debug)]
pub struct SolverConstants {
    pub profile: Profile,
    pub n: usize,
    pub u_max: u64,
    /// `R`; `x_max = 1 + 1/(R n^3)` in the paper profile.
    pub r: u64,
    pub epsilon: Q,
    /// `x_max` as an exact factor.
    pub x_max: Q,
    pub fixed: Option<FixedConstants>,
}

pub const PAPER_R: u64 = 256;

impl SolverConstants {
    /// Exact-mode constants.
    pub fn exact(n: usize, u_max: u64, profile: Profile) -> Self {
        let (r, epsilon, x_max) = Self::base(n, u_max, profile);
        SolverConstants { profile, n, u_max, r, epsilon, x_max, fixed: None }
    }

    /// Fixed-mode constants, including `L`, `K` and the power-of-`(1+1/L)` `x_max`.
    pub fn fixed(n: usize, u_max: u64, profile: Profile) -> Result<Self, NumericsError> {
        let (r, epsilon, x_max) = Self::base(n, u_max, profile);
        let nu = BigUint::from(n as u64 * u_max);
        // L = 16 n^5 (nU)^n / eps, which is 128 n^(5n+5) U^(4n) for the paper epsilon.
        let l_q = Q::from_integer(BigInt::from(16u32 * BigUint::from(n as u64).pow(5) * nu.pow(n as u32)))
            / &epsilon;
        let l = l_q.ceil().to_integer().to_biguint().expect("positive");
        let l = l.max(BigUint::from(3u32));
        let basis = PowerBasis::for_market(n, u_max, l)?;

        let x_max_exponent = {
            let k = basis.round_factor_to_power(&x_max)?;
            // keep (1+1/L)^k <= x_max, provably
            let acc = basis.power_fixed(&k);
            let scale = Q::from_integer(BigInt::from(BigUint::one() << basis.z_bits));
            let upper = Q::from_integer(BigInt::from(&acc.val + &acc.err)) / &scale;
            if upper <= x_max || k.is_zero() {
                k
            } else {
                k - 1u32
            }
        };

        let k_cap = {
            let bound = Q::from_integer(BigInt::from(nu.pow(n as u32)));
            let k = basis.round_factor_to_power(&bound)?;
            let scale = Q::from_integer(BigInt::from(BigUint::one() << basis.z_bits));
            let mut cand = if k > BigUint::one() { k - 1u32 } else { BigUint::zero() };
            loop {
                let acc = basis.power_fixed(&cand);
                let lower = Q::from_integer(BigInt::from(acc.val.clone()))
                    - Q::from_integer(BigInt::from(acc.err.clone()));
                if lower / &scale >= bound {
                    break cand;
                }
                cand += 1u32;
            }
        };

        Ok(SolverConstants {
            profile,
            n,
            u_max,
            r,
            epsilon,
            x_max,
            fixed: Some(FixedConstants { basis, k_cap, x_max_exponent }),
        })
    }

    fn base(n: usize, u_max: u64, profile: Profile) -> (u64, Q, Q) {
        let nn = BigInt::from(n as u64);
        let uu = BigInt::from(u_max);
        match profile {
            Profile::Paper => {
                let r = PAPER_R;
                let n4n = num_traits::pow(nn.clone(), 4 * n);
                let u3n = num_traits::pow(uu, 3 * n);
                let epsilon = Q::new(BigInt::one(), BigInt::from(8) * n4n * u3n);
                let x_max = Q::one() + Q::new(BigInt::one(), BigInt::from(r) * num_traits::pow(nn, 3));
                (r, epsilon, x_max)
            }
            Profile::Fast => {
                // x_max = 1 + 1/(4n) keeps type-2 surpluses non-negative when every
                // buyer is active (they hold at least 1/(e n) each).
                let r = 0;
                let nu = BigInt::from(n as u64 * u_max);
                let epsilon = Q::new(BigInt::one(), BigInt::from(8) * num_traits::pow(nu, 2 * n));
                let x_max = Q::one() + Q::new(BigInt::one(), BigInt::from(4u64 * n as u64));
                (r, epsilon, x_max)
            }
        }
    }

    /// `(nU)^e` as an exact integer.
    pub fn nu_pow(&self, e: usize) -> BigInt {
        num_traits::pow(BigInt::from(self.n as u64 * self.u_max), e)
    }

    pub fn basis(&self) -> Option<&PowerBasis> {
        self.fixed.as_ref().map(|f| &f.basis)
    }
}

/// `|a - b|`.
pub fn abs_diff(a: &Q, b: &Q) -> Q {
    (a - b).abs()
}

/// Bit length of the larger of numerator and denominator.
pub fn bitlength(x: &Q) -> u64 {
    x.numer().bits().max(x.denom().bits())
}

/// Lossy conversion for reporting.
pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
