//! Modular arithmetic over the reals.
//!
//! `mod(x, M) = x - p*M` for the unique integer `p` that puts the result in
//! `[0, M)`. Arithmetic is generic over a [`ModScalar`] backend:
//!
//! * [`Fixed`] stores integer multiples of `1/scale` in an `i64`, so sums,
//!   differences and reductions are exact and the wrapped aggregate of a
//!   set of masks cancels to exactly zero.
//! * `f32` / `f64` are plain floating point and carry a tolerance.

use std::cmp::Ordering;
use std::fmt::Debug;
use std::ops::{Add, Neg, Sub};

use num_traits::{Float, FromPrimitive, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid resolution of the exact backend: 2^32 ticks per unit.
pub const DEFAULT_SCALE: u64 = 1 << 32;

/// Default relative tolerance of the floating backend.
pub const DEFAULT_FLOAT_TOLERANCE: f64 = 1e-9;

/// Largest modulus, in ticks, the exact backend accepts. Two reduced values
/// must add without overflowing an `i64`.
const MAX_MODULUS_TICKS: i64 = 1 << 61;

/// Description of the arithmetic backing a [`ModulusContext`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Backend {
    ExactScaledInteger {
        scale: u64,
    },
    /// `tolerance` is relative to the modulus.
    Floating {
        tolerance: f64,
    },
}

/// Scalar types usable as protocol payloads.
pub trait ModScalar:
    Copy
    + Debug
    + PartialEq
    + PartialOrd
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + Send
    + Sync
    + Serialize
    + 'static
{
    type Params: Copy + Debug + PartialEq + Send + Sync + 'static;

    fn default_params() -> Self::Params;

    fn backend(params: &Self::Params) -> Backend;

    /// Converts `x` without rounding. Fails if `x` is off the grid.
    fn encode_exact(x: f64, params: &Self::Params) -> Result<Self>;

    /// Rounds `x` to the nearest representable value, ties to even.
    fn quantize(x: f64, params: &Self::Params) -> Result<Self>;

    fn to_real(self, params: &Self::Params) -> f64;

    /// Reduces into `[0, modulus)`.
    fn reduce(self, modulus: Self) -> Self;

    /// `mod(sum(values), modulus)`, accumulated without intermediate loss
    /// where the backend allows it.
    fn reduced_sum<I: IntoIterator<Item = Self>>(values: I, modulus: Self) -> Self;

    /// Uniform draw from `[0, modulus)` on the backend's grid.
    fn sample_below<R: Rng + ?Sized>(rng: &mut R, modulus: Self) -> Self;

    fn total_cmp(&self, other: &Self) -> Ordering;

    /// Maps values that sit within tolerance below `modulus` to zero. No-op on
    /// exact backends.
    fn settle(self, modulus: Self, params: &Self::Params) -> Self;

    /// Whether sums of two reduced values stay representable.
    fn usable_modulus(self) -> bool {
        true
    }
}

/// Fixed-point value: an integer count of `1/scale` ticks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fixed(i64);

impl Fixed {
    pub const fn from_ticks(ticks: i64) -> Self {
        Fixed(ticks)
    }

    pub const fn ticks(self) -> i64 {
        self.0
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 + rhs.0)
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 - rhs.0)
    }
}

impl Neg for Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed(-self.0)
    }
}

impl Zero for Fixed {
    fn zero() -> Self {
        Fixed(0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

/// Grid resolution of the exact backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale(pub u64);

impl Default for Scale {
    fn default() -> Self {
        Scale(DEFAULT_SCALE)
    }
}

fn scaled_to_ticks(y: f64, x: f64) -> Result<i64> {
    // 2^62 is exactly representable, so this bound check is precise.
    if y.abs() >= (1u64 << 62) as f64 {
        return Err(Error::domain(format!("{x} is too large for the exact backend")));
    }
    Ok(y as i64)
}

impl ModScalar for Fixed {
    type Params = Scale;

    fn default_params() -> Scale {
        Scale::default()
    }

    fn backend(params: &Scale) -> Backend {
        Backend::ExactScaledInteger { scale: params.0 }
    }

    fn encode_exact(x: f64, params: &Scale) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::domain(format!("non-finite value {x}")));
        }
        let y = x * params.0 as f64;
        if y.fract() != 0.0 {
            return Err(Error::Precision { value: x, scale: params.0 });
        }
        scaled_to_ticks(y, x).map(Fixed)
    }

    fn quantize(x: f64, params: &Scale) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::domain(format!("non-finite value {x}")));
        }
        scaled_to_ticks((x * params.0 as f64).round_ties_even(), x).map(Fixed)
    }

    fn to_real(self, params: &Scale) -> f64 {
        self.0 as f64 / params.0 as f64
    }

    fn reduce(self, modulus: Self) -> Self {
        Fixed(self.0.rem_euclid(modulus.0))
    }

    fn reduced_sum<I: IntoIterator<Item = Self>>(values: I, modulus: Self) -> Self {
        let total: i128 = values.into_iter().map(|v| v.0 as i128).sum();
        Fixed(total.rem_euclid(modulus.0 as i128) as i64)
    }

    fn sample_below<R: Rng + ?Sized>(rng: &mut R, modulus: Self) -> Self {
        Fixed(rng.gen_range(0..modulus.0))
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }

    fn settle(self, _modulus: Self, _params: &Scale) -> Self {
        self
    }

    fn usable_modulus(self) -> bool {
        self.0 < MAX_MODULUS_TICKS
    }
}

/// Relative tolerance of the floating backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance(pub f64);

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance(DEFAULT_FLOAT_TOLERANCE)
    }
}

fn float_reduce<F: Float>(x: F, m: F) -> F {
    let mut r = x % m;
    if r < F::zero() {
        r = r + m;
    }
    // -tiny + m can round up to m itself.
    if r >= m {
        F::zero()
    } else {
        r
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl ModScalar for $t {
            type Params = Tolerance;

            fn default_params() -> Tolerance {
                Tolerance::default()
            }

            fn backend(params: &Tolerance) -> Backend {
                Backend::Floating { tolerance: params.0 }
            }

            fn encode_exact(x: f64, params: &Tolerance) -> Result<Self> {
                Self::quantize(x, params)
            }

            fn quantize(x: f64, _params: &Tolerance) -> Result<Self> {
                match <$t as FromPrimitive>::from_f64(x) {
                    Some(v) if Float::is_finite(v) => Ok(v),
                    _ => Err(Error::domain(format!("non-finite value {x}"))),
                }
            }

            fn to_real(self, _params: &Tolerance) -> f64 {
                ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
            }

            fn reduce(self, modulus: Self) -> Self {
                float_reduce(self, modulus)
            }

            fn reduced_sum<I: IntoIterator<Item = Self>>(values: I, modulus: Self) -> Self {
                // Summing in f64 keeps f32 payloads from losing the low bits.
                let m = ToPrimitive::to_f64(&modulus).unwrap_or(f64::NAN);
                let total: f64 = values.into_iter().map(|v| ToPrimitive::to_f64(&v).unwrap_or(f64::NAN)).sum();
                let r = <$t as FromPrimitive>::from_f64(float_reduce(total, m)).unwrap_or(<$t>::NAN);
                float_reduce(r, modulus)
            }

            fn sample_below<R: Rng + ?Sized>(rng: &mut R, modulus: Self) -> Self {
                let u: $t = rng.gen();
                let v = u * modulus;
                if v >= modulus {
                    0.0
                } else {
                    v
                }
            }

            fn total_cmp(&self, other: &Self) -> Ordering {
                <$t>::total_cmp(self, other)
            }

            fn settle(self, modulus: Self, params: &Tolerance) -> Self {
                let slack = <$t as FromPrimitive>::from_f64(params.0).unwrap_or(0.0) * modulus;
                if modulus - self <= slack {
                    0.0
                } else {
                    self
                }
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

/// A value known to lie in `[0, modulus)` of the context that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModValue<S>(S);

impl<S: ModScalar> ModValue<S> {
    pub fn value(self) -> S {
        self.0
    }
}

/// Wrap-around bound plus the numeric backend used for all modular
/// arithmetic in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusContext<S: ModScalar> {
    modulus: S,
    params: S::Params,
}

impl<S: ModScalar> ModulusContext<S> {
    /// The modulus must be positive and, on the exact backend, on the grid.
    pub fn new(modulus: f64, params: S::Params) -> Result<Self> {
        if !modulus.is_finite() || modulus <= 0.0 {
            return Err(Error::domain(format!("modulus must be positive and finite, got {modulus}")));
        }
        let m = S::encode_exact(modulus, &params)?;
        if !m.usable_modulus() {
            return Err(Error::domain(format!("modulus {modulus} exceeds the backend's range")));
        }
        if m <= S::zero() {
            return Err(Error::domain(format!("modulus {modulus} underflows the backend")));
        }
        Ok(ModulusContext { modulus: m, params })
    }

    pub fn with_default_params(modulus: f64) -> Result<Self> {
        Self::new(modulus, S::default_params())
    }

    pub fn modulus(&self) -> S {
        self.modulus
    }

    pub fn modulus_real(&self) -> f64 {
        self.modulus.to_real(&self.params)
    }

    pub fn params(&self) -> &S::Params {
        &self.params
    }

    pub fn backend(&self) -> Backend {
        S::backend(&self.params)
    }

    /// Absolute tolerance for comparisons: zero on the exact backend.
    pub fn tolerance(&self) -> f64 {
        match self.backend() {
            Backend::ExactScaledInteger { .. } => 0.0,
            Backend::Floating { tolerance } => tolerance * self.modulus_real(),
        }
    }

    pub fn mod_reduce(&self, x: f64) -> Result<ModValue<S>> {
        Ok(self.reduce(S::encode_exact(x, &self.params)?))
    }

    pub fn mod_sum(&self, values: &[f64]) -> Result<ModValue<S>> {
        let encoded = values.iter().map(|&x| S::encode_exact(x, &self.params)).collect::<Result<Vec<_>>>()?;
        Ok(self.sum(encoded))
    }

    pub fn mod_neg(&self, x: f64) -> Result<ModValue<S>> {
        Ok(self.neg(self.mod_reduce(x)?))
    }

    pub fn quantize(&self, x: f64) -> Result<S> {
        S::quantize(x, &self.params)
    }

    pub fn to_real(&self, s: S) -> f64 {
        s.to_real(&self.params)
    }

    pub fn reduce(&self, s: S) -> ModValue<S> {
        self.checked(s.reduce(self.modulus))
    }

    pub fn sum<I: IntoIterator<Item = S>>(&self, values: I) -> ModValue<S> {
        self.checked(S::reduced_sum(values, self.modulus))
    }

    pub fn add(&self, a: ModValue<S>, b: ModValue<S>) -> ModValue<S> {
        self.reduce(a.0 + b.0)
    }

    pub fn sub(&self, a: ModValue<S>, b: ModValue<S>) -> ModValue<S> {
        self.reduce(a.0 - b.0)
    }

    pub fn neg(&self, a: ModValue<S>) -> ModValue<S> {
        self.reduce(S::zero() - a.0)
    }

    /// Validates an externally supplied value against `[0, modulus)`.
    pub fn wrap(&self, s: S) -> Result<ModValue<S>> {
        if s >= S::zero() && s < self.modulus {
            Ok(ModValue(s))
        } else {
            Err(Error::domain(format!("{s:?} is outside [0, modulus)")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ModValue<S> {
        self.checked(S::sample_below(rng, self.modulus))
    }

    /// Snaps a wrapped aggregate that sits within tolerance of the modulus
    /// back to zero.
    pub fn settle(&self, v: ModValue<S>) -> ModValue<S> {
        ModValue(v.0.settle(self.modulus, &self.params))
    }

    /// Distance between two values on the circle of circumference `modulus`,
    /// in real units.
    pub fn circular_distance(&self, a: S, b: S) -> f64 {
        let d = self.sub(ModValue(a), ModValue(b)).0.to_real(&self.params);
        d.min(self.modulus_real() - d)
    }

    fn checked(&self, s: S) -> ModValue<S> {
        debug_assert!(s >= S::zero() && s < self.modulus, "{s:?} escaped [0, {:?})", self.modulus);
        ModValue(s)
    }
}
