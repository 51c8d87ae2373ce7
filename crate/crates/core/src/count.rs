//! Exact integer type for message counts and combinadic indices.
//!
//! Group sizes reach C(k, k/2), which overflows 64 bits at k = 68 and 128
//! bits at k = 132. Small blocks run on `u128`; larger ones on `BigUint`.

use std::fmt;
use std::hash::Hash;

use num_bigint::BigUint;
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};

pub trait Count: Clone + Ord + Hash + fmt::Debug + fmt::Display + Send + Sync + 'static {
    /// Largest k for which every C(k, r) is representable.
    const MAX_K: usize;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_u64(v: u64) -> Self;
    fn add(&self, rhs: &Self) -> Self;
    /// Panics on underflow.
    fn sub(&self, rhs: &Self) -> Self;
    fn is_zero(&self) -> bool;
    fn to_f64(&self) -> f64;
    /// Smallest integer >= `x`, for finite non-negative `x`; `None` when not representable.
    fn ceil_from_f64(x: f64) -> Option<Self>;
}

impl Count for u128 {
    const MAX_K: usize = 131;

    fn zero() -> Self {
        0
    }
    fn one() -> Self {
        1
    }
    fn from_u64(v: u64) -> Self {
        v as u128
    }
    fn add(&self, rhs: &Self) -> Self {
        self.checked_add(*rhs).expect("u128 count overflow")
    }
    fn sub(&self, rhs: &Self) -> Self {
        self.checked_sub(*rhs).expect("u128 count underflow")
    }
    fn is_zero(&self) -> bool {
        *self == 0
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn ceil_from_f64(x: f64) -> Option<Self> {
        if !(x.is_finite() && x >= 0.0) {
            return None;
        }
        let c = x.ceil();
        // u128::MAX as f64 rounds up to 2^128
        if c >= u128::MAX as f64 {
            return None;
        }
        Some(c as u128)
    }
}

impl Count for BigUint {
    const MAX_K: usize = usize::MAX;

    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_u64(v: u64) -> Self {
        BigUint::from(v)
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::INFINITY)
    }
    fn ceil_from_f64(x: f64) -> Option<Self> {
        if !(x.is_finite() && x >= 0.0) {
            return None;
        }
        BigUint::from_f64(x.ceil())
    }
}
