//! Enumerative indexing of k-bit flip patterns of fixed Hamming weight.
//!
//! A pattern with ones at positions `i_1 < i_2 < ... < i_d` has index
//! `C(i_1, 1) + C(i_2, 2) + ... + C(i_d, d)`. This is the rank of the pattern
//! among all weight-d patterns when a pattern is read as the integer
//! `sum 2^{i_j}`, i.e. position 0 is the least significant bit.

use std::fmt;

use crate::count::Count;
use crate::error::{Error, Result};

/// A k-bit string `b_0 b_1 ... b_{k-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn zeros(k: usize) -> Self {
        BitString(vec![false; k])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BitString(bits)
    }

    /// Bit j of `value` becomes `b_j`.
    pub fn from_u64(k: usize, value: u64) -> Self {
        BitString((0..k).map(|j| j < 64 && (value >> j) & 1 == 1).collect())
    }

    pub fn to_u64(&self) -> Option<u64> {
        if self.0.len() > 64 {
            return None;
        }
        Some(self.0.iter().enumerate().fold(0, |acc, (j, &b)| acc | ((b as u64) << j)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bit(&self, j: usize) -> u8 {
        self.0[j] as u8
    }

    pub fn push(&mut self, bit: u8) {
        self.0.push(bit != 0);
    }

    pub fn flip(&mut self, j: usize) {
        self.0[j] = !self.0[j];
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Positions holding a one, increasing.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len(), other.len(), "xor of unequal lengths");
        BitString(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Triangular table of `C(n, r)` for `0 <= r <= n <= k_max`.
#[derive(Clone, Debug)]
pub struct BinomialTable<C> {
    k_max: usize,
    entries: Vec<C>,
    zero: C,
}

impl<C: Count> BinomialTable<C> {
    pub fn new(k_max: usize) -> Result<Self> {
        if k_max > C::MAX_K {
            return Err(Error::TableTooSmall { k_max: C::MAX_K, k: k_max });
        }
        let mut entries: Vec<C> = Vec::with_capacity((k_max + 1) * (k_max + 2) / 2);
        for n in 0..=k_max {
            let row = n * (n + 1) / 2;
            let prev = row.saturating_sub(n);
            for r in 0..=n {
                let c = if r == 0 || r == n {
                    C::one()
                } else {
                    entries[prev + r - 1].add(&entries[prev + r])
                };
                entries.push(c);
            }
        }
        Ok(BinomialTable { k_max, entries, zero: C::zero() })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Number of stored coefficients, `(k_max + 1)(k_max + 2) / 2`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `C(n, r)`, zero for `r > n`.
    pub fn choose(&self, n: usize, r: usize) -> &C {
        assert!(n <= self.k_max, "C({n}, {r}) outside table of size {}", self.k_max);
        if r > n {
            &self.zero
        } else {
            &self.entries[n * (n + 1) / 2 + r]
        }
    }

    pub(crate) fn ensure_covers(&self, k: usize) -> Result<()> {
        if k > self.k_max {
            Err(Error::TableTooSmall { k_max: self.k_max, k })
        } else {
            Ok(())
        }
    }
}

/// Positions of the ones of a weight-d flip pattern over k bits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DistancePattern {
    k: usize,
    positions: Vec<usize>,
}

impl DistancePattern {
    pub fn new(k: usize, positions: Vec<usize>) -> Result<Self> {
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPattern(format!("positions {positions:?} not strictly increasing")));
        }
        if positions.last().is_some_and(|&last| last >= k) {
            return Err(Error::InvalidPattern(format!("positions {positions:?} exceed k = {k}")));
        }
        Ok(DistancePattern { k, positions })
    }

    /// The flip pattern `message ^ received`.
    pub fn between(message: &BitString, received: &BitString) -> Self {
        let diff = message.xor(received);
        DistancePattern { k: diff.len(), positions: diff.ones().collect() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weight(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }
}

pub fn index_of<C: Count>(pattern: &DistancePattern, table: &BinomialTable<C>) -> Result<C> {
    table.ensure_covers(pattern.k)?;
    Ok(pattern
        .positions
        .iter()
        .enumerate()
        .fold(C::zero(), |acc, (j, &i)| acc.add(table.choose(i, j + 1))))
}

/// Inverse of [`index_of`]: greedily picks `i_d`, then `i_{d-1}`, and so on.
pub fn pattern_of<C: Count>(index: &C, k: usize, d: usize, table: &BinomialTable<C>) -> Result<DistancePattern> {
    table.ensure_covers(k)?;
    if d > k || index >= table.choose(k, d) {
        return Err(Error::IndexOutOfRange { index: index.to_string(), k, d });
    }
    let mut rest = index.clone();
    let mut positions = vec![0; d];
    let mut upper = k;
    for w in (1..=d).rev() {
        // largest c < upper with C(c, w) <= rest; C(w-1, w) = 0 guarantees a hit
        let mut c = upper - 1;
        while table.choose(c, w) > &rest {
            c -= 1;
        }
        rest = rest.sub(table.choose(c, w));
        positions[w - 1] = c;
        upper = c;
    }
    debug_assert!(rest.is_zero());
    Ok(DistancePattern { k, positions })
}

/// Flips `received` at the pattern with the given weight and index.
pub fn reconstruct_message<C: Count>(
    index: &C,
    d: usize,
    received: &BitString,
    table: &BinomialTable<C>,
) -> Result<BitString> {
    let pattern = pattern_of(index, received.len(), d, table)?;
    let mut message = received.clone();
    for &j in pattern.positions() {
        message.flip(j);
    }
    Ok(message)
}

/// Distance and index of `message` relative to `received`.
pub fn coordinates_of<C: Count>(
    message: &BitString,
    received: &BitString,
    table: &BinomialTable<C>,
) -> Result<(usize, C)> {
    let pattern = DistancePattern::between(message, received);
    let index = index_of(&pattern, table)?;
    Ok((pattern.weight(), index))
}
