//! Binary symmetric channel and the per-trial randomness contract.
//!
//! Every trial is driven by one root seed. The seed is expanded into
//! independent ChaCha streams: the message source, the forward-channel
//! noise, and the common randomness shared by transmitter and receiver
//! (threshold randomization). Feedback is noiseless and is not simulated:
//! both endpoints simply see every channel output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crossover probability of a BSC and its complement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    p: f64,
    q: f64,
}

impl ChannelParams {
    /// `p = 0` is accepted as the degenerate noiseless channel.
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&p) {
            return Err(Error::param(format!("crossover probability {p} not in [0, 0.5)")));
        }
        Ok(ChannelParams { p, q: 1.0 - p })
    }

    pub fn noiseless() -> Self {
        ChannelParams { p: 0.0, q: 1.0 }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn ln_p(&self) -> f64 {
        self.p.ln()
    }

    pub fn ln_q(&self) -> f64 {
        self.q.ln()
    }

    /// Log-odds step ln(q/p) of a single confirming or contradicting output.
    pub fn llr_step(&self) -> f64 {
        self.ln_q() - self.ln_p()
    }

    /// Capacity 1 - H(p) in bits per channel use.
    pub fn capacity(&self) -> f64 {
        let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
        1.0 - h(self.p) - h(self.q)
    }

    /// Likelihood P(Y = y | X = x).
    pub fn likelihood(&self, x: u8, y: u8) -> f64 {
        if x == y {
            self.q
        } else {
            self.p
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

/// Sub-stream identifiers of a trial seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Message = 0,
    Channel = 1,
    Common = 2,
}

impl Seed {
    /// Seed of trial `index` under this root seed. Depends only on
    /// `(root, index)`, never on scheduling.
    pub fn trial(self, index: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x5EED))))
    }

    pub fn stream(self, stream: Stream) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&self.0.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(stream as u64);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sends one bit through BSC(p). Consumes exactly one draw from `rng`.
pub fn transmit_bit<R: Rng + ?Sized>(x: u8, params: &ChannelParams, rng: &mut R) -> u8 {
    debug_assert!(x <= 1);
    let u: f64 = rng.random();
    if u < params.p {
        x ^ 1
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_crossover() {
        assert!(ChannelParams::new(0.5).is_err());
        assert!(ChannelParams::new(-0.1).is_err());
        assert!(ChannelParams::new(f64::NAN).is_err());
        let c = ChannelParams::new(0.05).unwrap();
        assert_eq!(c.p() + c.q(), 1.0);
    }

    #[test]
    fn noiseless_is_identity() {
        let params = ChannelParams::noiseless();
        let mut rng = Seed(3).stream(Stream::Channel);
        for _ in 0..1000 {
            assert_eq!(transmit_bit(0, &params, &mut rng), 0);
            assert_eq!(transmit_bit(1, &params, &mut rng), 1);
        }
    }

    #[test]
    fn flip_rate_matches_crossover() {
        // 3 sigma of a Bernoulli(0.05) mean over 1e6 draws is 6.5e-4.
        let params = ChannelParams::new(0.05).unwrap();
        let mut rng = Seed(11).stream(Stream::Channel);
        let n = 1_000_000;
        let flips = (0..n).filter(|_| transmit_bit(0, &params, &mut rng) == 1).count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.05).abs() <= 0.001, "flip rate {rate}");
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let s = Seed(42).trial(7);
        let a: Vec<u64> = (0..8).map(|_| s.stream(Stream::Channel).random()).collect();
        let b: Vec<u64> = (0..8).map(|_| s.stream(Stream::Channel).random()).collect();
        assert_eq!(a, b);
        let mut ch = s.stream(Stream::Channel);
        let mut co = s.stream(Stream::Common);
        let x: Vec<u64> = (0..8).map(|_| ch.random()).collect();
        let y: Vec<u64> = (0..8).map(|_| co.random()).collect();
        assert_ne!(x, y);
        assert_ne!(Seed(42).trial(7), Seed(42).trial(8));
    }

    #[test]
    fn capacity_of_bsc() {
        let c = ChannelParams::new(0.05).unwrap().capacity();
        assert!((c - 0.713_603_042_884_044).abs() < 1e-12);
        assert_eq!(ChannelParams::noiseless().capacity(), 1.0);
    }
}
