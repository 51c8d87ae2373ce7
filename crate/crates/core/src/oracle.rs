//! Brute-force reference: tracks the posterior of each of the 2^k messages
//! directly and checks the grouped engine against it step by step.

use crate::channel::{ChannelParams, Seed};
use crate::codec::{run_trial, BeliefState, Observer, TrialOptions};
use crate::combinadics::{BinomialTable, BitString};
use crate::count::Count;
use crate::error::{Error, Result};
use crate::group::Group;

/// Largest message length the brute-force tracker accepts.
pub const MAX_ORACLE_K: usize = 16;

/// Per-message posterior over all 2^k messages; message `i` has bit `j`
/// equal to bit `j` of `i`.
#[derive(Clone, Debug)]
pub struct BruteForce {
    params: ChannelParams,
    posterior: Vec<f64>,
}

impl BruteForce {
    pub fn new(k: usize, params: ChannelParams) -> Result<Self> {
        if k == 0 || k > MAX_ORACLE_K {
            return Err(Error::param(format!("brute-force tracking needs 1 <= k <= {MAX_ORACLE_K}, got {k}")));
        }
        let n = 1usize << k;
        Ok(BruteForce { params, posterior: vec![1.0 / n as f64; n] })
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    /// Probability of the messages labelled 0.
    pub fn pi0(&self, labels: &[u8]) -> f64 {
        self.posterior.iter().zip(labels).filter(|(_, &x)| x == 0).map(|(p, _)| p).sum()
    }

    /// Bayes update with the label each message would have sent.
    pub fn update(&mut self, y: u8, labels: &[u8]) {
        let mut total = 0.0;
        for (p, &x) in self.posterior.iter_mut().zip(labels) {
            *p *= self.params.likelihood(x, y);
            total += *p;
        }
        for p in &mut self.posterior {
            *p /= total;
        }
    }

    /// Most likely message and whether it is strictly ahead of the rest.
    pub fn argmax(&self) -> (usize, bool) {
        let mut best = 0;
        for (i, &p) in self.posterior.iter().enumerate() {
            if p > self.posterior[best] {
                best = i;
            }
        }
        let unique = self.posterior.iter().enumerate().all(|(i, &p)| i == best || p < self.posterior[best]);
        (best, unique)
    }
}

/// Weight-d error patterns in increasing integer order, by enumeration.
#[derive(Clone, Debug)]
struct PatternRanks {
    by_weight: Vec<Vec<u64>>,
}

impl PatternRanks {
    fn new(k: usize) -> Self {
        let mut by_weight = vec![Vec::new(); k + 1];
        for e in 0u64..(1 << k) {
            by_weight[e.count_ones() as usize].push(e);
        }
        PatternRanks { by_weight }
    }

    fn pattern(&self, d: usize, index: usize) -> Option<u64> {
        self.by_weight.get(d)?.get(index).copied()
    }
}

fn bits_of(s: &BitString) -> u64 {
    s.to_u64().expect("oracle message lengths fit in u64")
}

/// Observer comparing a trial against the brute-force tracker.
pub struct OracleObserver {
    k: usize,
    tracker: BruteForce,
    ranks: PatternRanks,
    labels: Vec<u8>,
    pub max_posterior_error: f64,
    pub max_systematic_imbalance: f64,
    pub transmissions: u64,
}

impl OracleObserver {
    pub fn new(k: usize, params: ChannelParams) -> Result<Self> {
        Ok(OracleObserver {
            k,
            tracker: BruteForce::new(k, params)?,
            ranks: PatternRanks::new(k),
            labels: vec![0; 1 << k],
            max_posterior_error: 0.0,
            max_systematic_imbalance: 0.0,
            transmissions: 0,
        })
    }

    pub fn tracker(&self) -> &BruteForce {
        &self.tracker
    }

    /// Expands the engine's state into per-message (label, posterior).
    fn expand<C: Count>(&self, belief: &BeliefState<'_, C>) -> Result<Vec<Option<(u8, f64)>>> {
        let list = belief.list().ok_or_else(|| Error::invariant("no list to expand"))?;
        let received = bits_of(belief.received());
        let log_total = list.log_total_mass();
        let mut out = vec![None; 1 << self.k];
        let tail: Vec<Group<C>> = belief.tail().members(list).collect();
        for g in list.groups().iter().chain(&tail) {
            let mut idx = g.start().clone();
            let end = g.end();
            let entry = Some((g.side().label(), (g.log_delta() - log_total).exp()));
            while idx < end {
                let rank: usize = idx.to_f64() as usize;
                let e = self
                    .ranks
                    .pattern(g.d(), rank)
                    .ok_or_else(|| Error::invariant(format!("group ({}, {idx}) outside the message set", g.d())))?;
                let slot = &mut out[(e ^ received) as usize];
                if slot.is_some() {
                    return Err(Error::invariant(format!("message {} covered twice", e ^ received)));
                }
                *slot = entry;
                idx = idx.add(&C::one());
            }
        }
        Ok(out)
    }

    fn compare(&mut self, expanded: &[Option<(u8, f64)>]) -> Result<()> {
        for (e, &p) in expanded.iter().zip(self.tracker.posterior()) {
            let (_, q) = e.ok_or_else(|| Error::invariant("message missing from list and tail"))?;
            self.max_posterior_error = self.max_posterior_error.max((q - p).abs());
        }
        Ok(())
    }
}

impl<C: Count> Observer<C> for OracleObserver {
    fn on_transmission(&mut self, t: usize, _x: u8, y: u8, belief: &BeliefState<'_, C>) -> Result<()> {
        self.transmissions += 1;
        if t <= self.k {
            for (i, l) in self.labels.iter_mut().enumerate() {
                *l = ((i >> (t - 1)) & 1) as u8;
            }
            let imbalance = (self.tracker.pi0(&self.labels) - 0.5).abs();
            self.max_systematic_imbalance = self.max_systematic_imbalance.max(imbalance);
            self.tracker.update(y, &self.labels);
            if t == self.k {
                self.compare(&self.expand(belief)?)?;
            }
        } else {
            // sides still hold the labels just sent; the next partition has not run yet
            let expanded = self.expand(belief)?;
            for (l, e) in self.labels.iter_mut().zip(&expanded) {
                *l = e.ok_or_else(|| Error::invariant("message missing from list and tail"))?.0;
            }
            self.tracker.update(y, &self.labels);
            self.compare(&expanded)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleReport {
    pub trials: u64,
    pub transmissions: u64,
    pub max_posterior_error: f64,
    pub max_systematic_imbalance: f64,
    pub decode_mismatches: u64,
    pub ambiguous_decodes: u64,
}

impl OracleReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_posterior_error <= tolerance
            && self.max_systematic_imbalance <= 1e-12
            && self.decode_mismatches == 0
            && self.ambiguous_decodes == 0
    }
}

/// Runs `trials` seeded trials at `k` and compares each against the
/// brute-force tracker.
pub fn validate(k: usize, params: &ChannelParams, options: &TrialOptions, trials: u64, root: Seed) -> Result<OracleReport> {
    let table = BinomialTable::<u128>::new(k)?;
    let mut report = OracleReport { trials, ..Default::default() };
    for i in 0..trials {
        let mut obs = OracleObserver::new(k, *params)?;
        let rec = run_trial(k, params, options, root.trial(i), &table, Some(&mut obs))?;
        report.transmissions += obs.transmissions;
        report.max_posterior_error = report.max_posterior_error.max(obs.max_posterior_error);
        report.max_systematic_imbalance = report.max_systematic_imbalance.max(obs.max_systematic_imbalance);
        let (best, unique) = obs.tracker().argmax();
        if best as u64 != bits_of(&rec.decoded) {
            report.decode_mismatches += 1;
        }
        if !unique {
            report.ambiguous_decodes += 1;
        }
    }
    Ok(report)
}
