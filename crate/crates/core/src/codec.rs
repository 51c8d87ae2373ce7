//! Transmitter and receiver state machines.
//!
//! The first k transmissions send the message bits uncoded. Afterwards both
//! ends hold the same grouped posterior, partition it, and the transmitter
//! sends the set label of its message. Feedback is noiseless, so the
//! receiver's state is a deterministic function of what both sides see and
//! the two copies never diverge.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::channel::{transmit_bit, ChannelParams, Seed, Stream};
use crate::combinadics::{coordinates_of, reconstruct_message, BinomialTable, BitString};
use crate::count::Count;
use crate::error::{Error, Result};
use crate::group::GroupList;
use crate::partition::{label_of, partition, CriterionCheck, PartitionError, PartitionPolicy};
use crate::stopping::{error_at, StopRule, StopState};
use crate::tail::{TailAggregate, Watermarks};

/// Label sent at systematic transmission `t` (1-based): bit `t - 1` of the message.
pub fn systematic_label(message: &BitString, t: usize) -> Result<u8> {
    if t == 0 || t > message.len() {
        return Err(Error::param(format!("systematic transmission {t} outside 1..={}", message.len())));
    }
    Ok(message.bit(t - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Systematic,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    pub policy: PartitionPolicy,
    pub stop: StopRule,
    /// Tail compaction thresholds; `None` keeps every group in the list.
    pub compaction: Option<Watermarks>,
    /// Recheck the partition criterion after every partition.
    pub verify: bool,
    /// Run an independent receiver and compare it with the transmitter every step.
    pub mirror: bool,
    pub record_transcript: bool,
    pub max_transmissions: Option<usize>,
}

impl TrialOptions {
    pub fn new(policy: PartitionPolicy, stop: StopRule) -> Self {
        TrialOptions {
            policy,
            stop,
            compaction: None,
            verify: false,
            mirror: false,
            record_transcript: false,
            max_transmissions: None,
        }
    }
}

/// Counters kept by a [`BeliefState`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BeliefStats {
    pub partitions: u64,
    pub splits: u64,
    pub max_splits: usize,
    pub violations: u64,
    pub tail_conflicts: u64,
    pub tail_releases: u64,
    pub list_len_sum: u64,
    pub list_len_peak: usize,
}

/// Posterior state shared, by construction, between transmitter and receiver.
#[derive(Clone, Debug)]
pub struct BeliefState<'a, C> {
    k: usize,
    params: ChannelParams,
    policy: PartitionPolicy,
    compaction: Option<Watermarks>,
    verify: bool,
    table: &'a BinomialTable<C>,
    t: usize,
    received: BitString,
    list: Option<GroupList<C>>,
    tail: TailAggregate<C>,
    stop: StopState,
    stopped: bool,
    prepared: bool,
    stats: BeliefStats,
}

impl<C: Count> PartialEq for BeliefState<'_, C> {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.received == other.received
            && self.list == other.list
            && self.tail == other.tail
            && self.stop == other.stop
            && self.stopped == other.stopped
    }
}

impl<'a, C: Count> BeliefState<'a, C> {
    pub fn new(k: usize, params: ChannelParams, options: &TrialOptions, table: &'a BinomialTable<C>) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("message length must be at least 1"));
        }
        table.ensure_covers(k)?;
        Ok(BeliefState {
            k,
            params,
            policy: options.policy,
            compaction: options.compaction,
            verify: options.verify,
            table,
            t: 0,
            received: BitString::zeros(0),
            list: None,
            tail: TailAggregate::new(),
            stop: StopState::new(options.stop),
            stopped: false,
            prepared: false,
            stats: BeliefStats::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Transmissions observed so far.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Phase of the next transmission.
    pub fn phase(&self) -> Phase {
        if self.t < self.k {
            Phase::Systematic
        } else {
            Phase::Adaptive
        }
    }

    pub fn received(&self) -> &BitString {
        &self.received
    }

    /// The group list; exists from transmission k on.
    pub fn list(&self) -> Option<&GroupList<C>> {
        self.list.as_ref()
    }

    pub fn tail(&self) -> &TailAggregate<C> {
        &self.tail
    }

    pub fn stop_state(&self) -> &StopState {
        &self.stop
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn stats(&self) -> &BeliefStats {
        &self.stats
    }

    /// Current log-posterior and set label of the message at `(d, index)`,
    /// wherever it is held.
    pub fn locate(&self, d: usize, index: &C) -> Option<(f64, u8)> {
        let list = self.list.as_ref()?;
        if let Some(g) = list.locate(d, index) {
            return Some((g.log_delta(), g.side().label()));
        }
        self.tail.locate(d, index, list).map(|l| (l, 1))
    }

    /// Partitions the list for the next adaptive transmission.
    pub fn prepare(&mut self) -> Result<()> {
        if self.prepared {
            return Ok(());
        }
        if self.stopped {
            return Err(Error::invariant("transmission after stop"));
        }
        let list = match (&mut self.list, self.t >= self.k) {
            (Some(list), true) => list,
            _ => return Err(Error::invariant(format!("adaptive partition requested at t = {}", self.t + 1))),
        };
        let outcome = match partition(list, self.policy, self.tail.ceiling(list)) {
            Ok(out) => out,
            Err(PartitionError::TailConflict) => {
                self.stats.tail_conflicts += 1;
                self.stats.tail_releases += 1;
                self.tail.release(list);
                partition(list, self.policy, None).map_err(|e| Error::invariant(e.to_string()))?
            }
            Err(e) => return Err(Error::invariant(e.to_string())),
        };
        self.stats.partitions += 1;
        self.stats.splits += outcome.splits as u64;
        self.stats.max_splits = self.stats.max_splits.max(outcome.splits);
        if self.verify {
            let within_splits = self.policy != PartitionPolicy::Relaxed || outcome.splits <= 1;
            if !CriterionCheck::of(list).holds(self.policy) || !within_splits {
                self.stats.violations += 1;
            }
        }
        self.prepared = true;
        Ok(())
    }

    /// Label of `(d, index)` under the prepared partition.
    pub fn label(&self, d: usize, index: &C) -> Result<u8> {
        if !self.prepared {
            return Err(Error::invariant("label requested before partition"));
        }
        let list = self.list.as_ref().expect("prepared implies a list");
        match label_of(d, index, list) {
            Ok(x) => Ok(x),
            Err(e) => self.tail.locate(d, index, list).map(|_| 1).ok_or(e),
        }
    }

    /// Applies channel output `y`. Returns whether the trial stops here.
    pub fn observe<R: Rng + ?Sized>(&mut self, y: u8, common: &mut R) -> Result<bool> {
        if self.stopped {
            return Err(Error::invariant("observation after stop"));
        }
        if self.t < self.k {
            self.received.push(y);
            self.t += 1;
            if self.t == self.k {
                self.list = Some(GroupList::after_systematic(self.k, &self.params, self.table)?);
            } else {
                return Ok(false);
            }
        } else {
            if !self.prepared {
                return Err(Error::invariant("observation before partition"));
            }
            let list = self.list.as_mut().expect("adaptive phase has a list");
            let update = list.bayes_update(y, &self.params)?;
            self.tail.accumulate(update.s1_missed);
            list.merge_sorted();
            self.t += 1;
            if let Some(w) = self.compaction {
                self.stats.tail_releases += (self.tail.release_if_above(list, w.release_above(self.t, self.k)) > 0) as u64;
                self.tail.absorb(list, w.absorb_below(self.t, self.k));
            }
            self.stats.list_len_sum += list.len() as u64;
            self.stats.list_len_peak = self.stats.list_len_peak.max(list.len());
            self.prepared = false;
        }
        let list = self.list.as_ref().expect("list exists from t = k");
        self.stopped = self.stop.check(list, &self.params, common);
        Ok(self.stopped)
    }

    /// Message held by the dominant singleton.
    pub fn decode(&self) -> Result<BitString> {
        let head = self.list.as_ref().and_then(|l| l.head()).ok_or_else(|| Error::invariant("decode before transmission k"))?;
        if !head.is_singleton() {
            return Err(Error::invariant(format!("head group holds {} messages at decode", head.count())));
        }
        reconstruct_message(head.start(), head.d(), &self.received, self.table)
    }
}

pub struct Transmitter<'a, C> {
    message: BitString,
    coords: Option<(usize, C)>,
    belief: BeliefState<'a, C>,
}

impl<'a, C: Count> Transmitter<'a, C> {
    pub fn new(message: BitString, params: ChannelParams, options: &TrialOptions, table: &'a BinomialTable<C>) -> Result<Self> {
        let belief = BeliefState::new(message.len(), params, options, table)?;
        Ok(Transmitter { message, coords: None, belief })
    }

    pub fn message(&self) -> &BitString {
        &self.message
    }

    /// Distance and combinadic index of the message relative to the
    /// systematic outputs; known from transmission k on.
    pub fn coordinates(&self) -> Option<&(usize, C)> {
        self.coords.as_ref()
    }

    pub fn belief(&self) -> &BeliefState<'a, C> {
        &self.belief
    }

    pub fn next_symbol(&mut self) -> Result<u8> {
        match self.belief.phase() {
            Phase::Systematic => systematic_label(&self.message, self.belief.t() + 1),
            Phase::Adaptive => {
                if self.coords.is_none() {
                    self.coords = Some(coordinates_of(&self.message, self.belief.received(), self.belief.table)?);
                }
                self.belief.prepare()?;
                let (d, index) = self.coords.as_ref().expect("set above");
                self.belief.label(*d, index)
            }
        }
    }

    /// Noiseless feedback of the channel output.
    pub fn feedback<R: Rng + ?Sized>(&mut self, y: u8, common: &mut R) -> Result<bool> {
        self.belief.observe(y, common)
    }
}

pub struct Receiver<'a, C> {
    belief: BeliefState<'a, C>,
}

impl<'a, C: Count> Receiver<'a, C> {
    pub fn new(k: usize, params: ChannelParams, options: &TrialOptions, table: &'a BinomialTable<C>) -> Result<Self> {
        Ok(Receiver { belief: BeliefState::new(k, params, options, table)? })
    }

    pub fn belief(&self) -> &BeliefState<'a, C> {
        &self.belief
    }

    pub fn receive<R: Rng + ?Sized>(&mut self, y: u8, common: &mut R) -> Result<bool> {
        if self.belief.phase() == Phase::Adaptive {
            self.belief.prepare()?;
        }
        self.belief.observe(y, common)
    }

    pub fn decode(&self) -> Result<BitString> {
        self.belief.decode()
    }
}

/// Hook called after every transmission.
pub trait Observer<C: Count> {
    fn on_transmission(&mut self, t: usize, x: u8, y: u8, belief: &BeliefState<'_, C>) -> Result<()>;
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub inputs: Vec<u8>,
    pub outputs: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub tau: usize,
    pub message: BitString,
    pub decoded: BitString,
    /// `1 - max posterior` at the stopping time.
    pub terminal_error: f64,
    pub adaptive_steps: usize,
    pub list_len_sum: u64,
    pub list_len_peak: usize,
    pub stats: BeliefStats,
    pub confirmation_entries: usize,
    pub transcript: Option<Transcript>,
}

impl TrialRecord {
    pub fn success(&self) -> bool {
        self.message == self.decoded
    }

    pub fn mean_list_len(&self) -> f64 {
        if self.adaptive_steps == 0 {
            0.0
        } else {
            self.list_len_sum as f64 / self.adaptive_steps as f64
        }
    }
}

/// Draws a uniform k-bit message.
pub fn random_message<R: RngCore + ?Sized>(k: usize, rng: &mut R) -> BitString {
    BitString::from_bits((0..k).map(|_| rng.random::<bool>()).collect())
}

/// Runs one trial from `seed` to its stopping time.
pub fn run_trial<C: Count>(
    k: usize,
    params: &ChannelParams,
    options: &TrialOptions,
    seed: Seed,
    table: &BinomialTable<C>,
    observer: Option<&mut dyn Observer<C>>,
) -> Result<TrialRecord> {
    let message = random_message(k, &mut seed.stream(Stream::Message));
    run_trial_with(message, params, options, seed, table, observer)
}

/// Like [`run_trial`] with a given message.
pub fn run_trial_with<C: Count>(
    message: BitString,
    params: &ChannelParams,
    options: &TrialOptions,
    seed: Seed,
    table: &BinomialTable<C>,
    mut observer: Option<&mut dyn Observer<C>>,
) -> Result<TrialRecord> {
    let k = message.len();
    let mut channel = seed.stream(Stream::Channel);
    let mut common_tx = seed.stream(Stream::Common);
    let mut common_rx = seed.stream(Stream::Common);
    let mut tx = Transmitter::new(message, *params, options, table)?;
    let mut rx = if options.mirror { Some(Receiver::new(k, *params, options, table)?) } else { None };
    let mut transcript = options.record_transcript.then(Transcript::default);
    let limit = options.max_transmissions.unwrap_or(usize::MAX);

    loop {
        if tx.belief().t() >= limit {
            return Err(Error::TransmissionLimit(limit));
        }
        let x = tx.next_symbol()?;
        let y = transmit_bit(x, params, &mut channel);
        let stop = tx.feedback(y, &mut common_tx)?;
        if let Some(rx) = rx.as_mut() {
            let rx_stop = rx.receive(y, &mut common_rx)?;
            if rx_stop != stop || rx.belief() != tx.belief() {
                return Err(Error::invariant(format!("receiver diverged from transmitter at t = {}", tx.belief().t())));
            }
        }
        if let Some(tr) = transcript.as_mut() {
            tr.inputs.push(x);
            tr.outputs.push(y);
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_transmission(tx.belief().t(), x, y, tx.belief())?;
        }
        if stop {
            break;
        }
    }

    let belief = tx.belief();
    let decoded = match &rx {
        Some(rx) => rx.decode()?,
        None => belief.decode()?,
    };
    let stats = belief.stats().clone();
    Ok(TrialRecord {
        tau: belief.t(),
        message: tx.message().clone(),
        decoded,
        terminal_error: error_at(belief.stop_state().last_llr()),
        adaptive_steps: belief.t() - k,
        list_len_sum: stats.list_len_sum,
        list_len_peak: stats.list_len_peak,
        confirmation_entries: belief.stop_state().entries(),
        stats,
        transcript,
    })
}
