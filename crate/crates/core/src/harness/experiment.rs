use std::time::Instant;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::config::PointConfig;
use crate::channel::Seed;
use crate::codec::{run_trial, TrialOptions, TrialRecord};
use crate::combinadics::BinomialTable;
use crate::count::Count;
use crate::error::{Error, Result};

/// Output format version, written into every CSV row and JSON document.
pub const SCHEMA_VERSION: u32 = 1;

/// Below this target error the FER is reported as guaranteed by the
/// stopping rule rather than estimated.
pub const GUARANTEED_FER_BELOW: f64 = 1e-6;

/// Aggregate of one sweep point. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub k: usize,
    pub p: f64,
    pub epsilon: f64,
    pub policy: String,
    pub mode: String,
    pub compaction: bool,
    pub trials: u64,
    pub seed: u64,
    #[serde(rename = "E_tau")]
    pub e_tau: f64,
    pub rate: f64,
    pub fer: f64,
    pub fer_ci_lo: f64,
    pub fer_ci_hi: f64,
    pub mean_list: f64,
    pub max_list: usize,
    pub ns_per_transmission: Option<f64>,
    pub errors: u64,
    pub fer_guaranteed: bool,
    pub schema: u32,
}

/// Order-independent per-point sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub trials: u64,
    pub errors: u64,
    pub tau_sum: u128,
    pub list_len_sum: u128,
    pub adaptive_steps: u128,
    pub list_len_peak: usize,
}

impl Tally {
    pub fn of(rec: &TrialRecord) -> Self {
        Tally {
            trials: 1,
            errors: (!rec.success()) as u64,
            tau_sum: rec.tau as u128,
            list_len_sum: rec.list_len_sum as u128,
            adaptive_steps: rec.adaptive_steps as u128,
            list_len_peak: rec.list_len_peak,
        }
    }

    pub fn merge(self, o: Tally) -> Tally {
        Tally {
            trials: self.trials + o.trials,
            errors: self.errors + o.errors,
            tau_sum: self.tau_sum + o.tau_sum,
            list_len_sum: self.list_len_sum + o.list_len_sum,
            adaptive_steps: self.adaptive_steps + o.adaptive_steps,
            list_len_peak: self.list_len_peak.max(o.list_len_peak),
        }
    }

    pub fn mean_tau(&self) -> f64 {
        self.tau_sum as f64 / self.trials as f64
    }
}

/// Two-sided 95% Clopper-Pearson interval for `errors` out of `trials`.
pub fn clopper_pearson(errors: u64, trials: u64) -> (f64, f64) {
    let alpha = 0.05;
    let (x, n) = (errors as f64, trials as f64);
    let lo = if errors == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0).map(|b| b.inverse_cdf(alpha / 2.0)).unwrap_or(0.0)
    };
    let hi = if errors >= trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).map(|b| b.inverse_cdf(1.0 - alpha / 2.0)).unwrap_or(1.0)
    };
    (lo, hi)
}

fn options_of(point: &PointConfig) -> TrialOptions {
    let mut o = TrialOptions::new(point.policy, point.stop);
    o.compaction = point.compaction;
    o.max_transmissions = point.max_transmissions;
    o
}

fn tally_with<C: Count>(point: &PointConfig) -> Result<Tally> {
    let table = BinomialTable::<C>::new(point.k)?;
    let options = options_of(point);
    let root = Seed(point.seed);
    (0..point.trials)
        .into_par_iter()
        .map(|i| run_trial(point.k, &point.params, &options, root.trial(i), &table, None).map(|r| Tally::of(&r)))
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))
}

/// Runs every trial of a point on the current rayon pool.
pub fn tally(point: &PointConfig) -> Result<Tally> {
    if point.k <= u128::MAX_K {
        tally_with::<u128>(point)
    } else {
        tally_with::<BigUint>(point)
    }
}

/// Runs one point and summarizes it.
pub fn run_point(point: &PointConfig) -> Result<AggregateResult> {
    let start = Instant::now();
    let t = tally(point)?;
    let elapsed = start.elapsed();
    let e_tau = t.mean_tau();
    let (fer_ci_lo, fer_ci_hi) = clopper_pearson(t.errors, t.trials);
    let mean_list = if t.adaptive_steps == 0 { 0.0 } else { t.list_len_sum as f64 / t.adaptive_steps as f64 };
    Ok(AggregateResult {
        k: point.k,
        p: point.params.p(),
        epsilon: point.stop.epsilon(),
        policy: point.policy.name().to_string(),
        mode: point.stop.mode().name().to_string(),
        compaction: point.compaction.is_some(),
        trials: t.trials,
        seed: point.seed,
        e_tau,
        rate: point.k as f64 / e_tau,
        fer: t.errors as f64 / t.trials as f64,
        fer_ci_lo,
        fer_ci_hi,
        mean_list,
        max_list: t.list_len_peak,
        ns_per_transmission: point.timing.then(|| elapsed.as_nanos() as f64 / t.tau_sum as f64),
        errors: t.errors,
        fer_guaranteed: point.stop.epsilon() <= GUARANTEED_FER_BELOW,
        schema: SCHEMA_VERSION,
    })
}

/// Builds a pool with `workers` threads (0 = all cores).
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param(format!("cannot start {workers} workers: {e}")))
}

/// Runs `points` in order, handing each finished result to `sink` before
/// starting the next. Stops at the first failure; results already handed
/// over stay with the sink.
pub fn sweep(points: &[PointConfig], workers: usize, mut sink: impl FnMut(&AggregateResult) -> Result<()>) -> Result<Vec<AggregateResult>> {
    let pool = worker_pool(workers)?;
    let mut out = Vec::with_capacity(points.len());
    for point in points {
        let res = pool.install(|| run_point(point))?;
        sink(&res)?;
        out.push(res);
    }
    Ok(out)
}
