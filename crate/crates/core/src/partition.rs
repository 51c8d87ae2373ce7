//! Two-way partitioning of the group list into S0 and S1.
//!
//! Both policies start with every message in S1 and move whole groups into
//! S0, largest posterior first, until the next group would bring π0 to 0.5.
//!
//! * [`PartitionPolicy::Relaxed`] splits that crossing group at the smallest
//!   count reaching π0 >= 0.5. At most one split; guarantees
//!   `0 <= π0 - π1 <= 2 min_{S0} ρ`. When that overshoots the tighter bound
//!   it also tries stopping one element short and topping up from the
//!   smaller groups below, keeping whichever is closer to balance. Without
//!   this, equal-posterior messages that cross together stay together.
//! * [`PartitionPolicy::Sed`] keeps the crossing split only if it already
//!   meets `0 <= π0 - π1 <= min_{S0} ρ`. Otherwise the offending element goes
//!   back to S1 and filling continues with the smaller groups below. If the
//!   list runs out first, the move-smallest-and-swap procedure finishes the
//!   job from the crossing state.

use serde::{Deserialize, Serialize};

use crate::count::Count;
use crate::error::{Error, Result};
use crate::group::{Group, GroupList, LevelSum, Masses, Side};

/// Absolute slack on the criteria, covering rounding of the probability sums.
pub const CRITERION_TOLERANCE: f64 = 1e-12;

/// Slack the partitioner itself allows on the upper bound; half of
/// [`CRITERION_TOLERANCE`], so an independent recomputation still passes.
const ACCEPT_TOLERANCE: f64 = CRITERION_TOLERANCE / 2.0;

/// Sums within this of 0.5 count as reaching it. Exact ties are common
/// because posteriors sit on a lattice; kept below half of
/// [`CRITERION_TOLERANCE`] so that `π0 - π1` stays within it.
pub const HALF_TOLERANCE: f64 = 4e-13;

/// Groups within this log-distance of the tail's largest member are treated
/// as interleaved with the tail.
pub const TAIL_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionPolicy {
    Sed,
    Relaxed,
}

impl PartitionPolicy {
    /// Multiple of min_{S0} ρ the criterion allows for π0 - π1.
    pub fn slack_factor(self) -> f64 {
        match self {
            PartitionPolicy::Sed => 1.0,
            PartitionPolicy::Relaxed => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartitionPolicy::Sed => "sed",
            PartitionPolicy::Relaxed => "relaxed",
        }
    }
}

impl std::str::FromStr for PartitionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sed" => Ok(PartitionPolicy::Sed),
            "relaxed" => Ok(PartitionPolicy::Relaxed),
            other => Err(Error::param(format!("unknown partition policy {other:?}"))),
        }
    }
}

/// Which branch of the procedure produced the partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// Whole groups plus at most one split of the crossing group.
    Greedy,
    /// The crossing element was pushed back and smaller groups filled the gap.
    Skip,
    /// Move-smallest-and-swap completion.
    Swap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOutcome {
    pub pi0: f64,
    pub pi1: f64,
    /// Normalized posterior of the smallest message in S0.
    pub min_s0_delta: f64,
    pub splits: usize,
    pub route: Route,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    /// The decision depends on groups currently folded into the tail.
    #[error("partition reaches into the compacted tail")]
    TailConflict,
    #[error("swap completion did not converge")]
    Stalled,
}

#[derive(Clone)]
enum Take<C> {
    Whole,
    Part(C),
}

/// Partitions `list` in place according to `policy`.
///
/// `tail_ceiling` is the log-posterior of the largest message held outside
/// the list. When present, any decision that would consult a group at or
/// below that level fails with [`PartitionError::TailConflict`] and leaves
/// the list untouched.
pub fn partition<C: Count>(
    list: &mut GroupList<C>,
    policy: PartitionPolicy,
    tail_ceiling: Option<f64>,
) -> Result<PartitionOutcome, PartitionError> {
    assert!(!list.is_empty(), "partition of an empty list");
    let masses = list.masses();
    let n = list.len();
    let near_tail = |g: &Group<C>| tail_ceiling.is_some_and(|c| g.log_delta() <= c + TAIL_MARGIN);

    let mut plan: Vec<(usize, Take<C>)> = Vec::new();
    let mut fill = LevelSum::new();
    let mut pi0 = 0.0;
    let mut first_crossing: Option<(usize, C)> = None;
    let mut min_s0 = f64::INFINITY;
    let mut accepted = false;
    let mut skipped = false;
    let half = 0.5 - HALF_TOLERANCE;

    for i in 0..n {
        let g = &list.groups()[i];
        if near_tail(g) {
            return Err(PartitionError::TailConflict);
        }
        let delta = masses.delta[i];
        if fill.with(g, delta, g.count()) < half {
            let last = i + 1 == n;
            if !last || skipped {
                plan.push((i, Take::Whole));
                fill.add(g, delta, g.count());
                min_s0 = delta;
                continue;
            }
            // the last group falls short only through rounding, unless mass sits in the tail
            if tail_ceiling.is_some() {
                return Err(PartitionError::TailConflict);
            }
        }
        let (n1, new_pi0) = crossing_count(g, &fill, delta);
        if first_crossing.is_none() {
            first_crossing = Some((i, n1.clone()));
        }
        let meets = match policy {
            PartitionPolicy::Relaxed => true,
            PartitionPolicy::Sed => 2.0 * new_pi0 - 1.0 <= delta + ACCEPT_TOLERANCE,
        };
        if policy == PartitionPolicy::Relaxed {
            let found = relaxed_walk(list, &masses, i, fill, &near_tail, tail_ceiling.is_some())?;
            plan.extend(found.plan);
            let splits = apply_plan(list, plan);
            list.set_measured(found.pi0, masses.log_scale);
            let route = if found.first { Route::Greedy } else { Route::Skip };
            return Ok(PartitionOutcome { pi0: found.pi0, pi1: 1.0 - found.pi0, min_s0_delta: found.min_s0, splits, route });
        }
        if meets {
            plan.push((i, if &n1 == g.count() { Take::Whole } else { Take::Part(n1) }));
            pi0 = new_pi0;
            min_s0 = delta;
            accepted = true;
            break;
        }
        // SED overshoot: keep n1 - 1 elements, continue below
        let keep = n1.sub(&C::one());
        if !keep.is_zero() {
            fill.add(g, delta, &keep);
            min_s0 = delta;
            plan.push((i, Take::Part(keep)));
        }
        skipped = true;
    }

    if accepted {
        let splits = apply_plan(list, plan);
        list.set_measured(pi0, masses.log_scale);
        let route = if skipped { Route::Skip } else { Route::Greedy };
        return Ok(PartitionOutcome { pi0, pi1: 1.0 - pi0, min_s0_delta: min_s0, splits, route });
    }

    // exhausted the list without meeting the criterion
    if tail_ceiling.is_some() {
        return Err(PartitionError::TailConflict);
    }
    let (ci, cn1) = first_crossing.expect("a crossing group always exists");
    let mut start: Vec<(usize, Take<C>)> = (0..ci).map(|i| (i, Take::Whole)).collect();
    start.push((ci, if &cn1 == list.groups()[ci].count() { Take::Whole } else { Take::Part(cn1) }));
    let splits = apply_plan(list, start);
    swap_completion(list, splits)
}

/// Smallest `n1` in `1..=N` with `π0 >= 0.5` after adding `n1` messages of
/// `g` to `fill`, and the resulting π0. Returns `N` if even that falls short.
fn crossing_count<C: Count>(g: &Group<C>, fill: &LevelSum<C>, delta: f64) -> (C, f64) {
    let half = 0.5 - HALF_TOLERANCE;
    let count = g.count();
    let full = fill.with(g, delta, count);
    if !(full >= half) {
        return (count.clone(), full);
    }
    let one = C::one();
    let need = (half - fill.value()) / delta;
    let mut n1 = C::ceil_from_f64(need.max(1.0)).filter(|n| n <= count).unwrap_or_else(|| count.clone());
    // settle the estimate on the sums actually compared; a few steps suffice
    // whenever single messages are resolvable at all
    for _ in 0..4 {
        if n1 > one && fill.with(g, delta, &n1.sub(&one)) >= half {
            n1 = n1.sub(&one);
        } else if &n1 < count && fill.with(g, delta, &n1) < half {
            n1 = n1.add(&one);
        } else {
            break;
        }
    }
    let value = fill.with(g, delta, &n1);
    (n1, value)
}

struct Candidate<C> {
    plan: Vec<(usize, Take<C>)>,
    pi0: f64,
    min_s0: f64,
    first: bool,
}

/// The SED fill limited to one split, starting at the first crossing group
/// `i`. Returns the first candidate meeting the SED bound, else the most
/// balanced one meeting the relaxed bound. The first candidate is the
/// minimal crossing of group `i`, which always meets the relaxed bound.
fn relaxed_walk<C: Count>(
    list: &GroupList<C>,
    masses: &Masses,
    i: usize,
    mut fill: LevelSum<C>,
    near_tail: &impl Fn(&Group<C>) -> bool,
    has_tail: bool,
) -> Result<Candidate<C>, PartitionError> {
    let half = 0.5 - HALF_TOLERANCE;
    let groups = list.groups();
    let mut plan = Vec::new();
    let mut split_used = false;
    let mut best: Option<(f64, Candidate<C>)> = None;
    for (j, g) in groups.iter().enumerate().skip(i) {
        if near_tail(g) {
            return Err(PartitionError::TailConflict);
        }
        let delta = masses.delta[j];
        let whole = fill.with(g, delta, g.count());
        if whole < half && j > i && j + 1 < groups.len() {
            plan.push((j, Take::Whole));
            fill.add(g, delta, g.count());
            continue;
        }
        let (n1, pi0) = if split_used { (g.count().clone(), whole) } else { crossing_count(g, &fill, delta) };
        let diff = 2.0 * pi0 - 1.0;
        let valid = diff >= -2.0 * HALF_TOLERANCE && diff <= 2.0 * delta + ACCEPT_TOLERANCE;
        if best.is_none() || (valid && best.as_ref().is_some_and(|(b, _)| diff < *b - ACCEPT_TOLERANCE)) {
            let mut p = plan.clone();
            p.push((j, if &n1 == g.count() { Take::Whole } else { Take::Part(n1.clone()) }));
            best = Some((diff, Candidate { plan: p, pi0, min_s0: delta, first: j == i }));
        }
        if valid && diff <= delta + ACCEPT_TOLERANCE {
            return Ok(best.expect("set above").1);
        }
        // step back below 0.5; without a split left the group is skipped whole
        let keep = n1.sub(&C::one());
        if !split_used && !keep.is_zero() {
            fill.add(g, delta, &keep);
            plan.push((j, Take::Part(keep)));
            split_used = true;
        }
    }
    if has_tail {
        return Err(PartitionError::TailConflict);
    }
    Ok(best.expect("group i is a crossing").1)
}

/// Assigns sides per `plan` (unlisted groups go to S1); returns the number of splits.
fn apply_plan<C: Count>(list: &mut GroupList<C>, plan: Vec<(usize, Take<C>)>) -> usize {
    let groups = list.groups_mut();
    let old = std::mem::take(groups);
    let mut plan = plan.into_iter().peekable();
    let mut splits = 0;
    for (i, mut g) in old.into_iter().enumerate() {
        match plan.next_if(|(j, _)| *j == i) {
            Some((_, Take::Whole)) => {
                g.set_side(Side::S0);
                groups.push(g);
            }
            Some((_, Take::Part(n1))) => {
                let (mut head, mut rest) = g.split(&n1).expect("planned split within group");
                head.set_side(Side::S0);
                rest.set_side(Side::S1);
                groups.push(head);
                groups.push(rest);
                splits += 1;
            }
            None => {
                g.set_side(Side::S1);
                groups.push(g);
            }
        }
    }
    splits
}

/// Repeatedly moves the smallest S0 messages to S1 while π0 - π1 exceeds the
/// smallest S0 posterior, swapping the sets whenever π0 drops below π1.
/// The difference strictly decreases, so this terminates on a valid
/// partition.
fn swap_completion<C: Count>(list: &mut GroupList<C>, mut splits: usize) -> Result<PartitionOutcome, PartitionError> {
    let budget = 64 * list.len() + 1024;
    for _ in 0..budget {
        let masses = list.masses();
        let mut fill = LevelSum::new();
        for (g, &d) in list.groups().iter().zip(&masses.delta) {
            if g.side() == Side::S0 {
                fill.add(g, d, g.count());
            }
        }
        let pi0 = fill.value();
        let diff = 2.0 * pi0 - 1.0;
        let groups = list.groups_mut();
        if diff < -2.0 * HALF_TOLERANCE {
            for g in groups.iter_mut() {
                g.set_side(g.side().other());
            }
            continue;
        }
        let j = groups.iter().rposition(|g| g.side() == Side::S0).ok_or(PartitionError::Stalled)?;
        let dj = masses.delta[j];
        if diff <= dj + ACCEPT_TOLERANCE {
            list.set_measured(pi0, masses.log_scale);
            return Ok(PartitionOutcome { pi0, pi1: 1.0 - pi0, min_s0_delta: dj, splits, route: Route::Swap });
        }
        let moves = ((diff - dj - ACCEPT_TOLERANCE) / (2.0 * dj)).ceil().max(1.0);
        match C::ceil_from_f64(moves).filter(|n| n < groups[j].count()) {
            Some(n) => {
                let keep = groups[j].count().sub(&n);
                let (head, mut rest) = groups[j].split(&keep).expect("split within group");
                rest.set_side(Side::S1);
                groups[j] = head;
                groups.insert(j + 1, rest);
                splits += 1;
            }
            None => groups[j].set_side(Side::S1),
        }
    }
    Err(PartitionError::Stalled)
}

/// Channel input for the message at `(d, index)`.
pub fn label_of<C: Count>(d: usize, index: &C, list: &GroupList<C>) -> Result<u8> {
    list.locate(d, index)
        .map(|g| g.side().label())
        .ok_or_else(|| Error::invariant(format!("message (d={d}, index={index}) not covered by any group")))
}

/// Independent recomputation of a partition's criterion quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriterionCheck {
    pub pi0: f64,
    pub pi1: f64,
    pub min_s0_delta: f64,
}

impl CriterionCheck {
    pub fn of<C: Count>(list: &GroupList<C>) -> Self {
        let total = list.log_total_mass();
        let mut pi0 = 0.0;
        let mut pi1 = (list.external_log_mass() - total).exp();
        let mut min_s0_delta = f64::INFINITY;
        for g in list.groups() {
            let m = (g.log_mass() - total).exp();
            match g.side() {
                Side::S0 => {
                    pi0 += m;
                    min_s0_delta = min_s0_delta.min((g.log_delta() - total).exp());
                }
                Side::S1 => pi1 += m,
            }
        }
        CriterionCheck { pi0, pi1, min_s0_delta }
    }

    pub fn difference(&self) -> f64 {
        self.pi0 - self.pi1
    }

    /// `0 <= π0 - π1 <= factor * min_{S0} ρ`, within [`CRITERION_TOLERANCE`].
    pub fn holds(&self, policy: PartitionPolicy) -> bool {
        let diff = self.difference();
        self.min_s0_delta.is_finite()
            && diff >= -CRITERION_TOLERANCE
            && diff <= policy.slack_factor() * self.min_s0_delta + CRITERION_TOLERANCE
    }
}
