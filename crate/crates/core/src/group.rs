//! Posterior over all 2^k messages, kept as an ordered list of groups of
//! equal-posterior messages.
//!
//! A group `(d, n_st, N, delta)` holds the `N` messages whose flip pattern
//! relative to the received systematic word `y^k` has weight `d` and
//! combinadic index in `[n_st, n_st + N)`. Every message of a group has
//! posterior `delta`.
//!
//! On the BSC a message's posterior depends only on how many channel outputs
//! disagreed with the symbols it would have sent. Groups therefore carry
//! that count exactly, and `ln delta = base - misses * ln(q/p) (+ bias)`
//! with `base` shared by the whole list. Equal counts give bit-identical
//! deltas, so ties and list order do not depend on rounding history. The
//! `bias` term is zero for lists built from the systematic phase and lets
//! tests build lists with arbitrary deltas.
//!
//! The list is kept sorted by non-increasing delta; ties are ordered by
//! smaller `d`, then smaller `n_st`.
//!
//! Probability sums go through [`Level`]s: messages with equal miss count
//! are counted exactly and each level is converted to floating point once,
//! in a fixed order. Sums therefore do not depend on how levels are cut
//! into groups or on which messages sit in the tail.

use std::cell::Cell;
use std::cmp::Ordering;
use std::sync::Arc;

use crate::channel::ChannelParams;
use crate::combinadics::BinomialTable;
use crate::count::Count;
use crate::error::{Error, Result};

/// Relative tolerance on `ln delta` under which contiguous siblings are coalesced.
pub const COALESCE_TOLERANCE: f64 = 1e-12;

/// Largest accepted drift of the total log-probability before renormalization.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    S0,
    S1,
}

impl Side {
    /// Channel input sent when the true message is on this side.
    pub fn label(self) -> u8 {
        match self {
            Side::S0 => 0,
            Side::S1 => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::S0 => Side::S1,
            Side::S1 => Side::S0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group<C> {
    d: usize,
    start: C,
    count: C,
    misses: u64,
    bias: f64,
    /// `base + bias - misses * step` for the owning list.
    log_delta: f64,
    side: Side,
    ln_count: f64,
}

fn lattice_point(base: f64, bias: f64, misses: u64, step: f64) -> f64 {
    // keeps 0 * inf (noiseless channel) out of the sum
    let penalty = if misses == 0 { 0.0 } else { misses as f64 * step };
    base + bias - penalty
}

impl<C: Count> Group<C> {
    pub fn new(d: usize, start: C, count: C, log_delta: f64) -> Self {
        assert!(!count.is_zero(), "empty group");
        let ln_count = count.to_f64().ln();
        Group { d, start, count, misses: 0, bias: log_delta, log_delta, side: Side::S1, ln_count }
    }

    fn on_lattice(d: usize, start: C, count: C, misses: u64, base: f64, step: f64) -> Self {
        let mut g = Group::new(d, start, count, 0.0);
        g.misses = misses;
        g.log_delta = lattice_point(base, 0.0, misses, step);
        g
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn start(&self) -> &C {
        &self.start
    }

    pub fn count(&self) -> &C {
        &self.count
    }

    /// One past the last index covered.
    pub fn end(&self) -> C {
        self.start.add(&self.count)
    }

    pub fn log_delta(&self) -> f64 {
        self.log_delta
    }

    /// Channel outputs that disagreed with this group's symbols.
    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn delta(&self) -> f64 {
        self.log_delta.exp()
    }

    /// `ln(N * delta)`.
    pub fn log_mass(&self) -> f64 {
        self.ln_count + self.log_delta
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn is_singleton(&self) -> bool {
        self.count == C::one()
    }

    pub fn contains(&self, d: usize, index: &C) -> bool {
        self.d == d && &self.start <= index && index < &self.end()
    }

    pub(crate) fn set_side(&mut self, side: Side) {
        self.side = side;
    }

    #[cfg(test)]
    pub(crate) fn shift_log_delta(&mut self, by: f64) {
        self.bias += by;
        self.log_delta += by;
    }

    /// `ln delta` relative to the list base.
    pub(crate) fn offset(&self, step: f64) -> f64 {
        lattice_point(0.0, self.bias, self.misses, step)
    }

    pub(crate) fn level_key(&self) -> (u64, u64) {
        (self.misses, self.bias.to_bits())
    }

    /// `ln delta` after `extra` more misses, against a list lattice.
    pub(crate) fn log_delta_after(&self, extra: u64, base: f64, step: f64) -> f64 {
        lattice_point(base, self.bias, self.misses + extra, step)
    }

    /// Adds `extra` misses and recomputes the delta against a list lattice.
    pub(crate) fn relocate(&mut self, extra: u64, base: f64, step: f64) {
        self.misses += extra;
        self.log_delta = lattice_point(base, self.bias, self.misses, step);
    }

    /// Splits after the first `n1` elements: `(d, n_st, n1, delta)` and
    /// `(d, n_st + n1, N - n1, delta)`. Both halves keep this group's side.
    pub fn split(&self, n1: &C) -> Result<(Group<C>, Group<C>)> {
        if n1.is_zero() || n1 >= &self.count {
            return Err(Error::param(format!("split point {n1} outside 1..{}", self.count)));
        }
        let mut head = self.clone();
        head.count = n1.clone();
        head.ln_count = n1.to_f64().ln();
        let mut rest = self.clone();
        rest.start = self.start.add(n1);
        rest.count = self.count.sub(n1);
        rest.ln_count = rest.count.to_f64().ln();
        Ok((head, rest))
    }

    fn absorb_sibling(&mut self, next: Group<C>) {
        self.count = self.count.add(&next.count);
        self.ln_count = self.count.to_f64().ln();
    }
}

/// List order: larger delta first, then smaller `d`, then smaller `n_st`.
pub fn list_order<C: Count>(a: &Group<C>, b: &Group<C>) -> Ordering {
    b.log_delta
        .total_cmp(&a.log_delta)
        .then(a.d.cmp(&b.d))
        .then_with(|| a.start.cmp(&b.start))
}

fn coalescible<C: Count>(a: &Group<C>, b: &Group<C>) -> bool {
    a.d == b.d
        && a.side == b.side
        && a.misses == b.misses
        && a.end() == b.start
        && (a.log_delta - b.log_delta).abs() <= COALESCE_TOLERANCE * a.log_delta.abs().max(1.0)
}

/// Bayes weights `(w0, w1)` applied to S0 and S1 after observing `y`.
pub fn bayes_weights(pi0: f64, y: u8, params: &ChannelParams) -> (f64, f64) {
    let (p, q) = (params.p(), params.q());
    let pi1 = 1.0 - pi0;
    if y == 0 {
        let den = q * pi0 + p * pi1;
        (q / den, p / den)
    } else {
        let den = p * pi0 + q * pi1;
        (p / den, q / den)
    }
}

/// All messages sharing one posterior, from the list and the tail together.
#[derive(Clone, Debug, PartialEq)]
pub struct Level<C> {
    pub misses: u64,
    pub bias: f64,
    pub count: C,
    /// `ln delta` relative to the list base.
    pub offset: f64,
}

/// Tail-held messages of one level; `key + shift` is their current miss count.
#[derive(Clone, Debug, PartialEq)]
struct ExternalLevel<C> {
    key: i64,
    bias: f64,
    count: C,
    /// `count` as f64.
    approx: f64,
}

/// `ln sum count * exp(offset)`, in the given order.
fn log_sum_levels<C: Count>(levels: &[Level<C>]) -> f64 {
    let max = levels.iter().filter(|l| !l.count.is_zero()).map(|l| l.offset).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + levels.iter().map(|l| l.count.to_f64() * (l.offset - max).exp()).sum::<f64>().ln()
}

fn canonical<C: Count>(mut levels: Vec<Level<C>>) -> Vec<Level<C>> {
    levels.sort_by(|a, b| {
        b.offset
            .total_cmp(&a.offset)
            .then(a.misses.cmp(&b.misses))
            .then(a.bias.to_bits().cmp(&b.bias.to_bits()))
    });
    let mut out: Vec<Level<C>> = Vec::with_capacity(levels.len());
    for l in levels {
        match out.last_mut() {
            Some(last) if last.misses == l.misses && last.bias.to_bits() == l.bias.to_bits() => {
                last.count = last.count.add(&l.count);
            }
            _ => out.push(l),
        }
    }
    out
}

/// Posterior sum built level by level: counts within a level add exactly
/// and are converted once, so the value does not depend on how the level
/// is cut into groups. Groups must be fed in list order.
#[derive(Clone, Debug)]
pub(crate) struct LevelSum<C> {
    done: f64,
    level: Option<(u64, u64)>,
    taken: C,
    delta: f64,
}

impl<C: Count> LevelSum<C> {
    pub(crate) fn new() -> Self {
        LevelSum { done: 0.0, level: None, taken: C::zero(), delta: 0.0 }
    }

    pub(crate) fn value(&self) -> f64 {
        self.done + self.taken.to_f64() * self.delta
    }

    /// Value after adding `n` messages of `g`, each with posterior `delta`.
    pub(crate) fn with(&self, g: &Group<C>, delta: f64, n: &C) -> f64 {
        if self.level == Some(g.level_key()) {
            self.done + self.taken.add(n).to_f64() * delta
        } else {
            self.value() + n.to_f64() * delta
        }
    }

    pub(crate) fn add(&mut self, g: &Group<C>, delta: f64, n: &C) {
        if self.level == Some(g.level_key()) {
            self.taken = self.taken.add(n);
        } else {
            self.done = self.value();
            self.level = Some(g.level_key());
            self.taken = n.clone();
            self.delta = delta;
        }
    }
}

/// `ln delta` offsets beyond this many nats underflow to zero.
const DECAY_RANGE: f64 = 746.0;
const DECAY_TABLE_MAX: usize = 1 << 16;

fn decay_at(j: u64, step: f64) -> f64 {
    (-(j as f64) * step).exp()
}

struct LatticeSums {
    /// Smallest miss count with a nonzero level.
    top: Option<u64>,
    /// Sums of `count * exp(-(misses - top) * step)`.
    total: f64,
    external: f64,
    /// `total` less one message of the requested level.
    rest: f64,
}

impl LatticeSums {
    fn log_total(&self, step: f64) -> f64 {
        self.log_of(self.total, step)
    }

    fn log_external(&self, step: f64) -> f64 {
        self.log_of(self.external, step)
    }

    fn log_rest(&self, step: f64) -> f64 {
        self.log_of(self.rest, step)
    }

    fn log_of(&self, sum: f64, step: f64) -> f64 {
        match self.top {
            Some(top) if sum > 0.0 => lattice_point(0.0, 0.0, top, step) + sum.ln(),
            _ => f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Norms {
    total: f64,
    /// Total without the head group's first message.
    rest: Option<f64>,
}

/// Normalized linear view of a list.
#[derive(Clone, Debug)]
pub struct Masses {
    /// Normalized per-message posterior per group.
    pub delta: Vec<f64>,
    pub external: f64,
    /// Log of the unnormalized total.
    pub log_scale: f64,
}

#[derive(Clone, Copy, Debug)]
struct Measured {
    pi0: f64,
    log_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Update {
    pub ln_w0: f64,
    pub ln_w1: f64,
    /// Log-weight added to every S1 posterior, renormalization included.
    pub s1_increment: f64,
    /// Whether the output disagreed with the S1 symbol.
    pub s1_missed: bool,
}

#[derive(Clone, Debug)]
pub struct GroupList<C> {
    k: usize,
    groups: Vec<Group<C>>,
    base: f64,
    step: f64,
    /// S1-resident messages kept outside the list (the tail), per level.
    external: Vec<ExternalLevel<C>>,
    /// Misses the tail has gained since it started counting.
    external_shift: i64,
    measured: Option<Measured>,
    /// Log sums relative to `base`, until the next change.
    norm: Cell<Option<Norms>>,
    /// Tail part of `norm`; moving groups into the tail only resets this.
    external_norm: Cell<Option<f64>>,
    /// `exp(-j * step)` for small `j`.
    decay: Arc<[f64]>,
    /// `exp(-j * step)` is zero from this `j` on.
    decay_zero: Option<u64>,
}

impl<C: Count> PartialEq for GroupList<C> {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.groups == other.groups
            && self.external == other.external
    }
}

impl<C: Count> GroupList<C> {
    /// The k+1 distance groups after the systematic phase: group d holds all
    /// C(k, d) messages at distance d from `y^k`, each with posterior `p^d q^(k-d)`.
    pub fn after_systematic(k: usize, params: &ChannelParams, table: &BinomialTable<C>) -> Result<Self> {
        table.ensure_covers(k)?;
        let base = k as f64 * params.ln_q();
        let step = params.llr_step();
        let groups = (0..=k)
            .map(|d| Group::on_lattice(d, C::zero(), table.choose(k, d).clone(), d as u64, base, step))
            .collect();
        let mut list = Self::from_groups(k, groups);
        list.base = base;
        list.step = step;
        if step > 0.0 && step.is_finite() {
            let len = ((DECAY_RANGE / step).ceil() as usize).saturating_add(2).min(DECAY_TABLE_MAX);
            list.decay = (0..len).map(|j| decay_at(j as u64, step)).collect();
            list.decay_zero = list.decay.iter().position(|&w| w == 0.0).map(|j| j as u64);
        }
        list.touch();
        Ok(list)
    }

    /// Builds a list from arbitrary groups; sorts them into list order.
    pub fn from_groups(k: usize, mut groups: Vec<Group<C>>) -> Self {
        groups.sort_by(list_order);
        GroupList { k, groups, base: 0.0, step: 0.0, external: Vec::new(), external_shift: 0, measured: None, norm: Cell::new(None), external_norm: Cell::new(None), decay: Arc::from([]), decay_zero: None }
    }

    #[cfg(test)]
    fn unsorted(k: usize, groups: Vec<Group<C>>) -> Self {
        GroupList { k, groups, base: 0.0, step: 0.0, external: Vec::new(), external_shift: 0, measured: None, norm: Cell::new(None), external_norm: Cell::new(None), decay: Arc::from([]), decay_zero: None }
    }

    /// `(base, step)`: a group with no bias and `m` misses has `ln delta = base - m * step`.
    pub fn lattice(&self) -> (f64, f64) {
        (self.base, self.step)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Group<C>] {
        &self.groups
    }

    pub fn head(&self) -> Option<&Group<C>> {
        self.groups.first()
    }

    /// Log-probability held outside the list.
    pub fn external_log_mass(&self) -> f64 {
        if self.external_norm.get().is_none() {
            // recomputing also refreshes the (unchanged) total
            self.norm.set(None);
            self.norms();
        }
        self.base + self.external_norm.get().expect("set by norms")
    }

    pub fn has_external(&self) -> bool {
        !self.external.is_empty()
    }

    fn external_levels(&self) -> impl Iterator<Item = Level<C>> + '_ {
        self.external.iter().map(|e| {
            let misses = (e.key + self.external_shift) as u64;
            Level { misses, bias: e.bias, count: e.count.clone(), offset: lattice_point(0.0, e.bias, misses, self.step) }
        })
    }

    /// Removes the groups from `cut` on and counts their messages as
    /// external. Sums over all messages are unchanged; the head must stay.
    pub(crate) fn move_to_external(&mut self, cut: usize) -> Vec<Group<C>> {
        debug_assert!(cut > 0, "head moved out of the list");
        let moved: Vec<Group<C>> = self.groups.drain(cut..).collect();
        for g in &moved {
            self.add_external(g);
        }
        self.external_norm.set(None);
        moved
    }

    fn add_external(&mut self, g: &Group<C>) {
        let key = g.misses as i64 - self.external_shift;
        let at = self.external.binary_search_by(|e| e.key.cmp(&key).then(e.bias.to_bits().cmp(&g.bias.to_bits())));
        match at {
            Ok(i) => {
                let e = &mut self.external[i];
                e.count = e.count.add(&g.count);
                e.approx = e.count.to_f64();
            }
            Err(i) => self.external.insert(i, ExternalLevel { key, bias: g.bias, count: g.count.clone(), approx: g.count.to_f64() }),
        }
    }

    pub(crate) fn clear_external(&mut self) {
        self.external.clear();
        self.touch();
    }

    fn touch(&mut self) {
        self.measured = None;
        self.norm.set(None);
        self.external_norm.set(None);
    }

    /// Every posterior level with its message count, largest first.
    pub fn levels(&self) -> Vec<Level<C>> {
        // runs of one level are adjacent in list order; folding them first
        // leaves the sort little to do
        let mut levels: Vec<Level<C>> = Vec::new();
        for g in &self.groups {
            match levels.last_mut() {
                Some(l) if l.misses == g.misses && l.bias.to_bits() == g.bias.to_bits() => l.count = l.count.add(&g.count),
                _ => levels.push(Level { misses: g.misses, bias: g.bias, count: g.count.clone(), offset: g.offset(self.step) }),
            }
        }
        levels.extend(self.external_levels());
        canonical(levels)
    }

    fn log_norm(&self) -> f64 {
        self.norms().total
    }

    fn norms(&self) -> Norms {
        if let Some(v) = self.norm.get() {
            return v;
        }
        let head = self.groups.first().map(|g| g.misses);
        let (v, external) = match self.lattice_sums(head) {
            Some(sums) => (
                Norms { total: sums.log_total(self.step), rest: head.map(|_| sums.log_rest(self.step)) },
                sums.log_external(self.step),
            ),
            None => (
                Norms { total: log_sum_levels(&self.levels()), rest: None },
                log_sum_levels(&canonical(self.external_levels().collect())),
            ),
        };
        self.norm.set(Some(v));
        self.external_norm.set(Some(external));
        v
    }

    fn is_lattice(&self) -> bool {
        self.step > 0.0
            && self.step.is_finite()
            && self.groups.iter().all(|g| g.bias.to_bits() == 0)
            && self.external.iter().all(|e| e.bias.to_bits() == 0)
    }

    fn decay(&self, j: u64) -> f64 {
        match self.decay.get(j as usize) {
            Some(&v) => v,
            None => decay_at(j, self.step),
        }
    }

    /// Level sums for lists with no bias, smallest miss count first. List
    /// groups are folded by miss count (the list may be mid-update and out
    /// of order) and merged with the tail entries, which are kept in key
    /// order. `rest` leaves out one message of miss count `less_one`.
    fn lattice_sums(&self, less_one: Option<u64>) -> Option<LatticeSums> {
        if !self.is_lattice() {
            return None;
        }
        let mut listed: Vec<(u64, C)> = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            match listed.last_mut() {
                Some((m, n)) if *m == g.misses => *n = n.add(&g.count),
                _ => listed.push((g.misses, g.count.clone())),
            }
        }
        if !listed.windows(2).all(|w| w[0].0 < w[1].0) {
            listed.sort_by_key(|l| l.0);
            listed.dedup_by(|b, a| {
                let same = a.0 == b.0;
                if same {
                    a.1 = a.1.add(&b.1);
                }
                same
            });
        }
        let external = &self.external;
        let mut sums = LatticeSums { top: None, total: 0.0, external: 0.0, rest: 0.0 };
        let (mut i, mut e) = (0, 0);
        'levels: loop {
            // runs of tail-only levels, the bulk of a long tail
            if let Some(top) = sums.top {
                let bound = listed.get(i).map_or(u64::MAX, |l| l.0);
                while let Some(x) = external.get(e) {
                    let misses = (x.key + self.external_shift) as u64;
                    if misses >= bound || less_one == Some(misses) {
                        break;
                    }
                    if self.decay_zero.is_some_and(|z| misses - top >= z) {
                        break 'levels;
                    }
                    let term = x.approx * self.decay(misses - top);
                    sums.total += term;
                    sums.external += term;
                    sums.rest += term;
                    e += 1;
                }
            }
            let here = listed.get(i).map(|l| l.0);
            let held = external.get(e).map(|x| (x.key + self.external_shift) as u64);
            let misses = match (here, held) {
                (None, None) => break,
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
            };
            // counts sharing a level are added exactly before conversion
            let (count, outside) = match (here == Some(misses), held == Some(misses)) {
                (true, true) => {
                    let x = &external[e];
                    (Some(listed[i].1.add(&x.count)), x.approx)
                }
                (true, false) => (Some(listed[i].1.clone()), 0.0),
                (false, _) => (None, external[e].approx),
            };
            i += (here == Some(misses)) as usize;
            e += (held == Some(misses)) as usize;
            let total = match &count {
                Some(n) => n.to_f64(),
                None => outside,
            };
            let rest = match (less_one == Some(misses), &count) {
                (false, _) => total,
                (true, Some(n)) => n.sub(&C::one()).to_f64(),
                (true, None) => external[e - 1].count.sub(&C::one()).to_f64(),
            };
            let top = *sums.top.get_or_insert(misses);
            if self.decay_zero.is_some_and(|z| misses - top >= z) {
                // every later level weighs exactly zero
                break 'levels;
            }
            let weight = self.decay(misses - top);
            sums.total += total * weight;
            sums.external += outside * weight;
            sums.rest += rest * weight;
        }
        Some(sums)
    }

    /// `ln(ρ_head / (1 - ρ_head))` for the first message of the head group.
    pub fn head_log_odds(&self) -> Option<f64> {
        let head = self.groups.first()?;
        if let Some(rest) = self.norms().rest {
            return Some(head.offset(self.step) - rest);
        }
        let mut levels = self.levels();
        let own = levels.iter_mut().find(|l| l.misses == head.misses && l.bias.to_bits() == head.bias.to_bits())?;
        own.count = own.count.sub(&C::one());
        Some(head.offset(self.step) - log_sum_levels(&levels))
    }

    pub fn locate(&self, d: usize, index: &C) -> Option<&Group<C>> {
        self.groups.iter().find(|g| g.contains(d, index))
    }

    pub fn log_total_mass(&self) -> f64 {
        self.base + self.log_norm()
    }

    /// π0 of the current side assignment.
    pub fn pi0(&self) -> f64 {
        match self.measured {
            Some(m) => m.pi0,
            None => self.measure().pi0,
        }
    }

    pub fn pi1(&self) -> f64 {
        1.0 - self.pi0()
    }

    pub fn masses(&self) -> Masses {
        let step = self.step;
        let log_norm = self.log_norm();
        let delta: Vec<f64> = self.groups.iter().map(|g| (g.offset(step) - log_norm).exp()).collect();
        let external = (self.external_log_mass() - self.base - log_norm).exp();
        Masses { delta, external, log_scale: self.base + log_norm }
    }

    fn measure(&self) -> Measured {
        let m = self.masses();
        let mut pi0 = LevelSum::new();
        for (g, &d) in self.groups.iter().zip(&m.delta) {
            if g.side == Side::S0 {
                pi0.add(g, d, &g.count);
            }
        }
        Measured { pi0: pi0.value(), log_scale: m.log_scale }
    }

    pub(crate) fn groups_mut(&mut self) -> &mut Vec<Group<C>> {
        self.touch();
        &mut self.groups
    }

    /// Records the π0 and scale a partitioner derived from [`GroupList::masses`].
    pub(crate) fn set_measured(&mut self, pi0: f64, log_scale: f64) {
        self.measured = Some(Measured { pi0, log_scale });
    }

    /// Multiplies every S0 posterior by `w0` and every S1 posterior (the
    /// external mass included) by `w1`, then renormalizes so the total is one.
    pub fn bayes_update(&mut self, y: u8, params: &ChannelParams) -> Result<Update> {
        let Measured { pi0, log_scale } = match self.measured.take() {
            Some(m) => m,
            None => self.measure(),
        };
        let (w0, w1) = bayes_weights(pi0, y, params);
        let (ln_w0, ln_w1) = (w0.ln(), w1.ln());
        // total after weighting, in units of the pre-update total
        let relative = w0 * pi0 + w1 * (1.0 - pi0);
        let log_total = log_scale + relative.ln();
        if !(log_total.abs() < CONSERVATION_TOLERANCE) {
            return Err(Error::invariant(format!("posterior mass drifted: ln total = {log_total:e}")));
        }
        let (s0_shift, s1_shift) = (ln_w0 - log_total, ln_w1 - log_total);
        // the side whose symbol matched y keeps its miss count and takes the base shift
        let matched_shift = if y == 0 { s0_shift } else { s1_shift };
        self.step = params.llr_step();
        self.base += matched_shift;
        for g in &mut self.groups {
            let missed = g.side.label() != y;
            g.relocate(missed as u64, self.base, self.step);
        }
        self.external_shift += (y == 0) as i64;
        self.touch();
        Ok(Update { ln_w0, ln_w1, s1_increment: s1_shift, s1_missed: y == 0 })
    }

    /// Restores list order after an update. S0 and S1 are each still sorted
    /// (a common weight never reorders a side), so this is a linear two-way
    /// merge. Contiguous siblings with equal delta are coalesced.
    pub fn merge_sorted(&mut self) {
        let (s0, s1): (Vec<_>, Vec<_>) = std::mem::take(&mut self.groups).into_iter().partition(|g| g.side == Side::S0);
        let mut merged: Vec<Group<C>> = Vec::with_capacity(s0.len() + s1.len());
        let mut a = s0.into_iter().peekable();
        let mut b = s1.into_iter().peekable();
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => {
                    if list_order(x, y) != Ordering::Greater {
                        a.next()
                    } else {
                        b.next()
                    }
                }
                (Some(_), None) => a.next(),
                (None, Some(_)) => b.next(),
                (None, None) => break,
            };
            let next = next.expect("peeked");
            match merged.last_mut() {
                Some(last) if coalescible(last, &next) => last.absorb_sibling(next),
                _ => merged.push(next),
            }
        }
        self.groups = merged;
        self.touch();
    }

    /// Inserts groups (released from the tail) and restores list order,
    /// coalescing siblings the way [`merge_sorted`](Self::merge_sorted) does.
    pub(crate) fn insert_sorted(&mut self, mut extra: Vec<Group<C>>) {
        extra.sort_by(list_order);
        let old = std::mem::take(&mut self.groups);
        let mut merged = Vec::with_capacity(old.len() + extra.len());
        let mut a = old.into_iter().peekable();
        let mut b = extra.into_iter().peekable();
        loop {
            let take_a = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => list_order(x, y) != Ordering::Greater,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let next = if take_a { a.next() } else { b.next() }.expect("peeked");
            match merged.last_mut() {
                Some(last) if coalescible(last, &next) => last.absorb_sibling(next),
                _ => merged.push(next),
            }
        }
        self.groups = merged;
        self.touch();
    }

    pub fn is_sorted(&self) -> bool {
        self.groups.windows(2).all(|w| w[0].log_delta >= w[1].log_delta)
    }

    /// Checks that, together with `extra` groups held elsewhere, the list
    /// covers `{0, .., C(k, d) - 1}` exactly once for every d.
    pub fn check_coverage<'a>(&'a self, table: &BinomialTable<C>, extra: impl IntoIterator<Item = &'a Group<C>>) -> Result<()> {
        table.ensure_covers(self.k)?;
        let mut by_d: Vec<Vec<(&C, C)>> = vec![Vec::new(); self.k + 1];
        for g in self.groups.iter().chain(extra) {
            if g.d > self.k {
                return Err(Error::invariant(format!("group distance {} exceeds k = {}", g.d, self.k)));
            }
            by_d[g.d].push((&g.start, g.end()));
        }
        for (d, ranges) in by_d.iter_mut().enumerate() {
            ranges.sort();
            let mut next = C::zero();
            for (start, end) in ranges.iter() {
                if *start != &next {
                    return Err(Error::invariant(format!("distance {d}: gap or overlap at index {start}, expected {next}")));
                }
                next = end.clone();
            }
            if &next != table.choose(self.k, d) {
                return Err(Error::invariant(format!("distance {d}: covered {next} of {}", table.choose(self.k, d))));
            }
        }
        Ok(())
    }
}
