//! Tail compaction.
//!
//! Groups that sit at the bottom of the list in S1 all receive the same S1
//! weight every step. They can be lifted out of the list and tracked by
//! their total probability alone, with their posteriors reconstructed
//! exactly on release. While a tail exists the list carries its total
//! probability as external mass, so π1 stays correct.

use serde::{Deserialize, Serialize};

use crate::count::Count;
use crate::error::{Error, Result};
use crate::group::{Group, GroupList, Side};

/// Absorption and release thresholds. At transmission `t` the maximal S1
/// suffix with probability below `alpha(t) = low * min(1, 2^{-(t-k)/k})` is
/// absorbed, and the tail is released once its probability exceeds
/// `high_factor * alpha(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Watermarks {
    pub low: f64,
    pub high_factor: f64,
}

impl Default for Watermarks {
    fn default() -> Self {
        Watermarks { low: 1e-2, high_factor: 2.0 }
    }
}

impl Watermarks {
    pub fn new(low: f64, high_factor: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&low) {
            return Err(Error::param(format!("low watermark {low} not in [0, 1)")));
        }
        if !(high_factor >= 1.0) {
            return Err(Error::param(format!("high watermark factor {high_factor} below 1")));
        }
        Ok(Watermarks { low, high_factor })
    }

    pub fn absorb_below(&self, t: usize, k: usize) -> f64 {
        let excess = t.saturating_sub(k) as f64 / k.max(1) as f64;
        self.low * (-excess).exp2().min(1.0)
    }

    pub fn release_above(&self, t: usize, k: usize) -> f64 {
        self.high_factor * self.absorb_below(t, k)
    }
}

/// Groups held outside the list. They all sit in S1, so each output that
/// disagrees with the S1 symbol adds one miss to every member. The tail
/// counts those outputs; a member absorbed when the count was `c` has
/// gained `count - c` misses since.
#[derive(Clone, Debug, PartialEq)]
pub struct TailAggregate<C> {
    members: Vec<(Group<C>, u64)>,
    s1_misses: u64,
    /// Member with the largest posterior; common updates never change it.
    top: Option<usize>,
}

impl<C: Count> TailAggregate<C> {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<C> Default for TailAggregate<C> {
    fn default() -> Self {
        TailAggregate { members: Vec::new(), s1_misses: 0, top: None }
    }
}

impl<C: Count> TailAggregate<C> {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    fn current(&self, member: &(Group<C>, u64), list: &GroupList<C>) -> Group<C> {
        let (base, step) = list.lattice();
        let mut g = member.0.clone();
        g.relocate(self.s1_misses - member.1, base, step);
        g
    }

    fn current_log_delta(&self, member: &(Group<C>, u64), list: &GroupList<C>) -> f64 {
        let (base, step) = list.lattice();
        member.0.log_delta_after(self.s1_misses - member.1, base, step)
    }

    /// Largest current log-posterior among the members.
    pub fn ceiling(&self, list: &GroupList<C>) -> Option<f64> {
        self.top.map(|i| self.current_log_delta(&self.members[i], list))
    }

    /// Records one update; `s1_missed` is whether the output disagreed with S1.
    pub fn accumulate(&mut self, s1_missed: bool) {
        self.s1_misses += s1_missed as u64;
    }

    /// Current log-posterior of `(d, index)` if it is held here.
    pub fn locate(&self, d: usize, index: &C, list: &GroupList<C>) -> Option<f64> {
        self.members.iter().find(|m| m.0.contains(d, index)).map(|m| self.current_log_delta(m, list))
    }

    /// Members with their current log-posteriors.
    pub fn members<'a>(&'a self, list: &'a GroupList<C>) -> impl Iterator<Item = Group<C>> + 'a {
        self.members.iter().map(move |m| self.current(m, list))
    }

    /// Moves the maximal suffix of S1 groups with total probability below
    /// `below` into the tail. The head group is never absorbed. Returns the
    /// number of groups moved.
    pub fn absorb(&mut self, list: &mut GroupList<C>, below: f64) -> usize {
        if below <= 0.0 || list.len() < 2 {
            return 0;
        }
        let log_total = list.log_total_mass();
        let groups = list.groups();
        let mut acc = 0.0;
        let mut cut = groups.len();
        while cut > 1 {
            let g = &groups[cut - 1];
            if g.side() != Side::S1 {
                break;
            }
            let m = (g.log_mass() - log_total).exp();
            if !(acc + m < below) {
                break;
            }
            acc += m;
            cut -= 1;
        }
        let moved = groups.len() - cut;
        if moved == 0 {
            return 0;
        }
        let mut top_value = self.ceiling(list).unwrap_or(f64::NEG_INFINITY);
        for g in list.move_to_external(cut) {
            if self.top.is_none() || g.log_delta() > top_value {
                top_value = g.log_delta();
                self.top = Some(self.members.len());
            }
            self.members.push((g, self.s1_misses));
        }
        moved
    }

    /// Returns every member to the list with its reconstructed posterior.
    pub fn release(&mut self, list: &mut GroupList<C>) -> usize {
        let n = self.members.len();
        if n == 0 {
            return 0;
        }
        let (base, step) = list.lattice();
        let s1_misses = self.s1_misses;
        let released = self
            .members
            .drain(..)
            .map(|(mut g, at)| {
                g.relocate(s1_misses - at, base, step);
                g.set_side(Side::S1);
                g
            })
            .collect();
        self.top = None;
        list.insert_sorted(released);
        list.clear_external();
        n
    }

    /// Releases when the tail probability exceeds `above`.
    pub fn release_if_above(&mut self, list: &mut GroupList<C>, above: f64) -> usize {
        if self.is_empty() {
            return 0;
        }
        let p_tail = (list.external_log_mass() - list.log_total_mass()).exp();
        if p_tail > above {
            self.release(list)
        } else {
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::combinadics::BinomialTable;

    fn systematic(k: usize) -> GroupList<u128> {
        let table = BinomialTable::new(k).unwrap();
        GroupList::after_systematic(k, &ChannelParams::new(0.05).unwrap(), &table).unwrap()
    }

    #[test]
    fn zero_watermark_is_noop() {
        let mut list = systematic(20);
        let before = list.clone();
        let mut tail = TailAggregate::new();
        assert_eq!(tail.absorb(&mut list, 0.0), 0);
        assert_eq!(list, before);
        assert!(tail.ceiling(&list).is_none());
    }

    #[test]
    fn absorb_release_round_trip() {
        let mut list = systematic(20);
        let before = list.clone();
        let mut tail = TailAggregate::new();
        let moved = tail.absorb(&mut list, 1e-3);
        assert!(moved > 0);
        assert_eq!(list.len() + tail.len(), before.len());
        assert!(list.log_total_mass().abs() < 1e-12);
        let p_tail = list.external_log_mass().exp();
        assert!(p_tail > 0.0 && p_tail < 1e-3);
        assert_eq!(tail.release(&mut list), moved);
        assert_eq!(list, before);
        assert!(tail.is_empty());
    }

    #[test]
    fn release_on_empty_tail_is_noop() {
        let mut list = systematic(5);
        let before = list.clone();
        let mut tail = TailAggregate::new();
        assert_eq!(tail.release(&mut list), 0);
        assert_eq!(tail.release_if_above(&mut list, 0.0), 0);
        assert_eq!(list, before);
    }

    #[test]
    fn head_and_s0_are_never_absorbed() {
        let mut list = systematic(3);
        let mut tail = TailAggregate::new();
        assert_eq!(tail.absorb(&mut list, 1.0), 3);
        assert_eq!(list.len(), 1);

        let mut list = systematic(6);
        let last = list.len() - 1;
        list.groups_mut()[last].set_side(Side::S0);
        assert_eq!(TailAggregate::new().absorb(&mut list, 0.5), 0);
    }

    #[test]
    fn members_follow_lattice() {
        let params = ChannelParams::new(0.05).unwrap();
        let mut list = systematic(10);
        let mut tail = TailAggregate::new();
        tail.absorb(&mut list, 1e-4);
        let ceiling = tail.ceiling(&list).unwrap();
        let base = list.lattice().0;
        // S1 disagrees with the output, then agrees
        list.bayes_update(0, &params).unwrap();
        tail.accumulate(true);
        list.bayes_update(1, &params).unwrap();
        tail.accumulate(false);
        let shift = list.lattice().0 - base - params.llr_step();
        assert!((tail.ceiling(&list).unwrap() - (ceiling + shift)).abs() < 1e-12);
        let g = tail.members(&list).next().unwrap();
        assert_eq!(tail.locate(g.d(), g.start(), &list), Some(g.log_delta()));
    }

    #[test]
    fn watermark_schedule() {
        let w = Watermarks::default();
        assert_eq!(w.absorb_below(5, 10), 1e-2);
        assert!((w.absorb_below(20, 10) - 5e-3).abs() < 1e-15);
        assert!((w.release_above(30, 10) - 5e-3).abs() < 1e-15);
        assert!(Watermarks::new(-1.0, 2.0).is_err());
        assert!(Watermarks::new(0.1, 0.5).is_err());
    }
}
