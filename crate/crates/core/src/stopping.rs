//! Stopping rule: stop once the largest posterior reaches `1 - ε`.
//!
//! Work is done in log-odds. Once a single message holds more than half the
//! probability it is alone in S0, and every output moves its log-odds by
//! exactly ±ln(q/p). The reachable stopping levels therefore sit on a
//! lattice anchored at the log-odds on entry. With a fixed threshold the
//! first lattice point at or above `ln((1-ε)/ε)` is used, which can
//! overshoot the target by almost a whole step. The randomized threshold
//! mixes that level with the one below it so the expected terminal error
//! equals ε.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::count::Count;
use crate::error::{Error, Result};
use crate::group::GroupList;

/// Log-odds comparisons accept values this far below a level.
pub const LEVEL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Fixed,
    Randomized,
}

impl ThresholdMode {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdMode::Fixed => "fixed",
            ThresholdMode::Randomized => "randomized",
        }
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(ThresholdMode::Fixed),
            "randomized" => Ok(ThresholdMode::Randomized),
            other => Err(Error::param(format!("unknown threshold mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    epsilon: f64,
    mode: ThresholdMode,
}

impl StopRule {
    /// `epsilon` must lie in (0, 0.5].
    pub fn new(epsilon: f64, mode: ThresholdMode) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(Error::param(format!("target error {epsilon} not in (0, 0.5]")));
        }
        Ok(StopRule { epsilon, mode })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    /// `ln((1-ε)/ε)`: log-odds of a head posterior equal to `1 - ε`.
    pub fn threshold(&self) -> f64 {
        (-self.epsilon).ln_1p() - self.epsilon.ln()
    }
}

/// Error probability `1 - ρ` of a head with log-odds `llr`.
pub fn error_at(llr: f64) -> f64 {
    if llr > 0.0 {
        let e = (-llr).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + llr.exp())
    }
}

/// The two lattice levels around the threshold and the probability of
/// choosing the upper one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Levels {
    pub upper: f64,
    pub lower: f64,
    pub upper_probability: f64,
}

impl Levels {
    /// Levels reachable from `entry` in steps of `step`, bracketing `threshold`.
    /// `None` when `entry` already meets the threshold.
    pub fn bracketing(entry: f64, threshold: f64, step: f64, epsilon: f64) -> Option<Levels> {
        if entry >= threshold - LEVEL_TOLERANCE {
            return None;
        }
        let steps = ((threshold - entry) / step - LEVEL_TOLERANCE).ceil().max(1.0);
        let upper = entry + steps * step;
        let lower = upper - step;
        let (err_hi, err_lo) = (error_at(upper), error_at(lower));
        let upper_probability = ((err_lo - epsilon) / (err_lo - err_hi)).clamp(0.0, 1.0);
        Some(Levels { upper, lower, upper_probability })
    }
}

/// Per-trial stopping state.
#[derive(Clone, Debug, PartialEq)]
pub struct StopState {
    rule: StopRule,
    threshold: f64,
    /// Selected log-odds level while a confirmation is in progress.
    level: Option<f64>,
    entries: usize,
    last_llr: f64,
}

impl StopState {
    pub fn new(rule: StopRule) -> Self {
        StopState { rule, threshold: rule.threshold(), level: None, entries: 0, last_llr: f64::NEG_INFINITY }
    }

    pub fn rule(&self) -> &StopRule {
        &self.rule
    }

    /// Number of times the head posterior rose above one half.
    pub fn entries(&self) -> usize {
        self.entries
    }

    /// Log-odds of the head at the last check that saw a dominant message.
    pub fn last_llr(&self) -> f64 {
        self.last_llr
    }

    /// Decides whether to stop on the current posterior. `common` supplies
    /// the shared randomness for level selection; it is drawn once per
    /// confirmation entry and only in randomized mode.
    pub fn check<C: Count, R: Rng + ?Sized>(&mut self, list: &GroupList<C>, params: &ChannelParams, common: &mut R) -> bool {
        let llr = match head_log_odds(list) {
            Some(l) if l > 0.0 || l >= self.threshold - LEVEL_TOLERANCE => l,
            _ => {
                self.level = None;
                return false;
            }
        };
        self.last_llr = llr;
        let level = match (self.rule.mode, self.level) {
            (ThresholdMode::Fixed, _) => self.threshold,
            (ThresholdMode::Randomized, Some(level)) => level,
            (ThresholdMode::Randomized, None) => {
                self.entries += 1;
                let level = match Levels::bracketing(llr, self.threshold, params.llr_step(), self.rule.epsilon) {
                    None => llr,
                    Some(lv) => {
                        if common.random::<f64>() < lv.upper_probability {
                            lv.upper
                        } else {
                            lv.lower
                        }
                    }
                };
                self.level = Some(level);
                level
            }
        };
        if self.rule.mode == ThresholdMode::Fixed && self.level.is_none() {
            self.entries += 1;
            self.level = Some(level);
        }
        llr >= level - LEVEL_TOLERANCE * level.abs().max(1.0)
    }
}

/// Log-odds `ln(ρ_head / (1 - ρ_head))` of the head group's single message,
/// or `None` when the head does not hold at least half of the probability.
pub fn head_log_odds<C: Count>(list: &GroupList<C>) -> Option<f64> {
    let head = list.head()?;
    if !head.is_singleton() {
        return None;
    }
    // cheap rejection; the list is normalized to within the conservation tolerance
    if head.log_delta() < -std::f64::consts::LN_2 - 1e-6 {
        return None;
    }
    let llr = list.head_log_odds()?;
    if llr.is_nan() || llr < -LEVEL_TOLERANCE {
        return None;
    }
    Some(llr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Seed, Stream};
    use crate::group::Group;

    fn two_group_list(head: f64) -> GroupList<u128> {
        GroupList::from_groups(2, vec![Group::new(0, 0, 1, head.ln()), Group::new(1, 0, 2, ((1.0 - head) / 2.0).ln())])
    }

    #[test]
    fn rejects_bad_epsilon() {
        assert!(StopRule::new(0.0, ThresholdMode::Fixed).is_err());
        assert!(StopRule::new(0.6, ThresholdMode::Fixed).is_err());
        assert!(StopRule::new(0.5, ThresholdMode::Fixed).is_ok());
    }

    #[test]
    fn boundary_is_inclusive() {
        let params = ChannelParams::new(0.05).unwrap();
        let mut rng = Seed(1).stream(Stream::Common);
        let rule = StopRule::new(1e-3, ThresholdMode::Fixed).unwrap();
        let mut st = StopState::new(rule);
        assert!(st.check(&two_group_list(1.0 - 1e-3), &params, &mut rng));
        let mut st = StopState::new(rule);
        assert!(!st.check(&two_group_list(1.0 - 1.001e-3), &params, &mut rng));
    }

    #[test]
    fn half_target_stops_on_any_dominant_head() {
        let params = ChannelParams::new(0.05).unwrap();
        let mut rng = Seed(1).stream(Stream::Common);
        for mode in [ThresholdMode::Fixed, ThresholdMode::Randomized] {
            let rule = StopRule::new(0.5, mode).unwrap();
            for head in [0.5, 0.51, 0.9] {
                assert!(StopState::new(rule).check(&two_group_list(head), &params, &mut rng));
            }
            assert!(!StopState::new(rule).check(&two_group_list(0.3), &params, &mut rng));
        }
    }

    #[test]
    fn levels_bracket_threshold() {
        let step = (0.95f64 / 0.05).ln();
        let eps: f64 = 1e-3;
        let t = ((1.0 - eps) / eps).ln();
        let lv = Levels::bracketing(0.3, t, step, eps).unwrap();
        assert!(lv.upper >= t && lv.lower < t);
        assert!((lv.upper - lv.lower - step).abs() < 1e-12);
        let mix = lv.upper_probability * error_at(lv.upper) + (1.0 - lv.upper_probability) * error_at(lv.lower);
        assert!((mix - eps).abs() < 1e-15);
        assert!(Levels::bracketing(t, t, step, eps).is_none());
    }

    #[test]
    fn exact_lattice_hit_has_no_randomization() {
        let step = 2.0;
        let lv = Levels::bracketing(1.0, 5.0, step, error_at(5.0)).unwrap();
        assert!((lv.upper - 5.0).abs() < 1e-12);
        assert!((lv.upper_probability - 1.0).abs() < 1e-9);
    }

    #[test]
    fn error_at_is_stable() {
        assert!((error_at(0.0) - 0.5).abs() < 1e-15);
        let e: f64 = 1e-12;
        let rel = (error_at(((1.0 - e) / e).ln()) - e).abs() / e;
        assert!(rel < 1e-6);
        assert!(error_at(700.0) > 0.0 && error_at(-800.0) == 1.0);
    }

    #[test]
    fn head_log_odds_of_list() {
        let l = head_log_odds(&two_group_list(0.8)).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(head_log_odds(&two_group_list(0.4)).is_none());
    }

    #[test]
    fn randomized_draws_once_per_entry() {
        let params = ChannelParams::new(0.05).unwrap();
        let rule = StopRule::new(1e-3, ThresholdMode::Randomized).unwrap();
        let mut st = StopState::new(rule);
        let mut rng = Seed(5).stream(Stream::Common);
        assert!(!st.check(&two_group_list(0.6), &params, &mut rng));
        assert!(!st.check(&two_group_list(0.7), &params, &mut rng));
        assert_eq!(st.entries(), 1);
        assert!(!st.check(&two_group_list(0.2), &params, &mut rng));
        assert!(!st.check(&two_group_list(0.6), &params, &mut rng));
        assert_eq!(st.entries(), 2);
    }
}
