use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::partition::PartitionPolicy;
use crate::stopping::{StopRule, ThresholdMode};
use crate::tail::Watermarks;

/// Accepts either a single value or a list.
fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

/// Experiment description. List-valued fields span a grid; every
/// combination is one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub k: Vec<usize>,
    pub p: f64,
    #[serde(deserialize_with = "one_or_many")]
    pub epsilon: Vec<f64>,
    #[serde(deserialize_with = "one_or_many")]
    pub policy: Vec<PartitionPolicy>,
    #[serde(deserialize_with = "one_or_many", alias = "threshold_mode")]
    pub mode: Vec<ThresholdMode>,
    #[serde(deserialize_with = "one_or_many")]
    pub compaction: Vec<bool>,
    pub low_watermark: f64,
    pub high_watermark_factor: f64,
    pub trials: u64,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
    /// Record wall time per transmission. Off by default so that output
    /// files are byte-reproducible.
    pub timing: bool,
    pub max_transmissions: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = Watermarks::default();
        ExperimentConfig {
            k: vec![50],
            p: 0.05,
            epsilon: vec![1e-3],
            policy: vec![PartitionPolicy::Sed],
            mode: vec![ThresholdMode::Fixed],
            compaction: vec![false],
            low_watermark: w.low,
            high_watermark_factor: w.high_factor,
            trials: 10_000,
            seed: 1,
            workers: 0,
            output: None,
            overlay: None,
            timing: false,
            max_transmissions: None,
        }
    }
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointConfig {
    pub k: usize,
    pub params: ChannelParams,
    pub stop: StopRule,
    pub policy: PartitionPolicy,
    pub compaction: Option<Watermarks>,
    pub trials: u64,
    pub seed: u64,
    pub timing: bool,
    pub max_transmissions: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::param("trials must be at least 1"));
        }
        if self.k.contains(&0) {
            return Err(Error::param("k must be at least 1"));
        }
        ChannelParams::new(self.p)?;
        for &e in &self.epsilon {
            StopRule::new(e, ThresholdMode::Fixed)?;
        }
        if self.compaction.contains(&true) {
            Watermarks::new(self.low_watermark, self.high_watermark_factor)?;
        }
        if self.policy.is_empty() || self.mode.is_empty() || self.compaction.is_empty() {
            return Err(Error::param("policy, mode and compaction need at least one value"));
        }
        Ok(())
    }

    /// Grid points in a fixed order: k, then epsilon, policy, mode, compaction.
    pub fn points(&self) -> Result<Vec<PointConfig>> {
        self.validate()?;
        let params = ChannelParams::new(self.p)?;
        let mut out = Vec::new();
        for &k in &self.k {
            for &eps in &self.epsilon {
                for &policy in &self.policy {
                    for &mode in &self.mode {
                        for &compact in &self.compaction {
                            out.push(PointConfig {
                                k,
                                params,
                                stop: StopRule::new(eps, mode)?,
                                policy,
                                compaction: compact
                                    .then(|| Watermarks::new(self.low_watermark, self.high_watermark_factor))
                                    .transpose()?,
                                trials: self.trials,
                                seed: self.seed,
                                timing: self.timing,
                                max_transmissions: self.max_transmissions,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Named experiment grids matching the standard figures.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ExperimentConfig::default();
        Ok(match name {
            "fig2" => ExperimentConfig {
                k: vec![10, 20, 30, 50, 75, 100, 150, 200, 300],
                policy: vec![PartitionPolicy::Sed, PartitionPolicy::Relaxed],
                compaction: vec![true],
                trials: 10_000,
                ..base
            },
            "fig3" => ExperimentConfig {
                k: (2..=40).collect(),
                mode: vec![ThresholdMode::Fixed, ThresholdMode::Randomized],
                trials: 100_000,
                ..base
            },
            "fig4" => ExperimentConfig {
                k: vec![50, 100, 150, 200, 250, 300, 350, 400],
                compaction: vec![false, true],
                trials: 1_000,
                timing: true,
                ..base
            },
            "fig5" => ExperimentConfig {
                k: vec![283],
                epsilon: vec![1e-3, 1e-6, 1e-9, 1e-12],
                compaction: vec![true],
                trials: 100_000,
                ..base
            },
            other => return Err(Error::param(format!("unknown preset {other:?}; expected fig2, fig3, fig4 or fig5"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_order_and_size() {
        let cfg = ExperimentConfig {
            k: vec![8, 9],
            epsilon: vec![1e-3, 1e-6],
            mode: vec![ThresholdMode::Fixed, ThresholdMode::Randomized],
            ..Default::default()
        };
        let pts = cfg.points().unwrap();
        assert_eq!(pts.len(), 8);
        assert_eq!((pts[0].k, pts[0].stop.mode()), (8, ThresholdMode::Fixed));
        assert_eq!((pts[1].k, pts[1].stop.mode()), (8, ThresholdMode::Randomized));
        assert_eq!(pts[2].stop.epsilon(), 1e-6);
        assert_eq!(pts[7].k, 9);
    }

    #[test]
    fn empty_sweep_has_no_points() {
        let cfg = ExperimentConfig { k: vec![], ..Default::default() };
        assert!(cfg.points().unwrap().is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig { trials: 0, ..Default::default() }.points().is_err());
        assert!(ExperimentConfig { k: vec![0], ..Default::default() }.points().is_err());
        assert!(ExperimentConfig { p: 0.5, ..Default::default() }.points().is_err());
        assert!(ExperimentConfig { epsilon: vec![0.0], ..Default::default() }.points().is_err());
        assert!(ExperimentConfig::preset("fig9").is_err());
    }

    #[test]
    fn scalar_or_list_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"k": 12, "epsilon": [1e-3, 1e-6], "mode": "randomized"}"#).unwrap();
        assert_eq!(cfg.k, vec![12]);
        assert_eq!(cfg.epsilon.len(), 2);
        assert_eq!(cfg.mode, vec![ThresholdMode::Randomized]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"kk": 1}"#).is_err());
    }

    #[test]
    fn presets_validate() {
        for name in ["fig2", "fig3", "fig4", "fig5"] {
            ExperimentConfig::preset(name).unwrap().points().unwrap();
        }
    }
}
