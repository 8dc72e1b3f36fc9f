//! Completion settings merged from an optional JSON file and command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use butterfly_completion::{AdamConfig, AdamHyper, AlsConfig, InitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Als,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Butterfly,
    Qtt,
    Lowrank,
}

/// Every tunable of `complete`. Fields left out keep their defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algo: Option<Algo>,
    pub format: Option<Format>,
    pub levels: Option<usize>,
    pub leaf: Option<usize>,
    pub rank: Option<usize>,
    pub init_rank: Option<usize>,
    pub init_iters: Option<usize>,
    pub oversampling: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub reg: Option<f64>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub sigma: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Values set in `other` win.
    pub fn merge(mut self, other: &RunConfig) -> Self {
        let dst = &mut self;
        overlay!(
            dst,
            other,
            algo,
            format,
            levels,
            leaf,
            rank,
            init_rank,
            init_iters,
            oversampling,
            max_iters,
            tol,
            reg,
            seed,
            alpha,
            beta1,
            beta2,
            sigma
        );
        self
    }

    pub fn resolved(&self) -> Result<Resolved, String> {
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| format!("--{name} is required"));
        let max_iters = self.max_iters.unwrap_or(30);
        if max_iters == 0 {
            return Err("--max-iters must be at least 1".into());
        }
        let tol = self.tol.unwrap_or(1e-3);
        if !(tol > 0.0) {
            return Err("--tol must be positive".into());
        }
        let rank = need(self.rank, "rank")?;
        if rank == 0 {
            return Err("--rank must be at least 1".into());
        }
        let hyper_default = AdamHyper::default();
        Ok(Resolved {
            algo: self.algo.unwrap_or(Algo::Als),
            format: self.format.unwrap_or(Format::Butterfly),
            levels: need(self.levels, "levels")?,
            leaf: need(self.leaf, "leaf")?,
            rank,
            seed: self.seed.unwrap_or(0),
            als: AlsConfig {
                max_iters,
                tol,
                reg: self.reg,
                record_test: true,
                track_objective: false,
            },
            adam: AdamConfig {
                max_iters,
                tol,
                hyper: AdamHyper {
                    alpha: self.alpha.unwrap_or(hyper_default.alpha),
                    beta1: self.beta1.unwrap_or(hyper_default.beta1),
                    beta2: self.beta2.unwrap_or(hyper_default.beta2),
                    sigma: self.sigma.unwrap_or(hyper_default.sigma),
                },
                record_test: true,
            },
            init: InitConfig {
                init_rank: self.init_rank,
                iters: self.init_iters.unwrap_or(10),
                seed: self.seed.unwrap_or(0),
                oversampling: self.oversampling,
                reg: self.reg,
            },
        })
    }
}

/// A validated [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub algo: Algo,
    pub format: Format,
    pub levels: usize,
    pub leaf: usize,
    pub rank: usize,
    pub seed: u64,
    pub als: AlsConfig,
    pub adam: AdamConfig,
    pub init: InitConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"rank": 2, "ranks": 3}"#);
        assert!(err.is_err());
        let ok: RunConfig = serde_json::from_str(r#"{"rank": 2, "algo": "adam"}"#).unwrap();
        assert_eq!(ok.algo, Some(Algo::Adam));
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig {
            rank: Some(2),
            tol: Some(1e-4),
            ..RunConfig::default()
        };
        let flags = RunConfig {
            rank: Some(5),
            ..RunConfig::default()
        };
        let merged = file.merge(&flags);
        assert_eq!(merged.rank, Some(5));
        assert_eq!(merged.tol, Some(1e-4));
    }

    #[test]
    fn zero_iterations_is_a_usage_error() {
        let cfg = RunConfig {
            levels: Some(2),
            leaf: Some(4),
            rank: Some(1),
            max_iters: Some(0),
            ..RunConfig::default()
        };
        assert!(cfg.resolved().is_err());
    }
}
