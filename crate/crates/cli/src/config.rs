//! Run configuration: a TOML file with one section per stage, overridden by
//! command-line flags.
//!
//! ```toml
//! experiment = "r2-2d"
//! seed = 7
//! out = "runs/r2-2d"
//!
//! [simulate]
//! sims = 500
//! steps = 100
//!
//! [model]
//! message_dim = 2
//!
//! [train]
//! steps = 20000
//!
//! [symreg]
//! generations = 100
//! ```

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use gnlaw_core::sim::{EnvConfig, ForceLaw};
use gnlaw_core::{GPConfig, ModelConfig, TrainConfig};
use serde::Deserialize;

use crate::Failure;

/// Offsets added to the master seed for each stage.
pub const SIMULATE_SEED: u64 = 0;
pub const TRAIN_SEED: u64 = 1;
pub const SYMREG_SEED: u64 = 2;
pub const GENERALIZE_SEED: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
pub enum Experiment {
    #[value(name = "r1-2d")]
    #[serde(rename = "r1-2d")]
    R1_2d,
    #[value(name = "r2-2d")]
    #[serde(rename = "r2-2d")]
    R2_2d,
    #[value(name = "r2-3d")]
    #[serde(rename = "r2-3d")]
    R2_3d,
    #[value(name = "string-2d")]
    #[serde(rename = "string-2d")]
    String2d,
}

impl Experiment {
    /// `bodies` overrides the default body count of the n-body experiments.
    pub fn env(self, bodies: Option<usize>) -> EnvConfig {
        let nbody = |law, dim| EnvConfig::nbody(law, dim, bodies.unwrap_or(6));
        match self {
            Experiment::R1_2d => nbody(ForceLaw::InverseR, 2),
            Experiment::R2_2d => nbody(ForceLaw::InverseR2, 2),
            Experiment::R2_3d => nbody(ForceLaw::InverseR2, 3),
            Experiment::String2d => EnvConfig::string(bodies.unwrap_or(10)),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub sims: usize,
    pub steps: usize,
    pub bodies: Option<usize>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            sims: 500,
            steps: 100,
            bodies: None,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Defaults to the space dimension of the dataset.
    pub message_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub hidden_layers: Option<usize>,
}

impl ModelSection {
    pub fn model(&self, dim: usize) -> ModelConfig {
        let base = ModelConfig::with_message_dim(dim, self.message_dim.unwrap_or(dim));
        ModelConfig {
            hidden: self.hidden.unwrap_or(base.hidden),
            hidden_layers: self.hidden_layers.unwrap_or(base.hidden_layers),
            ..base
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub max_rows: usize,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self { max_rows: 50_000 }
    }
}

/// `[symreg]` holds the [`GPConfig`] fields plus `max_rows`, the number of
/// message rows handed to the search (picked at a fixed stride).
#[derive(Clone, Debug)]
pub struct SymregSection {
    pub max_rows: usize,
    pub gp: GPConfig,
}

impl Default for SymregSection {
    fn default() -> Self {
        Self {
            max_rows: 2000,
            gp: GPConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizeSection {
    pub body_counts: Vec<usize>,
    pub sims: usize,
    pub steps: usize,
}

impl Default for GeneralizeSection {
    fn default() -> Self {
        Self {
            body_counts: vec![4, 6, 8, 12],
            sims: 100,
            steps: 100,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub simulate: SimulateSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub analyze: AnalyzeSection,
    #[serde(skip)]
    pub symreg: SymregSection,
    #[serde(rename = "symreg")]
    symreg_gp: Option<GPConfig>,
    pub generalize: GeneralizeSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Failure::Usage(msg) => Failure::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let mut table: toml::Table = text.parse().map_err(|e| Failure::Usage(format!("{e}")))?;
        for section in ["train", "symreg"] {
            if table
                .get(section)
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key("seed"))
            {
                return Err(Failure::Usage(format!(
                    "[{section}] may not set a seed; stage seeds derive from the top-level seed"
                )));
            }
        }
        let max_rows = match table.get_mut("symreg").and_then(|s| s.as_table_mut()) {
            Some(section) => match section.remove("max_rows") {
                Some(v) => Some(
                    v.as_integer()
                        .and_then(|n| usize::try_from(n).ok())
                        .ok_or_else(|| Failure::Usage("symreg.max_rows must be a non-negative integer".into()))?,
                ),
                None => None,
            },
            None => None,
        };
        let mut config: RunConfig = table.try_into().map_err(|e| Failure::Usage(format!("{e}")))?;
        if let Some(gp) = config.symreg_gp.take() {
            config.symreg.gp = gp;
        }
        if let Some(n) = max_rows {
            config.symreg.max_rows = n;
        }
        Ok(config)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn experiment(&self) -> Result<Experiment, Failure> {
        self.experiment
            .ok_or_else(|| Failure::Usage("no experiment given (use --experiment or set it in the config)".into()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(TRAIN_SEED),
            ..self.train.clone()
        }
    }

    pub fn gp_config(&self) -> GPConfig {
        GPConfig {
            seed: self.seed.wrapping_add(SYMREG_SEED),
            ..self.symreg.gp.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file() {
        let c = RunConfig::parse(
            r#"
            experiment = "r1-2d"
            seed = 9
            out = "runs/a"
            [simulate]
            sims = 3
            [model]
            message_dim = 100
            [train]
            steps = 10
            learning_rate = 0.01
            [symreg]
            max_rows = 50
            population = 40
            [generalize]
            body_counts = [3, 5]
            "#,
        )
        .unwrap();
        assert_eq!(c.experiment, Some(Experiment::R1_2d));
        assert_eq!(c.simulate.sims, 3);
        assert_eq!(c.simulate.steps, 100);
        assert_eq!(c.model.model(2).message_dim, 100);
        assert_eq!(c.train_config().seed, 10);
        assert_eq!(c.train_config().steps, 10);
        assert_eq!(c.gp_config().seed, 11);
        assert_eq!(c.gp_config().population, 40);
        assert_eq!(c.symreg.max_rows, 50);
        assert_eq!(c.generalize.body_counts, vec![3, 5]);
        assert_eq!(c.out_dir(), PathBuf::from("runs/a"));
    }

    #[test]
    fn empty_file_uses_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.experiment, None);
        assert_eq!(c.train.steps, 20_000);
        assert_eq!(c.model.model(3), ModelConfig::bottleneck(3));
        assert!(c.experiment().is_err());
    }

    #[test]
    fn rejects_unknown_keys_names_and_stage_seeds() {
        for bad in [
            "experiment = \"r3-2d\"",
            "[train]\nlearnig_rate = 0.1",
            "[train]\nseed = 4",
            "[symreg]\nseed = 4",
            "[bogus]\nx = 1",
            "seed = ",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(Failure::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn experiments_map_to_valid_environments() {
        for e in Experiment::value_variants() {
            e.env(None).validate().unwrap();
        }
        assert_eq!(Experiment::R2_3d.env(Some(4)).n_bodies, 4);
        assert_eq!(Experiment::String2d.env(None).n_bodies, 10);
    }
}
