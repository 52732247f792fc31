//! Run configuration: defaults, TOML file, command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use desmil::decorrelate::{Bandwidth, HsicAxis, KernelConfig};
use desmil::synth::SynthConfig;
use desmil::train::{TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Ood,
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Embedding,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub rho_train: f64,
    pub rho_test: f64,
    pub primary_share: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            users: d.num_users,
            items: d.num_items,
            clusters: d.clusters,
            min_len: d.min_len,
            max_len: d.max_len,
            rho_train: d.rho_train,
            rho_test: d.rho_test,
            primary_share: d.primary_share,
        }
    }
}

/// Every tunable of every command. Unset optional keys take derived
/// defaults at resolution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: SplitMode,
    pub z: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// History share of each evaluation sequence under the classic split.
    pub holdout: f64,
    /// One evaluation case per target instead of per user.
    pub expand_targets: bool,
    pub dim: usize,
    /// Defaults to `4 · dim`.
    pub hidden: Option<usize>,
    pub interests: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub negatives: usize,
    pub l_max: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub max_steps: Option<u64>,
    pub eval_every: u64,
    pub weight_step: f64,
    /// Fixed RBF bandwidth; the median heuristic when unset.
    pub bandwidth: Option<f64>,
    pub axis: Axis,
    pub unweighted: bool,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 0,
            mode: SplitMode::Ood,
            z: 0.5,
            valid_ratio: 0.1,
            test_ratio: 0.1,
            holdout: 0.8,
            expand_targets: false,
            dim: t.dim,
            hidden: None,
            interests: t.interests,
            lambda: t.lambda,
            batch_size: t.batch_size,
            lr: t.lr,
            negatives: t.negatives,
            l_max: t.l_max,
            patience: t.patience,
            max_epochs: t.max_epochs,
            max_steps: None,
            eval_every: t.eval_every,
            weight_step: t.weight_step,
            bandwidth: None,
            axis: Axis::Embedding,
            unweighted: false,
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the TOML file, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fills derived defaults.
    pub fn resolved(mut self) -> Self {
        self.hidden.get_or_insert(4 * self.dim);
        self
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let kernel = match self.bandwidth {
            Some(s) => KernelConfig::fixed(s),
            None => KernelConfig {
                bandwidth: Bandwidth::Median,
            },
        };
        let cfg = TrainConfig {
            dim: self.dim,
            hidden: self.hidden.unwrap_or(4 * self.dim),
            interests: self.interests,
            lambda: self.lambda,
            batch_size: self.batch_size,
            lr: self.lr,
            negatives: self.negatives,
            l_max: self.l_max,
            patience: self.patience,
            max_epochs: self.max_epochs,
            max_steps: self.max_steps,
            seed: self.seed,
            eval_every: self.eval_every,
            weight_step: self.weight_step,
            kernel,
            axis: match self.axis {
                Axis::Embedding => HsicAxis::Embedding,
                Axis::Batch => HsicAxis::Batch,
            },
            variant: if self.unweighted {
                Variant::Unweighted
            } else {
                Variant::Reweighted
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            num_users: s.users,
            num_items: s.items,
            clusters: s.clusters,
            min_len: s.min_len,
            max_len: s.max_len,
            rho_train: s.rho_train,
            rho_test: s.rho_test,
            primary_share: s.primary_share,
            seed: self.seed,
        }
    }
}

/// Full record of one run: the command, content hashes of its inputs and
/// the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub config: RunConfig,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            config: config.clone(),
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Result<Self> {
        self.inputs.insert(name.to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// First 16 hex digits of the manifest digest.
    pub fn run_id(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))[..16].to_string()
    }

    /// Creates `<root>/<command>-<run id>` and writes the manifest into it.
    pub fn create_run_dir(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join(format!("{}-{}", self.command, self.run_id()));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join(MANIFEST_FILE), self.to_toml())
            .with_context(|| format!("writing manifest in {}", dir.display()))?;
        Ok(dir)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Parses a comma-separated list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| anyhow::anyhow!("bad list element {x:?}")))
        .collect::<Result<Vec<T>>>()
        .and_then(|v| if v.is_empty() { bail!("empty list") } else { Ok(v) })
}
