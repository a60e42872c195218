//! The TOML run configuration.
//!
//! ```toml
//! seed = 7                      # required
//!
//! [dataset]
//! format = "movielens-dat"      # movielens-dat | amazon-jsonl | tsv | synthetic
//! path = "data/ratings.dat"     # required unless synthetic
//! min_user = 5
//! min_item = 5
//!
//! [drs]                         # kind, dim, layers; [drs.train] epochs, batch_size, patience, adam
//! [lm]                          # n_layers, n_heads, d_model, ffn_width, context_limit, dropout
//! [training]                    # gamma, eta1, eta2, clip_norm, batch_size, max_epochs, patience,
//!                               # samples_per_user, include_top_k, write_back, schedule
//! [eval]                        # history_cap, candidate_mix, popularity_alpha, valid_users,
//!                               # test_users, seeds, gammas, variants
//! [output]
//! dir = "runs/ml1m"
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! holding the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bridge::JointConfig;
use crate::corpus::synthetic::PlantedConfig;
use crate::corpus::RawFormat;
use crate::drs::{DrsKind, DrsModelConfig, DrsTrainConfig};
use crate::error::{Error, Result};
use crate::eval::{Variant, DEFAULT_GAMMAS};
use crate::lm::LmConfig;
use crate::pipeline::ExperimentConfig;
use crate::vocab::PromptTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    MovielensDat,
    AmazonJsonl,
    Tsv,
    /// Generated planted-community data; no input file.
    Synthetic,
}

impl DatasetFormat {
    pub fn raw(self) -> Option<RawFormat> {
        match self {
            DatasetFormat::MovielensDat => Some(RawFormat::MovielensDat),
            DatasetFormat::AmazonJsonl => Some(RawFormat::AmazonJsonl),
            DatasetFormat::Tsv => Some(RawFormat::Tsv),
            DatasetFormat::Synthetic => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetFormat::MovielensDat => "movielens-dat",
            DatasetFormat::AmazonJsonl => "amazon-jsonl",
            DatasetFormat::Tsv => "tsv",
            DatasetFormat::Synthetic => "synthetic",
        }
    }
}

fn five() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Label used in reports; the format name when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub format: DatasetFormat,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "five")]
    pub min_user: usize,
    #[serde(default = "five")]
    pub min_item: usize,
    #[serde(default)]
    pub synthetic: PlantedConfig,
    #[serde(default)]
    pub template: PromptTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrsSpec {
    #[serde(default = "default_kind")]
    pub kind: DrsKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub train: DrsTrainConfig,
}

fn default_kind() -> DrsKind {
    DrsModelConfig::default().kind
}

fn default_dim() -> usize {
    DrsModelConfig::default().dim
}

fn default_layers() -> usize {
    DrsModelConfig::default().layers
}

impl Default for DrsSpec {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            dim: default_dim(),
            layers: default_layers(),
            train: DrsTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub history_cap: usize,
    pub candidate_mix: f64,
    pub popularity_alpha: f64,
    pub valid_users: Option<usize>,
    pub test_users: Option<usize>,
    /// Seeds for `ablate` and `sweep`; the run seed when empty.
    pub seeds: Vec<u64>,
    pub gammas: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            history_cap: e.history_cap,
            candidate_mix: e.candidate_mix,
            popularity_alpha: e.popularity_alpha,
            valid_users: e.valid_users,
            test_users: e.test_users,
            seeds: Vec::new(),
            gammas: DEFAULT_GAMMAS.to_vec(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub drs: DrsSpec,
    #[serde(default)]
    pub lm: LmConfig,
    #[serde(default)]
    pub training: JointConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// [`load`](Self::load) with `key.path=value` overrides applied before
    /// validation. Values are TOML literals; bare words are taken as strings.
    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse_with(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Self::parse(text);
        }
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.dataset.path {
            if p.is_relative() {
                self.dataset.path = Some(base.join(p));
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.dataset.format.raw(), &self.dataset.path) {
            (Some(_), None) => {
                return Err(Error::Config(format!(
                    "dataset.path is required for format {}",
                    self.dataset.format.name()
                )))
            }
            (Some(_), Some(p)) if !p.exists() => {
                return Err(Error::Config(format!(
                    "dataset.path {} does not exist",
                    p.display()
                )))
            }
            _ => {}
        }
        if self
            .eval
            .gammas
            .iter()
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::Config("eval.gammas must be finite and >= 0".into()));
        }
        self.experiment().validate()
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            drs: DrsModelConfig {
                kind: self.drs.kind,
                dim: self.drs.dim,
                layers: self.drs.layers,
            },
            drs_train: self.drs.train.clone(),
            lm: self.lm,
            joint: self.training.clone(),
            template: self.dataset.template.clone(),
            history_cap: self.eval.history_cap,
            candidate_mix: self.eval.candidate_mix,
            popularity_alpha: self.eval.popularity_alpha,
            valid_users: self.eval.valid_users,
            test_users: self.eval.test_users,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.eval.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.eval.seeds.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("single key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in path {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3

[dataset]
format = "synthetic"

[output]
dir = "out"
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.eval.gammas, DEFAULT_GAMMAS.to_vec());
        assert_eq!(c.eval.variants.len(), 4);
        assert_eq!(c.seeds(), vec![3]);
        assert_eq!(c.training, JointConfig::default());
        assert_eq!(c.experiment().lm, LmConfig::default());
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("seed = 3", "");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[training]\ngama = 0.1\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn width_mismatch_is_a_specific_error() {
        let text = format!("{MINIMAL}\n[drs]\ndim = 32\n[lm]\nd_model = 64\n");
        let err = RunConfig::parse(&text)
            .unwrap()
            .validate()
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("drs.dim = 32") && err.contains("lm.d_model = 64"),
            "{err}"
        );
    }

    #[test]
    fn raw_formats_need_an_existing_path() {
        let text = MINIMAL.replace("\"synthetic\"", "\"tsv\"");
        let err = RunConfig::parse(&text)
            .unwrap()
            .validate()
            .unwrap_err()
            .to_string();
        assert!(err.contains("dataset.path"), "{err}");
        let missing = text.replace(
            "format = \"tsv\"",
            "format = \"tsv\"\npath = \"/no/such/file.tsv\"",
        );
        let err = RunConfig::parse(&missing)
            .unwrap()
            .validate()
            .unwrap_err()
            .to_string();
        assert!(err.contains("/no/such/file.tsv"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let text = format!(
            "{MINIMAL}\n[training]\ngamma = 0.01\nwrite_back = \"after_update\"\n[eval]\nvariants = [\"full\", \"wo_ET\"]\nseeds = [1, 2]\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.training.gamma, 0.01);
        assert_eq!(c.eval.variants, vec![Variant::Full, Variant::WoEt]);
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let o = [
            "training.gamma=0.5".to_owned(),
            "drs.kind=gmf".to_owned(),
            "eval.seeds=[4, 5]".to_owned(),
            "seed=9".to_owned(),
        ];
        let c = RunConfig::parse_with(MINIMAL, &o).unwrap();
        assert_eq!(c.training.gamma, 0.5);
        assert_eq!(c.drs.kind, DrsKind::Gmf);
        assert_eq!(c.seeds(), vec![4, 5]);
        assert_eq!(c.seed, 9);
        assert!(RunConfig::parse_with(MINIMAL, &["training.gama=1".to_owned()]).is_err());
        assert!(RunConfig::parse_with(MINIMAL, &["nonsense".to_owned()]).is_err());
        assert!(RunConfig::parse_with(MINIMAL, &["seed.x=1".to_owned()]).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.resolve_paths(Path::new("/tmp/exp"));
        assert_eq!(c.output.dir, PathBuf::from("/tmp/exp/out"));
    }
}
