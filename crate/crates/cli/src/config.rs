//! Flat `key=value` run configuration. Precedence, lowest to highest:
//! built-in defaults, config file, repeated `--set KEY=VALUE`, then the
//! named flags (`--seed`, `--workers`, `--out`). Unknown keys are
//! rejected so typos fail loudly instead of falling back to defaults.

use crate::error::{usage, Result};
use recaudit::dataset::{ingest_str, read_canonical, InteractionDataset, SourceFormat};
use recaudit::models::{ModelFamily, TrainConfig};
use recaudit::shadow::{EnsembleConfig, ShadowRegime};
use recaudit::unlearn::{RemovalMode, RemovalRequest};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

const KNOWN_KEYS: &[&str] = &[
    // input dataset (prepare)
    "dataset",
    "format",
    "min_interactions",
    // model / training
    "family",
    "dim",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "layers",
    "eval_k",
    // shadow ensemble
    "m",
    "negative_ratio",
    "out_sample_cap",
    "regime",
    "shadow_user_fraction",
    "with_target",
    // shared
    "seed",
    "workers",
    "out",
    "ensemble",
    // score
    "users",
    // attack
    "eval_per_class",
    "hr_k",
    // unlearn
    "mode",
    "target_user_fraction",
    "interaction_fraction",
    "removal_seed",
    "unlearn_eval_k",
];

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn insert(values: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    if !KNOWN_KEYS.contains(&key) {
        return Err(usage(format!("unknown config key '{key}'")));
    }
    values.insert(key.to_string(), value.to_string());
    Ok(())
}

impl Config {
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Config> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            for (no, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    usage(format!(
                        "{}:{}: expected key=value, got '{line}'",
                        path.display(),
                        no + 1
                    ))
                })?;
                insert(&mut values, k.trim(), v.trim())?;
            }
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("--set {s}: expected KEY=VALUE")))?;
            insert(&mut values, k.trim(), v.trim())?;
        }
        Ok(Config { values })
    }

    pub fn override_value(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| usage(format!("config key {key}={raw}: {e}"))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => Err(usage(format!(
                "config key {key}={other}: expected true or false"
            ))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed", 0u64)
    }

    pub fn workers(&self) -> Result<usize> {
        self.parsed("workers", 0usize)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.get("out")
            .map(PathBuf::from)
            .ok_or_else(|| usage("no output directory (set out= or pass --out)"))
    }

    /// A path key that must be present and exist on disk.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let raw = self
            .get(key)
            .ok_or_else(|| usage(format!("missing config key '{key}'")))?;
        let path = PathBuf::from(raw);
        if !path.exists() {
            return Err(usage(format!("{key} path {raw} does not exist")));
        }
        Ok(path)
    }

    /// Directory holding a prepared ensemble: `ensemble` when set,
    /// otherwise `out` — where `prepare` writes — so a single `--out`
    /// serves a whole run.
    pub fn ensemble_dir(&self) -> Result<PathBuf> {
        if self.get("ensemble").is_some() {
            self.existing_path("ensemble")
        } else if self.get("out").is_some() {
            self.existing_path("out")
        } else {
            Err(usage(
                "missing config key 'ensemble' (or pass --out pointing at a prepared run)",
            ))
        }
    }

    /// Load the input dataset per `dataset`/`format`/`min_interactions`,
    /// split and ready for ensemble building.
    pub fn load_dataset(&self) -> Result<InteractionDataset> {
        let path = self.existing_path("dataset")?;
        let format = self.get("format").unwrap_or("tsv");
        let ds = match format {
            "canonical" => read_canonical(&path)?,
            "tsv" | "csv" | "movielens" => {
                let text = fs::read_to_string(&path)?;
                let fmt = match format {
                    "tsv" => SourceFormat::Tsv,
                    "csv" => SourceFormat::Csv,
                    _ => SourceFormat::MovielensDat,
                };
                ingest_str(&text, fmt)?
            }
            other => {
                return Err(usage(format!(
                    "format={other}: expected tsv, csv, movielens, or canonical"
                )))
            }
        };
        let min = self.parsed("min_interactions", 3usize)?;
        let ds = if min > 0 {
            ds.filter_min_interactions(min)
        } else {
            ds
        };
        Ok(ds.split_leave_two_out()?)
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig> {
        let defaults = EnsembleConfig::default();
        let family = match self.get("family").unwrap_or("mf-logit") {
            "mf-logit" => ModelFamily::MfLogit,
            "ncf" => ModelFamily::Ncf,
            "lightgcn" => ModelFamily::LightGcn,
            other => {
                return Err(usage(format!(
                    "family={other}: expected mf-logit, ncf, or lightgcn"
                )))
            }
        };
        let regime = match self.get("regime").unwrap_or("self-audit") {
            "self-audit" => ShadowRegime::SelfAudit,
            "user-split" => ShadowRegime::UserSplit {
                shadow_user_fraction: self.parsed("shadow_user_fraction", 0.5f64)?,
            },
            other => {
                return Err(usage(format!(
                    "regime={other}: expected self-audit or user-split"
                )))
            }
        };
        let seed = self.seed()?;
        let dt = defaults.train;
        let train = TrainConfig {
            learning_rate: self.parsed("learning_rate", dt.learning_rate)?,
            batch_size: self.parsed("batch_size", dt.batch_size)?,
            max_epochs: self.parsed("max_epochs", dt.max_epochs)?,
            patience: self.parsed("patience", dt.patience)?,
            dim: self.parsed("dim", dt.dim)?,
            layers: self.parsed("layers", dt.layers)?,
            eval_k: self.parsed("eval_k", dt.eval_k)?,
            seed,
        };
        Ok(EnsembleConfig {
            m: self.parsed("m", defaults.m)?,
            family,
            train,
            negative_ratio: self.parsed("negative_ratio", defaults.negative_ratio)?,
            out_sample_cap: self.parsed("out_sample_cap", defaults.out_sample_cap)?,
            regime,
            seed,
        })
    }

    pub fn with_target(&self) -> Result<bool> {
        self.flag("with_target", true)
    }

    /// `users=all` (default) selects everyone; otherwise a comma-separated
    /// list of original user identifiers.
    pub fn user_selection(&self) -> Option<Vec<String>> {
        match self.get("users") {
            None | Some("all") => None,
            Some(list) => Some(
                list.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
            ),
        }
    }

    /// Per-class evaluation cap for the attack; 0 means uncapped.
    pub fn eval_per_class(&self) -> Result<Option<usize>> {
        let n = self.parsed("eval_per_class", 0usize)?;
        Ok(if n == 0 { None } else { Some(n) })
    }

    /// HR cutoff for the attack's utility readout; 0 skips it.
    pub fn hr_k(&self) -> Result<Option<usize>> {
        let k = self.parsed("hr_k", 100usize)?;
        Ok(if k == 0 { None } else { Some(k) })
    }

    pub fn removal_request(&self) -> Result<RemovalRequest> {
        let defaults = RemovalRequest::default();
        let mode = match self.get("mode") {
            None => defaults.mode,
            Some(raw) => RemovalMode::from_str(raw).map_err(|e| usage(e.to_string()))?,
        };
        Ok(RemovalRequest {
            mode,
            target_user_fraction: self
                .parsed("target_user_fraction", defaults.target_user_fraction)?,
            interaction_fraction: self
                .parsed("interaction_fraction", defaults.interaction_fraction)?,
            seed: self.parsed("removal_seed", self.seed()?)?,
        })
    }

    pub fn unlearn_eval_k(&self) -> Result<usize> {
        self.parsed("unlearn_eval_k", 100usize)
    }
}
