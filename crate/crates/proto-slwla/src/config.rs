//! Flat key-value run configuration: defaults, config file, then CLI flags,
//! with the resolved snapshot persisted next to every run so it can be
//! replayed bit-for-bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::AucMode;
use crate::train::{OptimizerKind, TrainingConfig};

/// Every recognized key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("corpus", ""),
    ("splits", ""),
    ("labels", ""),
    ("encoder", "mock:17"),
    ("out_dir", "runs/default"),
    ("ablation", "slwla"),
    ("n", "5"),
    ("k", "5"),
    ("queries_per_class", "5"),
    ("m", "1"),
    ("tau", "0.3"),
    ("e_m", "4"),
    ("embed_dim", "768"),
    ("max_len", "50"),
    ("learning_rate", "1e-5"),
    ("batch_size", "auto"),
    ("episodes_per_epoch", "800"),
    ("val_episodes", "600"),
    ("test_episodes", "600"),
    ("patience", "3"),
    ("max_epochs", "50"),
    ("seed", "17"),
    ("optimizer", "sgd"),
    ("auc_mode", "pooled"),
    ("fine_tune_encoder", "false"),
    ("sentences_per_class", "2000"),
    ("split_counts", "64,16,20"),
];

fn known_key(key: &str) -> bool {
    DEFAULTS.iter().any(|(k, _)| *k == key)
}

/// Layered key-value store: defaults, then file, then flags.
#[derive(Debug, Clone)]
pub struct ConfigBuilder {
    values: BTreeMap<String, String>,
}

impl ConfigBuilder {
    pub fn defaults() -> Self {
        ConfigBuilder {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Overlays a flat config file (`key = value` lines, `#` comments).
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let content = fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key, rejecting unknown names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known_key(key) {
            return Err(Error::config(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// The resolved snapshot, re-loadable as a config file.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        fs::write(path, self.snapshot())?;
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key).parse::<T>().map_err(|_| {
            Error::config(format!("key '{key}': cannot parse '{}'", self.get(key)))
        })
    }

    fn parse_path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Typed view of the resolved configuration.
    pub fn build(&self) -> Result<RunConfig> {
        let batch_size = match self.get("batch_size") {
            "auto" | "" => None,
            other => Some(other.parse::<usize>().map_err(|_| {
                Error::config(format!("key 'batch_size': expected integer or 'auto', got '{other}'"))
            })?),
        };
        let counts: Vec<&str> = self.get("split_counts").split(',').collect();
        if counts.len() != 3 {
            return Err(Error::config(
                "key 'split_counts': expected 'train,valid,test'",
            ));
        }
        let parse_count = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("key 'split_counts': bad count '{s}'")))
        };
        let training = TrainingConfig {
            way: self.parse("n")?,
            shot: self.parse("k")?,
            queries_per_class: self.parse("queries_per_class")?,
            m: self.parse("m")?,
            tau: self.parse("tau")?,
            repeat: self.parse("e_m")?,
            embed_dim: self.parse("embed_dim")?,
            max_len: self.parse("max_len")?,
            learning_rate: self.parse("learning_rate")?,
            batch_size,
            episodes_per_epoch: self.parse("episodes_per_epoch")?,
            val_episodes: self.parse("val_episodes")?,
            test_episodes: self.parse("test_episodes")?,
            patience: self.parse("patience")?,
            max_epochs: self.parse("max_epochs")?,
            seed: self.parse("seed")?,
            optimizer: OptimizerKind::parse(self.get("optimizer"))?,
            auc_mode: AucMode::parse(self.get("auc_mode"))?,
            fine_tune_encoder: self.parse("fine_tune_encoder")?,
        };
        training.validate()?;
        Ok(RunConfig {
            corpus: self.parse_path("corpus"),
            splits: self.parse_path("splits"),
            labels: self.parse_path("labels"),
            encoder: self.get("encoder").to_string(),
            out_dir: PathBuf::from(self.get("out_dir")),
            ablation: self.get("ablation").to_string(),
            sentences_per_class: self.parse("sentences_per_class")?,
            split_counts: (
                parse_count(counts[0])?,
                parse_count(counts[1])?,
                parse_count(counts[2])?,
            ),
            training,
        })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub encoder: String,
    pub out_dir: PathBuf,
    pub ablation: String,
    pub sentences_per_class: usize,
    pub split_counts: (usize, usize, usize),
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn require_corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Error::config("no corpus given (flag --data or key 'corpus')"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_build_the_reference_protocol() {
        let cfg = ConfigBuilder::defaults().build().unwrap();
        assert_eq!(cfg.training, TrainingConfig::default());
        assert_eq!(cfg.split_counts, (64, 16, 20));
        assert_eq!(cfg.sentences_per_class, 2000);
        assert_eq!(cfg.ablation, "slwla");
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment line").unwrap();
        writeln!(f, "n = 10").unwrap();
        writeln!(f, "tau = 0.4").unwrap();
        let mut b = ConfigBuilder::defaults();
        b.load_file(f.path()).unwrap();
        b.set("tau", "0.25").unwrap();
        let cfg = b.build().unwrap();
        assert_eq!(cfg.training.way, 10);
        assert_eq!(cfg.training.tau, 0.25);
        assert_eq!(cfg.training.effective_batch_size(), 2);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let mut b = ConfigBuilder::defaults();
        assert!(b.set("learning_rt", "0.1").is_err());

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "nope = 1").unwrap();
        let mut b = ConfigBuilder::defaults();
        assert!(b.load_file(f.path()).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut b = ConfigBuilder::defaults();
        b.set("seed", "99").unwrap();
        b.set("encoder", "mock:3").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.snapshot");
        b.write_snapshot(&path).unwrap();

        let mut again = ConfigBuilder::defaults();
        again.load_file(&path).unwrap();
        assert_eq!(b.values(), again.values());
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut b = ConfigBuilder::defaults();
        b.set("patience", "soon").unwrap();
        let err = b.build().unwrap_err();
        assert!(err.to_string().contains("patience"));
    }
}
