//! Experiment configuration, training/evaluation, and the grid runner.
//!
//! Configs are plain-text `key=value` files; every key can also be given as
//! a `--key=value` command-line flag. A config plus the dataset fully
//! determines a run.

pub mod grid;
pub mod train;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::adapter::AdapterKind;
use crate::decoder::{FreezeMode, PromptOrder};
use crate::encoder::ItemInputFormat;
use crate::error::{Error, Result};

pub use grid::{run_grid, GridSpec};
pub use train::{evaluate_config, train, RunRecord};

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        users: usize,
        movies: usize,
        ratings_per_user: usize,
        seed: u64,
        noise: f64,
    },
    Ingested {
        ratings: PathBuf,
        movies: PathBuf,
        descriptions: Option<PathBuf>,
    },
}

/// The modeling route of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Soft-prompt adapter over item embeddings.
    Adapter(AdapterKind),
    /// Tokenized text history, no user soft prompt.
    TextBaseline,
    /// Non-neural counting baseline.
    Counting,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Method::Adapter(AdapterKind::Mlp)),
            "transformer" => Ok(Method::Adapter(AdapterKind::Transformer)),
            "perceiver" => Ok(Method::Adapter(AdapterKind::Perceiver)),
            "text" | "text-baseline" => Ok(Method::TextBaseline),
            "counting" => Ok(Method::Counting),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Adapter(AdapterKind::Mlp) => "mlp",
            Method::Adapter(AdapterKind::Transformer) => "transformer",
            Method::Adapter(AdapterKind::Perceiver) => "perceiver",
            Method::TextBaseline => "text",
            Method::Counting => "counting",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub method: Method,
    pub history_size: usize,
    pub strategy_name: String,
    pub sampling_seed: u64,
    pub format: ItemInputFormat,
    pub freeze: FreezeMode,

    pub task_tokens: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub patience: usize,
    pub val_subsample: usize,
    pub max_new_tokens: usize,

    pub d_model: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub max_seq_len: usize,
    pub prompt_order: PromptOrder,
    pub adapter_hidden: usize,
    pub latent_count: usize,

    pub d_title: usize,
    pub d_desc: usize,
    pub d_rating: usize,
    pub encoder_seed: u64,
    pub external_embeddings: Option<PathBuf>,

    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub min_support: usize,
    pub like_threshold: f64,
    pub dislike_threshold: f64,

    pub phase_a_steps: usize,
    pub pretrained_decoder: Option<PathBuf>,

    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic {
                users: 2000,
                movies: 500,
                ratings_per_user: 64,
                seed: 7,
                noise: 0.35,
            },
            method: Method::Adapter(AdapterKind::Mlp),
            history_size: 10,
            strategy_name: "recency".into(),
            sampling_seed: 101,
            format: ItemInputFormat::Complete,
            freeze: FreezeMode::Frozen,

            task_tokens: 20,
            batch_size: 32,
            learning_rate: 0.001,
            max_steps: 20_000,
            eval_interval: 200,
            patience: 10,
            val_subsample: 256,
            max_new_tokens: 28,

            d_model: 64,
            decoder_layers: 2,
            decoder_heads: 4,
            max_seq_len: 512,
            prompt_order: PromptOrder::UserTaskText,
            adapter_hidden: 64,
            latent_count: 20,

            d_title: 32,
            d_desc: 32,
            d_rating: 4,
            encoder_seed: 0x5eed_e7c0,
            external_embeddings: None,

            split_train: 0.9,
            split_val: 0.05,
            split_test: 0.05,
            min_support: 3,
            like_threshold: 4.0,
            dislike_threshold: 2.5,

            phase_a_steps: 5000,
            pretrained_decoder: None,

            seed: 1,
            output_dir: default_output_root(),
        }
    }
}

/// Output root: `$PERSOMA_OUTPUT_ROOT` or `./runs`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os("PERSOMA_OUTPUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

impl ExperimentConfig {
    /// Parses a `key=value` file (blank lines and `#` comments ignored) on
    /// top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        config.apply_file(path)?;
        Ok(config)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                line: idx + 1,
                msg: "expected key=value".into(),
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one override. Unknown keys are config errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
        }
        match key {
            "dataset" => match value.to_ascii_lowercase().as_str() {
                "synthetic" => {
                    if !matches!(self.dataset, DatasetSource::Synthetic { .. }) {
                        self.dataset = DatasetSource::Synthetic {
                            users: 2000,
                            movies: 500,
                            ratings_per_user: 64,
                            seed: 7,
                            noise: 0.35,
                        };
                    }
                }
                "ingested" => {
                    if !matches!(self.dataset, DatasetSource::Ingested { .. }) {
                        self.dataset = DatasetSource::Ingested {
                            ratings: PathBuf::new(),
                            movies: PathBuf::new(),
                            descriptions: None,
                        };
                    }
                }
                other => return Err(Error::Config(format!("unknown dataset source '{other}'"))),
            },
            "synth_users" | "synth_movies" | "synth_ratings_per_user" | "synth_seed"
            | "synth_noise" => {
                let DatasetSource::Synthetic {
                    users,
                    movies,
                    ratings_per_user,
                    seed,
                    noise,
                } = &mut self.dataset
                else {
                    return Err(Error::Config(format!(
                        "key '{key}' requires dataset=synthetic"
                    )));
                };
                match key {
                    "synth_users" => *users = num(key, value)?,
                    "synth_movies" => *movies = num(key, value)?,
                    "synth_ratings_per_user" => *ratings_per_user = num(key, value)?,
                    "synth_seed" => *seed = num(key, value)?,
                    _ => *noise = num(key, value)?,
                }
            }
            "ratings_file" | "movies_file" | "descriptions_file" => {
                if !matches!(self.dataset, DatasetSource::Ingested { .. }) {
                    self.dataset = DatasetSource::Ingested {
                        ratings: PathBuf::new(),
                        movies: PathBuf::new(),
                        descriptions: None,
                    };
                }
                let DatasetSource::Ingested {
                    ratings,
                    movies,
                    descriptions,
                } = &mut self.dataset
                else {
                    unreachable!()
                };
                match key {
                    "ratings_file" => *ratings = PathBuf::from(value),
                    "movies_file" => *movies = PathBuf::from(value),
                    _ => *descriptions = Some(PathBuf::from(value)),
                }
            }
            "method" => self.method = Method::parse(value)?,
            "history_size" => self.history_size = num(key, value)?,
            "strategy" => {
                // validate now, stored by name (seed applied at run time)
                crate::sampling::SamplingStrategy::parse(value, 0)?;
                self.strategy_name = value.to_ascii_lowercase();
            }
            "sampling_seed" => self.sampling_seed = num(key, value)?,
            "format" => self.format = ItemInputFormat::parse(value)?,
            "freeze" => self.freeze = FreezeMode::parse(value)?,
            "task_tokens" => self.task_tokens = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "val_subsample" => self.val_subsample = num(key, value)?,
            "max_new_tokens" => self.max_new_tokens = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "decoder_layers" => self.decoder_layers = num(key, value)?,
            "decoder_heads" => self.decoder_heads = num(key, value)?,
            "max_seq_len" => self.max_seq_len = num(key, value)?,
            "prompt_order" => {
                self.prompt_order = match value.to_ascii_lowercase().as_str() {
                    "user-task-text" => PromptOrder::UserTaskText,
                    "task-user-text" => PromptOrder::TaskUserText,
                    other => {
                        return Err(Error::Config(format!("unknown prompt order '{other}'")))
                    }
                }
            }
            "adapter_hidden" => self.adapter_hidden = num(key, value)?,
            "latent_count" => self.latent_count = num(key, value)?,
            "d_title" => self.d_title = num(key, value)?,
            "d_desc" => self.d_desc = num(key, value)?,
            "d_rating" => self.d_rating = num(key, value)?,
            "encoder_seed" => self.encoder_seed = num(key, value)?,
            "external_embeddings" => self.external_embeddings = Some(PathBuf::from(value)),
            "split_train" => self.split_train = num(key, value)?,
            "split_val" => self.split_val = num(key, value)?,
            "split_test" => self.split_test = num(key, value)?,
            "min_support" => self.min_support = num(key, value)?,
            "like_threshold" => self.like_threshold = num(key, value)?,
            "dislike_threshold" => self.dislike_threshold = num(key, value)?,
            "phase_a_steps" => self.phase_a_steps = num(key, value)?,
            "pretrained_decoder" => self.pretrained_decoder = Some(PathBuf::from(value)),
            "seed" => self.seed = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => {
                return Err(Error::Config(format!(
                    "unknown config key '{other}' (see ExperimentConfig for valid keys)"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_size == 0 {
            return Err(Error::Config("history_size must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if let DatasetSource::Ingested { ratings, movies, .. } = &self.dataset {
            if ratings.as_os_str().is_empty() || movies.as_os_str().is_empty() {
                return Err(Error::Config(
                    "ingested dataset requires ratings_file and movies_file".into(),
                ));
            }
        }
        crate::sampling::SamplingStrategy::parse(&self.strategy_name, self.sampling_seed)?;
        Ok(())
    }

    pub fn strategy(&self) -> crate::sampling::SamplingStrategy {
        crate::sampling::SamplingStrategy::parse(&self.strategy_name, self.sampling_seed)
            .expect("validated at construction")
    }

    /// Serialized `key=value` snapshot, stable across runs of the same
    /// config.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        match &self.dataset {
            DatasetSource::Synthetic {
                users,
                movies,
                ratings_per_user,
                seed,
                noise,
            } => {
                let _ = writeln!(out, "dataset=synthetic");
                let _ = writeln!(out, "synth_users={users}");
                let _ = writeln!(out, "synth_movies={movies}");
                let _ = writeln!(out, "synth_ratings_per_user={ratings_per_user}");
                let _ = writeln!(out, "synth_seed={seed}");
                let _ = writeln!(out, "synth_noise={noise}");
            }
            DatasetSource::Ingested {
                ratings,
                movies,
                descriptions,
            } => {
                let _ = writeln!(out, "dataset=ingested");
                let _ = writeln!(out, "ratings_file={}", ratings.display());
                let _ = writeln!(out, "movies_file={}", movies.display());
                if let Some(d) = descriptions {
                    let _ = writeln!(out, "descriptions_file={}", d.display());
                }
            }
        }
        let _ = writeln!(out, "method={}", self.method.label());
        let _ = writeln!(out, "history_size={}", self.history_size);
        let _ = writeln!(out, "strategy={}", self.strategy_name);
        let _ = writeln!(out, "sampling_seed={}", self.sampling_seed);
        let _ = writeln!(out, "format={}", self.format.label());
        let _ = writeln!(out, "freeze={}", self.freeze.label());
        let _ = writeln!(out, "task_tokens={}", self.task_tokens);
        let _ = writeln!(out, "batch_size={}", self.batch_size);
        let _ = writeln!(out, "learning_rate={}", self.learning_rate);
        let _ = writeln!(out, "max_steps={}", self.max_steps);
        let _ = writeln!(out, "eval_interval={}", self.eval_interval);
        let _ = writeln!(out, "patience={}", self.patience);
        let _ = writeln!(out, "val_subsample={}", self.val_subsample);
        let _ = writeln!(out, "max_new_tokens={}", self.max_new_tokens);
        let _ = writeln!(out, "d_model={}", self.d_model);
        let _ = writeln!(out, "decoder_layers={}", self.decoder_layers);
        let _ = writeln!(out, "decoder_heads={}", self.decoder_heads);
        let _ = writeln!(out, "max_seq_len={}", self.max_seq_len);
        let _ = writeln!(out, "adapter_hidden={}", self.adapter_hidden);
        let _ = writeln!(out, "latent_count={}", self.latent_count);
        let _ = writeln!(out, "d_title={}", self.d_title);
        let _ = writeln!(out, "d_desc={}", self.d_desc);
        let _ = writeln!(out, "d_rating={}", self.d_rating);
        let _ = writeln!(out, "encoder_seed={}", self.encoder_seed);
        let _ = writeln!(out, "split_train={}", self.split_train);
        let _ = writeln!(out, "split_val={}", self.split_val);
        let _ = writeln!(out, "split_test={}", self.split_test);
        let _ = writeln!(out, "min_support={}", self.min_support);
        let _ = writeln!(out, "like_threshold={}", self.like_threshold);
        let _ = writeln!(out, "dislike_threshold={}", self.dislike_threshold);
        let _ = writeln!(out, "phase_a_steps={}", self.phase_a_steps);
        let _ = writeln!(out, "seed={}", self.seed);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        assert_eq!(config.task_tokens, 20);
        assert_eq!(config.batch_size, 32);
        assert_eq!(config.learning_rate, 0.001);
    }

    #[test]
    fn apply_overrides_every_field_kind() {
        let mut config = ExperimentConfig::default();
        config.apply("method", "perceiver").unwrap();
        config.apply("freeze", "lora:8:16").unwrap();
        config.apply("strategy", "top-k").unwrap();
        config.apply("history_size", "50").unwrap();
        config.apply("learning_rate", "0.01").unwrap();
        assert_eq!(config.method, Method::Adapter(AdapterKind::Perceiver));
        assert_eq!(
            config.freeze,
            FreezeMode::Lora {
                rank: 8,
                alpha: 16.0
            }
        );
        assert_eq!(config.history_size, 50);
        assert!(config.apply("no_such_key", "1").is_err());
        assert!(config.apply("batch_size", "abc").is_err());
    }

    #[test]
    fn config_file_round_trips_through_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        let mut config = ExperimentConfig::default();
        config.apply("method", "transformer").unwrap();
        config.apply("history_size", "5").unwrap();
        std::fs::write(&path, config.snapshot()).unwrap();
        let reparsed = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(reparsed.method.label(), "transformer");
        assert_eq!(reparsed.history_size, 5);
        assert_eq!(reparsed.snapshot(), config.snapshot());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, "# a comment\n\nhistory_size=7\n").unwrap();
        let config = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(config.history_size, 7);
    }
}
