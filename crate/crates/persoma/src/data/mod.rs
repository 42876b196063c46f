//! Dataset layer: ingestion, synthetic generation, labels, splits, and
//! example assembly for the genre prediction task.

pub mod ingest;
pub mod labels;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{
    format_text_history, HistoryEncoder, InteractionItem, ItemInputFormat,
};
use crate::error::{Error, Result};
use crate::genres::GenreLabelSet;
use crate::sampling::{
    nearest_rank_percentile, sample_history, SamplingContext, SamplingStrategy,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use ingest::{ingest_movielens, IngestReport, MIN_RATINGS_PER_MOVIE};
pub use labels::{derive_labels, format_target, LabelThresholds};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct MovieMeta {
    pub movie_id: String,
    pub title: String,
    pub description: String,
    pub genres: Vec<crate::genres::Genre>,
    pub popularity: u64,
}

/// Immutable corpus: per-user chronological histories plus movie metadata.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub users: BTreeMap<String, Vec<InteractionItem>>,
    pub movies: BTreeMap<String, MovieMeta>,
    popularity_cutoff: u64,
}

impl Dataset {
    pub fn new(
        users: BTreeMap<String, Vec<InteractionItem>>,
        movies: BTreeMap<String, MovieMeta>,
    ) -> Result<Dataset> {
        for (user, items) in &users {
            for item in items {
                item.validate()?;
                if !movies.contains_key(&item.movie_id) {
                    return Err(Error::Contract(format!(
                        "user '{user}' references unknown movie '{}'",
                        item.movie_id
                    )));
                }
            }
        }
        let pops: Vec<u64> = movies.values().map(|m| m.popularity).collect();
        if pops.is_empty() {
            return Err(Error::contract("dataset has no movies"));
        }
        let popularity_cutoff = nearest_rank_percentile(&pops, 0.90);
        Ok(Dataset {
            users,
            movies,
            popularity_cutoff,
        })
    }

    /// Global 90th-percentile popularity (nearest rank), the long-tail
    /// eligibility cutoff.
    pub fn popularity_cutoff(&self) -> u64 {
        self.popularity_cutoff
    }

    pub fn user_ids(&self) -> Vec<String> {
        self.users.keys().cloned().collect()
    }

    /// Writes `ratings.csv`, `movies.csv`, and `descriptions.tsv` in the
    /// ingestion formats; the order index doubles as the timestamp.
    pub fn export_movielens(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut ratings = String::from("userId,movieId,rating,timestamp\n");
        for (user, items) in &self.users {
            for item in items {
                let _ = writeln!(
                    ratings,
                    "{user},{},{},{}",
                    item.movie_id, item.rating, item.order_index
                );
            }
        }
        std::fs::write(dir.join("ratings.csv"), ratings)?;

        let mut movies = String::from("movieId,title,genres\n");
        for (id, meta) in &self.movies {
            let title = if meta.title.contains(',') || meta.title.contains('"') {
                format!("\"{}\"", meta.title.replace('"', "\"\""))
            } else {
                meta.title.clone()
            };
            let genres: Vec<&str> = meta.genres.iter().map(|g| g.name()).collect();
            let _ = writeln!(movies, "{id},{title},{}", genres.join("|"));
        }
        std::fs::write(dir.join("movies.csv"), movies)?;

        let mut descriptions = String::new();
        for (id, meta) in &self.movies {
            if !meta.description.is_empty() {
                let _ = writeln!(descriptions, "{id}\t{}", meta.description);
            }
        }
        std::fs::write(dir.join("descriptions.tsv"), descriptions)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Seeded shuffle then partition by ratio; each split must be non-empty.
pub fn split_users(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (r_train, r_val, r_test) = ratios;
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {:?}",
            ratios
        )));
    }
    let mut ids = dataset.user_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = (n as f64 * r_train).round() as usize;
    let n_val = (n as f64 * r_val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Contract(format!(
            "split of {n} users into {ratios:?} leaves an empty split"
        )));
    }
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(SplitAssignment {
        train: ids,
        val,
        test,
    })
}

/// Which representation of the sampled history the model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputPath {
    Embeddings,
    Text,
}

/// One evaluated unit: a user's sampled history in model-ready form plus the
/// gold labels (derived from the full history) and target string.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub user_id: String,
    pub items: Vec<InteractionItem>,
    pub embeddings: Option<Tensor<T>>,
    pub text_history: Option<String>,
    pub labels: GenreLabelSet,
    pub target: String,
}

pub struct ExampleOptions<'a, T> {
    pub strategy: &'a SamplingStrategy,
    pub history_size: usize,
    pub format: ItemInputFormat,
    pub path: InputPath,
    pub thresholds: LabelThresholds,
    pub encoder: &'a HistoryEncoder<T>,
}

/// Builds examples for the given users, skipping users whose threshold rule
/// yields no labels at all.
pub fn build_examples<T: Scalar>(
    dataset: &Dataset,
    users: &[String],
    opts: &ExampleOptions<'_, T>,
) -> Result<Vec<Example<T>>> {
    let mut examples = Vec::with_capacity(users.len());
    for user_id in users {
        let history = dataset
            .users
            .get(user_id)
            .ok_or_else(|| Error::Contract(format!("unknown user '{user_id}'")))?;
        let labels = derive_labels(history, &opts.thresholds)?;
        if labels.is_empty() {
            continue;
        }
        let target = format_target(&labels)?;
        let ctx = SamplingContext {
            user_key: user_id,
            popularity_cutoff: dataset.popularity_cutoff(),
        };
        let items = sample_history(history, opts.strategy, opts.history_size, &ctx)?;
        let (embeddings, text_history) = match opts.path {
            InputPath::Embeddings => {
                let h = opts.encoder.encode_history(&items, opts.format)?;
                (Some(h.to_tensor()?), None)
            }
            InputPath::Text => (None, Some(format_text_history(&items, opts.format))),
        };
        examples.push(Example {
            user_id: user_id.clone(),
            items,
            embeddings,
            text_history,
            labels,
            target,
        });
    }
    if examples.is_empty() {
        return Err(Error::contract(
            "no users with non-empty labels in the requested set",
        ));
    }
    Ok(examples)
}
