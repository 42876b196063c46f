//! First-stage history sampling strategies and the counting baseline.
//!
//! Every strategy returns a chronologically ordered subset of the user's
//! history with `min(N, eligible pool)` items, deterministically for a fixed
//! (strategy, seed, dataset). Seeds are mixed with the user key so draws are
//! independent of evaluation order.

use std::collections::BTreeMap;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::InteractionItem;
use crate::error::{Error, Result};
use crate::genres::{Genre, GenreLabelSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingStrategy {
    /// The latest N watched movies.
    Recency,
    /// Uniform without replacement.
    Random { seed: u64 },
    /// Uniform over items below the global popularity cutoff.
    LongTail { seed: u64, quantile: f64 },
    /// The N globally most popular movies the user watched.
    TopKPopularity,
    /// Weighted by the user's per-genre watch density.
    GenreSample { seed: u64 },
}

impl SamplingStrategy {
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recency" => Ok(SamplingStrategy::Recency),
            "random" => Ok(SamplingStrategy::Random { seed }),
            "long-tail" | "longtail" | "long_tail" => Ok(SamplingStrategy::LongTail {
                seed,
                quantile: 0.90,
            }),
            "top-k" | "topk" | "top-k-popularity" | "top_k" => Ok(SamplingStrategy::TopKPopularity),
            "genre-sample" | "genre" | "genre_sample" => Ok(SamplingStrategy::GenreSample { seed }),
            other => Err(Error::Config(format!("unknown sampling strategy '{other}'"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SamplingStrategy::Recency => "recency",
            SamplingStrategy::Random { .. } => "random",
            SamplingStrategy::LongTail { .. } => "long-tail",
            SamplingStrategy::TopKPopularity => "top-k",
            SamplingStrategy::GenreSample { .. } => "genre-sample",
        }
    }
}

/// Dataset-level inputs to sampling: the user key (for seed derivation) and
/// the global popularity cutoff used by the long-tail strategy.
#[derive(Debug, Clone)]
pub struct SamplingContext<'a> {
    pub user_key: &'a str,
    pub popularity_cutoff: u64,
}

/// Nearest-rank percentile: `values` sorted ascending, rank `ceil(q * n)`
/// (1-indexed).
pub fn nearest_rank_percentile(values: &[u64], q: f64) -> u64 {
    assert!(!values.is_empty(), "percentile of an empty distribution");
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// FNV-1a mix of a base seed with a string key.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base.rotate_left(17);
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Selects at most `n` items per the strategy, re-sorted chronologically.
pub fn sample_history(
    history: &[InteractionItem],
    strategy: &SamplingStrategy,
    n: usize,
    ctx: &SamplingContext<'_>,
) -> Result<Vec<InteractionItem>> {
    if history.is_empty() {
        return Err(Error::contract("sample_history requires a non-empty history"));
    }
    if n == 0 {
        return Err(Error::contract("history size N must be >= 1"));
    }
    let picked: Vec<usize> = match strategy {
        SamplingStrategy::Recency => {
            let start = history.len().saturating_sub(n);
            (start..history.len()).collect()
        }
        SamplingStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(*seed, ctx.user_key));
            uniform_without_replacement(&mut rng, &(0..history.len()).collect::<Vec<_>>(), n)
        }
        SamplingStrategy::LongTail { seed, .. } => {
            let eligible: Vec<usize> = (0..history.len())
                .filter(|&i| history[i].popularity < ctx.popularity_cutoff)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(*seed, ctx.user_key));
            if eligible.is_empty() {
                log::warn!(
                    "long-tail pool empty for user '{}'; falling back to random sampling",
                    ctx.user_key
                );
                uniform_without_replacement(&mut rng, &(0..history.len()).collect::<Vec<_>>(), n)
            } else {
                uniform_without_replacement(&mut rng, &eligible, n)
            }
        }
        SamplingStrategy::TopKPopularity => {
            let mut order: Vec<usize> = (0..history.len()).collect();
            order.sort_by(|&a, &b| {
                history[b]
                    .popularity
                    .cmp(&history[a].popularity)
                    .then_with(|| history[a].movie_id.cmp(&history[b].movie_id))
            });
            order.truncate(n);
            order
        }
        SamplingStrategy::GenreSample { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(*seed, ctx.user_key));
            weighted_without_replacement(&mut rng, history, n)
        }
    };
    let mut picked = picked;
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| history[i].clone()).collect())
}

fn uniform_without_replacement<R: Rng>(rng: &mut R, pool: &[usize], n: usize) -> Vec<usize> {
    if pool.len() <= n {
        return pool.to_vec();
    }
    index_sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Item weight: sum over its genres of the user's density of that genre
/// (count of the genre in the history over total genre incidences).
fn weighted_without_replacement<R: Rng>(
    rng: &mut R,
    history: &[InteractionItem],
    n: usize,
) -> Vec<usize> {
    let mut genre_counts: BTreeMap<Genre, usize> = BTreeMap::new();
    let mut total_incidences = 0usize;
    for item in history {
        for &g in &item.genres {
            *genre_counts.entry(g).or_insert(0) += 1;
            total_incidences += 1;
        }
    }
    let weight = |i: usize| -> f64 {
        history[i]
            .genres
            .iter()
            .map(|g| genre_counts[g] as f64 / total_incidences as f64)
            .sum()
    };

    let mut remaining: Vec<usize> = (0..history.len()).collect();
    if remaining.len() <= n {
        return remaining;
    }
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let weights: Vec<f64> = remaining.iter().map(|&i| weight(i)).collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut chosen = remaining.len() - 1;
        for (slot, w) in weights.iter().enumerate() {
            if draw < *w {
                chosen = slot;
                break;
            }
            draw -= w;
        }
        picked.push(remaining.remove(chosen));
    }
    picked
}

/// Non-neural baseline: the three most and three least frequent genres in
/// the sampled items, ties broken alphabetically, liked taking precedence.
pub fn counting_baseline(items: &[InteractionItem]) -> Result<GenreLabelSet> {
    if items.is_empty() {
        return Err(Error::contract("counting baseline requires items"));
    }
    let mut counts: BTreeMap<Genre, usize> = BTreeMap::new();
    for item in items {
        for &g in &item.genres {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    let mut by_count: Vec<(Genre, usize)> = counts.into_iter().collect();
    // Descending count; BTreeMap order already gives the alphabetical
    // tie-break because the sort is stable.
    by_count.sort_by(|a, b| b.1.cmp(&a.1));
    let liked: Vec<Genre> = by_count.iter().take(3).map(|(g, _)| *g).collect();
    let mut rest: Vec<(Genre, usize)> = by_count.into_iter().skip(3).collect();
    rest.sort_by(|a, b| a.1.cmp(&b.1));
    let disliked: Vec<Genre> = rest.into_iter().take(3).map(|(g, _)| g).collect();
    GenreLabelSet::new(liked, disliked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, order: usize, popularity: u64, genres: Vec<Genre>) -> InteractionItem {
        InteractionItem {
            movie_id: id.into(),
            title: format!("title {id}"),
            description: "desc".into(),
            rating: 3.0,
            order_index: order,
            genres,
            popularity,
        }
    }

    fn ctx(cutoff: u64) -> SamplingContext<'static> {
        SamplingContext {
            user_key: "u1",
            popularity_cutoff: cutoff,
        }
    }

    fn history(pops: &[u64]) -> Vec<InteractionItem> {
        pops.iter()
            .enumerate()
            .map(|(i, &p)| item(&format!("m{i}"), i + 1, p, vec![Genre::Drama]))
            .collect()
    }

    #[test]
    fn recency_returns_whole_pool_when_small() {
        let h = history(&[1, 2, 3]);
        let out = sample_history(&h, &SamplingStrategy::Recency, 5, &ctx(100)).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn recency_takes_the_latest_indices() {
        let h = history(&[0; 10]);
        let out = sample_history(&h, &SamplingStrategy::Recency, 5, &ctx(100)).unwrap();
        let orders: Vec<usize> = out.iter().map(|i| i.order_index).collect();
        assert_eq!(orders, vec![6, 7, 8, 9, 10]);
    }

    #[test]
    fn recency_is_suffix_stable() {
        let h = history(&[0; 8]);
        for k in 1..8 {
            let a = sample_history(&h, &SamplingStrategy::Recency, k, &ctx(1)).unwrap();
            let b = sample_history(&h, &SamplingStrategy::Recency, k + 1, &ctx(1)).unwrap();
            assert_eq!(&b[1..], &a[..], "k={k}");
        }
    }

    #[test]
    fn top_k_applies_popularity_then_movie_id_tie_break() {
        let h = vec![
            item("m0", 1, 100, vec![Genre::Drama]),
            item("m1", 2, 5, vec![Genre::Drama]),
            item("m2", 3, 80, vec![Genre::Drama]),
            item("m3", 4, 80, vec![Genre::Drama]),
            item("m4", 5, 1, vec![Genre::Drama]),
        ];
        let out = sample_history(&h, &SamplingStrategy::TopKPopularity, 2, &ctx(1000)).unwrap();
        let ids: Vec<&str> = out.iter().map(|i| i.movie_id.as_str()).collect();
        assert_eq!(ids, vec!["m0", "m2"]);
    }

    #[test]
    fn random_is_deterministic_per_seed_and_chronological() {
        let h = history(&[0; 20]);
        let strat = SamplingStrategy::Random { seed: 9 };
        let a = sample_history(&h, &strat, 6, &ctx(1)).unwrap();
        let b = sample_history(&h, &strat, 6, &ctx(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].order_index < w[1].order_index));
        let other_seed = SamplingStrategy::Random { seed: 10 };
        let c = sample_history(&h, &other_seed, 6, &ctx(1)).unwrap();
        assert_ne!(a, c, "different seed should usually pick differently");
    }

    #[test]
    fn long_tail_respects_the_cutoff() {
        let pops: Vec<u64> = (0..30).map(|i| i * 10).collect();
        let h = history(&pops);
        let strat = SamplingStrategy::LongTail {
            seed: 4,
            quantile: 0.9,
        };
        let out = sample_history(&h, &strat, 8, &ctx(150)).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|i| i.popularity < 150));
    }

    #[test]
    fn long_tail_with_empty_pool_falls_back_to_random() {
        let h = history(&[500, 600, 700]);
        let strat = SamplingStrategy::LongTail {
            seed: 4,
            quantile: 0.9,
        };
        let out = sample_history(&h, &strat, 2, &ctx(100)).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn genre_sample_favors_dense_genres() {
        // 12 Drama items, 3 Western. Drama items carry four times the
        // weight, so a size-6 sample should keep a Drama majority.
        let mut h = Vec::new();
        for i in 0..12 {
            h.push(item(&format!("d{i}"), i, 1, vec![Genre::Drama]));
        }
        for i in 0..3 {
            h.push(item(&format!("w{i}"), 12 + i, 1, vec![Genre::Western]));
        }
        let strat = SamplingStrategy::GenreSample { seed: 11 };
        let out = sample_history(&h, &strat, 6, &ctx(10)).unwrap();
        let drama = out.iter().filter(|i| i.genres[0] == Genre::Drama).count();
        assert!(drama >= 4, "drama items picked: {drama}");
        assert!(out.windows(2).all(|w| w[0].order_index < w[1].order_index));
    }

    #[test]
    fn nearest_rank_percentile_examples() {
        assert_eq!(nearest_rank_percentile(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 0.9), 9);
        assert_eq!(nearest_rank_percentile(&[5], 0.9), 5);
        assert_eq!(nearest_rank_percentile(&[2, 4], 0.5), 2);
    }

    #[test]
    fn counting_matches_hand_worked_example() {
        // Drama:5, Action:3, Comedy:2, Horror:1.
        let mut items = Vec::new();
        let mut push_n = |g: Genre, n: usize| {
            for i in 0..n {
                items.push(item(&format!("{g:?}{i}"), items.len(), 1, vec![g]));
            }
        };
        push_n(Genre::Drama, 5);
        push_n(Genre::Action, 3);
        push_n(Genre::Comedy, 2);
        push_n(Genre::Horror, 1);
        let labels = counting_baseline(&items).unwrap();
        let liked: Vec<Genre> = labels.liked().iter().copied().collect();
        assert_eq!(liked, vec![Genre::Action, Genre::Comedy, Genre::Drama]);
        let disliked: Vec<Genre> = labels.disliked().iter().copied().collect();
        assert_eq!(disliked, vec![Genre::Horror]);
    }

    #[test]
    fn counting_partitions_six_distinct_counts() {
        let mut items = Vec::new();
        let genres = [
            Genre::Drama,
            Genre::Action,
            Genre::Comedy,
            Genre::Horror,
            Genre::War,
            Genre::Western,
        ];
        for (rank, &g) in genres.iter().enumerate() {
            for i in 0..(6 - rank) {
                items.push(item(&format!("{g:?}{i}"), items.len(), 1, vec![g]));
            }
        }
        let labels = counting_baseline(&items).unwrap();
        assert_eq!(labels.liked().len(), 3);
        assert_eq!(labels.disliked().len(), 3);
        assert!(labels.contains_liked(Genre::Drama));
        assert!(labels.contains_disliked(Genre::Western));
    }

    #[test]
    fn counting_degenerate_single_genre() {
        let items = vec![
            item("a", 0, 1, vec![Genre::Drama]),
            item("b", 1, 1, vec![Genre::Drama]),
        ];
        let labels = counting_baseline(&items).unwrap();
        assert!(labels.contains_liked(Genre::Drama));
        assert!(labels.disliked().is_empty());
    }
}
