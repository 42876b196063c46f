//! Label derivation from rating history and the target-string template.

use std::collections::BTreeMap;

use crate::encoder::InteractionItem;
use crate::error::{Error, Result};
use crate::genres::{Genre, GenreLabelSet};

/// Thresholds turning per-genre mean ratings into liked/disliked labels.
#[derive(Debug, Clone, Copy)]
pub struct LabelThresholds {
    /// Minimum rated movies per genre for it to be labeled at all.
    pub min_support: usize,
    pub like_threshold: f64,
    pub dislike_threshold: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        LabelThresholds {
            min_support: 3,
            like_threshold: 4.0,
            dislike_threshold: 2.5,
        }
    }
}

/// Genres with enough support are liked when their mean rating reaches the
/// like threshold and disliked when it falls at or below the dislike
/// threshold; everything else is unlabeled. Derived from the user's full
/// history.
pub fn derive_labels(
    history: &[InteractionItem],
    thresholds: &LabelThresholds,
) -> Result<GenreLabelSet> {
    if history.is_empty() {
        return Err(Error::contract("derive_labels requires a non-empty history"));
    }
    let mut sums: BTreeMap<Genre, (f64, usize)> = BTreeMap::new();
    for item in history {
        for &g in &item.genres {
            let e = sums.entry(g).or_insert((0.0, 0));
            e.0 += item.rating;
            e.1 += 1;
        }
    }
    let mut liked = Vec::new();
    let mut disliked = Vec::new();
    for (g, (sum, count)) in sums {
        if count < thresholds.min_support {
            continue;
        }
        let mean = sum / count as f64;
        if mean >= thresholds.like_threshold {
            liked.push(g);
        } else if mean <= thresholds.dislike_threshold {
            disliked.push(g);
        }
    }
    GenreLabelSet::new(liked, disliked)
}

/// `Liked Genres: {G+}. Not Liked Genres: {G-}`, sets comma-joined in
/// alphabetical order, an empty set rendered as `None`. Users with no labels
/// at all are filtered out before this point.
pub fn format_target(labels: &GenreLabelSet) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::contract(
            "format_target requires at least one labeled genre",
        ));
    }
    Ok(format!(
        "Liked Genres: {}. Not Liked Genres: {}",
        join_genres(labels.liked()),
        join_genres(labels.disliked())
    ))
}

fn join_genres(set: &std::collections::BTreeSet<Genre>) -> String {
    if set.is_empty() {
        return "None".into();
    }
    set.iter()
        .map(|g| g.name())
        .collect::<Vec<_>>()
        .join(", ")
}
