//! Genre extraction from generated strings and class-weighted metrics over
//! the 38 (genre x polarity) classes, plus prompt token accounting.

use std::fmt::Write as _;

use crate::adapter::AdapterKind;
use crate::genres::{Genre, GenreLabelSet, ALL_GENRES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Polarity {
    Liked,
    Disliked,
}

impl Polarity {
    pub fn label(self) -> &'static str {
        match self {
            Polarity::Liked => "liked",
            Polarity::Disliked => "disliked",
        }
    }
}

/// Result of parsing one generated string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub labels: GenreLabelSet,
    /// False when neither span marker was found; such predictions score as
    /// all-miss and count toward the parse-failure rate.
    pub found_markers: bool,
}

/// Locates the `Liked Genres:` / `Not Liked Genres:` spans
/// (case-insensitively) and matches known genre names inside them with
/// longest-match and word-boundary checks. A genre seen in both spans stays
/// in the span where it appeared first; `None` and unknown words contribute
/// nothing.
pub fn extract_genres_detailed(text: &str) -> Extraction {
    let lower = text.to_lowercase();
    let bytes = lower.as_bytes();

    // Marker positions: (content_start, polarity), first of each kind.
    let mut markers: Vec<(usize, usize, Polarity)> = Vec::new(); // (span_key_start, content_start, polarity)
    let needle = "liked genres:";
    let mut search = 0usize;
    while let Some(found) = lower[search..].find(needle) {
        let start = search + found;
        let is_negated = start >= 4 && &lower[start - 4..start] == "not ";
        let polarity = if is_negated {
            Polarity::Disliked
        } else {
            Polarity::Liked
        };
        let key_start = if is_negated { start - 4 } else { start };
        markers.push((key_start, start + needle.len(), polarity));
        search = start + needle.len();
    }
    let mut first_liked: Option<(usize, usize)> = None;
    let mut first_disliked: Option<(usize, usize)> = None;
    for &(key, content, polarity) in &markers {
        match polarity {
            Polarity::Liked if first_liked.is_none() => first_liked = Some((key, content)),
            Polarity::Disliked if first_disliked.is_none() => first_disliked = Some((key, content)),
            _ => {}
        }
    }
    if first_liked.is_none() && first_disliked.is_none() {
        return Extraction {
            labels: GenreLabelSet::empty(),
            found_markers: false,
        };
    }

    // Span of each marker runs to the start of the nearest following marker.
    let boundary_of = |content_start: usize| -> usize {
        markers
            .iter()
            .map(|&(key, _, _)| key)
            .filter(|&key| key >= content_start)
            .min()
            .unwrap_or(bytes.len())
    };

    // Collect (position, genre, polarity) matches across both spans.
    let mut names: Vec<(&'static str, Genre)> = ALL_GENRES
        .iter()
        .map(|&g| (g.name(), g))
        .collect();
    names.sort_by_key(|(name, _)| std::cmp::Reverse(name.len()));

    let mut matches: Vec<(usize, Genre, Polarity)> = Vec::new();
    for (span, polarity) in [
        (first_liked, Polarity::Liked),
        (first_disliked, Polarity::Disliked),
    ] {
        let Some((_, content_start)) = span else {
            continue;
        };
        let end = boundary_of(content_start);
        let mut i = content_start;
        while i < end {
            if !lower.is_char_boundary(i) {
                i += 1;
                continue;
            }
            let mut advanced = false;
            for (name, genre) in &names {
                let lname = name.to_lowercase();
                if lower[i..end.min(lower.len())].starts_with(&lname)
                    && boundary_ok(&lower, i, i + lname.len())
                {
                    matches.push((i, *genre, polarity));
                    i += lname.len();
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                i += 1;
            }
        }
    }

    matches.sort_by_key(|&(pos, _, _)| pos);
    let mut liked = Vec::new();
    let mut disliked = Vec::new();
    let mut seen = [false; crate::genres::GENRE_COUNT];
    for (_, genre, polarity) in matches {
        if seen[genre.index()] {
            continue;
        }
        seen[genre.index()] = true;
        match polarity {
            Polarity::Liked => liked.push(genre),
            Polarity::Disliked => disliked.push(genre),
        }
    }
    Extraction {
        labels: GenreLabelSet::new(liked, disliked).expect("first-occurrence sets are disjoint"),
        found_markers: true,
    }
}

fn boundary_ok(text: &str, start: usize, end: usize) -> bool {
    let before_ok = start == 0
        || text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
    let after_ok = end >= text.len()
        || text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
    before_ok && after_ok
}

/// Total extraction: arbitrary strings map to (possibly empty) label sets.
pub fn extract_genres(text: &str) -> GenreLabelSet {
    extract_genres_detailed(text).labels
}

#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub user_id: String,
    pub raw: String,
    pub predicted: GenreLabelSet,
    pub parse_failed: bool,
    pub gold: GenreLabelSet,
}

impl PredictionRecord {
    pub fn new(user_id: impl Into<String>, raw: impl Into<String>, gold: GenreLabelSet) -> Self {
        let raw = raw.into();
        let extraction = extract_genres_detailed(&raw);
        PredictionRecord {
            user_id: user_id.into(),
            raw,
            predicted: extraction.labels,
            parse_failed: !extraction.found_markers,
            gold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub genre: Genre,
    pub polarity: Polarity,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Mean prompt-token usage over the evaluated examples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TokenStats {
    pub mean_prompt_embedding_tokens: f64,
    pub mean_task_tokens: f64,
    pub mean_text_tokens: f64,
    pub mean_total: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total_support: usize,
    pub records: usize,
    pub parse_failure_rate: f64,
    pub token_stats: Option<TokenStats>,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-class precision/recall/F1 with gold-support weighting; 0/0 cases
/// score 0 rather than being dropped.
pub fn weighted_prf(records: &[PredictionRecord]) -> MetricReport {
    let mut per_class = Vec::with_capacity(2 * ALL_GENRES.len());
    for polarity in [Polarity::Liked, Polarity::Disliked] {
        for &genre in &ALL_GENRES {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for r in records {
                let in_gold = match polarity {
                    Polarity::Liked => r.gold.contains_liked(genre),
                    Polarity::Disliked => r.gold.contains_disliked(genre),
                };
                let in_pred = match polarity {
                    Polarity::Liked => r.predicted.contains_liked(genre),
                    Polarity::Disliked => r.predicted.contains_disliked(genre),
                };
                match (in_gold, in_pred) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = safe_div(tp as f64, (tp + fp) as f64);
            let recall = safe_div(tp as f64, (tp + fn_) as f64);
            let f1 = safe_div(2.0 * precision * recall, precision + recall);
            per_class.push(ClassMetrics {
                genre,
                polarity,
                tp,
                fp,
                fn_,
                precision,
                recall,
                f1,
                support: tp + fn_,
            });
        }
    }
    let total_support: usize = per_class.iter().map(|c| c.support).sum();
    let weight = |f: fn(&ClassMetrics) -> f64| -> f64 {
        safe_div(
            per_class
                .iter()
                .map(|c| f(c) * c.support as f64)
                .sum::<f64>(),
            total_support as f64,
        )
    };
    MetricReport {
        weighted_precision: weight(|c| c.precision),
        weighted_recall: weight(|c| c.recall),
        weighted_f1: weight(|c| c.f1),
        total_support,
        records: records.len(),
        parse_failure_rate: safe_div(
            records.iter().filter(|r| r.parse_failed).count() as f64,
            records.len() as f64,
        ),
        per_class,
        token_stats: None,
    }
}

impl MetricReport {
    /// Tab-delimited table: one row per class plus a weighted aggregate row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("class\tpolarity\tprecision\trecall\tf1\tsupport\n");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                c.genre.name(),
                c.polarity.label(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            );
        }
        let _ = writeln!(
            out,
            "weighted\t-\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.weighted_precision, self.weighted_recall, self.weighted_f1, self.total_support
        );
        let _ = writeln!(out, "parse_failure_rate\t-\t{:.6}\t-\t-\t{}", self.parse_failure_rate, self.records);
        out
    }
}

/// Prompt-budget accounting for one assembled example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenCounts {
    pub prompt_embedding_tokens: usize,
    pub task_tokens: usize,
    pub text_tokens: usize,
}

impl TokenCounts {
    pub fn total(&self) -> usize {
        self.prompt_embedding_tokens + self.task_tokens + self.text_tokens
    }
}

/// `adapter` is `None` on the text-baseline path (no soft prompt). For MLP
/// and Transformer adapters the prompt budget equals the sampled history
/// length; for the Perceiver it is the fixed latent count.
pub fn token_accounting(
    adapter: Option<(AdapterKind, usize)>,
    history_len: usize,
    task_tokens: usize,
    text_tokens: usize,
) -> TokenCounts {
    let prompt_embedding_tokens = match adapter {
        Some((AdapterKind::Perceiver, latent_count)) => latent_count,
        Some((_, _)) => history_len,
        None => 0,
    };
    TokenCounts {
        prompt_embedding_tokens,
        task_tokens,
        text_tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::format_target;

    fn set(liked: &[Genre], disliked: &[Genre]) -> GenreLabelSet {
        GenreLabelSet::new(liked.iter().copied(), disliked.iter().copied()).unwrap()
    }

    #[test]
    fn extracts_the_template_exactly() {
        let e = extract_genres("Liked Genres: Action, Comedy. Not Liked Genres: Romance");
        assert_eq!(e, set(&[Genre::Action, Genre::Comedy], &[Genre::Romance]));
    }

    #[test]
    fn extraction_is_case_insensitive_dedupes_and_handles_none() {
        let e = extract_genres("liked genres: drama, drama. not liked genres: None");
        assert_eq!(e, set(&[Genre::Drama], &[]));
    }

    #[test]
    fn unknown_words_and_partial_names_do_not_match() {
        let e = extract_genres("Blah Liked Genres: Sci-Fi, Fantasyland. Not Liked Genres: War");
        assert_eq!(e, set(&[Genre::SciFi], &[Genre::War]));
    }

    #[test]
    fn missing_markers_scores_as_parse_failure() {
        let d = extract_genres_detailed("complete gibberish with Drama in it");
        assert!(!d.found_markers);
        assert!(d.labels.is_empty());
        let record = PredictionRecord::new("u", "gibberish", set(&[Genre::Drama], &[]));
        assert!(record.parse_failed);
    }

    #[test]
    fn genre_in_both_spans_keeps_first_occurrence() {
        let e = extract_genres("Liked Genres: Drama. Not Liked Genres: Drama, War");
        assert_eq!(e, set(&[Genre::Drama], &[Genre::War]));
        let e2 = extract_genres("Not Liked Genres: Drama. Liked Genres: Drama, War");
        assert_eq!(e2, set(&[Genre::War], &[Genre::Drama]));
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = set(&[Genre::Drama, Genre::Action], &[Genre::War]);
        let records = vec![PredictionRecord::new(
            "u1",
            format_target(&gold).unwrap(),
            gold,
        )];
        let report = weighted_prf(&records);
        assert_eq!(report.weighted_precision, 1.0);
        assert_eq!(report.weighted_recall, 1.0);
        assert_eq!(report.weighted_f1, 1.0);
        assert_eq!(report.parse_failure_rate, 0.0);
    }

    #[test]
    fn all_empty_predictions_score_zero() {
        let records = vec![
            PredictionRecord::new("u1", "", set(&[Genre::Drama], &[])),
            PredictionRecord::new("u2", "", set(&[Genre::War], &[Genre::Comedy])),
        ];
        let report = weighted_prf(&records);
        assert_eq!(report.weighted_recall, 0.0);
        assert_eq!(report.weighted_precision, 0.0);
        assert_eq!(report.parse_failure_rate, 1.0);
    }

    #[test]
    fn hand_worked_two_user_example() {
        let records = vec![
            PredictionRecord::new(
                "u1",
                "Liked Genres: Drama. Not Liked Genres: None",
                set(&[Genre::Drama], &[]),
            ),
            PredictionRecord::new(
                "u2",
                "Liked Genres: Drama. Not Liked Genres: Comedy",
                set(&[Genre::Drama], &[Genre::War]),
            ),
        ];
        let report = weighted_prf(&records);
        let f1 = report.weighted_f1;
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12, "weighted f1 {f1}");
        assert_eq!(report.total_support, 3);
    }

    #[test]
    fn token_accounting_matches_path_arithmetic() {
        let mlp = token_accounting(Some((AdapterKind::Mlp, 20)), 50, 20, 10);
        assert_eq!(mlp.total(), 80);
        let perceiver = token_accounting(Some((AdapterKind::Perceiver, 20)), 50, 20, 10);
        assert_eq!(perceiver.total(), 50);
        let text = token_accounting(None, 50, 20, 900);
        assert_eq!(text.total(), 920);

        let at = |n: usize| token_accounting(Some((AdapterKind::Mlp, 20)), n, 20, 10).total();
        assert_eq!(at(10) - at(5), 5);
    }

    #[test]
    fn report_table_has_38_class_rows() {
        let records = vec![PredictionRecord::new(
            "u",
            "Liked Genres: Drama. Not Liked Genres: None",
            set(&[Genre::Drama], &[]),
        )];
        let table = weighted_prf(&records).to_table();
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows.len(), 1 + 38 + 2);
    }
}
