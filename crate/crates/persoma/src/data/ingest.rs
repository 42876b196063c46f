//! MovieLens-format ingestion with popularity pruning.
//!
//! Accepted files:
//! - ratings: `userId,movieId,rating,timestamp` (header optional)
//! - movies: `movieId,title,genres` with pipe-separated genres and standard
//!   CSV quoting for titles containing commas (header optional)
//! - descriptions: `movieId<TAB>text`, optional file
//!
//! Movies with fewer than 20 ratings are dropped together with their rating
//! rows; per-user histories are then built chronologically (timestamp, then
//! movie id).

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{Dataset, MovieMeta};
use crate::encoder::InteractionItem;
use crate::error::{Error, Result};
use crate::genres::Genre;

pub const MIN_RATINGS_PER_MOVIE: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub input_ratings: usize,
    pub retained_ratings: usize,
    pub pruned_movies: usize,
    pub pruned_ratings: usize,
    pub retained_movies: usize,
    pub users: usize,
    pub missing_descriptions: usize,
}

struct RatingRow {
    user_id: String,
    movie_id: String,
    rating: f64,
    timestamp: i64,
}

pub fn ingest_movielens(
    ratings_path: &Path,
    movies_path: &Path,
    descriptions_path: Option<&Path>,
) -> Result<(Dataset, IngestReport)> {
    let mut movies = read_movies(movies_path)?;
    if let Some(path) = descriptions_path {
        attach_descriptions(path, &mut movies)?;
    }
    let ratings = read_ratings(ratings_path, &movies)?;

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &ratings {
        *counts.entry(r.movie_id.as_str()).or_insert(0) += 1;
    }
    let pruned: Vec<String> = counts
        .iter()
        .filter(|(_, &c)| c < MIN_RATINGS_PER_MOVIE)
        .map(|(id, _)| id.to_string())
        .collect();
    let pruned_ratings: usize = pruned.iter().map(|id| counts[id.as_str()]).sum();

    let mut report = IngestReport {
        input_ratings: ratings.len(),
        pruned_movies: pruned.len(),
        pruned_ratings,
        retained_ratings: ratings.len() - pruned_ratings,
        missing_descriptions: movies.values().filter(|m| m.description.is_empty()).count(),
        ..IngestReport::default()
    };

    let mut retained_movies: BTreeMap<String, MovieMeta> = movies
        .into_iter()
        .filter(|(id, _)| counts.get(id.as_str()).copied().unwrap_or(0) >= MIN_RATINGS_PER_MOVIE)
        .collect();
    for (id, meta) in &mut retained_movies {
        meta.popularity = counts[id.as_str()] as u64;
    }
    report.retained_movies = retained_movies.len();
    report.missing_descriptions = retained_movies
        .values()
        .filter(|m| m.description.is_empty())
        .count();

    let mut per_user: BTreeMap<String, Vec<RatingRow>> = BTreeMap::new();
    for r in ratings {
        if retained_movies.contains_key(&r.movie_id) {
            per_user.entry(r.user_id.clone()).or_default().push(r);
        }
    }

    let mut users: BTreeMap<String, Vec<InteractionItem>> = BTreeMap::new();
    for (user_id, mut rows) in per_user {
        rows.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.movie_id.cmp(&b.movie_id))
        });
        let items: Vec<InteractionItem> = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let meta = &retained_movies[&r.movie_id];
                InteractionItem {
                    movie_id: r.movie_id,
                    title: meta.title.clone(),
                    description: meta.description.clone(),
                    rating: r.rating,
                    order_index: i + 1,
                    genres: meta.genres.clone(),
                    popularity: meta.popularity,
                }
            })
            .collect();
        if !items.is_empty() {
            users.insert(user_id, items);
        }
    }
    report.users = users.len();

    let dataset = Dataset::new(users, retained_movies)?;
    Ok((dataset, report))
}

fn read_movies(path: &Path) -> Result<BTreeMap<String, MovieMeta>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(std::fs::File::open(path)?);
    let mut movies = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            file: file.clone(),
            line,
            msg: e.to_string(),
        })?;
        let movie_id = record.get(0).unwrap_or_default().trim();
        if idx == 0 && movie_id.eq_ignore_ascii_case("movieId") {
            continue;
        }
        if record.len() < 3 {
            return Err(Error::Parse {
                file,
                line,
                msg: format!("expected movieId,title,genres; got {} fields", record.len()),
            });
        }
        let title = record.get(1).unwrap_or_default().to_string();
        let genres = record
            .get(2)
            .unwrap_or_default()
            .split('|')
            .filter(|g| !g.is_empty())
            .map(|g| Genre::from_name(g).ok_or_else(|| Error::UnknownGenre(g.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if genres.is_empty() {
            return Err(Error::Parse {
                file,
                line,
                msg: format!("movie '{movie_id}' lists no genres"),
            });
        }
        movies.insert(
            movie_id.to_string(),
            MovieMeta {
                movie_id: movie_id.to_string(),
                title,
                description: String::new(),
                genres,
                popularity: 0,
            },
        );
    }
    Ok(movies)
}

fn attach_descriptions(path: &Path, movies: &mut BTreeMap<String, MovieMeta>) -> Result<()> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, desc) = line.split_once('\t').ok_or_else(|| Error::Parse {
            file: file.clone(),
            line: idx + 1,
            msg: "expected movieId<TAB>text".into(),
        })?;
        if let Some(meta) = movies.get_mut(id.trim()) {
            meta.description = desc.to_string();
        }
    }
    Ok(())
}

fn read_ratings(path: &Path, movies: &BTreeMap<String, MovieMeta>) -> Result<Vec<RatingRow>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            file: file.clone(),
            line,
            msg: e.to_string(),
        })?;
        let user_id = record.get(0).unwrap_or_default().trim();
        if idx == 0 && user_id.eq_ignore_ascii_case("userId") {
            continue;
        }
        if record.len() < 4 {
            return Err(Error::Parse {
                file,
                line,
                msg: format!(
                    "expected userId,movieId,rating,timestamp; got {} fields",
                    record.len()
                ),
            });
        }
        let movie_id = record.get(1).unwrap_or_default().trim().to_string();
        if !movies.contains_key(&movie_id) {
            return Err(Error::Parse {
                file,
                line,
                msg: format!("rating references unknown movie '{movie_id}'"),
            });
        }
        let rating: f64 = record
            .get(2)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                msg: format!("bad rating '{}'", record.get(2).unwrap_or_default()),
            })?;
        if !(0.5..=5.0).contains(&rating) {
            return Err(Error::Parse {
                file,
                line,
                msg: format!("rating {rating} outside [0.5, 5.0]"),
            });
        }
        let timestamp: i64 = record
            .get(3)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                msg: format!("bad timestamp '{}'", record.get(3).unwrap_or_default()),
            })?;
        rows.push(RatingRow {
            user_id: user_id.to_string(),
            movie_id,
            rating,
            timestamp,
        });
    }
    Ok(rows)
}
