//! History encoder: per-item embeddings and the text-baseline rendering.
//!
//! The stand-in encoder is a seeded feature-hash over character 3-grams,
//! projected per field (title, description) and L2-normalized, plus a small
//! fixed sub-vector for the rating. It is a pure function of the item
//! fields, the input format, and the encoder seed. Real sentence-encoder
//! vectors can be substituted through [`EmbeddingProvider`], which then
//! supplies the whole per-item embedding.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::genres::Genre;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One watched movie in a user's reported sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionItem {
    pub movie_id: String,
    pub title: String,
    pub description: String,
    pub rating: f64,
    pub order_index: usize,
    pub genres: Vec<Genre>,
    pub popularity: u64,
}

impl InteractionItem {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=5.0).contains(&self.rating) {
            return Err(Error::Contract(format!(
                "rating {} outside [0.5, 5.0] for movie '{}'",
                self.rating, self.movie_id
            )));
        }
        if self.genres.is_empty() {
            return Err(Error::Contract(format!(
                "movie '{}' has no genres",
                self.movie_id
            )));
        }
        Ok(())
    }
}

/// Which item fields reach the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemInputFormat {
    Complete,
    TitleScore,
    DescScore,
}

impl ItemInputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complete" => Ok(ItemInputFormat::Complete),
            "title-score" | "title_score" | "titlescore" => Ok(ItemInputFormat::TitleScore),
            "desc-score" | "desc_score" | "descscore" => Ok(ItemInputFormat::DescScore),
            other => Err(Error::Config(format!("unknown item input format '{other}'"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ItemInputFormat::Complete => "complete",
            ItemInputFormat::TitleScore => "title-score",
            ItemInputFormat::DescScore => "desc-score",
        }
    }

    fn uses_title(self) -> bool {
        !matches!(self, ItemInputFormat::DescScore)
    }

    fn uses_description(self) -> bool {
        !matches!(self, ItemInputFormat::TitleScore)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    StandIn,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbedding<T> {
    pub values: Vec<T>,
    pub provenance: Provenance,
}

/// The ordered per-item embedding sequence for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEmbeddings<T>(pub Vec<ItemEmbedding<T>>);

impl<T: Scalar> HistoryEmbeddings<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn width(&self) -> usize {
        self.0.first().map_or(0, |e| e.values.len())
    }

    /// `[n x d_enc]` matrix, rows in history order.
    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        let (n, d) = (self.len(), self.width());
        let mut data = Vec::with_capacity(n * d);
        for e in &self.0 {
            data.extend_from_slice(&e.values);
        }
        Tensor::matrix(n, d, data)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub d_title: usize,
    pub d_desc: usize,
    pub d_rating: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_title: 32,
            d_desc: 32,
            d_rating: 4,
            seed: 0x5eed_e7c0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HistoryEncoder<T> {
    pub config: EncoderConfig,
    external: Option<EmbeddingProvider<T>>,
}

impl<T: Scalar> HistoryEncoder<T> {
    pub fn new(config: EncoderConfig) -> Self {
        HistoryEncoder {
            config,
            external: None,
        }
    }

    /// Routes all item lookups through externally supplied vectors.
    pub fn with_external(config: EncoderConfig, provider: EmbeddingProvider<T>) -> Self {
        HistoryEncoder {
            config,
            external: Some(provider),
        }
    }

    /// Embedding width produced for the given format.
    pub fn width(&self, format: ItemInputFormat) -> usize {
        if let Some(p) = &self.external {
            return p.dim();
        }
        let mut d = self.config.d_rating;
        if format.uses_title() {
            d += self.config.d_title;
        }
        if format.uses_description() {
            d += self.config.d_desc;
        }
        d
    }

    /// Sub-vectors concatenated in title / description / rating order, with
    /// format-excluded fields omitted. With an external provider configured,
    /// the stored vector is returned verbatim instead.
    pub fn encode_item(
        &self,
        item: &InteractionItem,
        format: ItemInputFormat,
    ) -> Result<ItemEmbedding<T>> {
        item.validate()?;
        if let Some(p) = &self.external {
            return Ok(ItemEmbedding {
                values: p.get(&item.movie_id)?.to_vec(),
                provenance: Provenance::External,
            });
        }
        let mut values = Vec::with_capacity(self.width(format));
        if format.uses_title() {
            values.extend(hashed_field::<T>(
                &item.title,
                self.config.d_title,
                self.config.seed,
                b't',
            ));
        }
        if format.uses_description() {
            values.extend(hashed_field::<T>(
                &item.description,
                self.config.d_desc,
                self.config.seed,
                b'd',
            ));
        }
        values.extend(rating_subvector::<T>(item.rating, self.config.d_rating));
        Ok(ItemEmbedding {
            values,
            provenance: Provenance::StandIn,
        })
    }

    /// Length-preserving elementwise map over the history.
    pub fn encode_history(
        &self,
        items: &[InteractionItem],
        format: ItemInputFormat,
    ) -> Result<HistoryEmbeddings<T>> {
        if items.is_empty() {
            return Err(Error::contract("encode_history requires a non-empty history"));
        }
        let rows = items
            .iter()
            .map(|it| self.encode_item(it, format))
            .collect::<Result<Vec<_>>>()?;
        Ok(HistoryEmbeddings(rows))
    }
}

/// Feature-hashed character 3-gram bag, signed and L2-normalized. The text
/// is lowercased and wrapped in boundary markers so short fields still emit
/// grams.
fn hashed_field<T: Scalar>(text: &str, dim: usize, seed: u64, tag: u8) -> Vec<T> {
    let mut acc = vec![0f64; dim];
    let wrapped: Vec<char> = std::iter::once('\u{2}')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    for gram in wrapped.windows(3) {
        let mut h = fnv1a(seed, tag);
        for c in gram {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).as_bytes() {
                h = fnv1a_byte(h, *b);
            }
        }
        let idx = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[idx] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut acc {
            *v /= norm;
        }
    }
    acc.into_iter().map(T::from_f64).collect()
}

/// Fixed sinusoidal/scalar encoding of the rating.
fn rating_subvector<T: Scalar>(rating: f64, dim: usize) -> Vec<T> {
    let rn = (rating - 0.5) / 4.5;
    (0..dim)
        .map(|k| {
            let harmonic = (k / 4 + 1) as f64;
            let v = match k % 4 {
                0 => rn,
                1 => 1.0 - rn,
                2 => (std::f64::consts::PI * rn * harmonic).sin(),
                _ => (std::f64::consts::PI * rn * harmonic).cos(),
            };
            T::from_f64(v)
        })
        .collect()
}

fn fnv1a(seed: u64, tag: u8) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    h = fnv1a_byte(h, tag);
    h
}

fn fnv1a_byte(mut h: u64, b: u8) -> u64 {
    h ^= u64::from(b);
    h.wrapping_mul(0x0000_0100_0000_01b3)
}

/// Renders the text-baseline history: per-item
/// `Title: {t}, Description: {d}, Rating: {r}` with format-excluded fields
/// omitted, items joined by `"; "`.
pub fn format_text_history(items: &[InteractionItem], format: ItemInputFormat) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let mut parts: Vec<String> = Vec::with_capacity(3);
        if format.uses_title() {
            parts.push(format!("Title: {}", item.title));
        }
        if format.uses_description() {
            parts.push(format!("Description: {}", item.description));
        }
        parts.push(format!("Rating: {:.1}", item.rating));
        let _ = write!(out, "{}", parts.join(", "));
    }
    out
}

/// Externally supplied item embeddings, keyed by movie id.
///
/// File format: one record per line, `movie-id<TAB>d<TAB>v1 v2 ... vd` in
/// decimal text; `d` must be uniform across the file.
#[derive(Debug, Clone)]
pub struct EmbeddingProvider<T> {
    dim: usize,
    by_id: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> EmbeddingProvider<T> {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<T>)>) -> Result<Self> {
        let by_id: BTreeMap<String, Vec<T>> = entries.into_iter().collect();
        let dim = by_id
            .values()
            .next()
            .map(|v| v.len())
            .ok_or_else(|| Error::contract("embedding provider requires at least one entry"))?;
        for (id, v) in &by_id {
            if v.len() != dim {
                return Err(Error::Contract(format!(
                    "embedding for '{id}' has width {}, expected {dim}",
                    v.len()
                )));
            }
        }
        Ok(EmbeddingProvider { dim, by_id })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file = path.display().to_string();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_num = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let id = fields.next().unwrap_or_default();
            let dim_str = fields.next().ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: line_num,
                msg: "missing dimension field".into(),
            })?;
            let values_str = fields.next().ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: line_num,
                msg: "missing values field".into(),
            })?;
            let dim: usize = dim_str.parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line: line_num,
                msg: format!("bad dimension '{dim_str}'"),
            })?;
            let values: Vec<T> = values_str
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>().map(T::from_f64).map_err(|_| Error::Parse {
                        file: file.clone(),
                        line: line_num,
                        msg: format!("bad value '{s}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Parse {
                    file,
                    line: line_num,
                    msg: format!("declared {dim} values, found {}", values.len()),
                });
            }
            entries.push((id.to_string(), values));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, values) in &self.by_id {
            let _ = write!(out, "{id}\t{}\t", self.dim);
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", v.as_f64());
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, movie_id: &str) -> Result<&[T]> {
        self.by_id
            .get(movie_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingEmbedding(movie_id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn item(id: &str, title: &str, desc: &str, rating: f64) -> InteractionItem {
        InteractionItem {
            movie_id: id.into(),
            title: title.into(),
            description: desc.into(),
            rating,
            order_index: 0,
            genres: vec![Genre::Drama],
            popularity: 1,
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = HistoryEncoder::<f64>::new(EncoderConfig::default());
        let it = item("m1", "Heat", "A heist thriller", 4.5);
        let a = enc.encode_item(&it, ItemInputFormat::Complete).unwrap();
        let b = enc.encode_item(&it, ItemInputFormat::Complete).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rating_change_only_touches_rating_subvector() {
        let enc = HistoryEncoder::<f64>::new(EncoderConfig::default());
        let a = enc
            .encode_item(&item("m1", "Heat", "x", 4.5), ItemInputFormat::TitleScore)
            .unwrap();
        let b = enc
            .encode_item(&item("m1", "Heat", "x", 1.0), ItemInputFormat::TitleScore)
            .unwrap();
        let d_title = enc.config.d_title;
        assert_eq!(&a.values[..d_title], &b.values[..d_title]);
        assert_ne!(&a.values[d_title..], &b.values[d_title..]);
    }

    #[test]
    fn format_widths_differ_by_d_desc() {
        let enc = HistoryEncoder::<f64>::new(EncoderConfig::default());
        let it = item("m1", "Heat", "A heist thriller", 4.5);
        let full = enc.encode_item(&it, ItemInputFormat::Complete).unwrap();
        let slim = enc.encode_item(&it, ItemInputFormat::TitleScore).unwrap();
        assert_eq!(full.values.len() - slim.values.len(), enc.config.d_desc);
        assert_eq!(full.values.len(), 32 + 32 + 4);
    }

    #[test]
    fn encode_history_preserves_order_and_length() {
        let enc = HistoryEncoder::<f64>::new(EncoderConfig::default());
        let items: Vec<_> = (0..5)
            .map(|i| item(&format!("m{i}"), &format!("title {i}"), "desc", 3.0))
            .collect();
        let h = enc.encode_history(&items, ItemInputFormat::Complete).unwrap();
        assert_eq!(h.len(), 5);
        let mut rev = items.clone();
        rev.reverse();
        let hr = enc.encode_history(&rev, ItemInputFormat::Complete).unwrap();
        assert_eq!(h.0[0], hr.0[4]);
        assert!(enc.encode_history(&[], ItemInputFormat::Complete).is_err());
    }

    #[test]
    fn text_history_matches_template() {
        let items = vec![item("m1", "Heat", "A heist thriller", 4.5)];
        assert_eq!(
            format_text_history(&items, ItemInputFormat::Complete),
            "Title: Heat, Description: A heist thriller, Rating: 4.5"
        );
        assert_eq!(
            format_text_history(&items, ItemInputFormat::TitleScore),
            "Title: Heat, Rating: 4.5"
        );
        let no_title = format_text_history(&items, ItemInputFormat::DescScore);
        assert!(!no_title.contains("Title:"));

        let two = vec![
            item("m1", "Heat", "A heist thriller", 4.5),
            item("m2", "Up", "A balloon journey", 5.0),
        ];
        let text = format_text_history(&two, ItemInputFormat::Complete);
        assert_eq!(text.matches("; ").count(), 1);
        assert!(text.find("Heat").unwrap() < text.find("Up").unwrap());
    }

    #[test]
    fn external_provider_round_trips_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        let provider = EmbeddingProvider::from_entries(vec![
            ("m1".to_string(), vec![0.1f64, -2.5, 1.0 / 3.0]),
            ("m2".to_string(), vec![1e-17, 4.0, 5.0]),
        ])
        .unwrap();
        provider.save(&path).unwrap();
        let reloaded = EmbeddingProvider::<f64>::load(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get("m1").unwrap(), provider.get("m1").unwrap());
        assert_eq!(reloaded.get("m2").unwrap(), provider.get("m2").unwrap());
        assert!(matches!(
            reloaded.get("m3").unwrap_err(),
            Error::MissingEmbedding(_)
        ));
    }

    #[test]
    fn malformed_embedding_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        fs::write(&path, "m1\t2\t0.5 1.5\nm2\t2\tnot-a-number 1.0\n").unwrap();
        let err = EmbeddingProvider::<f64>::load(&path).unwrap_err().to_string();
        assert!(err.contains("line") || err.contains(":2"), "{err}");
    }

    #[test]
    fn external_provider_overrides_stand_in() {
        let provider =
            EmbeddingProvider::from_entries(vec![("m1".to_string(), vec![7.0f64, 8.0])]).unwrap();
        let enc = HistoryEncoder::with_external(EncoderConfig::default(), provider);
        let e = enc
            .encode_item(&item("m1", "Heat", "x", 4.5), ItemInputFormat::Complete)
            .unwrap();
        assert_eq!(e.values, vec![7.0, 8.0]);
        assert_eq!(e.provenance, Provenance::External);
        assert_eq!(enc.width(ItemInputFormat::Complete), 2);
    }
}
