//! The closed 19-genre vocabulary and liked/disliked label sets.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Movie genre. Variants are declared in alphabetical order, so derived
/// `Ord` iteration matches the alphabetical rendering used in target
/// strings and tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Genre {
    Action,
    Adventure,
    Animation,
    Children,
    Comedy,
    Crime,
    Documentary,
    Drama,
    Fantasy,
    FilmNoir,
    Horror,
    Imax,
    Musical,
    Mystery,
    Romance,
    SciFi,
    Thriller,
    War,
    Western,
}

pub const GENRE_COUNT: usize = 19;

pub const ALL_GENRES: [Genre; GENRE_COUNT] = [
    Genre::Action,
    Genre::Adventure,
    Genre::Animation,
    Genre::Children,
    Genre::Comedy,
    Genre::Crime,
    Genre::Documentary,
    Genre::Drama,
    Genre::Fantasy,
    Genre::FilmNoir,
    Genre::Horror,
    Genre::Imax,
    Genre::Musical,
    Genre::Mystery,
    Genre::Romance,
    Genre::SciFi,
    Genre::Thriller,
    Genre::War,
    Genre::Western,
];

impl Genre {
    pub fn name(self) -> &'static str {
        match self {
            Genre::Action => "Action",
            Genre::Adventure => "Adventure",
            Genre::Animation => "Animation",
            Genre::Children => "Children",
            Genre::Comedy => "Comedy",
            Genre::Crime => "Crime",
            Genre::Documentary => "Documentary",
            Genre::Drama => "Drama",
            Genre::Fantasy => "Fantasy",
            Genre::FilmNoir => "Film-Noir",
            Genre::Horror => "Horror",
            Genre::Imax => "IMAX",
            Genre::Musical => "Musical",
            Genre::Mystery => "Mystery",
            Genre::Romance => "Romance",
            Genre::SciFi => "Sci-Fi",
            Genre::Thriller => "Thriller",
            Genre::War => "War",
            Genre::Western => "Western",
        }
    }

    /// Case-insensitive lookup.
    pub fn from_name(name: &str) -> Option<Genre> {
        let lower = name.to_ascii_lowercase();
        ALL_GENRES
            .iter()
            .copied()
            .find(|g| g.name().to_ascii_lowercase() == lower)
    }

    /// Stable index into `[0, 19)`, following alphabetical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Genre> {
        ALL_GENRES.get(i).copied()
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reference per-genre frequency weights, used as sampling priors by the
/// synthetic generator. Proportions mirror the genre incidence of a pruned
/// MovieLens corpus; only the relative magnitudes matter.
pub const GENRE_FREQUENCY_WEIGHTS: [(Genre, u32); GENRE_COUNT] = [
    (Genre::Drama, 43_151),
    (Genre::Crime, 32_489),
    (Genre::War, 31_912),
    (Genre::Romance, 27_709),
    (Genre::Thriller, 23_950),
    (Genre::Comedy, 22_341),
    (Genre::Mystery, 21_978),
    (Genre::Adventure, 19_483),
    (Genre::Action, 18_314),
    (Genre::Fantasy, 16_807),
    (Genre::Animation, 16_682),
    (Genre::Children, 16_065),
    (Genre::Imax, 11_169),
    (Genre::Horror, 11_050),
    (Genre::Musical, 9_643),
    (Genre::Western, 5_446),
    (Genre::Documentary, 3_531),
    (Genre::SciFi, 1_886),
    (Genre::FilmNoir, 697),
];

/// Genre-salient word pool used for synthetic titles and descriptions. Every
/// word is unique to its genre, so generated text carries genre identity,
/// and all words belong to the decoder's closed vocabulary.
pub fn genre_words(g: Genre) -> [&'static str; 3] {
    match g {
        Genre::Action => ["explosive", "chase", "combat"],
        Genre::Adventure => ["quest", "expedition", "wilderness"],
        Genre::Animation => ["animated", "cartoon", "whimsical"],
        Genre::Children => ["playful", "family", "youngsters"],
        Genre::Comedy => ["hilarious", "laughs", "comedic"],
        Genre::Crime => ["heist", "detective", "underworld"],
        Genre::Documentary => ["archival", "interviews", "factual"],
        Genre::Drama => ["heartfelt", "turmoil", "intimate"],
        Genre::Fantasy => ["enchanted", "dragons", "mythical"],
        Genre::FilmNoir => ["shadowy", "femme", "cynical"],
        Genre::Horror => ["haunted", "dread", "macabre"],
        Genre::Imax => ["immersive", "spectacle", "panoramic"],
        Genre::Musical => ["songs", "dancing", "melodies"],
        Genre::Mystery => ["clues", "enigma", "whodunit"],
        Genre::Romance => ["tender", "courtship", "lovers"],
        Genre::SciFi => ["starship", "android", "futuristic"],
        Genre::Thriller => ["suspense", "conspiracy", "pursuit"],
        Genre::War => ["trenches", "battlefield", "soldiers"],
        Genre::Western => ["frontier", "outlaw", "saloon"],
    }
}

/// Connective words shared across synthetic descriptions.
pub const FILLER_WORDS: [&str; 8] = ["a", "the", "of", "and", "story", "about", "with", "their"];

/// Disjoint liked/disliked genre sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenreLabelSet {
    liked: BTreeSet<Genre>,
    disliked: BTreeSet<Genre>,
}

impl GenreLabelSet {
    pub fn new(
        liked: impl IntoIterator<Item = Genre>,
        disliked: impl IntoIterator<Item = Genre>,
    ) -> Result<Self> {
        let liked: BTreeSet<Genre> = liked.into_iter().collect();
        let disliked: BTreeSet<Genre> = disliked.into_iter().collect();
        if let Some(g) = liked.intersection(&disliked).next() {
            return Err(Error::Contract(format!(
                "genre '{g}' cannot be both liked and disliked"
            )));
        }
        Ok(GenreLabelSet { liked, disliked })
    }

    pub fn empty() -> Self {
        GenreLabelSet::default()
    }

    pub fn liked(&self) -> &BTreeSet<Genre> {
        &self.liked
    }

    pub fn disliked(&self) -> &BTreeSet<Genre> {
        &self.disliked
    }

    pub fn is_empty(&self) -> bool {
        self.liked.is_empty() && self.disliked.is_empty()
    }

    pub fn contains_liked(&self, g: Genre) -> bool {
        self.liked.contains(&g)
    }

    pub fn contains_disliked(&self, g: Genre) -> bool {
        self.disliked.contains(&g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_genres_are_alphabetical_by_name() {
        for pair in ALL_GENRES.windows(2) {
            assert!(
                pair[0].name().to_ascii_lowercase() < pair[1].name().to_ascii_lowercase(),
                "{} !< {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn name_round_trip_is_case_insensitive() {
        for g in ALL_GENRES {
            assert_eq!(Genre::from_name(g.name()), Some(g));
            assert_eq!(Genre::from_name(&g.name().to_uppercase()), Some(g));
        }
        assert_eq!(Genre::from_name("Fantasyland"), None);
    }

    #[test]
    fn label_set_rejects_overlap() {
        assert!(GenreLabelSet::new([Genre::Drama], [Genre::Drama]).is_err());
        let ok = GenreLabelSet::new([Genre::Drama], [Genre::War]).unwrap();
        assert!(ok.contains_liked(Genre::Drama));
        assert!(ok.contains_disliked(Genre::War));
    }

    #[test]
    fn frequency_weights_cover_every_genre_once() {
        let mut seen = BTreeSet::new();
        for (g, w) in GENRE_FREQUENCY_WEIGHTS {
            assert!(w > 0);
            assert!(seen.insert(g));
        }
        assert_eq!(seen.len(), GENRE_COUNT);
    }
}
