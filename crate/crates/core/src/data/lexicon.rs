//! Word pools for the synthetic script generator.

use std::collections::BTreeSet;

pub(crate) const CHARACTER_ADJECTIVES: &[&str] =
    &["tall", "young", "old", "quiet", "weary", "cheerful", "stern", "gentle", "curious", "nervous", "brave", "tired"];
pub(crate) const CHARACTER_NOUNS: &[&str] =
    &["sailor", "girl", "man", "woman", "painter", "soldier", "child", "farmer", "doctor", "pilot", "dancer", "fox"];
pub(crate) const CLOTHING_ADJECTIVES: &[&str] = &["plain", "striped", "worn", "long", "heavy", "light"];
pub(crate) const CLOTHING: &[&str] = &["coat", "scarf", "hat", "jacket", "dress", "uniform", "cloak", "sweater"];
pub(crate) const ENVIRONMENT_ADJECTIVES: &[&str] =
    &["foggy", "crowded", "narrow", "sunny", "dark", "empty", "frozen", "busy", "silent", "ancient"];
pub(crate) const PLACES: &[&str] = &[
    "harbor", "market", "forest", "street", "kitchen", "station", "library", "garden", "rooftop", "beach", "bridge",
    "hall",
];
pub(crate) const TIMES: &[&str] = &["dawn", "dusk", "night", "noon", "midnight", "sunrise"];
pub(crate) const SHOT_TYPES: &[&str] = &["wide", "close", "medium", "low", "high", "tracking"];
pub(crate) const POSES: &[&str] = &["waits", "stands", "sits", "kneels", "leans", "watches"];
pub(crate) const ACTIONS: &[&str] =
    &["walks", "runs", "turns", "laughs", "whispers", "points", "looks", "stops", "smiles", "nods"];
pub(crate) const MANNERS: &[&str] = &["slowly", "quickly", "away", "back", "forward", "again"];
pub(crate) const DIALOGUE_LINES: &[&str] = &[
    "Now close your eyes. Go on.",
    "Where are you going?",
    "I know this place.",
    "Wait for me!",
    "It is too late.",
    "Come with me.",
    "Do not look back.",
    "We made it.",
];
pub(crate) const SOUNDS: &[&str] = &[
    "waves crash",
    "rain falls",
    "wind howls",
    "bells ring",
    "a door creaks",
    "birds sing",
    "thunder rolls",
    "footsteps echo",
];
pub(crate) const ABSTRACTS: &[&str] = &["memory", "hope", "loss", "return", "courage", "silence", "journey"];
pub(crate) const MOODS: &[&str] = &["calm", "tense", "warm", "bright", "gloomy", "hopeful"];

/// Literal words used by the sentence templates.
pub(crate) const TEMPLATE_WORDS: &[&str] = &[
    "a", "the", "of", "in", "at", "and", "says", "shot", "while", "photo", "make", "video", "keep", "it", "Continue",
    "story", "with", "next",
];

/// Word pools, optionally truncated to a vocabulary budget.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub(crate) character_adjectives: Vec<&'static str>,
    pub(crate) character_nouns: Vec<&'static str>,
    pub(crate) clothing_adjectives: Vec<&'static str>,
    pub(crate) clothing: Vec<&'static str>,
    pub(crate) environment_adjectives: Vec<&'static str>,
    pub(crate) places: Vec<&'static str>,
    pub(crate) times: Vec<&'static str>,
    pub(crate) shot_types: Vec<&'static str>,
    pub(crate) poses: Vec<&'static str>,
    pub(crate) actions: Vec<&'static str>,
    pub(crate) manners: Vec<&'static str>,
    pub(crate) dialogue_lines: Vec<&'static str>,
    pub(crate) sounds: Vec<&'static str>,
    pub(crate) abstracts: Vec<&'static str>,
    pub(crate) moods: Vec<&'static str>,
}

const POOLS: [&[&str]; 15] = [
    CHARACTER_ADJECTIVES,
    CHARACTER_NOUNS,
    CLOTHING_ADJECTIVES,
    CLOTHING,
    ENVIRONMENT_ADJECTIVES,
    PLACES,
    TIMES,
    SHOT_TYPES,
    POSES,
    ACTIONS,
    MANNERS,
    DIALOGUE_LINES,
    SOUNDS,
    ABSTRACTS,
    MOODS,
];

impl Lexicon {
    pub fn full() -> Self {
        Self::with_budget(usize::MAX)
    }

    /// Keeps roughly `budget` pool entries in total, shrinking every pool
    /// proportionally but never below three entries.
    pub fn with_budget(budget: usize) -> Self {
        let total: usize = POOLS.iter().map(|p| p.len()).sum();
        let take = |pool: &[&'static str]| -> Vec<&'static str> {
            let keep = if budget >= total {
                pool.len()
            } else {
                ((pool.len() * budget).div_ceil(total)).clamp(3.min(pool.len()), pool.len())
            };
            pool[..keep].to_vec()
        };
        Self {
            character_adjectives: take(CHARACTER_ADJECTIVES),
            character_nouns: take(CHARACTER_NOUNS),
            clothing_adjectives: take(CLOTHING_ADJECTIVES),
            clothing: take(CLOTHING),
            environment_adjectives: take(ENVIRONMENT_ADJECTIVES),
            places: take(PLACES),
            times: take(TIMES),
            shot_types: take(SHOT_TYPES),
            poses: take(POSES),
            actions: take(ACTIONS),
            manners: take(MANNERS),
            dialogue_lines: take(DIALOGUE_LINES),
            sounds: take(SOUNDS),
            abstracts: take(ABSTRACTS),
            moods: take(MOODS),
        }
    }
}

/// Every alphabetic word the generator can emit, sorted and deduplicated.
pub fn vocabulary_words() -> Vec<String> {
    let mut words = BTreeSet::new();
    for entry in POOLS.iter().flat_map(|p| p.iter()).chain(TEMPLATE_WORDS.iter()) {
        for w in entry.split(|c: char| !c.is_ascii_alphabetic()).filter(|w| !w.is_empty()) {
            words.insert(w.to_string());
        }
    }
    words.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_shrinks_pools() {
        let full = Lexicon::full();
        let small = Lexicon::with_budget(60);
        assert_eq!(full.places.len(), PLACES.len());
        assert!(small.places.len() < PLACES.len());
        assert!(small.times.len() >= 3);
    }

    #[test]
    fn vocabulary_is_sorted_and_unique() {
        let v = vocabulary_words();
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(v.iter().any(|w| w == "Now"));
    }
}
