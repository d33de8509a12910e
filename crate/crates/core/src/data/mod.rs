//! Script splitting, prompt styles, and the synthetic training corpus.

use std::io;

use thiserror::Error;

use crate::image::ImageError;
use crate::script::ScriptError;

mod corpus;
mod generate;
mod lexicon;
mod render;
mod split;

pub use corpus::{
    load_corpus, make_synthetic_corpus, write_corpus, Corpus, CorpusConfig, ImagePair, InterleavedSample, TextSample,
    MANIFEST_FILE,
};
pub use generate::{generate_script, plant_bad_references, GeneratedScript, ScriptShape, MAX_CHARACTERS_PER_SHOT};
pub use lexicon::{vocabulary_words, Lexicon};
pub use render::{render_keyframe, Appearance};
pub use split::{
    extractive_summary, sample_prompt_style, split_for_continuation, split_for_extension, strip_split,
    CONTINUATION_PROMPT, SUMMARY_MAX_WORDS,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("split index {index} outside [1, {}] for a {shots}-shot script", shots.saturating_sub(1))]
    IndexOutOfRange { index: u32, shots: u32 },
    #[error("continuation needs at least 2 shots, found {found}")]
    TooFewShots { found: u32 },
    #[error("empty input")]
    EmptyInput,
    #[error("script already carries a mode marker")]
    AlreadySplit,
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("{path}: {source}")]
    Image { path: String, source: ImageError },
    #[error(transparent)]
    Io(#[from] io::Error),
}
