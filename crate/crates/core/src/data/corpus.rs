//! Deterministic three-subset synthetic corpus and its on-disk form.
//!
//! Layout on disk:
//!
//! ```text
//! <root>/manifest.txt
//! <root>/interleaved/i0000.script  i0000_shot1.ppm ...
//! <root>/text/t0000.script
//! <root>/pairs/p0000.script        p0000_shot1.ppm
//! ```
//!
//! Each manifest line is tab-separated: subset, sample id, appearance seed
//! (`-` for text samples), the script path, then keyframe paths in shot
//! order. Paths are relative to the corpus root.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generate::{generate_script, ScriptShape};
use super::lexicon::Lexicon;
use super::render::render_keyframe;
use super::split::{extractive_summary, split_for_continuation, split_for_extension, CONTINUATION_PROMPT};
use super::DataError;
use crate::image::Image;
use crate::layout::{SpecialLimits, Vocabulary};
use crate::script::{parse_script, serialize_script, Script, ScriptError};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusConfig {
    pub interleaved: usize,
    pub text_scripts: usize,
    pub image_pairs: usize,
    /// Inclusive shot-count range.
    pub shots: (u32, u32),
    /// Inclusive character-count range.
    pub characters: (u32, u32),
    /// Inclusive environment-count range.
    pub environments: (u32, u32),
    /// Budget on lexicon pool entries; see [`Lexicon::with_budget`].
    pub vocabulary: usize,
    /// Keyframe side length in pixels, a multiple of 16.
    pub image_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            interleaved: 16,
            text_scripts: 16,
            image_pairs: 16,
            shots: (1, 4),
            characters: (1, 3),
            environments: (1, 2),
            vocabulary: usize::MAX,
            image_size: 64,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        for (name, (lo, hi)) in
            [("shots", self.shots), ("characters", self.characters), ("environments", self.environments)]
        {
            if lo > hi {
                return bad(&format!("{name} range {lo}..={hi} is empty"));
            }
        }
        if self.shots.0 < 1 {
            return bad("scripts need at least one shot");
        }
        if self.environments.0 < 1 {
            return bad("scripts need at least one environment");
        }
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return bad("image_size must be a positive multiple of 16");
        }
        Ok(())
    }
}

/// A script with one keyframe per shot.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSample {
    pub id: String,
    pub script: Script,
    pub keyframes: Vec<Image>,
    pub appearance_seed: u64,
}

/// A text-only script, possibly carrying an Extension or Continuation marker.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSample {
    pub id: String,
    pub script: Script,
}

/// A single-shot script and its keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub script: Script,
    pub keyframe: Image,
    pub appearance_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub interleaved: Vec<InterleavedSample>,
    pub text: Vec<TextSample>,
    pub pairs: Vec<ImagePair>,
}

impl Corpus {
    pub fn scripts(&self) -> impl Iterator<Item = &Script> + '_ {
        self.interleaved
            .iter()
            .map(|s| &s.script)
            .chain(self.text.iter().map(|s| &s.script))
            .chain(self.pairs.iter().map(|s| &s.script))
    }

    /// Vocabulary fitted to the modeled text of every script, with special
    /// tokens up to the largest entity and shot indices present.
    pub fn vocabulary(&self) -> Result<Vocabulary, DataError> {
        let mut limits = SpecialLimits { characters: 1, environments: 1, shots: 1 };
        let mut texts = Vec::new();
        for s in self.scripts() {
            let mut s = s.clone();
            for shot in &mut s.shots {
                shot.keyframe_ref = None;
                limits.shots = limits.shots.max(shot.index);
            }
            if let Some(m) = &s.mode_marker {
                limits.shots = limits.shots.max(m.before_shot);
            }
            for c in &s.characters {
                limits.characters = limits.characters.max(c.index);
            }
            for e in &s.environments {
                limits.environments = limits.environments.max(e.index);
            }
            texts.push(serialize_script(&s)?);
        }
        Ok(Vocabulary::fitted(texts.iter().map(String::as_str), limits))
    }
}

const STREAM_INTERLEAVED: u64 = 1;
const STREAM_TEXT: u64 = 2;
const STREAM_PAIRS: u64 = 3;

/// Independent generator for sample `index` of a subset.
fn sample_rng(seed: u64, subset: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((subset << 48) | index as u64);
    rng
}

fn draw_shape(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, shots: Option<u32>) -> ScriptShape {
    ScriptShape {
        shots: shots.unwrap_or_else(|| rng.gen_range(cfg.shots.0..=cfg.shots.1)),
        characters: rng.gen_range(cfg.characters.0..=cfg.characters.1),
        environments: rng.gen_range(cfg.environments.0..=cfg.environments.1),
    }
}

fn keyframe_name(id: &str, shot: u32) -> String {
    format!("{id}_shot{shot}.ppm")
}

fn with_keyframes(rng: &mut ChaCha8Rng, id: &str, mut script: Script, size: usize) -> (Script, Vec<Image>, u64) {
    let appearance_seed: u64 = rng.gen();
    let mut frames = Vec::with_capacity(script.shots.len());
    for shot in &mut script.shots {
        frames.push(render_keyframe(&shot.frame_entities(), shot.index, appearance_seed, size));
        shot.keyframe_ref = Some(keyframe_name(id, shot.index));
    }
    (script, frames, appearance_seed)
}

fn split_text_script(rng: &mut ChaCha8Rng, script: Script) -> Result<Script, DataError> {
    let n = script.shots.len() as u32;
    if n < 2 {
        return Ok(script);
    }
    if rng.gen_bool(0.5) {
        let k = rng.gen_range(1..n);
        let prompt = extractive_summary(&script.shots[k as usize..])?;
        split_for_extension(&script, k, &prompt)
    } else {
        split_for_continuation(&script, CONTINUATION_PROMPT)
    }
}

pub fn make_synthetic_corpus(cfg: &CorpusConfig) -> Result<Corpus, DataError> {
    cfg.validate()?;
    let lex = Lexicon::with_budget(cfg.vocabulary);
    let mut corpus = Corpus::default();
    for i in 0..cfg.interleaved {
        let mut rng = sample_rng(cfg.seed, STREAM_INTERLEAVED, i);
        let shape = draw_shape(&mut rng, cfg, None);
        let id = format!("i{i:04}");
        let script = generate_script(&mut rng, &lex, shape).script;
        let (script, keyframes, appearance_seed) = with_keyframes(&mut rng, &id, script, cfg.image_size);
        corpus.interleaved.push(InterleavedSample { id, script, keyframes, appearance_seed });
    }
    for i in 0..cfg.text_scripts {
        let mut rng = sample_rng(cfg.seed, STREAM_TEXT, i);
        let shape = draw_shape(&mut rng, cfg, None);
        let script = generate_script(&mut rng, &lex, shape).script;
        let script = split_text_script(&mut rng, script)?;
        corpus.text.push(TextSample { id: format!("t{i:04}"), script });
    }
    for i in 0..cfg.image_pairs {
        let mut rng = sample_rng(cfg.seed, STREAM_PAIRS, i);
        let shape = draw_shape(&mut rng, cfg, Some(1));
        let id = format!("p{i:04}");
        let script = generate_script(&mut rng, &lex, shape).script;
        let (script, mut frames, appearance_seed) = with_keyframes(&mut rng, &id, script, cfg.image_size);
        let keyframe = frames.pop().expect("one shot");
        corpus.pairs.push(ImagePair { id, script, keyframe, appearance_seed });
    }
    Ok(corpus)
}

fn image_err(path: &str) -> impl FnOnce(crate::image::ImageError) -> DataError + '_ {
    move |source| DataError::Image { path: path.to_string(), source }
}

/// Writes the corpus under `root`, creating directories as needed.
pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<(), DataError> {
    let mut manifest = String::new();
    let put_script = |rel: &str, s: &Script| -> Result<(), DataError> {
        fs::write(root.join(rel), serialize_script(s)?)?;
        Ok(())
    };
    let put_image = |rel: &str, img: &Image| -> Result<(), DataError> {
        fs::write(root.join(rel), img.to_ppm_bytes())?;
        Ok(())
    };
    for dir in ["interleaved", "text", "pairs"] {
        fs::create_dir_all(root.join(dir))?;
    }
    for s in &corpus.interleaved {
        let script_rel = format!("interleaved/{}.script", s.id);
        put_script(&script_rel, &s.script)?;
        manifest.push_str(&format!("interleaved\t{}\t{}\t{script_rel}", s.id, s.appearance_seed));
        for (shot, img) in s.script.shots.iter().zip(&s.keyframes) {
            let rel = format!("interleaved/{}", keyframe_name(&s.id, shot.index));
            put_image(&rel, img)?;
            manifest.push('\t');
            manifest.push_str(&rel);
        }
        manifest.push('\n');
    }
    for s in &corpus.text {
        let script_rel = format!("text/{}.script", s.id);
        put_script(&script_rel, &s.script)?;
        manifest.push_str(&format!("text\t{}\t-\t{script_rel}\n", s.id));
    }
    for s in &corpus.pairs {
        let script_rel = format!("pairs/{}.script", s.id);
        put_script(&script_rel, &s.script)?;
        let rel = format!("pairs/{}", keyframe_name(&s.id, 1));
        put_image(&rel, &s.keyframe)?;
        manifest.push_str(&format!("pairs\t{}\t{}\t{script_rel}\t{rel}\n", s.id, s.appearance_seed));
    }
    fs::write(root.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads a corpus written by [`write_corpus`].
pub fn load_corpus(root: &Path) -> Result<Corpus, DataError> {
    let manifest = fs::read_to_string(root.join(MANIFEST_FILE))?;
    let mut corpus = Corpus::default();
    for (n, line) in manifest.lines().enumerate() {
        let line_no = n + 1;
        let bad = |message: String| DataError::Manifest { line: line_no, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(bad(format!("expected at least 4 fields, found {}", fields.len())));
        }
        let (subset, id, seed_field, script_rel) = (fields[0], fields[1], fields[2], fields[3]);
        let source = fs::read_to_string(root.join(script_rel))?;
        let script = parse_script(&source).map_err(|d| DataError::Script(ScriptError::InvariantViolation(d)))?;
        let seed = || seed_field.parse::<u64>().map_err(|_| bad(format!("bad appearance seed {seed_field:?}")));
        let mut images = Vec::new();
        for rel in &fields[4..] {
            let bytes = fs::read(root.join(rel))?;
            images.push(Image::from_ppm_bytes(&bytes).map_err(image_err(rel))?);
        }
        match subset {
            "interleaved" => {
                if images.len() != script.shots.len() {
                    return Err(bad(format!("{} keyframes for {} shots", images.len(), script.shots.len())));
                }
                corpus.interleaved.push(InterleavedSample {
                    id: id.to_string(),
                    script,
                    keyframes: images,
                    appearance_seed: seed()?,
                });
            }
            "text" => corpus.text.push(TextSample { id: id.to_string(), script }),
            "pairs" => {
                let keyframe = match <[Image; 1]>::try_from(images) {
                    Ok([img]) => img,
                    Err(v) => return Err(bad(format!("image pair with {} keyframes", v.len()))),
                };
                corpus.pairs.push(ImagePair { id: id.to_string(), script, keyframe, appearance_seed: seed()? });
            }
            other => return Err(bad(format!("unknown subset {other:?}"))),
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::validate_refs;

    fn small() -> CorpusConfig {
        CorpusConfig { interleaved: 5, text_scripts: 6, image_pairs: 3, image_size: 32, seed: 9, ..Default::default() }
    }

    #[test]
    fn fitted_vocabulary_lays_out_every_script() {
        let c = make_synthetic_corpus(&small()).unwrap();
        let v = c.vocabulary().unwrap();
        assert!(v.len() < Vocabulary::standard().len());
        for s in c.scripts() {
            crate::layout::layout_text(s, &v).unwrap();
        }
    }

    #[test]
    fn zero_counts_give_empty_corpus() {
        let cfg = CorpusConfig { interleaved: 0, text_scripts: 0, image_pairs: 0, ..Default::default() };
        assert_eq!(make_synthetic_corpus(&cfg).unwrap(), Corpus::default());
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(make_synthetic_corpus(&small()).unwrap(), make_synthetic_corpus(&small()).unwrap());
        let other = CorpusConfig { seed: 10, ..small() };
        assert_ne!(make_synthetic_corpus(&small()).unwrap(), make_synthetic_corpus(&other).unwrap());
    }

    #[test]
    fn samples_are_independent_of_counts() {
        let a = make_synthetic_corpus(&small()).unwrap();
        let b = make_synthetic_corpus(&CorpusConfig { interleaved: 2, ..small() }).unwrap();
        assert_eq!(a.interleaved[..2], b.interleaved[..]);
        assert_eq!(a.text, b.text);
    }

    #[test]
    fn every_script_validates() {
        let c = make_synthetic_corpus(&small()).unwrap();
        for s in c.interleaved.iter().map(|s| &s.script).chain(c.text.iter().map(|s| &s.script)) {
            assert!(validate_refs(s).is_empty());
            assert!(serialize_script(s).is_ok());
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = CorpusConfig { shots: (3, 2), ..Default::default() };
        assert!(matches!(make_synthetic_corpus(&cfg), Err(DataError::InvalidConfig(_))));
        let cfg = CorpusConfig { image_size: 40, ..Default::default() };
        assert!(matches!(make_synthetic_corpus(&cfg), Err(DataError::InvalidConfig(_))));
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = make_synthetic_corpus(&small()).unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        for (a, b) in back.interleaved.iter().zip(&c.interleaved) {
            assert_eq!(a.script, b.script);
            assert_eq!(a.keyframes, b.keyframes);
        }
        assert_eq!(back.text, c.text);
        assert_eq!(back, c);
    }
}
