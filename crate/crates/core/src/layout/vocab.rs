//! Lossless byte-fallback vocabulary.
//!
//! Every byte has its own token, so any text tokenizes. Words, structural
//! pieces and script special tokens are single tokens layered on top and
//! win by longest match. Detokenizing concatenates piece bytes, so
//! `detokenize(tokenize(t)) == t` for every string.

use std::collections::HashMap;

use super::LayoutError;
use crate::script::{EntityKind, EntityRef, MarkerKind};

/// Structural pieces of the canonical script text that get their own ids.
const STRUCTURAL: &[&str] =
    &["\n", "<-", "->", " | ", "[keyframe=", "]", " [style=1]", " [style=2]", " [style=3]", " [style=4]"];

const BOS_NAME: &str = "<bos>";
const EOS_NAME: &str = "<eos>";

/// Upper bounds on the special-token families a vocabulary covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialLimits {
    pub characters: u32,
    pub environments: u32,
    pub shots: u32,
}

impl Default for SpecialLimits {
    fn default() -> Self {
        Self { characters: 8, environments: 4, shots: 8 }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    bytes: Vec<u8>,
    special: bool,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<Entry>,
    by_name: HashMap<String, u32>,
    by_bytes: HashMap<Vec<u8>, u32>,
    max_piece: usize,
    limits: SpecialLimits,
    words: Vec<String>,
    bos: u32,
    eos: u32,
}

impl Vocabulary {
    /// Builds the vocabulary: 256 byte tokens, BOS and EOS, the special
    /// tokens up to `limits`, structural pieces, then each word in bare and
    /// space-prefixed form.
    pub fn new<S: AsRef<str>>(words: &[S], limits: SpecialLimits) -> Self {
        let mut v = Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
            by_bytes: HashMap::new(),
            max_piece: 1,
            limits,
            words: words.iter().map(|w| w.as_ref().to_string()).collect(),
            bos: 0,
            eos: 0,
        };
        for b in 0..=255u8 {
            v.push(format!("<0x{b:02X}>"), vec![b], false, true);
        }
        v.bos = v.push(BOS_NAME.into(), Vec::new(), true, false);
        v.eos = v.push(EOS_NAME.into(), Vec::new(), true, false);
        let mut specials = vec!["<User>".to_string()];
        specials.extend((1..=limits.characters).map(|i| format!("<Character{i}>")));
        specials.extend((1..=limits.environments).map(|i| format!("<Environment{i}>")));
        specials.extend((1..=limits.shots).map(|i| format!("<Frame{i}>")));
        specials.extend((1..=limits.shots).map(|i| format!("<Video{i}>")));
        specials.push(MarkerKind::Extension.token().to_string());
        specials.push(MarkerKind::Continuation.token().to_string());
        for s in specials {
            let bytes = s.as_bytes().to_vec();
            v.push(s, bytes, true, true);
        }
        for piece in STRUCTURAL {
            v.push(piece.to_string(), piece.as_bytes().to_vec(), false, true);
        }
        for w in words {
            let w = w.as_ref();
            for piece in [w.to_string(), format!(" {w}")] {
                if !v.by_name.contains_key(&piece) {
                    let bytes = piece.as_bytes().to_vec();
                    v.push(piece, bytes, false, true);
                }
            }
        }
        v
    }

    /// Vocabulary over every word the synthetic generator can emit.
    pub fn standard() -> Self {
        Self::new(&crate::data::vocabulary_words(), SpecialLimits::default())
    }

    /// Vocabulary over the alphabetic words occurring in `texts`, in first
    /// occurrence order. Keeps desk-scale output heads small.
    pub fn fitted<'a>(texts: impl IntoIterator<Item = &'a str>, limits: SpecialLimits) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut words = Vec::new();
        for t in texts {
            let mut rest = t;
            while let Some(start) = rest.find(|c: char| c.is_ascii_alphabetic()) {
                let len = rest[start..].find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(rest.len() - start);
                let w = &rest[start..start + len];
                // Names inside angle brackets belong to special tokens.
                if !rest[..start].ends_with('<') && seen.insert(w) {
                    words.push(w);
                }
                rest = &rest[start + len..];
            }
        }
        Self::new(&words, limits)
    }

    fn push(&mut self, name: String, bytes: Vec<u8>, special: bool, matchable: bool) -> u32 {
        let id = self.entries.len() as u32;
        if matchable {
            self.max_piece = self.max_piece.max(bytes.len());
            self.by_bytes.insert(bytes.clone(), id);
        }
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, bytes, special });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn limits(&self) -> SpecialLimits {
        self.limits
    }

    /// Text form: a `limits` line, then one word per line. `from_text`
    /// rebuilds an identical vocabulary.
    pub fn to_text(&self) -> String {
        let l = self.limits;
        let mut out = format!("limits {} {} {}\n", l.characters, l.environments, l.shots);
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LayoutError> {
        let mut lines = text.lines();
        let bad = |m: &str| LayoutError::BadVocabulary(m.to_string());
        let head = lines.next().ok_or_else(|| bad("empty vocabulary file"))?;
        let nums: Vec<u32> = head
            .strip_prefix("limits ")
            .ok_or_else(|| bad("first line must be `limits C E S`"))?
            .split(' ')
            .map(|n| n.parse().map_err(|_| bad("limits must be integers")))
            .collect::<Result<_, _>>()?;
        let [characters, environments, shots] = nums[..] else {
            return Err(bad("limits takes three values"));
        };
        let words: Vec<&str> = lines.collect();
        if words.iter().any(|w| w.is_empty()) {
            return Err(bad("empty word"));
        }
        Ok(Self::new(&words, SpecialLimits { characters, environments, shots }))
    }

    pub fn bos(&self) -> u32 {
        self.bos
    }

    pub fn eos(&self) -> u32 {
        self.eos
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|e| e.name.as_str())
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.entries.get(id as usize).is_some_and(|e| e.special)
    }

    fn special_id(&self, token: &str) -> Result<u32, LayoutError> {
        self.id(token).ok_or_else(|| LayoutError::UnknownToken(token.to_string()))
    }

    pub fn entity(&self, r: EntityRef) -> Result<u32, LayoutError> {
        self.special_id(&r.to_string())
    }

    pub fn frame(&self, shot: u32) -> Result<u32, LayoutError> {
        self.special_id(&format!("<Frame{shot}>"))
    }

    pub fn video(&self, shot: u32) -> Result<u32, LayoutError> {
        self.special_id(&format!("<Video{shot}>"))
    }

    pub fn user(&self) -> u32 {
        self.by_name["<User>"]
    }

    pub fn marker(&self, kind: MarkerKind) -> u32 {
        self.by_name[kind.token()]
    }

    /// Longest-match tokenization of arbitrary text.
    ///
    /// Fails only when the text contains a well-formed special token outside
    /// this vocabulary's limits, such as `<Character9>` with eight characters.
    pub fn tokenize_text(&self, text: &str) -> Result<Vec<u32>, LayoutError> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'<' {
                if let Some(tok) = special_shape(&bytes[i..]) {
                    if !self.by_bytes.contains_key(tok.as_bytes()) {
                        return Err(LayoutError::UnknownToken(tok));
                    }
                }
            }
            let longest = self.max_piece.min(bytes.len() - i);
            let (id, len) = (1..=longest)
                .rev()
                .find_map(|len| self.by_bytes.get(&bytes[i..i + len]).map(|&id| (id, len)))
                .expect("every byte has a token");
            out.push(id);
            i += len;
        }
        Ok(out)
    }

    /// Concatenates piece bytes; BOS and EOS contribute nothing.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String, LayoutError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let e = self.entries.get(id as usize).ok_or(LayoutError::BadTokenId(id))?;
            bytes.extend_from_slice(&e.bytes);
        }
        String::from_utf8(bytes).map_err(|_| LayoutError::InvalidUtf8)
    }
}

/// Returns the text of a `<Letters[Digits]>` token naming a script special
/// token family, if `bytes` starts with one.
fn special_shape(bytes: &[u8]) -> Option<String> {
    let letters = bytes[1..].iter().take_while(|b| b.is_ascii_alphabetic()).count();
    let digits = bytes[1 + letters..].iter().take_while(|b| b.is_ascii_digit()).count();
    let end = 1 + letters + digits;
    if bytes.get(end) != Some(&b'>') {
        return None;
    }
    let name = std::str::from_utf8(&bytes[1..1 + letters]).ok()?;
    let family =
        matches!(name, "User" | "Character" | "Environment" | "Frame" | "Video" | "Extension" | "Continuation");
    let numbered = matches!(name, "Character" | "Environment" | "Frame" | "Video");
    if !family || numbered != (digits > 0) {
        return None;
    }
    Some(String::from_utf8_lossy(&bytes[..=end]).into_owned())
}

/// Entity kind and index named by a special token id, if any.
pub fn entity_of(v: &Vocabulary, id: u32) -> Option<EntityRef> {
    let name = v.name(id)?;
    let inner = name.strip_prefix('<')?.strip_suffix('>')?;
    for (kind, prefix) in [(EntityKind::Character, "Character"), (EntityKind::Environment, "Environment")] {
        if let Some(n) = inner.strip_prefix(prefix) {
            return n.parse().ok().map(|index| EntityRef { kind, index });
        }
    }
    None
}
