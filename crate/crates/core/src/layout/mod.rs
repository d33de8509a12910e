//! Modality-tagged token sequences.
//!
//! A [`SequenceLayout`] is an ordered list of splits. Interleaved layouts
//! read: global text, then for each shot its text followed by its image.
//! Conditioning images carry `[ID_PROMPT] VIT [ID_PROMPT] VAE_COND`; the
//! image under generation carries only `[ID_PROMPT] VAE_GEN` and ends the
//! sequence. Each ID_PROMPT split holds `<FrameN>` then the shot's
//! characters and environments in ascending order.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::image::Image;
use crate::script::{EntityKind, EntityRef, Script};

mod vocab;

pub use vocab::{entity_of, SpecialLimits, Vocabulary};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("special token {0} is not in the vocabulary")]
    UnknownToken(String),
    #[error("token id {0} is out of range")]
    BadTokenId(u32),
    #[error("token ids do not decode to UTF-8")]
    InvalidUtf8,
    #[error("no keyframe for shot {0}")]
    MissingKeyframe(u32),
    #[error("shot {shot} is outside 1..={shots}")]
    BadShotIndex { shot: u32, shots: u32 },
    #[error("keyframe {shot} is {height}x{width}, expected {size}x{size}")]
    BadDimensions { shot: u32, height: usize, width: usize, size: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("bad vocabulary file: {0}")]
    BadVocabulary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Text,
    IdPrompt,
    Vit,
    VaeCond,
    VaeGen,
}

impl Role {
    pub fn is_vision(self) -> bool {
        matches!(self, Role::Vit | Role::VaeCond | Role::VaeGen)
    }

    pub fn is_vae(self) -> bool {
        matches!(self, Role::VaeCond | Role::VaeGen)
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Text => "TEXT",
            Role::IdPrompt => "ID_PROMPT",
            Role::Vit => "VIT",
            Role::VaeCond => "VAE_COND",
            Role::VaeGen => "VAE_GEN",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub role: Role,
    pub start: usize,
    pub len: usize,
    /// Owning shot, 0 for global text.
    pub shot: u32,
    /// Entities named by an ID_PROMPT split; empty otherwise.
    pub entities: Vec<EntityRef>,
}

impl Split {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Token id stored at vision positions.
pub const NO_TOKEN: u32 = u32::MAX;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceLayout {
    pub splits: Vec<Split>,
    /// Token id per position; [`NO_TOKEN`] at vision positions.
    pub tokens: Vec<u32>,
    pub roles: Vec<Role>,
    pub split_of: Vec<usize>,
}

/// Image geometry and the ID-prompt switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutOptions {
    pub image_size: usize,
    pub vit_patch: usize,
    pub latent_downsample: usize,
    pub latent_patch: usize,
    pub id_prompting: bool,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        Self { image_size: 64, vit_patch: 8, latent_downsample: 8, latent_patch: 2, id_prompting: true }
    }
}

impl LayoutOptions {
    pub fn vit_tokens(&self) -> usize {
        (self.image_size / self.vit_patch).pow(2)
    }

    pub fn vae_tokens(&self) -> usize {
        (self.image_size / self.latent_downsample / self.latent_patch).pow(2)
    }
}

/// Appends splits in order, keeping per-position tables in step.
#[derive(Debug, Default, Clone)]
pub struct LayoutBuilder {
    layout: SequenceLayout,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, role: Role, shot: u32, entities: Vec<EntityRef>, tokens: impl IntoIterator<Item = u32>) {
        let l = &mut self.layout;
        let start = l.tokens.len();
        l.tokens.extend(tokens);
        let len = l.tokens.len() - start;
        l.roles.extend(std::iter::repeat(role).take(len));
        l.split_of.extend(std::iter::repeat(l.splits.len()).take(len));
        l.splits.push(Split { role, start, len, shot, entities });
    }

    pub fn text(&mut self, shot: u32, ids: &[u32]) -> &mut Self {
        self.push(Role::Text, shot, Vec::new(), ids.iter().copied());
        self
    }

    pub fn id_prompt(&mut self, shot: u32, entities: Vec<EntityRef>, ids: &[u32]) -> &mut Self {
        self.push(Role::IdPrompt, shot, entities, ids.iter().copied());
        self
    }

    /// Appends a vision split of `len` positions.
    pub fn vision(&mut self, role: Role, shot: u32, len: usize) -> &mut Self {
        assert!(role.is_vision(), "{role} is not a vision role");
        self.push(role, shot, Vec::new(), std::iter::repeat(NO_TOKEN).take(len));
        self
    }

    pub fn finish(self) -> SequenceLayout {
        self.layout
    }
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// A single TEXT split holding `ids`.
    pub fn text(ids: &[u32]) -> Self {
        let mut b = LayoutBuilder::new();
        b.text(0, ids);
        b.finish()
    }

    /// Whether any VAE split is present.
    pub fn has_vae(&self) -> bool {
        self.splits.iter().any(|s| s.role.is_vae())
    }

    pub fn gen_split(&self) -> Option<&Split> {
        self.splits.iter().find(|s| s.role == Role::VaeGen)
    }

    /// Next-token targets as `(input position, target id)`: every TEXT
    /// position whose predecessor is also TEXT is predicted from that
    /// predecessor. ID_PROMPT tokens are never targets.
    pub fn text_targets(&self) -> Vec<(usize, u32)> {
        (1..self.len())
            .filter(|&p| self.roles[p] == Role::Text && self.roles[p - 1] == Role::Text)
            .map(|p| (p - 1, self.tokens[p]))
            .collect()
    }

    /// Checks that splits are non-empty, partition the positions in order,
    /// and agree with the per-position tables.
    pub fn check_partition(&self) -> Result<(), LayoutError> {
        let bad = |m: String| Err(LayoutError::InvalidLayout(m));
        let n = self.tokens.len();
        if self.roles.len() != n || self.split_of.len() != n {
            return bad("per-position tables disagree in length".into());
        }
        let mut cursor = 0;
        for (i, s) in self.splits.iter().enumerate() {
            if s.start != cursor {
                return bad(format!("split {i} starts at {} but previous ended at {cursor}", s.start));
            }
            if s.len == 0 {
                return bad(format!("split {i} is empty"));
            }
            if s.end() > n {
                return bad(format!("split {i} runs past the sequence end"));
            }
            for p in s.start..s.end() {
                if self.roles[p] != s.role || self.split_of[p] != i {
                    return bad(format!("position {p} disagrees with split {i}"));
                }
                if s.role.is_vision() != (self.tokens[p] == NO_TOKEN) {
                    return bad(format!("position {p} token does not match role {}", s.role));
                }
            }
            cursor = s.end();
        }
        if cursor != n {
            return bad(format!("splits cover {cursor} of {n} positions"));
        }
        Ok(())
    }

    /// [`check_partition`](Self::check_partition) plus ID-prompt placement.
    /// With `id_prompting`, every vision split directly follows an ID_PROMPT
    /// split of the same shot; without it, no ID_PROMPT splits appear.
    pub fn check(&self, id_prompting: bool) -> Result<(), LayoutError> {
        self.check_partition()?;
        let bad = |m: String| Err(LayoutError::InvalidLayout(m));
        for (i, s) in self.splits.iter().enumerate() {
            if s.role.is_vision() && id_prompting {
                let prev = i.checked_sub(1).map(|j| &self.splits[j]);
                if !prev.is_some_and(|p| p.role == Role::IdPrompt && p.shot == s.shot) {
                    return bad(format!("{} split {i} lacks its ID_PROMPT", s.role));
                }
            }
            if s.role == Role::IdPrompt {
                if !id_prompting {
                    return bad(format!("ID_PROMPT split {i} with ID prompting off"));
                }
                if !self.splits.get(i + 1).is_some_and(|nx| nx.role.is_vision() && nx.shot == s.shot) {
                    return bad(format!("ID_PROMPT split {i} is not followed by its image"));
                }
            }
        }
        Ok(())
    }

    /// One line per split: `split#: role shot=[i] span=[start,len] entities=[...]`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.splits.iter().enumerate() {
            let ents: Vec<String> = s.entities.iter().map(|e| format!("{}{}", e.kind.token_name(), e.index)).collect();
            writeln!(
                out,
                "{i}: {} shot=[{}] span=[{},{}] entities=[{}]",
                s.role,
                s.shot,
                s.start,
                s.len,
                ents.join(",")
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

/// Which part of a script a run of text tokens belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    /// User prompt and entity definitions.
    Global,
    /// A shot's Frame and Video lines, plus a mode marker placed before it.
    Shot(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedScript {
    pub ids: Vec<u32>,
    /// Consecutive `(section, start, len)` runs covering `ids`.
    pub sections: Vec<(Section, usize, usize)>,
}

impl TokenizedScript {
    pub fn section(&self, which: Section) -> &[u32] {
        self.sections
            .iter()
            .find(|(s, _, _)| *s == which)
            .map_or(&[][..], |&(_, start, len)| &self.ids[start..start + len])
    }
}

fn line_section(line: &str) -> Option<Section> {
    for prefix in ["<Frame", "<Video"] {
        if let Some(rest) = line.strip_prefix(prefix) {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            return digits.parse().ok().map(Section::Shot);
        }
    }
    None
}

/// Tokenizes the canonical text of `s`. Concatenating the piece text of the
/// result reproduces `serialize_script(s)` byte for byte.
pub fn tokenize(s: &Script, v: &Vocabulary) -> Result<TokenizedScript, LayoutError> {
    let text = crate::script::serialize_script(s).map_err(|e| LayoutError::InvalidLayout(e.to_string()))?;
    let mut ids = Vec::new();
    let mut sections: Vec<(Section, usize, usize)> = Vec::new();
    let mut pending_marker: Option<usize> = None;
    for line in text.split_inclusive('\n') {
        let start = ids.len();
        ids.extend(v.tokenize_text(line)?);
        let section = match line_section(line) {
            Some(sec) => sec,
            None if line.starts_with("<Extension>") || line.starts_with("<Continuation>") => {
                pending_marker.get_or_insert(start);
                continue;
            }
            None => Section::Global,
        };
        let start = pending_marker.take().unwrap_or(start);
        match sections.last_mut() {
            Some((last, _, len)) if *last == section => *len += ids.len() - start,
            _ => sections.push((section, start, ids.len() - start)),
        }
    }
    if let Some(start) = pending_marker {
        match sections.last_mut() {
            Some((_, _, len)) => *len += ids.len() - start,
            None => sections.push((Section::Global, start, ids.len() - start)),
        }
    }
    Ok(TokenizedScript { ids, sections })
}

/// Tokens of the ID_PROMPT split for `shot`: `<FrameN>`, then referenced
/// characters ascending, then referenced environments ascending.
pub fn insert_id_prompts(s: &Script, shot: u32, v: &Vocabulary) -> Result<(Vec<u32>, Vec<EntityRef>), LayoutError> {
    let sh = s.shot(shot).ok_or(LayoutError::BadShotIndex { shot, shots: s.shots.len() as u32 })?;
    let mut entities = sh.frame_entities();
    entities.sort_by_key(|e| (e.kind != EntityKind::Character, e.index));
    let mut ids = vec![v.frame(shot)?];
    for &e in &entities {
        ids.push(v.entity(e)?);
    }
    Ok((ids, entities))
}

fn without_keyframe_refs(s: &Script) -> Script {
    let mut s = s.clone();
    for shot in &mut s.shots {
        shot.keyframe_ref = None;
    }
    s
}

/// `BOS`, the script text, `EOS` as one TEXT split. Keyframe store
/// identifiers are not part of the modeled text and are dropped.
pub fn layout_text(s: &Script, v: &Vocabulary) -> Result<SequenceLayout, LayoutError> {
    let t = tokenize(&without_keyframe_refs(s), v)?;
    let mut ids = Vec::with_capacity(t.ids.len() + 2);
    ids.push(v.bos());
    ids.extend(&t.ids);
    ids.push(v.eos());
    Ok(SequenceLayout::text(&ids))
}

/// Interleaved layout up to and including the image of `gen_shot`.
///
/// `frames[i]` is the keyframe of shot `i + 1`; shots before `gen_shot` must
/// be covered. The frame of `gen_shot` itself is the generation target and
/// need not be present.
pub fn layout_interleaved(
    s: &Script,
    frames: &[Image],
    v: &Vocabulary,
    gen_shot: u32,
    opts: &LayoutOptions,
) -> Result<SequenceLayout, LayoutError> {
    let shots = s.shots.len() as u32;
    if gen_shot < 1 || gen_shot > shots {
        return Err(LayoutError::BadShotIndex { shot: gen_shot, shots });
    }
    for shot in 1..gen_shot {
        let img = frames.get(shot as usize - 1).ok_or(LayoutError::MissingKeyframe(shot))?;
        if img.height != opts.image_size || img.width != opts.image_size {
            return Err(LayoutError::BadDimensions {
                shot,
                height: img.height,
                width: img.width,
                size: opts.image_size,
            });
        }
    }
    let t = tokenize(&without_keyframe_refs(s), v)?;
    let mut b = LayoutBuilder::new();
    let mut global = vec![v.bos()];
    global.extend_from_slice(t.section(Section::Global));
    b.text(0, &global);
    for shot in 1..=gen_shot {
        b.text(shot, t.section(Section::Shot(shot)));
        let (prompt, entities) = insert_id_prompts(s, shot, v)?;
        let image = |b: &mut LayoutBuilder, role: Role, len: usize| {
            if opts.id_prompting {
                b.id_prompt(shot, entities.clone(), &prompt);
            }
            b.vision(role, shot, len);
        };
        if shot < gen_shot {
            image(&mut b, Role::Vit, opts.vit_tokens());
            image(&mut b, Role::VaeCond, opts.vae_tokens());
        } else {
            image(&mut b, Role::VaeGen, opts.vae_tokens());
        }
    }
    Ok(b.finish())
}
