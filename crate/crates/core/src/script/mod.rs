//! The structured multimodal script format.
//!
//! A script is a user prompt, a global block of character and environment
//! definitions, and an ordered list of shots. Each shot has a frame
//! description (static composition) and a video description (action,
//! dialogue, sound). Entities are referenced inline with `<CharacterN>` /
//! `<EnvironmentN>` tokens; dialogue and sound effects are wrapped in the
//! `<-` / `->` indicator symbols.
//!
//! Concrete grammar, one section per line:
//!
//! ```text
//! <User> [style=2] A sailor returns home.
//! <Character1> a weathered sailor in a grey coat | weathered sailor
//! <Environment1> a foggy harbor at dawn
//! <Frame1> [keyframe=shot1] Wide shot of the harbor<Environment1>, a sailor<Character1> waits.
//! <Video1> The sailor<Character1> turns. <-Now close your eyes. Go on.-> <-*gulls cry->
//! <Continuation> Continue the story.
//! <Frame2> ...
//! <Video2> ...
//! ```
//!
//! A span opened with `<-*` is a sound effect; any other span is dialogue.

mod check;
mod diag;
mod parse;
mod render;

pub use diag::{DiagCode, Diagnostic, Position};
pub use parse::parse_script;
pub use render::{render_user_line, serialize_script, validate_refs};

use std::fmt;

use thiserror::Error;

/// Upper bound on words in an entity's short caption.
pub const SHORT_CAPTION_MAX_WORDS: usize = 10;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script violates structural invariants: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvariantViolation(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    Character,
    Environment,
}

impl EntityKind {
    pub fn token_name(self) -> &'static str {
        match self {
            EntityKind::Character => "Character",
            EntityKind::Environment => "Environment",
        }
    }
}

/// An inline reference to a declared character or environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub index: u32,
}

impl EntityRef {
    pub fn character(index: u32) -> Self {
        Self { kind: EntityKind::Character, index }
    }

    pub fn environment(index: u32) -> Self {
        Self { kind: EntityKind::Environment, index }
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}{}>", self.kind.token_name(), self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpanCategory {
    Dialogue,
    SoundEffect,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DialogueSpan {
    pub content: String,
    pub category: SpanCategory,
}

impl DialogueSpan {
    pub fn dialogue(content: impl Into<String>) -> Self {
        Self { content: content.into(), category: SpanCategory::Dialogue }
    }

    pub fn sound(content: impl Into<String>) -> Self {
        Self { content: content.into(), category: SpanCategory::SoundEffect }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Run {
    Text(String),
    Ref(EntityRef),
    Span(DialogueSpan),
}

/// Description text with inline entity references and dialogue spans.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AnnotatedText {
    pub runs: Vec<Run>,
}

impl AnnotatedText {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plain(text: impl Into<String>) -> Self {
        let mut t = Self::new();
        t.push_text(text);
        t
    }

    pub fn push_text(&mut self, text: impl Into<String>) -> &mut Self {
        let text = text.into();
        if text.is_empty() {
            return self;
        }
        if let Some(Run::Text(last)) = self.runs.last_mut() {
            last.push_str(&text);
        } else {
            self.runs.push(Run::Text(text));
        }
        self
    }

    pub fn push_ref(&mut self, r: EntityRef) -> &mut Self {
        self.runs.push(Run::Ref(r));
        self
    }

    pub fn push_span(&mut self, span: DialogueSpan) -> &mut Self {
        self.runs.push(Run::Span(span));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn refs(&self) -> impl Iterator<Item = EntityRef> + '_ {
        self.runs.iter().filter_map(|r| match r {
            Run::Ref(e) => Some(*e),
            _ => None,
        })
    }

    pub fn spans(&self) -> impl Iterator<Item = &DialogueSpan> + '_ {
        self.runs.iter().filter_map(|r| match r {
            Run::Span(s) => Some(s),
            _ => None,
        })
    }

    /// Merges adjacent text runs and drops empty ones.
    pub fn normalize(&mut self) {
        let runs = std::mem::take(&mut self.runs);
        for run in runs {
            match run {
                Run::Text(t) => {
                    self.push_text(t);
                }
                other => self.runs.push(other),
            }
        }
    }

    /// The description with references and spans flattened to plain words.
    pub fn plain_text(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            match run {
                Run::Text(t) => out.push_str(t),
                Run::Ref(_) => {}
                Run::Span(s) => out.push_str(&s.content),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntityDef {
    pub kind: EntityKind,
    pub index: u32,
    pub caption: String,
    pub short_caption: String,
}

impl EntityDef {
    pub fn entity_ref(&self) -> EntityRef {
        EntityRef { kind: self.kind, index: self.index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shot {
    pub index: u32,
    pub frame_description: AnnotatedText,
    pub video_description: AnnotatedText,
    pub keyframe_ref: Option<String>,
}

impl Shot {
    /// Entities referenced in the frame description, sorted characters first,
    /// each kind ascending, without duplicates.
    pub fn frame_entities(&self) -> Vec<EntityRef> {
        let mut refs: Vec<EntityRef> = self.frame_description.refs().collect();
        refs.sort();
        refs.dedup();
        refs
    }
}

/// User prompt style (1 simple narrative, 2 abstract concept, 3 phrase
/// splicing, 4 spoken expression).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PromptStyle(u8);

impl PromptStyle {
    pub const ALL: [PromptStyle; 4] = [PromptStyle(1), PromptStyle(2), PromptStyle(3), PromptStyle(4)];

    pub fn new(n: u8) -> Option<Self> {
        (1..=4).contains(&n).then_some(PromptStyle(n))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "simple narrative",
            2 => "abstract concept",
            3 => "phrase splicing",
            _ => "spoken expression",
        }
    }
}

impl Default for PromptStyle {
    fn default() -> Self {
        PromptStyle(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct UserPrompt {
    pub text: String,
    pub style: PromptStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarkerKind {
    Extension,
    Continuation,
}

impl MarkerKind {
    pub fn token(self) -> &'static str {
        match self {
            MarkerKind::Extension => "<Extension>",
            MarkerKind::Continuation => "<Continuation>",
        }
    }
}

/// An `<Extension>` or `<Continuation>` marker placed directly before shot
/// `before_shot`, followed by its prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModeMarker {
    pub kind: MarkerKind,
    pub before_shot: u32,
    pub prompt: String,
}

impl ModeMarker {
    /// Split index in the conventional numbering: the shot after which an
    /// extension is inserted, or the shot before which a continuation is.
    pub fn split_index(&self) -> u32 {
        match self.kind {
            MarkerKind::Extension => self.before_shot - 1,
            MarkerKind::Continuation => self.before_shot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Script {
    pub user: UserPrompt,
    pub characters: Vec<EntityDef>,
    pub environments: Vec<EntityDef>,
    pub shots: Vec<Shot>,
    pub mode_marker: Option<ModeMarker>,
}

impl Script {
    pub fn entities(&self) -> impl Iterator<Item = &EntityDef> + '_ {
        self.characters.iter().chain(self.environments.iter())
    }

    pub fn declares(&self, r: EntityRef) -> bool {
        self.entities().any(|e| e.kind == r.kind && e.index == r.index)
    }

    pub fn shot(&self, index: u32) -> Option<&Shot> {
        self.shots.iter().find(|s| s.index == index)
    }

    /// Sorts entities and shots by index and normalizes every description.
    pub fn canonicalize(&mut self) {
        self.characters.sort_by_key(|e| e.index);
        self.environments.sort_by_key(|e| e.index);
        self.shots.sort_by_key(|s| s.index);
        for shot in &mut self.shots {
            shot.frame_description.normalize();
            shot.video_description.normalize();
        }
    }

    pub fn canonical(&self) -> Script {
        let mut s = self.clone();
        s.canonicalize();
        s
    }

    /// The script with any mode marker removed.
    pub fn without_marker(&self) -> Script {
        Script { mode_marker: None, ..self.clone() }
    }
}

/// Dialogue and sound-effect spans of a script in document order, each
/// paired with its shot index.
pub fn extract_dialogue(s: &Script) -> Vec<(u32, DialogueSpan)> {
    let mut shots: Vec<&Shot> = s.shots.iter().collect();
    shots.sort_by_key(|s| s.index);
    shots
        .into_iter()
        .flat_map(|shot| {
            shot.frame_description
                .spans()
                .chain(shot.video_description.spans())
                .map(move |span| (shot.index, span.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_shot() -> &'static str {
        "<User> [style=1] A sailor returns home.\n\
         <Character1> a weathered sailor | sailor\n\
         <Environment1> a foggy harbor\n\
         <Frame1> Wide shot of the harbor<Environment1>, a sailor<Character1> waits.\n\
         <Video1> He turns. <-Now close your eyes. Go on.->\n\
         <Frame2> Close-up of the sailor<Character1>.\n\
         <Video2> He smiles. <-*waves crash-> <-Home.->\n"
    }

    #[test]
    fn dialogue_extracted_in_document_order() {
        let s = parse_script(two_shot()).unwrap();
        let spans = extract_dialogue(&s);
        assert_eq!(
            spans,
            vec![
                (1, DialogueSpan::dialogue("Now close your eyes. Go on.")),
                (2, DialogueSpan::sound("waves crash")),
                (2, DialogueSpan::dialogue("Home.")),
            ]
        );
    }

    #[test]
    fn no_indicator_symbols_no_dialogue() {
        let s = parse_script("<User> [style=1] x\n<Frame1> a\n<Video1> b\n").unwrap();
        assert!(extract_dialogue(&s).is_empty());
    }

    #[test]
    fn annotated_text_merges_adjacent_text() {
        let mut t = AnnotatedText::new();
        t.runs.push(Run::Text("a ".into()));
        t.runs.push(Run::Text(String::new()));
        t.runs.push(Run::Text("b".into()));
        t.normalize();
        assert_eq!(t, AnnotatedText::plain("a b"));
    }

    #[test]
    fn marker_split_index_conventions() {
        let ext = ModeMarker { kind: MarkerKind::Extension, before_shot: 3, prompt: "p".into() };
        let cont = ModeMarker { kind: MarkerKind::Continuation, before_shot: 4, prompt: "p".into() };
        assert_eq!(ext.split_index(), 2);
        assert_eq!(cont.split_index(), 4);
    }
}
