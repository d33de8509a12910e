use std::collections::HashMap;

use super::check::{reference_diagnostics, shot_index_diagnostics, Field, Locator};
use super::{
    AnnotatedText, DiagCode, Diagnostic, EntityKind, MarkerKind, Position, Run, Script, ScriptError, SpanCategory,
    UserPrompt, SHORT_CAPTION_MAX_WORDS,
};

/// Text writer that tracks the 1-based position of the next character.
struct Writer {
    out: String,
    line: usize,
    col: usize,
}

impl Writer {
    fn new() -> Self {
        Self { out: String::new(), line: 1, col: 1 }
    }

    fn pos(&self) -> Position {
        Position::new(self.line, self.col)
    }

    fn push(&mut self, s: &str) {
        for c in s.chars() {
            if c == '\n' {
                self.line += 1;
                self.col = 1;
            } else {
                self.col += 1;
            }
        }
        self.out.push_str(s);
    }
}

#[derive(Default)]
struct RenderLocator {
    user: Option<Position>,
    entities: HashMap<(EntityKind, u32), Position>,
    shots: HashMap<u32, Position>,
    videos: HashMap<u32, Position>,
    refs: HashMap<(u32, Field, usize), Position>,
    marker: Option<Position>,
}

impl Locator for RenderLocator {
    fn entity(&self, kind: EntityKind, index: u32) -> Position {
        self.entities[&(kind, index)]
    }
    fn shot(&self, index: u32) -> Position {
        self.shots[&index]
    }
    fn reference(&self, shot: u32, field: Field, run: usize) -> Position {
        self.refs[&(shot, field, run)]
    }
}

/// The canonical first line of a script, newline included.
pub fn render_user_line(u: &UserPrompt) -> String {
    let mut line = format!("<User> [style={}]", u.style.get());
    if !u.text.is_empty() {
        line.push(' ');
        line.push_str(&u.text);
    }
    line.push('\n');
    line
}

/// Writes a canonical script without checking it. Duplicate indices keep the
/// position of their last occurrence.
fn render(s: &Script) -> (String, RenderLocator) {
    let mut w = Writer::new();
    let mut loc = RenderLocator { user: Some(w.pos()), ..Default::default() };
    w.push(&render_user_line(&s.user));
    for e in s.characters.iter().chain(&s.environments) {
        loc.entities.insert((e.kind, e.index), w.pos());
        w.push(&format!("<{}{}> ", e.kind.token_name(), e.index));
        w.push(&e.caption);
        if !e.short_caption.is_empty() {
            w.push(" | ");
            w.push(&e.short_caption);
        }
        w.push("\n");
    }
    let write_marker = |w: &mut Writer, loc: &mut RenderLocator| {
        if let Some(m) = &s.mode_marker {
            loc.marker = Some(w.pos());
            w.push(m.kind.token());
            if !m.prompt.is_empty() {
                w.push(" ");
                w.push(&m.prompt);
            }
            w.push("\n");
        }
    };
    let mut marker_written = false;
    for shot in &s.shots {
        if !marker_written && s.mode_marker.as_ref().is_some_and(|m| m.before_shot <= shot.index) {
            write_marker(&mut w, &mut loc);
            marker_written = true;
        }
        loc.shots.insert(shot.index, w.pos());
        w.push(&format!("<Frame{}>", shot.index));
        if let Some(kf) = &shot.keyframe_ref {
            w.push(" [keyframe=");
            w.push(kf);
            w.push("]");
        }
        write_annotated(&mut w, &mut loc, shot.index, Field::Frame, &shot.frame_description);
        loc.videos.insert(shot.index, w.pos());
        w.push(&format!("<Video{}>", shot.index));
        write_annotated(&mut w, &mut loc, shot.index, Field::Video, &shot.video_description);
    }
    if !marker_written {
        write_marker(&mut w, &mut loc);
    }
    (w.out, loc)
}

fn write_annotated(w: &mut Writer, loc: &mut RenderLocator, shot: u32, field: Field, text: &AnnotatedText) {
    if !text.is_empty() {
        w.push(" ");
    }
    for (i, run) in text.runs.iter().enumerate() {
        match run {
            Run::Text(t) => w.push(t),
            Run::Ref(r) => {
                loc.refs.insert((shot, field, i), w.pos());
                w.push(&r.to_string());
            }
            Run::Span(span) => {
                w.push("<-");
                if span.category == SpanCategory::SoundEffect {
                    w.push("*");
                }
                w.push(&span.content);
                w.push("->");
            }
        }
    }
    w.push("\n");
}

/// Writes `s` in canonical form: user prompt, characters ascending,
/// environments ascending, then shots ascending with frame before video.
pub fn serialize_script(s: &Script) -> Result<String, ScriptError> {
    let s = s.canonical();
    let (text, loc) = render(&s);
    let mut diags = reference_diagnostics(&s, &loc);
    diags.extend(shot_index_diagnostics(&s, &loc));
    diags.extend(representability(&s, &loc));
    if diags.is_empty() {
        Ok(text)
    } else {
        diags.sort_by_key(|d| d.pos);
        Err(ScriptError::InvariantViolation(diags))
    }
}

/// Reference and index diagnostics for an AST, positioned in its canonical
/// text and ordered by position. Empty iff every reference resolves and all
/// entity and shot indices are contiguous from 1.
pub fn validate_refs(s: &Script) -> Vec<Diagnostic> {
    let s = s.canonical();
    let (_, loc) = render(&s);
    let mut diags = reference_diagnostics(&s, &loc);
    diags.extend(shot_index_diagnostics(&s, &loc));
    diags.sort_by_key(|d| d.pos);
    diags
}

fn has_token_pattern(t: &str) -> bool {
    let chars: Vec<char> = t.chars().collect();
    (0..chars.len()).any(|i| {
        if chars[i] != '<' {
            return false;
        }
        let mut j = i + 1;
        while j < chars.len() && chars[j].is_ascii_alphabetic() {
            j += 1;
        }
        if j == i + 1 {
            return false;
        }
        while j < chars.len() && chars[j].is_ascii_digit() {
            j += 1;
        }
        j < chars.len() && chars[j] == '>'
    })
}

fn plain_problem(t: &str) -> Option<&'static str> {
    if t.contains('\n') || t.contains('\r') {
        Some("contains a line break")
    } else if t.contains("<-") {
        Some("contains the indicator symbol <-")
    } else if has_token_pattern(t) {
        Some("contains a special-token pattern")
    } else if t.trim() != t {
        Some("has leading or trailing whitespace")
    } else {
        None
    }
}

/// Checks that every piece of text survives a write/parse cycle unchanged.
fn representability(s: &Script, loc: &RenderLocator) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut bad = |pos: Position, what: String| {
        out.push(Diagnostic::new(DiagCode::UnrepresentableText, pos, what));
    };
    let user_pos = loc.user.unwrap_or(Position::new(1, 1));
    if let Some(why) = plain_problem(&s.user.text) {
        bad(user_pos, format!("user prompt {why}"));
    }
    let mut empty = Vec::new();
    for e in s.characters.iter().chain(&s.environments) {
        let pos = loc.entities[&(e.kind, e.index)];
        let name = e.entity_ref().to_string();
        if e.caption.is_empty() {
            empty.push(Diagnostic::new(DiagCode::EmptySection, pos, format!("{name} has no caption")));
        }
        for (label, t) in [("caption", &e.caption), ("short caption", &e.short_caption)] {
            if let Some(why) = plain_problem(t) {
                bad(pos, format!("{label} of {name} {why}"));
            } else if t.contains('|') {
                bad(pos, format!("{label} of {name} contains '|'"));
            }
        }
        if e.short_caption.split_whitespace().count() > SHORT_CAPTION_MAX_WORDS {
            empty.push(Diagnostic::new(
                DiagCode::ShortCaptionTooLong,
                pos,
                format!("short caption of {name} exceeds {SHORT_CAPTION_MAX_WORDS} words"),
            ));
        }
    }
    for shot in &s.shots {
        let pos = loc.shots[&shot.index];
        if let Some(kf) = &shot.keyframe_ref {
            if kf.is_empty() || kf.contains(']') || kf.contains('\n') || kf.contains('\r') {
                bad(pos, format!("keyframe reference of shot {} is not writable", shot.index));
            }
        }
        for (field, text, fpos) in
            [("frame", &shot.frame_description, pos), ("video", &shot.video_description, loc.videos[&shot.index])]
        {
            if text.is_empty() {
                empty.push(Diagnostic::new(
                    DiagCode::EmptySection,
                    fpos,
                    format!("{field} description of shot {} is empty", shot.index),
                ));
            }
            if let Some(why) = annotated_problem(text, field == "frame" && shot.keyframe_ref.is_none()) {
                bad(fpos, format!("{field} description of shot {} {why}", shot.index));
            }
        }
    }
    if let Some(m) = &s.mode_marker {
        let pos = loc.marker.unwrap_or(user_pos);
        let n = s.shots.len() as u32;
        let placed = match m.kind {
            MarkerKind::Extension => m.before_shot >= 2 && m.before_shot <= n,
            MarkerKind::Continuation => n >= 1 && m.before_shot == n,
        };
        if !placed {
            empty.push(Diagnostic::new(
                DiagCode::InvalidMarker,
                pos,
                format!("{} before shot {} is out of range", m.kind.token(), m.before_shot),
            ));
        }
        if m.prompt.is_empty() {
            empty.push(Diagnostic::new(DiagCode::EmptySection, pos, format!("{} has no prompt", m.kind.token())));
        }
        if let Some(why) = plain_problem(&m.prompt) {
            bad(pos, format!("marker prompt {why}"));
        }
    }
    out.extend(empty);
    out
}

fn annotated_problem(text: &AnnotatedText, bare_frame: bool) -> Option<&'static str> {
    let last = text.runs.len().saturating_sub(1);
    for (i, run) in text.runs.iter().enumerate() {
        match run {
            Run::Text(t) => {
                if t.is_empty() {
                    return Some("contains an empty text run");
                }
                if i > 0 && matches!(text.runs[i - 1], Run::Text(_)) {
                    return Some("contains adjacent text runs");
                }
                if t.contains('\n') || t.contains('\r') {
                    return Some("contains a line break");
                }
                if t.contains("<-") {
                    return Some("contains the indicator symbol <- outside a span");
                }
                if has_token_pattern(t) {
                    return Some("contains a special-token pattern in plain text");
                }
                if i == 0 && t.starts_with(char::is_whitespace) {
                    return Some("starts with whitespace");
                }
                if i == 0 && bare_frame && t.starts_with("[keyframe=") {
                    return Some("starts with a keyframe prefix");
                }
                if i == last && t.ends_with(char::is_whitespace) {
                    return Some("ends with whitespace");
                }
            }
            Run::Ref(_) => {}
            Run::Span(span) => {
                let c = &span.content;
                if c.contains("->") || c.contains("<-") {
                    return Some("has a span containing an indicator symbol");
                }
                if c.ends_with('-') {
                    return Some("has a span ending in '-'");
                }
                if c.contains('\n') || c.contains('\r') {
                    return Some("has a span containing a line break");
                }
                if span.category == SpanCategory::Dialogue && c.starts_with('*') {
                    return Some("has a dialogue span starting with '*'");
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{parse_script, DialogueSpan, EntityDef, EntityRef, ModeMarker, PromptStyle, Shot, UserPrompt};

    fn entity(kind: EntityKind, index: u32, caption: &str) -> EntityDef {
        EntityDef { kind, index, caption: caption.into(), short_caption: String::new() }
    }

    #[test]
    fn minimal_script_has_user_and_character_sections() {
        let s = Script {
            user: UserPrompt { text: "A lighthouse keeper".into(), style: PromptStyle::default() },
            characters: vec![entity(EntityKind::Character, 1, "an old keeper")],
            ..Default::default()
        };
        let text = serialize_script(&s).unwrap();
        assert_eq!(text, "<User> [style=1] A lighthouse keeper\n<Character1> an old keeper\n");
    }

    #[test]
    fn field_order_does_not_change_bytes() {
        let mut a = Script::default();
        a.characters = vec![entity(EntityKind::Character, 1, "a"), entity(EntityKind::Character, 2, "b")];
        a.environments = vec![entity(EntityKind::Environment, 1, "e")];
        let mut b = a.clone();
        b.characters.reverse();
        let mut frame = AnnotatedText::new();
        frame.push_text("x ").push_text("y");
        let shot = Shot {
            index: 1,
            frame_description: frame,
            video_description: AnnotatedText::plain("v"),
            keyframe_ref: None,
        };
        a.shots.push(shot.clone());
        b.shots.push(Shot { frame_description: AnnotatedText::plain("x y"), ..shot });
        assert_eq!(serialize_script(&a).unwrap(), serialize_script(&b).unwrap());
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let mut s = Script::default();
        s.shots.push(Shot {
            index: 1,
            frame_description: {
                let mut t = AnnotatedText::plain("a man");
                t.push_ref(EntityRef::character(2));
                t
            },
            video_description: AnnotatedText::plain("walks"),
            keyframe_ref: None,
        });
        let err = serialize_script(&s).unwrap_err();
        let ScriptError::InvariantViolation(diags) = err;
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagCode::UnresolvedReference);
        assert_eq!(diags[0].pos, Position::new(2, 15));
    }

    #[test]
    fn ambiguous_text_is_rejected() {
        let mut s = Script::default();
        s.user.text = "line\nbreak".into();
        assert!(serialize_script(&s).is_err());
        let mut s = Script::default();
        s.shots.push(Shot {
            index: 1,
            frame_description: AnnotatedText::plain("a"),
            video_description: {
                let mut t = AnnotatedText::new();
                t.push_span(DialogueSpan::dialogue("*not a sound"));
                t
            },
            keyframe_ref: None,
        });
        assert!(serialize_script(&s).is_err());
    }

    #[test]
    fn validate_refs_consistent_script_is_clean() {
        let s = parse_script(
            "<User> x\n<Character1> c\n<Environment1> e\n<Frame1> a<Character1> in<Environment1>\n<Video1> b\n",
        )
        .unwrap();
        assert!(validate_refs(&s).is_empty());
    }

    #[test]
    fn validate_refs_missing_first_environment() {
        let mut s = Script::default();
        s.environments.push(entity(EntityKind::Environment, 2, "a square"));
        let diags = validate_refs(&s);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagCode::NonContiguousIndex);
    }

    #[test]
    fn marker_round_trip_and_strip() {
        let src = "<User> [style=2] x\n<Frame1> a\n<Video1> b\n<Extension> more please\n<Frame2> c\n<Video2> d\n";
        let s = parse_script(src).unwrap();
        assert_eq!(serialize_script(&s).unwrap(), src);
        assert_eq!(
            s.mode_marker,
            Some(ModeMarker { kind: MarkerKind::Extension, before_shot: 2, prompt: "more please".into() })
        );
        let stripped = serialize_script(&s.without_marker()).unwrap();
        assert_eq!(stripped, src.replace("<Extension> more please\n", ""));
    }

    #[test]
    fn tricky_spans_round_trip() {
        let src = "<User> [style=1] x\n<Frame1> a -> b <<-x<-> <-->\n<Video1> <-a-->, <-*-> <-**z->\n";
        let s = parse_script(src).unwrap();
        let canonical = src.replace("<-a-->", "<-a->");
        assert_eq!(serialize_script(&s).unwrap(), canonical);
        assert_eq!(parse_script(&canonical).unwrap(), s);
    }
}
