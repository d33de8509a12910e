use super::{DiagCode, Diagnostic, EntityKind, Position, Run, Script};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Field {
    Frame,
    Video,
}

/// Maps AST locations to text positions (source text when parsing,
/// canonical text when validating an AST).
pub(crate) trait Locator {
    fn entity(&self, kind: EntityKind, index: u32) -> Position;
    fn shot(&self, index: u32) -> Position;
    fn reference(&self, shot: u32, field: Field, run: usize) -> Position;
}

/// Entity-index contiguity and reference resolution.
pub(crate) fn reference_diagnostics(script: &Script, loc: &dyn Locator) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (kind, defs) in [(EntityKind::Character, &script.characters), (EntityKind::Environment, &script.environments)] {
        let mut indices: Vec<u32> = defs.iter().map(|d| d.index).collect();
        indices.sort_unstable();
        let mut expected = 1;
        for (i, &idx) in indices.iter().enumerate() {
            if i > 0 && indices[i - 1] == idx {
                out.push(Diagnostic::new(
                    DiagCode::DuplicateEntityIndex,
                    loc.entity(kind, idx),
                    format!("<{}{}> is defined more than once", kind.token_name(), idx),
                ));
                continue;
            }
            if idx != expected {
                out.push(Diagnostic::new(
                    DiagCode::NonContiguousIndex,
                    loc.entity(kind, idx),
                    format!("<{name}{idx}> defined but <{name}{expected}> is missing", name = kind.token_name()),
                ));
            }
            expected = idx + 1;
        }
    }
    for shot in &script.shots {
        for (field, text) in [(Field::Frame, &shot.frame_description), (Field::Video, &shot.video_description)] {
            for (run_idx, run) in text.runs.iter().enumerate() {
                if let Run::Ref(r) = run {
                    if !script.declares(*r) {
                        out.push(Diagnostic::new(
                            DiagCode::UnresolvedReference,
                            loc.reference(shot.index, field, run_idx),
                            format!("{r} does not refer to a defined {}", r.kind.token_name().to_lowercase()),
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Shot indices must run 1..=n without repeats.
pub(crate) fn shot_index_diagnostics(script: &Script, loc: &dyn Locator) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut indices: Vec<u32> = script.shots.iter().map(|s| s.index).collect();
    indices.sort_unstable();
    let mut expected = 1;
    for (i, &idx) in indices.iter().enumerate() {
        if i > 0 && indices[i - 1] == idx {
            out.push(Diagnostic::new(
                DiagCode::DuplicateSection,
                loc.shot(idx),
                format!("shot {idx} appears more than once"),
            ));
            continue;
        }
        if idx != expected {
            out.push(Diagnostic::new(
                DiagCode::NonContiguousIndex,
                loc.shot(idx),
                format!("<Frame{idx}> found where <Frame{expected}> was expected"),
            ));
        }
        expected = idx + 1;
    }
    out
}
