use rand::Rng;

use super::DataError;
use crate::script::{MarkerKind, ModeMarker, PromptStyle, Script, Shot};

/// System prompt attached to `<Continuation>` markers. The wording is
/// arbitrary; only its presence matters to the model.
pub const CONTINUATION_PROMPT: &str = "Continue the story with the next shot.";

/// Longest extractive summary, in words.
pub const SUMMARY_MAX_WORDS: usize = 40;

fn check_unsplit(s: &Script) -> Result<(), DataError> {
    if s.mode_marker.is_some() {
        return Err(DataError::AlreadySplit);
    }
    Ok(())
}

/// Inserts `<Extension>` and `prompt` between shots `k` and `k + 1`.
pub fn split_for_extension(s: &Script, k: u32, prompt: &str) -> Result<Script, DataError> {
    check_unsplit(s)?;
    let n = s.shots.len() as u32;
    if k < 1 || k >= n {
        return Err(DataError::IndexOutOfRange { index: k, shots: n });
    }
    Ok(Script {
        mode_marker: Some(ModeMarker { kind: MarkerKind::Extension, before_shot: k + 1, prompt: prompt.to_string() }),
        ..s.clone()
    })
}

/// Inserts `<Continuation>` and `system_prompt` before the last shot.
pub fn split_for_continuation(s: &Script, system_prompt: &str) -> Result<Script, DataError> {
    check_unsplit(s)?;
    let n = s.shots.len() as u32;
    if n < 2 {
        return Err(DataError::TooFewShots { found: n });
    }
    Ok(Script {
        mode_marker: Some(ModeMarker {
            kind: MarkerKind::Continuation,
            before_shot: n,
            prompt: system_prompt.to_string(),
        }),
        ..s.clone()
    })
}

/// Removes an inserted marker and its prompt.
pub fn strip_split(s: &Script) -> Script {
    s.without_marker()
}

fn first_sentence(text: &str) -> &str {
    let mut prev_end = false;
    for (i, c) in text.char_indices() {
        if prev_end && c.is_whitespace() {
            return &text[..i];
        }
        prev_end = matches!(c, '.' | '!' | '?');
    }
    text
}

/// Deterministic stand-in for an abstractive summary: the first sentence of
/// each shot's video description, in shot order, cut to 40 words.
pub fn extractive_summary(shots: &[Shot]) -> Result<String, DataError> {
    if shots.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let words: Vec<String> = shots
        .iter()
        .flat_map(|shot| {
            let flat = shot.video_description.plain_text();
            let sentence = first_sentence(flat.trim()).to_string();
            sentence.split_whitespace().map(|w| w.replace(['<', '>'], "")).filter(|w| !w.is_empty()).collect::<Vec<_>>()
        })
        .take(SUMMARY_MAX_WORDS)
        .collect();
    Ok(words.join(" "))
}

/// One of the four user-prompt styles, uniformly.
pub fn sample_prompt_style<R: Rng + ?Sized>(rng: &mut R) -> PromptStyle {
    PromptStyle::new(rng.gen_range(1..=4)).expect("1..=4 is a valid style")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{parse_script, serialize_script, AnnotatedText};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four_shots() -> Script {
        parse_script(
            "<User> [style=1] x\n\
             <Frame1> a\n<Video1> One goes.\n\
             <Frame2> b\n<Video2> Two goes. Then more.\n\
             <Frame3> c\n<Video3> Three goes!\n\
             <Frame4> d\n<Video4> Four goes\n",
        )
        .unwrap()
    }

    #[test]
    fn extension_marker_between_shots() {
        let s = split_for_extension(&four_shots(), 2, "a new turn").unwrap();
        let text = serialize_script(&s).unwrap();
        assert!(text.contains("<Video2> Two goes. Then more.\n<Extension> a new turn\n<Frame3>"));
        assert_eq!(s.mode_marker.as_ref().unwrap().split_index(), 2);
    }

    #[test]
    fn extension_bounds() {
        let s = four_shots();
        assert!(matches!(split_for_extension(&s, 4, "p"), Err(DataError::IndexOutOfRange { .. })));
        assert!(matches!(split_for_extension(&s, 0, "p"), Err(DataError::IndexOutOfRange { .. })));
        assert!(split_for_extension(&s, 3, "p").is_ok());
    }

    #[test]
    fn continuation_before_last_shot() {
        let two = parse_script("<User> x\n<Frame1> a\n<Video1> b\n<Frame2> c\n<Video2> d\n").unwrap();
        let s = split_for_continuation(&two, CONTINUATION_PROMPT).unwrap();
        let text = serialize_script(&s).unwrap();
        assert!(text.contains("<Video1> b\n<Continuation> Continue the story with the next shot.\n<Frame2>"));
        let one = parse_script("<User> x\n<Frame1> a\n<Video1> b\n").unwrap();
        assert!(matches!(split_for_continuation(&one, "p"), Err(DataError::TooFewShots { found: 1 })));
    }

    #[test]
    fn strip_restores_bytes() {
        let s = four_shots();
        let split = split_for_extension(&s, 1, "p").unwrap();
        assert_eq!(serialize_script(&strip_split(&split)).unwrap(), serialize_script(&s).unwrap());
    }

    #[test]
    fn summary_of_one_sentence_is_that_sentence() {
        let shot = Shot {
            index: 1,
            frame_description: AnnotatedText::plain("f"),
            video_description: AnnotatedText::plain("The ship leaves the harbor."),
            keyframe_ref: None,
        };
        assert_eq!(extractive_summary(&[shot]).unwrap(), "The ship leaves the harbor.");
    }

    #[test]
    fn summary_follows_shot_order() {
        let s = four_shots();
        assert_eq!(extractive_summary(&s.shots[1..3]).unwrap(), "Two goes. Three goes!");
        assert!(matches!(extractive_summary(&[]), Err(DataError::EmptyInput)));
    }

    #[test]
    fn style_sequence_is_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32).map(|_| sample_prompt_style(&mut rng).get()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }
}
