//! Random script generator over the synthetic lexicon.

use rand::seq::SliceRandom;
use rand::Rng;

use super::lexicon::Lexicon;
use super::split::sample_prompt_style;
use crate::script::{AnnotatedText, DialogueSpan, EntityDef, EntityKind, EntityRef, Script, Shot, UserPrompt};

/// Most characters a single shot shows (one glyph slot each).
pub const MAX_CHARACTERS_PER_SHOT: usize = 3;

#[derive(Debug, Clone, Copy)]
pub struct ScriptShape {
    pub shots: u32,
    pub characters: u32,
    pub environments: u32,
}

/// A generated script plus the dialogue spans planted in it, in document
/// order.
#[derive(Debug, Clone)]
pub struct GeneratedScript {
    pub script: Script,
    pub planted_dialogue: Vec<(u32, DialogueSpan)>,
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).copied().expect("non-empty pool")
}

pub fn generate_script<R: Rng>(rng: &mut R, lex: &Lexicon, shape: ScriptShape) -> GeneratedScript {
    let mut nouns = lex.character_nouns.clone();
    nouns.shuffle(rng);
    let characters: Vec<EntityDef> = (1..=shape.characters)
        .map(|k| {
            let adj = pick(rng, &lex.character_adjectives);
            let noun = nouns[(k as usize - 1) % nouns.len()];
            let cadj = pick(rng, &lex.clothing_adjectives);
            let cloth = pick(rng, &lex.clothing);
            EntityDef {
                kind: EntityKind::Character,
                index: k,
                caption: format!("a {adj} {noun} in a {cadj} {cloth}"),
                short_caption: format!("{adj} {noun}"),
            }
        })
        .collect();
    let mut places = lex.places.clone();
    places.shuffle(rng);
    let environments: Vec<EntityDef> = (1..=shape.environments)
        .map(|k| {
            let adj = pick(rng, &lex.environment_adjectives);
            let place = places[(k as usize - 1) % places.len()];
            let time = pick(rng, &lex.times);
            EntityDef {
                kind: EntityKind::Environment,
                index: k,
                caption: format!("a {adj} {place} at {time}"),
                short_caption: format!("{adj} {place}"),
            }
        })
        .collect();

    let noun_of = |e: &EntityDef| e.short_caption.rsplit(' ').next().unwrap_or("").to_string();
    let style = sample_prompt_style(rng);
    let lead = characters.first().map(noun_of).unwrap_or_else(|| "stranger".into());
    let place = environments.first().map(noun_of).unwrap_or_else(|| "city".into());
    let user_text = match style.get() {
        1 => format!(
            "a {} {lead} {} in the {place} while {}",
            pick(rng, &lex.character_adjectives),
            pick(rng, &lex.actions),
            pick(rng, &lex.sounds)
        ),
        2 => format!("the {} of a {lead}", pick(rng, &lex.abstracts)),
        3 => format!(
            "a photo, {} {lead}, {place}, {} shot, {}",
            pick(rng, &lex.character_adjectives),
            pick(rng, &lex.shot_types),
            pick(rng, &lex.moods)
        ),
        _ => format!("make a video of a {lead} in the {place}, keep it {}", pick(rng, &lex.moods)),
    };

    let mut planted = Vec::new();
    let mut shots = Vec::new();
    for i in 1..=shape.shots {
        let mut frame = AnnotatedText::new();
        frame.push_text(format!("{} shot of the ", pick(rng, &lex.shot_types)));
        if !environments.is_empty() {
            let env = &environments[rng.gen_range(0..environments.len())];
            frame.push_text(env.short_caption.clone());
            frame.push_ref(env.entity_ref());
        } else {
            frame.push_text("city");
        }
        let mut cast: Vec<&EntityDef> = characters.iter().collect();
        cast.shuffle(rng);
        let on_screen = if cast.is_empty() { 0 } else { rng.gen_range(1..=cast.len().min(MAX_CHARACTERS_PER_SHOT)) };
        cast.truncate(on_screen);
        for (j, c) in cast.iter().enumerate() {
            frame.push_text(if j == 0 { ", a " } else { " and a " });
            frame.push_text(c.short_caption.clone());
            frame.push_ref(c.entity_ref());
        }
        frame.push_text(format!(" {}.", pick(rng, &lex.poses)));

        let mut video = AnnotatedText::new();
        match cast.first() {
            Some(c) => {
                video.push_text(format!("the {}", noun_of(c)));
                video.push_ref(c.entity_ref());
            }
            None => {
                video.push_text("the camera");
            }
        }
        video.push_text(format!(" {} {}.", pick(rng, &lex.actions), pick(rng, &lex.manners)));
        if let Some(speaker) = cast.choose(rng) {
            if rng.gen_bool(0.6) {
                let span = DialogueSpan::dialogue(pick(rng, &lex.dialogue_lines));
                video.push_text(format!(" the {}", noun_of(speaker)));
                video.push_ref(speaker.entity_ref());
                video.push_text(" says ");
                planted.push((i, span.clone()));
                video.push_span(span);
                video.push_text(".");
            }
        }
        if rng.gen_bool(0.4) {
            let span = DialogueSpan::sound(pick(rng, &lex.sounds));
            video.push_text(" ");
            planted.push((i, span.clone()));
            video.push_span(span);
        }
        shots.push(Shot { index: i, frame_description: frame, video_description: video, keyframe_ref: None });
    }

    GeneratedScript {
        script: Script {
            user: UserPrompt { text: user_text, style },
            characters,
            environments,
            shots,
            mode_marker: None,
        },
        planted_dialogue: planted,
    }
}

/// Replaces `count` entity references with references to undeclared
/// entities. Returns how many were planted (fewer if the script has fewer
/// references).
pub fn plant_bad_references<R: Rng>(rng: &mut R, script: &mut Script, count: usize) -> usize {
    let mut slots = Vec::new();
    for (si, shot) in script.shots.iter().enumerate() {
        for (field, text) in [(0, &shot.frame_description), (1, &shot.video_description)] {
            for (ri, run) in text.runs.iter().enumerate() {
                if matches!(run, crate::script::Run::Ref(_)) {
                    slots.push((si, field, ri));
                }
            }
        }
    }
    slots.shuffle(rng);
    let max_char = script.characters.len() as u32;
    let max_env = script.environments.len() as u32;
    let mut planted = 0;
    for &(si, field, ri) in slots.iter().take(count) {
        let bad = if rng.gen_bool(0.5) {
            EntityRef::character(max_char + 1 + rng.gen_range(0..3))
        } else {
            EntityRef::environment(max_env + 1 + rng.gen_range(0..3))
        };
        let shot = &mut script.shots[si];
        let text = if field == 0 { &mut shot.frame_description } else { &mut shot.video_description };
        text.runs[ri] = crate::script::Run::Ref(bad);
        planted += 1;
    }
    planted
}
