#![allow(dead_code)]

use reel::data::render_keyframe;
use reel::image::Image;
use std::path::PathBuf;

use rand::Rng;
use reel::layout::{LayoutBuilder, Role, SequenceLayout, SpecialLimits, Vocabulary};
use reel::model::MoTConfig;
use reel::script::{parse_script, serialize_script, EntityRef, Script};

pub const TWO_SHOTS: &str = "<User> [style=1] an owl at night\n\
<Character1> a grey owl | owl\n\
<Character2> a small fox | fox\n\
<Environment1> a dark wood | wood\n\
<Frame1> the owl<Character1> sits in the wood<Environment1>.\n\
<Video1> the owl<Character1> hoots <-Who?->\n\
<Frame2> the fox<Character2> looks at the owl<Character1>.\n\
<Video2> the fox<Character2> runs away.\n";

pub fn script() -> Script {
    parse_script(TWO_SHOTS).expect("fixture parses")
}

pub fn vocab_for(scripts: &[&Script]) -> Vocabulary {
    let texts: Vec<String> = scripts.iter().map(|s| serialize_script(s).expect("fixture serializes")).collect();
    Vocabulary::fitted(texts.iter().map(String::as_str), SpecialLimits { characters: 3, environments: 2, shots: 4 })
}

pub fn frames(s: &Script, size: usize) -> Vec<Image> {
    s.shots.iter().map(|shot| render_keyframe(&shot.frame_entities(), shot.index, 7, size)).collect()
}

pub fn tiny_config(vocab: usize) -> MoTConfig {
    MoTConfig {
        layers: 2,
        width: 8,
        heads: 2,
        ffn_width: 12,
        vocab,
        max_positions: 128,
        image_size: 16,
        vit_width: 6,
        time_width: 4,
        qk_scale: 4.0,
        ..MoTConfig::default()
    }
}

const ROLES: [Role; 5] = [Role::Text, Role::IdPrompt, Role::Vit, Role::VaeCond, Role::VaeGen];

/// Layout from `(role index, length)` pieces, lengths at least 1. Roles
/// follow no script grammar, so orphan and repeated ID_PROMPT splits occur.
pub fn layout_from(pieces: &[(usize, usize)]) -> SequenceLayout {
    let mut b = LayoutBuilder::new();
    for (i, &(role, len)) in pieces.iter().enumerate() {
        let role = ROLES[role % ROLES.len()];
        let shot = i as u32;
        match role {
            Role::Text => b.text(shot, &vec![7; len]),
            Role::IdPrompt => b.id_prompt(shot, Vec::new(), &vec![9; len]),
            _ => b.vision(role, shot, len),
        };
    }
    b.finish()
}

/// Random split list with total length in `1..=max_n`.
pub fn random_layout<R: Rng>(rng: &mut R, max_n: usize) -> SequenceLayout {
    let n = rng.gen_range(1..=max_n);
    let mut pieces = Vec::new();
    let mut used = 0;
    while used < n {
        let len = rng.gen_range(1..=(n - used).min(12));
        pieces.push((rng.gen_range(0..ROLES.len()), len));
        used += len;
    }
    layout_from(&pieces)
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Three fixed layouts: a one-shot generation sequence, a two-shot sequence
/// with a conditioning image, and the two-shot sequence without ID prompts.
pub fn golden_layouts() -> [(&'static str, SequenceLayout); 3] {
    let (c1, c2, e1) = (EntityRef::character(1), EntityRef::character(2), EntityRef::environment(1));
    let mut single = LayoutBuilder::new();
    single.text(0, &[1; 5]).id_prompt(1, vec![c1, e1], &[2; 3]).vision(Role::VaeGen, 1, 4);
    let two = |id: bool| {
        let mut b = LayoutBuilder::new();
        b.text(0, &[1; 4]).text(1, &[3; 3]);
        for (role, len) in [(Role::Vit, 4), (Role::VaeCond, 2)] {
            if id {
                b.id_prompt(1, vec![c1], &[2; 2]);
            }
            b.vision(role, 1, len);
        }
        b.text(2, &[4; 3]);
        if id {
            b.id_prompt(2, vec![c1, c2, e1], &[5; 4]);
        }
        b.vision(Role::VaeGen, 2, 4);
        b.finish()
    };
    [("single_shot", single.finish()), ("two_shots", two(true)), ("two_shots_no_id", two(false))]
}
