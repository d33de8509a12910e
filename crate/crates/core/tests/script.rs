use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reel::data::{generate_script, plant_bad_references, Lexicon, ScriptShape};
use reel::script::{parse_script, serialize_script, validate_refs, DiagCode, Script};

fn seeded_script(seed: u64) -> (Script, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ScriptShape {
        shots: rng.gen_range(1..=6),
        characters: rng.gen_range(1..=4),
        environments: rng.gen_range(1..=3),
    };
    let s = generate_script(&mut rng, &Lexicon::full(), shape).script;
    (s, rng)
}

/// Planted references: every undeclared entity mentioned in a shot body.
fn undeclared_mentions(s: &Script) -> usize {
    s.shots
        .iter()
        .flat_map(|sh| sh.frame_description.refs().chain(sh.video_description.refs()))
        .filter(|r| !s.declares(*r))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_then_parse_is_identity(seed in any::<u64>()) {
        let (s, _) = seeded_script(seed);
        let text = serialize_script(&s).unwrap();
        let back = parse_script(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(serialize_script(&back).unwrap(), text);
        prop_assert!(validate_refs(&s).is_empty());
    }

    #[test]
    fn every_planted_reference_error_is_reported(seed in any::<u64>(), count in 1usize..=4) {
        let (mut s, mut rng) = seeded_script(seed);
        let planted = plant_bad_references(&mut rng, &mut s, count);
        prop_assume!(planted > 0);
        prop_assert_eq!(undeclared_mentions(&s), planted);
        let diags = validate_refs(&s);
        prop_assert_eq!(diags.len(), planted, "{:?}", diags);
        prop_assert!(diags.iter().all(|d| d.code == DiagCode::UnresolvedReference));
    }
}

/// Byte offsets of entity tokens inside shot lines, with their line numbers.
fn shot_line_refs(text: &str) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (ln, line) in text.split_inclusive('\n').enumerate() {
        if line.starts_with("<Frame") || line.starts_with("<Video") {
            let body = line.find('>').expect("shot token") + 1;
            for (i, _) in line[body..].match_indices("<Character").chain(line[body..].match_indices("<Environment")) {
                let len = line[body + i..].find('>').unwrap() + 1;
                out.push((ln + 1, offset + body + i, len));
            }
        }
        offset += line.len();
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parser_reports_bad_references_in_source_text(seed in any::<u64>(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..=3)) {
        let (s, _) = seeded_script(seed);
        let text = serialize_script(&s).unwrap();
        let refs = shot_line_refs(&text);
        prop_assume!(!refs.is_empty());
        let mut chosen: Vec<_> = picks.iter().map(|p| refs[p.index(refs.len())]).collect();
        chosen.sort();
        chosen.dedup();
        let mut mutated = text.clone();
        // Replace from the back so earlier offsets stay valid.
        for &(_, at, len) in chosen.iter().rev() {
            let bad = if mutated[at..].starts_with("<Character") {
                format!("<Character{}>", s.characters.len() + 1)
            } else {
                format!("<Environment{}>", s.environments.len() + 1)
            };
            mutated.replace_range(at..at + len, &bad);
        }
        let diags = parse_script(&mutated).unwrap_err();
        prop_assert_eq!(diags.len(), chosen.len(), "{:?}", diags);
        for (d, &(line, _, _)) in diags.iter().zip(&chosen) {
            prop_assert_eq!(d.code, DiagCode::UnresolvedReference);
            prop_assert_eq!(d.pos.line, line);
        }
    }
}
