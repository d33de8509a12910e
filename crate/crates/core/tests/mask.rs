mod common;

use common::layout_from;
use proptest::prelude::*;
use reel::layout::{Role, SequenceLayout};
use reel::mask::{compile_mask, oracle_mask, parse_mask, render_mask, AttentionMask};

fn pieces() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..5, 1usize..=10), 1..=12)
        .prop_map(|mut v| {
            // Trim to at most 64 positions.
            let mut total = 0;
            v.retain(|&(_, len)| {
                total += len;
                total <= 64
            });
            v
        })
        .prop_filter("non-empty", |v| !v.is_empty())
}

fn owner(l: &SequenceLayout, p: usize) -> usize {
    l.split_of[p]
}

/// Pairs an ID_PROMPT split with the vision split right after it.
fn grouped(l: &SequenceLayout, a: usize, b: usize) -> bool {
    let (lo, hi) = (a.min(b), a.max(b));
    let sl = &l.splits;
    if sl[lo].role == Role::Text || sl[hi].role == Role::Text {
        return false;
    }
    lo == hi || (hi == lo + 1 && sl[lo].role == Role::IdPrompt && sl[hi].role.is_vision())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn compiled_mask_matches_oracle(p in pieces()) {
        let l = layout_from(&p);
        prop_assert_eq!(compile_mask(&l).unwrap(), oracle_mask(&l).unwrap());
    }

    #[test]
    fn mask_obeys_the_split_rules(p in pieces()) {
        let l = layout_from(&p);
        let m = compile_mask(&l).unwrap();
        for q in 0..l.len() {
            prop_assert!(m.get(q, q));
            for k in 0..l.len() {
                let (a, b) = (owner(&l, q), owner(&l, k));
                if b < a {
                    prop_assert!(m.get(q, k), "earlier split hidden at ({q},{k})");
                } else if b > a && !grouped(&l, a, b) {
                    prop_assert!(!m.get(q, k), "later split visible at ({q},{k})");
                } else if a == b && l.splits[a].role == Role::Text {
                    prop_assert_eq!(m.get(q, k), k <= q);
                } else if grouped(&l, a, b) {
                    prop_assert!(m.get(q, k), "group not bidirectional at ({q},{k})");
                }
            }
        }
    }

    #[test]
    fn bitmap_round_trips(p in pieces()) {
        let m = compile_mask(&layout_from(&p)).unwrap();
        prop_assert_eq!(parse_mask(&render_mask(&m)).unwrap(), m);
    }
}

#[test]
fn single_text_split_is_causal() {
    let m = compile_mask(&layout_from(&[(0, 4)])).unwrap();
    assert_eq!(m, AttentionMask::from_fn(4, |q, k| k <= q));
    assert_eq!(render_mask(&AttentionMask::from_fn(2, |q, k| k <= q)), "P1\n2 2\n1 0\n1 1\n");
}

#[test]
fn id_prompt_shares_its_image_region() {
    // TEXT(2), ID_PROMPT(1), VIT(2)
    let l = layout_from(&[(0, 2), (1, 1), (2, 2)]);
    let m = compile_mask(&l).unwrap();
    for q in 2..5 {
        for k in 0..5 {
            assert!(m.get(q, k), "({q},{k})");
        }
    }
    assert!(!m.get(0, 1));
    for k in 2..5 {
        assert!(!m.get(0, k) && !m.get(1, k));
    }
}

#[test]
fn id_prompt_does_not_reach_past_its_own_image() {
    // ID_PROMPT, VIT, VAE_COND: the VAE split is its own group.
    let l = layout_from(&[(1, 1), (2, 2), (3, 2)]);
    let m = compile_mask(&l).unwrap();
    assert!(!m.get(0, 3) && !m.get(1, 4));
    assert!(m.get(3, 0) && m.get(3, 4) && m.get(4, 3));
}

#[test]
fn malformed_layouts_are_rejected() {
    let mut l = layout_from(&[(0, 3), (2, 2)]);
    l.splits[1].start = 2;
    assert!(compile_mask(&l).is_err());
    assert!(oracle_mask(&l).is_err());
}

#[test]
fn golden_bitmaps_are_unchanged() {
    for (name, l) in common::golden_layouts() {
        let bitmap = std::fs::read_to_string(common::golden_dir().join(format!("{name}.pbm"))).unwrap();
        let dump = std::fs::read_to_string(common::golden_dir().join(format!("{name}.layout"))).unwrap();
        assert_eq!(render_mask(&compile_mask(&l).unwrap()), bitmap, "{name}");
        assert_eq!(render_mask(&oracle_mask(&l).unwrap()), bitmap, "{name}");
        assert_eq!(l.dump(), dump, "{name}");
        l.check(name != "two_shots_no_id").unwrap();
    }
}

/// Writes the golden files from the oracle. Run once with `--ignored`.
#[test]
#[ignore]
fn write_golden_bitmaps() {
    std::fs::create_dir_all(common::golden_dir()).unwrap();
    for (name, l) in common::golden_layouts() {
        std::fs::write(common::golden_dir().join(format!("{name}.pbm")), render_mask(&oracle_mask(&l).unwrap()))
            .unwrap();
        std::fs::write(common::golden_dir().join(format!("{name}.layout")), l.dump()).unwrap();
    }
}
