//! Split-level attention masks.
//!
//! Query `q` may attend to key `k` when
//!
//! * `k`'s split comes before `q`'s split,
//! * both sit in the same TEXT split and `k <= q`, or
//! * both sit in the same vision group: an ID_PROMPT split together with
//!   the vision split right after it, or a lone vision split.
//!
//! [`compile_mask`] fills whole blocks per split pair. [`oracle_mask`]
//! evaluates the rule independently for every position pair and exists to
//! cross-check it.

use std::fmt::Write as _;

use thiserror::Error;

use crate::layout::{Role, SequenceLayout};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("malformed bitmap: {0}")]
    Malformed(String),
}

/// Dense `n × n` relation, row = query, column = key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn new(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(n);
        for q in 0..n {
            for k in 0..n {
                m.bits[q * n + k] = f(q, k);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, q: usize, k: usize) -> bool {
        self.bits[q * self.n + k]
    }

    pub fn set(&mut self, q: usize, k: usize, v: bool) {
        self.bits[q * self.n + k] = v;
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.bits[q * self.n..(q + 1) * self.n]
    }

    /// Row-major bits.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn fill(&mut self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) {
        for q in rows {
            self.bits[q * self.n + cols.start..q * self.n + cols.end].fill(true);
        }
    }
}

/// Index of the first split in each split's vision group, or `None` for
/// TEXT splits.
fn group_leaders(layout: &SequenceLayout) -> Vec<Option<usize>> {
    let mut leaders: Vec<Option<usize>> = Vec::with_capacity(layout.splits.len());
    for (i, s) in layout.splits.iter().enumerate() {
        let leader = match s.role {
            Role::Text => None,
            Role::IdPrompt => Some(i),
            _ => match i.checked_sub(1).map(|j| &layout.splits[j]) {
                Some(prev) if prev.role == Role::IdPrompt && leaders[i - 1] == Some(i - 1) => Some(i - 1),
                _ => Some(i),
            },
        };
        leaders.push(leader);
    }
    leaders
}

pub fn compile_mask(layout: &SequenceLayout) -> Result<AttentionMask, MaskError> {
    layout.check_partition().map_err(|e| MaskError::InvalidLayout(e.to_string()))?;
    let mut m = AttentionMask::new(layout.len());
    let leaders = group_leaders(layout);
    for (i, s) in layout.splits.iter().enumerate() {
        let rows = s.start..s.end();
        m.fill(rows.clone(), 0..s.start);
        match leaders[i] {
            None => {
                for q in rows {
                    m.fill(q..q + 1, s.start..q + 1);
                }
            }
            Some(leader) => {
                let group_end = layout.splits[leader..]
                    .iter()
                    .zip(&leaders[leader..])
                    .take_while(|(_, l)| **l == Some(leader))
                    .last()
                    .map_or(s.end(), |(sp, _)| sp.end());
                m.fill(rows, s.start..group_end);
            }
        }
    }
    Ok(m)
}

/// Per-pair evaluation of the attention rule from the split list alone.
pub fn oracle_mask(layout: &SequenceLayout) -> Result<AttentionMask, MaskError> {
    layout.check_partition().map_err(|e| MaskError::InvalidLayout(e.to_string()))?;
    let splits = &layout.splits;
    let owner = |p: usize| splits.iter().position(|s| s.start <= p && p < s.start + s.len).expect("partition");
    let pairs_with_next = |a: usize| {
        splits[a].role == Role::IdPrompt
            && splits.get(a + 1).is_some_and(|b| b.role != Role::Text && b.role != Role::IdPrompt)
    };
    let same_group = |a: usize, b: usize| {
        if splits[a].role == Role::Text || splits[b].role == Role::Text {
            return false;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        lo == hi || (hi == lo + 1 && pairs_with_next(lo))
    };
    Ok(AttentionMask::from_fn(layout.len(), |q, k| {
        let (a, b) = (owner(q), owner(k));
        b < a || (a == b && splits[a].role == Role::Text && k <= q) || same_group(a, b)
    }))
}

/// Plain PBM (P1) text, one row per line, `1` where attention is allowed.
pub fn render_mask(m: &AttentionMask) -> String {
    let mut out = format!("P1\n{} {}\n", m.n, m.n);
    for q in 0..m.n {
        let row: Vec<&str> = m.row(q).iter().map(|&b| if b { "1" } else { "0" }).collect();
        writeln!(out, "{}", row.join(" ")).expect("writing to a String cannot fail");
    }
    out
}

/// Parses a square plain PBM.
pub fn parse_mask(text: &str) -> Result<AttentionMask, MaskError> {
    let bad = |m: &str| MaskError::Malformed(m.to_string());
    let body: String = text.lines().map(|l| l.split('#').next().unwrap_or("")).collect::<Vec<_>>().join("\n");
    let mut words = body.split_whitespace();
    if words.next() != Some("P1") {
        return Err(bad("missing P1 magic"));
    }
    let mut dim = || -> Result<usize, MaskError> {
        words.next().and_then(|w| w.parse().ok()).ok_or_else(|| bad("bad dimensions"))
    };
    let (w, h) = (dim()?, dim()?);
    if w != h {
        return Err(bad("mask bitmap must be square"));
    }
    let digits: Vec<bool> = body
        .split_whitespace()
        .skip(3)
        .flat_map(|w| w.chars())
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(bad("pixel values must be 0 or 1")),
        })
        .collect::<Result<_, _>>()?;
    if digits.len() != w * h {
        return Err(bad("pixel count does not match dimensions"));
    }
    Ok(AttentionMask { n: w, bits: digits })
}
