//! Procedural glyph keyframes.
//!
//! The image is split into a 2×2 grid of regions. Character k always draws
//! its glyph in region (k - 1) mod 3, so a glyph's position names the
//! character. Region 3 holds a bar whose length encodes the shot index, and
//! the background takes the color of the lowest-indexed environment present.
//! Entity colors are a seeded permutation of fixed palettes, so identity is
//! only recoverable by looking at earlier frames of the same script.
//!
//! Every drawn feature is constant over aligned 4×4 pixel cells (plus a
//! per-cell checker on the background), which keeps the images exactly
//! inside the range of the latent stand-in encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::script::{EntityKind, EntityRef};

const CHARACTER_PALETTE: [[u8; 3]; 10] = [
    [230, 40, 40],
    [40, 200, 60],
    [50, 80, 230],
    [240, 210, 30],
    [220, 60, 220],
    [30, 210, 220],
    [250, 140, 20],
    [140, 60, 200],
    [250, 250, 250],
    [10, 10, 10],
];

const ENVIRONMENT_PALETTE: [[u8; 3]; 6] =
    [[70, 90, 120], [120, 100, 70], [60, 120, 80], [130, 70, 90], [100, 100, 100], [150, 140, 110]];

/// Regions 0..3 hold character glyphs; region 3 holds the shot marker.
const CHARACTER_REGIONS: usize = 3;

const NEUTRAL_BACKGROUND: [u8; 3] = [128, 128, 128];
const BACKGROUND_CHECKER: u8 = 8;
const MARKER_COLOR: [u8; 3] = [255, 255, 255];

fn rgb(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| v as f64 / 255.0)
}

/// Seeded color assignment for one script's entities.
#[derive(Debug, Clone)]
pub struct Appearance {
    characters: Vec<[u8; 3]>,
    environments: Vec<[u8; 3]>,
}

impl Appearance {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut characters = CHARACTER_PALETTE.to_vec();
        characters.shuffle(&mut rng);
        let mut environments = ENVIRONMENT_PALETTE.to_vec();
        environments.shuffle(&mut rng);
        Self { characters, environments }
    }

    pub fn color(&self, r: EntityRef) -> [u8; 3] {
        let pool = match r.kind {
            EntityKind::Character => &self.characters,
            EntityKind::Environment => &self.environments,
        };
        pool[(r.index as usize - 1) % pool.len()]
    }
}

/// Renders the keyframe for a shot showing `entities`.
///
/// `size` must be a positive multiple of 16.
pub fn render_keyframe(entities: &[EntityRef], shot_index: u32, appearance_seed: u64, size: usize) -> Image {
    assert!(size >= 16 && size % 16 == 0, "keyframe size must be a multiple of 16");
    let look = Appearance::from_seed(appearance_seed);
    let mut sorted = entities.to_vec();
    sorted.sort();
    sorted.dedup();
    let background =
        sorted.iter().find(|e| e.kind == EntityKind::Environment).map_or(NEUTRAL_BACKGROUND, |&e| look.color(e));

    let mut img = Image::new(size, size);
    let light = rgb(background.map(|v| v + BACKGROUND_CHECKER));
    let dark = rgb(background.map(|v| v - BACKGROUND_CHECKER));
    for y in 0..size {
        for x in 0..size {
            let px = if (x + y) % 2 == 0 { light } else { dark };
            for (c, v) in px.into_iter().enumerate() {
                img.set(y, x, c, v);
            }
        }
    }

    let region = size / 2;
    let glyph = region / 2;
    let offset = (region - glyph) / 2 / 4 * 4;
    let origin = |slot: usize| ((slot / 2) * region, (slot % 2) * region);
    // Ascending order, so with more than three characters a higher index
    // draws over a lower one sharing its region.
    for &c in sorted.iter().filter(|e| e.kind == EntityKind::Character) {
        let (y0, x0) = origin((c.index as usize - 1) % CHARACTER_REGIONS);
        img.fill_rect(y0 + offset, x0 + offset, glyph, glyph, rgb(look.color(c)));
    }

    let (y0, x0) = origin(3);
    let cells_per_row = region / 4;
    let lit = ((shot_index.max(1) - 1) as usize % (cells_per_row * 2)) + 1;
    for k in 0..lit {
        let (row, col) = (k / cells_per_row, k % cells_per_row);
        img.fill_rect(y0 + row * 4, x0 + col * 4, 4, 4, rgb(MARKER_COLOR));
    }
    img
}
