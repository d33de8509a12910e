//! Frozen stand-ins for the image encoders, latent patching, and timestep
//! features.
//!
//! The latent encoder maps every 8×8 RGB block to 16 coefficients: for each
//! 4×4 quadrant, one constant per color channel plus a gray checkerboard.
//! The 16 basis vectors are orthonormal, so decoding is the transpose of
//! encoding. Images built from those patterns (all rendered keyframes) are
//! reproduced exactly; anything else comes back as its projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{MoTConfig, ModelError};
use crate::image::Image;
use crate::tensor::Tensor;

/// Side of the square block each latent cell summarizes.
pub const LATENT_BLOCK: usize = 8;
/// Latent channels produced per block.
pub const LATENT_CHANNELS: usize = 16;

const VIT_PROJECTION_SEED: u64 = 0x5649_545f_5354_5542;

/// Latent grid stored channel-major: `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Latent {
    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    /// Population variance of all entries.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

/// Value of basis vector `k` at pixel `(dy, dx)` of a block, channel `ch`.
fn basis(k: usize, dy: usize, dx: usize, ch: usize) -> f64 {
    let quadrant = (dy / 4) * 2 + dx / 4;
    if k / 4 != quadrant {
        return 0.0;
    }
    match k % 4 {
        pattern @ 0..=2 => {
            if pattern == ch {
                0.25
            } else {
                0.0
            }
        }
        _ => {
            let sign = if (dy + dx) % 2 == 0 { 1.0 } else { -1.0 };
            sign / 48f64.sqrt()
        }
    }
}

fn check_dims(h: usize, w: usize, factor: usize) -> Result<(), ModelError> {
    if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
        return Err(ModelError::BadDimensions(format!("{h}x{w} image is not divisible by {factor}")));
    }
    Ok(())
}

pub fn vae_stub_encode(img: &Image) -> Result<Latent, ModelError> {
    check_dims(img.height, img.width, LATENT_BLOCK)?;
    let (h, w) = (img.height / LATENT_BLOCK, img.width / LATENT_BLOCK);
    let mut lat = Latent { channels: LATENT_CHANNELS, height: h, width: w, data: vec![0.0; LATENT_CHANNELS * h * w] };
    for by in 0..h {
        for bx in 0..w {
            for dy in 0..LATENT_BLOCK {
                for dx in 0..LATENT_BLOCK {
                    for ch in 0..3 {
                        let centered = 2.0 * img.get(by * LATENT_BLOCK + dy, bx * LATENT_BLOCK + dx, ch) - 1.0;
                        if centered == 0.0 {
                            continue;
                        }
                        for k in 0..LATENT_CHANNELS {
                            let b = basis(k, dy, dx, ch);
                            if b != 0.0 {
                                let i = lat.idx(k, by, bx);
                                lat.data[i] += centered * b;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(lat)
}

pub fn vae_stub_decode(lat: &Latent) -> Result<Image, ModelError> {
    if lat.channels != LATENT_CHANNELS || lat.data.len() != lat.channels * lat.height * lat.width {
        return Err(ModelError::BadDimensions(format!("latent with {} channels", lat.channels)));
    }
    let mut img = Image::new(lat.height * LATENT_BLOCK, lat.width * LATENT_BLOCK);
    for by in 0..lat.height {
        for bx in 0..lat.width {
            for dy in 0..LATENT_BLOCK {
                for dx in 0..LATENT_BLOCK {
                    for ch in 0..3 {
                        let v: f64 = (0..LATENT_CHANNELS).map(|k| lat.get(k, by, bx) * basis(k, dy, dx, ch)).sum();
                        img.set(by * LATENT_BLOCK + dy, bx * LATENT_BLOCK + dx, ch, (v + 1.0) / 2.0);
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Groups `patch × patch` latent cells into tokens of width
/// `channels · patch²`, row-major over the patch grid.
pub fn patchify(lat: &Latent, patch: usize) -> Result<Tensor, ModelError> {
    check_dims(lat.height, lat.width, patch)?;
    let (gh, gw) = (lat.height / patch, lat.width / patch);
    let dim = lat.channels * patch * patch;
    let mut data = Vec::with_capacity(gh * gw * dim);
    for py in 0..gh {
        for px in 0..gw {
            for c in 0..lat.channels {
                for dy in 0..patch {
                    for dx in 0..patch {
                        data.push(lat.get(c, py * patch + dy, px * patch + dx));
                    }
                }
            }
        }
    }
    Ok(Tensor::matrix(gh * gw, dim, data).expect("sizes agree"))
}

/// Inverse of [`patchify`] for a square grid.
pub fn unpatchify(tokens: &Tensor, channels: usize, patch: usize) -> Result<Latent, ModelError> {
    let grid = (tokens.rows() as f64).sqrt().round() as usize;
    if grid * grid != tokens.rows() || tokens.cols() != channels * patch * patch {
        return Err(ModelError::BadDimensions(format!("cannot unpatchify {:?}", tokens.shape())));
    }
    let side = grid * patch;
    let mut lat = Latent { channels, height: side, width: side, data: vec![0.0; channels * side * side] };
    for py in 0..grid {
        for px in 0..grid {
            let row = tokens.row(py * grid + px);
            let mut f = 0;
            for c in 0..channels {
                for dy in 0..patch {
                    for dx in 0..patch {
                        let i = lat.idx(c, py * patch + dy, px * patch + dx);
                        lat.data[i] = row[f];
                        f += 1;
                    }
                }
            }
        }
    }
    Ok(lat)
}

/// Frozen linear patch projection standing in for a pretrained ViT.
#[derive(Debug, Clone, PartialEq)]
pub struct VitStub {
    patch: usize,
    width: usize,
    /// `[3 · patch², width]`, row-major.
    projection: Vec<f64>,
}

impl VitStub {
    pub fn new(patch: usize, width: usize) -> Self {
        let fan_in = 3 * patch * patch;
        let mut rng = ChaCha8Rng::seed_from_u64(VIT_PROJECTION_SEED);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let projection = (0..fan_in * width)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Self { patch, width, projection }
    }

    pub fn for_config(cfg: &MoTConfig) -> Self {
        Self::new(cfg.vit_patch, cfg.vit_width)
    }

    /// One row of `width` features per patch, row-major over the patch grid.
    pub fn encode(&self, img: &Image) -> Result<Tensor, ModelError> {
        check_dims(img.height, img.width, self.patch)?;
        let (gh, gw) = (img.height / self.patch, img.width / self.patch);
        let fan_in = 3 * self.patch * self.patch;
        let mut patch = vec![0.0; fan_in];
        let mut out = vec![0.0; gh * gw * self.width];
        for py in 0..gh {
            for px in 0..gw {
                let mut f = 0;
                for dy in 0..self.patch {
                    for dx in 0..self.patch {
                        for ch in 0..3 {
                            patch[f] = 2.0 * img.get(py * self.patch + dy, px * self.patch + dx, ch) - 1.0;
                            f += 1;
                        }
                    }
                }
                let row = py * gw + px;
                crate::tensor::matmul_into(
                    &mut out[row * self.width..(row + 1) * self.width],
                    &patch,
                    &self.projection,
                    1,
                    fan_in,
                    self.width,
                );
            }
        }
        Ok(Tensor::matrix(gh * gw, self.width, out).expect("sizes agree"))
    }
}

/// Sinusoidal features of a flow time `t ∈ [0, 1]`: `sin(ω_i t)` for the
/// first half and `cos(ω_i t)` for the second, with `ω_i` spaced
/// geometrically from 1 to 1000.
pub fn time_features(t: f64, width: usize) -> Result<Vec<f64>, ModelError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ModelError::TimeOutOfRange(t));
    }
    let half = width / 2;
    let freq = |i: usize| if half > 1 { 1000f64.powf(i as f64 / (half - 1) as f64) } else { 1.0 };
    let mut out: Vec<f64> = (0..half).map(|i| (freq(i) * t).sin()).collect();
    out.extend((0..half).map(|i| (freq(i) * t).cos()));
    Ok(out)
}
