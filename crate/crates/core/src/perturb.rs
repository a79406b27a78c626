//! Stochastic input perturbations for consistency training and scoring.
//!
//! Grid-shaped samples (images, row-major `(y*w + x)*ch + c`) pass through
//! four stages in a fixed order: random affine (rotation, translation,
//! scale; bilinear resampling, zero fill outside), Gaussian blur (separable
//! kernel of radius `⌈3σ⌉`, zero-padded at borders), horizontal flip with a
//! given probability, and a zero-pad-then-random-crop back to the original
//! size. Vector-shaped samples get isotropic Gaussian noise instead.
//!
//! Randomness comes from a caller-provided stream. Each stage draws only
//! when its parameters are active (identity-parameter stages draw nothing),
//! and the draw order within a stage is fixed, so outputs are a pure
//! function of `(input, config, rng state)`. An all-identity config returns
//! the input bitwise.

use crate::data::FeatureShape;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Parameters of the perturbation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Rotation is drawn uniformly from `[-rotation_deg_max, +rotation_deg_max]` degrees.
    pub rotation_deg_max: f64,
    /// Translation per axis is drawn uniformly from `[-translate_px_max, +translate_px_max]` pixels.
    pub translate_px_max: u32,
    /// Scale is drawn uniformly from this inclusive range.
    pub scale_range: (f64, f64),
    /// Gaussian blur standard deviation; 0 disables the stage.
    pub blur_sigma: f64,
    /// Probability of a horizontal flip.
    pub hflip_prob: f64,
    /// Zero-pad width before the random crop back to the original size; 0 disables.
    pub crop_pad: u32,
    /// Standard deviation of additive noise for vector-shaped samples.
    pub vector_noise_sigma: f64,
}

impl PerturbConfig {
    /// Image profile with horizontal flips (natural images).
    pub fn images_flip() -> Self {
        Self {
            rotation_deg_max: 10.0,
            translate_px_max: 2,
            scale_range: (0.9, 1.1),
            blur_sigma: 0.1,
            hflip_prob: 0.5,
            crop_pad: 4,
            vector_noise_sigma: 0.0,
        }
    }

    /// Image profile without flips (digit-like data where flips change identity).
    pub fn images_noflip() -> Self {
        Self { hflip_prob: 0.0, ..Self::images_flip() }
    }

    /// Vector profile: additive Gaussian noise only.
    pub fn vectors() -> Self {
        Self {
            rotation_deg_max: 0.0,
            translate_px_max: 0,
            scale_range: (1.0, 1.0),
            blur_sigma: 0.0,
            hflip_prob: 0.0,
            crop_pad: 0,
            vector_noise_sigma: 0.1,
        }
    }

    /// No-op profile: every stage is inactive.
    pub fn identity() -> Self {
        Self {
            rotation_deg_max: 0.0,
            translate_px_max: 0,
            scale_range: (1.0, 1.0),
            blur_sigma: 0.0,
            hflip_prob: 0.0,
            crop_pad: 0,
            vector_noise_sigma: 0.0,
        }
    }

    /// Looks up a named profile.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "images_flip" => Ok(Self::images_flip()),
            "images_noflip" => Ok(Self::images_noflip()),
            "vectors" => Ok(Self::vectors()),
            "identity" => Ok(Self::identity()),
            other => Err(Error::Contract(format!(
                "unknown perturbation profile '{other}' (expected images_flip, images_noflip, vectors, or identity)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(msg));
        if !(self.rotation_deg_max.is_finite() && self.rotation_deg_max >= 0.0) {
            return bad(format!("rotation_deg_max {} must be >= 0", self.rotation_deg_max));
        }
        let (lo, hi) = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return bad(format!("scale_range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return bad(format!("blur_sigma {} must be >= 0", self.blur_sigma));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad(format!("hflip_prob {} must be in [0, 1]", self.hflip_prob));
        }
        if !(self.vector_noise_sigma.is_finite() && self.vector_noise_sigma >= 0.0) {
            return bad(format!("vector_noise_sigma {} must be >= 0", self.vector_noise_sigma));
        }
        Ok(())
    }
}

/// Per-sample RNG stream: one base seed, one stream per sample id, so
/// per-sample draws are independent of scoring order or chunking.
pub fn sample_rng(seed: u64, sample_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_id);
    rng
}

/// Perturbs one sample according to its feature shape: grids go through the
/// image pipeline, vectors get additive Gaussian noise.
pub fn perturb_features(
    features: &[f64],
    shape: &FeatureShape,
    cfg: &PerturbConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if features.len() != shape.len() {
        return Err(Error::Contract(format!(
            "feature length {} does not match shape ({})",
            features.len(),
            shape.len()
        )));
    }
    match *shape {
        FeatureShape::Grid { h, w, ch } => perturb_image(features, h, w, ch, cfg, rng),
        FeatureShape::Vector { .. } => Ok(perturb_vector(features, cfg.vector_noise_sigma, rng)),
    }
}

/// Additive isotropic Gaussian noise: `x + σ·ε`.
pub fn perturb_vector(x: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|&xi| {
            let n: f64 = rng.sample(StandardNormal);
            xi + sigma * n
        })
        .collect()
}

/// Runs the four image stages in order.
pub fn perturb_image(
    img: &[f64],
    h: usize,
    w: usize,
    ch: usize,
    cfg: &PerturbConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if h == 0 || w == 0 || ch == 0 || img.len() != h * w * ch {
        return Err(Error::Contract(format!(
            "image length {} does not match {h}x{w}x{ch}",
            img.len()
        )));
    }
    let mut out;

    // Stage 1: affine. Draws (in order): rotation, tx, ty, scale — each only
    // when its parameter range is non-degenerate.
    let rot = if cfg.rotation_deg_max > 0.0 {
        uniform(rng, -cfg.rotation_deg_max, cfg.rotation_deg_max)
    } else {
        0.0
    };
    let t = cfg.translate_px_max as f64;
    let (tx, ty) = if cfg.translate_px_max > 0 {
        (uniform(rng, -t, t), uniform(rng, -t, t))
    } else {
        (0.0, 0.0)
    };
    let (lo, hi) = cfg.scale_range;
    let scale = if lo < hi { uniform(rng, lo, hi) } else { lo };
    if rot != 0.0 || tx != 0.0 || ty != 0.0 || scale != 1.0 {
        out = affine(img, h, w, ch, rot.to_radians(), tx, ty, scale);
    } else {
        out = img.to_vec();
    }

    // Stage 2: Gaussian blur (no draws).
    if cfg.blur_sigma > 0.0 {
        out = blur(&out, h, w, ch, cfg.blur_sigma);
    }

    // Stage 3: horizontal flip (one draw when the probability is non-zero).
    if cfg.hflip_prob > 0.0 {
        let u: f64 = rng.gen();
        if u < cfg.hflip_prob {
            out = hflip(&out, h, w, ch);
        }
    }

    // Stage 4: zero-pad then uniform random crop back (two integer draws).
    if cfg.crop_pad > 0 {
        let p = cfg.crop_pad as usize;
        let ox = rng.gen_range(0..=2 * p);
        let oy = rng.gen_range(0..=2 * p);
        out = pad_crop(&out, h, w, ch, p, oy, ox);
    }

    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Inverse-mapped affine transform around the image center: the forward map
/// scales, rotates, and then translates; sampling is bilinear with zero
/// outside the input.
fn affine(img: &[f64], h: usize, w: usize, ch: usize, theta: f64, tx: f64, ty: f64, scale: f64) -> Vec<f64> {
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; img.len()];
    for oy in 0..h {
        for ox in 0..w {
            // Invert: undo translation, rotate back, unscale.
            let dx = ox as f64 - cx - tx;
            let dy = oy as f64 - cy - ty;
            let sx = (cos_t * dx + sin_t * dy) / scale + cx;
            let sy = (-sin_t * dx + cos_t * dy) / scale + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..ch {
                let at = |x: i64, y: i64| -> f64 {
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        0.0
                    } else {
                        img[(y as usize * w + x as usize) * ch + c]
                    }
                };
                let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + at(x0 + 1, y0) * fx * (1.0 - fy)
                    + at(x0, y0 + 1) * (1.0 - fx) * fy
                    + at(x0 + 1, y0 + 1) * fx * fy;
                out[(oy * w + ox) * ch + c] = v;
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian kernel of radius `⌈3σ⌉`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= s;
    }
    k
}

/// Separable convolution with zero padding at the borders.
fn blur(img: &[f64], h: usize, w: usize, ch: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let mut mid = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (ki, &kv) in k.iter().enumerate() {
                    let sx = x as i64 + ki as i64 - radius;
                    if sx >= 0 && sx < w as i64 {
                        acc += kv * img[(y * w + sx as usize) * ch + c];
                    }
                }
                mid[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (ki, &kv) in k.iter().enumerate() {
                    let sy = y as i64 + ki as i64 - radius;
                    if sy >= 0 && sy < h as i64 {
                        acc += kv * mid[(sy as usize * w + x) * ch + c];
                    }
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    out
}

/// Mirrors columns; applying it twice restores the input exactly.
fn hflip(img: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[(y * w + x) * ch + c] = img[(y * w + (w - 1 - x)) * ch + c];
            }
        }
    }
    out
}

/// Zero-pads by `p` on every side, then crops an `h x w` window whose
/// top-left corner is `(oy, ox)` in the padded frame (`0 ..= 2p`).
fn pad_crop(img: &[f64], h: usize, w: usize, ch: usize, p: usize, oy: usize, ox: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            // Position in the padded image, then back into input coords.
            let sy = (y + oy) as i64 - p as i64;
            let sx = (x + ox) as i64 - p as i64;
            if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                for c in 0..ch {
                    out[(y * w + x) * ch + c] = img[(sy as usize * w + sx as usize) * ch + c];
                }
            }
        }
    }
    out
}
