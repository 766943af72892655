//! Procedural fingerprint generator used as the bundled training and test
//! corpus.
//!
//! A print is grown from seeded noise by repeatedly applying an oriented
//! band-pass (Gabor) filter that follows an analytic orientation model
//! (arch, loop or whorl) at the identity's ridge frequency, then saturating
//! the response. This yields a thresholded quasi-sinusoid along the field,
//! with endings and bifurcations where the flow forces ridges to appear or
//! vanish. Impressions resample an enlarged canvas of the same identity
//! under a seeded rigid warp with contrast jitter and sensor noise.
//!
//! Angles follow the crate-wide convention: radians, counter-clockwise,
//! 0 along +x with y pointing up on screen (so image-space direction
//! vectors are `(cos θ, −sin θ)`).

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::imagecore::{sample_bilinear, save_image, GrayImage, ImageError, ImageFormat};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// Per-block ridge orientation in `[0, π)` with an estimation reliability in
/// `[0, 1]` (1 for analytic fields).
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    pub block_size: usize,
    pub width: usize,
    pub height: usize,
    pub theta: Vec<f64>,
    pub coherence: Vec<f64>,
}

impl OrientationField {
    pub fn uniform(block_size: usize, width: usize, height: usize, theta: f64) -> Self {
        let n = width * height;
        Self {
            block_size,
            width,
            height,
            theta: vec![wrap_pi(theta); n],
            coherence: vec![1.0; n],
        }
    }

    pub fn at_block(&self, bx: usize, by: usize) -> f64 {
        self.theta[by * self.width + bx]
    }

    /// Orientation at a pixel, taken from its enclosing block.
    pub fn at_pixel(&self, x: usize, y: usize) -> f64 {
        let bx = (x / self.block_size).min(self.width - 1);
        let by = (y / self.block_size).min(self.height - 1);
        self.at_block(bx, by)
    }

    /// Orientation at a sub-pixel position, bilinearly interpolated between
    /// block centres in the doubled-angle domain.
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let bs = self.block_size as f64;
        let gx = (x / bs - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = (y / bs - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let (mut c, mut s) = (0.0, 0.0);
        for (bx, by, w) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            let t = 2.0 * self.at_block(bx, by);
            c += w * t.cos();
            s += w * t.sin();
        }
        wrap_pi(0.5 * s.atan2(c))
    }

    pub fn coherence_at_pixel(&self, x: usize, y: usize) -> f64 {
        let bx = (x / self.block_size).min(self.width - 1);
        let by = (y / self.block_size).min(self.height - 1);
        self.coherence[by * self.width + bx]
    }
}

/// Wraps an angle into `[0, π)`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternClass {
    Arch,
    Loop,
    Whorl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityParams {
    pub seed: u64,
    /// Core position as a fraction of the image side, `(x, y)` with y down.
    pub core: (f64, f64),
    /// Ridge frequency in cycles per pixel, within `[0.05, 0.15]`.
    pub ridge_frequency: f64,
    pub pattern_class: PatternClass,
    /// Arch bulge strength in `[0, 1]`; 0 gives straight parallel ridges.
    pub curvature: f64,
    /// Relative amplitude in `[0, 0.3]` of the smooth spatial change in
    /// ridge spacing. Spacing changes force ridges to split or end.
    pub frequency_variation: f64,
}

pub const FREQUENCY_BAND: (f64, f64) = (0.05, 0.15);

impl IdentityParams {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let (lo, hi) = FREQUENCY_BAND;
        if !(lo..=hi).contains(&self.ridge_frequency) {
            return Err(CorpusError::InvalidParameter(format!(
                "ridge frequency {} outside [{lo}, {hi}]",
                self.ridge_frequency
            )));
        }
        if !(0.0..=1.0).contains(&self.core.0) || !(0.0..=1.0).contains(&self.core.1) {
            return Err(CorpusError::InvalidParameter(format!(
                "core {:?} outside unit square",
                self.core
            )));
        }
        if !(0.0..=1.0).contains(&self.curvature) {
            return Err(CorpusError::InvalidParameter(format!(
                "curvature {} outside [0, 1]",
                self.curvature
            )));
        }
        if !(0.0..=0.3).contains(&self.frequency_variation) {
            return Err(CorpusError::InvalidParameter(format!(
                "frequency variation {} outside [0, 0.3]",
                self.frequency_variation
            )));
        }
        Ok(())
    }

    /// Derives a full identity from one seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x1d3f_a5c7));
        // roughly the class frequencies of real fingers
        let pattern_class = match rng.random_range(0..100) {
            0..6 => PatternClass::Arch,
            6..70 => PatternClass::Loop,
            _ => PatternClass::Whorl,
        };
        Self {
            seed,
            core: (rng.random_range(0.38..0.62), rng.random_range(0.35..0.6)),
            ridge_frequency: rng.random_range(0.095..0.13),
            pattern_class,
            curvature: rng.random_range(0.3..1.0),
            frequency_variation: rng.random_range(0.2..0.3),
        }
    }

    /// Three plane waves, `(kx, ky, phase)` in cycles per side, that shape
    /// the spacing modulation.
    fn modulation_waves(&self) -> [(f64, f64, f64); 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ 0x6672_6571));
        std::array::from_fn(|_| {
            let dir = rng.random_range(0.0..PI);
            let cycles = rng.random_range(0.5..1.5);
            (
                cycles * dir.cos(),
                cycles * dir.sin(),
                rng.random_range(0.0..2.0 * PI),
            )
        })
    }

    /// Local ridge frequency at master-frame pixel `(x, y)`.
    pub fn frequency_at(&self, x: f64, y: f64, side: usize) -> f64 {
        self.local_frequency(&self.modulation_waves(), x, y, side)
    }

    fn local_frequency(&self, waves: &[(f64, f64, f64); 3], x: f64, y: f64, side: usize) -> f64 {
        let (u, v) = (x / side as f64, y / side as f64);
        let m = (waves
            .iter()
            .map(|&(kx, ky, ph)| (2.0 * PI * (kx * u + ky * v) + ph).cos())
            .sum::<f64>()
            / 1.5)
            .clamp(-1.0, 1.0);
        self.ridge_frequency * (1.0 + self.frequency_variation * m)
    }

    /// Ridge orientation at master-frame pixel coordinates `(x, y)` (y down)
    /// for a master of the given side.
    pub fn orientation_at(&self, x: f64, y: f64, side: usize) -> f64 {
        let s = side as f64;
        let (cx, cy) = (self.core.0 * s, self.core.1 * s);
        // math frame: u right, v up, origin at the core
        let u = x - cx;
        let v = cy - y;
        let arg = |du: f64, dv: f64| (v - dv).atan2(u - du);
        let theta = match self.pattern_class {
            PatternClass::Arch => {
                let w = 0.45 * s;
                let r = u / w;
                let slope = self.curvature * (-2.0 * r) * (-r * r).exp();
                slope.atan()
            }
            PatternClass::Loop => {
                // core at the origin, delta below and to the side of it
                let delta = (0.3 * s, -0.35 * s);
                0.5 * (arg(0.0, 0.0) - arg(delta.0, delta.1))
            }
            PatternClass::Whorl => {
                let d1 = (-0.42 * s, -0.5 * s);
                let d2 = (0.42 * s, -0.5 * s);
                arg(0.0, 0.0) - 0.5 * (arg(d1.0, d1.1) + arg(d2.0, d2.1))
            }
        };
        wrap_pi(theta)
    }
}

/// Block size used by [`make_orientation_field`].
pub const FIELD_BLOCK: usize = 8;

/// Samples the identity's orientation model at the centres of
/// `FIELD_BLOCK`-pixel blocks of a `w×h` master.
pub fn make_orientation_field(
    p: &IdentityParams,
    w: usize,
    h: usize,
) -> Result<OrientationField, CorpusError> {
    if w < 16 || h < 16 {
        return Err(CorpusError::InvalidParameter(format!(
            "field needs w, h >= 16, got {w}x{h}"
        )));
    }
    let bw = w.div_ceil(FIELD_BLOCK);
    let bh = h.div_ceil(FIELD_BLOCK);
    let side = w.max(h);
    let mut theta = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let x = (bx * FIELD_BLOCK) as f64 + FIELD_BLOCK as f64 / 2.0;
            let y = (by * FIELD_BLOCK) as f64 + FIELD_BLOCK as f64 / 2.0;
            theta.push(p.orientation_at(x, y, side));
        }
    }
    Ok(OrientationField {
        block_size: FIELD_BLOCK,
        width: bw,
        height: bh,
        coherence: vec![1.0; theta.len()],
        theta,
    })
}

/// Magnitudes of the per-impression distortions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpConfig {
    pub max_rotation_deg: f64,
    pub max_translation_frac: f64,
    pub contrast_jitter: f64,
    pub noise_sigma: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_translation_frac: 0.05,
            contrast_jitter: 0.2,
            noise_sigma: 0.05,
        }
    }
}

const GROWTH_ITERATIONS: usize = 10;
const GROWTH_GAIN: f64 = 1.5;
const SEED_DENSITY: f64 = 1.0 / 128.0;
const ORIENTATION_BINS: usize = 32;
/// Gabor banks spanning the local frequency range of one identity.
const FREQUENCY_LEVELS: usize = 7;
const RIDGE_AMPLITUDE: f64 = 0.42;
const MASTER_NOISE: f64 = 0.02;
/// Kernel elongation along the ridge relative to across it.
const ALONG_STRETCH: f64 = 2.0;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic uniform value in `[-1, 1)` attached to an absolute pixel.
fn pixel_noise(seed: u64, x: i64, y: i64) -> f64 {
    let h = mix64(seed ^ mix64((x as u64).wrapping_mul(0x2545_f491_4f6c_dd1d) ^ (y as u64)));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Taps of one kernel row: offsets from the centre and the weights.
struct Span {
    dy: isize,
    dx: isize,
    weights: Vec<f64>,
}

/// Elliptical kernel support, in envelope standard deviations.
const SUPPORT_WIDTHS: f64 = 3.0;

struct GaborBank {
    radius: usize,
    /// Per orientation bin, the kernel restricted to its elliptical support.
    kernels: Vec<Vec<Span>>,
}

impl GaborBank {
    /// Even-symmetric kernels for each orientation bin, zero-mean and scaled
    /// to unit response on a matching sinusoid. Support is the ellipse of
    /// `SUPPORT_WIDTHS` envelope widths inside the square of radius 2.5
    /// along-ridge widths, stored as one contiguous span per row.
    fn new(freq: f64) -> Self {
        let across_sigma = 0.6 / freq;
        let along_sigma = ALONG_STRETCH * across_sigma;
        let radius = (2.5 * along_sigma).ceil() as isize;
        let kernels = (0..ORIENTATION_BINS)
            .map(|b| {
                let theta = b as f64 * PI / ORIENTATION_BINS as f64;
                // ridge direction in image space, and its normal
                let (dx, dy) = (theta.cos(), -theta.sin());
                let (nx, ny) = (-dy, dx);
                let mut taps = Vec::new();
                for y in -radius..=radius {
                    for x in -radius..=radius {
                        let across = x as f64 * nx + y as f64 * ny;
                        let along = x as f64 * dx + y as f64 * dy;
                        let r2 = (across / across_sigma).powi(2) + (along / along_sigma).powi(2);
                        if r2 <= SUPPORT_WIDTHS * SUPPORT_WIDTHS {
                            let c = (2.0 * PI * freq * across).cos();
                            taps.push((y, x, (-0.5 * r2).exp() * c, c));
                        }
                    }
                }
                let mean = taps.iter().map(|t| t.2).sum::<f64>() / taps.len() as f64;
                let gain: f64 = taps.iter().map(|t| (t.2 - mean) * t.3).sum();
                let mut spans: Vec<Span> = Vec::new();
                // taps arrive row by row, and the ellipse makes each row contiguous
                for (y, x, v, _) in taps {
                    let w = (v - mean) / gain;
                    match spans.last_mut() {
                        Some(s) if s.dy == y => s.weights.push(w),
                        _ => spans.push(Span {
                            dy: y,
                            dx: x,
                            weights: vec![w],
                        }),
                    }
                }
                spans
            })
            .collect();
        Self {
            radius: radius as usize,
            kernels,
        }
    }
}

/// Rendered ridge field of one identity on a canvas that extends beyond the
/// master frame, so warped impressions never sample outside it.
#[derive(Debug, Clone)]
pub struct FingerCanvas {
    side: usize,
    margin: usize,
    /// Ridge response in `[-1, 1]`, `(side + 2·margin)²` row-major.
    ridges: GrayImage,
    seed: u64,
}

impl FingerCanvas {
    pub fn render(p: &IdentityParams, side: usize) -> Result<Self, CorpusError> {
        p.validate()?;
        if side < 32 {
            return Err(CorpusError::InvalidParameter(format!(
                "side must be >= 32, got {side}"
            )));
        }
        let margin = (0.15 * side as f64).ceil() as usize + 2;
        let n = side + 2 * margin;
        let levels = if p.frequency_variation > 0.0 {
            FREQUENCY_LEVELS
        } else {
            1
        };
        let level_freq = |l: usize| {
            let rel = if levels == 1 {
                0.0
            } else {
                2.0 * l as f64 / (levels - 1) as f64 - 1.0
            };
            p.ridge_frequency * (1.0 + p.frequency_variation * rel)
        };
        let banks: Vec<GaborBank> = (0..levels).map(|l| GaborBank::new(level_freq(l))).collect();
        let waves = p.modulation_waves();
        // (frequency level, orientation bin) per canvas pixel
        let bins: Vec<(usize, usize)> = (0..n * n)
            .map(|i| {
                let (x, y) = (
                    (i % n) as f64 - margin as f64 + 0.5,
                    (i / n) as f64 - margin as f64 + 0.5,
                );
                let th = p.orientation_at(x, y, side);
                let level = if levels == 1 {
                    0
                } else {
                    let rel = (p.local_frequency(&waves, x, y, side) / p.ridge_frequency - 1.0)
                        / p.frequency_variation;
                    (((rel + 1.0) / 2.0 * (levels - 1) as f64).round() as usize).min(levels - 1)
                };
                (
                    level,
                    ((th / PI * ORIENTATION_BINS as f64).round() as usize) % ORIENTATION_BINS,
                )
            })
            .collect();
        let mut field: Vec<f64> = (0..n * n)
            .map(|i| {
                let v = pixel_noise(
                    p.seed,
                    (i % n) as i64 - margin as i64,
                    (i / n) as i64 - margin as i64,
                );
                // sparse seeds: only the tail of the hash survives
                if v.abs() > 1.0 - SEED_DENSITY {
                    v.signum()
                } else {
                    0.0
                }
            })
            .collect();
        // edge-replicated copy of the field, so taps never need clamping
        let pad = banks
            .iter()
            .map(|b| b.radius)
            .max()
            .expect("at least one bank");
        let np = n + 2 * pad;
        let mut padded = vec![0.0; np * np];
        let mut next = vec![0.0; n * n];
        for _ in 0..GROWTH_ITERATIONS {
            for py in 0..np {
                let sy = py.saturating_sub(pad).min(n - 1);
                for px in 0..np {
                    padded[py * np + px] = field[sy * n + px.saturating_sub(pad).min(n - 1)];
                }
            }
            for y in 0..n {
                for x in 0..n {
                    let (level, bin) = bins[y * n + x];
                    let mut acc = 0.0;
                    for span in &banks[level].kernels[bin] {
                        let start = (y + pad).wrapping_add_signed(span.dy) * np
                            + (x + pad).wrapping_add_signed(span.dx);
                        let row = &padded[start..start + span.weights.len()];
                        acc += span
                            .weights
                            .iter()
                            .zip(row)
                            .map(|(w, v)| w * v)
                            .sum::<f64>();
                    }
                    next[y * n + x] = acc;
                }
            }
            // adaptive gain keeps the growing pattern saturated
            let rms = (next.iter().map(|v| v * v).sum::<f64>() / next.len() as f64)
                .sqrt()
                .max(1e-12);
            for v in next.iter_mut() {
                *v = (GROWTH_GAIN * *v / rms).clamp(-1.0, 1.0);
            }
            std::mem::swap(&mut field, &mut next);
        }
        // store the response mapped to [0, 1] so it fits a GrayImage
        let ridges = GrayImage::from_clamped(n, n, field.iter().map(|v| 0.5 + 0.5 * v).collect());
        Ok(Self {
            side,
            margin,
            ridges,
            seed: p.seed,
        })
    }

    fn response(&self, x: f64, y: f64) -> f64 {
        let m = self.margin as f64;
        2.0 * sample_bilinear(&self.ridges, x + m, y + m, 0.5) - 1.0
    }

    pub fn master(&self) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ 0x6d61_7374));
        let s = self.side;
        let mut data = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let g = self.response(x as f64, y as f64);
                let noise: f64 = rng.sample(StandardNormal);
                data.push(0.5 - RIDGE_AMPLITUDE * g + MASTER_NOISE * noise);
            }
        }
        GrayImage::from_clamped(s, s, data)
    }

    pub fn impression(&self, impression_seed: u64, warp: &WarpConfig) -> GrayImage {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix64(self.seed.rotate_left(17) ^ mix64(impression_seed)));
        let s = self.side as f64;
        let rot = rng.random_range(-1.0..=1.0) * warp.max_rotation_deg.to_radians();
        let tx = rng.random_range(-1.0..=1.0) * warp.max_translation_frac * s;
        let ty = rng.random_range(-1.0..=1.0) * warp.max_translation_frac * s;
        let contrast = 1.0 + rng.random_range(-1.0..=1.0) * warp.contrast_jitter;
        let sigma = warp.noise_sigma * rng.random_range(0.2..=1.0);
        let c = (s - 1.0) / 2.0;
        let (sin, cos) = rot.sin_cos();
        let mut data = Vec::with_capacity(self.side * self.side);
        for y in 0..self.side {
            for x in 0..self.side {
                // inverse map: output pixel -> master frame
                let (dx, dy) = (x as f64 - c - tx, y as f64 - c - ty);
                let mx = cos * dx + sin * dy + c;
                let my = -sin * dx + cos * dy + c;
                let g = self.response(mx, my);
                let noise: f64 = rng.sample(StandardNormal);
                data.push(0.5 - contrast * RIDGE_AMPLITUDE * g + sigma * noise);
            }
        }
        GrayImage::from_clamped(self.side, self.side, data)
    }
}

pub fn render_master(p: &IdentityParams, side: usize) -> Result<GrayImage, CorpusError> {
    Ok(FingerCanvas::render(p, side)?.master())
}

pub fn render_impression(
    p: &IdentityParams,
    impression_seed: u64,
    side: usize,
) -> Result<GrayImage, CorpusError> {
    render_impression_with(p, impression_seed, side, &WarpConfig::default())
}

pub fn render_impression_with(
    p: &IdentityParams,
    impression_seed: u64,
    side: usize,
    warp: &WarpConfig,
) -> Result<GrayImage, CorpusError> {
    Ok(FingerCanvas::render(p, side)?.impression(impression_seed, warp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub identity: usize,
    pub impression: usize,
    pub seed: u64,
}

/// Seed of identity `i` in a corpus generated from `seed`.
pub fn identity_seed(seed: u64, i: usize) -> u64 {
    mix64(seed ^ mix64(i as u64 + 1))
}

/// Seed of impression `j` of an identity.
pub fn impression_seed(identity_seed: u64, j: usize) -> u64 {
    mix64(identity_seed.rotate_left(29) ^ (j as u64 + 1))
}

/// Renders `n_ids × n_impr` impressions in memory, identity-major.
pub fn corpus_images(
    n_ids: usize,
    n_impr: usize,
    side: usize,
    seed: u64,
    warp: &WarpConfig,
) -> Result<Vec<(ManifestRow, GrayImage)>, CorpusError> {
    if n_ids == 0 || n_impr == 0 {
        return Err(CorpusError::InvalidParameter(
            "n_ids and n_impr must be >= 1".into(),
        ));
    }
    let per_identity: Vec<Result<Vec<(ManifestRow, GrayImage)>, CorpusError>> = (0..n_ids)
        .into_par_iter()
        .map(|i| {
            let id_seed = identity_seed(seed, i);
            let canvas = FingerCanvas::render(&IdentityParams::from_seed(id_seed), side)?;
            Ok((0..n_impr)
                .map(|j| {
                    let s = impression_seed(id_seed, j);
                    let row = ManifestRow {
                        path: PathBuf::from(format!("id{i}_impr{j}.pgm")),
                        identity: i,
                        impression: j,
                        seed: s,
                    };
                    (row, canvas.impression(s, warp))
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(n_ids * n_impr);
    for r in per_identity {
        out.extend(r?);
    }
    Ok(out)
}

/// Writes a corpus directory of `id{I}_impr{J}.pgm` files and `manifest.tsv`.
pub fn gen_corpus(
    dir: &Path,
    n_ids: usize,
    n_impr: usize,
    side: usize,
    seed: u64,
    warp: &WarpConfig,
) -> Result<Vec<ManifestRow>, CorpusError> {
    let items = corpus_images(n_ids, n_impr, side, seed, warp)?;
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("path\tidentity_id\timpression_id\tseed\n");
    let mut rows = Vec::with_capacity(items.len());
    for (row, img) in items {
        save_image(&img, dir.join(&row.path), ImageFormat::Pgm)?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.path.display(),
            row.identity,
            row.impression,
            row.seed
        ));
        rows.push(row);
    }
    let mut f = fs::File::create(dir.join("manifest.tsv"))?;
    f.write_all(manifest.as_bytes())?;
    Ok(rows)
}

/// Parses a `manifest.tsv` written by [`gen_corpus`].
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || CorpusError::InvalidParameter(format!("manifest line {}: {line:?}", n + 1));
        if cols.len() != 4 {
            return Err(bad());
        }
        rows.push(ManifestRow {
            path: PathBuf::from(cols[0]),
            identity: cols[1].parse().map_err(|_| bad())?,
            impression: cols[2].parse().map_err(|_| bad())?,
            seed: cols[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(class: PatternClass) -> IdentityParams {
        IdentityParams {
            seed: 42,
            core: (0.5, 0.5),
            ridge_frequency: 0.1,
            pattern_class: class,
            curvature: 0.0,
            frequency_variation: 0.0,
        }
    }

    /// Orientation index (winding / 2π) along a closed loop of blocks.
    fn winding(field: &OrientationField, ring: &[(usize, usize)]) -> f64 {
        let mut total = 0.0;
        for k in 0..ring.len() {
            let a = field.at_block(ring[k].0, ring[k].1);
            let b = field.at_block(ring[(k + 1) % ring.len()].0, ring[(k + 1) % ring.len()].1);
            let mut d = b - a;
            while d > PI / 2.0 {
                d -= PI;
            }
            while d <= -PI / 2.0 {
                d += PI;
            }
            total += d;
        }
        total / (2.0 * PI)
    }

    fn ring_around(cx: usize, cy: usize, r: usize) -> Vec<(usize, usize)> {
        let mut ring = Vec::new();
        for x in cx - r..=cx + r {
            ring.push((x, cy - r));
        }
        for y in cy - r + 1..=cy + r {
            ring.push((cx + r, y));
        }
        for x in (cx - r..cx + r).rev() {
            ring.push((x, cy + r));
        }
        for y in (cy - r + 1..cy + r).rev() {
            ring.push((cx - r, y));
        }
        // counter-clockwise on screen
        ring.reverse();
        ring
    }

    #[test]
    fn flat_arch_is_uniform() {
        let f = make_orientation_field(&params(PatternClass::Arch), 64, 64).unwrap();
        for by in 0..f.height {
            for bx in 0..f.width - 1 {
                let d = (f.at_block(bx, by) - f.at_block(bx + 1, by)).abs();
                assert!(d.min(PI - d) < 0.2);
            }
        }
        assert!(f.theta.iter().all(|t| (0.0..PI).contains(t)));
    }

    #[test]
    fn singularity_indices() {
        // core at the centre of a 128 master: block (8, 8) has its corner there
        let f = make_orientation_field(&params(PatternClass::Loop), 128, 128).unwrap();
        let w = winding(&f, &ring_around(8, 8, 2));
        assert!((w - 0.5).abs() < 1e-9, "loop winding {w}");
        let f = make_orientation_field(&params(PatternClass::Whorl), 128, 128).unwrap();
        let w = winding(&f, &ring_around(8, 8, 2));
        assert!((w - 1.0).abs() < 1e-9, "whorl winding {w}");
        let mut arch = params(PatternClass::Arch);
        arch.curvature = 1.0;
        let f = make_orientation_field(&arch, 128, 128).unwrap();
        assert!(winding(&f, &ring_around(8, 8, 3)).abs() < 1e-9);
    }

    #[test]
    fn master_is_deterministic_and_in_range() {
        let p = IdentityParams::from_seed(5);
        let a = render_master(&p, 64).unwrap();
        let b = render_master(&p, 64).unwrap();
        assert_eq!(a, b);
        let m = a.mean();
        assert!((0.3..=0.8).contains(&m), "mean {m}");
        assert!(render_master(&p, 16).is_err());
    }

    /// Peak of the radially binned power spectrum, by direct DFT.
    fn dominant_frequency(img: &GrayImage) -> f64 {
        let n = img.width();
        let mean = img.mean();
        let mut power = vec![0.0; n];
        for ky in 0..n {
            for kx in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let ph = -2.0 * PI * ((kx * x + ky * y) % n) as f64 / n as f64;
                        let v = img.get(x, y) - mean;
                        re += v * ph.cos();
                        im += v * ph.sin();
                    }
                }
                let fx = kx.min(n - kx) as f64;
                let fy = ky.min(n - ky) as f64;
                let r = fx.hypot(fy).round() as usize;
                if r < n {
                    power[r] += re * re + im * im;
                }
            }
        }
        let peak = (2..n / 2)
            .max_by(|&a, &b| power[a].total_cmp(&power[b]))
            .unwrap();
        peak as f64 / n as f64
    }

    #[test]
    fn dominant_frequency_tracks_identity() {
        for seed in [2, 7, 19, 23] {
            let p = IdentityParams::from_seed(seed);
            let f = dominant_frequency(&render_master(&p, 64).unwrap());
            let rel = (f - p.ridge_frequency).abs() / p.ridge_frequency;
            assert!(
                rel < 0.2,
                "{:?}: {f} vs {}",
                p.pattern_class,
                p.ridge_frequency
            );
        }
    }

    #[test]
    fn impression_is_deterministic() {
        let p = IdentityParams::from_seed(8);
        let a = render_impression(&p, 3, 64).unwrap();
        assert_eq!(a, render_impression(&p, 3, 64).unwrap());
        assert_ne!(a, render_impression(&p, 4, 64).unwrap());
    }

    #[test]
    fn invalid_identity_rejected() {
        let mut p = params(PatternClass::Loop);
        p.ridge_frequency = 0.3;
        assert!(render_master(&p, 64).is_err());
    }

    #[test]
    fn uniform_field_gives_periodic_columns() {
        let p = params(PatternClass::Arch);
        let img = render_master(&p, 96).unwrap();
        // ridges run along x, so each column is a periodic profile in y
        let n = img.height();
        let mut acf = vec![0.0; 30];
        for x in 0..img.width() {
            let col: Vec<f64> = (0..n).map(|y| img.get(x, y)).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            for (lag, a) in acf.iter_mut().enumerate() {
                *a += (0..n - lag)
                    .map(|y| (col[y] - m) * (col[y + lag] - m))
                    .sum::<f64>();
            }
        }
        let peak = (4..30).max_by(|&a, &b| acf[a].total_cmp(&acf[b])).unwrap();
        let period = 1.0 / p.ridge_frequency;
        assert!(
            (peak as f64 - period).abs() <= 0.2 * period,
            "peak lag {peak}"
        );
    }

    #[test]
    fn corpus_layout_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let rows = gen_corpus(dir.path(), 1, 1, 32, 9, &WarpConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(dir.path().join("id0_impr0.pgm").exists());
        assert_eq!(
            read_manifest(&dir.path().join("manifest.tsv")).unwrap(),
            rows
        );
        assert!(gen_corpus(dir.path(), 0, 1, 32, 9, &WarpConfig::default()).is_err());
    }
}
