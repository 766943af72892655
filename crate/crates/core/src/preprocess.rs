//! Dataset preparation: quality filtering, crop-and-centre on the inked
//! region, and squarification to a fixed side.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::evaluate::{quality_score_with, QualityWeights};
use crate::imagecore::{resize_bilinear, GrayImage};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("no ink found below the ink threshold")]
    EmptyFingerprint,
    #[error("invalid preprocess config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    FullPipeline,
    NoCrop,
    NoFilter,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::FullPipeline, Variant::NoCrop, Variant::NoFilter];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullPipeline => "fp",
            Variant::NoCrop => "nocrop",
            Variant::NoFilter => "nofilter",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                PreprocessError::InvalidConfig(format!(
                    "unknown variant {s:?}, expected fp, nocrop or nofilter"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub variant: Variant,
    /// Mean intensity above which an image counts as mostly background.
    pub crop_mean_threshold: f64,
    /// Pixels darker than this count as ink.
    pub ink_threshold: f64,
    pub min_quality: f64,
    pub output_side: usize,
    pub weights: QualityWeights,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            variant: Variant::FullPipeline,
            crop_mean_threshold: 0.75,
            ink_threshold: 0.5,
            min_quality: 40.0,
            output_side: 64,
            weights: QualityWeights::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.crop_mean_threshold) || !unit.contains(&self.ink_threshold) {
            return Err(PreprocessError::InvalidConfig(
                "thresholds must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=100.0).contains(&self.min_quality) {
            return Err(PreprocessError::InvalidConfig(
                "min_quality must lie in [0, 100]".into(),
            ));
        }
        if self.output_side < 16 {
            return Err(PreprocessError::InvalidConfig(
                "output_side must be at least 16".into(),
            ));
        }
        Ok(())
    }
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

pub fn ink_bounding_box(img: &GrayImage, ink_threshold: f64) -> Option<BoundingBox> {
    let mut b: Option<BoundingBox> = None;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) < ink_threshold {
                let nb = b.get_or_insert(BoundingBox {
                    x0: x,
                    y0: y,
                    x1: x + 1,
                    y1: y + 1,
                });
                nb.x0 = nb.x0.min(x);
                nb.x1 = nb.x1.max(x + 1);
                nb.y1 = y + 1;
            }
        }
    }
    b
}

/// Darkness-weighted centre of the ink pixels, in pixel-centre coordinates.
pub fn ink_centroid(img: &GrayImage, ink_threshold: f64) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(x, y);
            if v < ink_threshold {
                let w = 1.0 - v;
                sx += w * x as f64;
                sy += w * y as f64;
                sw += w;
            }
        }
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw))
}

/// Copies `region` of `img` onto a white square of side `side`, shifting it
/// so that source point `(cx, cy)` lands on the canvas centre.
fn place_on_canvas(
    img: &GrayImage,
    region: BoundingBox,
    side: usize,
    cx: f64,
    cy: f64,
) -> GrayImage {
    let half = (side as f64 - 1.0) / 2.0;
    let (ox, oy) = ((cx - half).round() as isize, (cy - half).round() as isize);
    GrayImage::from_fn(side, side, |x, y| {
        let (sx, sy) = (x as isize + ox, y as isize + oy);
        let inside = sx >= region.x0 as isize
            && sx < region.x1 as isize
            && sy >= region.y0 as isize
            && sy < region.y1 as isize;
        if inside {
            img.get(sx as usize, sy as usize)
        } else {
            1.0
        }
    })
}

fn pad_to_square(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    if w == h {
        return img.clone();
    }
    let side = w.max(h);
    let full = BoundingBox {
        x0: 0,
        y0: 0,
        x1: w,
        y1: h,
    };
    place_on_canvas(
        img,
        full,
        side,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
    )
}

fn crop_square(img: &GrayImage, cfg: &PreprocessConfig) -> Result<GrayImage, PreprocessError> {
    let b = ink_bounding_box(img, cfg.ink_threshold).ok_or(PreprocessError::EmptyFingerprint)?;
    let (px, py) = (
        (0.05 * b.width() as f64).ceil() as usize,
        (0.05 * b.height() as f64).ceil() as usize,
    );
    let padded = BoundingBox {
        x0: b.x0.saturating_sub(px),
        y0: b.y0.saturating_sub(py),
        x1: (b.x1 + px).min(img.width()),
        y1: (b.y1 + py).min(img.height()),
    };
    let (cx, cy) = ink_centroid(img, cfg.ink_threshold).ok_or(PreprocessError::EmptyFingerprint)?;
    Ok(place_on_canvas(
        img,
        padded,
        padded.width().max(padded.height()),
        cx,
        cy,
    ))
}

/// Crops mostly-white images to their padded ink box centred on the ink
/// centroid, pads everything else to a square, then resizes.
pub fn crop_and_center(
    img: &GrayImage,
    cfg: &PreprocessConfig,
) -> Result<GrayImage, PreprocessError> {
    let square = if img.mean() > cfg.crop_mean_threshold {
        crop_square(img, cfg)?
    } else {
        pad_to_square(img)
    };
    Ok(resize_bilinear(&square, cfg.output_side, cfg.output_side))
}

/// Squarifies without ever taking the crop branch.
pub fn squarify(img: &GrayImage, cfg: &PreprocessConfig) -> GrayImage {
    resize_bilinear(&pad_to_square(img), cfg.output_side, cfg.output_side)
}

/// Images scoring at least `min_quality`, in input order.
pub fn quality_filter(images: &[GrayImage], cfg: &PreprocessConfig) -> Vec<GrayImage> {
    let keep: Vec<bool> = images
        .par_iter()
        .map(|img| quality_score_with(img, &cfg.weights) >= cfg.min_quality)
        .collect();
    images
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(img, _)| img.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub images: Vec<GrayImage>,
    /// Indices into the pipeline input of images kept, one per output.
    pub sources: Vec<usize>,
    pub filtered_out: usize,
    pub failed: usize,
}

pub fn run_pipeline(
    images: &[GrayImage],
    cfg: &PreprocessConfig,
) -> Result<PipelineOutput, PreprocessError> {
    cfg.validate()?;
    let filter = cfg.variant != Variant::NoFilter;
    let results: Vec<Option<Result<GrayImage, PreprocessError>>> = images
        .par_iter()
        .map(|img| {
            if filter && quality_score_with(img, &cfg.weights) < cfg.min_quality {
                return None;
            }
            Some(match cfg.variant {
                Variant::NoCrop => Ok(squarify(img, cfg)),
                _ => crop_and_center(img, cfg),
            })
        })
        .collect();
    let mut out = PipelineOutput {
        images: Vec::new(),
        sources: Vec::new(),
        filtered_out: 0,
        failed: 0,
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            None => out.filtered_out += 1,
            Some(Ok(img)) => {
                out.images.push(img);
                out.sources.push(i);
            }
            Some(Err(_)) => out.failed += 1,
        }
    }
    if out.failed > 0 {
        log::warn!(
            "preprocess: skipped {} image(s) without detectable ink",
            out.failed
        );
    }
    Ok(out)
}
