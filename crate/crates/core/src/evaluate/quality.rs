use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::imagecore::GrayImage;
use crate::minutiae::{extract_from_image, sobel};
use crate::synthcorpus::FREQUENCY_BAND;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityWeights {
    pub coherence: f64,
    pub band: f64,
    pub contrast: f64,
    pub minutiae: f64,
}

impl Default for QualityWeights {
    fn default() -> Self {
        Self {
            coherence: 0.4,
            band: 0.3,
            contrast: 0.2,
            minutiae: 0.1,
        }
    }
}

/// Per-component values, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityComponents {
    pub coherence: f64,
    pub band_fraction: f64,
    pub contrast: f64,
    pub minutiae: f64,
}

impl QualityComponents {
    pub fn score(&self, w: &QualityWeights) -> f64 {
        let s = w.coherence * self.coherence
            + w.band * self.band_fraction
            + w.contrast * self.contrast
            + w.minutiae * self.minutiae;
        (100.0 * s).clamp(0.0, 100.0)
    }
}

const COHERENCE_BLOCK: usize = 16;
const MINUTIAE_RANGE: (f64, f64) = (8.0, 80.0);

/// Mean over 16×16 blocks of the structure-tensor coherence
/// `√((Gxx − Gyy)² + 4Gxy²) / (Gxx + Gyy)`; flat blocks count as zero.
fn coherence(img: &GrayImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    let (gx, gy) = sobel(img.data(), w, h);
    let (bw, bh) = (w.div_ceil(COHERENCE_BLOCK), h.div_ceil(COHERENCE_BLOCK));
    let mut acc = vec![(0.0, 0.0, 0.0); bw * bh];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let b = &mut acc[(y / COHERENCE_BLOCK) * bw + x / COHERENCE_BLOCK];
            b.0 += gx[i] * gx[i];
            b.1 += gy[i] * gy[i];
            b.2 += gx[i] * gy[i];
        }
    }
    let total: f64 = acc
        .iter()
        .map(|&(xx, yy, xy)| {
            let energy = xx + yy;
            if energy <= 1e-12 {
                0.0
            } else {
                ((xx - yy).powi(2) + 4.0 * xy * xy).sqrt() / energy
            }
        })
        .sum();
    total / acc.len() as f64
}

/// Non-DC spectral energy inside the ridge band as a fraction of all non-DC
/// energy, and the standard deviation of the band-limited component.
fn spectral_terms(img: &GrayImage) -> (f64, f64) {
    let (w, h) = (img.width(), img.height());
    let mut buf: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row = planner.plan_fft_forward(w);
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    let freq = |k: usize, n: usize| {
        if k <= n / 2 {
            k as f64 / n as f64
        } else {
            k as f64 / n as f64 - 1.0
        }
    };
    let (mut band, mut total) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if x == 0 && y == 0 {
                continue;
            }
            let p = buf[y * w + x].norm_sqr();
            total += p;
            let r = freq(x, w).hypot(freq(y, h));
            if (FREQUENCY_BAND.0..=FREQUENCY_BAND.1).contains(&r) {
                band += p;
            }
        }
    }
    let n = (w * h) as f64;
    let fraction = if total > 1e-12 { band / total } else { 0.0 };
    // Parseval: the band component's variance is its spectral energy over n²
    (fraction, (band / (n * n)).sqrt())
}

fn minutiae_plausibility(count: usize) -> f64 {
    let c = count as f64;
    let (lo, hi) = MINUTIAE_RANGE;
    if c < lo {
        c / lo
    } else if c <= hi {
        1.0
    } else {
        (1.0 - (c - hi) / hi).max(0.0)
    }
}

pub fn quality_components(img: &GrayImage) -> QualityComponents {
    let (band_fraction, band_sigma) = spectral_terms(img);
    let count = extract_from_image(img).map(|t| t.len()).unwrap_or(0);
    QualityComponents {
        coherence: coherence(img).clamp(0.0, 1.0),
        band_fraction,
        contrast: (4.0 * band_sigma).clamp(0.0, 1.0),
        minutiae: minutiae_plausibility(count),
    }
}

/// Fingerprint quality on a 0–100 scale, higher is better.
pub fn quality_score(img: &GrayImage) -> f64 {
    quality_score_with(img, &QualityWeights::default())
}

pub fn quality_score_with(img: &GrayImage, w: &QualityWeights) -> f64 {
    quality_components(img).score(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

pub fn quality_report(images: &[GrayImage]) -> QualityReport {
    let scores: Vec<f64> = images.par_iter().map(quality_score).collect();
    let (mean, std_dev) = mean_std(&scores);
    QualityReport {
        scores,
        mean,
        std_dev,
    }
}

/// Mean and sample standard deviation; zero spread below two samples.
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{render_master, IdentityParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, side: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(side, side, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn constant_scores_zero() {
        assert_eq!(quality_score(&GrayImage::filled(64, 64, 0.7)), 0.0);
    }

    #[test]
    fn noise_blur_clean_ordering() {
        for seed in 0..4u64 {
            let n = quality_score(&noise(seed, 64));
            assert!(n < 20.0, "noise {n}");
            let print = render_master(&IdentityParams::from_seed(100 + seed), 64).unwrap();
            let clean = quality_score(&print);
            let blurred = quality_score(&crate::imagecore::gaussian_blur(&print, 2.0));
            assert!(clean > 60.0, "clean {clean}");
            assert!(n < blurred && blurred < clean, "{n} {blurred} {clean}");
        }
    }

    #[test]
    fn quarter_turn_tolerance() {
        for seed in 0..4u64 {
            let print = render_master(&IdentityParams::from_seed(200 + seed), 64).unwrap();
            let (a, b) = (quality_score(&print), quality_score(&print.rotate90()));
            assert!((a - b).abs() <= 3.0, "{a} {b}");
        }
    }

    #[test]
    fn plausibility_shape() {
        assert_eq!(minutiae_plausibility(0), 0.0);
        assert_eq!(minutiae_plausibility(4), 0.5);
        assert_eq!(minutiae_plausibility(8), 1.0);
        assert_eq!(minutiae_plausibility(80), 1.0);
        assert_eq!(minutiae_plausibility(120), 0.5);
        assert_eq!(minutiae_plausibility(500), 0.0);
    }

    #[test]
    fn report_summary() {
        let r = quality_report(&[noise(1, 32), GrayImage::filled(32, 32, 0.5)]);
        assert_eq!(r.scores.len(), 2);
        assert!((r.mean - (r.scores[0] + r.scores[1]) / 2.0).abs() < 1e-12);
        assert!(r.scores.iter().all(|s| (0.0..=100.0).contains(s)));
    }
}
