use std::collections::HashMap;
use std::f64::consts::PI;

use super::MinutiaeError;
use crate::imagecore::GrayImage;
use crate::synthcorpus::{wrap_pi, OrientationField, FREQUENCY_BAND};

/// Side of the square blocks used for orientation, frequency and masking.
pub const BLOCK: usize = 16;

const TARGET_MEAN: f64 = 0.5;
const TARGET_VAR: f64 = 0.1;
const TENSOR_SIGMA: f64 = 4.0;
/// Blocks below this coherence are treated as background.
pub(crate) const MIN_COHERENCE: f64 = 0.3;
const SIGNATURE_HALF_ACROSS: isize = 20;
const SIGNATURE_HALF_ALONG: isize = 8;
const GABOR_SIGMA_CYCLES: f64 = 0.4;
const GABOR_BINS: usize = 32;
const FREQ_STEP: f64 = 0.0025;

#[derive(Debug, Clone)]
pub struct Enhancement {
    /// Filtered image in `[0, 1]` with ridges dark; background blocks are 1.
    pub enhanced: GrayImage,
    /// Block orientation (`BLOCK`-pixel blocks) with coherence.
    pub orientation: OrientationField,
    /// Ridge frequency per block, cycles per pixel, row-major like `orientation`.
    pub frequency: Vec<f64>,
    /// Foreground flag per block.
    pub mask: Vec<bool>,
}

pub(crate) fn sobel(img: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: isize, y: isize| {
        img[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / norm).collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .map(|d| {
                    k[(d + r) as usize]
                        * src[y * w + (x as isize + d).clamp(0, w as isize - 1) as usize]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| {
                    k[(d + r) as usize]
                        * tmp[(y as isize + d).clamp(0, h as isize - 1) as usize * w + x]
                })
                .sum();
        }
    }
    out
}

/// Ridge orientation (math convention) from summed gradient moments.
fn tensor_orientation(gxx: f64, gyy: f64, gxy: f64) -> (f64, f64) {
    let gradient = 0.5 * (2.0 * gxy).atan2(gxx - gyy);
    // ridge runs perpendicular to the gradient; flip y to go from image to math frame
    let theta = wrap_pi(-(gradient + PI / 2.0));
    let energy = gxx + gyy;
    let coherence = if energy > 1e-12 {
        ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt() / energy
    } else {
        0.0
    };
    (theta, coherence.min(1.0))
}

/// Bilinear lookup in a square buffer; the normalized mean outside it.
fn sample(data: &[f64], side: usize, x: f64, y: f64) -> f64 {
    let max = (side - 1) as f64;
    if !(0.0..=max).contains(&x) || !(0.0..=max).contains(&y) {
        return TARGET_MEAN;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(side - 1), (y0 + 1).min(side - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = data[y0 * side + x0] * (1.0 - fx) + data[y0 * side + x1] * fx;
    let bottom = data[y1 * side + x0] * (1.0 - fx) + data[y1 * side + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Dominant ridge period along the normal through `(cx, cy)`, from the
/// autocorrelation of the projection signature.
fn block_frequency(norm: &[f64], side: usize, cx: f64, cy: f64, theta: f64) -> Option<f64> {
    let (dx, dy) = (theta.cos(), -theta.sin());
    let (nx, ny) = (-dy, dx);
    let sig: Vec<f64> = (-SIGNATURE_HALF_ACROSS..=SIGNATURE_HALF_ACROSS)
        .map(|k| {
            let k = k as f64;
            let sum: f64 = (-SIGNATURE_HALF_ALONG..=SIGNATURE_HALF_ALONG)
                .map(|j| {
                    let j = j as f64;
                    sample(norm, side, cx + k * nx + j * dx, cy + k * ny + j * dy)
                })
                .sum();
            sum / (2 * SIGNATURE_HALF_ALONG + 1) as f64
        })
        .collect();
    let n = sig.len();
    let mean = sig.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = sig.iter().map(|v| v - mean).collect();
    let var = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var < 1e-8 {
        return None;
    }
    let min_lag = (1.0 / FREQUENCY_BAND.1).floor() as usize;
    let max_lag = ((1.0 / FREQUENCY_BAND.0).ceil() as usize).min(n - 4);
    let acf: Vec<f64> = (0..=max_lag + 1)
        .map(|lag| {
            (0..n - lag)
                .map(|i| centred[i] * centred[i + lag])
                .sum::<f64>()
                / ((n - lag) as f64 * var)
        })
        .collect();
    let peaks: Vec<usize> = (min_lag.max(1)..=max_lag)
        .filter(|&l| acf[l] >= acf[l - 1] && acf[l] >= acf[l + 1] && acf[l] > 0.2)
        .collect();
    let best = peaks
        .iter()
        .map(|&l| acf[l])
        .fold(f64::NEG_INFINITY, f64::max);
    let lag = *peaks.iter().find(|&&l| acf[l] >= 0.8 * best)?;
    let (a, b, c) = (acf[lag - 1], acf[lag], acf[lag + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some((1.0 / (lag as f64 + offset)).clamp(FREQUENCY_BAND.0, FREQUENCY_BAND.1))
}

fn gabor_kernel(bin: usize, fbin: usize) -> (usize, Vec<f64>) {
    let theta = bin as f64 * PI / GABOR_BINS as f64;
    let freq = FREQUENCY_BAND.0 + fbin as f64 * FREQ_STEP;
    let sigma = GABOR_SIGMA_CYCLES / freq;
    let radius = (2.5 * sigma).ceil() as usize;
    let size = 2 * radius + 1;
    let (dx, dy) = (theta.cos(), -theta.sin());
    let (nx, ny) = (-dy, dx);
    let mut k = Vec::with_capacity(size * size);
    let mut basis = Vec::with_capacity(size * size);
    for j in 0..size {
        for i in 0..size {
            let (x, y) = (i as f64 - radius as f64, j as f64 - radius as f64);
            let across = x * nx + y * ny;
            let c = (2.0 * PI * freq * across).cos();
            k.push((-(x * x + y * y) / (2.0 * sigma * sigma)).exp() * c);
            basis.push(c);
        }
    }
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    let gain: f64 = k.iter().zip(&basis).map(|(a, b)| a * b).sum();
    k.iter_mut().for_each(|v| *v /= gain);
    (radius, k)
}

/// Normalizes, estimates block orientation and frequency, masks incoherent
/// blocks and applies an oriented band-pass filter at every foreground pixel.
pub fn enhance(img: &GrayImage) -> Result<Enhancement, MinutiaeError> {
    let (w, h) = (img.width(), img.height());
    if w != h || w < 32 {
        return Err(MinutiaeError::BadShape {
            width: w,
            height: h,
        });
    }
    let mean = img.mean();
    let var = img.std_dev().powi(2);
    if var < 1e-6 {
        return Err(MinutiaeError::FlatImage);
    }
    let scale = (TARGET_VAR / var).sqrt();
    let norm_data: Vec<f64> = img
        .data()
        .iter()
        .map(|v| TARGET_MEAN + (v - mean) * scale)
        .collect();

    let (gx, gy) = sobel(&norm_data, w, h);
    let gxx: Vec<f64> = gx.iter().map(|v| v * v).collect();
    let gyy: Vec<f64> = gy.iter().map(|v| v * v).collect();
    let gxy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();

    let smooth_xx = gaussian_blur(&gxx, w, h, TENSOR_SIGMA);
    let smooth_yy = gaussian_blur(&gyy, w, h, TENSOR_SIGMA);
    let smooth_xy = gaussian_blur(&gxy, w, h, TENSOR_SIGMA);

    let (bw, bh) = (w.div_ceil(BLOCK), h.div_ceil(BLOCK));
    let mut theta = Vec::with_capacity(bw * bh);
    let mut coherence = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for y in by * BLOCK..((by + 1) * BLOCK).min(h) {
                for x in bx * BLOCK..((bx + 1) * BLOCK).min(w) {
                    let i = y * w + x;
                    sxx += smooth_xx[i];
                    syy += smooth_yy[i];
                    sxy += smooth_xy[i];
                }
            }
            let (t, c) = tensor_orientation(sxx, syy, sxy);
            theta.push(t);
            coherence.push(c);
        }
    }
    let orientation = OrientationField {
        block_size: BLOCK,
        width: bw,
        height: bh,
        theta,
        coherence,
    };

    // close single-block holes such as the low-coherence core of a loop
    let coherent: Vec<bool> = orientation
        .coherence
        .iter()
        .map(|&c| c >= MIN_COHERENCE)
        .collect();
    let mask: Vec<bool> = (0..bw * bh)
        .map(|i| {
            if coherent[i] {
                return true;
            }
            let (bx, by) = ((i % bw) as isize, (i / bw) as isize);
            let mut total = 0;
            let mut on = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (bx + dx, by + dy);
                    if (dx, dy) != (0, 0)
                        && nx >= 0
                        && ny >= 0
                        && nx < bw as isize
                        && ny < bh as isize
                    {
                        total += 1;
                        on += coherent[ny as usize * bw + nx as usize] as usize;
                    }
                }
            }
            total == 8 && on >= 7
        })
        .collect();

    let estimates: Vec<Option<f64>> = (0..bw * bh)
        .map(|i| {
            if !mask[i] {
                return None;
            }
            let (bx, by) = (i % bw, i / bw);
            let cx = (bx * BLOCK) as f64 + BLOCK as f64 / 2.0;
            let cy = (by * BLOCK) as f64 + BLOCK as f64 / 2.0;
            block_frequency(&norm_data, w, cx, cy, orientation.theta[i])
        })
        .collect();
    let mut valid: Vec<f64> = estimates.iter().flatten().copied().collect();
    valid.sort_by(f64::total_cmp);
    let fallback = if valid.is_empty() {
        0.1
    } else {
        valid[valid.len() / 2]
    };
    // 3x3 median over valid neighbours suppresses estimates taken across ridge defects
    let frequency: Vec<f64> = (0..bw * bh)
        .map(|i| {
            let (bx, by) = ((i % bw) as isize, (i / bw) as isize);
            let mut near: Vec<f64> = (-1..=1)
                .flat_map(|dy| (-1..=1).map(move |dx| (bx + dx, by + dy)))
                .filter(|&(x, y)| x >= 0 && y >= 0 && x < bw as isize && y < bh as isize)
                .filter_map(|(x, y)| estimates[y as usize * bw + x as usize])
                .collect();
            if near.is_empty() {
                return fallback;
            }
            near.sort_by(f64::total_cmp);
            near[near.len() / 2]
        })
        .collect();

    // per-pixel orientation from the smoothed tensor drives the filter
    let mut kernels: HashMap<(usize, usize), (usize, Vec<f64>)> = HashMap::new();
    let mut out = vec![1.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let b = (y / BLOCK) * bw + x / BLOCK;
            if !mask[b] {
                continue;
            }
            let i = y * w + x;
            let (t, _) = tensor_orientation(smooth_xx[i], smooth_yy[i], smooth_xy[i]);
            let bin = ((t / PI * GABOR_BINS as f64).round() as usize) % GABOR_BINS;
            let fbin = ((frequency[b] - FREQUENCY_BAND.0) / FREQ_STEP).round() as usize;
            let (r, k) = kernels
                .entry((bin, fbin))
                .or_insert_with(|| gabor_kernel(bin, fbin));
            let r = *r as isize;
            let size = 2 * r + 1;
            let mut acc = 0.0;
            for j in 0..size {
                let sy = (y as isize + j - r).clamp(0, h as isize - 1) as usize;
                let row = &norm_data[sy * w..(sy + 1) * w];
                let krow = &k[(j * size) as usize..((j + 1) * size) as usize];
                for (ii, kv) in krow.iter().enumerate() {
                    let sx = (x as isize + ii as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * row[sx];
                }
            }
            out[i] = 0.5 + 0.5 * (2.5 * acc).tanh();
        }
    }
    Ok(Enhancement {
        enhanced: GrayImage::from_clamped(w, h, out),
        orientation,
        frequency,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{render_master, IdentityParams, PatternClass};

    fn flat_arch(freq: f64) -> IdentityParams {
        IdentityParams {
            seed: 3,
            core: (0.5, 0.5),
            ridge_frequency: freq,
            pattern_class: PatternClass::Arch,
            curvature: 0.0,
            frequency_variation: 0.0,
        }
    }

    #[test]
    fn constant_image_is_flat() {
        assert!(matches!(
            enhance(&GrayImage::filled(64, 64, 0.4)),
            Err(MinutiaeError::FlatImage)
        ));
        assert!(matches!(
            enhance(&GrayImage::filled(16, 16, 0.4)),
            Err(MinutiaeError::BadShape { .. })
        ));
    }

    /// Thresholded sinusoid with ridges along +x and light seeded noise.
    fn parallel_ridges(freq: f64, side: usize) -> GrayImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        GrayImage::from_fn(side, side, |_, y| {
            let g = (2.0 * PI * freq * y as f64).cos();
            0.5 - 0.45 * (3.0 * g).tanh() + rng.random_range(-0.03..0.03)
        })
    }

    #[test]
    fn parallel_ridges_orientation() {
        for freq in [0.08, 0.1, 0.125] {
            let e = enhance(&parallel_ridges(freq, 96)).unwrap();
            assert!(e.mask.iter().all(|&m| m));
            for t in &e.orientation.theta {
                let d = t.min(PI - t);
                assert!(
                    d < 5f64.to_radians(),
                    "block orientation {}",
                    t.to_degrees()
                );
            }
            for f in &e.frequency {
                assert!((f - freq).abs() <= 0.2 * freq, "freq {f} vs {freq}");
            }
        }
    }

    #[test]
    fn generator_frequency_recovered() {
        for freq in [0.08, 0.1, 0.125] {
            let e = enhance(&render_master(&flat_arch(freq), 96).unwrap()).unwrap();
            assert!(e.mask.iter().all(|&m| m));
            for f in &e.frequency {
                assert!((f - freq).abs() <= 0.2 * freq, "freq {f} vs {freq}");
            }
        }
    }

    #[test]
    fn noise_is_mostly_background() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let img = GrayImage::from_fn(64, 64, |_, _| rng.random::<f64>());
        let e = enhance(&img).unwrap();
        let fg = e.mask.iter().filter(|&&m| m).count();
        assert!(fg <= 3, "{fg} foreground blocks on noise");
    }

    #[test]
    fn enhanced_is_in_unit_range_with_dark_ridges() {
        let img = render_master(&flat_arch(0.1), 64).unwrap();
        let e = enhance(&img).unwrap();
        let corr: f64 = img
            .data()
            .iter()
            .zip(e.enhanced.data())
            .map(|(a, b)| (a - img.mean()) * (b - e.enhanced.mean()))
            .sum();
        assert!(corr > 0.0);
        assert!(e.enhanced.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
