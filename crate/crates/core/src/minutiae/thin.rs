use super::enhance::BLOCK;
use crate::imagecore::GrayImage;

/// One-pixel-wide ridge skeleton with the foreground region it was taken from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
    mask: Vec<bool>,
}

impl Skeleton {
    /// Panics if either buffer does not hold `width * height` entries.
    pub fn new(width: usize, height: usize, pixels: Vec<bool>, mask: Vec<bool>) -> Self {
        assert_eq!(pixels.len(), width * height, "skeleton pixel count");
        assert_eq!(mask.len(), width * height, "skeleton mask size");
        Self {
            width,
            height,
            pixels,
            mask,
        }
    }

    /// A skeleton whose foreground is the whole frame.
    pub fn unmasked(width: usize, height: usize, pixels: Vec<bool>) -> Self {
        Self::new(width, height, pixels, vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// False outside the frame.
    pub fn get(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.pixels[y as usize * self.width + x as usize]
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

const LOCAL_RADIUS: usize = 8;

/// Ridge pixels are those darker than their local window mean; blocks with
/// no variation are background.
fn binarize(img: &GrayImage) -> (Vec<bool>, Vec<bool>) {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let mut integral = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += d[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let (bw, bh) = (w.div_ceil(BLOCK), h.div_ceil(BLOCK));
    let block_live: Vec<bool> = (0..bw * bh)
        .map(|b| {
            let (bx, by) = (b % bw, b / bw);
            let vals: Vec<f64> = (by * BLOCK..((by + 1) * BLOCK).min(h))
                .flat_map(|y| (bx * BLOCK..((bx + 1) * BLOCK).min(w)).map(move |x| (x, y)))
                .map(|(x, y)| d[y * w + x])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64 > 1e-6
        })
        .collect();
    let mut ridge = vec![false; w * h];
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !block_live[(y / BLOCK) * bw + x / BLOCK] {
                continue;
            }
            mask[y * w + x] = true;
            let (x0, y0) = (
                x.saturating_sub(LOCAL_RADIUS),
                y.saturating_sub(LOCAL_RADIUS),
            );
            let (x1, y1) = ((x + LOCAL_RADIUS + 1).min(w), (y + LOCAL_RADIUS + 1).min(h));
            let sum = integral[y1 * (w + 1) + x1]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            let local = sum / ((x1 - x0) * (y1 - y0)) as f64;
            ridge[y * w + x] = d[y * w + x] < local;
        }
    }
    (ridge, mask)
}

/// Zhang-Suen thinning run to convergence. Pixels outside the frame count
/// as background.
pub fn zhang_suen(width: usize, height: usize, pixels: &[bool]) -> Vec<bool> {
    let mut img = pixels.to_vec();
    let at = |img: &[bool], x: isize, y: isize| -> u8 {
        (x >= 0
            && y >= 0
            && (x as usize) < width
            && (y as usize) < height
            && img[y as usize * width + x as usize]) as u8
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..height as isize {
                for x in 0..width as isize {
                    if at(&img, x, y) == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let p = [
                        at(&img, x, y - 1),
                        at(&img, x + 1, y - 1),
                        at(&img, x + 1, y),
                        at(&img, x + 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x - 1, y + 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let cond = if pass == 0 {
                        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                    } else {
                        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        remove.push(y as usize * width + x as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = false;
            }
        }
        if !changed {
            return img;
        }
    }
}

/// Adaptive (local mean) threshold followed by Zhang-Suen thinning.
pub fn binarize_and_thin(enhanced: &GrayImage) -> Skeleton {
    let (ridge, mask) = binarize(enhanced);
    let (w, h) = (enhanced.width(), enhanced.height());
    Skeleton::new(w, h, zhang_suen(w, h, &ridge), mask)
}
