use std::f64::consts::{FRAC_PI_4, FRAC_PI_6, PI};

use super::template::{normalize_angle, Minutia, MinutiaKind, MinutiaeTemplate};
use super::thin::Skeleton;
use crate::synthcorpus::OrientationField;

/// Ring offsets starting east and turning counter-clockwise on screen.
const RING: [(isize, isize); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    /// Minimum distance from the frame edge and from background pixels.
    pub border_margin: f64,
    /// Minutiae closer than this are merged.
    pub merge_radius: f64,
    /// Ending pairs facing each other within this distance are removed.
    pub facing_radius: f64,
    /// Skeleton pixels followed to estimate a branch direction.
    pub trace_length: usize,
    /// Endings whose ridge is shorter than this are dropped.
    pub min_ridge_length: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            border_margin: 10.0,
            merge_radius: 6.0,
            facing_radius: 8.0,
            trace_length: 10,
            min_ridge_length: 5,
        }
    }
}

/// 8-neighbour ring of `(x, y)` packed as bits in [`RING`] order.
pub fn neighborhood_code(s: &Skeleton, x: usize, y: usize) -> u8 {
    RING.iter()
        .enumerate()
        .filter(|(_, (dx, dy))| s.get(x as isize + dx, y as isize + dy))
        .fold(0u8, |acc, (i, _)| acc | (1 << i))
}

/// Half the sum of absolute differences between consecutive ring entries.
pub fn crossing_number(code: u8) -> u32 {
    let bit = |i: usize| ((code >> (i % 8)) & 1) as i32;
    (0..8)
        .map(|i| (bit(i) - bit(i + 1)).unsigned_abs())
        .sum::<u32>()
        / 2
}

fn angle_of(dx: f64, dy: f64) -> f64 {
    // image y points down
    normalize_angle((-dy).atan2(dx))
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// First pixel of each run of set bits around the ring, preferring an
/// edge-adjacent pixel within the run.
fn branch_starts(code: u8) -> Vec<(isize, isize)> {
    let set = |i: usize| (code >> (i % 8)) & 1 == 1;
    let Some(first_gap) = (0..8).find(|&i| !set(i)) else {
        return Vec::new();
    };
    let mut starts = Vec::new();
    let mut i = first_gap + 1;
    while i <= first_gap + 8 {
        if set(i) {
            let mut run = Vec::new();
            while set(i) && i <= first_gap + 8 {
                run.push(i % 8);
                i += 1;
            }
            let pick = run.iter().copied().find(|k| k % 2 == 0).unwrap_or(run[0]);
            starts.push(RING[pick]);
        } else {
            i += 1;
        }
    }
    starts
}

/// Follows the skeleton from `(x, y)` through `first`, returning the last
/// pixel reached and the number of steps taken.
fn trace(
    s: &Skeleton,
    x: usize,
    y: usize,
    first: (isize, isize),
    len: usize,
) -> ((isize, isize), usize) {
    let origin = (x as isize, y as isize);
    let mut visited = vec![origin];
    for (dx, dy) in RING {
        if s.get(origin.0 + dx, origin.1 + dy) {
            visited.push((origin.0 + dx, origin.1 + dy));
        }
    }
    let mut cur = (origin.0 + first.0, origin.1 + first.1);
    let mut steps = 1;
    while steps < len {
        let next: Vec<(isize, isize)> = RING
            .iter()
            .map(|(dx, dy)| (cur.0 + dx, cur.1 + dy))
            .filter(|p| s.get(p.0, p.1) && !visited.contains(p))
            .collect();
        let Some(&far) = next
            .iter()
            .max_by_key(|p| (p.0 - origin.0).pow(2) + (p.1 - origin.1).pow(2))
        else {
            break;
        };
        visited.extend(next);
        cur = far;
        steps += 1;
    }
    (cur, steps)
}

/// Snaps a traced direction onto the field orientation when they agree.
fn resolve(field: &OrientationField, x: f64, y: f64, traced: f64) -> f64 {
    let theta = field.interpolate(x, y);
    let candidate = if angle_diff(theta, traced) <= angle_diff(theta + PI, traced) {
        theta
    } else {
        theta + PI
    };
    if angle_diff(candidate, traced) < FRAC_PI_6 {
        normalize_angle(candidate)
    } else {
        traced
    }
}

struct Candidate {
    minutia: Minutia,
    ridge_length: usize,
}

fn detect(s: &Skeleton, field: &OrientationField, cfg: &ExtractConfig) -> Vec<Candidate> {
    let mut out = Vec::new();
    for y in 1..s.height().saturating_sub(1) {
        for x in 1..s.width().saturating_sub(1) {
            if !s.get(x as isize, y as isize) {
                continue;
            }
            let code = neighborhood_code(s, x, y);
            let (xf, yf) = (x as f64, y as f64);
            match crossing_number(code) {
                1 => {
                    let start = branch_starts(code)[0];
                    let (end, steps) = trace(s, x, y, start, cfg.trace_length);
                    let traced = angle_of(xf - end.0 as f64, yf - end.1 as f64);
                    out.push(Candidate {
                        minutia: Minutia::new(
                            xf,
                            yf,
                            resolve(field, xf, yf, traced),
                            MinutiaKind::Ending,
                        ),
                        ridge_length: steps,
                    });
                }
                3 => {
                    let dirs: Vec<f64> = branch_starts(code)
                        .into_iter()
                        .map(|b| {
                            let (end, _) = trace(s, x, y, b, cfg.trace_length);
                            angle_of(end.0 as f64 - xf, end.1 as f64 - yf)
                        })
                        .collect();
                    // the two branches closest in direction are the fork
                    let (i, j) = [(0, 1), (0, 2), (1, 2)]
                        .into_iter()
                        .min_by(|a, b| {
                            angle_diff(dirs[a.0], dirs[a.1])
                                .total_cmp(&angle_diff(dirs[b.0], dirs[b.1]))
                        })
                        .expect("three pairs");
                    let bisector =
                        (dirs[i].sin() + dirs[j].sin()).atan2(dirs[i].cos() + dirs[j].cos());
                    out.push(Candidate {
                        minutia: Minutia::new(
                            xf,
                            yf,
                            resolve(field, xf, yf, normalize_angle(bisector)),
                            MinutiaKind::Bifurcation,
                        ),
                        ridge_length: cfg.trace_length,
                    });
                }
                _ => {}
            }
        }
    }
    out
}

fn near_background(s: &Skeleton, m: &Minutia, margin: f64) -> bool {
    let (w, h) = (s.width() as f64, s.height() as f64);
    if m.x < margin || m.y < margin || m.x > w - 1.0 - margin || m.y > h - 1.0 - margin {
        return true;
    }
    let r = margin.ceil() as isize;
    let (cx, cy) = (m.x.round() as isize, m.y.round() as isize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if ((dx * dx + dy * dy) as f64) < margin * margin
                && x >= 0
                && y >= 0
                && (x as usize) < s.width()
                && (y as usize) < s.height()
                && !s.is_foreground(x as usize, y as usize)
            {
                return true;
            }
        }
    }
    false
}

/// Crossing-number detection with margin, facing-pair and merge pruning.
pub fn extract_with(
    s: &Skeleton,
    field: &OrientationField,
    cfg: &ExtractConfig,
) -> MinutiaeTemplate {
    let mut found: Vec<Minutia> = detect(s, field, cfg)
        .into_iter()
        .filter(|c| {
            c.minutia.kind == MinutiaKind::Bifurcation || c.ridge_length >= cfg.min_ridge_length
        })
        .map(|c| c.minutia)
        .filter(|m| cfg.border_margin <= 0.0 || !near_background(s, m, cfg.border_margin))
        .collect();

    let mut broken = vec![false; found.len()];
    for i in 0..found.len() {
        for j in i + 1..found.len() {
            let (a, b) = (&found[i], &found[j]);
            if a.kind != MinutiaKind::Ending
                || b.kind != MinutiaKind::Ending
                || a.distance(b) >= cfg.facing_radius
            {
                continue;
            }
            let toward = angle_of(b.x - a.x, b.y - a.y);
            if angle_diff(a.angle, toward) < FRAC_PI_4
                && angle_diff(b.angle, toward + PI) < FRAC_PI_4
            {
                broken[i] = true;
                broken[j] = true;
            }
        }
    }
    let mut k = 0;
    found.retain(|_| {
        k += 1;
        !broken[k - 1]
    });

    let ordered = MinutiaeTemplate::new(s.width(), found);
    let mut kept: Vec<Minutia> = Vec::new();
    for m in ordered.minutiae() {
        if kept.iter().all(|k| k.distance(m) >= cfg.merge_radius) {
            kept.push(*m);
        }
    }
    MinutiaeTemplate::new(s.width(), kept)
}

pub fn extract(s: &Skeleton, field: &OrientationField) -> MinutiaeTemplate {
    extract_with(s, field, &ExtractConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_margin() -> ExtractConfig {
        ExtractConfig {
            border_margin: 0.0,
            ..ExtractConfig::default()
        }
    }

    fn skeleton_from(w: usize, h: usize, pts: &[(usize, usize)]) -> Skeleton {
        let mut px = vec![false; w * h];
        for &(x, y) in pts {
            px[y * w + x] = true;
        }
        Skeleton::unmasked(w, h, px)
    }

    fn flat_field(w: usize) -> OrientationField {
        OrientationField::uniform(16, w.div_ceil(16), w.div_ceil(16), 0.0)
    }

    #[test]
    fn crossing_number_matches_transition_count() {
        for code in 0..=255u8 {
            let bits: Vec<u8> = (0..8).map(|i| (code >> i) & 1).collect();
            let rises = (0..8)
                .filter(|&i| bits[i] == 0 && bits[(i + 1) % 8] == 1)
                .count() as u32;
            assert_eq!(crossing_number(code), rises, "code {code:08b}");
        }
        assert_eq!(crossing_number(0b0000_0001), 1);
        assert_eq!(crossing_number(0b0001_0001), 2);
        assert_eq!(crossing_number(0b1001_0010), 3);
    }

    #[test]
    fn blank_skeleton_has_no_minutiae() {
        let s = skeleton_from(32, 32, &[]);
        assert!(extract(&s, &flat_field(32)).is_empty());
    }

    #[test]
    fn straight_segment_has_two_endings() {
        let pts: Vec<(usize, usize)> = (10..40).map(|x| (x, 25)).collect();
        let t = extract(&skeleton_from(50, 50, &pts), &flat_field(50));
        assert_eq!(t.len(), 2);
        assert!(t.minutiae().iter().all(|m| m.kind == MinutiaKind::Ending));
        let left = &t.minutiae()[0];
        let right = &t.minutiae()[1];
        let (left, right) = if left.x < right.x {
            (left, right)
        } else {
            (right, left)
        };
        assert!(angle_diff(left.angle, PI) < 1e-9);
        assert!(angle_diff(right.angle, 0.0) < 1e-9);
    }

    #[test]
    fn y_junction_has_one_bifurcation_and_three_endings() {
        let (cx, cy) = (30usize, 30usize);
        let mut pts = vec![(cx, cy)];
        for k in 1..=22 {
            pts.push((cx - k, cy));
            pts.push((cx + k, cy - k));
            pts.push((cx + k, cy + k));
        }
        let t = extract_with(&skeleton_from(60, 60, &pts), &flat_field(60), &no_margin());
        let count = |k| t.minutiae().iter().filter(|m| m.kind == k).count();
        assert_eq!(count(MinutiaKind::Bifurcation), 1);
        assert_eq!(count(MinutiaKind::Ending), 3);
        let b = t
            .minutiae()
            .iter()
            .find(|m| m.kind == MinutiaKind::Bifurcation)
            .unwrap();
        // the fork opens towards +x
        assert!(angle_diff(b.angle, 0.0) < 1e-9);
        // with the default margin only interior points survive
        let t = extract(&skeleton_from(60, 60, &pts), &flat_field(60));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn facing_endings_are_removed() {
        let mut pts: Vec<(usize, usize)> = (5..28).map(|x| (x, 20)).collect();
        pts.extend((33..55).map(|x| (x, 20)));
        let t = extract_with(&skeleton_from(60, 40, &pts), &flat_field(60), &no_margin());
        assert_eq!(t.len(), 2, "{:?}", t.minutiae());
        assert!(t.minutiae().iter().all(|m| m.x < 10.0 || m.x > 50.0));
    }

    #[test]
    fn close_minutiae_are_merged() {
        let mut pts: Vec<(usize, usize)> = (10..40).map(|x| (x, 20)).collect();
        pts.extend((21..24).map(|y| (25, y)));
        let t = extract_with(&skeleton_from(50, 40, &pts), &flat_field(50), &no_margin());
        for (i, a) in t.minutiae().iter().enumerate() {
            for b in &t.minutiae()[i + 1..] {
                assert!(a.distance(b) >= 6.0);
            }
        }
    }
}
