//! Rotation and translation invariant minutiae matcher built on
//! intra-template pair tables.
//!
//! Every pair of minutiae within `max_pair_distance` contributes an entry
//! holding the pair distance and each minutia's direction relative to the
//! connecting segment. Entries from two templates are compatible when these
//! agree within tolerance; each compatible couple implies a global rotation
//! and two minutia correspondences. The score is the size of the largest
//! group of compatible couples that share a rotation (within the angle
//! tolerance) and are linked through common correspondences.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::minutiae::MinutiaeTemplate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherConfig {
    pub max_pair_distance: f64,
    pub distance_tolerance: f64,
    /// Radians.
    pub angle_tolerance: f64,
    pub threshold: u32,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            max_pair_distance: 75.0,
            distance_tolerance: 6.0,
            angle_tolerance: 11.25f64.to_radians(),
            threshold: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEntry {
    pub d: f64,
    /// Direction of minutia `i` relative to the segment `i → j`, in `(−π, π]`.
    pub beta1: f64,
    /// Direction of minutia `j` relative to the segment `i → j`, in `(−π, π]`.
    pub beta2: f64,
    pub i: usize,
    pub j: usize,
    /// Absolute direction of the segment `i → j`.
    pub segment: f64,
}

/// Pair entries sorted by distance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairTable {
    pub entries: Vec<PairEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchResult {
    pub score: u32,
    /// Distinct minutia correspondences in the winning group.
    pub matched_pairs: usize,
    pub same_identity: bool,
}

/// Wraps into `(−π, π]`.
fn wrap_signed(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

pub fn build_pair_table(t: &MinutiaeTemplate) -> PairTable {
    build_pair_table_with(t, &MatcherConfig::default())
}

pub fn build_pair_table_with(t: &MinutiaeTemplate, cfg: &MatcherConfig) -> PairTable {
    let m = t.minutiae();
    let mut entries = Vec::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let d = m[i].distance(&m[j]);
            if d > cfg.max_pair_distance {
                continue;
            }
            // image y points down; angles are counter-clockwise with y up
            let segment = (m[i].y - m[j].y).atan2(m[j].x - m[i].x);
            entries.push(PairEntry {
                d,
                beta1: wrap_signed(m[i].angle - segment),
                beta2: wrap_signed(m[j].angle - segment),
                i,
                j,
                segment,
            });
        }
    }
    entries.sort_by(|a, b| a.d.total_cmp(&b.d).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    PairTable { entries }
}

/// A compatible couple of entries: rotation taking `a` onto `b` and the two
/// minutia correspondences `(index in a, index in b)`.
#[derive(Debug, Clone, Copy)]
struct Couple {
    rotation: f64,
    first: (usize, usize),
    second: (usize, usize),
}

fn couples(ta: &PairTable, tb: &PairTable, cfg: &MatcherConfig) -> Vec<Couple> {
    let mut out = Vec::new();
    let mut lo = 0;
    for ea in &ta.entries {
        while lo < tb.entries.len() && tb.entries[lo].d < ea.d - cfg.distance_tolerance {
            lo += 1;
        }
        for eb in tb.entries[lo..]
            .iter()
            .take_while(|eb| eb.d <= ea.d + cfg.distance_tolerance)
        {
            let tol = cfg.angle_tolerance;
            if angle_distance(ea.beta1, eb.beta1) <= tol
                && angle_distance(ea.beta2, eb.beta2) <= tol
            {
                out.push(Couple {
                    rotation: (eb.segment - ea.segment).rem_euclid(TAU),
                    first: (ea.i, eb.i),
                    second: (ea.j, eb.j),
                });
            }
            // the same pair seen from its other end
            let rev1 = wrap_signed(eb.beta2 + PI);
            let rev2 = wrap_signed(eb.beta1 + PI);
            if angle_distance(ea.beta1, rev1) <= tol && angle_distance(ea.beta2, rev2) <= tol {
                out.push(Couple {
                    rotation: (eb.segment + PI - ea.segment).rem_euclid(TAU),
                    first: (ea.i, eb.j),
                    second: (ea.j, eb.i),
                });
            }
        }
    }
    out
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Largest group linked through shared correspondences, with its number of
/// distinct correspondences.
fn largest_linked(group: &[Couple]) -> (usize, usize) {
    let mut parent: Vec<usize> = (0..group.len()).collect();
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (n, c) in group.iter().enumerate() {
        for key in [c.first, c.second] {
            match owner.get(&key) {
                Some(&o) => {
                    let (ra, rb) = (find(&mut parent, o), find(&mut parent, n));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                None => {
                    owner.insert(key, n);
                }
            }
        }
    }
    let mut size: HashMap<usize, usize> = HashMap::new();
    for n in 0..group.len() {
        *size.entry(find(&mut parent, n)).or_default() += 1;
    }
    let Some((&root, &best)) = size.iter().max_by_key(|(&r, &s)| (s, std::cmp::Reverse(r))) else {
        return (0, 0);
    };
    let corr = owner
        .keys()
        .filter(|&&k| find(&mut parent, owner[&k]) == root)
        .count();
    (best, corr)
}

fn score_directed(
    a: &MinutiaeTemplate,
    b: &MinutiaeTemplate,
    cfg: &MatcherConfig,
) -> (usize, usize) {
    if a.len() < 2 || b.len() < 2 {
        return (0, 0);
    }
    let mut cs = couples(
        &build_pair_table_with(a, cfg),
        &build_pair_table_with(b, cfg),
        cfg,
    );
    if cs.is_empty() {
        return (0, 0);
    }
    cs.sort_by(|x, y| x.rotation.total_cmp(&y.rotation));
    let n = cs.len();
    let mut best = (0, 0);
    let mut last_end = 0;
    for s in 0..n {
        // circular window [rotation_s, rotation_s + tolerance]
        let mut end = s;
        while end + 1 < s + n {
            let next = &cs[(end + 1) % n];
            let ahead = if end + 1 >= n {
                next.rotation + TAU
            } else {
                next.rotation
            };
            if ahead - cs[s].rotation > cfg.angle_tolerance {
                break;
            }
            end += 1;
        }
        // a window that does not reach further than the previous one is a subset of it
        if s > 0 && end < last_end {
            continue;
        }
        last_end = end;
        let window: Vec<Couple> = (s..=end).map(|k| cs[k % n]).collect();
        best = best.max(largest_linked(&window));
    }
    best
}

fn canonical_key(t: &MinutiaeTemplate) -> Vec<u64> {
    t.minutiae()
        .iter()
        .flat_map(|m| {
            [
                m.y.to_bits(),
                m.x.to_bits(),
                m.angle.to_bits(),
                m.kind as u64,
            ]
        })
        .collect()
}

pub fn match_score(a: &MinutiaeTemplate, b: &MinutiaeTemplate) -> MatchResult {
    match_score_with(a, b, &MatcherConfig::default())
}

pub fn match_score_with(
    a: &MinutiaeTemplate,
    b: &MinutiaeTemplate,
    cfg: &MatcherConfig,
) -> MatchResult {
    // a fixed argument order makes floating-point ties resolve the same way both ways round
    let (score, matched_pairs) = if canonical_key(a) <= canonical_key(b) {
        score_directed(a, b, cfg)
    } else {
        score_directed(b, a, cfg)
    };
    let score = score as u32;
    MatchResult {
        score,
        matched_pairs,
        same_identity: score >= cfg.threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairScore {
    pub a: usize,
    pub b: usize,
    pub score: u32,
}

/// Scores of all unordered pairs in `(a, b)` index order, `a < b`.
pub fn pairwise_scores(templates: &[MinutiaeTemplate], omit_zero: bool) -> Vec<PairScore> {
    pairwise_scores_with(templates, omit_zero, &MatcherConfig::default())
}

pub fn pairwise_scores_with(
    templates: &[MinutiaeTemplate],
    omit_zero: bool,
    cfg: &MatcherConfig,
) -> Vec<PairScore> {
    let pairs: Vec<(usize, usize)> = (0..templates.len())
        .flat_map(|a| (a + 1..templates.len()).map(move |b| (a, b)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(a, b)| PairScore {
            a,
            b,
            score: match_score_with(&templates[a], &templates[b], cfg).score,
        })
        .filter(|p| !omit_zero || p.score > 0)
        .collect()
}

/// `id_a,id_b,score` rows labelled through `labels`.
pub fn scores_to_csv(labels: &[String], scores: &[PairScore]) -> String {
    let mut s = String::from("id_a,id_b,score\n");
    for p in scores {
        writeln!(s, "{},{},{}", labels[p.a], labels[p.b], p.score).expect("string write");
    }
    s
}
