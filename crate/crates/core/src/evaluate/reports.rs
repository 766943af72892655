use std::fmt::Write as _;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::quality::mean_std;
use super::EvalError;
use crate::matcher::{match_score_with, pairwise_scores_with, MatcherConfig};
use crate::minutiae::MinutiaeTemplate;

pub const HISTOGRAM_BIN: u32 = 5;
pub const HISTOGRAM_MAX: u32 = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// Bins of width 5 over `[0, 500)`; larger scores land in the last bin.
    pub histogram: Vec<u32>,
    pub scores: Vec<u32>,
}

pub fn histogram(scores: &[u32]) -> Vec<u32> {
    let bins = (HISTOGRAM_MAX / HISTOGRAM_BIN) as usize;
    let mut h = vec![0; bins];
    for &s in scores {
        h[((s / HISTOGRAM_BIN) as usize).min(bins - 1)] += 1;
    }
    h
}

pub fn summarize_scores(scores: Vec<u32>) -> DiversityReport {
    let as_f: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
    let (mean, std_dev) = mean_std(&as_f);
    DiversityReport {
        count: scores.len(),
        mean,
        std_dev,
        histogram: histogram(&scores),
        scores,
    }
}

pub fn diversity_report(
    templates: &[MinutiaeTemplate],
    omit_zero: bool,
) -> Result<DiversityReport, EvalError> {
    diversity_report_with(templates, omit_zero, &MatcherConfig::default())
}

pub fn diversity_report_with(
    templates: &[MinutiaeTemplate],
    omit_zero: bool,
    cfg: &MatcherConfig,
) -> Result<DiversityReport, EvalError> {
    if templates.len() < 2 {
        return Err(EvalError::InsufficientSamples {
            needed: 2,
            got: templates.len(),
        });
    }
    let scores = pairwise_scores_with(templates, omit_zero, cfg)
        .into_iter()
        .map(|p| p.score)
        .collect();
    Ok(summarize_scores(scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionReport {
    /// Pooled intra-identity scores in group order, then pair order.
    pub scores: Vec<u32>,
    /// `(score, fraction of scores ≤ score)` at each distinct score.
    pub cdf: Vec<(u32, f64)>,
    pub fraction_at_threshold: f64,
    pub max_score: u32,
}

pub fn empirical_cdf(scores: &[u32]) -> Vec<(u32, f64)> {
    let mut sorted = scores.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out: Vec<(u32, f64)> = Vec::new();
    for (i, &s) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == s => last.1 = frac,
            _ => out.push((s, frac)),
        }
    }
    out
}

pub fn fraction_at_least(scores: &[u32], threshold: u32) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

pub fn impression_report(groups: &[Vec<MinutiaeTemplate>]) -> Result<ImpressionReport, EvalError> {
    impression_report_with(groups, &MatcherConfig::default())
}

pub fn impression_report_with(
    groups: &[Vec<MinutiaeTemplate>],
    cfg: &MatcherConfig,
) -> Result<ImpressionReport, EvalError> {
    if let Some((group, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(EvalError::GroupTooSmall {
            group,
            size: g.len(),
        });
    }
    let scores: Vec<u32> = groups
        .par_iter()
        .map(|g| {
            pairwise_scores_with(g, false, cfg)
                .into_iter()
                .map(|p| p.score)
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    Ok(ImpressionReport {
        cdf: empirical_cdf(&scores),
        fraction_at_threshold: fraction_at_least(&scores, cfg.threshold),
        max_score: scores.iter().copied().max().unwrap_or(0),
        scores,
    })
}

/// Scores of every pair drawn from two different groups, in
/// `(group, member)` lexicographic pair order.
pub fn inter_identity_scores(groups: &[Vec<MinutiaeTemplate>], cfg: &MatcherConfig) -> Vec<u32> {
    let flat: Vec<(usize, &MinutiaeTemplate)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, ts)| ts.iter().map(move |t| (g, t)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..flat.len())
        .flat_map(|a| (a + 1..flat.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| flat[a].0 != flat[b].0)
        .collect();
    pairs
        .into_par_iter()
        .map(|(a, b)| match_score_with(flat[a].1, flat[b].1, cfg).score)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for the first sample tending larger.
    pub p_greater: f64,
}

/// Mann-Whitney U test with the tie-corrected normal approximation and a
/// continuity correction.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> MannWhitney {
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum += all[i..=j].iter().filter(|e| e.1).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return MannWhitney {
            u,
            z: 0.0,
            p_greater: 1.0,
        };
    }
    let z = (u - n1 * n2 / 2.0 - 0.5) / var.sqrt();
    let p_greater = 1.0 - Normal::standard().cdf(z);
    MannWhitney { u, z, p_greater }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

pub fn quality_csv(labels: &[String], scores: &[f64]) -> String {
    let mut s = String::from("image,quality\n");
    for (l, q) in labels.iter().zip(scores) {
        writeln!(s, "{l},{q:.4}").expect("string write");
    }
    s
}

pub fn histogram_csv(hist: &[u32]) -> String {
    let mut s = String::from("bin_start,bin_end,count\n");
    for (i, c) in hist.iter().enumerate() {
        let lo = i as u32 * HISTOGRAM_BIN;
        writeln!(s, "{lo},{},{c}", lo + HISTOGRAM_BIN).expect("string write");
    }
    s
}

pub fn cdf_csv(cdf: &[(u32, f64)]) -> String {
    let mut s = String::from("score,cdf\n");
    for (v, f) in cdf {
        writeln!(s, "{v},{f:.6}").expect("string write");
    }
    s
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 360.0;
const PAD: f64 = 40.0;

fn svg_frame(title: &str, x_label: &str, x_max: f64, y_max: f64, body: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    )
    .expect("string write");
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("string write");
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        SVG_W / 2.0
    )
    .expect("string write");
    let (x0, y0, x1, y1) = (PAD, SVG_H - PAD, SVG_W - PAD / 2.0, PAD);
    writeln!(
        s,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    )
    .expect("string write");
    writeln!(
        s,
        r#"<text x="{x0}" y="{}" font-size="11">0</text>"#,
        y0 + 14.0
    )
    .expect("string write");
    writeln!(
        s,
        r#"<text x="{x1}" y="{}" font-size="11" text-anchor="end">{x_max}</text>"#,
        y0 + 14.0
    )
    .expect("string write");
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{x_label}</text>"#,
        SVG_W / 2.0,
        SVG_H - 6.0
    )
    .expect("string write");
    writeln!(
        s,
        r#"<text x="4" y="{}" font-size="11">{y_max}</text>"#,
        y1 + 4.0
    )
    .expect("string write");
    s.push_str(body);
    s.push_str("</svg>\n");
    s
}

fn plot_x(v: f64, x_max: f64) -> f64 {
    PAD + (SVG_W - 1.5 * PAD) * (v / x_max).clamp(0.0, 1.0)
}

fn plot_y(v: f64, y_max: f64) -> f64 {
    SVG_H
        - PAD
        - (SVG_H - 2.0 * PAD)
            * if y_max > 0.0 {
                (v / y_max).clamp(0.0, 1.0)
            } else {
                0.0
            }
}

/// Bar chart of a score histogram.
pub fn histogram_svg(hist: &[u32], title: &str) -> String {
    let x_max = (hist.len() as u32 * HISTOGRAM_BIN) as f64;
    let y_max = hist.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut body = String::new();
    for (i, &c) in hist.iter().enumerate().filter(|(_, c)| **c > 0) {
        let lo = (i as u32 * HISTOGRAM_BIN) as f64;
        let (xa, xb) = (plot_x(lo, x_max), plot_x(lo + HISTOGRAM_BIN as f64, x_max));
        let top = plot_y(c as f64, y_max);
        writeln!(
            body,
            r#"<rect x="{xa:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="steelblue"/>"#,
            (xb - xa).max(0.5),
            plot_y(0.0, y_max) - top
        )
        .expect("string write");
    }
    svg_frame(title, "score", x_max, y_max, &body)
}

/// Step plot of an empirical CDF.
pub fn cdf_svg(cdf: &[(u32, f64)], title: &str) -> String {
    let x_max = cdf.last().map(|c| c.0).unwrap_or(0).max(1) as f64;
    let mut d = format!("M{:.2} {:.2}", plot_x(0.0, x_max), plot_y(0.0, 1.0));
    let mut prev = 0.0;
    for &(v, f) in cdf {
        let x = plot_x(v as f64, x_max);
        write!(
            d,
            " L{x:.2} {:.2} L{x:.2} {:.2}",
            plot_y(prev, 1.0),
            plot_y(f, 1.0)
        )
        .expect("string write");
        prev = f;
    }
    let body = format!("<path d=\"{d}\" stroke=\"darkred\" fill=\"none\"/>\n");
    svg_frame(title, "score", x_max, 1.0, &body)
}
