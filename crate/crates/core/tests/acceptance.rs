//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 4 to 6 and 10 train, sample and branch a small model, so a full
//! run takes over an hour on one core. Failing criteria are reported but
//! only turn into a non-zero exit status with `ACCEPTANCE_STRICT=1`.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use fingerlab::denoiser::{
    encode_checkpoint, loss_and_grad_for, train, DenoiserModel, ModelConfig, TrainConfig,
};
use fingerlab::diffusion::{
    branch_identities, linear_schedule, q_sample, q_step, sample_batch, BranchSpec, LatentImage,
    NoiseSchedule,
};
use fingerlab::evaluate::{
    fit_stats, fraction_at_least, frechet_distance, mann_whitney, median, quality_csv,
    quality_report, quality_score, FeatureStats,
};
use fingerlab::imagecore::{encode_pgm, gaussian_blur, GrayImage};
use fingerlab::matcher::{match_score, pairwise_scores, scores_to_csv};
use fingerlab::minutiae::{
    crossing_number, extract_from_image, extract_with, neighborhood_code, zhang_suen,
    ExtractConfig, Minutia, MinutiaKind, MinutiaeTemplate, Skeleton,
};
use fingerlab::synthcorpus::{
    corpus_images, render_master, IdentityParams, OrientationField, WarpConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Prints one criterion line; a runtime budget in seconds is part of the verdict.
fn report(
    id: usize,
    name: &str,
    outcome: &Outcome,
    elapsed: Duration,
    budget: Option<f64>,
) -> bool {
    let secs = elapsed.as_secs_f64();
    let in_budget = budget.is_none_or(|b| secs < b);
    let pass = outcome.pass && in_budget;
    let timing = match budget {
        Some(b) => format!("{secs:.1} s, budget {b:.0} s"),
        None => format!("{secs:.1} s"),
    };
    println!(
        "criterion {id:>2} {} {name}: {} [{timing}]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail
    );
    pass
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn schedule() -> NoiseSchedule {
    linear_schedule(1000, 1e-4, 0.02).unwrap()
}

/// Mean and unbiased variance.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

/// Whether sample moments of `n` draws sit within three standard errors of
/// a Gaussian with the given mean and variance.
fn within_three_se(sample: (f64, f64), mean: f64, var: f64, n: usize) -> bool {
    let n = n as f64;
    let se_mean = (var / n).sqrt();
    let se_var = var * (2.0 / (n - 1.0)).sqrt();
    (sample.0 - mean).abs() <= 3.0 * se_mean && (sample.1 - var).abs() <= 3.0 * se_var
}

fn schedule_suite() -> Outcome {
    let s = schedule();
    let mut prod = 1.0;
    let mut worst_rel: f64 = 0.0;
    let mut monotone = true;
    for t in 1..=1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0);
        worst_rel = worst_rel.max((s.alpha_bar(t) - prod).abs() / prod);
        if t > 1 && s.alpha_bar(t) >= s.alpha_bar(t - 1) {
            monotone = false;
        }
    }
    let draws = 10_000;
    let x0 = LatentImage::new(1, vec![0.7]).unwrap();
    let mut r = rng(101);
    let mut marginals_ok = true;
    let mut details = Vec::new();
    for t in [1, 500, 1000] {
        let xs: Vec<f64> = (0..draws)
            .map(|_| {
                let eps = [r.sample::<f64, _>(rand_distr::StandardNormal)];
                q_sample(&x0, t, &eps, &s).unwrap().data()[0]
            })
            .collect();
        let ab = s.alpha_bar(t);
        let m = moments(&xs);
        let ok = within_three_se(m, ab.sqrt() * 0.7, 1.0 - ab, draws);
        marginals_ok &= ok;
        details.push(format!(
            "t={t} mean {:.4}/{:.4} var {:.5}/{:.5}",
            m.0,
            ab.sqrt() * 0.7,
            m.1,
            1.0 - ab
        ));
    }
    Outcome::new(
        monotone && worst_rel < 1e-12 && marginals_ok,
        format!(
            "monotone {monotone}, worst relative error {worst_rel:.1e}; {}",
            details.join("; ")
        ),
    )
}

fn chain_suite() -> Outcome {
    let s = schedule();
    let side = 8;
    let x0 = LatentImage::new(
        side,
        (0..64).map(|i| (i as f64 / 63.0) * 2.0 - 1.0).collect(),
    )
    .unwrap();
    let chains = 400;
    let mut r = rng(202);
    let mut ok = true;
    let mut details = Vec::new();
    for k in [10, 100] {
        let ab = s.alpha_bar(k);
        // residuals about the closed-form mean, pooled over pixels and chains
        let mut resid = Vec::with_capacity(chains * 64);
        for _ in 0..chains {
            let mut x = x0.clone();
            for t in 1..=k {
                let eps: Vec<f64> = (0..64)
                    .map(|_| r.sample(rand_distr::StandardNormal))
                    .collect();
                x = q_step(&x, t, &eps, &s).unwrap();
            }
            resid.extend(
                x.data()
                    .iter()
                    .zip(x0.data())
                    .map(|(v, v0)| v - ab.sqrt() * v0),
            );
        }
        let m = moments(&resid);
        let pass = within_three_se(m, 0.0, 1.0 - ab, resid.len());
        ok &= pass;
        details.push(format!(
            "k={k} mean {:.5} var {:.5}/{:.5}",
            m.0,
            m.1,
            1.0 - ab
        ));
    }
    Outcome::new(ok, details.join("; "))
}

fn gradient_suite() -> Outcome {
    let cfg = ModelConfig {
        side: 8,
        init_features: 4,
        depth: 1,
        time_embed_dim: 8,
    };
    let mut model = DenoiserModel::init(cfg, 3).unwrap();
    let mut r = rng(303);
    for (_, p) in model.params_mut() {
        for v in p.values_mut() {
            *v += 0.1 * r.random_range(-1.0..1.0);
        }
    }
    let x: Vec<LatentImage> = (0..2).map(|_| LatentImage::gaussian(8, &mut r)).collect();
    let eps: Vec<Vec<f64>> = (0..2)
        .map(|_| LatentImage::gaussian(8, &mut r).into_data())
        .collect();
    let t = [40, 900];
    let (_, grads) = loss_and_grad_for(&model, &x, &t, &eps).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let pi = r.random_range(0..model.params().len());
        let vi = r.random_range(0..model.params()[pi].1.len());
        let base = model.params()[pi].1.values()[vi];
        model.params_mut()[pi].1.values_mut()[vi] = base + h;
        let plus = loss_and_grad_for(&model, &x, &t, &eps).unwrap().0;
        model.params_mut()[pi].1.values_mut()[vi] = base - h;
        let minus = loss_and_grad_for(&model, &x, &t, &eps).unwrap().0;
        model.params_mut()[pi].1.values_mut()[vi] = base;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[pi][vi];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    Outcome::new(
        worst < 1e-4,
        format!("25 parameters, worst relative error {worst:.2e} (< 1e-4)"),
    )
}

/// Everything the toy pipeline produces, kept for the determinism rerun.
struct PipelineRun {
    checkpoint: Vec<u8>,
    loss_csv: String,
    sample_images: Vec<Vec<u8>>,
    sample_quality_csv: String,
    impression_images: Vec<Vec<u8>>,
    templates: Vec<String>,
    scores_csv: String,
}

struct PipelineMetrics {
    loss_ratio: f64,
    train_time: Duration,
    quality_samples: f64,
    quality_noise: f64,
    fd_samples: f64,
    fd_noise: f64,
    sample_time: Duration,
    intra: Vec<u32>,
    inter: Vec<u32>,
    mean_minutiae: f64,
    branch_time: Duration,
}

const IDENTITIES: usize = 50;
const BRANCHES: usize = 4;

fn toy_pipeline() -> (PipelineRun, PipelineMetrics) {
    let s = schedule();
    let corpus: Vec<GrayImage> = corpus_images(50, 4, 64, 1, &WarpConfig::default())
        .unwrap()
        .into_iter()
        .map(|(_, img)| img)
        .collect();

    let start = Instant::now();
    let cfg = ModelConfig {
        side: 64,
        init_features: 8,
        depth: 2,
        time_embed_dim: 32,
    };
    let mut model = DenoiserModel::init(cfg, 1).unwrap();
    let tc = TrainConfig {
        batch_size: 16,
        steps: 500,
        learning_rate: 3e-3,
        seed: 2,
        checkpoint_every: 0,
    };
    let train_report = train(&mut model, &corpus, &s, &tc, None, |_, _| {}).unwrap();
    let train_time = start.elapsed();
    let losses = &train_report.losses;
    let head = losses[..50].iter().sum::<f64>() / 50.0;
    let tail = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;

    let start = Instant::now();
    let samples = sample_batch(&model, &s, 64, 64, &mut rng(5)).unwrap();
    let mut noise_rng = rng(6);
    let noise: Vec<GrayImage> = (0..64)
        .map(|_| LatentImage::gaussian(64, &mut noise_rng).to_gray())
        .collect();
    let q_samples = quality_report(&samples);
    let q_noise = quality_report(&noise);
    let corpus_stats = fit_stats(&corpus).unwrap();
    let fd_samples = frechet_distance(&fit_stats(&samples).unwrap(), &corpus_stats).unwrap();
    let fd_noise = frechet_distance(&fit_stats(&noise).unwrap(), &corpus_stats).unwrap();
    let sample_time = start.elapsed();

    let start = Instant::now();
    let spec = BranchSpec::new(400, BRANCHES, s.steps()).unwrap();
    let branches = branch_identities(&model, &s, spec, 64, IDENTITIES, &mut rng(7)).unwrap();
    let impressions: Vec<GrayImage> = branches.into_iter().flat_map(|b| b.impressions).collect();
    let templates: Vec<MinutiaeTemplate> = impressions
        .iter()
        .map(|img| extract_from_image(img).unwrap_or_else(|_| MinutiaeTemplate::empty(64)))
        .collect();
    let scores = pairwise_scores(&templates, false);
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for p in &scores {
        if p.a / BRANCHES == p.b / BRANCHES {
            intra.push(p.score);
        } else {
            inter.push(p.score);
        }
    }
    let branch_time = start.elapsed();

    let sample_labels: Vec<String> = (0..samples.len())
        .map(|i| format!("sample_{i:04}"))
        .collect();
    let impression_labels: Vec<String> = (0..impressions.len())
        .map(|i| format!("id{}_impr{}", i / BRANCHES, i % BRANCHES))
        .collect();
    let run = PipelineRun {
        checkpoint: encode_checkpoint(&model),
        loss_csv: train_report.to_csv(),
        sample_images: samples.iter().map(encode_pgm).collect(),
        sample_quality_csv: quality_csv(&sample_labels, &q_samples.scores),
        impression_images: impressions.iter().map(encode_pgm).collect(),
        templates: templates.iter().map(MinutiaeTemplate::to_text).collect(),
        scores_csv: scores_to_csv(&impression_labels, &scores),
    };
    let metrics = PipelineMetrics {
        loss_ratio: tail / head,
        train_time,
        quality_samples: q_samples.mean,
        quality_noise: q_noise.mean,
        fd_samples,
        fd_noise,
        sample_time,
        intra,
        inter,
        mean_minutiae: templates.iter().map(MinutiaeTemplate::len).sum::<usize>() as f64
            / templates.len() as f64,
        branch_time,
    };
    (run, metrics)
}

fn training_outcome(m: &PipelineMetrics) -> Outcome {
    Outcome::new(
        m.loss_ratio < 0.5,
        format!(
            "final/initial 50-step mean loss {:.3} (< 0.5)",
            m.loss_ratio
        ),
    )
}

fn sampling_outcome(m: &PipelineMetrics) -> Outcome {
    let margin = m.quality_samples - m.quality_noise;
    let ratio = m.fd_samples / m.fd_noise;
    Outcome::new(
        margin >= 20.0 && ratio < 0.2,
        format!(
            "quality {:.1} vs noise {:.1} (margin {margin:.1} >= 20); Fréchet {:.4} vs noise {:.4} (ratio {ratio:.3} < 0.2)",
            m.quality_samples, m.quality_noise, m.fd_samples, m.fd_noise
        ),
    )
}

fn identity_outcome(m: &PipelineMetrics) -> Outcome {
    let f_intra = fraction_at_least(&m.intra, 40);
    let f_inter = fraction_at_least(&m.inter, 40);
    let as_f64 = |v: &[u32]| v.iter().map(|&s| s as f64).collect::<Vec<_>>();
    let (intra, inter) = (as_f64(&m.intra), as_f64(&m.inter));
    let (med_intra, med_inter) = (median(&intra), median(&inter));
    let mw = mann_whitney(&intra, &inter);
    let part_a = f_intra - f_inter >= 0.4;
    let part_b = med_intra > med_inter && mw.p_greater < 0.01;
    Outcome::new(
        part_a && part_b,
        format!(
            "(a) {} : fraction >= 40 intra {f_intra:.3} inter {f_inter:.3}, gap {:.3} (>= 0.4); \
             (b) {} : median intra {med_intra} inter {med_inter}, Mann-Whitney p {:.2e} (< 0.01); \
             {} intra / {} inter pairs, {:.1} minutiae per impression",
            if part_a { "pass" } else { "fail" },
            f_intra - f_inter,
            if part_b { "pass" } else { "fail" },
            mw.p_greater,
            m.intra.len(),
            m.inter.len(),
            m.mean_minutiae
        ),
    )
}

fn random_template(r: &mut ChaCha8Rng, n: usize, side: f64) -> MinutiaeTemplate {
    let mut pts: Vec<Minutia> = Vec::new();
    while pts.len() < n {
        let kind = if r.random_bool(0.5) {
            MinutiaKind::Ending
        } else {
            MinutiaKind::Bifurcation
        };
        let m = Minutia::new(
            r.random_range(0.0..side),
            r.random_range(0.0..side),
            r.random_range(0.0..TAU),
            kind,
        );
        if pts.iter().all(|p| p.distance(&m) >= 6.0) {
            pts.push(m);
        }
    }
    MinutiaeTemplate::new(side as usize, pts)
}

/// Rotates counter-clockwise on screen about the image centre, then shifts.
fn rigid(t: &MinutiaeTemplate, deg: f64, dx: f64, dy: f64) -> MinutiaeTemplate {
    let a = deg.to_radians();
    let c = t.source_side as f64 / 2.0;
    let moved = t
        .minutiae()
        .iter()
        .map(|m| {
            let (x, y) = (m.x - c, c - m.y);
            let (rx, ry) = (x * a.cos() - y * a.sin(), x * a.sin() + y * a.cos());
            Minutia::new(
                rx + c + dx,
                c - ry + dy,
                (m.angle + a).rem_euclid(TAU),
                m.kind,
            )
        })
        .collect();
    MinutiaeTemplate::new(t.source_side, moved)
}

/// The `n` minutiae closest to the image centre.
fn interior(t: &MinutiaeTemplate, n: usize) -> MinutiaeTemplate {
    let c = t.source_side as f64 / 2.0;
    let mut pts = t.minutiae().to_vec();
    pts.sort_by(|a, b| {
        (a.x - c)
            .hypot(a.y - c)
            .total_cmp(&(b.x - c).hypot(b.y - c))
    });
    pts.truncate(n);
    MinutiaeTemplate::new(t.source_side, pts)
}

fn matcher_suite() -> Outcome {
    let mut r = rng(404);
    let symmetric = (0..100).all(|_| {
        let na = r.random_range(5..40);
        let nb = r.random_range(5..40);
        let a = random_template(&mut r, na, 192.0);
        let b = random_template(&mut r, nb, 192.0);
        match_score(&a, &b).score == match_score(&b, &a).score
    });

    let fixture_start = Instant::now();
    let corpus = corpus_images(20, 1, 192, 31, &WarpConfig::default()).unwrap();
    let templates: Vec<MinutiaeTemplate> = corpus
        .iter()
        .map(|(_, img)| extract_from_image(img).unwrap())
        .collect();
    let fixture_time = fixture_start.elapsed();

    let match_start = Instant::now();
    let rich: Vec<MinutiaeTemplate> = templates
        .iter()
        .filter(|t| t.len() >= 30)
        .map(|t| interior(t, 30))
        .collect();
    let self_min = rich.iter().map(|t| match_score(t, t).score).min();
    let self_ok = !rich.is_empty() && self_min.is_some_and(|s| s >= 40);

    let mut worst_drift: f64 = 0.0;
    for t in &rich {
        let own = match_score(t, t).score as f64;
        for &(deg, dx, dy) in &[
            (30.0, 0.0, 0.0),
            (-30.0, 12.0, -7.0),
            (12.5, -20.0, 15.0),
            (-5.0, 40.0, 3.0),
        ] {
            let moved = match_score(t, &rigid(t, deg, dx, dy)).score as f64;
            worst_drift = worst_drift.max((moved - own).abs() / own);
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..20)
        .flat_map(|i| (i + 1..20).map(move |j| (i, j)))
        .collect();
    for k in (1..pairs.len()).rev() {
        pairs.swap(k, r.random_range(0..=k));
    }
    let below = pairs[..100]
        .iter()
        .filter(|&&(i, j)| match_score(&templates[i], &templates[j]).score < 40)
        .count();
    let match_time = match_start.elapsed();

    Outcome::new(
        symmetric && self_ok && worst_drift <= 0.1 && below >= 90,
        format!(
            "symmetry on 100 pairs {symmetric}; {} 30-minutia templates, lowest self score {} (>= 40); \
             worst rigid drift {:.1}% (<= 10%); independent pairs below 40: {below}/100 (>= 90); \
             matching {:.1} s, template extraction {:.1} s",
            rich.len(),
            self_min.map_or("none".to_string(), |s| s.to_string()),
            100.0 * worst_drift,
            match_time.as_secs_f64(),
            fixture_time.as_secs_f64()
        ),
    )
}

fn skeleton_from(w: usize, h: usize, pts: &[(usize, usize)]) -> Skeleton {
    let mut px = vec![false; w * h];
    for &(x, y) in pts {
        px[y * w + x] = true;
    }
    Skeleton::unmasked(w, h, px)
}

fn minutiae_suite() -> Outcome {
    // ring read clockwise from the east neighbour, y down
    const RING: [(isize, isize); 8] = [
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
    ];
    let mut lookup_ok = true;
    for pattern in 0..256u32 {
        let on: Vec<bool> = (0..8).map(|i| (pattern >> i) & 1 == 1).collect();
        let expected = (0..8).filter(|&i| !on[i] && on[(i + 1) % 8]).count() as u32;
        let pts: Vec<(usize, usize)> = std::iter::once((1, 1))
            .chain(
                RING.iter()
                    .zip(&on)
                    .filter(|(_, &o)| o)
                    .map(|(&(dx, dy), _)| ((1 + dx) as usize, (1 + dy) as usize)),
            )
            .collect();
        let s = skeleton_from(3, 3, &pts);
        lookup_ok &= crossing_number(neighborhood_code(&s, 1, 1)) == expected;
    }

    let mut r = rng(505);
    let idempotent = (0..20).all(|_| {
        let (w, h) = (40, 30);
        let mut px = vec![false; w * h];
        for _ in 0..6 {
            let (x0, y0) = (r.random_range(0..w - 8), r.random_range(0..h - 8));
            let (bw, bh) = (r.random_range(2..8), r.random_range(2..8));
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    px[y * w + x] = true;
                }
            }
        }
        let once = zhang_suen(w, h, &px);
        zhang_suen(w, h, &once) == once
    });

    let no_margin = ExtractConfig {
        border_margin: 0.0,
        ..ExtractConfig::default()
    };
    let flat = OrientationField::uniform(16, 4, 4, 0.0);
    let line: Vec<(usize, usize)> = (10..50).map(|x| (x, 30)).collect();
    let t = extract_with(&skeleton_from(64, 64, &line), &flat, &no_margin);
    let count = |t: &MinutiaeTemplate, k| t.minutiae().iter().filter(|m| m.kind == k).count();
    let line_ok = count(&t, MinutiaKind::Ending) == 2 && count(&t, MinutiaKind::Bifurcation) == 0;
    let mut y = vec![(30usize, 30usize)];
    for k in 1..=20 {
        y.extend([(30 - k, 30), (30 + k, 30 - k), (30 + k, 30 + k)]);
    }
    let t = extract_with(&skeleton_from(64, 64, &y), &flat, &no_margin);
    let y_ok = count(&t, MinutiaKind::Ending) == 3 && count(&t, MinutiaKind::Bifurcation) == 1;

    Outcome::new(
        lookup_ok && idempotent && line_ok && y_ok,
        format!(
            "256-case crossing numbers {lookup_ok}; thinning idempotent on 20 blobs {idempotent}; \
             line gives 2 endings {line_ok}; Y gives 1 bifurcation + 3 endings {y_ok}"
        ),
    )
}

fn diagonal_stats(mean: &[f64], var: &[f64]) -> FeatureStats {
    FeatureStats {
        mean: DVector::from_column_slice(mean),
        cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
    }
}

fn metric_suite() -> Outcome {
    let mut r = rng(606);
    let mut worst_diag: f64 = 0.0;
    for _ in 0..50 {
        let d = r.random_range(1..12);
        let m1: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let m2: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| r.random_range(0.01..3.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| r.random_range(0.01..3.0)).collect();
        let expected: f64 = (0..d)
            .map(|i| (m1[i] - m2[i]).powi(2) + (v1[i].sqrt() - v2[i].sqrt()).powi(2))
            .sum();
        let got = frechet_distance(&diagonal_stats(&m1, &v1), &diagonal_stats(&m2, &v2)).unwrap();
        worst_diag = worst_diag.max((got - expected).abs());
    }

    let imgs: Vec<GrayImage> = corpus_images(5, 2, 64, 9, &WarpConfig::default())
        .unwrap()
        .into_iter()
        .map(|(_, img)| img)
        .collect();
    let stats = fit_stats(&imgs).unwrap();
    let self_distance = frechet_distance(&stats, &stats.clone()).unwrap().abs();

    let mut ranked = 0;
    let fixtures = 5;
    for seed in 0..fixtures {
        let clean = render_master(&IdentityParams::from_seed(1000 + seed), 64).unwrap();
        let blurred = gaussian_blur(&clean, 2.0);
        let noise = LatentImage::gaussian(64, &mut rng(700 + seed)).to_gray();
        let (qn, qb, qc) = (
            quality_score(&noise),
            quality_score(&blurred),
            quality_score(&clean),
        );
        if qn < qb && qb < qc {
            ranked += 1;
        }
    }
    Outcome::new(
        worst_diag < 1e-10 && self_distance < 1e-8 && ranked == fixtures,
        format!(
            "diagonal closed form worst error {worst_diag:.1e} (< 1e-10); identical stats {self_distance:.1e} (< 1e-8); \
             noise < blurred < clean on {ranked}/{fixtures} fixtures"
        ),
    )
}

fn determinism_outcome(first: &PipelineRun, second: &PipelineRun) -> Outcome {
    let checks = [
        ("checkpoint", first.checkpoint == second.checkpoint),
        ("loss csv", first.loss_csv == second.loss_csv),
        ("samples", first.sample_images == second.sample_images),
        (
            "quality csv",
            first.sample_quality_csv == second.sample_quality_csv,
        ),
        (
            "impressions",
            first.impression_images == second.impression_images,
        ),
        ("templates", first.templates == second.templates),
        ("scores csv", first.scores_csv == second.scores_csv),
    ];
    let differing: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "rerun byte-identical: checkpoint, losses, {} samples, {} impressions, templates, CSV reports",
                first.sample_images.len(),
                first.impression_images.len()
            )
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; a name filter
    // that matches nothing here skips the suite.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut passed = Vec::new();

    let (o, t) = timed(schedule_suite);
    passed.push(report(
        1,
        "schedule and forward marginals",
        &o,
        t,
        Some(60.0),
    ));
    let (o, t) = timed(chain_suite);
    passed.push(report(2, "chained forward steps", &o, t, Some(60.0)));
    let (o, t) = timed(gradient_suite);
    passed.push(report(3, "gradient check", &o, t, Some(120.0)));

    let ((first, metrics), pipeline_time) = timed(toy_pipeline);
    passed.push(report(
        4,
        "training descent",
        &training_outcome(&metrics),
        metrics.train_time,
        Some(1800.0),
    ));
    passed.push(report(
        5,
        "sampling beats noise",
        &sampling_outcome(&metrics),
        metrics.sample_time,
        Some(900.0),
    ));
    passed.push(report(
        6,
        "identity preservation",
        &identity_outcome(&metrics),
        metrics.branch_time,
        None,
    ));

    let (o, t) = timed(matcher_suite);
    passed.push(report(7, "matcher suite", &o, t, Some(120.0)));
    let (o, t) = timed(minutiae_suite);
    passed.push(report(8, "minutiae suite", &o, t, Some(60.0)));
    let (o, t) = timed(metric_suite);
    passed.push(report(9, "metric closed forms", &o, t, None));

    let ((second, _), t) = timed(toy_pipeline);
    let o = determinism_outcome(&first, &second);
    passed.push(report(
        10,
        "pipeline determinism",
        &o,
        t + pipeline_time,
        None,
    ));

    let n_pass = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {n_pass}/{} criteria passed", passed.len());
    if n_pass < passed.len() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
