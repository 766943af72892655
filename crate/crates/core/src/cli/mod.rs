//! Command-line entry point: one binary, one subcommand per pipeline stage.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{ConfigError, RunConfig, DEFAULTS};

use crate::denoiser::{load_checkpoint, save_checkpoint, train, DenoiserError, DenoiserModel};
use crate::diffusion::{branch_identities, sample_batch, BranchSpec, DiffusionError};
use crate::evaluate::{
    cdf_csv, cdf_svg, fit_stats, frechet_distance, histogram_csv, histogram_svg,
    impression_report_with, quality_csv, quality_score_with, summarize_scores, EvalError,
};
use crate::imagecore::{load_image, save_image, GrayImage, ImageError, ImageFormat};
use crate::matcher::{pairwise_scores_with, scores_to_csv};
use crate::minutiae::{extract_from_image, MinutiaeError, MinutiaeTemplate};
use crate::preprocess::{run_pipeline, PreprocessError, Variant};
use crate::synthcorpus::{gen_corpus, CorpusError};

#[derive(Debug, Parser)]
#[command(
    name = "fingerlab",
    about = "Synthetic fingerprint laboratory",
    version
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; every file is written below it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a procedural corpus with a manifest.
    SynthCorpus,
    /// Filter, crop and squarify a directory of images.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Train the denoiser on a directory of square images.
    Train {
        #[arg(long)]
        input: PathBuf,
    },
    /// Draw independent samples from a checkpoint.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Sample identities with several impressions each.
    Impress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
    },
    /// Extract a minutiae template per image.
    Extract {
        #[arg(long)]
        input: PathBuf,
    },
    /// Score every pair of templates in a directory.
    Match {
        #[arg(long)]
        input: PathBuf,
    },
    /// Quality, Fréchet distance, diversity and impression reports.
    Evaluate {
        #[arg(long)]
        images: PathBuf,
        /// Reference set for the Fréchet distance.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Minutiae(#[from] MinutiaeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// `ModuleError::Variant` label of the underlying failure.
    pub fn name(&self) -> String {
        fn variant(d: &str) -> &str {
            d.split(|c: char| !c.is_alphanumeric()).next().unwrap_or(d)
        }
        let (module, inner) = match self {
            CliError::Config(e) => ("ConfigError", format!("{e:?}")),
            CliError::Image(e) => ("ImageError", format!("{e:?}")),
            CliError::Corpus(e) => ("CorpusError", format!("{e:?}")),
            CliError::Preprocess(e) => ("PreprocessError", format!("{e:?}")),
            CliError::Diffusion(e) => ("DiffusionError", format!("{e:?}")),
            CliError::Denoiser(e) => ("DenoiserError", format!("{e:?}")),
            CliError::Minutiae(e) => ("MinutiaeError", format!("{e:?}")),
            CliError::Eval(e) => ("EvalError", format!("{e:?}")),
            CliError::Input(_) => return "InputError".into(),
            CliError::Io(_) => return "IoError".into(),
        };
        format!("{module}::{}", variant(&inner))
    }
}

/// Runs the CLI on `args` (without the program name) and returns the exit
/// code: 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("fingerlab")).chain(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            1
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.set("run.seed", s);
    }
    let seed = cfg.seed()?;
    let out = cli.global.out;
    fs::create_dir_all(&out)?;
    match cli.command {
        Command::SynthCorpus => {
            let rows = gen_corpus(
                &out,
                cfg.get("corpus.n_ids")?,
                cfg.get("corpus.n_impr")?,
                cfg.get("corpus.side")?,
                seed,
                &cfg.warp()?,
            )?;
            log::info!("wrote {} impressions to {}", rows.len(), out.display());
        }
        Command::Preprocess { input, variant } => {
            if let Some(v) = variant {
                cfg.set("preprocess.variant", v);
            }
            let pcfg = cfg.preprocess()?;
            let (names, images) = read_image_dir(&input)?;
            let result = run_pipeline(&images, &pcfg)?;
            for (img, &src) in result.images.iter().zip(&result.sources) {
                save_image(
                    img,
                    out.join(format!("{}.pgm", names[src])),
                    ImageFormat::Pgm,
                )?;
            }
            let summary = format!(
                "variant\t{}\ninput\t{}\nkept\t{}\nfiltered_out\t{}\nfailed\t{}\n",
                pcfg.variant,
                images.len(),
                result.images.len(),
                result.filtered_out,
                result.failed
            );
            fs::write(out.join("preprocess_summary.tsv"), summary)?;
            log::info!(
                "{}: kept {} of {} images",
                pcfg.variant,
                result.images.len(),
                images.len()
            );
        }
        Command::Train { input } => {
            let (_, images) = read_image_dir(&input)?;
            let side = images
                .first()
                .ok_or_else(|| CliError::Input(format!("no images in {}", input.display())))?
                .width();
            let schedule = cfg.schedule()??;
            let mut model = DenoiserModel::init(cfg.model(side)?, seed)?;
            let tcfg = cfg.train(seed)?;
            let ckpt_dir = out.join("checkpoints");
            if tcfg.checkpoint_every > 0 {
                fs::create_dir_all(&ckpt_dir)?;
            }
            log::info!(
                "training {} parameters on {} images",
                model.parameter_count(),
                images.len()
            );
            let report = train(
                &mut model,
                &images,
                &schedule,
                &tcfg,
                Some(&ckpt_dir),
                |step, loss| {
                    if step % 50 == 0 || step == 1 {
                        log::info!("step {step} loss {loss:.5}");
                    }
                },
            )?;
            save_checkpoint(&model, out.join("model.dfck"))?;
            fs::write(out.join("loss.csv"), report.to_csv())?;
        }
        Command::Sample { model, count } => {
            let count = count.map_or_else(|| cfg.get("sample.count"), Ok)?;
            let model = load_checkpoint(&model)?;
            let schedule = cfg.schedule()??;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            log::info!("sampling {count} images over {} steps", schedule.steps());
            let images = sample_batch(&model, &schedule, model.side(), count, &mut rng)?;
            for (i, img) in images.iter().enumerate() {
                save_image(
                    img,
                    out.join(format!("sample_{i:04}.pgm")),
                    ImageFormat::Pgm,
                )?;
            }
        }
        Command::Impress {
            model,
            identities,
            k,
            d,
        } => {
            let identities = identities.map_or_else(|| cfg.get("impress.identities"), Ok)?;
            let k = k.map_or_else(|| cfg.get("impress.k"), Ok)?;
            let d = d.map_or_else(|| cfg.get("impress.d"), Ok)?;
            let model = load_checkpoint(&model)?;
            let schedule = cfg.schedule()??;
            let spec = BranchSpec::new(d, k, schedule.steps())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            log::info!("sampling {identities} identities x {k} impressions, branching at step {d}");
            let branches =
                branch_identities(&model, &schedule, spec, model.side(), identities, &mut rng)?;
            let mut manifest = String::from("path\tidentity_id\timpression_id\tseed\n");
            for (i, b) in branches.iter().enumerate() {
                for (j, img) in b.impressions.iter().enumerate() {
                    let name = format!("id{i}_impr{j}.pgm");
                    save_image(img, out.join(&name), ImageFormat::Pgm)?;
                    manifest.push_str(&format!("{name}\t{i}\t{j}\t{seed}\n"));
                }
            }
            fs::write(out.join("manifest.tsv"), manifest)?;
        }
        Command::Extract { input } => {
            let (names, images) = read_image_dir(&input)?;
            let templates = extract_all(&images);
            for (name, t) in names.iter().zip(&templates) {
                t.save(out.join(format!("{name}.min")))?;
            }
            let empty = templates.iter().filter(|t| t.is_empty()).count();
            log::info!("extracted {} templates ({empty} empty)", templates.len());
        }
        Command::Match { input } => {
            let (names, templates) = read_template_dir(&input)?;
            let omit_zero: bool = cfg.get("evaluate.omit_zero")?;
            let scores = pairwise_scores_with(&templates, omit_zero, &cfg.matcher()?);
            fs::write(out.join("scores.csv"), scores_to_csv(&names, &scores))?;
        }
        Command::Evaluate { images, reference } => {
            evaluate(&cfg, &images, reference.as_deref(), &out)?
        }
    }
    Ok(())
}

fn evaluate(
    cfg: &RunConfig,
    dir: &Path,
    reference: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    use std::fmt::Write as _;
    let (names, images) = read_image_dir(dir)?;
    if images.is_empty() {
        return Err(CliError::Input(format!("no images in {}", dir.display())));
    }
    let weights = cfg.quality_weights()?;
    let quality: Vec<f64> = images
        .iter()
        .map(|img| quality_score_with(img, &weights))
        .collect();
    fs::write(out.join("quality.csv"), quality_csv(&names, &quality))?;
    let q = summarize_f64(&quality);
    let mut summary = String::new();
    writeln!(summary, "images\t{}", images.len()).expect("string write");
    writeln!(summary, "quality_mean\t{:.4}\nquality_std\t{:.4}", q.0, q.1).expect("string write");

    if let Some(r) = reference {
        let (_, ref_images) = read_image_dir(r)?;
        let fd = frechet_distance(&fit_stats(&images)?, &fit_stats(&ref_images)?)?;
        writeln!(summary, "frechet\t{fd:.6}").expect("string write");
    }

    let matcher = cfg.matcher()?;
    let templates = extract_all(&images);
    let omit_zero: bool = cfg.get("evaluate.omit_zero")?;
    if templates.len() >= 2 {
        let scores = pairwise_scores_with(&templates, omit_zero, &matcher);
        fs::write(out.join("scores.csv"), scores_to_csv(&names, &scores))?;
        let div = summarize_scores(scores.iter().map(|p| p.score).collect());
        fs::write(
            out.join("diversity_histogram.csv"),
            histogram_csv(&div.histogram),
        )?;
        fs::write(
            out.join("diversity_histogram.svg"),
            histogram_svg(&div.histogram, "pairwise match scores"),
        )?;
        writeln!(
            summary,
            "diversity_pairs\t{}\ndiversity_mean\t{:.4}\ndiversity_std\t{:.4}",
            div.count, div.mean, div.std_dev
        )
        .expect("string write");
    }

    // impression groups come from `id{I}_impr{J}` names
    let mut groups: BTreeMap<&str, Vec<MinutiaeTemplate>> = BTreeMap::new();
    for (name, t) in names.iter().zip(&templates) {
        if let Some((id, _)) = name.split_once("_impr") {
            groups.entry(id).or_default().push(t.clone());
        }
    }
    let groups: Vec<Vec<MinutiaeTemplate>> =
        groups.into_values().filter(|g| g.len() >= 2).collect();
    if !groups.is_empty() {
        let rep = impression_report_with(&groups, &matcher)?;
        fs::write(out.join("impression_cdf.csv"), cdf_csv(&rep.cdf))?;
        fs::write(
            out.join("impression_cdf.svg"),
            cdf_svg(&rep.cdf, "intra-identity match scores"),
        )?;
        writeln!(
            summary,
            "identities\t{}\nintra_pairs\t{}\nintra_fraction_at_threshold\t{:.4}\nintra_max\t{}",
            groups.len(),
            rep.scores.len(),
            rep.fraction_at_threshold,
            rep.max_score
        )
        .expect("string write");
    }
    fs::write(out.join("summary.tsv"), summary)?;
    Ok(())
}

fn summarize_f64(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Templates per image; images without usable ridges give empty templates.
fn extract_all(images: &[GrayImage]) -> Vec<MinutiaeTemplate> {
    use rayon::prelude::*;
    images
        .par_iter()
        .map(|img| extract_from_image(img).unwrap_or_else(|_| MinutiaeTemplate::empty(img.width())))
        .collect()
}

fn sorted_entries(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Images of a directory in file-name order with their stems.
pub fn read_image_dir(dir: &Path) -> Result<(Vec<String>, Vec<GrayImage>), CliError> {
    let paths = sorted_entries(dir, &["pgm", "png"])?;
    let images = paths
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((paths.iter().map(|p| stem(p)).collect(), images))
}

fn read_template_dir(dir: &Path) -> Result<(Vec<String>, Vec<MinutiaeTemplate>), CliError> {
    let paths = sorted_entries(dir, &["min"])?;
    let templates = paths
        .iter()
        .map(MinutiaeTemplate::load)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((paths.iter().map(|p| stem(p)).collect(), templates))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_arguments_is_usage_error() {
        assert_eq!(run(Vec::<String>::new()), 2);
        assert_eq!(run(["bogus"]), 2);
        assert_eq!(run(["sample", "--count", "x", "--model", "m"]), 2);
    }

    #[test]
    fn domain_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, "train.speed = 3\n").unwrap();
        let out = dir.path().join("o");
        let args = [
            "synth-corpus",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(run(args), 1);
        let missing = dir.path().join("missing.dfck");
        assert_eq!(
            run([
                "sample",
                "--model",
                missing.to_str().unwrap(),
                "--out",
                out.to_str().unwrap()
            ]),
            1
        );
    }

    #[test]
    fn error_names() {
        let e = CliError::from(PreprocessError::EmptyFingerprint);
        assert_eq!(e.name(), "PreprocessError::EmptyFingerprint");
        let e = CliError::from(ConfigError::UnknownKey {
            line: 1,
            key: "a.b".into(),
        });
        assert_eq!(e.name(), "ConfigError::UnknownKey");
    }
}
