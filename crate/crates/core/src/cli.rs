//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code: 0 success or accept, 1 reject or
//! segmentation failure, 2 operational error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{RunConfig, CONFIG_ENV};
use crate::error::{Error, Result};
use crate::evaluation::{build_corpus, compute_metrics, parse_manifest, process_images, run_trials_on_images, render_corpus, train_on_samples};
use crate::fusion::{Algorithm, Decision};
use crate::gasel::{train_selection, GaOutcome, GaSelection, PlantedProblem, PlantedSpec};
use crate::imaging::{load_pgm, write_pgm, GrayImage};
use crate::segmentation::{overlay, segment, sidecar_text};
use crate::store::Gallery;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "run_config.txt";

#[derive(Debug, Parser)]
#[command(name = "irisfuse", version, about = "Multi-algorithm iris verification")]
pub struct Cli {
    /// Config file; falls back to $IRISFUSE_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of PGM eyes plus a manifest.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        identities: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        samples: Option<u64>,
    },
    /// Segment images, writing an overlay and a circle sidecar for each.
    Segment {
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Enroll an identity from one or more images.
    Enroll {
        #[arg(long)]
        id: String,
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Verify a probe image against a claimed identity.
    Verify {
        #[arg(long)]
        id: String,
        #[arg(long)]
        gallery: Option<PathBuf>,
        /// Decision threshold, overriding the config.
        #[arg(long)]
        threshold: Option<f64>,
        probe: PathBuf,
    },
    /// Rank features and run the genetic selection.
    TrainGa {
        /// Corpus directory with a manifest; synthetic when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Train on the planted-subset problem instead of iris images.
        #[arg(long, conflicts_with_all = ["corpus", "gallery"])]
        planted: bool,
        #[arg(long)]
        generations: Option<usize>,
        /// Gallery that receives the selection.
        #[arg(long)]
        gallery: Option<PathBuf>,
    },
    /// Run verification trials and write error-rate curves.
    Evaluate {
        /// Corpus directory with a manifest; synthetic when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        identities: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        samples: Option<u64>,
    },
}

/// Runs with the process environment.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_config = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    run_with_env(args, env_config, stdout, stderr)
}

/// [`run`] with the config fallback passed in.
pub fn run_with_env<I, T>(args: I, env_config: Option<PathBuf>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                return EXIT_ERROR;
            }
            let _ = write!(stdout, "{text}");
            return EXIT_OK;
        }
    };
    let mut out = String::new();
    let code = match execute(&cli, env_config, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = stdout.write_all(out.as_bytes());
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let _ = stdout.write_all(out.as_bytes());
    code
}

fn resolve_config(cli: &Cli, env_config: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match cli.config.clone().or(env_config) {
        Some(path) => RunConfig::load(&path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn execute(cli: &Cli, env_config: Option<PathBuf>, out: &mut String) -> Result<i32> {
    let mut cfg = resolve_config(cli, env_config)?;
    match &cli.command {
        Command::Synth { identities, samples } => {
            if let Some(n) = identities {
                cfg.identities = *n as usize;
            }
            if let Some(n) = samples {
                cfg.samples = *n as usize;
            }
            cmd_synth(&cfg, out)
        }
        Command::Segment { images } => cmd_segment(&cfg, images, out),
        Command::Enroll { id, gallery, images } => cmd_enroll(&cfg, id, &gallery_path(gallery, &cfg)?, images, out),
        Command::Verify { id, gallery, threshold, probe } => {
            if let Some(t) = threshold {
                cfg.fusion.threshold = *t;
                cfg.validate()?;
            }
            cmd_verify(&cfg, id, &gallery_path(gallery, &cfg)?, probe, out)
        }
        Command::TrainGa { corpus, planted, generations, gallery } => {
            if let Some(g) = generations {
                cfg.ga.max_generations = *g;
            }
            let gallery = gallery.clone().or_else(|| cfg.gallery.clone());
            cmd_train_ga(&cfg, corpus.as_deref(), *planted, gallery.as_deref(), out)
        }
        Command::Evaluate { corpus, identities, samples } => {
            if let Some(n) = identities {
                cfg.identities = *n as usize;
            }
            if let Some(n) = samples {
                cfg.samples = *n as usize;
            }
            cmd_evaluate(&cfg, corpus.as_deref(), out)
        }
    }
}

fn gallery_path(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.gallery.clone())
        .ok_or_else(|| Error::Config("no gallery path: pass --gallery or set `gallery` in the config".into()))
}

fn out_dir(cfg: &RunConfig, default: &str) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn read_image(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    load_pgm(&bytes)
}

/// `(identity, image)` for every manifest row of a corpus directory.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<(usize, GrayImage)>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::InvalidArgument(format!("cannot read manifest in {}: {e}", dir.display())))?;
    parse_manifest(&manifest)?
        .into_iter()
        .map(|(file, identity, _, _)| Ok((identity, read_image(&dir.join(file))?)))
        .collect()
}

fn cmd_synth(cfg: &RunConfig, out: &mut String) -> Result<i32> {
    let corpus = build_corpus(cfg.identities, cfg.samples, cfg.seeds().corpus)?;
    let dir = out_dir(cfg, "corpus")?;
    for entry in &corpus.entries {
        let (img, _) = entry.render()?;
        fs::write(dir.join(entry.file_name()), write_pgm(&img))?;
    }
    fs::write(dir.join(MANIFEST_FILE), corpus.manifest())?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    writeln!(
        out,
        "wrote {} images ({} identities x {} samples) to {}",
        corpus.entries.len(),
        cfg.identities,
        cfg.samples,
        dir.display()
    )
    .expect("write to String");
    Ok(EXIT_OK)
}

fn cmd_segment(cfg: &RunConfig, images: &[PathBuf], out: &mut String) -> Result<i32> {
    let mut code = EXIT_OK;
    for path in images {
        let img = read_image(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dir = match &cfg.out {
            Some(d) => {
                fs::create_dir_all(d)?;
                d.clone()
            }
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        match segment(&img, &cfg.pipeline.segmentation) {
            Ok(seg) => {
                fs::write(dir.join(format!("{stem}_overlay.pgm")), write_pgm(&overlay(&img, &seg)))?;
                fs::write(dir.join(format!("{stem}.circles")), sidecar_text(&seg))?;
                let (p, i) = (seg.pupil, seg.iris);
                writeln!(
                    out,
                    "{}: pupil ({:.1}, {:.1}) r {:.1}; iris ({:.1}, {:.1}) r {:.1}",
                    path.display(),
                    p.cx,
                    p.cy,
                    p.r,
                    i.cx,
                    i.cy,
                    i.r
                )
                .expect("write to String");
            }
            Err(e) => {
                writeln!(out, "{}: segmentation failed: {e}", path.display()).expect("write to String");
                code = EXIT_NEGATIVE;
            }
        }
    }
    Ok(code)
}

fn cmd_enroll(cfg: &RunConfig, id: &str, gallery_path: &Path, images: &[PathBuf], out: &mut String) -> Result<i32> {
    let mut gallery = if gallery_path.exists() { Gallery::load(gallery_path)? } else { Gallery::new() };
    let imgs = images.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    gallery.enroll(id, &imgs, &cfg.pipeline)?;
    gallery.save(gallery_path)?;
    writeln!(out, "enrolled {id}; gallery {} holds {} identities", gallery_path.display(), gallery.len())
        .expect("write to String");
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig, id: &str, gallery_path: &Path, probe: &Path, out: &mut String) -> Result<i32> {
    let gallery = Gallery::load(gallery_path)?;
    if gallery.get(id).is_none() {
        return Err(Error::UnknownIdentity(id.to_owned()));
    }
    let img = read_image(probe)?;
    let v = gallery.verify(id, &img, &cfg.fusion, &cfg.pipeline)?;
    for (alg, n) in Algorithm::ALL.iter().zip(&v.normalized) {
        writeln!(out, "{:<10} distance {:.6} score {:.6}", alg.name(), v.raw.get(*alg), n.value)
            .expect("write to String");
    }
    writeln!(out, "fused {:.6} threshold {}", v.fused, cfg.fusion.threshold).expect("write to String");
    writeln!(out, "{}", v.decision).expect("write to String");
    Ok(match v.decision {
        Decision::Accept => EXIT_OK,
        Decision::Reject => EXIT_NEGATIVE,
    })
}

fn history_csv(outcome: &GaOutcome) -> String {
    let mut s = String::from("generation,best_cost\n");
    for (g, c) in outcome.history.iter().enumerate() {
        writeln!(s, "{g},{c:.9}").expect("write to String");
    }
    s
}

fn selection_text(sel: &GaSelection) -> String {
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let genes: String = sel.chromosome.genes().iter().map(|&g| if g { '1' } else { '0' }).collect();
    format!(
        "pool {}\nchromosome {genes}\nselected {}\n",
        list(sel.pool.indices()),
        list(&sel.selected_features())
    )
}

fn cmd_train_ga(
    cfg: &RunConfig,
    corpus: Option<&Path>,
    planted: bool,
    gallery: Option<&Path>,
    out: &mut String,
) -> Result<i32> {
    let ga = cfg.ga_config();
    let (selection, outcome) = if planted {
        let problem = PlantedProblem::generate(&PlantedSpec::default(), cfg.seeds().training)?;
        let (sel, outcome) = train_selection(&problem.vectors, &problem.labels, cfg.ga_top_k, &ga)?;
        let chosen = sel.selected_features();
        let hits = problem.informative.iter().filter(|f| chosen.contains(f)).count();
        writeln!(out, "planted informative features {:?}", problem.informative).expect("write to String");
        writeln!(out, "recovered {hits} of {}", problem.informative.len()).expect("write to String");
        (sel, outcome)
    } else {
        let images = match corpus {
            Some(dir) => load_corpus_dir(dir)?,
            None => render_corpus(&build_corpus(
                cfg.training_identities,
                cfg.training_samples,
                cfg.seeds().training,
            )?)?,
        };
        let samples = process_images(&images, &cfg.pipeline, cfg.max_failure_rate)?;
        train_on_samples(&samples, cfg.ga_top_k, &ga)?
    };
    let dir = out_dir(cfg, "ga")?;
    fs::write(dir.join("ga_history.csv"), history_csv(&outcome))?;
    fs::write(dir.join("selection.txt"), selection_text(&selection))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    writeln!(
        out,
        "best cost {:.6} after {} generations ({:?}); {} of {} pool features selected",
        outcome.best_cost,
        outcome.history.len() - 1,
        outcome.stop,
        selection.chromosome.selected_count(),
        selection.pool.len()
    )
    .expect("write to String");
    if let Some(path) = gallery {
        let mut g = if path.exists() { Gallery::load(path)? } else { Gallery::new() };
        g.set_selection(selection, cfg.pipeline.max_shift)?;
        g.save(path)?;
        writeln!(out, "selection stored in {}", path.display()).expect("write to String");
    }
    Ok(EXIT_OK)
}

fn cmd_evaluate(cfg: &RunConfig, corpus: Option<&Path>, out: &mut String) -> Result<i32> {
    let images = match corpus {
        Some(dir) => load_corpus_dir(dir)?,
        None => render_corpus(&build_corpus(cfg.identities, cfg.samples, cfg.seeds().corpus)?)?,
    };
    let results = run_trials_on_images(&images, &cfg.evaluation_config())?;
    let dir = out_dir(cfg, "evaluation")?;
    let mut summary = String::from("stream,eer,threshold,genuine_mean,imposter_mean\n");
    let streams = Algorithm::ALL
        .iter()
        .map(|a| (a.name(), results.algorithm(*a)))
        .chain(std::iter::once(("fused", &results.fused)));
    for (name, trials) in streams {
        let report = compute_metrics(trials, cfg.threshold_count)?;
        fs::write(dir.join(format!("{name}.csv")), report.to_csv())?;
        fs::write(dir.join(format!("roc_{name}.pgm")), write_pgm(&report.roc_image(256)))?;
        writeln!(
            summary,
            "{name},{:.6},{:.6},{:.6},{:.6}",
            report.eer,
            report.eer_threshold,
            trials.genuine_mean(),
            trials.imposter_mean()
        )
        .expect("write to String");
    }
    fs::write(dir.join("summary.csv"), &summary)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    writeln!(
        out,
        "{} images processed, {} failed segmentation; {} genuine and {} imposter trials",
        results.processed,
        results.failures,
        results.fused.genuine.len(),
        results.fused.imposter.len()
    )
    .expect("write to String");
    out.push_str(&summary);
    Ok(EXIT_OK)
}
