//! The `retseg` command line.
//!
//! Results go to files only; diagnostics and progress go to stderr. Every
//! output carries the tool version, the run-configuration hash and the seed.

mod config;
pub mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::dataio::synth::{write_dataset, Layout, SynthSpec};
use crate::dataio::{encode_classes, make_folds, read_png, write_png, ClassPalette, DatasetManifest, Raster};
use crate::error::{Error, Result};
use crate::grid::RetinaGrid;
use crate::image::LabeledImage;
use crate::metrics::{aggregate, format_records, format_table, ScoreReport};
use crate::predictor::{checkpoint, Head};

pub use config::{ConfigArgs, RunConfig};
use pipeline::{decode_segmentation, score_images, scan_model, scan_oracle, train_model, ScanResult, Segmenter};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "retseg", version, about = "Retina-grid sequential attention segmentation")]
pub struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "RETSEG_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled dataset with a manifest.
    Synth(SynthArgs),
    /// Assign k cross-validation folds to a manifest.
    Folds {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination manifest; it must sit in the same directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the cell geometry of a grid, one "index x y side" line per cell.
    Grid {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a manifest (optionally all folds but one).
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Hold out this fold.
        #[arg(long)]
        fold: Option<usize>,
        /// "retina" or "patch-center".
        #[arg(long, default_value = "retina")]
        head: String,
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to the checkpoint path with ".log" appended.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Scan one image and write segmentation, heat map and trace.
    Segment {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, required_unless_present = "oracle_mask")]
        checkpoint: Option<PathBuf>,
        /// Use the ground-truth mask as a perfect predictor instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle_mask: Option<PathBuf>,
        /// Palette source; the default palette for K classes otherwise.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also dump the averaged probability map.
        #[arg(long)]
        probmap: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate the retina-grid method and write score tables.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Score the oracle predictor instead of trained models.
        #[arg(long, conflicts_with_all = ["predictions", "checkpoint"])]
        oracle: bool,
        /// Score existing segmentations named like the manifest images.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        /// Score one trained model on every manifest image.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate the patch-center baseline.
    Baseline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// "blobs" or "two-region".
    #[arg(long, default_value = "blobs")]
    pub layout: String,
    /// Comma-separated class shares.
    #[arg(long, value_delimiter = ',')]
    pub priors: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub blob_scale: usize,
    #[arg(long, default_value_t = 0.12)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub blur_radius: usize,
    #[arg(long, default_value_t = 0.0)]
    pub ambiguous_discs: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args`, runs the command on a pool of `--threads` workers and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("retseg: cannot start thread pool: {e}");
            return 2;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("retseg: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Folds {
            manifest,
            folds,
            seed,
            out,
        } => cmd_folds(&manifest, folds, seed, &out),
        Command::Grid { config, out } => {
            let c = config.resolve()?;
            let g = RetinaGrid::new(c.subarea_size, c.level)?;
            write_file(&out, g.geometry_dump().as_bytes())
        }
        Command::Train {
            config,
            manifest,
            fold,
            head,
            out,
            log,
        } => {
            let c = config.resolve()?;
            let log = log.unwrap_or_else(|| append_ext(&out, "log"));
            cmd_train(&c, &manifest, fold, head.parse()?, &out, &log)
        }
        Command::Segment {
            config,
            image,
            checkpoint,
            oracle_mask,
            manifest,
            probmap,
            out,
        } => {
            let c = config.resolve()?;
            let source = match (checkpoint, oracle_mask) {
                (Some(p), _) => SegmentSource::Checkpoint(p),
                (None, Some(m)) => SegmentSource::Oracle(m),
                (None, None) => return Err(Error::config("segment needs --checkpoint or --oracle-mask")),
            };
            cmd_segment(&c, &image, source, manifest.as_deref(), probmap, &out)
        }
        Command::Evaluate {
            config,
            manifest,
            oracle,
            predictions,
            checkpoint,
            out,
        } => {
            let c = config.resolve()?;
            let mode = match (oracle, predictions, checkpoint) {
                (true, _, _) => EvalMode::Oracle,
                (_, Some(dir), _) => EvalMode::Predictions(dir),
                (_, _, Some(ck)) => EvalMode::Checkpoint(ck),
                _ => EvalMode::CrossValidate,
            };
            cmd_evaluate(&c, &manifest, Head::Retina, mode, &out)
        }
        Command::Baseline {
            config,
            manifest,
            checkpoint,
            out,
        } => {
            let c = config.resolve()?;
            let mode = checkpoint.map_or(EvalMode::CrossValidate, EvalMode::Checkpoint);
            cmd_evaluate(&c, &manifest, Head::PatchCenter, mode, &out)
        }
    }
}

fn append_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint::hex(&Sha256::digest(&bytes)))
}

/// Key-value metadata attached to every output.
fn run_metadata(config: &RunConfig, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut meta = vec![
        ("retseg.version".to_string(), VERSION.to_string()),
        ("retseg.config_hash".to_string(), config.hash()),
        ("retseg.seed".to_string(), config.seed.to_string()),
    ];
    meta.extend(extra.iter().map(|(k, v)| (format!("retseg.{k}"), v.clone())));
    meta
}

fn header_lines(meta: &[(String, String)]) -> String {
    meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::new(a.count, a.width, a.height, a.classes, a.seed);
    spec.layout = a.layout.parse::<Layout>()?;
    spec.priors = a.priors.clone();
    spec.blob_scale = a.blob_scale;
    spec.contrast = a.contrast;
    spec.noise = a.noise;
    spec.blur_radius = a.blur_radius;
    spec.ambiguous_discs = a.ambiguous_discs;
    let m = write_dataset(&spec, &a.out)?;
    eprintln!("wrote {} image pairs to {}", m.pairs.len(), a.out.display());
    Ok(())
}

fn cmd_folds(manifest: &Path, k: usize, seed: u64, out: &Path) -> Result<()> {
    let m = DatasetManifest::load(manifest)?;
    let src_dir = manifest.parent().unwrap_or(Path::new(""));
    let out_dir = out.parent().unwrap_or(Path::new(""));
    if fs::canonicalize(src_dir).ok() != fs::canonicalize(out_dir).ok() {
        return Err(Error::config("the fold manifest must be written next to the source manifest"));
    }
    make_folds(&m, k, seed)?.save(out)
}

fn load_items(manifest: &DatasetManifest, indices: &[usize]) -> Result<Vec<LabeledImage>> {
    indices.iter().map(|&i| manifest.load_pair(i)).collect()
}

fn check_classes(config: &RunConfig, manifest: &DatasetManifest) -> Result<()> {
    if manifest.classes() != config.classes {
        return Err(Error::config(format!(
            "manifest defines {} classes, configuration has K={}",
            manifest.classes(),
            config.classes
        )));
    }
    Ok(())
}

fn cmd_train(config: &RunConfig, manifest_path: &Path, fold: Option<usize>, head: Head, out: &Path, log: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(manifest_path)?;
    check_classes(config, &manifest)?;
    let (train_idx, _) = manifest.split(fold)?;
    let data = load_items(&manifest, &train_idx)?;
    eprintln!("training {head} model on {} images", data.len());
    let outcome = train_model(config, head, &data, |e| eprintln!("{}", e.to_line()))?;
    checkpoint::save(&outcome.model, out)?;

    let meta = run_metadata(
        config,
        &[
            ("manifest_hash", manifest.hash()),
            ("head", head.to_string()),
            ("fold", fold.map_or("-".to_string(), |f| f.to_string())),
            ("checkpoint_hash", file_hash(out)?),
        ],
    );
    let mut text = header_lines(&meta);
    for rec in &outcome.log {
        text.push_str(&rec.to_line());
        text.push('\n');
    }
    if let Some(d) = &outcome.diverged {
        text.push_str(&format!("diverged epoch={} batch={} reason={}\n", d.epoch, d.batch, d.reason));
    }
    write_file(log, text.as_bytes())?;
    match outcome.diverged {
        Some(d) => Err(Error::numeric(
            format!("training epoch {} batch {}", d.epoch, d.batch),
            format!("{}; last finite state saved", d.reason),
        )),
        None => Ok(()),
    }
}

enum SegmentSource {
    Checkpoint(PathBuf),
    Oracle(PathBuf),
}

fn palette_for(config: &RunConfig, manifest: Option<&Path>) -> Result<ClassPalette> {
    match manifest {
        Some(p) => {
            let m = DatasetManifest::load(p)?;
            check_classes(config, &m)?;
            Ok(m.palette)
        }
        None => ClassPalette::for_classes(config.classes),
    }
}

fn cmd_segment(
    config: &RunConfig,
    image_path: &Path,
    source: SegmentSource,
    manifest: Option<&Path>,
    probmap: bool,
    out: &Path,
) -> Result<()> {
    let palette = palette_for(config, manifest)?;
    let image = read_png(image_path)?.to_image()?;
    let (result, source_meta): (ScanResult, (&str, String)) = match source {
        SegmentSource::Checkpoint(p) => {
            let model = checkpoint::load(&p)?;
            (scan_model(&image, &model, config)?, ("checkpoint_hash", file_hash(&p)?))
        }
        SegmentSource::Oracle(p) => {
            let labels = crate::dataio::decode_mask(&read_png(&p)?, &palette)?;
            if labels.width() != image.width() || labels.height() != image.height() {
                return Err(Error::data("oracle mask and image differ in size"));
            }
            (scan_oracle(&image, &labels, config)?, ("oracle_mask_hash", file_hash(&p)?))
        }
    };
    let meta = run_metadata(
        config,
        &[source_meta, ("image_hash", file_hash(image_path)?), ("fixations", result.trace.len().to_string())],
    );
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let seg = &result.segmentation;
    write_png(
        &out.join("segmentation.png"),
        &encode_classes(seg.width, seg.height, &seg.classes, &palette),
        &meta,
    )?;
    let heat = Raster {
        width: seg.width,
        height: seg.height,
        channels: 1,
        data: seg.render_heatmap(),
    };
    write_png(&out.join("heat.png"), &heat, &meta)?;
    write_file(&out.join("trace.txt"), result.trace.to_records(&meta).as_bytes())?;
    if probmap {
        let path = out.join("probmap.bin");
        let mut bytes = header_lines(&meta).into_bytes();
        result.map.write_raw(&mut bytes).map_err(|e| Error::io(&path, e))?;
        write_file(&path, &bytes)?;
    }
    if seg.unknown > 0 {
        eprintln!("{} pixels were never covered and are unlabelled", seg.unknown);
    }
    eprintln!("{} fixations, output in {}", result.trace.len(), out.display());
    Ok(())
}

enum EvalMode {
    CrossValidate,
    Checkpoint(PathBuf),
    Oracle,
    Predictions(PathBuf),
}

fn score_predictions(dir: &Path, manifest: &DatasetManifest, config: &RunConfig) -> Result<ScoreReport> {
    let mut reports = Vec::with_capacity(manifest.pairs.len());
    for (i, pair) in manifest.pairs.iter().enumerate() {
        let name = pair
            .image
            .file_name()
            .ok_or_else(|| Error::data(format!("image path {} has no file name", pair.image.display())))?;
        let pred = decode_segmentation(&read_png(&dir.join(name))?, &manifest.palette)?;
        let truth = manifest.load_pair(i)?.labels;
        reports.push(crate::metrics::score(&pred, &truth, config.classes)?);
    }
    let mut r = aggregate(&reports)?;
    r.folds = 1;
    Ok(r)
}

fn cmd_evaluate(config: &RunConfig, manifest_path: &Path, head: Head, mode: EvalMode, out: &Path) -> Result<()> {
    let mut manifest = DatasetManifest::load(manifest_path)?;
    check_classes(config, &manifest)?;
    let mut extra = vec![("manifest_hash", manifest.hash())];
    let (label, report) = match mode {
        EvalMode::Oracle => {
            let all = load_items(&manifest, &manifest.split(None)?.1)?;
            ("oracle".to_string(), score_images(Segmenter::Oracle, &all, config)?)
        }
        EvalMode::Predictions(dir) => ("predictions".to_string(), score_predictions(&dir, &manifest, config)?),
        EvalMode::Checkpoint(p) => {
            let model = checkpoint::load(&p)?;
            if model.config.head != head {
                return Err(Error::config(format!("checkpoint has a {} head, expected {head}", model.config.head)));
            }
            extra.push(("checkpoint_hash", file_hash(&p)?));
            let all = load_items(&manifest, &manifest.split(None)?.1)?;
            let seg = match head {
                Head::Retina => Segmenter::Retina(&model),
                Head::PatchCenter => Segmenter::Baseline(&model),
            };
            (method_label(config, head), score_images(seg, &all, config)?)
        }
        EvalMode::CrossValidate => {
            if manifest.folds == 0 || manifest.pairs.iter().any(|p| p.fold.is_none()) {
                eprintln!("manifest has no fold assignment; using {} folds from seed {}", config.folds, config.seed);
                manifest = make_folds(&manifest, config.folds, config.seed)?;
            }
            let mut reports = Vec::with_capacity(manifest.folds);
            for f in 0..manifest.folds {
                let start = Instant::now();
                let (tr, te) = manifest.split(Some(f))?;
                let outcome = train_model(config, head, &load_items(&manifest, &tr)?, |_| {})?;
                if let Some(d) = outcome.diverged {
                    return Err(Error::numeric(format!("fold {f} training epoch {}", d.epoch), d.reason));
                }
                let test = load_items(&manifest, &te)?;
                let seg = match head {
                    Head::Retina => Segmenter::Retina(&outcome.model),
                    Head::PatchCenter => Segmenter::Baseline(&outcome.model),
                };
                let r = score_images(seg, &test, config)?;
                eprintln!(
                    "fold {f}: {} train / {} test, macro jaccard {:.4} ({:.1} s)",
                    tr.len(),
                    te.len(),
                    r.macro_mean.jaccard,
                    start.elapsed().as_secs_f64()
                );
                reports.push(r);
            }
            (method_label(config, head), aggregate(&reports)?)
        }
    };
    for n in &report.notices {
        eprintln!("note: {n}");
    }
    let meta = run_metadata(config, &extra);
    let header = header_lines(&meta);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = format_table(&[(label.clone(), &report)]);
    write_file(&out.join("scores.txt"), format!("{header}{table}").as_bytes())?;
    write_file(
        &out.join("scores.records"),
        format!("{header}{}", format_records(&label, &report)).as_bytes(),
    )?;
    eprint!("{table}");
    Ok(())
}

fn method_label(config: &RunConfig, head: Head) -> String {
    match head {
        Head::Retina => format!("ResLv-{} d={}", config.level, config.subarea_size),
        Head::PatchCenter => format!("patch-center d={}", config.subarea_size),
    }
}
