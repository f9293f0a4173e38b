//! Command-line front end: training, reconstruction, separation, synthesis,
//! interpolation grids, distance reports and synthetic data export.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::data::{export, generate_synthetic, preprocess, write_dataset_pngs, SyntheticSpec};
use crate::error::{validation, Error, Result};
use crate::extractor::{extract_features, extractor_from_spec};
use crate::latent::{concat, interpolate, mask_half, split, HalfKind, LatentVector};
use crate::losses::{content_perceptual_loss, style_perceptual_loss};
use crate::networks::{encode, generate, ModelBundle};
use crate::tensor::Image;
use crate::training::{train, RunConfig, TrainOutputs};

#[derive(Debug, Parser)]
#[command(name = "s3gan", version, about = "Style separation and synthesis GAN toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the checkpoint and metrics log.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the sampling seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode and decode one image.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the content half and the style half of one image separately.
    Separate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory; receives content.png and style.png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine the content of one image with the style of another.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid traversing content (rows) and style (columns) between two images.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perceptual distances of synthesized images to their content and style targets.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text file with one `content_path<TAB>style_path` per line.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "surrogate")]
        extractor: String,
        #[arg(long, value_delimiter = ',', default_value = "relu4_2")]
        content_layers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "relu1_1,relu2_1,relu3_1")]
        style_layers: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a procedural shapes dataset as PNG files plus labels.
    MakeSynthetic {
        /// JSON synthetic spec; alternatively use --count/--size/--seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Process exit code for an error: 2 configuration, 3 validation, 4 divergence, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Validation(_) | Error::Checkpoint(_) | Error::Image(_) => 3,
        Error::Divergence { .. } => 4,
        Error::Io(_) | Error::Json(_) => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, seed } => cmd_train(&config, &out, seed).map(|_| ()),
        Command::Reconstruct { checkpoint, image, out } => cmd_reconstruct(&checkpoint, &image, &out),
        Command::Separate { checkpoint, image, out } => cmd_separate(&checkpoint, &image, &out).map(|_| ()),
        Command::Synthesize { checkpoint, content, style, out } => cmd_synthesize(&checkpoint, &content, &style, &out),
        Command::Interpolate { checkpoint, image_a, image_b, steps, out } => {
            cmd_interpolate(&checkpoint, &image_a, &image_b, steps, &out)
        }
        Command::Evaluate { checkpoint, pairs, extractor, content_layers, style_layers, out } => {
            cmd_evaluate(&checkpoint, &pairs, &extractor, &content_layers, &style_layers, &out).map(|_| ())
        }
        Command::MakeSynthetic { config, count, size, seed, out } => {
            let spec = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                None => SyntheticSpec::new(count, size, seed),
            };
            cmd_make_synthetic(&spec, &out).map(|_| ())
        }
    }
}

/// Trains per the run configuration; returns the final checkpoint path.
pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> Result<PathBuf> {
    let mut cfg = RunConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let extractor = extractor_from_spec(&cfg.extractor).map_err(|e| Error::Config(e.to_string()))?;
    let (train_set, _) = cfg.load_data()?;
    let outputs = TrainOutputs { dir: out.to_path_buf() };
    train(&train_set, &cfg.train, &cfg.arch, extractor.as_ref(), Some(&outputs))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    Ok(outputs.checkpoint())
}

fn load_model(checkpoint: &Path) -> Result<ModelBundle> {
    Ok(load_checkpoint(checkpoint)?.0)
}

/// Reads a PNG/JPEG and checks it matches the model resolution.
pub fn load_input(path: &Path, bundle: &ModelBundle) -> Result<Image> {
    let img = image::open(path)?.to_rgb8();
    let s = bundle.config.image_size as u32;
    if img.dimensions() != (s, s) {
        return Err(validation(format!(
            "{} is {}×{}, checkpoint expects {s}×{s}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    Ok(preprocess(&img))
}

fn save(image: &Image, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    export(image)?.save(path)?;
    Ok(())
}

fn synthesize_latent(content: &LatentVector, style: &LatentVector) -> Result<LatentVector> {
    let (c, _) = split(content)?;
    let (_, s) = split(style)?;
    concat(&c, &s)
}

pub fn cmd_reconstruct(checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let bundle = load_model(checkpoint)?;
    let z = encode(&bundle, &load_input(image, &bundle)?)?;
    save(&generate(&bundle, &z)?, out)
}

/// Writes `content.png` (style half zeroed) and `style.png` (content half zeroed).
pub fn cmd_separate(checkpoint: &Path, image: &Path, out_dir: &Path) -> Result<[PathBuf; 2]> {
    let bundle = load_model(checkpoint)?;
    let z = encode(&bundle, &load_input(image, &bundle)?)?;
    let paths = [out_dir.join("content.png"), out_dir.join("style.png")];
    for (kind, path) in [HalfKind::Content, HalfKind::Style].into_iter().zip(&paths) {
        save(&generate(&bundle, &mask_half(&z, kind))?, path)?;
    }
    Ok(paths)
}

pub fn cmd_synthesize(checkpoint: &Path, content: &Path, style: &Path, out: &Path) -> Result<()> {
    let bundle = load_model(checkpoint)?;
    let zc = encode(&bundle, &load_input(content, &bundle)?)?;
    let zs = encode(&bundle, &load_input(style, &bundle)?)?;
    save(&generate(&bundle, &synthesize_latent(&zc, &zs)?)?, out)
}

/// Border between and around grid cells, in pixels.
pub const GRID_BORDER: u32 = 2;

/// Lays out equally sized images row-major with a white border.
pub fn render_grid(cells: &[Vec<RgbImage>]) -> Result<RgbImage> {
    let rows = cells.len();
    let cols = cells.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || cells.iter().any(|r| r.len() != cols) {
        return Err(validation("grid needs a non-empty rectangular set of cells"));
    }
    let (w, h) = cells[0][0].dimensions();
    if cells.iter().flatten().any(|c| c.dimensions() != (w, h)) {
        return Err(validation("grid cells must share one size"));
    }
    let b = GRID_BORDER;
    let mut grid = RgbImage::from_pixel(cols as u32 * (w + b) + b, rows as u32 * (h + b) + b, Rgb([255, 255, 255]));
    for (i, row) in cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let (x0, y0) = (b + j as u32 * (w + b), b + i as u32 * (h + b));
            image::imageops::replace(&mut grid, cell, x0 as i64, y0 as i64);
        }
    }
    Ok(grid)
}

/// Cell `(i, j)` decodes content weight `i/(steps−1)` and style weight `j/(steps−1)` toward `image_b`.
pub fn cmd_interpolate(checkpoint: &Path, image_a: &Path, image_b: &Path, steps: usize, out: &Path) -> Result<()> {
    if steps < 2 {
        return Err(validation(format!("steps must be at least 2, got {steps}")));
    }
    let bundle = load_model(checkpoint)?;
    let za = encode(&bundle, &load_input(image_a, &bundle)?)?;
    let zb = encode(&bundle, &load_input(image_b, &bundle)?)?;
    let t = |k: usize| k as f32 / (steps - 1) as f32;
    let cells = (0..steps)
        .map(|i| {
            (0..steps)
                .map(|j| export(&generate(&bundle, &interpolate(&za, &zb, t(i), t(j))?)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    render_grid(&cells)?.save(out)?;
    Ok(())
}

/// Distances of one synthesized image to its content target (A) and style target (B).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistances {
    pub content_dist_to_a: f64,
    pub content_dist_to_b: f64,
    pub style_dist_to_a: f64,
    pub style_dist_to_b: f64,
    pub ln_content_dist_to_a: f64,
    pub ln_content_dist_to_b: f64,
    pub ln_style_dist_to_a: f64,
    pub ln_style_dist_to_b: f64,
}

/// One line of a distance report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub content_path: String,
    pub style_path: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub distances: Option<PairDistances>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Means of the log distances over the pairs without errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub pairs: usize,
    pub errors: usize,
    pub mean_ln_content_dist_to_a: f64,
    pub mean_ln_content_dist_to_b: f64,
    pub mean_ln_style_dist_to_a: f64,
    pub mean_ln_style_dist_to_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub records: Vec<PairRecord>,
    pub summary: ReportSummary,
}

/// `ln(max(d, 1e-12))`.
pub fn guarded_ln(d: f64) -> f64 {
    d.max(1e-12).ln()
}

/// Parses a pairs manifest; blank lines are skipped.
pub fn read_pairs(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (c, s) = line
            .split_once('\t')
            .ok_or_else(|| validation(format!("{}:{}: expected content<TAB>style", path.display(), n + 1)))?;
        let resolve = |p: &str| {
            let p = Path::new(p.trim());
            if p.is_relative() {
                base.join(p)
            } else {
                p.to_path_buf()
            }
        };
        pairs.push((resolve(c), resolve(s)));
    }
    Ok(pairs)
}

/// Synthesizes `C = G([c_A, s_B])` per manifest pair and writes one JSON line
/// per pair followed by a `{"summary": ...}` line. Pairs that fail are
/// recorded with an error message.
pub fn cmd_evaluate(
    checkpoint: &Path,
    pairs: &Path,
    extractor_spec: &str,
    content_layers: &[String],
    style_layers: &[String],
    out: &Path,
) -> Result<DistanceReport> {
    let bundle = load_model(checkpoint)?;
    let extractor = extractor_from_spec(extractor_spec)?;
    let known = extractor.layer_names();
    if let Some(l) = content_layers.iter().chain(style_layers).find(|l| !known.contains(l)) {
        return Err(validation(format!("extractor {} has no layer {l}", extractor.name())));
    }
    let layers: Vec<String> = {
        let mut v: Vec<String> = content_layers.iter().chain(style_layers).cloned().collect();
        v.sort();
        v.dedup();
        v
    };
    let pair_distances = |a_path: &Path, b_path: &Path| -> Result<PairDistances> {
        let a = load_input(a_path, &bundle)?;
        let b = load_input(b_path, &bundle)?;
        let c = generate(&bundle, &synthesize_latent(&encode(&bundle, &a)?, &encode(&bundle, &b)?)?)?;
        let f = |x: &Image| extract_features(extractor.as_ref(), x, &layers);
        let (fa, fb, fc) = (f(&a)?, f(&b)?, f(&c)?);
        let cd_a = content_perceptual_loss(&fc, &fa, content_layers)? as f64;
        let cd_b = content_perceptual_loss(&fc, &fb, content_layers)? as f64;
        let sd_a = style_perceptual_loss(&fc, &fa, style_layers)? as f64;
        let sd_b = style_perceptual_loss(&fc, &fb, style_layers)? as f64;
        Ok(PairDistances {
            content_dist_to_a: cd_a,
            content_dist_to_b: cd_b,
            style_dist_to_a: sd_a,
            style_dist_to_b: sd_b,
            ln_content_dist_to_a: guarded_ln(cd_a),
            ln_content_dist_to_b: guarded_ln(cd_b),
            ln_style_dist_to_a: guarded_ln(sd_a),
            ln_style_dist_to_b: guarded_ln(sd_b),
        })
    };
    let records: Vec<PairRecord> = read_pairs(pairs)?
        .iter()
        .enumerate()
        .map(|(index, (a, b))| {
            let result = pair_distances(a, b);
            PairRecord {
                index,
                content_path: a.display().to_string(),
                style_path: b.display().to_string(),
                error: result.as_ref().err().map(|e| e.to_string()),
                distances: result.ok(),
            }
        })
        .collect();
    let ok: Vec<&PairDistances> = records.iter().filter_map(|r| r.distances.as_ref()).collect();
    let mean = |f: fn(&PairDistances) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|d| f(d)).sum::<f64>() / ok.len() as f64
        }
    };
    let summary = ReportSummary {
        pairs: records.len(),
        errors: records.len() - ok.len(),
        mean_ln_content_dist_to_a: mean(|d| d.ln_content_dist_to_a),
        mean_ln_content_dist_to_b: mean(|d| d.ln_content_dist_to_b),
        mean_ln_style_dist_to_a: mean(|d| d.ln_style_dist_to_a),
        mean_ln_style_dist_to_b: mean(|d| d.ln_style_dist_to_b),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(out)?);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut w, &serde_json::json!({ "summary": summary }))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(DistanceReport { records, summary })
}

/// Writes the dataset PNGs and `labels.jsonl` (one `{"file", "shape", "palette"}` per image).
pub fn cmd_make_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<Vec<PathBuf>> {
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let ds = generate_synthetic(spec)?;
    let paths = write_dataset_pngs(&ds, out)?;
    let mut w = BufWriter::new(File::create(out.join("labels.jsonl"))?);
    for (path, item) in paths.iter().zip(&ds.items) {
        let label = item.label.expect("synthetic items are labeled");
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        serde_json::to_writer(&mut w, &serde_json::json!({ "file": name, "shape": label.shape, "palette": label.palette }))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(paths)
}
