//! Datasets: directory ingestion, byte/unit conversion, seeded splits, pair
//! sampling and a procedural shapes dataset where shape is content and color
//! is style.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use ndarray::{Array3, Array4};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::tensor::Image;

/// Which split a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How directory images are brought to `image_size × image_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    #[default]
    CenterCrop,
    Resize,
}

/// Shape drawn by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

/// Ground-truth labels of a synthetic item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticLabel {
    pub shape: Shape,
    pub palette: usize,
}

#[derive(Debug, Clone)]
pub enum ItemSource {
    File(PathBuf),
    Memory(Image),
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub source: ItemSource,
    pub label: Option<SyntheticLabel>,
}

#[derive(Debug, Clone)]
pub enum DatasetSource {
    Directory { path: PathBuf, crop_mode: CropMode },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub split: Split,
    pub image_size: usize,
    pub source: DatasetSource,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Errors unless the dataset can feed training.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(validation("dataset is empty"));
        }
        Ok(())
    }

    /// Loads item `i` as a unit-range image.
    pub fn load(&self, i: usize) -> Result<Image> {
        let item = self
            .items
            .get(i)
            .ok_or_else(|| validation(format!("item {i} out of range for {} items", self.items.len())))?;
        match &item.source {
            ItemSource::Memory(img) => Ok(img.clone()),
            ItemSource::File(path) => {
                let crop_mode = match &self.source {
                    DatasetSource::Directory { crop_mode, .. } => *crop_mode,
                    DatasetSource::Synthetic(_) => CropMode::CenterCrop,
                };
                load_image(path, self.image_size, crop_mode)
            }
        }
    }

    /// Loads every item into memory, so sampling does not hit the disk.
    pub fn materialize(&self) -> Result<Dataset> {
        let items = (0..self.len())
            .map(|i| {
                Ok(DatasetItem { source: ItemSource::Memory(self.load(i)?), label: self.items[i].label })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { items, ..self.clone() })
    }

    fn subset(&self, idx: &[usize], split: Split) -> Dataset {
        Dataset {
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
            split,
            image_size: self.image_size,
            source: self.source.clone(),
        }
    }
}

/// `byte / 255`.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 255.0
}

/// `round(v · 255)` half away from zero, clamped to the byte range.
pub fn unit_to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Converts an 8-bit RGB image to a `3 × H × W` unit-range image.
pub fn preprocess(img: &RgbImage) -> Image {
    let (w, h) = img.dimensions();
    let data = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        byte_to_unit(img.get_pixel(x as u32, y as u32)[c])
    });
    Image::from_unit_unchecked(data)
}

/// Converts a 3-channel unit-range image back to 8-bit RGB.
pub fn export(image: &Image) -> Result<RgbImage> {
    if image.channels() != 3 {
        return Err(validation(format!("export expects 3 channels, got {}", image.channels())));
    }
    let d = image.data();
    Ok(RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([unit_to_byte(d[[0, y, x]]), unit_to_byte(d[[1, y, x]]), unit_to_byte(d[[2, y, x]])])
    }))
}

/// Top-left corner of the centered `size × size` window.
pub fn center_crop_offsets(width: u32, height: u32, size: u32) -> Result<(u32, u32)> {
    if width < size || height < size {
        return Err(validation(format!("image {width}×{height} is smaller than crop size {size}")));
    }
    Ok(((width - size) / 2, (height - size) / 2))
}

fn fit(img: DynamicImage, size: usize, mode: CropMode) -> Result<RgbImage> {
    let rgb = img.to_rgb8();
    let s = size as u32;
    match mode {
        CropMode::CenterCrop => {
            let (x, y) = center_crop_offsets(rgb.width(), rgb.height(), s)?;
            Ok(image::imageops::crop_imm(&rgb, x, y, s, s).to_image())
        }
        CropMode::Resize => Ok(image::imageops::resize(&rgb, s, s, FilterType::Triangle)),
    }
}

/// Decodes, crops or resizes, and preprocesses one file.
pub fn load_image(path: &Path, size: usize, mode: CropMode) -> Result<Image> {
    let img = image::open(path)?;
    Ok(preprocess(&fit(img, size, mode)?))
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Lists PNG/JPEG files in lexicographic byte order. Files whose headers do
/// not decode are skipped with a warning; size problems surface when an item
/// is loaded.
pub fn ingest(directory: &Path, image_size: usize, crop_mode: CropMode) -> Result<Dataset> {
    if image_size == 0 {
        return Err(validation("image_size must be positive"));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(directory)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));
    let mut items = Vec::with_capacity(paths.len());
    for path in paths {
        match image::image_dimensions(&path) {
            Ok(_) => items.push(DatasetItem { source: ItemSource::File(path), label: None }),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    Ok(Dataset {
        items,
        split: Split::Train,
        image_size,
        source: DatasetSource::Directory { path: directory.to_path_buf(), crop_mode },
    })
}

/// Seeded uniform selection of `test_count` items without replacement. Both
/// parts keep the original relative order.
pub fn split_dataset(dataset: &Dataset, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if test_count == 0 || test_count >= n {
        return Err(validation(format!("test_count must lie in (0, {n}), got {test_count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; n];
    for i in sample(&mut rng, n, test_count) {
        is_test[i] = true;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok((dataset.subset(&train, Split::Train), dataset.subset(&test, Split::Test)))
}

/// Indices of one sampled batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndices {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub real: Vec<usize>,
}

/// A sampled batch: content targets A, style targets B and real samples for the critic.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub indices: PairIndices,
    pub a: Array4<f32>,
    pub b: Array4<f32>,
    pub real: Array4<f32>,
}

/// Uniform sampler with replacement over a dataset's items.
#[derive(Debug, Clone)]
pub struct PairSampler {
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Draws `3 · batch_size` indices: the A's, then the B's, then the reals.
    pub fn sample_indices(&mut self, n: usize, batch_size: usize) -> Result<PairIndices> {
        if n == 0 {
            return Err(validation("cannot sample from an empty dataset"));
        }
        let mut draw = || (0..batch_size).map(|_| self.rng.random_range(0..n)).collect::<Vec<_>>();
        let a = draw();
        let b = draw();
        let real = draw();
        Ok(PairIndices { a, b, real })
    }

    pub fn sample_pairs(&mut self, dataset: &Dataset, batch_size: usize) -> Result<PairBatch> {
        let indices = self.sample_indices(dataset.len(), batch_size)?;
        let load = |idx: &[usize]| -> Result<Array4<f32>> {
            let imgs = idx.iter().map(|&i| dataset.load(i)).collect::<Result<Vec<_>>>()?;
            crate::tensor::stack(imgs.iter().map(|i| i.data().view()))
        };
        Ok(PairBatch { a: load(&indices.a)?, b: load(&indices.b)?, real: load(&indices.real)?, indices })
    }
}

/// Procedural shapes dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    #[serde(default = "default_shapes")]
    pub shape_set: Vec<Shape>,
    /// `(fill, background)` RGB pairs.
    #[serde(default = "default_palette")]
    pub palette: Vec<([u8; 3], [u8; 3])>,
}

fn default_shapes() -> Vec<Shape> {
    vec![Shape::Circle, Shape::Square, Shape::Triangle]
}

/// Eight fill/background pairs spread over hue and brightness.
pub fn default_palette() -> Vec<([u8; 3], [u8; 3])> {
    vec![
        ([230, 40, 40], [20, 20, 60]),
        ([40, 200, 60], [70, 20, 70]),
        ([50, 90, 240], [240, 220, 160]),
        ([250, 210, 40], [30, 70, 40]),
        ([240, 240, 240], [120, 30, 30]),
        ([20, 20, 20], [160, 210, 230]),
        ([200, 60, 220], [220, 240, 200]),
        ([40, 220, 220], [60, 40, 20]),
    ]
}

impl SyntheticSpec {
    pub fn new(count: usize, image_size: usize, seed: u64) -> Self {
        Self { count, image_size, seed, shape_set: default_shapes(), palette: default_palette() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(validation("synthetic count must be at least 1"));
        }
        if self.image_size < 8 {
            return Err(validation(format!("synthetic image_size must be at least 8, got {}", self.image_size)));
        }
        if self.palette.is_empty() {
            return Err(validation("synthetic palette is empty"));
        }
        if self.shape_set.is_empty() {
            return Err(validation("synthetic shape_set is empty"));
        }
        Ok(())
    }
}

/// Geometry of one drawn shape, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub cx: f32,
    pub cy: f32,
    pub radius: f32,
}

/// Renders a single shape with the given colors.
pub fn render_shape(size: usize, shape: Shape, at: Placement, fill: [u8; 3], background: [u8; 3]) -> RgbImage {
    let s = size as u32;
    RgbImage::from_fn(s, s, |x, y| {
        let (px, py) = (x as f32 + 0.5 - at.cx, y as f32 + 0.5 - at.cy);
        if inside(shape, px, py, at.radius) {
            image::Rgb(fill)
        } else {
            image::Rgb(background)
        }
    })
}

fn inside(shape: Shape, x: f32, y: f32, r: f32) -> bool {
    match shape {
        Shape::Circle => x * x + y * y <= r * r,
        Shape::Square => x.abs() <= r * 0.85 && y.abs() <= r * 0.85,
        // Upward equilateral triangle inscribed in the circle of radius r.
        Shape::Triangle => {
            let h = 3f32.sqrt() / 2.0;
            y <= r * 0.5 && y >= -r && h * (y + r) >= 1.5 * x.abs()
        }
    }
}

/// Draws one placement from the generator's RNG.
fn draw_placement(rng: &mut ChaCha8Rng, size: usize) -> Placement {
    let s = size as f32;
    let radius = rng.random_range(0.22 * s..0.36 * s);
    let margin = radius + 1.0;
    let cx = rng.random_range(margin..=s - margin);
    let cy = rng.random_range(margin..=s - margin);
    Placement { cx, cy, radius }
}

/// Deterministic labeled shapes dataset. Every item draws a shape type,
/// placement, scale and palette entry from one seeded stream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let items = (0..spec.count)
        .map(|_| {
            let shape = spec.shape_set[rng.random_range(0..spec.shape_set.len())];
            let placement = draw_placement(&mut rng, spec.image_size);
            let palette = rng.random_range(0..spec.palette.len());
            let (fill, bg) = spec.palette[palette];
            let img = render_shape(spec.image_size, shape, placement, fill, bg);
            DatasetItem {
                source: ItemSource::Memory(preprocess(&img)),
                label: Some(SyntheticLabel { shape, palette }),
            }
        })
        .collect();
    Ok(Dataset { items, split: Split::Train, image_size: spec.image_size, source: DatasetSource::Synthetic(spec.clone()) })
}

/// Writes every item as `NNNNN.png` into `dir`.
pub fn write_dataset_pngs(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let width = dataset.len().to_string().len().max(5);
    (0..dataset.len())
        .map(|i| {
            let path = dir.join(format!("{i:0width$}.png"));
            export(&dataset.load(i)?)?.save(&path).map_err(Error::from)?;
            Ok(path)
        })
        .collect()
}
