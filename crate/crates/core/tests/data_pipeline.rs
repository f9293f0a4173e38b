use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array3;
use s3gan::data::*;
use s3gan::Image;

fn write_rgb(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
    RgbImage::from_fn(w, h, |x, y| Rgb(f(x, y))).save(path).unwrap();
}

fn tiny_dataset(n: usize) -> Dataset {
    let items = (0..n)
        .map(|i| DatasetItem {
            source: ItemSource::Memory(Image::new(Array3::from_elem((3, 1, 1), (i % 256) as f32 / 255.0)).unwrap()),
            label: None,
        })
        .collect();
    Dataset { items, split: Split::Train, image_size: 1, source: DatasetSource::Synthetic(SyntheticSpec::new(n, 8, 0)) }
}

fn file_names(ds: &Dataset) -> Vec<String> {
    ds.items
        .iter()
        .map(|it| match &it.source {
            ItemSource::File(p) => p.file_name().unwrap().to_string_lossy().into_owned(),
            ItemSource::Memory(_) => panic!("expected file items"),
        })
        .collect()
}

#[test]
fn ingest_orders_by_byte_order_and_skips_undecodable_files() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["b.png", "B.png", "a10.png", "a2.png", "_x.jpg"] {
        write_rgb(&dir.path().join(name), 8, 8, |_, _| [1, 2, 3]);
    }
    fs::write(dir.path().join("broken.png"), b"not an image").unwrap();
    fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
    let ds = ingest(dir.path(), 8, CropMode::CenterCrop).unwrap();
    assert_eq!(file_names(&ds), ["B.png", "_x.jpg", "a10.png", "a2.png", "b.png"]);
    assert!(ds.validate_for_training().is_ok());
    for i in 0..ds.len() {
        assert_eq!(ds.load(i).unwrap().data().dim(), (3, 8, 8));
    }
}

#[test]
fn celeba_sized_source_is_cropped_at_the_center() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = |x: u32, y: u32| [(x % 256) as u8, (y % 256) as u8, ((x * 7 + y * 3) % 256) as u8];
    write_rgb(&dir.path().join("face.png"), 178, 218, pattern);
    assert_eq!(center_crop_offsets(178, 218, 128).unwrap(), (25, 45));
    let ds = ingest(dir.path(), 128, CropMode::CenterCrop).unwrap();
    let img = ds.load(0).unwrap();
    for (y, x) in [(0u32, 0u32), (127, 127), (13, 100), (64, 5)] {
        let want = pattern(x + 25, y + 45);
        for c in 0..3 {
            assert_eq!(img.data()[[c, y as usize, x as usize]], byte_to_unit(want[c]));
        }
    }
}

#[test]
fn square_source_of_target_size_is_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = |x: u32, y: u32| [(x * 9) as u8, (y * 5) as u8, (x ^ y) as u8];
    write_rgb(&dir.path().join("s.png"), 16, 16, pattern);
    let img = ingest(dir.path(), 16, CropMode::CenterCrop).unwrap().load(0).unwrap();
    let back = export(&img).unwrap();
    assert!(back.enumerate_pixels().all(|(x, y, p)| p.0 == pattern(x, y)));
}

#[test]
fn resize_mode_and_small_images() {
    let dir = tempfile::tempdir().unwrap();
    write_rgb(&dir.path().join("wide.png"), 40, 20, |_, _| [10, 20, 30]);
    let ds = ingest(dir.path(), 16, CropMode::Resize).unwrap();
    assert_eq!(ds.load(0).unwrap().data().dim(), (3, 16, 16));
    let small = ingest(dir.path(), 32, CropMode::CenterCrop).unwrap();
    assert!(small.load(0).is_err());
}

#[test]
fn grayscale_sources_become_three_channels() {
    let dir = tempfile::tempdir().unwrap();
    GrayImage::from_fn(8, 8, |x, _| Luma([(x * 30) as u8])).save(dir.path().join("g.png")).unwrap();
    let img = ingest(dir.path(), 8, CropMode::CenterCrop).unwrap().load(0).unwrap();
    let d = img.data();
    for x in 0..8 {
        let v = byte_to_unit((x * 30) as u8);
        assert!((0..3).all(|c| d[[c, 2, x]] == v));
    }
}

#[test]
fn empty_directory_is_invalid_for_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ingest(dir.path(), 8, CropMode::CenterCrop).unwrap();
    assert!(ds.is_empty());
    assert!(ds.validate_for_training().is_err());
}

#[test]
fn celeba_scale_split() {
    let ds = tiny_dataset(50_025);
    let (train, test) = split_dataset(&ds, 2_000, 11).unwrap();
    assert_eq!((train.len(), test.len()), (48_025, 2_000));
}

#[test]
fn split_is_disjoint_exhaustive_and_seeded() {
    let ds = tiny_dataset(100);
    let ptrs = |d: &Dataset| -> Vec<usize> {
        d.items
            .iter()
            .map(|it| match &it.source {
                ItemSource::Memory(img) => (img.data()[[0, 0, 0]] * 255.0).round() as usize,
                ItemSource::File(_) => unreachable!(),
            })
            .collect()
    };
    let (train, test) = split_dataset(&ds, 10, 5).unwrap();
    let (tr, te) = (ptrs(&train), ptrs(&test));
    assert_eq!((tr.len(), te.len()), (90, 10));
    let mut all: Vec<usize> = tr.iter().chain(te.iter()).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    let (_, again) = split_dataset(&ds, 10, 5).unwrap();
    assert_eq!(ptrs(&again), te);
    let (_, other) = split_dataset(&ds, 10, 6).unwrap();
    assert_ne!(ptrs(&other), te);
    assert!(split_dataset(&ds, 0, 1).is_err());
    assert!(split_dataset(&ds, 100, 1).is_err());
}

#[test]
fn pair_draws_are_uniform_within_three_sigma() {
    let n = 10usize;
    let total = 100_000usize;
    let mut sampler = PairSampler::new(2024);
    let mut counts = [[0usize; 10]; 3];
    for _ in 0..total / 1000 {
        let idx = sampler.sample_indices(n, 1000).unwrap();
        for (k, stream) in [&idx.a, &idx.b, &idx.real].into_iter().enumerate() {
            for &i in stream {
                counts[k][i] += 1;
            }
        }
    }
    let p = 1.0 / n as f64;
    let expected = total as f64 * p;
    let sigma = (total as f64 * p * (1.0 - p)).sqrt();
    for stream in counts {
        assert_eq!(stream.iter().sum::<usize>(), total);
        for c in stream {
            assert!((c as f64 - expected).abs() <= 3.0 * sigma, "count {c} vs {expected} ± {}", 3.0 * sigma);
        }
    }
}

#[test]
fn sampler_is_reproducible_and_rejects_empty_sets() {
    let a = PairSampler::new(9).sample_indices(50, 16).unwrap();
    let b = PairSampler::new(9).sample_indices(50, 16).unwrap();
    assert_eq!(a, b);
    assert!(PairSampler::new(9).sample_indices(0, 16).is_err());
    let ds = tiny_dataset(1);
    let batch = PairSampler::new(3).sample_pairs(&ds, 4).unwrap();
    assert!(batch.indices.a.iter().chain(&batch.indices.b).chain(&batch.indices.real).all(|&i| i == 0));
    assert_eq!(batch.a.dim(), (4, 3, 1, 1));
}

#[test]
fn synthetic_seeds_change_placements() {
    let a = generate_synthetic(&SyntheticSpec::new(200, 32, 7)).unwrap();
    let b = generate_synthetic(&SyntheticSpec::new(200, 32, 8)).unwrap();
    let same = (0..200).filter(|&i| a.load(i).unwrap() == b.load(i).unwrap()).count();
    assert!(same <= 2, "{same} identical items across seeds");
    let again = generate_synthetic(&SyntheticSpec::new(200, 32, 7)).unwrap();
    assert!((0..200).all(|i| a.load(i).unwrap() == again.load(i).unwrap()));
    assert!(a.items.iter().all(|it| it.label.is_some()));
}

#[test]
fn synthetic_pngs_reingest_exactly() {
    let ds = generate_synthetic(&SyntheticSpec::new(5, 16, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset_pngs(&ds, dir.path()).unwrap();
    let back = ingest(dir.path(), 16, CropMode::CenterCrop).unwrap();
    assert_eq!(back.len(), 5);
    for i in 0..5 {
        assert_eq!(back.load(i).unwrap(), ds.load(i).unwrap());
    }
}
