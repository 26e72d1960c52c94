//! Group-structured dataset on disk.
//!
//! Layout: `<split_root>/<super_class>/<sub_class>/` holds the images
//! (`*.jpg`/`*.jpeg`/`*.png`) and `<sub_class>/masks/<stem>.png` the paired
//! binary masks. A sub-class directory is one group; groups with fewer than
//! 5 pairs are dropped (and reported), matching the source dataset's
//! filtering rule.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bbnet_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AppError, AppResult};
use crate::imgio;

/// Minimum pairs per retained group.
pub const MIN_GROUP_SIZE: usize = 5;

#[derive(Debug, Clone)]
pub struct GroupRecord {
    pub super_class: String,
    pub sub_class: String,
    pub image_paths: Vec<PathBuf>,
    pub mask_paths: Vec<PathBuf>,
}

impl GroupRecord {
    pub fn id(&self) -> String {
        format!("{}/{}", self.super_class, self.sub_class)
    }

    pub fn len(&self) -> usize {
        self.image_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_paths.is_empty()
    }
}

/// Scan result: retained groups plus the dropped (id, size) pairs.
#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub records: Vec<GroupRecord>,
    pub dropped: Vec<(String, usize)>,
}

fn sorted_dirs(root: &Path) -> AppResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| AppError::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| AppError::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            e == "jpg" || e == "jpeg" || e == "png"
        })
        .unwrap_or(false)
}

fn scan_group(super_class: &str, sub_dir: &Path) -> AppResult<GroupRecord> {
    let mut images = Vec::new();
    let entries = fs::read_dir(sub_dir).map_err(|e| AppError::io(sub_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| AppError::io(sub_dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_file(&path) {
            images.push(path);
        }
    }
    images.sort();
    let mask_dir = sub_dir.join("masks");
    let mut mask_paths = Vec::with_capacity(images.len());
    for img in &images {
        let stem = img
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| AppError::Dataset(format!("unreadable file name: {}", img.display())))?;
        let mask = mask_dir.join(format!("{stem}.png"));
        if !mask.is_file() {
            return Err(AppError::Pairing(img.clone()));
        }
        mask_paths.push(mask);
    }
    Ok(GroupRecord {
        super_class: super_class.to_string(),
        sub_class: sub_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        image_paths: images,
        mask_paths,
    })
}

/// Walks `<root>/<super>/<sub>/`, pairing every image with its mask.
/// Groups below [`MIN_GROUP_SIZE`] are dropped and reported; an empty root
/// yields an empty list with a warning.
pub fn scan_dataset(root: &Path) -> AppResult<ScanOutcome> {
    if !root.is_dir() {
        return Err(AppError::Dataset(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for super_dir in sorted_dirs(root)? {
        let super_class = super_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for sub_dir in sorted_dirs(&super_dir)? {
            if sub_dir.file_name().is_some_and(|n| n == "masks") {
                continue;
            }
            let record = scan_group(&super_class, &sub_dir)?;
            if record.len() >= MIN_GROUP_SIZE {
                records.push(record);
            } else {
                log::warn!(
                    "dropping group {} with only {} pairs (minimum {})",
                    record.id(),
                    record.len(),
                    MIN_GROUP_SIZE
                );
                dropped.push((record.id(), record.len()));
            }
        }
    }
    if records.is_empty() {
        log::warn!("no usable groups under {}", root.display());
    }
    Ok(ScanOutcome { records, dropped })
}

/// One loaded batch: a group's images and masks at the working resolution.
#[derive(Debug, Clone)]
pub struct ImageGroup {
    /// (B, 3, S, S) in [0,1].
    pub images: Tensor,
    /// (B, 1, S, S) strictly binary.
    pub masks: Tensor,
    pub group_id: String,
}

/// Loads the record's images at the given indices, resized to `size` with
/// masks thresholded at 0.5 after resizing.
pub fn load_group(record: &GroupRecord, indices: &[usize], size: usize) -> AppResult<ImageGroup> {
    let b = indices.len();
    assert!(b > 0, "empty index list");
    let mut images = vec![0.0; b * 3 * size * size];
    let mut masks = vec![0.0; b * size * size];
    for (slot, &i) in indices.iter().enumerate() {
        let img = imgio::load_rgb(&record.image_paths[i])?;
        let msk = imgio::load_gray(&record.mask_paths[i])?;
        let (ih, iw) = (img.shape()[1], img.shape()[2]);
        let (mh, mw) = (msk.shape()[0], msk.shape()[1]);
        if (ih, iw) != (mh, mw) {
            return Err(AppError::Image {
                path: record.mask_paths[i].clone(),
                detail: format!("mask is {mh}x{mw} but image is {ih}x{iw}"),
            });
        }
        let img = imgio::resize_planes(&img, size, size);
        let msk = imgio::resize_mask(&msk, size, size);
        images[slot * 3 * size * size..(slot + 1) * 3 * size * size]
            .copy_from_slice(img.data());
        masks[slot * size * size..(slot + 1) * size * size].copy_from_slice(msk.data());
    }
    Ok(ImageGroup {
        images: Tensor::new(vec![b, 3, size, size], images),
        masks: Tensor::new(vec![b, 1, size, size], masks),
        group_id: record.id(),
    })
}

/// Uniformly picks a group, then samples `batch_size` images from it:
/// distinct indices when the group is large enough, with replacement
/// otherwise.
pub fn sample_group(
    records: &[GroupRecord],
    batch_size: usize,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> AppResult<ImageGroup> {
    if records.is_empty() {
        return Err(AppError::Dataset("no groups to sample from".to_string()));
    }
    let record = &records[rng.random_range(0..records.len())];
    let n = record.len();
    let indices: Vec<usize> = if n >= batch_size {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..batch_size {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(batch_size);
        pool
    } else {
        (0..batch_size).map(|_| rng.random_range(0..n)).collect()
    };
    load_group(record, &indices, size)
}

/// Sorted image files directly inside `dir` (non-recursive).
pub fn list_images(dir: &Path) -> AppResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(AppError::Dataset(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| AppError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_file(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Stem-indexed PNG files of a directory (non-recursive).
pub fn png_stems(dir: &Path) -> AppResult<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| AppError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_file(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use tempfile::tempdir;

    fn write_pair(dir: &Path, stem: &str, size: u32) {
        let img = image::RgbImage::from_fn(size, size, |x, y| {
            image::Rgb([(x * 7) as u8, (y * 11) as u8, 128])
        });
        img.save(dir.join(format!("{stem}.png"))).unwrap();
        let mask_dir = dir.join("masks");
        fs::create_dir_all(&mask_dir).unwrap();
        let m = image::GrayImage::from_fn(size, size, |x, _| {
            image::Luma([if x < size / 2 { 255u8 } else { 0 }])
        });
        m.save(mask_dir.join(format!("{stem}.png"))).unwrap();
    }

    fn build_split(root: &Path, sizes: &[usize]) {
        for (gi, &n) in sizes.iter().enumerate() {
            let sub = root.join("animals").join(format!("group_{gi}"));
            fs::create_dir_all(&sub).unwrap();
            for i in 0..n {
                write_pair(&sub, &format!("img_{i:02}"), 32);
            }
        }
    }

    #[test]
    fn groups_below_minimum_are_dropped() {
        let dir = tempdir().unwrap();
        build_split(dir.path(), &[8, 6, 4]);
        let outcome = scan_dataset(dir.path()).unwrap();
        assert_eq!(outcome.records.len(), 2);
        assert_eq!(outcome.dropped, vec![("animals/group_2".to_string(), 4)]);
    }

    #[test]
    fn empty_root_gives_empty_list() {
        let dir = tempdir().unwrap();
        let outcome = scan_dataset(dir.path()).unwrap();
        assert!(outcome.records.is_empty());
        assert!(outcome.dropped.is_empty());
    }

    #[test]
    fn missing_mask_is_a_pairing_error() {
        let dir = tempdir().unwrap();
        let sub = dir.path().join("a").join("g");
        fs::create_dir_all(&sub).unwrap();
        for i in 0..5 {
            write_pair(&sub, &format!("img_{i}"), 16);
        }
        fs::remove_file(sub.join("masks/img_3.png")).unwrap();
        match scan_dataset(dir.path()) {
            Err(AppError::Pairing(p)) => assert!(p.ends_with("img_3.png")),
            other => panic!("expected pairing error, got {other:?}"),
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_replacement() {
        let dir = tempdir().unwrap();
        build_split(dir.path(), &[12, 6]);
        let outcome = scan_dataset(dir.path()).unwrap();

        let mut rng_a = ChaCha8Rng::seed_from_u64(3);
        let a = sample_group(&outcome.records, 10, 24, &mut rng_a).unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(3);
        let b = sample_group(&outcome.records, 10, 24, &mut rng_b).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.group_id, b.group_id);
        assert_eq!(a.images.shape(), &[10, 3, 24, 24]);
        assert_eq!(a.masks.shape(), &[10, 1, 24, 24]);
        for &v in a.masks.data() {
            assert!(v == 0.0 || v == 1.0);
        }
    }

    #[test]
    fn small_group_samples_with_replacement() {
        let dir = tempdir().unwrap();
        build_split(dir.path(), &[6]);
        let outcome = scan_dataset(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_group(&outcome.records, 10, 24, &mut rng).unwrap();
        assert_eq!(g.images.shape()[0], 10);
    }

    #[test]
    fn large_group_samples_distinct_indices() {
        // With 12 images and batch 10 the partial shuffle cannot repeat, so
        // any two identical rows would indicate replacement.
        let dir = tempdir().unwrap();
        let sub = dir.path().join("a").join("g");
        fs::create_dir_all(&sub).unwrap();
        for i in 0..12 {
            // Distinct constant images make row comparison meaningful.
            let img = image::RgbImage::from_pixel(8, 8, image::Rgb([i as u8 * 20, 0, 0]));
            img.save(sub.join(format!("img_{i:02}.png"))).unwrap();
            let mask_dir = sub.join("masks");
            fs::create_dir_all(&mask_dir).unwrap();
            image::GrayImage::from_pixel(8, 8, image::Luma([255]))
                .save(mask_dir.join(format!("img_{i:02}.png")))
                .unwrap();
        }
        let outcome = scan_dataset(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = sample_group(&outcome.records, 10, 24, &mut rng).unwrap();
        let plane = 3 * 24 * 24;
        let rows: Vec<&[f64]> = (0..10).map(|b| &g.images.data()[b * plane..(b + 1) * plane]).collect();
        for i in 0..10 {
            for j in i + 1..10 {
                assert_ne!(rows[i], rows[j], "rows {i} and {j} repeat");
            }
        }
    }
}
