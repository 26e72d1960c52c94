//! Synthetic camouflage groups for desk-scale experiments.
//!
//! Each group draws one "species": a closed blob described by a small set of
//! radial harmonics plus a shared luminance offset against the background.
//! Every image of the group renders a jittered instance of that species over
//! smoothed value-noise, with the object textured from the same noise
//! distribution shifted by the group's luminance delta. That construction
//! gives low local contrast at the object boundary by design. Everything is
//! a pure function of the seed, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use bbnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AppError, AppResult};
use crate::imgio;

/// Foreground fraction band the generator enforces per image.
pub const MIN_OBJECT_FRACTION: f64 = 0.05;
pub const MAX_OBJECT_FRACTION: f64 = 0.45;

const HARMONICS: usize = 5;

/// How the object is colored relative to the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    /// Background texture plus a small per-group luminance delta.
    Camouflaged,
    /// An independent flat color: the high-contrast control used to verify
    /// that the camouflaged style actually lowers boundary contrast.
    Matte,
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub root: PathBuf,
    pub groups: usize,
    pub images_per_group: usize,
    pub image_files: usize,
}

struct Species {
    amps: [f64; HARMONICS],
    phases: [f64; HARMONICS],
    base_radius: f64,
    background: [f64; 3],
    luminance_delta: f64,
    matte_color: [f64; 3],
}

fn draw_species(rng: &mut ChaCha8Rng) -> Species {
    let mut amps = [0.0; HARMONICS];
    let mut phases = [0.0; HARMONICS];
    for k in 0..HARMONICS {
        amps[k] = rng.random_range(0.04..0.22) / (k + 1) as f64;
        phases[k] = rng.random_range(0.0..core::f64::consts::TAU);
    }
    let background = [
        rng.random_range(0.3..0.6),
        rng.random_range(0.3..0.6),
        rng.random_range(0.3..0.6),
    ];
    let sign = if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
    Species {
        amps,
        phases,
        base_radius: rng.random_range(0.26..0.36),
        background,
        luminance_delta: sign * rng.random_range(0.10..0.16),
        matte_color: [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ],
    }
}

/// Coarse random grid upsampled bilinearly plus fine per-pixel noise.
fn value_noise_background(species: &Species, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let cells = (size / 12).max(2);
    let mut coarse = vec![0.0; 3 * cells * cells];
    for v in coarse.iter_mut() {
        *v = rng.random_range(-0.07..0.07);
    }
    let coarse = Tensor::new(vec![3, cells, cells], coarse);
    let up = imgio::resize_planes(&coarse, size, size);
    let mut data = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for i in 0..size * size {
            let fine = rng.random_range(-0.02..0.02);
            data[c * size * size + i] =
                (species.background[c] + up.data()[c * size * size + i] + fine).clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![3, size, size], data)
}

struct Placement {
    cx: f64,
    cy: f64,
    scale: f64,
    rotation: f64,
    phase_jitter: [f64; HARMONICS],
}

fn draw_placement(size: usize, rng: &mut ChaCha8Rng) -> Placement {
    let margin = size as f64 * 0.28;
    let mut phase_jitter = [0.0; HARMONICS];
    for p in phase_jitter.iter_mut() {
        *p = rng.random_range(-0.3..0.3);
    }
    Placement {
        cx: rng.random_range(margin..size as f64 - margin),
        cy: rng.random_range(margin..size as f64 - margin),
        scale: rng.random_range(0.8..1.15),
        rotation: rng.random_range(0.0..core::f64::consts::TAU),
        phase_jitter,
    }
}

fn render_mask(species: &Species, place: &Placement, size: usize) -> (Tensor, f64) {
    let mut data = vec![0.0; size * size];
    let base = species.base_radius * size as f64 * place.scale;
    let mut inside = 0usize;
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - place.cx;
            let dy = y as f64 + 0.5 - place.cy;
            let r = (dx * dx + dy * dy).sqrt();
            let phi = dy.atan2(dx) + place.rotation;
            let mut radius = 1.0;
            for k in 0..HARMONICS {
                radius += species.amps[k]
                    * ((k + 1) as f64 * phi + species.phases[k] + place.phase_jitter[k]).cos();
            }
            if r <= base * radius {
                data[y * size + x] = 1.0;
                inside += 1;
            }
        }
    }
    let fraction = inside as f64 / (size * size) as f64;
    (Tensor::new(vec![size, size], data), fraction)
}

/// Rejection-samples a placement whose foreground fraction lands in the
/// accepted band, nudging the scale toward the band between attempts.
fn place_object(species: &Species, size: usize, rng: &mut ChaCha8Rng) -> (Tensor, f64) {
    let mut place = draw_placement(size, rng);
    for _ in 0..64 {
        let (mask, fraction) = render_mask(species, &place, size);
        if (MIN_OBJECT_FRACTION..=MAX_OBJECT_FRACTION).contains(&fraction) {
            return (mask, fraction);
        }
        if fraction < MIN_OBJECT_FRACTION {
            place.scale *= 1.2;
        } else {
            place = draw_placement(size, rng);
            place.scale *= 0.85;
        }
    }
    panic!("object placement failed to converge; the fraction band is reachable by construction");
}

fn render_image(
    species: &Species,
    style: Style,
    background: &Tensor,
    mask: &Tensor,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let mut data = background.data().to_vec();
    for i in 0..size * size {
        // Per-pixel texture noise drawn unconditionally to keep the rng
        // stream independent of mask content.
        let noise = rng.random_range(-0.02..0.02);
        if mask.data()[i] == 1.0 {
            for c in 0..3 {
                let v = match style {
                    Style::Camouflaged => {
                        background.data()[c * size * size + i] + species.luminance_delta + noise
                    }
                    Style::Matte => species.matte_color[c] + noise,
                };
                data[c * size * size + i] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, size, size], data)
}

/// Generates `n_groups` sub-class directories of `per_group` image/mask
/// pairs each under `<out>/train/synth/`.
pub fn synth_generate(
    out: &Path,
    n_groups: usize,
    per_group: usize,
    size: usize,
    seed: u64,
) -> AppResult<SynthSummary> {
    synth_generate_styled(out, n_groups, per_group, size, seed, Style::Camouflaged)
}

pub fn synth_generate_styled(
    out: &Path,
    n_groups: usize,
    per_group: usize,
    size: usize,
    seed: u64,
    style: Style,
) -> AppResult<SynthSummary> {
    if size == 0 || size % 24 != 0 {
        return Err(AppError::Config(format!(
            "synth size {size} must be a positive multiple of 24"
        )));
    }
    if n_groups == 0 || per_group == 0 {
        return Err(AppError::Config(
            "synth needs at least one group and one image per group".to_string(),
        ));
    }
    let root = out.join("train").join("synth");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files = 0usize;
    for gi in 0..n_groups {
        let species = draw_species(&mut rng);
        let group_dir = root.join(format!("group_{gi:02}"));
        let mask_dir = group_dir.join("masks");
        fs::create_dir_all(&mask_dir).map_err(|e| AppError::io(&mask_dir, e))?;
        for ii in 0..per_group {
            let background = value_noise_background(&species, size, &mut rng);
            let (mask, _fraction) = place_object(&species, size, &mut rng);
            let image = render_image(&species, style, &background, &mask, size, &mut rng);

            let stem = format!("img_{ii:02}");
            let rgb = image::RgbImage::from_fn(size as u32, size as u32, |x, y| {
                let i = y as usize * size + x as usize;
                let px = |c: usize| {
                    (image.data()[c * size * size + i].clamp(0.0, 1.0) * 255.0).round() as u8
                };
                image::Rgb([px(0), px(1), px(2)])
            });
            let img_path = group_dir.join(format!("{stem}.png"));
            rgb.save(&img_path).map_err(|e| AppError::Image {
                path: img_path.clone(),
                detail: e.to_string(),
            })?;
            imgio::save_gray_png(&mask_dir.join(format!("{stem}.png")), &mask)?;
            files += 1;
        }
    }
    Ok(SynthSummary {
        root,
        groups: n_groups,
        images_per_group: per_group,
        image_files: files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset;
    use crate::imgio;
    use std::collections::BTreeMap;
    use tempfile::tempdir;

    fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.insert(
                        path.strip_prefix(root).unwrap().to_path_buf(),
                        fs::read(&path).unwrap(),
                    );
                }
            }
        }
        out
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        synth_generate(a.path(), 2, 3, 48, 7).unwrap();
        synth_generate(b.path(), 2, 3, 48, 7).unwrap();
        let ta = tree_bytes(a.path());
        let tb = tree_bytes(b.path());
        assert_eq!(ta.len(), 12, "2 groups x 3 images x (image + mask)");
        assert_eq!(ta, tb);
    }

    #[test]
    fn different_seeds_differ() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        synth_generate(a.path(), 1, 2, 48, 7).unwrap();
        synth_generate(b.path(), 1, 2, 48, 8).unwrap();
        assert_ne!(tree_bytes(a.path()), tree_bytes(b.path()));
    }

    #[test]
    fn output_scans_as_a_dataset() {
        let dir = tempdir().unwrap();
        synth_generate(dir.path(), 4, 8, 48, 7).unwrap();
        let outcome = dataset::scan_dataset(&dir.path().join("train")).unwrap();
        assert_eq!(outcome.records.len(), 4);
        for r in &outcome.records {
            assert_eq!(r.len(), 8);
        }
    }

    #[test]
    fn mask_fractions_stay_in_band() {
        let dir = tempdir().unwrap();
        synth_generate(dir.path(), 3, 6, 48, 11).unwrap();
        let outcome = dataset::scan_dataset(&dir.path().join("train")).unwrap();
        for record in &outcome.records {
            for mask_path in &record.mask_paths {
                let m = imgio::load_gray(mask_path).unwrap();
                let frac =
                    m.data().iter().filter(|&&v| v >= 0.5).count() as f64 / m.data().len() as f64;
                assert!(
                    (0.02..=0.5).contains(&frac),
                    "{}: fraction {frac}",
                    mask_path.display()
                );
            }
        }
    }

    #[test]
    fn masks_are_strictly_binary_bytes() {
        let dir = tempdir().unwrap();
        synth_generate(dir.path(), 1, 5, 48, 3).unwrap();
        let outcome = dataset::scan_dataset(&dir.path().join("train")).unwrap();
        for mask_path in &outcome.records[0].mask_paths {
            let bytes = fs::read(mask_path).unwrap();
            let img = image::load_from_memory(&bytes).unwrap().to_luma8();
            for px in img.pixels() {
                assert!(px.0[0] == 0 || px.0[0] == 255);
            }
        }
    }

    #[test]
    fn size_must_be_multiple_of_24() {
        let dir = tempdir().unwrap();
        assert!(synth_generate(dir.path(), 1, 1, 50, 1).is_err());
    }
}
