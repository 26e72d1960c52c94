//! `predict` subcommand: run a checkpoint over a directory of images and
//! write one 8-bit grayscale map per input.

use std::path::{Path, PathBuf};

use bbnet_core::network::{forward, Ablation};
use bbnet_core::tape::Tape;
use bbnet_core::Tensor;

use crate::checkpoint;
use crate::dataset::list_images;
use crate::error::{AppError, AppResult};
use crate::imgio;

/// All images in the directory run as one batch so group consensus sees the
/// whole group, matching how grouped batches are built during training.
pub fn cmd_predict(ckpt_path: &Path, in_dir: &Path, out_dir: &Path) -> AppResult<Vec<PathBuf>> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let cfg = &ckpt.config;
    let s = cfg.input_size;

    let inputs = list_images(in_dir)?;
    if inputs.is_empty() {
        return Err(AppError::Dataset(format!(
            "no images found in {}",
            in_dir.display()
        )));
    }

    let b = inputs.len();
    let mut batch = vec![0.0; b * 3 * s * s];
    let mut native = Vec::with_capacity(b);
    for (slot, path) in inputs.iter().enumerate() {
        let img = imgio::load_rgb(path)?;
        native.push((img.shape()[1], img.shape()[2]));
        let small = imgio::resize_planes(&img, s, s);
        batch[slot * 3 * s * s..(slot + 1) * 3 * s * s].copy_from_slice(small.data());
    }
    let images = Tensor::new(vec![b, 3, s, s], batch);

    let mut tape = Tape::new();
    let (out, _) = forward(&mut tape, &ckpt.store, cfg, Ablation::default(), images, false)?;
    let p = tape.value(out.p);

    std::fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let mut written = Vec::with_capacity(b);
    for (slot, path) in inputs.iter().enumerate() {
        let plane = s * s;
        let map = Tensor::new(
            vec![s, s],
            p.data()[slot * plane..(slot + 1) * plane].to_vec(),
        );
        let (nh, nw) = native[slot];
        let full = imgio::resize_map(&map, nh, nw);
        let stem = path
            .file_stem()
            .map(|os| os.to_string_lossy().into_owned())
            .ok_or_else(|| AppError::Image {
                path: path.clone(),
                detail: "image has no file stem".to_string(),
            })?;
        let out_path = out_dir.join(format!("{stem}.png"));
        imgio::save_gray_png(&out_path, &full)?;
        written.push(out_path);
    }
    Ok(written)
}
