//! Image file IO. Decoding and encoding go through the `image` crate; all
//! resampling uses the library's own bilinear kernel so that training,
//! prediction, and evaluation share one resize semantics.

use std::path::Path;

use bbnet_core::tensor::{self, Tensor};

use crate::error::{AppError, AppResult};

/// Loads an image as planar RGB in [0,1]: shape (3, H, W).
pub fn load_rgb(path: &Path) -> AppResult<Tensor> {
    let img = image::open(path).map_err(|e| AppError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data))
}

/// Loads an image as a single gray plane in [0,1]: shape (H, W).
pub fn load_gray(path: &Path) -> AppResult<Tensor> {
    let img = image::open(path).map_err(|e| AppError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; h * w];
    for (x, y, px) in gray.enumerate_pixels() {
        data[y as usize * w + x as usize] = px.0[0] as f64 / 255.0;
    }
    Ok(Tensor::new(vec![h, w], data))
}

/// Writes a [0,1] map as an 8-bit grayscale PNG (values rounded to 0..255).
pub fn save_gray_png(path: &Path, map: &Tensor) -> AppResult<()> {
    let shape = map.shape();
    assert_eq!(shape.len(), 2, "save_gray_png expects (H, W)");
    let (h, w) = (shape[0], shape[1]);
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|e| AppError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Bilinear resample of a (C, H, W) plane stack to (C, oh, ow).
pub fn resize_planes(t: &Tensor, oh: usize, ow: usize) -> Tensor {
    let shape = t.shape();
    assert_eq!(shape.len(), 3, "resize_planes expects (C, H, W)");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h == oh && w == ow {
        return t.clone();
    }
    let four = Tensor::new(vec![1, c, h, w], t.data().to_vec());
    let out = tensor::resize_bilinear_forward(&four, oh, ow);
    Tensor::new(vec![c, oh, ow], out.data().to_vec())
}

/// Bilinear resample of an (H, W) map.
pub fn resize_map(t: &Tensor, oh: usize, ow: usize) -> Tensor {
    let shape = t.shape();
    assert_eq!(shape.len(), 2, "resize_map expects (H, W)");
    let three = Tensor::new(vec![1, shape[0], shape[1]], t.data().to_vec());
    let out = resize_planes(&three, oh, ow);
    Tensor::new(vec![oh, ow], out.data().to_vec())
}

/// Resize then binarize at 0.5: the mask loading rule.
pub fn resize_mask(t: &Tensor, oh: usize, ow: usize) -> Tensor {
    resize_map(t, oh, ow).map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn gray_png_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map = Tensor::new(
            vec![2, 3],
            vec![0.0, 1.0, 0.5, 0.25, 0.75, 1.0],
        );
        save_gray_png(&path, &map).unwrap();
        let back = load_gray(&path).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        for (a, b) in map.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn mask_resize_is_binary() {
        let m = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]);
        let r = resize_mask(&m, 5, 5);
        for &v in r.data() {
            assert!(v == 0.0 || v == 1.0);
        }
    }

    #[test]
    fn rgb_roundtrip_through_png() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = image::RgbImage::from_fn(4, 2, |x, y| {
            image::Rgb([x as u8 * 60, y as u8 * 100, 200])
        });
        img.save(&path).unwrap();
        let t = load_rgb(&path).unwrap();
        assert_eq!(t.shape(), &[3, 2, 4]);
        assert!((t.data()[0 * 8 + 0 * 4 + 1] - 60.0 / 255.0).abs() < 1e-9);
        assert!((t.data()[2 * 8 + 3] - 200.0 / 255.0).abs() < 1e-9);
    }
}
