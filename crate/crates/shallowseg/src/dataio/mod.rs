//! Dataset ingestion, PNG codecs, resizing and augmentation.

mod augment;
mod synth;

pub use augment::{augment, rng_for_sample, AugmentConfig};
pub use synth::{synth_blobs, BlobSpec, Palette};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::bilinear_taps;
use crate::colorimetry::ImageRGB;
use crate::metrics::MaskGT;

/// One (image, mask) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ImageRGB,
    pub mask: MaskGT,
    pub id: String,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("dataset has {0} broken items:\n{}", .1.join("\n"))]
    Itemized(usize, Vec<String>),
    #[error("{0}")]
    Layout(String),
}

/// Outcome of a dataset load: samples in filename order plus per-item
/// problems that were skipped (non-strict mode only).
#[derive(Debug)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Mask binarization threshold for 8-bit inputs.
const MASK_THRESHOLD: u8 = 127;

pub fn load_rgb_png(path: &Path) -> Result<ImageRGB, DataError> {
    let img = image::open(path)
        .map_err(|source| DataError::Decode { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Ok(ImageRGB::new(w, h, data))
}

pub fn load_mask_png(path: &Path) -> Result<MaskGT, DataError> {
    let img = image::open(path)
        .map_err(|source| DataError::Decode { path: path.to_path_buf(), source })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|&v| u8::from(v > MASK_THRESHOLD)).collect();
    Ok(MaskGT::new(h, w, data))
}

pub fn save_rgb_png(img: &ImageRGB, path: &Path) -> Result<(), DataError> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer size matches");
    buf.save(path)
        .map_err(|source| DataError::Decode { path: path.to_path_buf(), source })
}

pub fn save_mask_png(mask: &MaskGT, path: &Path) -> Result<(), DataError> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| v * 255).collect();
    let buf = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .expect("buffer size matches");
    buf.save(path)
        .map_err(|source| DataError::Decode { path: path.to_path_buf(), source })
}

/// 16-bit grayscale probability map.
pub fn save_probability_png(prob: &[f64], height: usize, width: usize, path: &Path) -> Result<(), DataError> {
    let bytes: Vec<u16> = prob
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        width as u32,
        height as u32,
        bytes,
    )
    .expect("buffer size matches");
    buf.save(path)
        .map_err(|source| DataError::Decode { path: path.to_path_buf(), source })
}

/// Load `root/images/*.png` with masks of the same filename under
/// `root/masks/`. Items are sorted by filename. In strict mode any broken
/// item fails the whole load.
pub fn load_dataset(root: &Path, strict: bool) -> Result<LoadedDataset, DataError> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    if !images_dir.is_dir() {
        return Err(DataError::Layout(format!(
            "missing images/ directory under {}",
            root.display()
        )));
    }
    let mut names: BTreeMap<String, PathBuf> = BTreeMap::new();
    let entries = std::fs::read_dir(&images_dir)
        .map_err(|source| DataError::Io { path: images_dir.clone(), source })?;
    for entry in entries {
        let entry = entry.map_err(|source| DataError::Io { path: images_dir.clone(), source })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            names.insert(entry.file_name().to_string_lossy().into_owned(), path);
        }
    }
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    if names.is_empty() {
        warnings.push(format!("no PNG images found under {}", images_dir.display()));
    }
    for (name, img_path) in names {
        let mask_path = masks_dir.join(&name);
        if !mask_path.is_file() {
            warnings.push(format!("{name}: missing mask {}", mask_path.display()));
            continue;
        }
        let image = match load_rgb_png(&img_path) {
            Ok(i) => i,
            Err(e) => {
                warnings.push(format!("{name}: {e}"));
                continue;
            }
        };
        let mask = match load_mask_png(&mask_path) {
            Ok(m) => m,
            Err(e) => {
                warnings.push(format!("{name}: {e}"));
                continue;
            }
        };
        if image.height != mask.height || image.width != mask.width {
            warnings.push(format!(
                "{name}: image {}x{} vs mask {}x{}",
                image.height, image.width, mask.height, mask.width
            ));
            continue;
        }
        let id = name.trim_end_matches(".png").to_string();
        samples.push(Sample { image, mask, id });
    }
    if strict && !warnings.is_empty() {
        return Err(DataError::Itemized(warnings.len(), warnings));
    }
    Ok(LoadedDataset { samples, warnings })
}

/// Write a dataset in the `images/` + `masks/` layout.
pub fn save_dataset(samples: &[Sample], root: &Path) -> Result<(), DataError> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    for dir in [&images_dir, &masks_dir] {
        std::fs::create_dir_all(dir)
            .map_err(|source| DataError::Io { path: dir.clone(), source })?;
    }
    for s in samples {
        save_rgb_png(&s.image, &images_dir.join(format!("{}.png", s.id)))?;
        save_mask_png(&s.mask, &masks_dir.join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

/// Bilinear resize of an interleaved multi-channel image; same coordinate
/// convention as the tape's upsampling operator.
fn resize_interleaved(data: &[f64], h: usize, w: usize, ch: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ys = bilinear_taps(h, oh);
    let xs = bilinear_taps(w, ow);
    let mut out = vec![0.0; oh * ow * ch];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..ch {
                let v00 = data[(y0 * w + x0) * ch + c];
                let v01 = data[(y0 * w + x1) * ch + c];
                let v10 = data[(y1 * w + x0) * ch + c];
                let v11 = data[(y1 * w + x1) * ch + c];
                out[(oy * ow + ox) * ch + c] =
                    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    out
}

/// Bilinear resize of a single plane (used to bring logit maps back to the
/// native image size).
pub(crate) fn resize_plane(data: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if oh == h && ow == w {
        return data.to_vec();
    }
    resize_interleaved(data, h, w, 1, oh, ow)
}

pub fn resize_image(img: &ImageRGB, oh: usize, ow: usize) -> ImageRGB {
    assert!(oh > 0 && ow > 0, "zero resize target");
    if oh == img.height && ow == img.width {
        return img.clone();
    }
    let data = resize_interleaved(&img.data, img.height, img.width, 3, oh, ow)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    ImageRGB::new(ow, oh, data)
}

/// Nearest-neighbor, so the mask stays strictly binary.
pub fn resize_mask(mask: &MaskGT, oh: usize, ow: usize) -> MaskGT {
    assert!(oh > 0 && ow > 0, "zero resize target");
    if oh == mask.height && ow == mask.width {
        return mask.clone();
    }
    let sy = mask.height as f64 / oh as f64;
    let sx = mask.width as f64 / ow as f64;
    let mut data = vec![0u8; oh * ow];
    for oy in 0..oh {
        let iy = (((oy as f64 + 0.5) * sy) as usize).min(mask.height - 1);
        for ox in 0..ow {
            let ix = (((ox as f64 + 0.5) * sx) as usize).min(mask.width - 1);
            data[oy * ow + ox] = mask.data[iy * mask.width + ix];
        }
    }
    MaskGT::new(oh, ow, data)
}

pub fn resize_sample(sample: &Sample, oh: usize, ow: usize) -> Sample {
    Sample {
        image: resize_image(&sample.image, oh, ow),
        mask: resize_mask(&sample.mask, oh, ow),
        id: sample.id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use tempfile::tempdir;

    fn checker_sample(id: &str) -> Sample {
        let mask = MaskGT::new(4, 4, (0..16).map(|i| (i % 2) as u8).collect());
        let data = (0..4 * 4 * 3).map(|i| (i % 7) as f64 / 7.0).collect();
        Sample { image: ImageRGB::new(4, 4, data), mask, id: to_owned(id) }
    }

    fn to_owned(s: &str) -> String {
        s.to_string()
    }

    #[test]
    fn resize_identity() {
        let s = checker_sample("a");
        let r = resize_sample(&s, 4, 4);
        assert_eq!(r, s);
    }

    #[test]
    fn mask_stays_binary_after_resize() {
        let s = checker_sample("a");
        for &(h, w) in &[(2usize, 3usize), (7, 5), (9, 9), (3, 8)] {
            let m = resize_mask(&s.mask, h, w);
            assert!(m.data.iter().all(|&v| v <= 1));
            assert_eq!(m.data.len(), h * w);
        }
    }

    #[test]
    fn image_resize_matches_tape_upsampling() {
        // One channel through the 3-channel path vs the autodiff operator.
        let vals = [1.0, 2.0, 3.0, 4.0];
        let mut interleaved = Vec::new();
        for v in vals {
            interleaved.extend_from_slice(&[v / 4.0, v / 4.0, v / 4.0]);
        }
        let img = ImageRGB::new(2, 2, interleaved);
        let up = resize_image(&img, 4, 4);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&[1, 1, 2, 2], vals.iter().map(|v| v / 4.0).collect(), false);
        let y = t.upsample_bilinear(x, 4, 4);
        for (i, &e) in t.data(y).iter().enumerate() {
            assert!((up.data[i * 3] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_dataset_on_disk() {
        let dir = tempdir().unwrap();
        let samples = vec![checker_sample("b"), checker_sample("a"), checker_sample("c")];
        save_dataset(&samples, dir.path()).unwrap();
        let loaded = load_dataset(dir.path(), true).unwrap();
        assert_eq!(loaded.samples.len(), 3);
        // Sorted by filename regardless of save order.
        let ids: Vec<&str> = loaded.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(loaded.samples[0].mask, samples[0].mask);
    }

    #[test]
    fn empty_dir_warns() {
        let dir = tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        let loaded = load_dataset(dir.path(), false).unwrap();
        assert!(loaded.samples.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn missing_mask_is_itemized_and_strict_fails() {
        let dir = tempdir().unwrap();
        let s = checker_sample("a");
        save_dataset(&[s], dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("masks/a.png")).unwrap();
        let loaded = load_dataset(dir.path(), false).unwrap();
        assert!(loaded.samples.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
        assert!(load_dataset(dir.path(), true).is_err());
    }

    #[test]
    fn mask_binarization_threshold() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.png");
        let buf = image::GrayImage::from_raw(3, 1, vec![0u8, 255, 128]).unwrap();
        buf.save(&path).unwrap();
        let m = load_mask_png(&path).unwrap();
        assert_eq!(m.data, vec![0, 1, 1]);
    }
}
