use std::path::Path;

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square side length fed to the visual encoder.
pub const IMAGE_SIZE: usize = 560;

/// Resize target and per-channel normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for ImageSpec {
    /// 560 x 560 with the ImageNet statistics used to pretrain the residual encoder.
    fn default() -> Self {
        Self {
            size: IMAGE_SIZE,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Channel-first `3 x size x size` float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub size: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.size, self.size)
    }

    pub fn pixel(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.size + y) * self.size + x]
    }
}

/// Decodes, warps to a square (bilinear, aspect ratio not preserved), scales
/// to `[0, 1]` and normalizes each channel.
pub fn prepare_image(path: &Path, sample_id: &str, spec: &ImageSpec) -> Result<ImageTensor> {
    let img = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Error::Image {
            sample_id: sample_id.to_string(),
            message: format!("{}: {e}", path.display()),
        })?
        .decode()
        .map_err(|e| Error::Image {
            sample_id: sample_id.to_string(),
            message: format!("{}: {e}", path.display()),
        })?;
    Ok(tensor_from_image(&img, spec))
}

pub(crate) fn tensor_from_image(img: &image::DynamicImage, spec: &ImageSpec) -> ImageTensor {
    let side = spec.size as u32;
    let rgb = img.to_rgb8();
    let rgb = if rgb.dimensions() == (side, side) {
        rgb
    } else {
        image::imageops::resize(&rgb, side, side, FilterType::Triangle)
    };
    let plane = spec.size * spec.size;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            let unit = f32::from(px.0[c]) / 255.0;
            data[c * plane + i] = (unit - spec.mean[c]) / spec.std[c];
        }
    }
    ImageTensor {
        size: spec.size,
        data,
    }
}
