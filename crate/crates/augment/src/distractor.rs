use std::path::Path;

use rand::Rng;
use vmc_core::texture::NoiseTexture;
use vmc_core::RngPolicy;

use crate::AugmentError;

/// A pool of unit-float distractor frames of one shape `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorSource {
    shape: (usize, usize, usize),
    images: Vec<Vec<f32>>,
}

impl DistractorSource {
    pub fn from_images(images: Vec<Vec<f32>>, shape: (usize, usize, usize)) -> Result<Self, AugmentError> {
        let len = shape.0 * shape.1 * shape.2;
        for (i, img) in images.iter().enumerate() {
            if img.len() != len {
                return Err(AugmentError::Image(format!("image {i} has {} values, expected {len}", img.len())));
            }
            if img.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(AugmentError::Image(format!("image {i} leaves [0, 1]")));
            }
        }
        Ok(Self { shape, images })
    }

    /// `count` RGB noise textures with randomized scale and octaves.
    pub fn procedural(count: usize, height: usize, width: usize, rng: &RngPolicy) -> Self {
        let images = (0..count as u64)
            .map(|k| {
                let mut r = rng.rng("distractor", k);
                let tex = NoiseTexture { seed: r.random(), scale: r.random_range(2.0..8.0), octaves: r.random_range(1..=4) };
                tex.render(height, width, 0.0)
            })
            .collect();
        Self { shape: (3, height, width), images }
    }

    /// Loads every PNG/JPEG in `dir` (sorted by file name), converted to RGB
    /// and resized to `height x width`.
    pub fn from_dir(dir: &Path, height: usize, width: usize) -> Result<Self, AugmentError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| AugmentError::Image(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        let mut images = Vec::with_capacity(paths.len());
        for p in &paths {
            let img = image::open(p).map_err(|e| AugmentError::Image(format!("{}: {e}", p.display())))?.to_rgb8();
            let img = image::imageops::resize(&img, width as u32, height as u32, image::imageops::FilterType::Triangle);
            let plane = height * width;
            let mut v = vec![0.0; 3 * plane];
            for (k, px) in img.pixels().enumerate() {
                for c in 0..3 {
                    v[c * plane + k] = px[c] as f32 / 255.0;
                }
            }
            images.push(v);
        }
        if images.is_empty() {
            return Err(AugmentError::MissingDistractor);
        }
        Ok(Self { shape: (3, height, width), images })
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&[f32]> {
        self.images.get(i).map(Vec::as_slice)
    }
}
