//! Image preprocessing for pixel-based encoders: resize, crop, augment,
//! normalise into a `3 x S x S` tensor.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use ndarray::Array3;

use crate::rng::SeededRng;

use super::{EncodeMode, EncoderError};

pub const CLIP_INPUT_SIZE: u32 = 224;
const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub size: u32,
    /// Maximum horizontal shift in train mode, as a fraction of `size`.
    pub max_translate: f64,
    pub flip: bool,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self {
            size: CLIP_INPUT_SIZE,
            max_translate: 0.1,
            flip: true,
        }
    }
}

impl Preprocessor {
    pub fn load(
        &self,
        path: &Path,
        mode: EncodeMode,
        rng: &mut SeededRng,
    ) -> Result<Array3<f32>, EncoderError> {
        let img = image::open(path).map_err(|e| EncoderError::Image {
            image: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(self.apply(&img, mode, rng))
    }

    pub fn apply(&self, img: &DynamicImage, mode: EncodeMode, rng: &mut SeededRng) -> Array3<f32> {
        let mut rgb = self.resize_center_crop(img);
        let mut shift = 0i64;
        if mode == EncodeMode::Train {
            if self.flip && rng.bernoulli(0.5) {
                imageops::flip_horizontal_in_place(&mut rgb);
            }
            let max = (self.max_translate * f64::from(self.size)).floor() as i64;
            if max > 0 {
                shift = rng.below((2 * max + 1) as usize) as i64 - max;
            }
        }
        let s = self.size as usize;
        // pixels shifted in from outside the frame stay at zero, i.e. the mean colour
        let mut out = Array3::<f32>::zeros((3, s, s));
        for y in 0..s {
            for x in 0..s {
                let src = x as i64 - shift;
                if src < 0 || src >= s as i64 {
                    continue;
                }
                let p = rgb.get_pixel(src as u32, y as u32);
                for c in 0..3 {
                    out[[c, y, x]] = (f32::from(p[c]) / 255.0 - CLIP_MEAN[c]) / CLIP_STD[c];
                }
            }
        }
        out
    }

    fn resize_center_crop(&self, img: &DynamicImage) -> RgbImage {
        let (w, h) = (img.width().max(1), img.height().max(1));
        let scale = f64::from(self.size) / f64::from(w.min(h));
        let nw = ((f64::from(w) * scale).round() as u32).max(self.size);
        let nh = ((f64::from(h) * scale).round() as u32).max(self.size);
        let resized = img.resize_exact(nw, nh, FilterType::Triangle).to_rgb8();
        let x0 = (nw - self.size) / 2;
        let y0 = (nh - self.size) / 2;
        imageops::crop_imm(&resized, x0, y0, self.size, self.size).to_image()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn gradient_image(w: u32, h: u32) -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |x, y| {
            Rgb([(x % 256) as u8, (y % 256) as u8, 128])
        }))
    }

    #[test]
    fn output_shape_and_eval_determinism() {
        let pre = Preprocessor::default();
        let img = gradient_image(300, 200);
        let a = pre.apply(&img, EncodeMode::Eval, &mut SeededRng::new(1));
        let b = pre.apply(&img, EncodeMode::Eval, &mut SeededRng::new(2));
        assert_eq!(a.shape(), &[3, 224, 224]);
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_augments() {
        let pre = Preprocessor::default();
        let img = gradient_image(256, 256);
        let eval = pre.apply(&img, EncodeMode::Eval, &mut SeededRng::new(0));
        let differs =
            (0..10).any(|s| pre.apply(&img, EncodeMode::Train, &mut SeededRng::new(s)) != eval);
        assert!(differs);
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fundus.png");
        gradient_image(64, 48).save(&path).unwrap();
        let pre = Preprocessor {
            size: 32,
            ..Default::default()
        };
        let t = pre
            .load(&path, EncodeMode::Eval, &mut SeededRng::new(0))
            .unwrap();
        assert_eq!(t.shape(), &[3, 32, 32]);
        assert!(pre
            .load(
                &dir.path().join("missing.png"),
                EncodeMode::Eval,
                &mut SeededRng::new(0)
            )
            .is_err());
    }
}
