//! The parameter-free fusion function that folds the two prior maps into a
//! raw image.
//!
//! RGB inputs receive the segmentation prior on G and the boundary prior on
//! B, with the sums clipped to `[0, 1]`; R is left untouched. Grayscale inputs
//! become a three-channel image `(gray, seg, boundary)`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::priors::{PriorKind, PriorMap};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Colorspace {
    Gray,
    Rgb,
}

impl Colorspace {
    pub fn channels(self) -> usize {
        match self {
            Colorspace::Gray => 1,
            Colorspace::Rgb => 3,
        }
    }
}

/// Input image with values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    colorspace: Colorspace,
    pixels: Tensor,
}

impl RawImage {
    pub fn new(colorspace: Colorspace, pixels: Tensor) -> Result<Self> {
        if pixels.channels() != colorspace.channels() {
            return Err(Error::shape(
                format!("{} channels", colorspace.channels()),
                format!("{} channels", pixels.channels()),
            ));
        }
        if let Some(v) = pixels.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(RawImage { colorspace, pixels })
    }

    pub fn gray(values: Grid<f64>) -> Result<Self> {
        RawImage::new(Colorspace::Gray, Tensor::from_planes(&[&values])?)
    }

    pub fn colorspace(&self) -> Colorspace {
        self.colorspace
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RawImage {
        RawImage {
            colorspace: self.colorspace,
            pixels: self.pixels.crop(x0, y0, w, h),
        }
    }

    /// Three-channel network input for the un-augmented image.
    ///
    /// RGB passes through; grayscale becomes `(gray, 0, 0)`, which is what
    /// [`augment`] produces for all-zero priors.
    pub fn to_model_input(&self) -> Tensor {
        match self.colorspace {
            Colorspace::Rgb => self.pixels.clone(),
            Colorspace::Gray => {
                let (_, h, w) = self.pixels.shape();
                self.pixels.concat(&Tensor::zeros(2, h, w))
            }
        }
    }

    /// Decode an image file, scaling by the type's maximum (255 or 65535).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(RawImage::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let color = img.color();
        let sixteen = color.bytes_per_pixel() / color.channel_count().max(1) as u8 >= 2;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (colorspace, planes) = if color.has_color() {
            let buf: Vec<f64> = if sixteen {
                img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
            } else {
                img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
            };
            (Colorspace::Rgb, interleaved_to_planar(&buf, 3, w, h))
        } else {
            let buf: Vec<f64> = if sixteen {
                img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
            } else {
                img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
            };
            (Colorspace::Gray, buf)
        };
        let pixels = Tensor::from_vec(colorspace.channels(), h, w, planes).expect("decoded size");
        RawImage { colorspace, pixels }
    }

    /// Write as 8-bit PNG (gray or RGB), `round(255 * v)`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = self.dims();
        let res = match self.colorspace {
            Colorspace::Gray => {
                let raw = self.pixels.as_slice().iter().map(|&v| to_u8(v)).collect();
                ImageBuffer::<image::Luma<u8>, Vec<u8>>::from_raw(w as u32, h as u32, raw)
                    .expect("buffer size")
                    .save(path)
            }
            Colorspace::Rgb => rgb8(&self.pixels).save(path),
        };
        res.map_err(|e| Error::image(path, e))
    }
}

fn interleaved_to_planar(buf: &[f64], channels: usize, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; buf.len()];
    for i in 0..w * h {
        for c in 0..channels {
            out[c * w * h + i] = buf[i * channels + c];
        }
    }
    out
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgb8(t: &Tensor) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (_, h, w) = t.shape();
    let mut raw = Vec::with_capacity(3 * w * h);
    for i in 0..w * h {
        for c in 0..3 {
            raw.push(to_u8(t.plane(c)[i]));
        }
    }
    ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer size")
}

/// Three-channel fused image, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedImage {
    pixels: Tensor,
}

impl AugmentedImage {
    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor {
        self.pixels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.pixels.width(), self.pixels.height())
    }

    /// Lossless 8-bit RGB export for inspection.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        rgb8(&self.pixels).save(path).map_err(|e| Error::image(path, e))
    }
}

/// Fuse `seg` and `bnd` into `x`.
pub fn augment(x: &RawImage, seg: &PriorMap, bnd: &PriorMap) -> Result<AugmentedImage> {
    if seg.kind() != PriorKind::Segmentation || bnd.kind() != PriorKind::Boundary {
        return Err(Error::Config(
            "augment expects (segmentation, boundary) priors in that order".into(),
        ));
    }
    for p in [seg, bnd] {
        if p.dims() != x.dims() {
            return Err(Error::shape(
                format!("{}x{}", x.width(), x.height()),
                format!("{}x{}", p.dims().0, p.dims().1),
            ));
        }
    }
    let (w, h) = x.dims();
    let n = w * h;
    let mut out = Tensor::zeros(3, h, w);
    let seg = seg.values().as_slice();
    let bnd = bnd.values().as_slice();
    match x.colorspace() {
        Colorspace::Gray => {
            out.plane_mut(0).copy_from_slice(x.pixels().plane(0));
            out.plane_mut(1).copy_from_slice(seg);
            out.plane_mut(2).copy_from_slice(bnd);
        }
        Colorspace::Rgb => {
            let src = x.pixels();
            out.plane_mut(0).copy_from_slice(src.plane(0));
            let data = out.as_mut_slice();
            for i in 0..n {
                data[n + i] = (src.plane(1)[i] + seg[i]).clamp(0.0, 1.0);
                data[2 * n + i] = (src.plane(2)[i] + bnd[i]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(AugmentedImage { pixels: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f64) -> RawImage {
        let mut t = Tensor::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    *t.at_mut(c, y, x) = f(c, x, y);
                }
            }
        }
        RawImage::new(Colorspace::Rgb, t).unwrap()
    }

    #[test]
    fn gray_with_zero_priors() {
        let g = Grid::from_fn(4, 3, |x, y| (x + y) as f64 / 10.0);
        let x = RawImage::gray(g.clone()).unwrap();
        let aug = augment(
            &x,
            &PriorMap::zeros(PriorKind::Segmentation, 4, 3),
            &PriorMap::zeros(PriorKind::Boundary, 4, 3),
        )
        .unwrap();
        assert_eq!(aug.pixels().plane(0), g.as_slice());
        assert!(aug.pixels().plane(1).iter().all(|&v| v == 0.0));
        assert!(aug.pixels().plane(2).iter().all(|&v| v == 0.0));
        assert_eq!(aug.pixels(), &x.to_model_input());
    }

    #[test]
    fn rgb_pixel_clips() {
        let x = rgb(1, 1, |c, _, _| [0.5, 0.7, 0.2][c]);
        let seg = PriorMap::from_values(PriorKind::Segmentation, Grid::filled(1, 1, 0.9));
        let bnd = PriorMap::from_values(PriorKind::Boundary, Grid::filled(1, 1, 1.0));
        let aug = augment(&x, &seg, &bnd).unwrap();
        assert_eq!(aug.pixels().as_slice(), &[0.5, 1.0, 1.0]);
    }

    #[test]
    fn gray_channels_hold_priors_only() {
        let x = RawImage::gray(Grid::filled(2, 2, 0.4)).unwrap();
        let seg = PriorMap::from_values(PriorKind::Segmentation, Grid::filled(2, 2, 0.25));
        let bnd = PriorMap::from_values(PriorKind::Boundary, Grid::filled(2, 2, 1.0));
        let aug = augment(&x, &seg, &bnd).unwrap();
        assert!(aug.pixels().plane(1).iter().all(|&v| v == 0.25));
        assert!(aug.pixels().plane(2).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_and_kind_mismatch_rejected() {
        let x = rgb(3, 3, |_, _, _| 0.1);
        let seg = PriorMap::zeros(PriorKind::Segmentation, 3, 2);
        let bnd = PriorMap::zeros(PriorKind::Boundary, 3, 3);
        assert!(matches!(augment(&x, &seg, &bnd), Err(Error::Shape { .. })));
        let seg = PriorMap::zeros(PriorKind::Segmentation, 3, 3);
        assert!(augment(&x, &bnd, &seg).is_err());
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        let t = Tensor::from_vec(1, 1, 1, vec![1.5]).unwrap();
        assert!(RawImage::new(Colorspace::Gray, t).is_err());
    }

    #[test]
    fn load_normalizes_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let x = rgb(3, 2, |c, x, y| ((c * 6 + y * 3 + x) * 10) as f64 / 255.0);
        x.save_png(&p).unwrap();
        let back = RawImage::load(&p).unwrap();
        assert_eq!(back.colorspace(), Colorspace::Rgb);
        for (a, b) in x.pixels().as_slice().iter().zip(back.pixels().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
