//! Segmentation and boundary prior maps built from a [`MaskSet`].
//!
//! The segmentation prior paints each mask with its stability score; where
//! masks overlap the pixel keeps the largest score. The boundary prior is the
//! union of every mask's exterior boundary, stored as 0/1.

use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bitmap, Grid};
use crate::masks::MaskSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Segmentation,
    Boundary,
}

impl PriorKind {
    /// File suffix used by the prior cache.
    pub fn suffix(self) -> &'static str {
        match self {
            PriorKind::Segmentation => "seg",
            PriorKind::Boundary => "bnd",
        }
    }
}

/// Single-channel map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMap {
    kind: PriorKind,
    values: Grid<f64>,
}

impl PriorMap {
    pub fn zeros(kind: PriorKind, width: usize, height: usize) -> Self {
        PriorMap {
            kind,
            values: Grid::filled(width, height, 0.0),
        }
    }

    /// Wrap existing values, clamping into `[0, 1]`. NaN becomes 0.
    pub fn from_values(kind: PriorKind, values: Grid<f64>) -> Self {
        let values = values.map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        PriorMap { kind, values }
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> PriorMap {
        PriorMap {
            kind: self.kind,
            values: self.values.crop(x0, y0, w, h),
        }
    }

    /// Write as a 16-bit grayscale PNG, `round(65535 * v)`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = self.dims();
        let raw: Vec<u16> = self
            .values
            .as_slice()
            .iter()
            .map(|&v| (v * 65535.0).round() as u16)
            .collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer size");
        img.save(path).map_err(|e| Error::image(path, e))
    }

    pub fn load_png(kind: PriorKind, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma16();
        let (w, h) = img.dimensions();
        let values = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Ok(PriorMap {
            kind,
            values: Grid::from_vec(w as usize, h as usize, values).expect("buffer size"),
        })
    }
}

/// Per-pixel maximum stability over the masks covering each pixel; 0 elsewhere.
pub fn build_seg_prior(ms: &MaskSet) -> PriorMap {
    let mut values = Grid::filled(ms.width(), ms.height(), 0.0_f64);
    for mask in ms.masks() {
        let s = mask.stability();
        for (v, &inside) in values.as_mut_slice().iter_mut().zip(mask.bitmap().as_slice()) {
            if inside && s > *v {
                *v = s;
            }
        }
    }
    PriorMap {
        kind: PriorKind::Segmentation,
        values,
    }
}

/// Mask pixels with at least one 4-neighbour outside the mask or outside the frame.
pub fn exterior_boundary(bitmap: &Bitmap) -> Bitmap {
    let (w, h) = bitmap.dims();
    Grid::from_fn(w, h, |x, y| {
        bitmap[(x, y)]
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !bitmap[(x - 1, y)]
                || !bitmap[(x + 1, y)]
                || !bitmap[(x, y - 1)]
                || !bitmap[(x, y + 1)])
    })
}

/// Union of the exterior boundaries of all masks, as a 0/1 map.
pub fn build_boundary_prior(ms: &MaskSet) -> PriorMap {
    let mut values = Grid::filled(ms.width(), ms.height(), 0.0_f64);
    for mask in ms.masks() {
        let edge = exterior_boundary(mask.bitmap());
        for (v, &on) in values.as_mut_slice().iter_mut().zip(edge.as_slice()) {
            if on {
                *v = 1.0;
            }
        }
    }
    PriorMap {
        kind: PriorKind::Boundary,
        values,
    }
}

/// Both priors for one mask set: `(segmentation, boundary)`.
pub fn build_priors(ms: &MaskSet) -> (PriorMap, PriorMap) {
    (build_seg_prior(ms), build_boundary_prior(ms))
}
