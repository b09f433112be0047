//! Mask sets: the per-image list of instance masks and stability scores
//! produced by a grid-prompted foundation model.
//!
//! Mask sets travel between the external model run and this crate as JSON
//! files (`<image-stem>.masks.json`):
//!
//! ```json
//! { "width": 4, "height": 2, "source": "external-sam",
//!   "masks": [ { "stability": 0.93, "rle": [2, 3, 3] } ] }
//! ```
//!
//! `rle` holds uncompressed COCO-style counts: alternating background and
//! foreground runs over the pixels in column-major order, starting with a
//! (possibly zero-length) background run, summing to `width * height`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Bitmap;
use crate::metrics::InstanceMap;

/// Where a mask set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    ExternalSam,
    Synthetic,
}

/// One proposed mask with its stability score.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    bitmap: Bitmap,
    stability: f64,
}

impl InstanceMask {
    pub fn new(bitmap: Bitmap, stability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&stability) {
            return Err(Error::Stability(stability));
        }
        if !bitmap.any() {
            return Err(Error::EmptyMask);
        }
        Ok(InstanceMask { bitmap, stability })
    }

    pub fn bitmap(&self) -> &Bitmap {
        &self.bitmap
    }

    pub fn stability(&self) -> f64 {
        self.stability
    }
}

/// All masks proposed for one image, in proposal order. May be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    width: usize,
    height: usize,
    masks: Vec<InstanceMask>,
    source: MaskSource,
}

impl MaskSet {
    pub fn empty(width: usize, height: usize, source: MaskSource) -> Self {
        MaskSet {
            width,
            height,
            masks: Vec::new(),
            source,
        }
    }

    pub fn new(
        width: usize,
        height: usize,
        masks: Vec<InstanceMask>,
        source: MaskSource,
    ) -> Result<Self> {
        let mut set = MaskSet::empty(width, height, source);
        for m in masks {
            set.push(m)?;
        }
        Ok(set)
    }

    /// Append a mask, checking its shape.
    pub fn push(&mut self, mask: InstanceMask) -> Result<()> {
        if mask.bitmap.dims() != (self.width, self.height) {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", mask.bitmap.width(), mask.bitmap.height()),
            ));
        }
        self.masks.push(mask);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn masks(&self) -> &[InstanceMask] {
        &self.masks
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskSetFile {
    width: usize,
    height: usize,
    source: MaskSource,
    masks: Vec<MaskEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskEntry {
    stability: f64,
    rle: Vec<u64>,
}

/// Column-major run-length encoding of a bitmap, first run is background.
pub fn rle_encode(bitmap: &Bitmap) -> Vec<u64> {
    let (w, h) = bitmap.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..w {
        for y in 0..h {
            let v = bitmap[(x, y)];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

/// Inverse of [`rle_encode`]. Fails unless the counts sum to `width * height`.
pub fn rle_decode(counts: &[u64], width: usize, height: usize) -> Result<Bitmap> {
    let total: u64 = counts.iter().sum();
    let expected = width * height;
    if total != expected as u64 {
        return Err(Error::RleLength {
            expected,
            got: total as usize,
        });
    }
    let mut bitmap = Bitmap::filled(width, height, false);
    let mut idx = 0usize;
    for (i, &run) in counts.iter().enumerate() {
        let fg = i % 2 == 1;
        for k in idx..idx + run as usize {
            if fg {
                bitmap[(k / height, k % height)] = true;
            }
        }
        idx += run as usize;
    }
    Ok(bitmap)
}

pub fn load_mask_set(path: impl AsRef<Path>) -> Result<MaskSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: MaskSetFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut set = MaskSet::empty(file.width, file.height, file.source);
    for entry in file.masks {
        let bitmap = rle_decode(&entry.rle, file.width, file.height)?;
        set.push(InstanceMask::new(bitmap, entry.stability)?)?;
    }
    Ok(set)
}

pub fn save_mask_set(ms: &MaskSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = MaskSetFile {
        width: ms.width,
        height: ms.height,
        source: ms.source,
        masks: ms
            .masks
            .iter()
            .map(|m| MaskEntry {
                stability: m.stability,
                rle: rle_encode(&m.bitmap),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).expect("mask set serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parameters for [`synth_masks`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMaskParams {
    pub dilate_px: usize,
    pub drop_prob: f64,
    pub stability_range: (f64, f64),
}

impl Default for SynthMaskParams {
    fn default() -> Self {
        SynthMaskParams {
            dilate_px: 1,
            drop_prob: 0.2,
            stability_range: (0.85, 1.0),
        }
    }
}

/// Dilate with a Euclidean disk of radius `radius` (radius 1 is the 4-neighbour cross).
pub fn dilate(bitmap: &Bitmap, radius: usize) -> Bitmap {
    if radius == 0 {
        return bitmap.clone();
    }
    let (w, h) = bitmap.dims();
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = Bitmap::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !bitmap[(x, y)] {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out[(nx as usize, ny as usize)] = true;
                }
            }
        }
    }
    out
}

/// Deterministic stand-in for a grid-prompted model run: one mask per
/// ground-truth instance (ascending id), each kept with probability
/// `1 - drop_prob`, dilated by `dilate_px` and scored uniformly in
/// `stability_range`.
pub fn synth_masks(gt: &InstanceMap, params: &SynthMaskParams, seed: u64) -> Result<MaskSet> {
    let (lo, hi) = params.stability_range;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::Config(format!(
            "stability_range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"
        )));
    }
    if !(0.0..=1.0).contains(&params.drop_prob) {
        return Err(Error::Config(format!(
            "drop_prob {} outside [0, 1]",
            params.drop_prob
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = gt.dims();
    let mut set = MaskSet::empty(w, h, MaskSource::Synthetic);
    for id in gt.ids() {
        // Both draws happen for every instance so one instance's fate does
        // not shift the random stream of the next.
        let drop_draw: f64 = rng.random();
        let score_draw: f64 = rng.random();
        if drop_draw < params.drop_prob {
            continue;
        }
        let stability = (lo + (hi - lo) * score_draw).clamp(lo, hi);
        let bitmap = dilate(&gt.region(id), params.dilate_px);
        set.push(InstanceMask::new(bitmap, stability)?)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn three_instances() -> InstanceMap {
        let mut g = Grid::filled(10, 8, 0u32);
        for (id, (x0, y0)) in [(1u32, (0, 0)), (2, (5, 1)), (7, (2, 5))] {
            for y in y0..y0 + 2 {
                for x in x0..x0 + 3 {
                    g[(x, y)] = id;
                }
            }
        }
        InstanceMap::new(g)
    }

    #[test]
    fn rle_starts_with_background_run() {
        let mut b = Bitmap::filled(2, 2, false);
        b[(0, 0)] = true;
        assert_eq!(rle_encode(&b), vec![0, 1, 3]);
        let full = Bitmap::filled(3, 3, true);
        assert_eq!(rle_encode(&full), vec![0, 9]);
        assert_eq!(rle_encode(&Bitmap::filled(3, 3, false)), vec![9]);
    }

    #[test]
    fn rle_is_column_major() {
        // x=1 column fully set on a 2x3 image: runs are 3 bg then 3 fg.
        let b = Grid::from_fn(2, 3, |x, _| x == 1);
        assert_eq!(rle_encode(&b), vec![3, 3]);
        assert_eq!(rle_decode(&[3, 3], 2, 3).unwrap(), b);
    }

    #[test]
    fn rle_length_mismatch_rejected() {
        assert!(matches!(
            rle_decode(&[3, 2], 2, 3),
            Err(Error::RleLength { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn invalid_stability_rejected() {
        let b = Bitmap::filled(2, 2, true);
        assert!(matches!(InstanceMask::new(b.clone(), 1.5), Err(Error::Stability(_))));
        assert!(InstanceMask::new(b.clone(), f64::NAN).is_err());
        assert!(InstanceMask::new(b, 0.0).is_ok());
    }

    #[test]
    fn mask_shape_checked() {
        let mut set = MaskSet::empty(4, 4, MaskSource::Synthetic);
        let m = InstanceMask::new(Bitmap::filled(4, 3, true), 0.5).unwrap();
        assert!(matches!(set.push(m), Err(Error::Shape { .. })));
    }

    #[test]
    fn synth_noiseless_identity() {
        let gt = three_instances();
        let params = SynthMaskParams {
            dilate_px: 0,
            drop_prob: 0.0,
            stability_range: (1.0, 1.0),
        };
        let ms = synth_masks(&gt, &params, 3).unwrap();
        assert_eq!(ms.len(), 3);
        for (m, id) in ms.masks().iter().zip(gt.ids()) {
            assert_eq!(m.bitmap(), &gt.region(id));
            assert_eq!(m.stability(), 1.0);
        }
    }

    #[test]
    fn synth_drop_all_and_empty_gt() {
        let gt = three_instances();
        let params = SynthMaskParams {
            drop_prob: 1.0,
            ..Default::default()
        };
        assert!(synth_masks(&gt, &params, 0).unwrap().is_empty());
        let empty = InstanceMap::new(Grid::filled(5, 5, 0));
        assert!(synth_masks(&empty, &SynthMaskParams::default(), 0).unwrap().is_empty());
    }

    #[test]
    fn synth_is_deterministic_and_in_range() {
        let gt = three_instances();
        let params = SynthMaskParams {
            dilate_px: 1,
            drop_prob: 0.3,
            stability_range: (0.4, 0.6),
        };
        let a = synth_masks(&gt, &params, 11).unwrap();
        let b = synth_masks(&gt, &params, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.masks().iter().all(|m| (0.4..=0.6).contains(&m.stability())));
    }

    #[test]
    fn dilation_radius_one_is_cross() {
        let mut b = Bitmap::filled(5, 5, false);
        b[(2, 2)] = true;
        let d = dilate(&b, 1);
        assert_eq!(d.count_ones(), 5);
        assert!(d[(2, 1)] && d[(1, 2)] && d[(3, 2)] && d[(2, 3)]);
        assert!(!d[(1, 1)]);
    }
}
