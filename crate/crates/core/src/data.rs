//! Dataset ingestion, class schemes, cropping and the synthetic blob generator.
//!
//! Supported on-disk layouts (all relative to the manifest root):
//!
//! * `generic`: `images/<id>.<ext>`, `labels/<id>.png` (instance ids, or a
//!   binary mask that is split into 8-connected instances),
//!   `masks/<id>.masks.json`, optional `priors/<id>.seg.png` and
//!   `priors/<id>.bnd.png`.
//! * `monuseg`: `Tissue Images/<id>.tif` with polygon annotations in
//!   `Annotations/<id>.xml`; mask sets under `masks/`.
//! * `glas`: the flat challenge directory, `<id>.bmp` next to
//!   `<id>_anno.bmp`. `train` selects `train_*`; `test` merges `testA_*` and
//!   `testB_*`. Mask sets under `masks/`.
//!
//! When a prior cache exists it is used; otherwise priors are built from the
//! mask set; with neither, priors are zero maps and a warning is logged.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{augment, AugmentedImage, RawImage};
use crate::grid::{Bitmap, Grid};
use crate::masks::{self, load_mask_set, MaskSet, SynthMaskParams};
use crate::metrics::{label_instances, Connectivity, InstanceMap};
use crate::priors::{build_priors, PriorKind, PriorMap};
use crate::training::{crop_offset, LabelMap, TrainSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    #[default]
    Generic,
    Monuseg,
    Glas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// How instance labels become per-pixel classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClassScheme {
    /// background / foreground
    #[default]
    Binary,
    /// background / instance interior / instance boundary
    ThreeClass,
}

impl ClassScheme {
    pub fn num_classes(self) -> usize {
        match self {
            ClassScheme::Binary => 2,
            ClassScheme::ThreeClass => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub class_scheme: ClassScheme,
}

/// One image with its labels and (optionally) its mask set and priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RawImage,
    pub instances: InstanceMap,
    pub label: LabelMap,
    pub mask_set: Option<MaskSet>,
    pub priors: Option<(PriorMap, PriorMap)>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        image: RawImage,
        instances: InstanceMap,
        scheme: ClassScheme,
        mask_set: Option<MaskSet>,
        priors: Option<(PriorMap, PriorMap)>,
    ) -> Result<Self> {
        let id = id.into();
        let dims = image.dims();
        let check = |what: &str, d: (usize, usize)| {
            if d != dims {
                Err(Error::shape(
                    format!("{}x{} ({id})", dims.0, dims.1),
                    format!("{what} {}x{}", d.0, d.1),
                ))
            } else {
                Ok(())
            }
        };
        check("label", instances.dims())?;
        if let Some(ms) = &mask_set {
            check("mask set", (ms.width(), ms.height()))?;
        }
        if let Some((s, b)) = &priors {
            check("seg prior", s.dims())?;
            check("boundary prior", b.dims())?;
        }
        let label = class_labels(&instances, scheme);
        Ok(Sample {
            id,
            image,
            instances,
            label,
            mask_set,
            priors,
        })
    }

    /// Priors, or zero maps when none are attached.
    pub fn priors_or_zero(&self) -> (PriorMap, PriorMap) {
        match &self.priors {
            Some(p) => p.clone(),
            None => {
                let (w, h) = self.image.dims();
                (
                    PriorMap::zeros(PriorKind::Segmentation, w, h),
                    PriorMap::zeros(PriorKind::Boundary, w, h),
                )
            }
        }
    }

    pub fn augmented(&self) -> AugmentedImage {
        let (seg, bnd) = self.priors_or_zero();
        augment(&self.image, &seg, &bnd).expect("sample shapes validated at construction")
    }

    pub fn to_train_sample(&self) -> TrainSample {
        TrainSample::new(
            self.image.to_model_input(),
            self.augmented().into_tensor(),
            self.label.clone(),
        )
        .expect("sample shapes validated at construction")
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Sample {
        let mask_set = self.mask_set.as_ref().map(|ms| {
            let mut out = MaskSet::empty(w, h, ms.source());
            for m in ms.masks() {
                let b = m.bitmap().crop(x0, y0, w, h);
                if let Ok(m) = masks::InstanceMask::new(b, m.stability()) {
                    out.push(m).expect("cropped shape");
                }
            }
            out
        });
        Sample {
            id: self.id.clone(),
            image: self.image.crop(x0, y0, w, h),
            instances: self.instances.crop(x0, y0, w, h),
            label: self.label.crop(x0, y0, w, h),
            mask_set,
            priors: self
                .priors
                .as_ref()
                .map(|(s, b)| (s.crop(x0, y0, w, h), b.crop(x0, y0, w, h))),
        }
    }
}

/// Per-pixel classes from instance labels. In the three-class scheme a pixel
/// of instance `k` is boundary when a 4-neighbour is not `k` or lies outside
/// the frame, i.e. when it is on the exterior boundary of that instance.
pub fn class_labels(instances: &InstanceMap, scheme: ClassScheme) -> LabelMap {
    let g = instances.labels();
    let (w, h) = g.dims();
    let classes = Grid::from_fn(w, h, |x, y| {
        let k = g[(x, y)];
        if k == 0 {
            return 0u8;
        }
        match scheme {
            ClassScheme::Binary => 1,
            ClassScheme::ThreeClass => {
                let edge = x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || g[(x - 1, y)] != k
                    || g[(x + 1, y)] != k
                    || g[(x, y - 1)] != k
                    || g[(x, y + 1)] != k;
                if edge { 2 } else { 1 }
            }
        }
    });
    LabelMap::new(classes, scheme.num_classes()).expect("class indices in range")
}

/// Random `size x size` crop with one offset applied to every array.
pub fn random_crop(sample: &Sample, size: usize, rng: &mut impl Rng) -> Result<Sample> {
    let (w, h) = sample.image.dims();
    let (x0, y0) = crop_offset(w, h, size, rng)?;
    Ok(sample.crop(x0, y0, size, size))
}

/// Read an instance label image. Raw pixel values are ids; a label with a
/// single nonzero value is treated as binary and split into 8-connected instances.
pub fn load_instance_label(path: impl AsRef<Path>) -> Result<InstanceMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<u32> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.to_luma16().into_raw().into_iter().map(u32::from).collect()
        }
        other => other.to_luma8().into_raw().into_iter().map(u32::from).collect(),
    };
    let grid = Grid::from_vec(w, h, values).expect("decoded size");
    let map = InstanceMap::new(grid);
    if map.ids().len() == 1 {
        return Ok(label_instances(&map.foreground(), Connectivity::Eight));
    }
    Ok(map)
}

/// Write instance ids as a 16-bit grayscale PNG.
pub fn save_instance_label(map: &InstanceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = map.dims();
    if let Some(&big) = map.labels().as_slice().iter().find(|&&v| v > u16::MAX as u32) {
        return Err(Error::Dataset(format!("instance id {big} does not fit in 16 bits")));
    }
    let raw: Vec<u16> = map.labels().as_slice().iter().map(|&v| v as u16).collect();
    ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, raw)
        .expect("buffer size")
        .save(path)
        .map_err(|e| Error::image(path, e))
}

/// Rasterize MoNuSeg-style XML polygon annotations (`<Region>` blocks of
/// `<Vertex X=".." Y=".."/>`), one instance per region, later regions on top.
/// A pixel belongs to a polygon when its centre is inside (even-odd rule).
pub fn rasterize_monuseg_xml(xml: &str, width: usize, height: usize) -> InstanceMap {
    let region_re = Regex::new(r"(?s)<Region\b.*?</Region>").expect("regex");
    let vertex_re =
        Regex::new(r#"<Vertex\b[^>]*?\bX="([^"]+)"[^>]*?\bY="([^"]+)""#).expect("regex");
    let mut grid = Grid::filled(width, height, 0u32);
    let mut next = 0u32;
    for region in region_re.find_iter(xml) {
        let poly: Vec<(f64, f64)> = vertex_re
            .captures_iter(region.as_str())
            .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
            .collect();
        if poly.len() < 3 {
            continue;
        }
        next += 1;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &poly {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n.saturating_sub(1));
        for py in clampi(y0.floor(), height)..=clampi(y1.ceil(), height) {
            for px in clampi(x0.floor(), width)..=clampi(x1.ceil(), width) {
                if point_in_polygon(px as f64 + 0.5, py as f64 + 0.5, &poly) {
                    grid[(px, py)] = next;
                }
            }
        }
    }
    InstanceMap::new(grid)
}

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

const IMAGE_EXTS: &[&str] = &["png", "bmp", "tif", "tiff"];

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
}

/// `(id, image path, label source)` triples for a manifest.
enum LabelSource {
    Image(PathBuf),
    MonusegXml(PathBuf),
}

fn discover(m: &DatasetManifest) -> Result<Vec<(String, PathBuf, LabelSource)>> {
    let root = &m.root;
    let mut out = Vec::new();
    match m.layout {
        Layout::Generic => {
            for img in list_files(&root.join("images"))?.into_iter().filter(|p| is_image(p)) {
                let id = stem(&img);
                let label = root.join("labels").join(format!("{id}.png"));
                if !label.is_file() {
                    return Err(Error::Dataset(format!("missing label {}", label.display())));
                }
                out.push((id, img, LabelSource::Image(label)));
            }
        }
        Layout::Monuseg => {
            for img in list_files(&root.join("Tissue Images"))?.into_iter().filter(|p| is_image(p)) {
                let id = stem(&img);
                let xml = root.join("Annotations").join(format!("{id}.xml"));
                if !xml.is_file() {
                    return Err(Error::Dataset(format!("missing annotation {}", xml.display())));
                }
                out.push((id, img, LabelSource::MonusegXml(xml)));
            }
        }
        Layout::Glas => {
            let prefixes: &[&str] = match m.split {
                Split::Train => &["train_"],
                Split::Test => &["testA_", "testB_"],
            };
            for img in list_files(root)? {
                let id = stem(&img);
                let is_bmp = img.extension().and_then(|e| e.to_str()) == Some("bmp");
                if !is_bmp || id.ends_with("_anno") || !prefixes.iter().any(|p| id.starts_with(p)) {
                    continue;
                }
                let anno = root.join(format!("{id}_anno.bmp"));
                if !anno.is_file() {
                    return Err(Error::Dataset(format!("missing label {}", anno.display())));
                }
                out.push((id, img, LabelSource::Image(anno)));
            }
        }
    }
    Ok(out)
}

/// `(id, image path)` pairs for a manifest, sorted by id.
pub fn discover_images(m: &DatasetManifest) -> Result<Vec<(String, PathBuf)>> {
    Ok(discover(m)?.into_iter().map(|(id, p, _)| (id, p)).collect())
}

/// Cached prior paths for an image id under `root/priors`.
pub fn prior_cache_paths(root: &Path, id: &str) -> (PathBuf, PathBuf) {
    let dir = root.join("priors");
    (
        dir.join(format!("{id}.{}.png", PriorKind::Segmentation.suffix())),
        dir.join(format!("{id}.{}.png", PriorKind::Boundary.suffix())),
    )
}

pub fn mask_set_path(root: &Path, id: &str) -> PathBuf {
    root.join("masks").join(format!("{id}.masks.json"))
}

pub fn load_dataset(m: &DatasetManifest) -> Result<Vec<Sample>> {
    if !m.root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} does not exist", m.root.display())));
    }
    let entries = discover(m)?;
    if entries.is_empty() {
        log::warn!("no images found under {}", m.root.display());
    }
    let mut samples = Vec::with_capacity(entries.len());
    for (id, img_path, label_src) in entries {
        let image = RawImage::load(&img_path)?;
        let (w, h) = image.dims();
        let instances = match label_src {
            LabelSource::Image(p) => load_instance_label(p)?,
            LabelSource::MonusegXml(p) => {
                let xml = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                rasterize_monuseg_xml(&xml, w, h)
            }
        };
        let mpath = mask_set_path(&m.root, &id);
        let mask_set = if mpath.is_file() { Some(load_mask_set(&mpath)?) } else { None };
        let (seg_p, bnd_p) = prior_cache_paths(&m.root, &id);
        let priors = if seg_p.is_file() && bnd_p.is_file() {
            Some((
                PriorMap::load_png(PriorKind::Segmentation, &seg_p)?,
                PriorMap::load_png(PriorKind::Boundary, &bnd_p)?,
            ))
        } else if let Some(ms) = &mask_set {
            Some(build_priors(ms))
        } else {
            log::warn!("{id}: no mask set or prior cache, using zero priors");
            None
        };
        samples.push(Sample::new(id, image, instances, m.class_scheme, mask_set, priors)?);
    }
    Ok(samples)
}

/// Write samples in the generic layout (images, labels, mask sets).
pub fn save_generic(samples: &[Sample], root: &Path) -> Result<()> {
    for sub in ["images", "labels", "masks"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for s in samples {
        s.image.save_png(root.join("images").join(format!("{}.png", s.id)))?;
        save_instance_label(&s.instances, root.join("labels").join(format!("{}.png", s.id)))?;
        if let Some(ms) = &s.mask_set {
            masks::save_mask_set(ms, mask_set_path(root, &s.id))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDatasetParams {
    pub n_images: usize,
    pub image_size: usize,
    pub blobs_per_image: usize,
    /// Std of the additive Gaussian pixel noise.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Mean blob brightness above background.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default)]
    pub masks: SynthMaskParams,
    #[serde(default)]
    pub class_scheme: ClassScheme,
}

fn default_noise() -> f64 {
    0.12
}

fn default_contrast() -> f64 {
    0.2
}

impl Default for SynthDatasetParams {
    fn default() -> Self {
        SynthDatasetParams {
            n_images: 8,
            image_size: 128,
            blobs_per_image: 6,
            noise_sigma: default_noise(),
            contrast: default_contrast(),
            masks: SynthMaskParams::default(),
            class_scheme: ClassScheme::Binary,
        }
    }
}

/// Generated images plus the number of blobs actually placed in each.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub samples: Vec<Sample>,
    pub placed_blobs: Vec<usize>,
}

/// Gray images of non-touching elliptical blobs on a shaded, noisy
/// background, with instance labels and synthetic mask sets. Blobs are
/// placed by rejection sampling with a 2-pixel gap, so each blob is exactly
/// one ground-truth instance; a blob that cannot be placed after 200 tries is
/// skipped and `placed_blobs` records the shortfall.
pub fn synth_dataset(params: &SynthDatasetParams, seed: u64) -> Result<SynthDataset> {
    let size = params.image_size;
    if params.n_images > 0 && size < 8 {
        return Err(Error::Config(format!("image_size {size} too small (min 8)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(params.n_images);
    let mut placed_blobs = Vec::with_capacity(params.n_images);
    let r_min = (size as f64 / 32.0).max(2.0);
    let r_max = (size as f64 / 12.0).max(r_min + 1.0);
    for idx in 0..params.n_images {
        let mut labels = Grid::filled(size, size, 0u32);
        let mut reserved = Bitmap::filled(size, size, false);
        let mut brightness = Vec::new();
        for _ in 0..params.blobs_per_image {
            for _attempt in 0..200 {
                let a = rng.random_range(r_min..r_max);
                let b = rng.random_range(r_min..r_max);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let cx = rng.random_range(a.max(b)..size as f64 - a.max(b));
                let cy = rng.random_range(a.max(b)..size as f64 - a.max(b));
                let (s, c) = theta.sin_cos();
                let inside = |x: usize, y: usize| {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let u = (dx * c + dy * s) / a;
                    let v = (-dx * s + dy * c) / b;
                    u * u + v * v <= 1.0
                };
                let pixels: Vec<(usize, usize)> = (0..size)
                    .flat_map(|y| (0..size).map(move |x| (x, y)))
                    .filter(|&(x, y)| inside(x, y))
                    .collect();
                if pixels.is_empty() || pixels.iter().any(|&p| reserved[p]) {
                    continue;
                }
                let id = brightness.len() as u32 + 1;
                let mut blob = Bitmap::filled(size, size, false);
                for &p in &pixels {
                    labels[p] = id;
                    blob[p] = true;
                }
                for (p, &on) in reserved
                    .as_mut_slice()
                    .iter_mut()
                    .zip(masks::dilate(&blob, 2).as_slice())
                {
                    *p |= on;
                }
                brightness.push(params.contrast * rng.random_range(0.5..1.5));
                break;
            }
        }
        // Smooth background shading: a random planar ramp.
        let base = rng.random_range(0.25..0.45);
        let gx = rng.random_range(-0.1..0.1);
        let gy = rng.random_range(-0.1..0.1);
        let img = Grid::from_fn(size, size, |x, y| {
            let k = labels[(x, y)];
            let shade = base + gx * x as f64 / size as f64 + gy * y as f64 / size as f64;
            let v = shade + if k > 0 { brightness[k as usize - 1] } else { 0.0 };
            v
        });
        let img = Grid::from_vec(
            size,
            size,
            img.into_vec().into_iter().map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect(),
        )
        .expect("size");
        let instances = InstanceMap::new(labels);
        let mask_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(idx as u64);
        let ms = masks::synth_masks(&instances, &params.masks, mask_seed)?;
        let priors = build_priors(&ms);
        placed_blobs.push(brightness.len());
        samples.push(Sample::new(
            format!("synth_{idx:04}"),
            RawImage::gray(img)?,
            instances,
            params.class_scheme,
            Some(ms),
            Some(priors),
        )?);
    }
    Ok(SynthDataset {
        samples,
        placed_blobs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::exterior_boundary;

    fn small_params(n: usize) -> SynthDatasetParams {
        SynthDatasetParams {
            n_images: n,
            image_size: 48,
            blobs_per_image: 4,
            ..Default::default()
        }
    }

    #[test]
    fn synth_empty_and_deterministic() {
        assert!(synth_dataset(&small_params(0), 1).unwrap().samples.is_empty());
        let a = synth_dataset(&small_params(2), 42).unwrap();
        let b = synth_dataset(&small_params(2), 42).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&small_params(2), 43).unwrap();
        assert_ne!(a.samples[0].image, c.samples[0].image);
    }

    #[test]
    fn synth_blob_counts_match_components() {
        let d = synth_dataset(&small_params(5), 7).unwrap();
        for (s, &n) in d.samples.iter().zip(&d.placed_blobs) {
            assert_eq!(s.instances.num_instances(), n);
            let cc = label_instances(&s.instances.foreground(), Connectivity::Eight);
            assert_eq!(cc.num_instances(), n, "{}", s.id);
        }
    }

    #[test]
    fn three_class_partition() {
        let d = synth_dataset(&small_params(1), 3).unwrap();
        let inst = &d.samples[0].instances;
        let l = class_labels(inst, ClassScheme::ThreeClass);
        for id in inst.ids() {
            let region = inst.region(id);
            let edge = exterior_boundary(&region);
            let (w, h) = region.dims();
            for y in 0..h {
                for x in 0..w {
                    if region[(x, y)] {
                        let want = if edge[(x, y)] { 2 } else { 1 };
                        assert_eq!(l.classes()[(x, y)], want);
                    }
                }
            }
        }
        assert!(inst.foreground().as_slice().iter().zip(l.classes().as_slice()).all(|(&f, &c)| f == (c != 0)));
    }

    #[test]
    fn crop_identity_and_alignment() {
        let d = synth_dataset(&small_params(1), 5).unwrap();
        let s = &d.samples[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(&random_crop(s, 48, &mut rng).unwrap(), s);
        let c = s.crop(10, 7, 20, 20);
        for y in 0..20 {
            for x in 0..20 {
                assert_eq!(c.instances.labels()[(x, y)], s.instances.labels()[(x + 10, y + 7)]);
                assert_eq!(c.label.classes()[(x, y)], s.label.classes()[(x + 10, y + 7)]);
                assert_eq!(c.image.pixels().at(0, y, x), s.image.pixels().at(0, y + 7, x + 10));
                let (cs, _) = c.priors.as_ref().unwrap();
                let (ss, _) = s.priors.as_ref().unwrap();
                assert_eq!(cs.values()[(x, y)], ss.values()[(x + 10, y + 7)]);
            }
        }
        assert!(matches!(random_crop(s, 49, &mut rng), Err(Error::CropTooLarge { .. })));
    }

    #[test]
    fn monuseg_polygon_rasterization() {
        let xml = r#"<Annotations><Annotation><Regions>
            <Region Id="1"><Vertices>
              <Vertex X="1" Y="1" Z="0"/><Vertex X="5" Y="1" Z="0"/>
              <Vertex X="5" Y="4" Z="0"/><Vertex X="1" Y="4" Z="0"/>
            </Vertices></Region>
            <Region Id="2"><Vertices>
              <Vertex X="6" Y="6"/><Vertex X="8" Y="6"/><Vertex X="8" Y="8"/>
            </Vertices></Region>
        </Regions></Annotation></Annotations>"#;
        let m = rasterize_monuseg_xml(xml, 10, 10);
        assert_eq!(m.ids(), vec![1, 2]);
        assert_eq!(m.areas()[&1], 12);
        assert_eq!(m.labels()[(1, 1)], 1);
        assert_eq!(m.labels()[(5, 1)], 0);
    }

    #[test]
    fn binary_label_split_into_instances() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let mut img = ImageBuffer::<Luma<u8>, Vec<u8>>::new(6, 3);
        img.put_pixel(0, 0, Luma([255]));
        img.put_pixel(4, 2, Luma([255]));
        img.save(&p).unwrap();
        let m = load_instance_label(&p).unwrap();
        assert_eq!(m.num_instances(), 2);
    }
}
