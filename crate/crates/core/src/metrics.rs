//! Pixel- and object-level segmentation metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bitmap, Grid};

/// Instance label map: 0 is background, any positive value is an instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMap(Grid<u32>);

impl InstanceMap {
    pub fn new(labels: Grid<u32>) -> Self {
        InstanceMap(labels)
    }

    pub fn labels(&self) -> &Grid<u32> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<u32> {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Distinct positive ids, ascending.
    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.0.as_slice().iter().copied().filter(|&v| v > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn num_instances(&self) -> usize {
        self.ids().len()
    }

    pub fn region(&self, id: u32) -> Bitmap {
        self.0.map(|&v| v == id)
    }

    pub fn foreground(&self) -> Bitmap {
        self.0.map(|&v| v > 0)
    }

    /// Pixel count per id.
    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut areas = BTreeMap::new();
        for &v in self.0.as_slice() {
            if v > 0 {
                *areas.entry(v).or_insert(0) += 1;
            }
        }
        areas
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> InstanceMap {
        InstanceMap(self.0.crop(x0, y0, w, h))
    }
}

fn check_same<T, U>(a: &Grid<T>, b: &Grid<U>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{}", b.width(), b.height()),
        ));
    }
    Ok(())
}

/// `2|P ∩ G| / (|P| + |G|)`, 1 when both are empty.
pub fn dice(pred: &Bitmap, gt: &Bitmap) -> Result<f64> {
    check_same(pred, gt)?;
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        inter += (p && g) as usize;
        np += p as usize;
        ng += g as usize;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// Harmonic mean of pixel precision and recall; 0 when both are 0.
pub fn pixel_fscore(pred: &Bitmap, gt: &Bitmap) -> Result<f64> {
    check_same(pred, gt)?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    if tp + fp + fne == 0 {
        // Nothing to find and nothing predicted.
        return Ok(1.0);
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Config(format!("connectivity must be 4 or 8, got {v}"))),
        }
    }
}

/// Connected components of `pred`, labelled 1.. in raster order of first pixel.
pub fn label_instances(pred: &Bitmap, connectivity: Connectivity) -> InstanceMap {
    let (w, h) = pred.dims();
    let mut labels = Grid::filled(w, h, 0u32);
    let neighbours: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ],
    };
    let mut next = 0u32;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !pred[(x, y)] || labels[(x, y)] != 0 {
                continue;
            }
            next += 1;
            labels[(x, y)] = next;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                for &(dx, dy) in neighbours {
                    let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if pred[(nx, ny)] && labels[(nx, ny)] == 0 {
                        labels[(nx, ny)] = next;
                        stack.push((nx, ny));
                    }
                }
            }
        }
    }
    InstanceMap(labels)
}

/// Overlap table between two instance maps.
struct Overlaps {
    gt_ids: Vec<u32>,
    pred_ids: Vec<u32>,
    gt_area: Vec<usize>,
    pred_area: Vec<usize>,
    /// `inter[g][p]`, indexed by position in `gt_ids` / `pred_ids`.
    inter: Vec<Vec<usize>>,
}

impl Overlaps {
    fn new(pred: &InstanceMap, gt: &InstanceMap) -> Result<Self> {
        check_same(pred.labels(), gt.labels())?;
        let gt_areas = gt.areas();
        let pred_areas = pred.areas();
        let gt_ids: Vec<u32> = gt_areas.keys().copied().collect();
        let pred_ids: Vec<u32> = pred_areas.keys().copied().collect();
        let gpos: BTreeMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let ppos: BTreeMap<u32, usize> =
            pred_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut inter = vec![vec![0usize; pred_ids.len()]; gt_ids.len()];
        for (&p, &g) in pred.labels().as_slice().iter().zip(gt.labels().as_slice()) {
            if p > 0 && g > 0 {
                inter[gpos[&g]][ppos[&p]] += 1;
            }
        }
        Ok(Overlaps {
            gt_area: gt_ids.iter().map(|id| gt_areas[id]).collect(),
            pred_area: pred_ids.iter().map(|id| pred_areas[id]).collect(),
            gt_ids,
            pred_ids,
            inter,
        })
    }
}

/// Aggregated Jaccard Index.
///
/// Each ground-truth instance is matched to the prediction with the highest
/// Jaccard index (ties to the lowest prediction id; a prediction may serve
/// several ground-truth instances). Matched intersections sum into the
/// numerator and matched unions into the denominator; an instance with no
/// overlapping prediction adds its own area to the denominator. Predictions
/// never matched add their areas to the denominator. Returns 1 when both maps
/// are empty.
pub fn aji(pred: &InstanceMap, gt: &InstanceMap) -> Result<f64> {
    let o = Overlaps::new(pred, gt)?;
    if o.gt_ids.is_empty() && o.pred_ids.is_empty() {
        return Ok(1.0);
    }
    let mut used = vec![false; o.pred_ids.len()];
    let (mut num, mut den) = (0usize, 0usize);
    for g in 0..o.gt_ids.len() {
        let mut best: Option<(usize, usize, usize)> = None; // (pred idx, inter, union)
        for p in 0..o.pred_ids.len() {
            let i = o.inter[g][p];
            if i == 0 {
                continue;
            }
            let u = o.gt_area[g] + o.pred_area[p] - i;
            // i/u > bi/bu  <=>  i*bu > bi*u; strict so the lowest id wins ties.
            if best.is_none_or(|(_, bi, bu)| i * bu > bi * u) {
                best = Some((p, i, u));
            }
        }
        match best {
            Some((p, i, u)) => {
                num += i;
                den += u;
                used[p] = true;
            }
            None => den += o.gt_area[g],
        }
    }
    for (p, &u) in used.iter().enumerate() {
        if !u {
            den += o.pred_area[p];
        }
    }
    Ok(if den == 0 { 0.0 } else { num as f64 / den as f64 })
}

/// Object-level Dice: the area-weighted mean, in both directions, of each
/// object's Dice against its maximally overlapping counterpart (Dice 0 when
/// nothing overlaps), averaged over the two directions. 1 when both maps are
/// empty, 0 when exactly one is.
pub fn object_dice(pred: &InstanceMap, gt: &InstanceMap) -> Result<f64> {
    let o = Overlaps::new(pred, gt)?;
    match (o.gt_ids.is_empty(), o.pred_ids.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let obj_dice = |i: usize, a: usize, b: usize| 2.0 * i as f64 / (a + b) as f64;
    let gt_total: usize = o.gt_area.iter().sum();
    let pred_total: usize = o.pred_area.iter().sum();

    let mut gt_term = 0.0;
    for g in 0..o.gt_ids.len() {
        // Maximal overlap, lowest id on ties.
        let (p, i) = (0..o.pred_ids.len())
            .map(|p| (p, o.inter[g][p]))
            .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if i > 0 {
            gt_term += o.gt_area[g] as f64 * obj_dice(i, o.gt_area[g], o.pred_area[p]);
        }
    }
    let mut pred_term = 0.0;
    for p in 0..o.pred_ids.len() {
        let (g, i) = (0..o.gt_ids.len())
            .map(|g| (g, o.inter[g][p]))
            .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if i > 0 {
            pred_term += o.pred_area[p] as f64 * obj_dice(i, o.pred_area[p], o.gt_area[g]);
        }
    }
    // Divide once so identical maps give exactly 1.
    Ok(0.5 * (gt_term / gt_total as f64 + pred_term / pred_total as f64))
}

/// Metrics for one image. Object-level entries are absent when not computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub dice: Option<f64>,
    pub fscore: Option<f64>,
    pub aji: Option<f64>,
    pub object_dice: Option<f64>,
}

impl ImageMetrics {
    /// All four metrics for a semantic foreground and instance maps.
    pub fn compute(
        id: impl Into<String>,
        pred_fg: &Bitmap,
        pred_inst: &InstanceMap,
        gt: &InstanceMap,
    ) -> Result<Self> {
        let gt_fg = gt.foreground();
        Ok(ImageMetrics {
            id: id.into(),
            dice: Some(dice(pred_fg, &gt_fg)?),
            fscore: Some(pixel_fscore(pred_fg, &gt_fg)?),
            aji: Some(aji(pred_inst, gt)?),
            object_dice: Some(object_dice(pred_inst, gt)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dice: Option<f64>,
    pub fscore: Option<f64>,
    pub aji: Option<f64>,
    pub object_dice: Option<f64>,
}

/// Per-image metrics plus their means (over images where each is present).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn new(per_image: Vec<ImageMetrics>) -> Self {
        let aggregate = Aggregate {
            dice: mean_of(per_image.iter().map(|m| m.dice)),
            fscore: mean_of(per_image.iter().map(|m| m.fscore)),
            aji: mean_of(per_image.iter().map(|m| m.aji)),
            object_dice: mean_of(per_image.iter().map(|m| m.object_dice)),
        };
        EvalReport {
            per_image,
            aggregate,
        }
    }

    /// Plain-text table, percentages with two decimals.
    pub fn table(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
        }
        let mut out = format!(
            "{:<24} {:>8} {:>8} {:>8} {:>11}\n",
            "image", "Dice", "F-score", "AJI", "Object Dice"
        );
        let rows = self
            .per_image
            .iter()
            .map(|m| (m.id.as_str(), m.dice, m.fscore, m.aji, m.object_dice))
            .chain(std::iter::once((
                "mean",
                self.aggregate.dice,
                self.aggregate.fscore,
                self.aggregate.aji,
                self.aggregate.object_dice,
            )));
        for (id, d, f, a, o) in rows {
            out.push_str(&format!(
                "{:<24} {:>8} {:>8} {:>8} {:>11}\n",
                id,
                cell(d),
                cell(f),
                cell(a),
                cell(o)
            ));
        }
        out
    }

    /// `id,dice,fscore,aji,object_dice`; absent values are empty fields.
    pub fn per_image_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(String::new, |v| format!("{v}"))
        }
        let mut out = String::from("id,dice,fscore,aji,object_dice\n");
        for m in &self.per_image {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.id,
                cell(m.dice),
                cell(m.fscore),
                cell(m.aji),
                cell(m.object_dice)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bitmap(rows: &[&str]) -> Bitmap {
        let h = rows.len();
        let w = rows[0].len();
        Grid::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    fn instances(rows: &[&str]) -> InstanceMap {
        let h = rows.len();
        let w = rows[0].len();
        InstanceMap::new(Grid::from_fn(w, h, |x, y| {
            let c = rows[y].as_bytes()[x];
            if c == b'.' { 0 } else { (c - b'0') as u32 }
        }))
    }

    #[test]
    fn dice_cases() {
        let a = bitmap(&["##..", "##.."]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = bitmap(&["..##", "..##"]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = bitmap(&[".##.", ".##."]);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let e = bitmap(&["....", "...."]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &bitmap(&["##"])).is_err());
    }

    #[test]
    fn fscore_cases() {
        let gt = bitmap(&["##..", "##.."]);
        assert_eq!(pixel_fscore(&gt, &gt).unwrap(), 1.0);
        assert_eq!(pixel_fscore(&bitmap(&["....", "...."]), &gt).unwrap(), 0.0);
        // TP=2, FP=2, FN=2
        let pred = bitmap(&[".##.", ".##."]);
        assert!((pixel_fscore(&pred, &gt).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn labeling_connectivity() {
        assert_eq!(label_instances(&bitmap(&["...", "..."]), Connectivity::Eight).num_instances(), 0);
        let diag = bitmap(&["#..", ".#.", "..."]);
        assert_eq!(label_instances(&diag, Connectivity::Eight).num_instances(), 1);
        assert_eq!(label_instances(&diag, Connectivity::Four).num_instances(), 2);
        let two = bitmap(&["##...", "##..#", "....#"]);
        let l = label_instances(&two, Connectivity::Eight);
        assert_eq!(l.ids(), vec![1, 2]);
        assert_eq!(l.labels()[(0, 0)], 1);
        assert_eq!(l.labels()[(4, 2)], 2);
    }

    #[test]
    fn aji_fixtures() {
        let gt = instances(&["11..", "11..", "...."]);
        assert_eq!(aji(&gt, &gt).unwrap(), 1.0);
        let far = instances(&["....", "....", ".222"]);
        assert_eq!(aji(&far, &gt).unwrap(), 0.0);
        // pred overlaps 2 of the 4 gt pixels and has 2 outside: I=2, U=6
        let half = instances(&[".33.", ".33.", "...."]);
        assert!((aji(&half, &gt).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn aji_tie_breaks_to_lowest_pred_id() {
        // Both preds have Jaccard 1/2 against gt; pred 2 gets matched, pred 5 is unmatched.
        let gt = instances(&["11", "11"]);
        let pred = instances(&["52", "52"]);
        // match id 2: I=2, U=4; unmatched pred 5 adds 2: 2/6
        assert!((aji(&pred, &gt).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn object_dice_fixtures() {
        let gt = instances(&["1111", "1111", "....", "...."]);
        assert_eq!(object_dice(&gt, &gt).unwrap(), 1.0);
        let far = instances(&["....", "....", "2222", "2222"]);
        assert_eq!(object_dice(&far, &gt).unwrap(), 0.0);
        let shifted = instances(&["....", "2222", "2222", "...."]);
        assert!((object_dice(&shifted, &gt).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_maps() {
        let e = instances(&["..", ".."]);
        let one = instances(&["1.", ".."]);
        assert_eq!(aji(&e, &e).unwrap(), 1.0);
        assert_eq!(object_dice(&e, &e).unwrap(), 1.0);
        assert_eq!(aji(&e, &one).unwrap(), 0.0);
        assert_eq!(object_dice(&one, &e).unwrap(), 0.0);
    }

    #[test]
    fn report_aggregates_present_values() {
        let r = EvalReport::new(vec![
            ImageMetrics { id: "a".into(), dice: Some(0.5), fscore: Some(1.0), aji: None, object_dice: None },
            ImageMetrics { id: "b".into(), dice: Some(1.0), fscore: Some(0.0), aji: Some(0.3), object_dice: None },
        ]);
        assert_eq!(r.aggregate.dice, Some(0.75));
        assert_eq!(r.aggregate.aji, Some(0.3));
        assert_eq!(r.aggregate.object_dice, None);
        assert!(r.per_image_csv().starts_with("id,dice"));
        assert!(r.table().contains("mean"));
    }
}
