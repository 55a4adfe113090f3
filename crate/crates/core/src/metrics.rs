//! Pixel and object level change-detection metrics.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn same_shape(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.dims() == gt.dims() {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dims(),
            gt.dims()
        )))
    }
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<Confusion> {
    same_shape(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    Ok(iou_from(&c))
}

fn iou_from(c: &Confusion) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_)
}

/// `num / den`, or 1 when there is nothing to count.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall)`, each 1 when its denominator is zero.
pub fn precision_recall(c: &Confusion) -> (f64, f64) {
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

/// 8-connected regions of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Per pixel: 0 for background, else the 1-based region label.
    pub labels: Vec<u32>,
    /// Pixel count of region `k` at index `k - 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// Labels regions in scanline order of their first pixel.
pub fn connected_components(mask: &Mask) -> Components {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data()[j] && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

/// Matched-object counts behind object precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObjectCounts {
    pub matches: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl ObjectCounts {
    pub fn precision_recall(&self) -> (f64, f64) {
        (ratio(self.matches, self.predicted), ratio(self.matches, self.truth))
    }
}

impl std::ops::AddAssign for ObjectCounts {
    fn add_assign(&mut self, o: Self) {
        self.matches += o.matches;
        self.predicted += o.predicted;
        self.truth += o.truth;
    }
}

/// Greedy one-to-one matching of predicted to true components, taking pairs
/// in descending IoU order; a pair matches when its IoU reaches `threshold`.
pub fn object_counts(pred: &Mask, gt: &Mask, threshold: f64) -> Result<ObjectCounts> {
    same_shape(pred, gt)?;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Contract(format!("IoU threshold {threshold} outside (0, 1]")));
    }
    let (pc, gc) = (connected_components(pred), connected_components(gt));
    Ok(match_components(&pc, &gc, threshold))
}

pub fn match_components(pc: &Components, gc: &Components, threshold: f64) -> ObjectCounts {
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pc.labels.iter().zip(&gc.labels) {
        if p != 0 && g != 0 {
            *overlap.entry((p, g)).or_default() += 1;
        }
    }
    let mut pairs: Vec<(f64, u32, u32)> = overlap
        .into_iter()
        .map(|((p, g), inter)| {
            let union = pc.sizes[p as usize - 1] + gc.sizes[g as usize - 1] - inter;
            (inter as f64 / union as f64, p, g)
        })
        .filter(|&(v, _, _)| v >= threshold)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pc.count() + 1];
    let mut used_g = vec![false; gc.count() + 1];
    let mut matches = 0;
    for (_, p, g) in pairs {
        if !used_p[p as usize] && !used_g[g as usize] {
            used_p[p as usize] = true;
            used_g[g as usize] = true;
            matches += 1;
        }
    }
    ObjectCounts {
        matches,
        predicted: pc.count() as u64,
        truth: gc.count() as u64,
    }
}

/// Object-level `(precision, recall)` at an IoU threshold.
pub fn object_pr(pred: &Mask, gt: &Mask, threshold: f64) -> Result<(f64, f64)> {
    Ok(object_counts(pred, gt, threshold)?.precision_recall())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub id: String,
    pub confusion: Confusion,
    pub iou: f64,
    pub objects: ObjectCounts,
}

/// Dataset-level metrics. Pixel precision/recall come from the summed
/// confusion, IoU is the mean of per-sample IoUs, and object precision/recall
/// pool matches and component counts over all samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<SampleRow>,
    /// Samples that could not be evaluated, with the reason.
    pub failures: Vec<(String, String)>,
    pub iou_threshold: f64,
    pub total: Confusion,
    pub objects: ObjectCounts,
    pub mean_iou: f64,
    pub pixel_precision: f64,
    pub pixel_recall: f64,
    pub object_precision: f64,
    pub object_recall: f64,
}

impl EvalReport {
    pub fn new(iou_threshold: f64) -> Self {
        Self {
            rows: Vec::new(),
            failures: Vec::new(),
            iou_threshold,
            total: Confusion::default(),
            objects: ObjectCounts::default(),
            mean_iou: 1.0,
            pixel_precision: 1.0,
            pixel_recall: 1.0,
            object_precision: 1.0,
            object_recall: 1.0,
        }
    }

    pub fn add(&mut self, id: impl Into<String>, pred: &Mask, gt: &Mask) -> Result<()> {
        let c = confusion(pred, gt)?;
        let objects = object_counts(pred, gt, self.iou_threshold)?;
        self.rows.push(SampleRow {
            id: id.into(),
            confusion: c,
            iou: iou_from(&c),
            objects,
        });
        self.refresh();
        Ok(())
    }

    pub fn add_failure(&mut self, id: impl Into<String>, reason: impl Into<String>) {
        self.failures.push((id.into(), reason.into()));
    }

    fn refresh(&mut self) {
        self.total = Confusion::default();
        self.objects = ObjectCounts::default();
        for r in &self.rows {
            self.total += r.confusion;
            self.objects += r.objects;
        }
        self.mean_iou = if self.rows.is_empty() {
            1.0
        } else {
            self.rows.iter().map(|r| r.iou).sum::<f64>() / self.rows.len() as f64
        };
        (self.pixel_precision, self.pixel_recall) = precision_recall(&self.total);
        (self.object_precision, self.object_recall) = self.objects.precision_recall();
    }

    pub fn header() -> &'static str {
        "id\ttp\tfp\tfn\ttn\tiou\tprecision\trecall\tobject_precision\tobject_recall"
    }

    /// The aggregate row as written at the end of the TSV.
    pub fn aggregate_row(&self) -> String {
        let c = self.total;
        format!(
            "ALL\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            self.mean_iou,
            self.pixel_precision,
            self.pixel_recall,
            self.object_precision,
            self.object_recall
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::header());
        for r in &self.rows {
            let c = r.confusion;
            let (p, rc) = precision_recall(&c);
            let (op, or) = r.objects.precision_recall();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.id, c.tp, c.fp, c.fn_, c.tn, r.iou, p, rc, op, or
            );
        }
        out.push_str(&self.aggregate_row());
        out.push('\n');
        out
    }
}
