//! Box geometry, detections, and the overlap measures used by every stage.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned image box in top-left / width / height form (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Kalman measurement space: center, aspect ratio `w / h`, height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Xyah {
    pub cx: f64,
    pub cy: f64,
    pub aspect: f64,
    pub h: f64,
}

impl Xyah {
    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.aspect, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Xyah {
            cx: a[0],
            cy: a[1],
            aspect: a[2],
            h: a[3],
        }
    }
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn has_positive_area(&self) -> bool {
        self.w > 0.0 && self.h > 0.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn to_tlbr(&self) -> [f64; 4] {
        [self.x, self.y, self.right(), self.bottom()]
    }

    pub fn from_tlbr(tlbr: [f64; 4]) -> Self {
        BoundingBox::new(tlbr[0], tlbr[1], tlbr[2] - tlbr[0], tlbr[3] - tlbr[1])
    }

    pub fn to_xyah(&self) -> Result<Xyah> {
        if self.h.is_nan() || self.h <= 0.0 {
            return Err(Error::Domain(format!(
                "box height must be positive, got {}",
                self.h
            )));
        }
        let (cx, cy) = self.center();
        Ok(Xyah {
            cx,
            cy,
            aspect: self.w / self.h,
            h: self.h,
        })
    }

    pub fn from_xyah(m: Xyah) -> Self {
        let w = m.aspect * m.h;
        BoundingBox::new(m.cx - w / 2.0, m.cy - m.h / 2.0, w, m.h)
    }

    fn intersection(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Overlap without the positive-area check; degenerate boxes give 0.
    pub(crate) fn overlap(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).min(1.0)
        }
    }
}

/// Intersection over union. Boxes that only share an edge have IoU 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    for bx in [a, b] {
        if !bx.has_positive_area() {
            return Err(Error::Domain(format!("box {bx:?} has non-positive area")));
        }
    }
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / (a.area() + b.area() - inter)).min(1.0))
}

/// Appearance embedding. Cheap to clone: detections, galleries and track
/// histories share one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Arc<[f32]>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Self {
        Embedding(values.into())
    }

    /// Scale to unit L2 norm. A zero vector is returned unchanged.
    pub fn normalized(values: Vec<f32>) -> Self {
        let norm = values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Embedding::new(values);
        }
        Embedding::new(
            values
                .into_iter()
                .map(|v| (v as f64 / norm) as f32)
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn squared_l2(&self, other: &Embedding) -> f64 {
        squared_l2_f32(&self.0, &other.0)
    }

    pub fn l2(&self, other: &Embedding) -> f64 {
        self.squared_l2(other).sqrt()
    }

    /// `1 - cos(self, other)`; 1 when either vector is zero.
    pub fn cosine_distance(&self, other: &Embedding) -> f64 {
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&a, &b) in self.0.iter().zip(other.0.iter()) {
            let (a, b) = (a as f64, b as f64);
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if na == 0.0 || nb == 0.0 {
            return 1.0;
        }
        1.0 - dot / (na.sqrt() * nb.sqrt())
    }
}

pub(crate) fn squared_l2_f32(a: &[f32], b: &[f32]) -> f64 {
    // Eight independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            let d = pa[k] - pb[k];
            acc[k] += d * d;
        }
    }
    let mut total: f64 = acc.iter().map(|&v| v as f64).sum();
    for k in chunks * 8..a.len().min(b.len()) {
        let d = a[k] as f64 - b[k] as f64;
        total += d * d;
    }
    total
}

impl Serialize for Embedding {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_ref().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vec::<f32>::deserialize(d).map(Embedding::new)
    }
}

/// One detector output on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// 0 = person.
    pub class_id: u32,
    pub embedding: Option<Embedding>,
}

impl Detection {
    pub fn new(frame: u64, bbox: BoundingBox, confidence: f64) -> Self {
        Detection {
            frame,
            bbox,
            confidence,
            class_id: 0,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Embedding) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = class_id;
        self
    }
}

/// Greedy non-maximum suppression, run independently per class.
///
/// Detections are visited in descending confidence (input order breaks ties);
/// a detection is kept unless a kept detection of the same class overlaps it
/// with IoU above `overlap_threshold`. Boxes without positive area are
/// dropped. The result is in descending-confidence order.
pub fn nms(dets: &[Detection], overlap_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].bbox.has_positive_area())
        .collect();
    // Stable sort keeps input order among equal confidences.
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == dets[i].class_id
                && dets[k].bbox.overlap(&dets[i].bbox) > overlap_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)).unwrap(), 0.0);
        // Intersection 50, union 150.
        let v = iou(&a, &bx(5.0, 0.0, 10.0, 10.0)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn iou_edge_contact_is_zero() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &bx(10.0, 0.0, 10.0, 10.0)).unwrap(), 0.0);
    }

    #[test]
    fn iou_rejects_degenerate() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert!(matches!(
            iou(&a, &bx(0.0, 0.0, 0.0, 5.0)),
            Err(Error::Domain(_))
        ));
        assert!(iou(&bx(0.0, 0.0, 3.0, -1.0), &a).is_err());
    }

    #[test]
    fn xyah_examples() {
        assert_eq!(
            bx(0.0, 0.0, 10.0, 10.0).to_xyah().unwrap().to_array(),
            [5.0, 5.0, 1.0, 10.0]
        );
        assert_eq!(
            bx(10.0, 20.0, 4.0, 8.0).to_xyah().unwrap().to_array(),
            [12.0, 24.0, 0.5, 8.0]
        );
        let b = bx(3.0, 7.0, 5.0, 2.0);
        assert_eq!(BoundingBox::from_xyah(b.to_xyah().unwrap()), b);
        assert!(bx(0.0, 0.0, 1.0, 0.0).to_xyah().is_err());
    }

    fn det(x: f64, conf: f64) -> Detection {
        Detection::new(0, bx(x, 0.0, 10.0, 10.0), conf)
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.4).is_empty());

        // Shift of 10/9 px on a 10 px box: IoU = 8.888/11.111 = 0.8.
        let a = det(0.0, 0.7);
        let b = det(10.0 / 9.0, 0.9);
        assert!((iou(&a.bbox, &b.bbox).unwrap() - 0.8).abs() < 1e-9);
        let kept = nms(&[a, b.clone()], 0.4);
        assert_eq!(kept, vec![b]);

        let far = det(100.0, 0.5);
        let kept = nms(&[det(0.0, 0.6), far.clone()], 0.4);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[1], far);
    }

    #[test]
    fn nms_is_per_class_and_breaks_ties_by_input_order() {
        let a = det(0.0, 0.8);
        let b = det(1.0, 0.8).with_class(1);
        assert_eq!(nms(&[a.clone(), b.clone()], 0.4).len(), 2);

        let c = det(1.0, 0.8);
        assert_eq!(nms(&[a.clone(), c.clone()], 0.4), vec![a.clone()]);
        assert_eq!(nms(&[c.clone(), a], 0.4), vec![c]);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-1e4..1e4f64, -1e4..1e4f64, 0.1..1e4f64, 0.1..1e4f64)
            .prop_map(|(x, y, w, h)| bx(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_reflexive(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            // right() - x need not equal w exactly.
            prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            let v = iou(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn conversions_round_trip(b in arb_box()) {
            let back = BoundingBox::from_xyah(b.to_xyah().unwrap());
            let back2 = BoundingBox::from_tlbr(b.to_tlbr());
            for (p, q) in [(back, b), (back2, b)] {
                prop_assert!((p.x - q.x).abs() <= 1e-9 * q.x.abs().max(1.0));
                prop_assert!((p.y - q.y).abs() <= 1e-9 * q.y.abs().max(1.0));
                prop_assert!((p.w - q.w).abs() <= 1e-9 * q.w.max(1.0));
                prop_assert!((p.h - q.h).abs() <= 1e-9 * q.h.max(1.0));
            }
        }

        #[test]
        fn nms_keeps_best_and_respects_threshold(
            boxes in prop::collection::vec((arb_box(), 0.0..1.0f64, 0u32..2), 0..25),
            thr in 0.0..1.0f64,
        ) {
            let dets: Vec<Detection> = boxes
                .iter()
                .map(|&(b, c, k)| Detection::new(0, b, c).with_class(k))
                .collect();
            let kept = nms(&dets, thr);
            for w in kept.windows(2) {
                prop_assert!(w[0].confidence >= w[1].confidence);
            }
            for (i, p) in kept.iter().enumerate() {
                prop_assert!(dets.contains(p));
                for q in &kept[i + 1..] {
                    if p.class_id == q.class_id {
                        prop_assert!(iou(&p.bbox, &q.bbox).unwrap() <= thr);
                    }
                }
            }
            for class in 0..2 {
                let best = dets.iter().filter(|d| d.class_id == class)
                    .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(std::cmp::Ordering::Greater));
                if let Some(best) = best {
                    prop_assert!(kept.contains(best));
                }
            }
        }
    }
}
