//! CSV formats: detections, embedding sidecars, and per-frame tracks.
//!
//! ```text
//! detections:  frame,det_id,x,y,w,h,confidence,class_id
//! embeddings:  frame,det_id,e0,e1,...,e{D-1}
//! tracks:      frame,track_id,x,y,w,h,confidence
//! track embeddings: frame,track_id,e0,...,e{D-1}
//! ```
//!
//! The embedding dimension `D` is declared by the header's column count.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};

use super::fmt_float;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection, Embedding};
use crate::tracker::Tracklet;

pub const DETECTION_HEADER: [&str; 8] = [
    "frame",
    "det_id",
    "x",
    "y",
    "w",
    "h",
    "confidence",
    "class_id",
];
pub const TRACK_HEADER: [&str; 7] = ["frame", "track_id", "x", "y", "w", "h", "confidence"];

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub det_id: u64,
    pub detection: Detection,
}

fn records(
    path: &Path,
    text: &str,
    expected: &[&str],
    prefix_only: bool,
) -> Result<Vec<(u64, StringRecord)>> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let ok = if prefix_only {
        header.len() >= expected.len() && header.iter().zip(expected).all(|(a, b)| a == *b)
    } else {
        header.iter().eq(expected.iter().copied())
    };
    if !ok {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected header {:?}, got {:?}",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &StringRecord,
    idx: usize,
    name: &str,
) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::parse(path, line, format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {name}: {raw:?}")))
}

fn finite(path: &Path, line: u64, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(path, line, format!("{name} must be finite")))
    }
}

pub fn parse_detections(path: &Path, text: &str) -> Result<Vec<DetectionRow>> {
    let mut rows = Vec::new();
    let mut last_frame = 0u64;
    let mut seen = HashSet::new();
    for (line, rec) in records(path, text, &DETECTION_HEADER, false)? {
        let frame: u64 = field(path, line, &rec, 0, "frame")?;
        let det_id: u64 = field(path, line, &rec, 1, "det_id")?;
        let mut nums = [0.0f64; 5];
        for (k, name) in ["x", "y", "w", "h", "confidence"].iter().enumerate() {
            nums[k] = finite(path, line, name, field(path, line, &rec, k + 2, name)?)?;
        }
        let class_id: u32 = field(path, line, &rec, 7, "class_id")?;
        if !(0.0..=1.0).contains(&nums[4]) {
            return Err(Error::parse(
                path,
                line,
                format!("confidence {} outside [0, 1]", nums[4]),
            ));
        }
        if frame < last_frame {
            return Err(Error::parse(
                path,
                line,
                format!("frame {frame} after frame {last_frame}; rows must be sorted"),
            ));
        }
        if !seen.insert((frame, det_id)) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate key ({frame}, {det_id})"),
            ));
        }
        last_frame = frame;
        rows.push(DetectionRow {
            det_id,
            detection: Detection::new(
                frame,
                BoundingBox::new(nums[0], nums[1], nums[2], nums[3]),
                nums[4],
            )
            .with_class(class_id),
        });
    }
    Ok(rows)
}

pub fn serialize_detections(rows: &[DetectionRow]) -> String {
    let mut out = DETECTION_HEADER.join(",");
    out.push('\n');
    for r in rows {
        let d = &r.detection;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            d.frame,
            r.det_id,
            fmt_float(d.bbox.x),
            fmt_float(d.bbox.y),
            fmt_float(d.bbox.w),
            fmt_float(d.bbox.h),
            fmt_float(d.confidence),
            d.class_id
        ));
    }
    out
}

/// Embedding sidecar keyed by `(frame, id)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: BTreeMap<(u64, u64), Embedding>,
}

fn parse_keyed_embeddings(path: &Path, text: &str, id_column: &str) -> Result<EmbeddingTable> {
    let expected = ["frame", id_column];
    let recs = records(path, text, &expected, true)?;
    let header_len = ReaderBuilder::new()
        .from_reader(text.as_bytes())
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .len();
    let dim = header_len - 2;
    if dim == 0 {
        return Err(Error::parse(
            path,
            1,
            "header declares no embedding columns",
        ));
    }
    let mut table = EmbeddingTable {
        dim,
        rows: BTreeMap::new(),
    };
    for (line, rec) in recs {
        if rec.len() != header_len {
            return Err(Error::parse(
                path,
                line,
                format!("expected {header_len} columns, got {}", rec.len()),
            ));
        }
        let frame: u64 = field(path, line, &rec, 0, "frame")?;
        let id: u64 = field(path, line, &rec, 1, id_column)?;
        let values = (2..header_len)
            .map(|k| {
                let v: f32 = field(path, line, &rec, k, "embedding value")?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::parse(path, line, "embedding values must be finite"))
                }
            })
            .collect::<Result<Vec<f32>>>()?;
        if table
            .rows
            .insert((frame, id), Embedding::new(values))
            .is_some()
        {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate key ({frame}, {id})"),
            ));
        }
    }
    Ok(table)
}

fn serialize_keyed_embeddings(
    id_column: &str,
    dim: usize,
    rows: &BTreeMap<(u64, u64), Embedding>,
) -> String {
    let mut out = format!("frame,{id_column}");
    for k in 0..dim {
        out.push_str(&format!(",e{k}"));
    }
    out.push('\n');
    for (&(frame, id), e) in rows {
        out.push_str(&format!("{frame},{id}"));
        for &v in e.as_slice() {
            out.push(',');
            out.push_str(&fmt_float(v as f64));
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(path: &Path, text: &str) -> Result<EmbeddingTable> {
    parse_keyed_embeddings(path, text, "det_id")
}

pub fn serialize_embeddings(table: &EmbeddingTable) -> String {
    serialize_keyed_embeddings("det_id", table.dim, &table.rows)
}

/// Attach embeddings to detections. Every key must match exactly one row on
/// each side.
pub fn join_embeddings(rows: &mut [DetectionRow], table: &EmbeddingTable) -> Result<()> {
    let mut used = 0usize;
    for r in rows.iter_mut() {
        let key = (r.detection.frame, r.det_id);
        let e = table.rows.get(&key).ok_or_else(|| {
            Error::KeyMismatch(format!(
                "detection (frame {}, det_id {}) has no embedding row",
                key.0, key.1
            ))
        })?;
        r.detection.embedding = Some(e.clone());
        used += 1;
    }
    if used != table.rows.len() {
        let keys: HashSet<(u64, u64)> =
            rows.iter().map(|r| (r.detection.frame, r.det_id)).collect();
        let orphan = table
            .rows
            .keys()
            .find(|k| !keys.contains(k))
            .expect("count differs");
        return Err(Error::KeyMismatch(format!(
            "embedding row (frame {}, det_id {}) has no detection",
            orphan.0, orphan.1
        )));
    }
    Ok(())
}

pub fn read_detections(path: &Path, embeddings: Option<&Path>) -> Result<Vec<DetectionRow>> {
    let mut rows = parse_detections(path, &super::read_to_string(path)?)?;
    if let Some(ep) = embeddings {
        let table = parse_embeddings(ep, &super::read_to_string(ep)?)?;
        join_embeddings(&mut rows, &table)?;
    }
    Ok(rows)
}

/// Per-frame rows for a set of tracklets, sorted by `(frame, track_id)`.
pub fn serialize_tracks(tracklets: &[Tracklet]) -> String {
    let mut rows: Vec<(u64, u64, &BoundingBox, f64)> = tracklets
        .iter()
        .flat_map(|t| {
            t.frames
                .iter()
                .zip(&t.boxes)
                .zip(&t.confidences)
                .map(move |((&f, b), &c)| (f, t.track_id, b, c))
        })
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = TRACK_HEADER.join(",");
    out.push('\n');
    for (f, id, b, c) in rows {
        out.push_str(&format!(
            "{f},{id},{},{},{},{},{}\n",
            fmt_float(b.x),
            fmt_float(b.y),
            fmt_float(b.w),
            fmt_float(b.h),
            fmt_float(c)
        ));
    }
    out
}

/// Embedding sidecar for track rows; empty when no tracklet has embeddings.
pub fn serialize_track_embeddings(tracklets: &[Tracklet]) -> Option<String> {
    let dim = tracklets
        .iter()
        .find_map(|t| t.embeddings.first().map(Embedding::dim))?;
    let mut rows = BTreeMap::new();
    for t in tracklets {
        for (&f, e) in t.frames.iter().zip(&t.embeddings) {
            rows.insert((f, t.track_id), e.clone());
        }
    }
    Some(serialize_keyed_embeddings("track_id", dim, &rows))
}

/// Rebuild tracklets from a tracks file and optional embedding sidecar.
pub fn parse_tracks(
    camera_id: u32,
    path: &Path,
    text: &str,
    embeddings: Option<(&Path, &str)>,
) -> Result<Vec<Tracklet>> {
    let mut by_id: BTreeMap<u64, Tracklet> = BTreeMap::new();
    let mut last: Option<(u64, u64)> = None;
    for (line, rec) in records(path, text, &TRACK_HEADER, false)? {
        let frame: u64 = field(path, line, &rec, 0, "frame")?;
        let id: u64 = field(path, line, &rec, 1, "track_id")?;
        let mut nums = [0.0f64; 5];
        for (k, name) in ["x", "y", "w", "h", "confidence"].iter().enumerate() {
            nums[k] = finite(path, line, name, field(path, line, &rec, k + 2, name)?)?;
        }
        if last.is_some_and(|l| (frame, id) <= l) {
            return Err(Error::parse(
                path,
                line,
                "rows must be sorted by (frame, track_id) without duplicates",
            ));
        }
        last = Some((frame, id));
        let t = by_id.entry(id).or_insert_with(|| Tracklet {
            camera_id,
            track_id: id,
            frames: Vec::new(),
            boxes: Vec::new(),
            confidences: Vec::new(),
            embeddings: Vec::new(),
        });
        t.frames.push(frame);
        t.boxes
            .push(BoundingBox::new(nums[0], nums[1], nums[2], nums[3]));
        t.confidences.push(nums[4]);
    }
    if let Some((epath, etext)) = embeddings {
        let table = parse_keyed_embeddings(epath, etext, "track_id")?;
        let mut matched = 0usize;
        for t in by_id.values_mut() {
            for &f in &t.frames {
                let e = table.rows.get(&(f, t.track_id)).ok_or_else(|| {
                    Error::KeyMismatch(format!(
                        "track row (frame {f}, track_id {}) has no embedding row",
                        t.track_id
                    ))
                })?;
                t.embeddings.push(e.clone());
                matched += 1;
            }
        }
        if matched != table.rows.len() {
            let orphan = table
                .rows
                .keys()
                .find(|(f, id)| by_id.get(id).is_none_or(|t| !t.frames.contains(f)))
                .expect("count differs");
            return Err(Error::KeyMismatch(format!(
                "embedding row (frame {}, track_id {}) has no track row",
                orphan.0, orphan.1
            )));
        }
    }
    Ok(by_id.into_values().collect())
}
