//! Seeded synthetic multi-camera scenarios with ground truth.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded with
//! `seed` and split into independent streams: stream 0 draws the identity
//! embeddings, stream `1 + camera` drives everything in that camera. The
//! generated data therefore depends only on the config, not on platform or
//! on how many cameras are generated in parallel.
//!
//! People move on straight constant-velocity paths that stay inside the
//! image. Each emitted detection is the truth box plus Gaussian jitter, with
//! confidence uniform in `[0.5, 1.0]` and embedding
//! `normalize(ground + N(0, (σ/√D)² I))`, so `σ` is the expected norm of the
//! embedding noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection, Embedding};
use crate::metrics::TruthObservation;

const MAX_SEPARATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    pub camera: u32,
    pub start_frame: u64,
    /// Exclusive.
    pub end_frame: u64,
    /// Truth boxes whose center falls inside this region emit no detection.
    pub region: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub cameras: u32,
    pub identities: u32,
    pub frames: u64,
    pub image_width: f64,
    pub image_height: f64,
    pub embedding_dim: usize,
    pub embedding_noise_sigma: f64,
    pub identity_min_separation: f64,
    pub miss_prob: f64,
    /// Expected false-positive detections per frame and camera.
    pub false_positive_rate: f64,
    pub occlusions: Vec<Occlusion>,
    /// Per-frame Gaussian jitter (pixels) on detection position and size.
    pub jitter_sigma: f64,
    /// Probability that a given identity appears in a given camera. Every
    /// identity appears in at least one camera.
    pub presence_prob: f64,
    /// Cameras with global motion: a shared random-walk offset is added to
    /// all boxes of the camera each frame; the value is the step sigma.
    pub global_motion: Vec<(u32, f64)>,
    pub min_box_width: f64,
    pub max_box_width: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            cameras: 3,
            identities: 10,
            frames: 300,
            image_width: 1920.0,
            image_height: 1080.0,
            embedding_dim: 512,
            embedding_noise_sigma: 0.0,
            identity_min_separation: 1.0,
            miss_prob: 0.0,
            false_positive_rate: 0.0,
            occlusions: Vec::new(),
            jitter_sigma: 0.0,
            presence_prob: 1.0,
            global_motion: Vec::new(),
            min_box_width: 70.0,
            max_box_width: 130.0,
        }
    }
}

/// Box height is drawn as width times a factor in this range.
const HEIGHT_FACTOR: (f64, f64) = (2.0, 2.8);
/// Maximum absolute global-motion offset, in pixels.
const GLOBAL_MOTION_LIMIT: f64 = 40.0;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.identities < 1 || self.cameras < 1 {
            return fail("identities and cameras must be >= 1".into());
        }
        if self.embedding_dim < 1 {
            return fail("embedding_dim must be >= 1".into());
        }
        if self.identity_min_separation.is_nan() || self.identity_min_separation <= 0.0 {
            return fail("identity_min_separation must be > 0".into());
        }
        // Unit vectors are at most 2 apart; in one dimension only two exist.
        if self.identity_min_separation > 2.0 || (self.embedding_dim == 1 && self.identities > 2) {
            return fail(format!(
                "cannot place {} unit embeddings of dimension {} at separation {}",
                self.identities, self.embedding_dim, self.identity_min_separation
            ));
        }
        for (name, p) in [
            ("miss_prob", self.miss_prob),
            ("presence_prob", self.presence_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1]"));
            }
        }
        if self.embedding_noise_sigma < 0.0
            || self.jitter_sigma < 0.0
            || self.false_positive_rate < 0.0
        {
            return fail("noise parameters must be >= 0".into());
        }
        let max_h = self.max_box_width * HEIGHT_FACTOR.1;
        if !(self.min_box_width > 0.0 && self.min_box_width <= self.max_box_width)
            || self.max_box_width + 2.0 * GLOBAL_MOTION_LIMIT >= self.image_width
            || max_h + 2.0 * GLOBAL_MOTION_LIMIT >= self.image_height
        {
            return fail("box size range does not fit the image".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTruth {
    pub camera_id: u32,
    pub observations: Vec<TruthObservation>,
    /// Parallel to `observations`.
    pub occluded: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub identities: Vec<u32>,
    pub ground_embeddings: Vec<Vec<f32>>,
    pub cameras: Vec<CameraTruth>,
}

impl GroundTruth {
    /// Identities seen in at least one camera.
    pub fn present_identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .cameras
            .iter()
            .flat_map(|c| c.observations.iter().map(|o| o.identity))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn camera(&self, camera_id: u32) -> Option<&CameraTruth> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraStream {
    pub camera_id: u32,
    pub detections: Vec<Detection>,
    /// Source identity of each detection; `None` for false positives.
    pub labels: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
    pub streams: Vec<CameraStream>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn ground_embeddings(cfg: &ScenarioConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream_rng(cfg.seed, 0);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cfg.identities as usize);
    for _ in 0..cfg.identities {
        let mut placed = false;
        for _ in 0..MAX_SEPARATION_ATTEMPTS {
            let cand = random_unit(&mut rng, cfg.embedding_dim);
            let ok = out.iter().all(|e| {
                e.iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= cfg.identity_min_separation
            });
            if ok {
                out.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place {} embeddings at separation {} in dimension {}",
                cfg.identities, cfg.identity_min_separation, cfg.embedding_dim
            )));
        }
    }
    Ok(out)
}

struct Path {
    identity: u32,
    start: (f64, f64),
    velocity: (f64, f64),
    w: f64,
    h: f64,
}

impl Path {
    fn bbox_at(&self, frame: u64, offset: (f64, f64)) -> BoundingBox {
        let t = frame as f64;
        let cx = self.start.0 + self.velocity.0 * t + offset.0;
        let cy = self.start.1 + self.velocity.1 * t + offset.1;
        BoundingBox::new(cx - self.w / 2.0, cy - self.h / 2.0, self.w, self.h)
    }
}

fn clamp_box(b: BoundingBox, width: f64, height: f64) -> BoundingBox {
    let w = b.w.clamp(1.0, width);
    let h = b.h.clamp(1.0, height);
    BoundingBox::new(b.x.clamp(0.0, width - w), b.y.clamp(0.0, height - h), w, h)
}

fn noisy_embedding(rng: &mut ChaCha8Rng, ground: &[f64], sigma: f64) -> Embedding {
    let per_component = sigma / (ground.len() as f64).sqrt();
    let v: Vec<f32> = ground
        .iter()
        .map(|&g| {
            let n: f64 = StandardNormal.sample(rng);
            (g + per_component * n) as f32
        })
        .collect();
    if sigma == 0.0 {
        Embedding::new(v)
    } else {
        Embedding::normalized(v)
    }
}

/// Generate a scenario. Deterministic in `cfg`.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let grounds = ground_embeddings(cfg)?;
    let dim = cfg.embedding_dim;

    // Presence matrix, from its own stream so it is independent of camera count changes.
    let mut presence_rng = stream_rng(cfg.seed, u64::MAX);
    let mut present = vec![vec![false; cfg.identities as usize]; cfg.cameras as usize];
    for id in 0..cfg.identities as usize {
        let mut any = false;
        for row in present.iter_mut() {
            row[id] = presence_rng.random_bool(cfg.presence_prob);
            any |= row[id];
        }
        if !any {
            let cam = presence_rng.random_range(0..cfg.cameras as usize);
            present[cam][id] = true;
        }
    }

    let mut cameras = Vec::new();
    let mut streams = Vec::new();
    for cam in 0..cfg.cameras {
        let mut rng = stream_rng(cfg.seed, 1 + cam as u64);
        let margin = GLOBAL_MOTION_LIMIT;
        let paths: Vec<Path> = (0..cfg.identities)
            .filter(|&id| present[cam as usize][id as usize])
            .map(|identity| {
                let w = rng.random_range(cfg.min_box_width..=cfg.max_box_width);
                let h = w * rng.random_range(HEIGHT_FACTOR.0..=HEIGHT_FACTOR.1);
                let (lo_x, hi_x) = (w / 2.0 + margin, cfg.image_width - w / 2.0 - margin);
                let (lo_y, hi_y) = (h / 2.0 + margin, cfg.image_height - h / 2.0 - margin);
                let start = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
                let end = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
                let span = cfg.frames.saturating_sub(1).max(1) as f64;
                Path {
                    identity,
                    start,
                    velocity: ((end.0 - start.0) / span, (end.1 - start.1) / span),
                    w,
                    h,
                }
            })
            .collect();

        let motion_sigma = cfg
            .global_motion
            .iter()
            .find(|(c, _)| *c == cam)
            .map(|&(_, s)| s)
            .unwrap_or(0.0);
        let mut offset = (0.0f64, 0.0f64);
        let jitter = Normal::new(0.0, cfg.jitter_sigma).expect("validated sigma");
        let fp_count = (cfg.false_positive_rate > 0.0)
            .then(|| Poisson::new(cfg.false_positive_rate).expect("positive rate"));

        let mut truth = CameraTruth {
            camera_id: cam,
            observations: Vec::new(),
            occluded: Vec::new(),
        };
        let mut stream = CameraStream {
            camera_id: cam,
            detections: Vec::new(),
            labels: Vec::new(),
        };

        for frame in 0..cfg.frames {
            if motion_sigma > 0.0 {
                let step = Normal::new(0.0, motion_sigma).expect("validated sigma");
                offset.0 = (offset.0 + step.sample(&mut rng)).clamp(-margin, margin);
                offset.1 = (offset.1 + step.sample(&mut rng)).clamp(-margin, margin);
            }
            for p in &paths {
                let tb = p.bbox_at(frame, offset);
                let (cx, cy) = tb.center();
                let occluded = cfg.occlusions.iter().any(|o| {
                    o.camera == cam
                        && (o.start_frame..o.end_frame).contains(&frame)
                        && cx >= o.region.x
                        && cx <= o.region.right()
                        && cy >= o.region.y
                        && cy <= o.region.bottom()
                });
                truth.observations.push(TruthObservation {
                    frame,
                    identity: p.identity,
                    bbox: tb,
                });
                truth.occluded.push(occluded);

                // Draw every random quantity regardless of outcome so that
                // streams stay aligned across miss/occlusion settings.
                let missed = rng.random_bool(cfg.miss_prob);
                let noise: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
                let confidence = rng.random_range(0.5..=1.0);
                let emb = noisy_embedding(
                    &mut rng,
                    &grounds[p.identity as usize],
                    cfg.embedding_noise_sigma,
                );
                if occluded || missed {
                    continue;
                }
                let b = clamp_box(
                    BoundingBox::new(
                        tb.x + noise[0],
                        tb.y + noise[1],
                        tb.w + noise[2],
                        tb.h + noise[3],
                    ),
                    cfg.image_width,
                    cfg.image_height,
                );
                stream
                    .detections
                    .push(Detection::new(frame, b, confidence).with_embedding(emb));
                stream.labels.push(Some(p.identity));
            }
            if let Some(pois) = &fp_count {
                let n = pois.sample(&mut rng) as usize;
                for _ in 0..n {
                    let w = rng.random_range(cfg.min_box_width..=cfg.max_box_width);
                    let h = w * rng.random_range(HEIGHT_FACTOR.0..=HEIGHT_FACTOR.1);
                    let b = BoundingBox::new(
                        rng.random_range(0.0..=cfg.image_width - w),
                        rng.random_range(0.0..=cfg.image_height - h),
                        w,
                        h,
                    );
                    let confidence = rng.random_range(0.5..=1.0);
                    let e = random_unit(&mut rng, dim);
                    stream.detections.push(
                        Detection::new(frame, b, confidence).with_embedding(Embedding::new(
                            e.into_iter().map(|x| x as f32).collect(),
                        )),
                    );
                    stream.labels.push(None);
                }
            }
        }
        cameras.push(truth);
        streams.push(stream);
    }

    Ok(Scenario {
        config: cfg.clone(),
        truth: GroundTruth {
            identities: (0..cfg.identities).collect(),
            ground_embeddings: grounds
                .iter()
                .map(|g| g.iter().map(|&x| x as f32).collect())
                .collect(),
            cameras,
        },
        streams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            seed: 42,
            cameras: 2,
            identities: 4,
            frames: 60,
            embedding_dim: 64,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn same_seed_is_identical() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = generate(&ScenarioConfig {
            seed: 43,
            ..small()
        })
        .unwrap();
        assert_ne!(other.streams, generate(&small()).unwrap().streams);
    }

    #[test]
    fn zero_noise_embeddings_equal_ground() {
        let s = generate(&small()).unwrap();
        for st in &s.streams {
            assert_eq!(st.detections.len(), 4 * 60);
            for (d, l) in st.detections.iter().zip(&st.labels) {
                let g = &s.truth.ground_embeddings[l.unwrap() as usize];
                assert_eq!(d.embedding.as_ref().unwrap().as_slice(), g.as_slice());
            }
        }
    }

    #[test]
    fn noisy_embeddings_stay_separated() {
        let cfg = ScenarioConfig {
            identities: 2,
            embedding_noise_sigma: 0.1,
            embedding_dim: 512,
            ..small()
        };
        let s = generate(&cfg).unwrap();
        let mut by_id: Vec<Vec<&Embedding>> = vec![Vec::new(); 2];
        for st in &s.streams {
            for (d, l) in st.detections.iter().zip(&st.labels) {
                by_id[l.unwrap() as usize].push(d.embedding.as_ref().unwrap());
            }
        }
        let spread = by_id
            .iter()
            .flat_map(|g| g.iter().flat_map(move |a| g.iter().map(move |b| a.l2(b))))
            .fold(0.0, f64::max);
        let inter = by_id[0]
            .iter()
            .flat_map(|a| by_id[1].iter().map(move |b| a.l2(b)))
            .fold(f64::INFINITY, f64::min);
        assert!(spread < 0.3, "{spread}");
        assert!(inter > 2.0 * spread, "{inter} vs {spread}");
    }

    #[test]
    fn boxes_stay_in_bounds() {
        let cfg = ScenarioConfig {
            jitter_sigma: 30.0,
            false_positive_rate: 2.0,
            global_motion: vec![(1, 5.0)],
            ..small()
        };
        let s = generate(&cfg).unwrap();
        for st in &s.streams {
            for d in &st.detections {
                let b = d.bbox;
                assert!(b.x >= 0.0 && b.y >= 0.0 && b.w > 0.0 && b.h > 0.0);
                assert!(
                    b.right() <= cfg.image_width + 1e-9 && b.bottom() <= cfg.image_height + 1e-9
                );
                assert!((0.5..=1.0).contains(&d.confidence));
            }
        }
    }

    #[test]
    fn occlusion_suppresses_detections() {
        let cfg = ScenarioConfig {
            occlusions: vec![Occlusion {
                camera: 0,
                start_frame: 10,
                end_frame: 20,
                region: BoundingBox::new(0.0, 0.0, 1920.0, 1080.0),
            }],
            ..small()
        };
        let s = generate(&cfg).unwrap();
        assert!(s.streams[0]
            .detections
            .iter()
            .all(|d| !(10..20).contains(&d.frame)));
        assert_eq!(s.streams[1].detections.len(), 4 * 60);
        assert_eq!(
            s.truth.cameras[0].occluded.iter().filter(|&&o| o).count(),
            40
        );
    }

    #[test]
    fn impossible_separation_is_rejected() {
        let cfg = ScenarioConfig {
            identity_min_separation: 2.5,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = ScenarioConfig {
            embedding_dim: 2,
            identities: 12,
            identity_min_separation: 1.9,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn presence_keeps_every_identity() {
        let cfg = ScenarioConfig {
            presence_prob: 0.2,
            identities: 20,
            ..small()
        };
        let s = generate(&cfg).unwrap();
        assert_eq!(s.truth.present_identities().len(), 20);
    }
}
