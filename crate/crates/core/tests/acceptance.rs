//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use mcmot::assignment::{solve_assignment, CostMatrix, INFEASIBLE};
use mcmot::association::{AssociationMethod, Cluster};
use mcmot::geometry::{BoundingBox, Xyah};
use mcmot::io::results::ClusterRecord;
use mcmot::io::{PipelineConfig, Preset};
use mcmot::kalman::{KalmanFilter, KalmanState, NoiseProfile};
use mcmot::metrics::{count_confusion, id_switches, tracklet_identities};
use mcmot::pipeline::{self, scenario_inputs};
use mcmot::sim::{generate, Scenario, ScenarioConfig};
use mcmot::tracker::Tracklet;
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Limits.
const ASSIGNMENT_CASES: usize = 1000;
const ASSIGNMENT_BUDGET: Duration = Duration::from_secs(5);
const KALMAN_CASES: usize = 1000;
const KALMAN_STEPS: usize = 100;
const KALMAN_REL_TOL: f64 = 1e-9;
const KALMAN_BUDGET: Duration = Duration::from_secs(10);
const ZERO_NOISE_SEEDS: u64 = 20;
const ZERO_NOISE_BUDGET: Duration = Duration::from_secs(30);
const MARGIN_SEEDS: u64 = 20;
const MARGIN_TAUS: [f64; 4] = [0.3, 0.4, 0.5, 0.6];
const MARGIN_D_IN: f64 = 0.2;
const MARGIN_D_OUT: f64 = 1.0;
const NOISE_RUNS: u64 = 100;
const NOISE_PASS_FRACTION: f64 = 0.9;
const THROUGHPUT_FPS: f64 = 500.0;
const SPEEDUP: f64 = 1.8;
const SPEEDUP_MIN_CORES: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---- 1: assignment ----

/// Best (matched count, cost) over every injective partial map rows -> cols,
/// using feasible entries only.
fn brute_force(c: &CostMatrix) -> (usize, f64) {
    fn go(
        c: &CostMatrix,
        r: usize,
        used: &mut Vec<bool>,
        n: usize,
        cost: f64,
        best: &mut (usize, f64),
    ) {
        if r == c.rows() {
            if n > best.0 || (n == best.0 && cost < best.1) {
                *best = (n, cost);
            }
            return;
        }
        go(c, r + 1, used, n, cost, best);
        for col in 0..c.cols() {
            if !used[col] && c.is_feasible(r, col) {
                used[col] = true;
                go(c, r + 1, used, n + 1, cost + c.get(r, col), best);
                used[col] = false;
            }
        }
    }
    let mut best = (0, f64::INFINITY);
    go(c, 0, &mut vec![false; c.cols()], 0, 0.0, &mut best);
    if best.0 == 0 {
        best.1 = 0.0;
    }
    best
}

fn criterion_assignment() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for case in 0..ASSIGNMENT_CASES {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        let p_infeasible = [0.0, 0.2, 0.5][case % 3];
        // Multiples of 1/64 add exactly, so totals can be compared with ==.
        let c = CostMatrix::from_fn(rows, cols, |_, _| {
            if rng.random_bool(p_infeasible) {
                INFEASIBLE
            } else {
                rng.random_range(0..6400) as f64 / 64.0
            }
        });
        let m = solve_assignment(&c);
        let (n, cost) = brute_force(&c);
        let feasible = m.pairs.iter().all(|&(r, col)| c.is_feasible(r, col));
        if !feasible || m.pairs.len() != n || c.total(&m.pairs) != cost {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && t < ASSIGNMENT_BUDGET,
        format!("{ASSIGNMENT_CASES} matrices up to 6x6, {mismatches} mismatches vs brute force, {:.2} s", t.as_secs_f64()),
    )
}

// ---- 2: Kalman ----

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.random_range(20.0..200.0);
    BoundingBox::new(
        rng.random_range(0.0..1800.0),
        rng.random_range(0.0..900.0),
        w,
        w * rng.random_range(1.5..3.0),
    )
}

fn jittered(rng: &mut ChaCha8Rng, z: Xyah, scale: f64) -> Xyah {
    Xyah {
        cx: z.cx + rng.random_range(-scale..scale),
        cy: z.cy + rng.random_range(-scale..scale),
        aspect: (z.aspect + rng.random_range(-0.05..0.05)).max(0.05),
        h: (z.h + rng.random_range(-scale..scale)).max(5.0),
    }
}

fn random_state(kf: &KalmanFilter, rng: &mut ChaCha8Rng) -> KalmanState {
    let mut s = kf.initiate(random_box(rng).to_xyah().unwrap()).unwrap();
    for _ in 0..rng.random_range(0..20) {
        s = kf.predict(&s);
        if rng.random_bool(0.7) {
            let z = jittered(rng, s.measurement(), 5.0);
            s = kf.update(&s, z).unwrap();
        }
    }
    s
}

fn criterion_kalman() -> Outcome {
    let start = Instant::now();
    let kf = KalmanFilter::new(NoiseProfile::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rel = 0.0f64;
    for _ in 0..KALMAN_CASES {
        let s = random_state(&kf, &mut rng);
        let zs: Vec<Xyah> = (0..4)
            .map(|_| jittered(&mut rng, s.measurement(), 40.0))
            .collect();
        let got = kf.gating_distance(&s, &zs).unwrap();
        let (mean, cov) = kf.project(&s);
        let inv = cov.try_inverse().expect("innovation covariance invertible");
        for (z, g) in zs.iter().zip(&got) {
            let d = nalgebra::Vector4::from(z.to_array()) - mean;
            let oracle = (d.transpose() * inv * d)[0];
            worst_rel = worst_rel.max((g - oracle).abs() / oracle.abs().max(1e-300));
        }
    }

    let mut bad_states = 0;
    for seed in 0..KALMAN_CASES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let mut s = kf
            .initiate(random_box(&mut rng).to_xyah().unwrap())
            .unwrap();
        let mut ok = true;
        for _ in 0..KALMAN_STEPS {
            s = if rng.random_bool(0.5) {
                kf.predict(&s)
            } else {
                let z = jittered(&mut rng, s.measurement(), 10.0);
                kf.update(&s, z).unwrap()
            };
            let p = &s.covariance;
            let scale = p.amax();
            let asym = (p - p.transpose()).amax();
            let min_eig = SymmetricEigen::new(*p).eigenvalues.min();
            if asym > 1e-12 * scale || min_eig < -1e-9 * scale {
                ok = false;
            }
        }
        bad_states += usize::from(!ok);
    }
    let t = start.elapsed();
    outcome(
        worst_rel <= KALMAN_REL_TOL && bad_states == 0 && t < KALMAN_BUDGET,
        format!(
            "gating vs explicit inverse max rel err {worst_rel:.1e} (tol {KALMAN_REL_TOL:.0e}), \
             {bad_states}/{KALMAN_CASES} runs lost symmetry/PSD over {KALMAN_STEPS} steps, {:.2} s",
            t.as_secs_f64()
        ),
    )
}

// ---- shared helpers ----

fn run(
    s: &Scenario,
    cfg: &PipelineConfig,
    methods: &[AssociationMethod],
    threads: usize,
) -> mcmot::io::ResultsFile {
    pipeline::run_scenario(s, cfg, methods, threads).unwrap().0
}

fn truth_of(s: &Scenario, cam: u32) -> &[mcmot::metrics::TruthObservation] {
    &s.truth.camera(cam).unwrap().observations
}

/// `(camera, track) -> identity` for tracklets that overlap truth.
fn labels(s: &Scenario, per_camera: &BTreeMap<u32, Vec<Tracklet>>) -> BTreeMap<(u32, u64), u32> {
    let mut out = BTreeMap::new();
    for (&cam, ts) in per_camera {
        for (track, (id, _)) in tracklet_identities(ts, truth_of(s, cam)) {
            out.insert((cam, track), id);
        }
    }
    out
}

/// Every cluster is one identity, and every identity is exactly one cluster.
fn exact_recovery(
    clusters: &[Cluster],
    labels: &BTreeMap<(u32, u64), u32>,
    identities: usize,
) -> bool {
    let mut seen = BTreeSet::new();
    for c in clusters {
        let ids: BTreeSet<Option<&u32>> = c.members.iter().map(|k| labels.get(k)).collect();
        if ids.len() != 1 {
            return false;
        }
        match ids.into_iter().next().unwrap() {
            Some(id) if seen.insert(*id) => {}
            _ => return false,
        }
    }
    seen.len() == identities
}

// ---- 3: zero noise ----

fn criterion_zero_noise() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let mut failures = Vec::new();
    for seed in 0..ZERO_NOISE_SEEDS {
        let s = generate(&ScenarioConfig {
            seed,
            cameras: 3,
            identities: 10,
            frames: 300,
            identity_min_separation: 1.0,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let runs = pipeline::track_cameras(&scenario_inputs(&s), &cfg, 1).unwrap();
        let switches: usize = runs
            .iter()
            .map(|r| id_switches(&r.tracklets, truth_of(&s, r.camera_id)))
            .sum();
        let per_camera: BTreeMap<u32, Vec<Tracklet>> = runs
            .into_iter()
            .map(|r| (r.camera_id, r.tracklets))
            .collect();
        let results =
            pipeline::associate(&per_camera, &cfg, &[AssociationMethod::Euclidean], 0).unwrap();
        if results.unique_count != 10 || switches != 0 {
            failures.push(format!(
                "seed {seed}: count {} switches {switches}",
                results.unique_count
            ));
        }
    }
    let t = start.elapsed();
    outcome(
        failures.is_empty() && t < ZERO_NOISE_BUDGET,
        format!(
            "{ZERO_NOISE_SEEDS} seeds, 3 cameras x 10 identities x 300 frames, tau 0.5: {} failing {:?}, {:.2} s",
            failures.len(),
            failures,
            t.as_secs_f64()
        ),
    )
}

// ---- 4: margins ----

fn mean_embeddings(per_camera: &BTreeMap<u32, Vec<Tracklet>>) -> BTreeMap<(u32, u64), Vec<f64>> {
    per_camera
        .values()
        .flatten()
        .map(|t| (t.key(), mcmot::association::mean_embedding(t).unwrap()))
        .collect()
}

/// Largest same-identity and smallest cross-identity distance between
/// tracklet mean embeddings.
fn margins(
    means: &BTreeMap<(u32, u64), Vec<f64>>,
    labels: &BTreeMap<(u32, u64), u32>,
) -> (f64, f64) {
    let items: Vec<_> = means.iter().collect();
    let (mut d_in, mut d_out) = (0.0f64, f64::INFINITY);
    for (i, (ka, a)) in items.iter().enumerate() {
        for (kb, b) in &items[i + 1..] {
            let d = mcmot::association::l2(a, b);
            if labels.get(ka) == labels.get(kb) {
                d_in = d_in.max(d);
            } else {
                d_out = d_out.min(d);
            }
        }
    }
    (d_in, d_out)
}

fn criterion_margins() -> Outcome {
    let start = Instant::now();
    let mut cfg = PipelineConfig::default();
    cfg.tracker.max_appearance_distance = 0.5;
    let mut failures = Vec::new();
    let mut unmet = Vec::new();
    let (mut worst_in, mut worst_out) = (0.0f64, f64::INFINITY);
    for seed in 0..MARGIN_SEEDS {
        let s = generate(&ScenarioConfig {
            seed: 500 + seed,
            cameras: 3,
            identities: 8,
            frames: 200,
            embedding_noise_sigma: 0.2,
            identity_min_separation: 1.2,
            jitter_sigma: 1.0,
            miss_prob: 0.05,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let runs = pipeline::track_cameras(&scenario_inputs(&s), &cfg, 1).unwrap();
        let per_camera: BTreeMap<u32, Vec<Tracklet>> = runs
            .into_iter()
            .map(|r| (r.camera_id, r.tracklets))
            .collect();
        let labels = labels(&s, &per_camera);
        let (d_in, d_out) = margins(&mean_embeddings(&per_camera), &labels);
        worst_in = worst_in.max(d_in);
        worst_out = worst_out.min(d_out);
        let all_labelled = per_camera
            .values()
            .flatten()
            .all(|t| labels.contains_key(&t.key()));
        if d_in > MARGIN_D_IN || d_out < MARGIN_D_OUT || !all_labelled {
            unmet.push(seed);
            continue;
        }
        let identities = s.truth.present_identities().len();
        for &tau in &MARGIN_TAUS {
            for method in [
                AssociationMethod::Euclidean,
                AssociationMethod::EuclideanVoting,
            ] {
                let mut c = cfg.clone();
                c.association.threshold = tau;
                let r = pipeline::associate(&per_camera, &c, &[method], 0).unwrap();
                let clusters: Vec<Cluster> =
                    r.clusters.iter().map(ClusterRecord::to_cluster).collect();
                if !exact_recovery(&clusters, &labels, identities) {
                    failures.push(format!("seed {seed} tau {tau} {}", method.name()));
                }
            }
        }
    }
    let t = start.elapsed();
    let detail = format!(
        "{MARGIN_SEEDS} seeds x tau {MARGIN_TAUS:?} x {{euclidean, euclidean-voting}}: {} failures {:?}; \
         observed d_in <= {worst_in:.3}, d_out >= {worst_out:.3}; precondition unmet on seeds {unmet:?}, {:.2} s",
        failures.len(),
        failures,
        t.as_secs_f64()
    );
    outcome(failures.is_empty() && unmet.is_empty(), detail)
}

// ---- 5: noise ----

fn noise_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.tracker.max_appearance_distance = 0.4;
    cfg.refine_enabled = true;
    cfg.refine.min_track_length = 10;
    cfg
}

fn criterion_noise() -> Outcome {
    let start = Instant::now();
    let cfg = noise_config();
    let mut within = 0;
    let mut histogram: BTreeMap<i64, usize> = BTreeMap::new();
    for seed in 0..NOISE_RUNS {
        let s = generate(&ScenarioConfig {
            seed: 1000 + seed,
            identities: 20,
            embedding_noise_sigma: 0.1,
            miss_prob: 0.1,
            false_positive_rate: 0.5,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let r = run(&s, &cfg, &[AssociationMethod::Euclidean], 1);
        let err = r.unique_count as i64 - s.truth.present_identities().len() as i64;
        *histogram.entry(err).or_default() += 1;
        within += usize::from(err.abs() <= 1);
    }
    let frac = within as f64 / NOISE_RUNS as f64;
    outcome(
        frac >= NOISE_PASS_FRACTION,
        format!(
            "{within}/{NOISE_RUNS} runs within +-1 of 20 (need {:.0}%); count error histogram {histogram:?}, {:.2} s",
            NOISE_PASS_FRACTION * 100.0,
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---- 6: metrics ----

fn pct1(x: Option<f64>) -> f64 {
    (x.unwrap() * 1000.0).round() / 10.0
}

fn criterion_metrics() -> Outcome {
    let a = count_confusion(3, 0, 4);
    let b = count_confusion(5, 1, 2);
    let got = [
        (pct1(a.accuracy), pct1(a.recall), pct1(a.f1)),
        (pct1(b.accuracy), pct1(b.recall), pct1(b.f1)),
    ];
    let want = [(42.9, 42.9, 60.0), (62.5, 71.4, 76.9)];
    outcome(
        got == want,
        format!("accuracy/recall/F1 % for (3,0,4) and (5,1,2): {got:?}"),
    )
}

// ---- 7: refinement ----

fn sized_tracklet(w: f64, h: f64) -> Tracklet {
    Tracklet {
        camera_id: 0,
        track_id: 1,
        frames: (0..5).collect(),
        boxes: [w - 10.0, w, w, w + 3.0, w + 40.0]
            .iter()
            .zip([h - 10.0, h - 1.0, h, h + 1.0, h + 40.0])
            .map(|(&bw, bh)| BoundingBox::new(0.0, 0.0, bw, bh))
            .collect(),
        confidences: vec![0.9; 5],
        embeddings: Vec::new(),
    }
}

fn criterion_refine() -> Outcome {
    let cfg = PipelineConfig::preset(Preset::Study2);
    let keep = cfg.refine.keeps(&sized_tracklet(61.0, 51.0));
    let drop = !cfg.refine.keeps(&sized_tracklet(60.0, 51.0));
    outcome(
        keep && drop,
        format!("study2 preset: median 61x51 kept={keep}, median 60x51 dropped={drop}"),
    )
}

// ---- 8: throughput ----

fn throughput_scenario() -> Scenario {
    generate(&ScenarioConfig {
        seed: 8,
        cameras: 3,
        identities: 30,
        frames: 300,
        embedding_noise_sigma: 0.1,
        jitter_sigma: 1.0,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

fn criterion_throughput() -> (Outcome, Outcome) {
    let s = throughput_scenario();
    let cfg = PipelineConfig::default();
    let methods = [AssociationMethod::Euclidean];
    let inputs = scenario_inputs(&s);
    let dets: usize = s.streams.iter().map(|st| st.detections.len()).sum();
    let frames = 3 * 300;

    let time = |threads: usize| {
        let start = Instant::now();
        let (r, _) = pipeline::run(&inputs, &cfg, &methods, threads).unwrap();
        (r.to_json(), start.elapsed().as_secs_f64())
    };
    // Best of three to keep scheduler noise out.
    let (single_json, t1) = (0..3)
        .map(|_| time(1))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let (par_json, tp) = (0..3)
        .map(|_| time(SPEEDUP_MIN_CORES))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let fps = frames as f64 / t1;
    let identical = single_json == par_json;
    let main = outcome(
        fps >= THROUGHPUT_FPS && identical,
        format!(
            "{frames} frames, {:.1} detections/frame: {fps:.0} fps single-threaded (need {THROUGHPUT_FPS}); \
             parallel output identical={identical}",
            dets as f64 / frames as f64
        ),
    );
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let speedup = t1 / tp;
    let par = if cores >= SPEEDUP_MIN_CORES {
        outcome(
            speedup >= SPEEDUP,
            format!("{cores} cores: per-camera parallel speedup {speedup:.2}x (need {SPEEDUP}x)"),
        )
    } else {
        outcome(
            true,
            format!(
                "precondition unmet: {cores} core(s) available, speedup needs >= {SPEEDUP_MIN_CORES}; \
                 measured {speedup:.2}x, not asserted"
            ),
        )
    };
    (main, par)
}

// ---- 9: determinism ----

fn criterion_determinism() -> Outcome {
    let cfg = noise_config();
    let make = || {
        let s = generate(&ScenarioConfig {
            seed: 99,
            identities: 12,
            embedding_noise_sigma: 0.1,
            miss_prob: 0.1,
            false_positive_rate: 0.5,
            jitter_sigma: 2.0,
            ..ScenarioConfig::default()
        })
        .unwrap();
        run(
            &s,
            &cfg,
            &[AssociationMethod::Euclidean, AssociationMethod::Voting],
            1,
        )
        .to_json()
    };
    let (a, b) = (make(), make());
    outcome(
        a == b,
        format!(
            "two seeded runs: {} bytes, byte-identical={}",
            a.len(),
            a == b
        ),
    )
}

fn main() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("acceptance suite ({cores} core(s) available)");
    let mut all = Vec::new();
    let mut report = |id: &str, name: &str, o: Outcome| {
        println!(
            "{} {id} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        all.push(o.pass);
    };
    report("1", "assignment oracle", criterion_assignment());
    report("2", "kalman oracle", criterion_kalman());
    report("3", "zero-noise exactness", criterion_zero_noise());
    report("4", "margin-guaranteed clustering", criterion_margins());
    report("5", "noise robustness", criterion_noise());
    report("6", "metric fidelity", criterion_metrics());
    report("7", "refinement boundary", criterion_refine());
    let (tp, speedup) = criterion_throughput();
    report("8", "throughput", tp);
    report("8b", "parallel speedup", speedup);
    report("9", "determinism", criterion_determinism());
    let failed = all.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", all.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
