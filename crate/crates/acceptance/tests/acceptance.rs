//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Every tolerance and protocol constant is pinned below.
//!
//! Run alone with `cargo test --release -p rigidreg-acceptance`.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rigidreg::cli::{
    self, BenchConfig, Invocation, RunManifest, CHECKPOINT_NAME, MANIFEST_NAME, METRICS_NAME,
};
use rigidreg::consensus::{consensus_register, consensus_with_map, full_register, kabsch};
use rigidreg::fen::{fen_init, FenConfig, FenModel, ForwardCache, GraphMode};
use rigidreg::geom3d::{
    add_gaussian_noise, apply_transform, generate_shape, random_rotation, rotation_angle_deg,
    rotation_from_axis_angle, Point3, RigidTransform, ShapeKind,
};
use rigidreg::icp::{icp, IcpConfig};
use rigidreg::losses::{build_adjacency, total_loss, AdjacencySets};
use rigidreg::ri_desc::ri_features;
use rigidreg::softcorr::{
    bag_weights, confidence, cosine_backward, sample_bag, soft_correspondence, SampleBag,
    SoftCorrespondence,
};
use rigidreg::trainer::{
    ablate, evaluate, register_pair, sweep, synthetic_dataset, train, AblationMode, DatasetSpec,
    Registrar, SweepAxis, TrainConfig,
};
use rigidreg::{FenModel64, PointCloud64};

// Criterion 1
const RI_TRIPLES: usize = 1000;
const RI_POINTS: usize = 256;
const RI_MAX_DIFF: f64 = 1e-9;
const RI_BUDGET_S: f64 = 10.0;

// Criterion 2
const KABSCH_CASES: usize = 1000;
const KABSCH_ROT_TOL_DEG: f64 = 1e-6;
const KABSCH_T_TOL: f64 = 1e-9;
const DET_TOL: f64 = 1e-9;

// Criterion 3
const GRAD_SEEDS: u64 = 20;
const GRAD_POINTS: usize = 24;
const GRAD_MAX_PARAMS: usize = 2000;
const GRAD_EPS: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so near-zero entries are
/// compared on an absolute scale.
const GRAD_REL_FLOOR: f64 = 1e-6;
const GRAD_MIN_CHECKED: f64 = 0.9;

// Criterion 4
const ROBUST_TRIALS: u64 = 100;
const ROBUST_WINS: usize = 90;
const ROBUST_POINTS: usize = 256;
const ROBUST_CORRECT: f64 = 0.7;

// Desk protocol shared by criteria 5 to 10
const DESK_TRAIN_COUNT: usize = 200;
const DESK_TEST_COUNT: usize = 50;
const DESK_POINTS: usize = 256;
const DESK_EPOCHS: usize = 2;
/// Evaluation noise for the rotation sweep and the ablation table.
const DESK_EVAL_SIGMA: f64 = 0.002;

// Criterion 5
const E2E_RMSE_R_DEG: f64 = 5.0;
const E2E_RMSE_T: f64 = 0.05;

// Criterion 6
const ROTATION_GRID: [f64; 3] = [30.0, 90.0, 180.0];
const RI_FLATNESS: f64 = 2.0;
const CARTESIAN_BLOWUP: f64 = 3.0;

// Criterion 7
const NOISE_GRID: [f64; 4] = [0.0, 0.005, 0.01, 0.02];

// Criterion 9
const SYM_SHAPES: usize = 20;
const SYM_SEED: u64 = 9;
const SYM_ICP_FAIL_DEG: f64 = 30.0;
const SYM_ICP_MIN_FAILS: usize = 10;
const SYM_PIPE_OK_DEG: f64 = 10.0;
const SYM_PIPE_MIN_OK: usize = 15;

// Criterion 10
const PERF_POINTS: usize = 1024;
const PERF_BUDGET_S: f64 = 1.0;
const PERF_GROUPS: usize = 8;
const SCALE_THREADS: usize = 4;
const SCALE_MIN_SPEEDUP: f64 = 2.0;
const SCALE_REPEATS: usize = 40;

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Desk {
    train_set: Vec<PointCloud64>,
    test_set: Vec<PointCloud64>,
    model: FenModel64,
}

fn desk_cfg() -> TrainConfig {
    TrainConfig {
        epochs: DESK_EPOCHS,
        train_noise_sigma: Some(0.0),
        ..TrainConfig::default()
    }
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let train_set = synthetic_dataset(&DatasetSpec {
            count: DESK_TRAIN_COUNT,
            n_points: DESK_POINTS,
            seed: 0,
            ..DatasetSpec::default()
        })
        .expect("train set");
        let test_set = synthetic_dataset(&DatasetSpec {
            count: DESK_TEST_COUNT,
            n_points: DESK_POINTS,
            seed: 1,
            ..DatasetSpec::default()
        })
        .expect("test set");
        let model = train(&train_set, &desk_cfg())
            .expect("desk training")
            .0
            .model;
        Desk {
            train_set,
            test_set,
            model,
        }
    })
}

fn transformed(cloud: &PointCloud64, t: &RigidTransform<f64>) -> PointCloud64 {
    apply_transform(cloud, t)
}

fn random_translation(rng: &mut ChaCha8Rng, range: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-range..=range),
        rng.random_range(-range..=range),
        rng.random_range(-range..=range),
    )
}

fn rot_err(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle_deg(&(a.transpose() * b))
}

fn ri_invariance() -> Outcome {
    let k = TrainConfig::default().k_descriptor;
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..RI_TRIPLES {
        let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
        let cloud: PointCloud64 = generate_shape(kind, RI_POINTS, i as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + i as u64);
        let t = RigidTransform::new(
            random_rotation(180.0, &mut rng).unwrap(),
            random_translation(&mut rng, 1.0),
        );
        let a = ri_features(&cloud, k).unwrap();
        let b = ri_features(&transformed(&cloud, &t), k).unwrap();
        let d = a
            .values()
            .iter()
            .zip(b.values())
            .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        worst = worst.max(d);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= RI_MAX_DIFF && secs < RI_BUDGET_S,
        format!("{RI_TRIPLES} triples, max |Δ| = {worst:.3e} (≤ {RI_MAX_DIFF:e}), {secs:.2} s (< {RI_BUDGET_S} s)"),
    )
}

/// Point sets for the Kabsch check: generic, planar, mirror-symmetric and minimal.
fn kabsch_points(case: usize, rng: &mut ChaCha8Rng) -> Vec<Point3<f64>> {
    let n = rng.random_range(3..40);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut *rng) };
    match case % 4 {
        0 => (0..n)
            .map(|_| Point3::new(gauss(), gauss(), gauss()))
            .collect(),
        1 => (0..n).map(|_| Point3::new(gauss(), gauss(), 0.0)).collect(),
        2 => {
            let half: Vec<Point3<f64>> = (0..n)
                .map(|_| Point3::new(gauss(), gauss(), gauss()))
                .collect();
            half.iter()
                .flat_map(|p| [*p, Point3::new(-p.x, p.y, p.z)])
                .collect()
        }
        _ => (0..3)
            .map(|_| Point3::new(gauss(), gauss(), gauss()))
            .collect(),
    }
}

fn kabsch_exactness() -> Outcome {
    let (mut worst_r, mut worst_t, mut improper) = (0.0f64, 0.0f64, 0usize);
    for case in 0..KABSCH_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(case as u64);
        let src = kabsch_points(case, &mut rng);
        let truth = RigidTransform::new(
            random_rotation(180.0, &mut rng).unwrap(),
            random_translation(&mut rng, 2.0),
        );
        let dst: Vec<Point3<f64>> = src.iter().map(|p| truth.apply(p)).collect();
        let est = kabsch(&src, &dst).unwrap();
        worst_r = worst_r.max(rot_err(&est.rotation, &truth.rotation));
        worst_t = worst_t.max((est.translation - truth.translation).norm());
        if !est.is_proper(DET_TOL) {
            improper += 1;
        }
    }
    outcome(
        worst_r <= KABSCH_ROT_TOL_DEG && worst_t <= KABSCH_T_TOL && improper == 0,
        format!(
            "{KABSCH_CASES} cases, max rot err {worst_r:.3e}° (≤ {KABSCH_ROT_TOL_DEG:e}), max ‖Δt‖ {worst_t:.3e} (≤ {KABSCH_T_TOL:e}), improper {improper}"
        ),
    )
}

fn tiny_fen() -> FenConfig {
    FenConfig {
        edge_width: 6,
        l1: 6,
        l2: 5,
        fusion_width: 8,
        l3: 5,
        k_graph: 4,
        graph_mode: GraphMode::Static,
        ..FenConfig::default()
    }
}

/// Everything that decides which linear piece of the loss is active.
#[derive(PartialEq)]
struct Pieces {
    x: Vec<usize>,
    y: Vec<usize>,
    dp: Vec<f64>,
    clamped: Vec<bool>,
}

struct GradProblem {
    x: PointCloud64,
    y: PointCloud64,
    fx: rigidreg::ri_desc::RiDescriptorTensor<f64>,
    fy: rigidreg::ri_desc::RiDescriptorTensor<f64>,
    adj: AdjacencySets,
    w: Vec<usize>,
}

impl GradProblem {
    fn eval(
        &self,
        model: &FenModel<f64>,
    ) -> (f64, Pieces, SoftCorrespondence<f64>, [ForwardCache<f64>; 2]) {
        let (hx, cx) = model.forward(&self.fx, &self.x).unwrap();
        let (hy, cy) = model.forward(&self.fy, &self.y).unwrap();
        let p = soft_correspondence(&hx, &hy).unwrap();
        let (report, dp) = total_loss(&p, &self.adj, &self.w, 0.8, 0.3).unwrap();
        let pieces = Pieces {
            x: cx.activation_pattern(),
            y: cy.activation_pattern(),
            dp: dp.values().to_vec(),
            clamped: p.values().iter().map(|v| v.abs() >= 1.0).collect(),
        };
        (report.l_c, pieces, p, [cx, cy])
    }
}

fn gradient_fidelity() -> Outcome {
    let k_desc = 5;
    let (mut checked, mut total, mut worst, mut params) = (0usize, 0usize, 0.0f64, 0usize);
    for seed in 0..GRAD_SEEDS {
        let mut model: FenModel<f64> = fen_init(&tiny_fen(), seed).unwrap();
        params = model.num_parameters();
        let kind = ShapeKind::ALL[seed as usize % ShapeKind::ALL.len()];
        let x: PointCloud64 = generate_shape(kind, GRAD_POINTS, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = RigidTransform::new(
            random_rotation(180.0, &mut rng).unwrap(),
            random_translation(&mut rng, 0.5),
        );
        let y = add_gaussian_noise(&transformed(&x, &t), 0.02, &mut rng).unwrap();
        let (fx, fy) = (
            ri_features(&x, k_desc).unwrap(),
            ri_features(&y, k_desc).unwrap(),
        );
        let mut prob = GradProblem {
            adj: build_adjacency(&y, 3).unwrap(),
            x,
            y,
            fx,
            fy,
            w: Vec::new(),
        };
        let (hx, _) = model.forward(&prob.fx, &prob.x).unwrap();
        let (hy, _) = model.forward(&prob.fy, &prob.y).unwrap();
        let p0 = soft_correspondence(&hx, &hy).unwrap();
        let bag: SampleBag =
            sample_bag(&confidence(&p0).unwrap(), GRAD_POINTS / 4, &mut rng).unwrap();
        prob.w = bag_weights(&bag, GRAD_POINTS).unwrap();

        let (_, base, p, [cx, cy]) = prob.eval(&model);
        let (hx, _) = model.forward(&prob.fx, &prob.x).unwrap();
        let (hy, _) = model.forward(&prob.fy, &prob.y).unwrap();
        let dp =
            SoftCorrespondence::from_values(GRAD_POINTS, GRAD_POINTS, base.dp.clone()).unwrap();
        let (dhx, dhy) = cosine_backward(&hx, &hy, &p, &dp).unwrap();
        model.zero_grad();
        model.backward(&cx, &dhx).unwrap();
        model.backward(&cy, &dhy).unwrap();
        let analytic = model.flat_grads();

        for (i, &a) in analytic.iter().enumerate() {
            total += 1;
            let orig = *model.flat_value_mut(i);
            *model.flat_value_mut(i) = orig + GRAD_EPS;
            let (lp, pp, _, _) = prob.eval(&model);
            *model.flat_value_mut(i) = orig - GRAD_EPS;
            let (lm, pm, _, _) = prob.eval(&model);
            *model.flat_value_mut(i) = orig;
            if pp != base || pm != base {
                continue;
            }
            checked += 1;
            let numeric = (lp - lm) / (2.0 * GRAD_EPS);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    let frac = checked as f64 / total.max(1) as f64;
    outcome(
        worst <= GRAD_REL_TOL && frac >= GRAD_MIN_CHECKED && params <= GRAD_MAX_PARAMS,
        format!(
            "{params} params × {GRAD_SEEDS} seeds, {checked}/{total} entries off the kinks ({:.1}%), max rel err {worst:.3e} (≤ {GRAD_REL_TOL:e})",
            100.0 * frac
        ),
    )
}

/// Correspondence matrix with `ROBUST_CORRECT` of the rows pointing at the
/// true match with high confidence and the rest at a random wrong point
/// with low confidence.
fn planted_correspondence(n: usize, rng: &mut ChaCha8Rng) -> SoftCorrespondence<f64> {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let n_bad = ((1.0 - ROBUST_CORRECT) * n as f64).round() as usize;
    let mut values = vec![0.0; n * n];
    for (rank, &i) in rows.iter().enumerate() {
        if rank < n_bad {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            values[i * n + j] = rng.random_range(0.15..0.35);
        } else {
            values[i * n + i] = rng.random_range(0.85..0.95);
        }
    }
    SoftCorrespondence::from_values(n, n, values).unwrap()
}

fn consensus_robustness() -> Outcome {
    let mut wins = 0;
    let (mut cons_errs, mut full_errs) = (Vec::new(), Vec::new());
    for trial in 0..ROBUST_TRIALS {
        let kind = ShapeKind::ALL[trial as usize % ShapeKind::ALL.len()];
        let x: PointCloud64 = generate_shape(kind, ROBUST_POINTS, trial).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let truth = RigidTransform::new(
            random_rotation(180.0, &mut rng).unwrap(),
            random_translation(&mut rng, 0.5),
        );
        let y = transformed(&x, &truth);
        let p = planted_correspondence(ROBUST_POINTS, &mut rng);
        let bag = sample_bag(&confidence(&p).unwrap(), ROBUST_POINTS / 10, &mut rng).unwrap();
        let (cons, _) =
            consensus_register(&x, &y, &p, &bag, TrainConfig::default().k_groups, &mut rng)
                .unwrap();
        let full = full_register(&x, &y, &p).unwrap();
        let (ec, ef) = (
            rot_err(&cons.rotation, &truth.rotation),
            rot_err(&full.rotation, &truth.rotation),
        );
        if ec < ef {
            wins += 1;
        }
        cons_errs.push(ec);
        full_errs.push(ef);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    outcome(
        wins >= ROBUST_WINS,
        format!(
            "consensus wins {wins}/{ROBUST_TRIALS} (≥ {ROBUST_WINS}); median rot err consensus {:.2e}° vs full {:.2}°",
            median(&mut cons_errs),
            median(&mut full_errs)
        ),
    )
}

fn end_to_end() -> Outcome {
    let d = desk();
    let m = evaluate(Some(&d.model), &d.test_set, &desk_cfg()).unwrap();
    outcome(
        m.rmse_r <= E2E_RMSE_R_DEG && m.rmse_t <= E2E_RMSE_T,
        format!(
            "{DESK_TRAIN_COUNT} train / {DESK_TEST_COUNT} test, RMSE(R) {:.4}° (≤ {E2E_RMSE_R_DEG}), RMSE(t) {:.5} (≤ {E2E_RMSE_T})",
            m.rmse_r, m.rmse_t
        ),
    )
}

fn rmse_by_range(cfg: &TrainConfig) -> Vec<f64> {
    let d = desk();
    sweep(
        &d.train_set,
        &d.test_set,
        cfg,
        SweepAxis::RotationRange,
        &ROTATION_GRID,
        None,
    )
    .unwrap()
    .iter()
    .map(|r| r.metrics.rmse_r)
    .collect()
}

fn rotation_flatness() -> Outcome {
    let cfg = TrainConfig {
        noise_sigma: DESK_EVAL_SIGMA,
        ..desk_cfg()
    };
    let ri = rmse_by_range(&cfg);
    let cart = rmse_by_range(&AblationMode::NoRi.apply(&cfg));
    let last = ROTATION_GRID.len() - 1;
    let (ri_ratio, cart_ratio) = (ri[last] / ri[0], cart[last] / cart[0]);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        ri[last] <= RI_FLATNESS * ri[0] && cart[last] > CARTESIAN_BLOWUP * cart[0],
        format!(
            "σ={DESK_EVAL_SIGMA}, RMSE(R) at 30/90/180°: RI {} (ratio {ri_ratio:.2} ≤ {RI_FLATNESS}), Cartesian {} (ratio {cart_ratio:.2} > {CARTESIAN_BLOWUP})",
            fmt(&ri),
            fmt(&cart)
        ),
    )
}

fn noise_monotonicity() -> Outcome {
    let d = desk();
    let rows = sweep(
        &d.train_set,
        &d.test_set,
        &desk_cfg(),
        SweepAxis::NoiseSigma,
        &NOISE_GRID,
        Some(&d.model),
    )
    .unwrap();
    let r: Vec<f64> = rows.iter().map(|row| row.metrics.rmse_r).collect();
    let monotone = r.windows(2).all(|w| w[1] >= w[0]);
    let finite = r.iter().all(|v| v.is_finite());
    outcome(
        monotone && finite,
        format!(
            "RMSE(R) over σ {:?}: {}",
            NOISE_GRID,
            r.iter()
                .map(|x| format!("{x:.4}"))
                .collect::<Vec<_>>()
                .join(" ≤? ")
        ),
    )
}

fn ablation_ordering() -> Outcome {
    let d = desk();
    let cfg = TrainConfig {
        noise_sigma: DESK_EVAL_SIGMA,
        ..desk_cfg()
    };
    let rows = ablate(&d.train_set, &d.test_set, &cfg).unwrap();
    let rmse = |mode: AblationMode| rows.iter().find(|r| r.mode == mode).unwrap().metrics.rmse_r;
    let full = rmse(AblationMode::Full);
    let against = [
        AblationMode::NoRi,
        AblationMode::UniformSampling,
        AblationMode::FullSvd,
        AblationMode::Topk,
    ];
    let losers: Vec<&str> = against
        .iter()
        .filter(|&&m| full >= rmse(m))
        .map(|m| m.tag())
        .collect();
    let table = rows
        .iter()
        .map(|r| {
            format!(
                "{} {:.4}",
                if r.tag.is_empty() { "full" } else { r.tag },
                r.metrics.rmse_r
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        losers.is_empty(),
        format!(
            "σ={DESK_EVAL_SIGMA}, RMSE(R): {table}; full not strictly below: [{}]",
            losers.join(", ")
        ),
    )
}

fn icp_symmetry() -> Outcome {
    let d = desk();
    let shapes: Vec<PointCloud64> = synthetic_dataset(&DatasetSpec {
        count: SYM_SHAPES,
        n_points: DESK_POINTS,
        seed: SYM_SEED,
        shapes: vec![ShapeKind::Plane],
        ..DatasetSpec::default()
    })
    .unwrap();
    let cfg = desk_cfg();
    let (mut icp_fails, mut pipe_ok) = (0, 0);
    for (i, x) in shapes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(SYM_SEED * 1_000 + i as u64);
        let axis = Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let truth = RigidTransform::new(
            rotation_from_axis_angle(&axis, std::f64::consts::PI),
            random_translation(&mut rng, cfg.translation_range),
        );
        let y = transformed(x, &truth);
        let classic = icp(x, &y, &IcpConfig::default()).unwrap().transform;
        if rot_err(&classic.rotation, &truth.rotation) > SYM_ICP_FAIL_DEG {
            icp_fails += 1;
        }
        let learned = register_pair(Some(&d.model), x, &y, &cfg, &mut rng)
            .unwrap()
            .transform;
        if rot_err(&learned.rotation, &truth.rotation) <= SYM_PIPE_OK_DEG {
            pipe_ok += 1;
        }
    }
    outcome(
        icp_fails >= SYM_ICP_MIN_FAILS && pipe_ok >= SYM_PIPE_MIN_OK,
        format!(
            "{SYM_SHAPES} half-turned planes: ICP > {SYM_ICP_FAIL_DEG}° on {icp_fails} (≥ {SYM_ICP_MIN_FAILS}), pipeline ≤ {SYM_PIPE_OK_DEG}° on {pipe_ok} (≥ {SYM_PIPE_MIN_OK})"
        ),
    )
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
}

fn performance() -> Outcome {
    let d = desk();
    let cfg = TrainConfig {
        k_groups: PERF_GROUPS,
        ..desk_cfg()
    };
    let x: PointCloud64 = generate_shape(ShapeKind::Torus, PERF_POINTS, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = RigidTransform::new(
        random_rotation(180.0, &mut rng).unwrap(),
        random_translation(&mut rng, 0.5),
    );
    let y = transformed(&x, &truth);

    let single = pool(1);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let start = Instant::now();
        single
            .install(|| register_pair(Some(&d.model), &x, &y, &cfg, &mut rng))
            .unwrap();
        worst = worst.max(start.elapsed().as_secs_f64());
    }

    // consensus alone, identical inputs on both pools
    let map: Vec<usize> = (0..PERF_POINTS).collect();
    let bag = SampleBag {
        indices: (0..cfg.bag_size(PERF_POINTS))
            .map(|i| i * 7 % PERF_POINTS)
            .collect(),
    };
    let time_consensus = |threads: usize| {
        let p = pool(threads);
        let start = Instant::now();
        for r in 0..SCALE_REPEATS {
            let mut g = ChaCha8Rng::seed_from_u64(r as u64);
            p.install(|| consensus_with_map(&x, &y, &map, &bag, PERF_GROUPS, &mut g))
                .unwrap();
        }
        start.elapsed().as_secs_f64()
    };
    let t1 = time_consensus(1);
    let t4 = time_consensus(SCALE_THREADS);
    let speedup = t1 / t4;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        worst < PERF_BUDGET_S && speedup >= SCALE_MIN_SPEEDUP,
        format!(
            "{PERF_POINTS}-point pair single-threaded {worst:.3} s (< {PERF_BUDGET_S} s); consensus speedup at {SCALE_THREADS} threads {speedup:.2}× (≥ {SCALE_MIN_SPEEDUP}) on {cores} available core(s)"
        ),
    )
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        k_groups: 2,
        edge_width: 6,
        l1: 8,
        l2: 8,
        fusion_width: 8,
        l3: 8,
        k_graph: 6,
        k_descriptor: 8,
        k_loss: 4,
        noise_sigma: 0.01,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn tiny_data(count: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        count,
        n_points: 64,
        seed,
        ..DatasetSpec::default()
    }
}

/// Executes `inv`, then replays its manifest into a fresh directory and
/// compares every JSON artifact byte for byte.
fn run_and_replay(inv: &Invocation, root: &Path, name: &str) -> Result<usize, String> {
    let first = root.join(format!("{name}_a"));
    let second = root.join(format!("{name}_b"));
    let m = cli::execute(inv, &first).map_err(|e| e.to_string())?;
    let manifest_name = match inv {
        Invocation::Register { output, .. } => format!(
            "{}.manifest.json",
            Path::new(output).file_stem().unwrap().to_str().unwrap()
        ),
        _ => MANIFEST_NAME.to_string(),
    };
    let recorded = RunManifest::load(&first.join(manifest_name)).map_err(|e| e.to_string())?;
    if recorded != m {
        return Err(format!(
            "{name}: manifest on disk differs from the returned one"
        ));
    }
    cli::replay(&recorded, &second).map_err(|e| format!("{name}: {e}"))?;
    let mut compared = 0;
    for a in m.artifacts.iter().filter(|a| a.name.ends_with(".json")) {
        let (x, y) = (
            std::fs::read(first.join(&a.name)).map_err(|e| e.to_string())?,
            std::fs::read(second.join(&a.name)).map_err(|e| e.to_string())?,
        );
        if x != y {
            return Err(format!("{name}: {} differs on replay", a.name));
        }
        compared += 1;
    }
    Ok(compared)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let bench_cfg = BenchConfig {
        train: tiny_train(),
        train_data: tiny_data(8, 0),
        test_data: tiny_data(4, 1),
        baselines: vec![Registrar::Full, Registrar::Topk, Registrar::Icp],
        rotation_grid: vec![90.0, 180.0],
        noise_grid: vec![0.0, 0.01],
    };
    let data = root.join("gen_a");
    let invocations = [
        (
            "gen",
            Invocation::Generate {
                dataset: tiny_data(6, 2),
            },
        ),
        (
            "train",
            Invocation::Train {
                config: tiny_train(),
                data: data.clone(),
                resume: None,
            },
        ),
        (
            "register",
            Invocation::Register {
                config: tiny_train(),
                checkpoint: Some(root.join("train_a").join(CHECKPOINT_NAME)),
                src: data.join("0000_sphere.xyz"),
                dst: data.join("0001_cube.xyz"),
                output: "pair.json".into(),
            },
        ),
        (
            "bench",
            Invocation::Bench {
                config: bench_cfg.clone(),
            },
        ),
        ("ablate", Invocation::Ablate { config: bench_cfg }),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, inv) in &invocations {
        match run_and_replay(inv, root, name) {
            Ok(n) => notes.push(format!("{name} {n} json")),
            Err(e) => {
                ok = false;
                notes.push(e);
            }
        }
    }
    let metrics_present = root.join("bench_b").join(METRICS_NAME).exists();
    outcome(
        ok && metrics_present,
        format!(
            "replayed from manifests, byte-identical: {}",
            notes.join(", ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "rotation-invariant descriptors", ri_invariance),
        (2, "kabsch exactness", kabsch_exactness),
        (3, "gradient fidelity", gradient_fidelity),
        (4, "consensus robustness", consensus_robustness),
        (5, "desk end-to-end", end_to_end),
        (6, "rotation-range flatness", rotation_flatness),
        (7, "noise monotonicity", noise_monotonicity),
        (8, "ablation ordering", ablation_ordering),
        (9, "icp symmetry failure", icp_symmetry),
        (10, "performance", performance),
        (11, "determinism", determinism),
    ];
    let only: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "{} criterion {id:>2} {name}: {detail} [{secs:.1} s]",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
