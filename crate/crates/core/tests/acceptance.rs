//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mil::eval::{cross_validate, roc_auc, stratified_kfold, FoldMetrics, MetricsReport};
use spatial_mil::experiment::{
    band_attention_excess, sign_test_p, site_shift_run, BandExcess, DeskScale, SiteShiftRun,
    TRAIN_SITE,
};
use spatial_mil::models::{class_weights, forward, model_grad_check};
use spatial_mil::priors::{lin_score, peripheral_distance, within, NeighborIndex, PriorConfig};
use spatial_mil::synthetic::{generate_cohort, CohortSpec};
use spatial_mil::tensor::Tensor;
use spatial_mil::{
    augment_cohort, Aggregator, Labels, ModelConfig, ModelParams, ProbeProbs, SlideGeometry,
    TileCoord,
};

const SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run(id: usize, title: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {id} [{}] {title}: {} ({:.1}s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        start.elapsed().as_secs_f64()
    );
    v.pass
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_probe(rng: &mut ChaCha8Rng) -> ProbeProbs {
    let mut p = [0.0; 9];
    p.iter_mut().for_each(|v| *v = rng.random::<f64>() + 1e-3);
    let s: f64 = p.iter().sum();
    ProbeProbs(p.map(|v| v / s))
}

// ---------------------------------------------------------------- 1

fn formula_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let mut pd_err = 0.0f64;
    for _ in 0..10_000 {
        let (w, h) = (rng.random_range(1..500_000u64), rng.random_range(1..500_000u64));
        let (x, y) = (rng.random_range(0..=w), rng.random_range(0..=h));
        let got = peripheral_distance(TileCoord::new(x, y), SlideGeometry::new(w, h).unwrap()).unwrap();
        let edge = [x as f64 / w as f64, (w - x) as f64 / w as f64, y as f64 / h as f64, (h - y) as f64 / h as f64];
        let oracle = 1.0 - 2.0 * edge.into_iter().fold(f64::INFINITY, f64::min);
        pd_err = pd_err.max((got - oracle).abs());
    }

    // LIN: 10,000 tiles spread over random slides, each scored against a
    // brute-force scan of the neighbourhood.
    let cfg = PriorConfig::lin();
    let mut lin_err = 0.0f64;
    let mut lin_count = 0;
    while lin_count < 10_000 {
        let cols = rng.random_range(4..40u64);
        let rows = rng.random_range(4..40u64);
        let g = SlideGeometry::new(cols * 256, rows * 256).unwrap();
        let n = rng.random_range(1..=(cols * rows) as usize).min(400);
        let coords: Vec<TileCoord> = (0..n)
            .map(|_| TileCoord::new(rng.random_range(0..=cols) * 256, rng.random_range(0..=rows) * 256))
            .collect();
        let probes: Vec<ProbeProbs> = (0..n).map(|_| random_probe(&mut rng)).collect();
        let idx = NeighborIndex::build(&coords, g, &cfg).unwrap();
        let pts: Vec<(f64, f64)> = coords
            .iter()
            .map(|c| (c.x_px as f64 / g.width_px as f64, c.y_px as f64 / g.height_px as f64))
            .collect();
        for i in 0..n {
            let (mut lym, mut tum, mut k) = (0.0, 0.0, 0.0);
            for j in 0..n {
                let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                if dx * dx + dy * dy <= cfg.radius_norm * cfg.radius_norm {
                    lym += probes[j].lym();
                    tum += probes[j].tum();
                    k += 1.0;
                }
            }
            let oracle = ((lym / k + cfg.epsilon) / (tum / k + cfg.epsilon)).ln();
            let got = lin_score(i, &idx, Some(&probes), &cfg).unwrap();
            lin_err = lin_err.max((got - oracle).abs());
            lin_count += 1;
        }
    }

    let mut index_ok = true;
    for _ in 0..200 {
        let n = rng.random_range(1..400);
        let r = rng.random_range(0.02..0.3);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let idx = NeighborIndex::from_normalized(pts.clone(), r);
        for i in 0..n {
            let brute: Vec<usize> = (0..n).filter(|&j| within(pts[i], pts[j], r * r)).collect();
            index_ok &= idx.neighbors(i) == brute;
        }
    }

    let t = start.elapsed();
    verdict(
        pd_err < 1e-12 && lin_err < 1e-12 && index_ok && t < Duration::from_secs(10),
        format!(
            "pd max err {pd_err:.1e}, lin max err {lin_err:.1e} over {lin_count} tiles, \
             neighbour index exact on 200 slides: {index_ok}, {:.2}s (< 10s)",
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let labels = Labels { msi: true, hypermut: false };
    let w = class_weights(&[labels, Labels { msi: false, hypermut: true }]);
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (agg, h, heads, n) in [
        (Aggregator::Abmil, 4, 1, 5),
        (Aggregator::ClamSb, 4, 1, 6),
        (Aggregator::TransMil, 8, 2, 5),
    ] {
        let mut cfg = ModelConfig::new(agg, 6);
        cfg.hidden_dim = h;
        cfg.n_heads = heads;
        cfg.clam_k = 2;
        cfg.seed = 7;
        let mut params = ModelParams::init(cfg).unwrap();
        // Move every parameter (biases included) off its initial value.
        for t in params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        let x = uniform_matrix(&mut rng, n, 6);
        let err = model_grad_check(&params, &x, &labels, &w, 0.3, 1e-5).unwrap();
        worst = worst.max(err);
        parts.push(format!("{} {err:.1e}", agg.as_str()));
    }
    let t = start.elapsed();
    verdict(
        worst < 1e-4 && t < Duration::from_secs(60),
        format!("max rel err {} (< 1e-4), {:.2}s (< 60s)", parts.join(", "), t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 3

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut exact, mut invariant) = (0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..=n.max(2));
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let auc = roc_auc(&scores, &labels).unwrap();
        exact += (auc == num / pairs) as usize;
        let t: Vec<f64> = scores.iter().map(|s| (0.1 * s).exp() * 3.0 - 7.0).collect();
        invariant += (roc_auc(&t, &labels).unwrap() == auc) as usize;
    }
    verdict(
        exact == 1000 && invariant == 1000,
        format!("exact on {exact}/1000, monotone-invariant on {invariant}/1000"),
    )
}

// ---------------------------------------------------------------- 4

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_spatial-mil")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// All files under `dir` except run manifests (which record absolute paths).
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.txt" {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn protocol_invariants() -> Verdict {
    let labels: Vec<bool> = (0..137).map(|i| i < 23).collect();
    let mut counts_ok = true;
    for seed in 0..20 {
        let kf = stratified_kfold(&labels, 5, seed).unwrap();
        counts_ok &= kf
            .folds
            .iter()
            .all(|f| matches!(f.iter().filter(|&&i| labels[i]).count(), 4 | 5));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut perm_err = 0.0f64;
    for agg in [Aggregator::Abmil, Aggregator::ClamSb, Aggregator::TransMil] {
        let mut cfg = ModelConfig::new(agg, 32);
        cfg.hidden_dim = 16;
        cfg.n_heads = 2;
        let params = ModelParams::init(cfg).unwrap();
        let x = uniform_matrix(&mut rng, 60, 32);
        let mut order: Vec<usize> = (0..60).collect();
        order.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
        let a = forward(&params, &x).unwrap().logits;
        let b = forward(&params, &Tensor::from_rows(&rows).unwrap()).unwrap().logits;
        for k in 0..3 {
            perm_err = perm_err.max((a[k] - b[k]).abs());
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--set", "n_slides=20", "--set", "msi_fraction=0.25", "--set", "tiles_min=20",
        "--set", "tiles_max=40", "--set", "epochs=3", "--set", "hidden_dim=8",
        "--set", "n_heads=2", "--set", "max_tiles=16", "--set", "use_pd=true",
    ];
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        let data = root.join("data").to_string_lossy().into_owned();
        let cv = root.join("cv").to_string_lossy().into_owned();
        let mut gen = vec!["gen-synthetic", "--out", &data];
        gen.extend(small);
        run_cli(&gen);
        let manifest = format!("{data}/manifest.csv");
        let mut xv = vec!["cross-validate", "--manifest", &manifest, "--out", &cv];
        xv.extend(small);
        run_cli(&xv);
        trees.push(tree(&root));
    }
    let identical = trees[0] == trees[1] && trees[0].len() > 20;

    verdict(
        counts_ok && perm_err <= 1e-9 && identical,
        format!(
            "fold positives in {{4,5}} for 20 seeds: {counts_ok}, permutation max logit change \
             {perm_err:.1e} (<= 1e-9), {} output files byte-identical across runs: {identical}",
            trees[0].len()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn aggregation_fixture() -> Verdict {
    let folds = [0.957, 0.983, 0.955, 0.957, 0.946]
        .iter()
        .enumerate()
        .map(|(i, &auc)| FoldMetrics {
            fold: i + 1,
            n_val: 27,
            n_val_msi: 5,
            best_epoch: 1,
            msi_auc: auc,
            hyper_auc: f64::NAN,
            mss_spec_msi_head: f64::NAN,
            mss_spec_mss_head: f64::NAN,
            last_msi_auc: auc,
            last_hyper_auc: f64::NAN,
            last_mss_spec: f64::NAN,
        })
        .collect();
    let (mean, std) = MetricsReport::from_folds("fixture", 0.5, folds).msi_auc;
    verdict(
        (mean - 0.9596).abs() <= 0.001 && (std - 0.012).abs() <= 0.001,
        format!("mean {mean:.4} (0.9596), std {std:.4} (0.012), tolerance 0.001"),
    )
}

// ---------------------------------------------------------------- 6

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mechanism(runs: &[SiteShiftRun], elapsed: Duration) -> Verdict {
    let b_auc = mean(runs.iter().map(|r| r.baseline.internal_auc()));
    let b_int = mean(runs.iter().map(|r| r.baseline.internal_spec()));
    let b_ext = mean(runs.iter().map(|r| r.baseline.external_spec()));
    let p_auc = mean(runs.iter().map(|r| r.pd.internal_auc()));
    let p_ext = mean(runs.iter().map(|r| r.pd.external_spec()));
    for r in runs {
        println!(
            "  seed {}: baseline auc {:.3} int spec {:.3} ext spec {:.3} | +PD auc {:.3} int spec {:.3} ext spec {:.3}",
            r.seed,
            r.baseline.internal_auc(),
            r.baseline.internal_spec(),
            r.baseline.external_spec(),
            r.pd.internal_auc(),
            r.pd.internal_spec(),
            r.pd.external_spec()
        );
    }
    let a = b_auc >= 0.85 && b_ext < b_int;
    let b = p_ext - b_ext >= 0.05;
    let c = p_auc >= b_auc - 0.02;
    let t = elapsed <= Duration::from_secs(15 * 60);
    verdict(
        a && b && c && t,
        format!(
            "(a) baseline auc {b_auc:.3} >= 0.85, ext spec {b_ext:.3} < int spec {b_int:.3}: {a}; \
             (b) +PD ext spec {p_ext:.3} - {b_ext:.3} = {:.3} >= 0.05: {b}; \
             (c) +PD auc {p_auc:.3} >= {:.3}: {c}; {} seeds in {:.0}s (<= 900s)",
            p_ext - b_ext,
            b_auc - 0.02,
            runs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn sign_summary(rows: &[&BandExcess]) -> (usize, usize, f64, f64) {
    let pos = rows.iter().filter(|r| r.excess > 0.0).count();
    let nonzero = rows.iter().filter(|r| r.excess != 0.0).count();
    let mean = mean(rows.iter().map(|r| r.excess));
    (pos, nonzero, sign_test_p(pos, nonzero), mean)
}

fn attention_concentration(runs: &[SiteShiftRun], spec: &CohortSpec) -> Verdict {
    let mut rows = Vec::new();
    for r in runs {
        let spec = CohortSpec { seed: r.seed, ..spec.clone() };
        rows.extend(band_attention_excess(&r.pd, &spec).unwrap());
    }
    let msi: Vec<&BandExcess> = rows.iter().filter(|r| r.msi).collect();
    let mss: Vec<&BandExcess> = rows.iter().filter(|r| !r.msi).collect();
    let (mk, mn, mp, mm) = sign_summary(&msi);
    let (sk, sn, sp, sm) = sign_summary(&mss);
    let msi_ok = mn >= 20 && mp < 0.05;
    let mss_ok = sp >= 0.05;
    verdict(
        msi_ok && mss_ok,
        format!(
            "MSI-H band > interior on {mk}/{mn} slides, mean excess {mm:+.4}, p = {mp:.2e} (< 0.05): {msi_ok}; \
             MSS {sk}/{sn}, mean excess {sm:+.4}, p = {sp:.3} (>= 0.05): {mss_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn null_control(desk: &DeskScale) -> Verdict {
    let mut last = [Vec::new(), Vec::new()];
    let mut selected = [Vec::new(), Vec::new()];
    for seed in 0..SEEDS {
        let spec = CohortSpec { seed, ..CohortSpec::default() }.null();
        let cohort = generate_cohort(&spec, TRAIN_SITE).unwrap().labeled();
        for (arm, priors) in [PriorConfig::none(), PriorConfig::pd()].iter().enumerate() {
            let data = augment_cohort(&cohort, priors).unwrap();
            let mc = desk.model_config(data[0].bag.feature_dim, seed);
            let cv = cross_validate(&data, &mc, &desk.train_config(seed), desk.folds, "null").unwrap();
            last[arm].push(cv.report.last_msi_auc.0);
            selected[arm].push(cv.report.msi_auc.0);
        }
        println!(
            "  seed {seed}: baseline auc {:.3} (selected epoch {:.3}) | +PD auc {:.3} (selected epoch {:.3})",
            last[0][seed as usize], selected[0][seed as usize], last[1][seed as usize], selected[1][seed as usize]
        );
    }
    let b = mean(last[0].iter().copied());
    let p = mean(last[1].iter().copied());
    let inside = |v: f64| (0.35..=0.65).contains(&v);
    verdict(
        inside(b) && inside(p),
        format!(
            "final-epoch cross-validated auc over {SEEDS} seeds: baseline {b:.3}, +PD {p:.3}, \
             both in [0.35, 0.65]; best-epoch selection on the held-out fold gives {:.3} and {:.3}",
            mean(selected[0].iter().copied()),
            mean(selected[1].iter().copied())
        ),
    )
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "formula oracles", formula_oracles);
    ok &= run(2, "gradient checks", gradient_checks);
    ok &= run(3, "metric oracles", metric_oracles);
    ok &= run(4, "protocol invariants", protocol_invariants);
    ok &= run(5, "aggregation fixture", aggregation_fixture);

    let desk = DeskScale::default();
    let spec = CohortSpec::default();
    let start = Instant::now();
    let runs: Option<Vec<SiteShiftRun>> = catch_unwind(|| {
        (0..SEEDS).map(|s| site_shift_run(&spec, &desk, s).unwrap()).collect()
    })
    .ok();
    let elapsed = start.elapsed();
    match &runs {
        Some(runs) => {
            ok &= run(6, "mechanism experiment", || mechanism(runs, elapsed));
            ok &= run(7, "attention concentration", || attention_concentration(runs, &spec));
        }
        None => {
            ok &= run(6, "mechanism experiment", || verdict(false, "experiment failed to run"));
            ok &= run(7, "attention concentration", || verdict(false, "experiment failed to run"));
        }
    }
    ok &= run(8, "null-cohort control", || null_control(&desk));

    println!("acceptance: {}", if ok { "all criteria pass" } else { "FAILED" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
