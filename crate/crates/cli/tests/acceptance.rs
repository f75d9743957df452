//! End-to-end acceptance checks. Run with `cargo test -p eoscan-cli --test acceptance`.
//!
//! Each check prints one PASS/FAIL line with its wall time; the process exits
//! non-zero when any check fails or exceeds its time budget.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use eoscan::biomarkers::{biomarkers_with, bzh_grade_bin};
use eoscan::classification::{evaluate_protocol, records::labels, route, ModelSpec, Route};
use eoscan::seg_metrics::{confusion, evaluate, image_metrics, ZeroDivision};
use eoscan::segmentation::{component_areas, filter_small_components, Connectivity};
use eoscan::stats::{ks_two_sample, roc};
use eoscan::synth::{make_cohort, make_slide, CohortSpec, SlideSpec};
use eoscan::{oracle_backend, scan, subpatch_grid, Bitmap, PixelRect, ScanConfig, SemanticMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn geometry_identities() -> Check {
    for (origin, side, overlap, expect) in [
        ((0, 0), 2144, 24, vec![0, 424, 848, 1272, 1696]),
        ((500, 1000), 2144, 24, vec![0, 424, 848, 1272, 1696]),
        ((0, 0), 1200, 72, vec![0, 376, 752]),
    ] {
        let region = PixelRect::square(origin.0, origin.1, side).map_err(e)?;
        let grid = subpatch_grid(region, 448, overlap).map_err(e)?;
        let n = expect.len();
        ensure(grid.n_rows == n && grid.n_cols == n, format!("{side}: grid {}x{}", grid.n_rows, grid.n_cols))?;
        ensure(expect[n - 1] + 448 == side, "last tile must end flush")?;
        for (r, &dy) in expect.iter().enumerate() {
            for (c, &dx) in expect.iter().enumerate() {
                let want = PixelRect::square(origin.0 + dx, origin.1 + dy, 448).map_err(e)?;
                ensure(grid.tiles[r * n + c] == want, format!("{side}: tile ({r},{c}) is {:?}", grid.tiles[r * n + c]))?;
            }
        }
    }
    Ok("25 sub-patches tile 2144 px, 9 tile 1200 px, coordinates exact".into())
}

fn oracle_equivalence() -> Check {
    let scan_cfg = ScanConfig::default();
    let mut windows = 0;
    let mut max_err: f64 = 0.0;
    for seed in 0..50u64 {
        let spec = SlideSpec::random(format!("acc{seed}"), seed, 6000, scan_cfg);
        let slide = make_slide(&spec).map_err(e)?;
        let out = scan(&oracle_backend(slide.annotation.clone()), &slide.tissue, spec.width, spec.height, &spec.scan)
            .map_err(e)?;
        let got = biomarkers_with(&out.eos_map, &out.bz_map, &spec.biomarkers).map_err(e)?.values;
        let want = slide.expected;
        ensure(got.pec == want.pec, format!("seed {seed}: pec {} vs oracle {}", got.pec, want.pec))?;
        for (name, a, b) in [("sec", got.sec, want.sec), ("pbz", got.pbz, want.pbz), ("sbz", got.sbz, want.sbz)] {
            max_err = max_err.max((a - b).abs());
            ensure((a - b).abs() <= 1e-12, format!("seed {seed}: {name} {a} vs oracle {b}"))?;
        }
        windows += out.eos_map.cells.len();
    }
    Ok(format!("50 random slides, {windows} windows, max fraction error {max_err:e}"))
}

/// `n` pixels filled row-major in a block `width` wide: one 8-connected component.
fn blob(bitmap: &mut Bitmap, x0: usize, y0: usize, width: usize, n: usize) {
    for k in 0..n {
        bitmap.set(x0 + k % width, y0 + k / width, true);
    }
}

fn noise_filter() -> Check {
    let mut eos = Bitmap::new(200, 200);
    let mut bz = Bitmap::new(200, 200);
    blob(&mut eos, 0, 0, 60, 1799);
    blob(&mut eos, 0, 100, 60, 1800);
    blob(&mut bz, 0, 0, 60, 2006);
    blob(&mut bz, 0, 100, 60, 2007);
    let region = PixelRect::new(0, 0, 200, 200).map_err(e)?;
    let mask = SemanticMask::from_channels(region, eos, bz).map_err(e)?;
    let out = filter_small_components(&mask, 1800, 2007);
    ensure(component_areas(&out.eos, Connectivity::Eight) == vec![1800], "eos 1799 removed, 1800 kept")?;
    ensure(component_areas(&out.bz, Connectivity::Eight) == vec![2007], "bz 2006 removed, 2007 kept")?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let region = PixelRect::new(0, 0, 128, 128).map_err(e)?;
    let mut kept = 0;
    for i in 0..1000 {
        let p: f64 = rng.gen_range(0.2..0.8);
        let eos = Bitmap::from_fn(128, 128, |_, _| rng.gen_bool(p));
        let bz = Bitmap::from_fn(128, 128, |_, _| rng.gen_bool(p));
        let mask = SemanticMask::from_channels(region, eos, bz).map_err(e)?;
        let once = filter_small_components(&mask, 1800, 2007);
        let twice = filter_small_components(&once, 1800, 2007);
        ensure(once == twice, format!("mask {i}: filtering is not idempotent"))?;
        kept += usize::from(once.eos.count_ones() > 0);
    }
    Ok(format!("boundaries exact, idempotent on 1000 masks ({kept} keep a component)"))
}

fn seg_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let region = PixelRect::new(0, 0, 64, 64).map_err(e)?;
    let random_mask = |rng: &mut ChaCha8Rng| {
        let mut channel = || {
            let p: f64 = *[0.0, 0.01, 0.3, 0.7, 1.0].get(rng.gen_range(0..5)).unwrap();
            Bitmap::from_fn(64, 64, |_, _| rng.gen_bool(p))
        };
        let (eos, bz) = (channel(), channel());
        SemanticMask::from_channels(region, eos, bz).unwrap()
    };
    let pairs: Vec<(SemanticMask, SemanticMask)> = (0..200).map(|_| (random_mask(&mut rng), random_mask(&mut rng))).collect();

    // per-pixel tallies with the absent-in-both-scores-1 convention
    let ratio = |n: f64, d: f64, absent: f64| if d == 0.0 { absent } else { n / d };
    let brute = |gt: &Bitmap, pred: &Bitmap| {
        let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for y in 0..64 {
            for x in 0..64 {
                match (gt.get(x, y), pred.get(x, y)) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
        }
        let empty = if fp + fn_ == 0.0 { 1.0 } else { 0.0 };
        [ratio(tp, tp + fp + fn_, 1.0), ratio(tp, tp + fp, empty), ratio(tp, tp + fn_, empty), ratio(tn, tn + fp, 1.0)]
    };
    let mut sums = [[0.0; 4]; 2];
    for (gt, pred) in &pairs {
        for (k, (g, p)) in [(&gt.eos, &pred.eos), (&gt.bz, &pred.bz)].into_iter().enumerate() {
            let m = brute(g, p);
            for j in 0..4 {
                sums[k][j] += m[j];
            }
            let im = image_metrics(&confusion(g, p).map_err(e)?, ZeroDivision::Perfect);
            let (iou, prec, rec) = (im.iou.unwrap(), im.precision.unwrap(), im.recall.unwrap());
            ensure(iou <= prec.min(rec) + 1e-15, format!("IoU {iou} exceeds min(precision {prec}, recall {rec})"))?;
        }
    }
    let report = evaluate(&pairs, ZeroDivision::Perfect).map_err(e)?;
    for (k, got) in [report.eos_intact.values(), report.bz.values()].into_iter().enumerate() {
        for j in 0..4 {
            let want = sums[k][j] / 200.0;
            ensure((got[j] - want).abs() <= 1e-12, format!("category {k} metric {j}: {} vs oracle {want}", got[j]))?;
        }
    }
    let perfect: Vec<_> = pairs.iter().map(|(g, _)| (g.clone(), g.clone())).collect();
    let report = evaluate(&perfect, ZeroDivision::Perfect).map_err(e)?;
    ensure(report.overall.values().iter().all(|&v| v == 1.0), "perfect prediction must score 1.0")?;
    ensure(report.eos_intact.values().iter().chain(report.bz.values().iter()).all(|&v| v == 1.0), "perfect per category")?;
    Ok("200 pairs match the pixel oracle; perfect = 1.0; IoU <= min(P, R)".into())
}

fn routing() -> Check {
    for delta in 1..=12u32 {
        for pec in 0..=100u32 {
            let inside = 15 - delta as i64 <= pec as i64 && pec as i64 <= 15 + delta as i64;
            let want = if inside { Route::In } else { Route::Out };
            ensure(route(delta, pec) == want, format!("delta {delta}, pec {pec}"))?;
        }
    }
    let window: Vec<u32> = (0..=100).filter(|&p| route(9, p) == Route::In).collect();
    ensure(window == (6..=24).collect::<Vec<_>>(), format!("delta 9 window is {window:?}"))?;
    Ok("1212 cases match; delta 9 routes exactly [6, 24]".into())
}

fn majority_prior(records: &[eoscan::classification::SlideRecord]) -> f64 {
    let y = labels(records).unwrap();
    let pos = y.iter().filter(|&&l| l).count() as f64 / y.len() as f64;
    pos.max(1.0 - pos)
}

fn classifier_sanity() -> Check {
    let seeds: Vec<u64> = (0..20).collect();
    let separated = make_cohort(&CohortSpec::separated(500, 11)).map_err(e)?;
    let no_signal = make_cohort(&CohortSpec::no_signal(500, 12)).map_err(e)?;
    let prior = majority_prior(&no_signal);
    let mut parts = Vec::new();
    for spec in [ModelSpec::Lda, ModelSpec::svm(), ModelSpec::mlp(vec![100, 20, 100])] {
        let sep = evaluate_protocol(&separated, &spec, &seeds, 0.8).map_err(e)?.median.accuracy;
        let flat = evaluate_protocol(&no_signal, &spec, &seeds, 0.8).map_err(e)?.median.accuracy;
        ensure(sep >= 0.95, format!("{}: separated median accuracy {sep:.3} < 0.95", spec.name()))?;
        ensure((flat - prior).abs() <= 0.10, format!("{}: no-signal accuracy {flat:.3} vs prior {prior:.3}", spec.name()))?;
        parts.push(format!("{} {sep:.3}/{flat:.3}", spec.name()));
    }
    Ok(format!("separated/no-signal medians: {} (prior {prior:.3})", parts.join(", ")))
}

fn windowed_vs_flat() -> Check {
    let seeds: Vec<u64> = (0..20).collect();
    let records = make_cohort(&CohortSpec::windowed_rule(500, 9, 13)).map_err(e)?;
    let flat = evaluate_protocol(&records, &ModelSpec::Lda, &seeds, 0.8).map_err(e)?.median.accuracy;
    let windowed_spec =
        ModelSpec::Windowed { delta: 9, c_in: Box::new(ModelSpec::Lda), c_out: Box::new(ModelSpec::Lda) };
    let windowed = evaluate_protocol(&records, &windowed_spec, &seeds, 0.8).map_err(e)?.median.accuracy;
    ensure(
        windowed - flat >= 0.05,
        format!("windowed {windowed:.3} vs flat {flat:.3}: gain below 5 points"),
    )?;
    Ok(format!("windowed LDA {windowed:.3} vs flat LDA {flat:.3}"))
}

fn statistics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..100 {
        let (na, nb) = (rng.gen_range(1..80), rng.gen_range(1..80));
        // coarse values so ties occur
        let draw = |rng: &mut ChaCha8Rng, n: usize, shift: f64| -> Vec<f64> {
            (0..n).map(|_| (rng.gen_range(0.0..10.0f64) + shift).round() / 2.0).collect()
        };
        let a = draw(&mut rng, na, 0.0);
        let shift = rng.gen_range(-2.0..2.0);
        let b = draw(&mut rng, nb, shift);
        let ecdf = |s: &[f64], z: f64| s.iter().filter(|&&v| v <= z).count() as f64 / s.len() as f64;
        let d = a.iter().chain(&b).map(|&z| (ecdf(&a, z) - ecdf(&b, z)).abs()).fold(0.0, f64::max);
        let got = ks_two_sample(&a, &b).map_err(e)?.d_statistic;
        ensure((got - d).abs() <= 1e-12, format!("pair {i}: D {got} vs oracle {d}"))?;
        ensure(ks_two_sample(&a, &a).map_err(e)?.d_statistic == 0.0, "identical samples")?;
        let far: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        ensure(ks_two_sample(&a, &far).map_err(e)?.d_statistic == 1.0, "disjoint supports")?;
    }
    for i in 0..100 {
        let n = rng.gen_range(2..200);
        let mut scores: Vec<f64> = (0..n).map(|k| k as f64 + rng.gen_range(0.0..0.5)).collect();
        scores.reverse();
        let mut y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        y[0] = true;
        y[1] = false;
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| y[k]);
        let wins = pos.iter().flat_map(|&p| neg.iter().map(move |&q| (p, q))).filter(|&(p, q)| scores[p] > scores[q]).count();
        let u = wins as f64 / (pos.len() * neg.len()) as f64;
        let auc = roc(&scores, &y).map_err(e)?.auc;
        ensure((auc - u).abs() <= 1e-12, format!("roc {i}: AUC {auc} vs Mann-Whitney {u}"))?;
    }
    Ok("KS matches the ECDF sweep on 100 pairs; AUC equals Mann-Whitney on 100 sets".into())
}

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_eoscan")).args(args).output().map_err(e)?;
    ensure(out.status.success(), format!("eoscan {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn parallel_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    run_cli(&["synth", "slide", "--size", "10000", "10000", "--seed", "9", "--out-dir", &d("slide")])?;
    let annotation = std::fs::read_dir(dir.path().join("slide"))
        .map_err(e)?
        .filter_map(|f| f.ok().map(|f| f.path()))
        .find(|p| p.to_string_lossy().ends_with(".annotation.json"))
        .ok_or("synth slide wrote no annotation")?;
    let annotation = annotation.to_string_lossy().into_owned();
    let mut times = Vec::new();
    for threads in ["1", "4"] {
        let start = Instant::now();
        run_cli(&["--threads", threads, "scan", "--annotation", &annotation, "--out-dir", &d(threads)])?;
        times.push(start.elapsed());
    }
    // score maps byte for byte; the JSON summary records the thread count, so compare its biomarkers
    let mut compared = 0;
    for entry in std::fs::read_dir(dir.path().join("1")).map_err(e)? {
        let name = entry.map_err(e)?.file_name().to_string_lossy().into_owned();
        let one = std::fs::read(Path::new(&d("1")).join(&name)).map_err(e)?;
        let four = std::fs::read(Path::new(&d("4")).join(&name)).map_err(e)?;
        if name.ends_with(".csv") {
            ensure(one == four, format!("{name} differs between 1 and 4 threads"))?;
            compared += 1;
        } else {
            let parse = |b: &[u8]| serde_json::from_slice::<serde_json::Value>(b).map(|v| v["biomarkers"].clone());
            ensure(parse(&one).map_err(e)? == parse(&four).map_err(e)?, format!("{name}: biomarkers differ"))?;
        }
    }
    ensure(compared == 3, format!("expected 3 score-map files, found {compared}"))?;
    ensure(times[1] < Duration::from_secs(60), format!("4-thread scan took {:.1}s", times[1].as_secs_f64()))?;
    Ok(format!(
        "{compared} score-map files byte-identical; 1 thread {:.1}s, 4 threads {:.1}s ({} cpus)",
        times[0].as_secs_f64(),
        times[1].as_secs_f64(),
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    ))
}

fn bzh_binning() -> Check {
    let up = |x: f64| f64::from_bits(x.to_bits() + 1);
    let table = [(0.15, 0), (up(0.15), 1), (0.15 + 1e-9, 1), (0.33, 2), (0.66, 2), (up(0.66), 3), (0.66 + 1e-9, 3)];
    for (pbz, want) in table {
        ensure(bzh_grade_bin(pbz) == want, format!("bzh_grade_bin({pbz}) = {}, want {want}", bzh_grade_bin(pbz)))?;
    }
    Ok("0.15 -> 0, 0.15+ -> 1, 0.33 -> 2, 0.66 -> 2, 0.66+ -> 3".into())
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let checks: [(u32, &str, u64, fn() -> Check); 10] = [
        (1, "geometry identities", 1, geometry_identities),
        (2, "oracle equivalence", 300, oracle_equivalence),
        (3, "noise filter", 30, noise_filter),
        (4, "segmentation metrics", 30, seg_metrics),
        (5, "window routing", 1, routing),
        (6, "classifier sanity", 120, classifier_sanity),
        (7, "windowed vs flat", 120, windowed_vs_flat),
        (8, "statistics", 30, statistics),
        (9, "parallel determinism", 600, parallel_determinism),
        (10, "bzh binning", 1, bzh_binning),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in checks {
        if filter.as_deref().is_some_and(|f| !name.contains(f) && f != id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let result = match result {
            Ok(msg) if secs > budget as f64 => Err(format!("{msg}; took {secs:.1}s, budget {budget}s")),
            other => other,
        };
        match result {
            Ok(msg) => println!("criterion {id:>2} {name}: PASS ({secs:.2}s) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({secs:.2}s) {msg}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
