use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use eoscan::annotation::{self, resolve_tissue, SlideAnnotation, TissueMask, DEFAULT_LUMINANCE_CUTOFF};
use eoscan::biomarkers::{biomarkers_with, BiomarkerReport};
use eoscan::classification::{
    baseline_sweep, default_candidates, evaluate_protocol, read_cohort, train as train_model, write_cohort, EvalReport,
    Model, ModelSpec, SlideRecord,
};
use eoscan::classification::records::SEVERE_PEC;
use eoscan::io::{read_pgm, write_pgm, BZ_SUFFIX, EOS_SUFFIX, TISSUE_SUFFIX};
use eoscan::scan::scan as run_scan;
use eoscan::seg_metrics::evaluate;
use eoscan::segmentation::{degraded_backend, oracle_backend, MaskBackend, SegmentationBackend};
use eoscan::stats::{ks_two_sample, KsResult};
use eoscan::synth::{make_cohort, make_slide, CohortSpec, SlideSpec};
use eoscan::{Error, PixelRect, Result, SemanticMask};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Kind, ModelArgs, Preset};

/// Every JSON artifact carries the resolved configuration.
#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, config: &RunConfig, body: T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&WithConfig { config, body })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn load_cohort(path: &Path, require_labels: bool) -> Result<Vec<SlideRecord>> {
    let file = fs::File::open(path)?;
    read_cohort(file, require_labels).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn rasterize(annotation: &Path, out_dir: &Path, flip_rate: Option<f64>, flip_seed: u64) -> Result<()> {
    let ann = SlideAnnotation::load(annotation).map_err(|e| with_file(annotation, e))?;
    ensure_dir(out_dir)?;
    let region = ann.slide_rect()?;
    let mask = match flip_rate {
        Some(rate) => degraded_backend(oracle_backend(ann.clone()), rate, flip_seed)?.segment(region)?,
        None => annotation::rasterize(&ann, region)?,
    };
    write_pgm(&out_dir.join(format!("{}{EOS_SUFFIX}", ann.slide_id)), &mask.eos)?;
    write_pgm(&out_dir.join(format!("{}{BZ_SUFFIX}", ann.slide_id)), &mask.bz)?;
    if ann.tissue_polygons.is_some() {
        let tissue = resolve_tissue(&ann, None, DEFAULT_LUMINANCE_CUTOFF)?;
        write_pgm(&out_dir.join(format!("{}{TISSUE_SUFFIX}", ann.slide_id)), &tissue.bitmap)?;
    }
    Ok(())
}

fn with_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Json(j) => Error::Schema(format!("{}: {j}", path.display())),
        Error::Validation { what, reason } => Error::Validation { what: format!("{} ({what})", path.display()), reason },
        other => other,
    }
}

pub enum ScanInput {
    Annotation(PathBuf),
    Masks { eos: PathBuf, bz: PathBuf, slide_id: Option<String> },
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    slide_id: &'a str,
    backend: &'a str,
    width: usize,
    height: usize,
    n_rows: usize,
    n_cols: usize,
    biomarkers: &'a BiomarkerReport,
}

pub fn scan(
    cfg: &RunConfig,
    input: ScanInput,
    tissue_mask: Option<&Path>,
    out_dir: &Path,
    append_cohort: Option<&Path>,
) -> Result<()> {
    let (slide_id, backend, annotated_tissue): (String, Box<dyn SegmentationBackend>, Option<TissueMask>) = match input {
        ScanInput::Annotation(path) => {
            let ann = SlideAnnotation::load(&path).map_err(|e| with_file(&path, e))?;
            let tissue = ann.tissue_polygons.as_ref().map(|_| resolve_tissue(&ann, None, DEFAULT_LUMINANCE_CUTOFF)).transpose()?;
            (ann.slide_id.clone(), Box::new(oracle_backend(ann)), tissue)
        }
        ScanInput::Masks { eos, bz, slide_id } => {
            let id = slide_id.unwrap_or_else(|| {
                let name = eos.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                name.strip_suffix(EOS_SUFFIX).unwrap_or(&name).to_string()
            });
            (id, Box::new(MaskBackend::load(&eos, &bz)?), None)
        }
    };
    let (width, height) = backend.slide_size();
    let slide = PixelRect::new(0, 0, width, height)?;
    let tissue = match (tissue_mask, annotated_tissue) {
        (Some(path), _) => {
            let bitmap = read_pgm(path)?;
            TissueMask::new(slide, bitmap).map_err(|_| Error::Validation {
                what: path.display().to_string(),
                reason: format!("tissue mask size differs from the {width}x{height} slide"),
            })?
        }
        (None, Some(t)) => t,
        (None, None) => TissueMask::full(slide),
    };
    let out = run_scan(backend.as_ref(), &tissue, width, height, &cfg.scan_config())?;
    let report = biomarkers_with(&out.eos_map, &out.bz_map, &cfg.biomarker_config())?;
    ensure_dir(out_dir)?;
    fs::write(out_dir.join(format!("{slide_id}.scan.csv")), out.to_csv())?;
    fs::write(out_dir.join(format!("{slide_id}.eos_heat.csv")), out.eos_map.heat_csv())?;
    fs::write(out_dir.join(format!("{slide_id}.bz_heat.csv")), out.bz_map.heat_csv())?;
    let summary = ScanSummary {
        slide_id: &slide_id,
        backend: backend.name(),
        width,
        height,
        n_rows: out.eos_map.grid.n_rows,
        n_cols: out.eos_map.grid.n_cols,
        biomarkers: &report,
    };
    write_json(&out_dir.join(format!("{slide_id}.biomarkers.json")), cfg, summary)?;
    if let Some(path) = append_cohort {
        append_row(path, SlideRecord { slide_id, features: report.values, hss: None, severe: None })?;
    }
    Ok(())
}

fn append_row(path: &Path, record: SlideRecord) -> Result<()> {
    let mut buf = Vec::new();
    write_cohort(&mut buf, &[record])?;
    let text = String::from_utf8(buf).expect("csv output is utf-8");
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    let chunk = if exists { text.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default() } else { text };
    use std::io::Write;
    fs::OpenOptions::new().create(true).append(true).open(path)?.write_all(chunk.as_bytes())?;
    Ok(())
}

fn mask_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(EOS_SUFFIX) {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

fn load_pair(dir: &Path, id: &str) -> Result<SemanticMask> {
    let eos = read_pgm(&dir.join(format!("{id}{EOS_SUFFIX}")))?;
    let bz = read_pgm(&dir.join(format!("{id}{BZ_SUFFIX}")))?;
    let region = PixelRect::new(0, 0, eos.width(), eos.height())?;
    SemanticMask::from_channels(region, eos, bz)
}

pub fn eval_seg(cfg: &RunConfig, gt_dir: &Path, pred_dir: &Path, out_dir: &Path) -> Result<()> {
    let (gt, pred) = (mask_ids(gt_dir)?, mask_ids(pred_dir)?);
    let unmatched: Vec<&String> = gt.symmetric_difference(&pred).collect();
    if !unmatched.is_empty() {
        return Err(Error::Validation {
            what: "mask directories".into(),
            reason: format!("unmatched ids: {unmatched:?}"),
        });
    }
    if gt.is_empty() {
        return Err(Error::Validation { what: gt_dir.display().to_string(), reason: format!("no *{EOS_SUFFIX} files") });
    }
    let pairs = gt
        .iter()
        .map(|id| Ok((load_pair(gt_dir, id)?, load_pair(pred_dir, id)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&pairs, cfg.zero_division)?;
    ensure_dir(out_dir)?;
    fs::write(out_dir.join("seg_metrics.csv"), report.to_csv())?;
    write_json(&out_dir.join("seg_metrics.json"), cfg, &report)
}

#[derive(Serialize)]
struct SlideExpectation<'a> {
    spec: &'a SlideSpec,
    expected: eoscan::BiomarkerVector,
}

pub fn synth_slide(
    cfg: &RunConfig,
    spec_path: Option<&Path>,
    seed: u64,
    max_side: usize,
    size: Option<Vec<usize>>,
    out_dir: &Path,
) -> Result<()> {
    let spec = match (spec_path, size) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<SlideSpec>(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        }
        (None, Some(dims)) => {
            if dims[0] < cfg.kernel || dims[1] < cfg.kernel {
                return Err(Error::Parameter(format!("slide size {dims:?} is smaller than the kernel {}", cfg.kernel)));
            }
            SlideSpec::random_sized(format!("synth{seed}"), seed, dims[0], dims[1], cfg.scan_config())
        }
        (None, None) => SlideSpec::random(format!("synth{seed}"), seed, max_side, cfg.scan_config()),
    };
    let slide = make_slide(&spec)?;
    ensure_dir(out_dir)?;
    let id = &spec.slide_id;
    fs::write(out_dir.join(format!("{id}.annotation.json")), slide.annotation.to_json_string()? + "\n")?;
    write_json(&out_dir.join(format!("{id}.expected.json")), cfg, SlideExpectation { spec: &spec, expected: slide.expected })
}

pub fn synth_cohort(cfg: &RunConfig, preset: Preset, n: usize, seed: u64, out: &Path) -> Result<()> {
    let spec = match preset {
        Preset::Separated => CohortSpec::separated(n, seed),
        Preset::NoSignal => CohortSpec::no_signal(n, seed),
        Preset::Windowed => CohortSpec::windowed_rule(n, cfg.delta, seed),
    };
    let records = make_cohort(&spec)?;
    write_cohort(fs::File::create(out)?, &records)
}

fn model_spec(cfg: &RunConfig, args: &ModelArgs) -> Result<ModelSpec> {
    if let Some(path) = &args.model_spec {
        let text = fs::read_to_string(path)?;
        return serde_json::from_str(&text).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())));
    }
    let mut flat = match args.kind {
        Kind::Lda => ModelSpec::Lda,
        Kind::Svm => ModelSpec::svm(),
        Kind::Mlp => ModelSpec::mlp(args.hidden.clone().unwrap_or_else(|| vec![100, 20, 100])),
    };
    if let (Some(n), ModelSpec::Svm { epochs, .. } | ModelSpec::Mlp { epochs, .. }) = (args.epochs, &mut flat) {
        *epochs = n;
    }
    let spec = if args.windowed {
        ModelSpec::Windowed { delta: cfg.delta, c_in: Box::new(flat.clone()), c_out: Box::new(flat) }
    } else {
        flat
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    spec: ModelSpec,
    seed: u64,
    model: Model,
}

pub fn train(cfg: &RunConfig, cohort: &Path, args: &ModelArgs, seed: u64, out: &Path) -> Result<()> {
    let records = load_cohort(cohort, true)?;
    let spec = model_spec(cfg, args)?;
    let model = train_model(&spec, &records, seed)?;
    write_json(out, cfg, SavedModel { spec, seed, model })
}

pub fn classify(cohort: &Path, model_path: &Path, out: &Path) -> Result<()> {
    let records = load_cohort(cohort, false)?;
    let text = fs::read_to_string(model_path)?;
    let saved: SavedModel =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", model_path.display())))?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["slide_id", "score", "predicted_severe", "severe"])?;
    for r in &records {
        let score = saved.model.score(&r.features);
        let pred = saved.model.predict(&r.features);
        let truth = r.severe.map(|s| u8::from(s).to_string()).unwrap_or_default();
        w.write_record([r.slide_id.clone(), score.to_string(), u8::from(pred).to_string(), truth])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct KsSummary {
    pec: KsResult,
    sec: KsResult,
    pbz: KsResult,
    sbz: KsResult,
}

/// Severe versus non-severe distributions of each biomarker.
fn ks_summary(records: &[SlideRecord]) -> Result<KsSummary> {
    let column = |k: usize, severe: bool| -> Vec<f64> {
        records.iter().filter(|r| r.severe == Some(severe)).map(|r| r.features.as_array()[k]).collect()
    };
    let ks = |k: usize| ks_two_sample(&column(k, true), &column(k, false));
    Ok(KsSummary { pec: ks(0)?, sec: ks(1)?, pbz: ks(2)?, sbz: ks(3)? })
}

/// Basal-zone distributions of active (PEC >= 15) versus non-active slides;
/// `None` when either group is empty.
#[derive(Serialize)]
struct ActivityKs {
    n_active: usize,
    n_inactive: usize,
    pbz: KsResult,
    sbz: KsResult,
}

fn activity_ks(records: &[SlideRecord]) -> Result<Option<ActivityKs>> {
    let (active, inactive): (Vec<&SlideRecord>, Vec<&SlideRecord>) =
        records.iter().partition(|r| r.features.pec >= SEVERE_PEC);
    if active.is_empty() || inactive.is_empty() {
        return Ok(None);
    }
    let col = |rs: &[&SlideRecord], f: fn(&SlideRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
    Ok(Some(ActivityKs {
        n_active: active.len(),
        n_inactive: inactive.len(),
        pbz: ks_two_sample(&col(&active, |r| r.features.pbz), &col(&inactive, |r| r.features.pbz))?,
        sbz: ks_two_sample(&col(&active, |r| r.features.sbz), &col(&inactive, |r| r.features.sbz))?,
    }))
}

fn metrics_csv(report: &EvalReport) -> String {
    let mut out = String::from("row,accuracy,sensitivity,specificity,miss_rate,false_alarm_rate\n");
    let mut push = |name: String, v: [f64; 5]| {
        let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        out.push_str(&format!("{name},{}\n", cells.join(",")));
    };
    for (seed, m) in report.seeds.iter().zip(&report.per_seed) {
        push(format!("seed{seed}"), m.values());
    }
    push("median".into(), report.median.values());
    push("std".into(), report.std.values());
    out
}

#[derive(Serialize)]
struct ReportBody<'a> {
    evaluation: &'a EvalReport,
    ks: KsSummary,
    ks_active: Option<ActivityKs>,
}

pub fn report(cfg: &RunConfig, cohort: &Path, args: &ModelArgs, out_dir: &Path) -> Result<()> {
    let records = load_cohort(cohort, true)?;
    let spec = model_spec(cfg, args)?;
    let evaluation = in_pool(cfg.threads, || evaluate_protocol(&records, &spec, &cfg.seeds, cfg.split))??;
    let ks = ks_summary(&records)?;
    let ks_active = activity_ks(&records)?;
    ensure_dir(out_dir)?;
    fs::write(out_dir.join("metrics.csv"), metrics_csv(&evaluation))?;
    let sweep = baseline_sweep(&records, &default_candidates(&records))?;
    if let Some(roc) = &sweep.roc {
        fs::write(out_dir.join("roc_pec.csv"), roc.to_csv())?;
    }
    write_json(&out_dir.join("report.json"), cfg, ReportBody { evaluation: &evaluation, ks, ks_active })
}

pub fn sweep_baseline(cfg: &RunConfig, cohort: &Path, out_dir: &Path) -> Result<()> {
    let records = load_cohort(cohort, true)?;
    let sweep = baseline_sweep(&records, &default_candidates(&records))?;
    ensure_dir(out_dir)?;
    if let Some(roc) = &sweep.roc {
        fs::write(out_dir.join("roc_pec.csv"), roc.to_csv())?;
    }
    write_json(&out_dir.join("baseline.json"), cfg, &sweep)
}

pub fn grid_mlp(cfg: &RunConfig, cohort: &Path, epochs: Option<usize>, limit: Option<usize>, out: &Path) -> Result<()> {
    let records = load_cohort(cohort, true)?;
    let archs = eoscan::classification::mlp_architectures();
    let take = limit.unwrap_or(archs.len()).min(archs.len());
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["hidden", "median_accuracy", "std_accuracy", "median_sensitivity", "median_specificity"])?;
    for hidden in &archs[..take] {
        let mut spec = ModelSpec::mlp(hidden.clone());
        if let (Some(n), ModelSpec::Mlp { epochs: e, .. }) = (epochs, &mut spec) {
            *e = n;
        }
        let r = in_pool(cfg.threads, || evaluate_protocol(&records, &spec, &cfg.seeds, cfg.split))??;
        let name: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
        w.write_record([
            name.join("-"),
            r.median.accuracy.to_string(),
            r.std.accuracy.to_string(),
            r.median.sensitivity.to_string(),
            r.median.specificity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
