//! Experiment runner: colour pre-processing, segmentation, post-processing
//! and evaluation over a directory of frames.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! masks/<stem>.png      predicted masks (0/255), one per processed frame
//! overlays/<stem>.png   TP/FP/TN/FN overlays for evaluated frames
//! metrics.csv           per-frame metrics plus a mean row
//! manifest.json         config echo, stage order, timings, snake flags
//! ```
//!
//! Everything except the manifest depends only on the config and the
//! inputs; wall-clock timings are confined to the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::colorspace::{preprocess_pcc, PccConfig};
use crate::config::{ExperimentConfig, Method, PostConfig, PostOp};
use crate::error::{Error, Result};
use crate::gmm::{connected_components, BackgroundModel, FrameRef};
use crate::imgcore::{load_image, load_mask, save_image, save_mask, to_grayscale, BinaryMask, ByteImage, FrameSequence, ScalarField};
use crate::metrics::{confusion, metrics_from_counts, render_overlay, write_csv_file, BatchReport, ImageEvaluation};
use crate::morphology::{closing, opening};
use crate::par;
use crate::snakes::{run_macwe, run_mgac, SnakeOutcome};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub index: usize,
    pub name: String,
    /// Wall-clock time of pre-processing, segmentation and post-processing.
    pub millis: f64,
    pub evaluated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub parallel: bool,
    pub config: ExperimentConfig,
    /// Stage order as executed, e.g. `["pcc(V,HE)", "gmm", "closing(square3)", "eval"]`.
    pub pipeline: Vec<String>,
    pub frames: Vec<FrameRecord>,
    pub degenerate_frames: Vec<usize>,
    pub masks_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlays_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_csv: Option<String>,
    pub total_millis: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub batch: Option<BatchReport>,
    /// Frame names in CSV row order.
    pub evaluated: Vec<String>,
    pub manifest: RunManifest,
}

fn millis_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn pcc_label(p: &PccConfig) -> String {
    let channel = serde_json::to_value(p.channel).expect("serializable");
    let enhancement = serde_json::to_value(p.enhancement).expect("serializable");
    format!(
        "pcc({},{})",
        channel.as_str().unwrap_or("?"),
        enhancement.as_str().unwrap_or("?")
    )
}

/// Stage labels in execution order.
pub fn pipeline_stages(cfg: &ExperimentConfig) -> Vec<String> {
    let mut stages = Vec::new();
    if let Some(p) = &cfg.pcc {
        stages.push(pcc_label(p));
    }
    stages.push(cfg.method.name().to_string());
    if let Some(post) = &cfg.post {
        let op = match post.op {
            PostOp::Opening => "opening",
            PostOp::Closing => "closing",
        };
        stages.push(format!("{op}({})", post.element));
        if let Some(n) = post.min_area {
            stages.push(format!("min_area({n})"));
        }
    }
    if cfg.eval.is_some() {
        stages.push("eval".into());
    }
    stages
}

/// Applies the configured opening/closing and blob filter to a predicted mask.
pub fn post_process(mask: BinaryMask, post: Option<&PostConfig>) -> Result<BinaryMask> {
    let Some(post) = post else {
        return Ok(mask);
    };
    let element = post.element.resolve()?;
    let mask = match post.op {
        PostOp::Opening => opening(&mask, &element),
        PostOp::Closing => closing(&mask, &element),
    };
    Ok(match post.min_area {
        Some(n) if n > 1 => connected_components(&mask).filter_min_area(n).to_mask(),
        _ => mask,
    })
}

/// Scalar input for the snakes: the pre-processed channel when configured,
/// otherwise luma.
pub fn snake_input(img: &ByteImage, pcc: Option<&PccConfig>) -> Result<ScalarField> {
    match pcc {
        Some(p) => preprocess_pcc(img, p),
        None => Ok(to_grayscale(img)),
    }
}

/// Runs the configured snake on one image and post-processes the result.
pub fn segment_image(img: &ByteImage, cfg: &ExperimentConfig) -> Result<(BinaryMask, SnakeOutcome)> {
    let init = cfg
        .contour_init()
        .ok_or_else(|| Error::config("snakes.init: snakes need an initial contour"))?;
    let field = snake_input(img, cfg.pcc.as_ref())?;
    let outcome = match cfg.method {
        Method::Macwe => run_macwe(&field, init, &cfg.macwe.unwrap_or_default())?,
        Method::Mgac => {
            let m = cfg.mgac.unwrap_or_default();
            run_mgac(&field, init, &m.snake_params(), &m.gimage_params())?
        }
        Method::Gmm => return Err(Error::config("method: gmm is not a single-image method")),
    };
    let mask = post_process(outcome.mask.clone(), cfg.post.as_ref())?;
    Ok((mask, outcome))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn mask_name(frame: &Path) -> String {
    let stem = frame.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{stem}.png")
}

/// Ground truth for `frame`: same file name in `gt_dir`, else `<stem>.png`.
fn gt_path(gt_dir: &Path, frame: &Path) -> PathBuf {
    let exact = gt_dir.join(file_name(frame));
    if exact.is_file() {
        exact
    } else {
        gt_dir.join(mask_name(frame))
    }
}

fn check_indices(what: &str, indices: &[usize], n: usize) -> Result<()> {
    match indices.iter().find(|i| **i >= n) {
        Some(i) => Err(Error::config(format!(
            "{what}: frame index {i} out of range for {n} frame(s)"
        ))),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Processed {
    mask: BinaryMask,
    millis: f64,
    outcome: Option<(u32, bool)>,
}

fn run_gmm(cfg: &ExperimentConfig, frames: &[PathBuf]) -> Result<Vec<Processed>> {
    let params = cfg.gmm.clone().unwrap_or_default();
    let mut model: Option<BackgroundModel> = None;
    let mut out = Vec::with_capacity(frames.len());
    for path in frames {
        let start = Instant::now();
        let img = load_image(path)?;
        let field = cfg.pcc.as_ref().map(|p| preprocess_pcc(&img, p)).transpose()?;
        let frame: FrameRef = match &field {
            Some(f) => f.into(),
            None => (&img).into(),
        };
        let model = match &mut model {
            Some(m) => m,
            None => {
                let channels = if field.is_some() { 1 } else { img.channels() };
                model.insert(BackgroundModel::new(img.width(), img.height(), channels, params.clone())?)
            }
        };
        let mask = post_process(model.process_frame(frame)?, cfg.post.as_ref())?;
        out.push(Processed {
            mask,
            millis: millis_since(start),
            outcome: None,
        });
    }
    Ok(out)
}

fn run_snakes(cfg: &ExperimentConfig, frames: &[PathBuf]) -> Result<Vec<Processed>> {
    par::map(frames, |path| {
        let start = Instant::now();
        let img = load_image(path)?;
        let (mask, outcome) = segment_image(&img, cfg)?;
        Ok(Processed {
            mask,
            millis: millis_since(start),
            outcome: Some((outcome.iterations_run, outcome.degenerate)),
        })
    })
    .into_iter()
    .collect()
}

/// Runs the full experiment described by `cfg` and writes its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let run_start = Instant::now();
    let mut cfg = cfg.clone();
    cfg.fill_defaults();
    cfg.validate_for_run()?;
    let frames_dir = cfg.input.frames.clone().expect("validated");
    let out_dir = cfg.output.clone().expect("validated");

    let seq = FrameSequence::from_dir(&frames_dir)?;
    let all = seq.frames();
    let selected: Vec<usize> = match (cfg.method, cfg.snakes.as_ref().and_then(|s| s.frames.clone())) {
        (Method::Gmm, _) | (_, None) => (0..all.len()).collect(),
        (_, Some(list)) => {
            check_indices("snakes.frames", &list, all.len())?;
            let mut list = list;
            list.sort_unstable();
            list.dedup();
            list
        }
    };
    let eval_indices: Option<Vec<usize>> = match &cfg.eval {
        None => None,
        Some(e) => Some(match &e.frames {
            None => selected.clone(),
            Some(list) => {
                check_indices("eval.frames", list, all.len())?;
                if let Some(i) = list.iter().find(|i| !selected.contains(i)) {
                    return Err(Error::config(format!("eval.frames: frame {i} is not segmented")));
                }
                list.clone()
            }
        }),
    };

    // fail on bad ground truth before spending time on segmentation
    let gt_dir = cfg.input.gt.clone();
    if let (Some(indices), Some(dir)) = (&eval_indices, &gt_dir) {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "ground-truth directory not found"),
            ));
        }
        for &i in indices {
            let p = gt_path(dir, &all[i]);
            if !p.is_file() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "ground-truth mask not found"),
                ));
            }
        }
    }

    let paths: Vec<PathBuf> = selected.iter().map(|&i| all[i].clone()).collect();
    let processed = match cfg.method {
        Method::Gmm => run_gmm(&cfg, &paths)?,
        Method::Macwe | Method::Mgac => run_snakes(&cfg, &paths)?,
    };
    if let Some(first) = processed.first() {
        let dims = first.mask.dims();
        if let Some(p) = processed.iter().find(|p| p.mask.dims() != dims) {
            return Err(Error::Dimension {
                expected: dims,
                got: p.mask.dims(),
            });
        }
    }

    let masks_dir = out_dir.join("masks");
    create_dir(&masks_dir)?;
    for (p, path) in processed.iter().zip(&paths) {
        save_mask(&p.mask, masks_dir.join(mask_name(path)))?;
    }

    let mut records: Vec<FrameRecord> = processed
        .iter()
        .zip(&selected)
        .map(|(p, &i)| FrameRecord {
            index: i,
            name: file_name(&all[i]),
            millis: p.millis,
            evaluated: false,
            iterations: p.outcome.map(|o| o.0),
            degenerate: p.outcome.map(|o| o.1),
        })
        .collect();

    let mut batch = None;
    let mut evaluated = Vec::new();
    let mut overlays_dir = None;
    let mut metrics_csv = None;
    if let (Some(indices), Some(gt_dir)) = (&eval_indices, &gt_dir) {
        let dir = out_dir.join("overlays");
        create_dir(&dir)?;
        let mut evaluations = Vec::with_capacity(indices.len());
        for &i in indices {
            let slot = selected.binary_search(&i).expect("checked above");
            let pred = &processed[slot].mask;
            let gt = load_mask(gt_path(gt_dir, &all[i]))?;
            let counts = confusion(pred, &gt)?;
            evaluations.push(ImageEvaluation {
                counts,
                report: metrics_from_counts(&counts),
            });
            save_image(&render_overlay(pred, &gt)?, dir.join(mask_name(&all[i])))?;
            records[slot].evaluated = true;
            evaluated.push(file_name(&all[i]));
        }
        let report = BatchReport::from_evaluations(evaluations)?;
        write_csv_file(out_dir.join("metrics.csv"), &evaluated, &report)?;
        batch = Some(report);
        overlays_dir = Some("overlays".to_string());
        metrics_csv = Some("metrics.csv".to_string());
    }

    let degenerate_frames = records
        .iter()
        .filter(|r| r.degenerate == Some(true))
        .map(|r| r.index)
        .collect();
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool: "cabinseg",
        tool_version: env!("CARGO_PKG_VERSION"),
        parallel: cfg!(feature = "parallel"),
        pipeline: pipeline_stages(&cfg),
        config: cfg,
        frames: records,
        degenerate_frames,
        masks_dir: "masks".into(),
        overlays_dir,
        metrics_csv,
        total_millis: millis_since(run_start),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out_dir.join("manifest.json"), &json)?;
    Ok(RunOutput {
        batch,
        evaluated,
        manifest,
    })
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(FrameSequence::from_dir(dir)?.frames().to_vec())
}

/// Scores every mask in `pred_dir` against the mask of the same name in
/// `gt_dir`. Returns the file names in row order with the batch report.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<(Vec<String>, BatchReport)> {
    let preds = list_images(pred_dir)?;
    let mut names = Vec::with_capacity(preds.len());
    let mut evaluations = Vec::with_capacity(preds.len());
    for path in &preds {
        let pred = load_mask(path)?;
        let gt = load_mask(gt_path(gt_dir, path))?;
        let counts = confusion(&pred, &gt)?;
        evaluations.push(ImageEvaluation {
            counts,
            report: metrics_from_counts(&counts),
        });
        names.push(file_name(path));
    }
    Ok((names, BatchReport::from_evaluations(evaluations)?))
}

/// Renders overlays for a single mask pair, or for every mask of a directory
/// into `out` as `<stem>.png`. Returns the number of overlays written.
pub fn overlay_paths(pred: &Path, gt: &Path, out: &Path) -> Result<usize> {
    if pred.is_dir() {
        create_dir(out)?;
        let preds = list_images(pred)?;
        for path in &preds {
            let overlay = render_overlay(&load_mask(path)?, &load_mask(gt_path(gt, path))?)?;
            save_image(&overlay, out.join(mask_name(path)))?;
        }
        Ok(preds.len())
    } else {
        save_image(&render_overlay(&load_mask(pred)?, &load_mask(gt)?)?, out)?;
        Ok(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{EvalConfig, SnakesConfig};
    use crate::morphology::ElementSpec;
    use crate::snakes::ContourInit;
    use crate::synth::{Scenario, SynthConfig};

    fn dataset(dir: &Path, scenario: Scenario, frames: usize) {
        let (width, height) = if scenario == Scenario::Disk { (48, 48) } else { (32, 24) };
        let cfg = SynthConfig {
            width,
            height,
            seed: 5,
            noise_sigma: 0.02,
            scenario,
            frames,
            radius: None,
            fg_level: 0.8,
            bg_level: 0.2,
        };
        crate::synth::write_dataset(&cfg, dir).unwrap();
    }

    fn gmm_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(Method::Gmm);
        cfg.input.frames = Some(dir.join("frames"));
        cfg.input.gt = Some(dir.join("gt"));
        cfg.output = Some(dir.join("out"));
        cfg.eval = Some(EvalConfig::default());
        cfg
    }

    #[test]
    fn stage_labels_follow_execution_order() {
        let mut cfg = ExperimentConfig::new(Method::Gmm);
        cfg.pcc = Some(PccConfig::new(
            crate::colorspace::BrightnessChannel::V,
            crate::colorspace::Enhancement::He,
        ));
        cfg.post = Some(PostConfig {
            op: PostOp::Closing,
            element: ElementSpec::default(),
            min_area: None,
        });
        cfg.input.gt = Some("gt".into());
        cfg.eval = Some(EvalConfig::default());
        assert_eq!(pipeline_stages(&cfg), ["pcc(V,HE)", "gmm", "closing(square3)", "eval"]);
    }

    #[test]
    fn gmm_run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), Scenario::MovingSquare, 6);
        let out = run_experiment(&gmm_config(dir.path())).unwrap();
        let batch = out.batch.unwrap();
        assert_eq!(batch.per_image.len(), 6);
        for sub in ["masks/frame_0005.png", "overlays/frame_0000.png", "metrics.csv", "manifest.json"] {
            assert!(dir.path().join("out").join(sub).is_file(), "{sub}");
        }
        let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }

    #[test]
    fn eval_subset_and_bad_indices() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), Scenario::Static, 4);
        let mut cfg = gmm_config(dir.path());
        cfg.eval = Some(EvalConfig { frames: Some(vec![2, 3]) });
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.evaluated, ["frame_0002.png", "frame_0003.png"]);
        assert_eq!(out.manifest.frames.len(), 4);
        cfg.eval = Some(EvalConfig { frames: Some(vec![4]) });
        assert_eq!(run_experiment(&cfg).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn missing_gt_mask_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), Scenario::Static, 3);
        fs::remove_file(dir.path().join("gt/frame_0001.png")).unwrap();
        let err = run_experiment(&gmm_config(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn mismatched_gt_is_a_dimension_error() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), Scenario::Static, 2);
        save_mask(&BinaryMask::empty(5, 5), dir.path().join("gt/frame_0001.png")).unwrap();
        let err = run_experiment(&gmm_config(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn snakes_on_selected_frames() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), Scenario::Disk, 3);
        let mut cfg = ExperimentConfig::new(Method::Macwe);
        cfg.input.frames = Some(dir.path().join("frames"));
        cfg.input.gt = Some(dir.path().join("gt"));
        cfg.output = Some(dir.path().join("out"));
        cfg.eval = Some(EvalConfig::default());
        cfg.snakes = Some(SnakesConfig {
            frames: Some(vec![2, 0]),
            init: Some(ContourInit::circle(24.0, 24.0, 4.0)),
        });
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.evaluated, ["frame_0000.png", "frame_0002.png"]);
        assert!(out.batch.unwrap().mean.sim.unwrap() > 0.9);
        assert!(!dir.path().join("out/masks/frame_0001.png").exists());
        assert!(out.manifest.frames.iter().all(|f| f.iterations.is_some()));
    }

    #[test]
    fn directory_eval_matches_run_metrics() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), Scenario::MovingSquare, 5);
        let run = run_experiment(&gmm_config(dir.path())).unwrap();
        let (names, batch) = evaluate_dirs(&dir.path().join("out/masks"), &dir.path().join("gt")).unwrap();
        assert_eq!(names, run.evaluated);
        assert_eq!(Some(batch), run.batch);
        let n = overlay_paths(&dir.path().join("out/masks"), &dir.path().join("gt"), &dir.path().join("ov")).unwrap();
        assert_eq!(n, 5);
        let a = fs::read(dir.path().join("ov/frame_0003.png")).unwrap();
        let b = fs::read(dir.path().join("out/overlays/frame_0003.png")).unwrap();
        assert_eq!(a, b);
    }
}
