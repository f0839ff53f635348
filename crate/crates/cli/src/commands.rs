use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use detcal::augment::{augment_dataset, BlurSpec};
use detcal::calibration::{fit_detections, ConfidenceTransform, FeatureSpec, FitOptions, GaussianLrModel};
use detcal::ece::{bin_outcomes, ece, reliability_table as reliability_rows};
use detcal::io::annotations::{format_detections, format_ground_truth};
use detcal::io::model_file::{load_model, save_model};
use detcal::io::report::{metrics_table, reliability_table, Cell, Report, ReportFormat, Table};
use detcal::io::split::{split_records, SplitSpec};
use detcal::io::write_atomic;
use detcal::matching::aggregate;
use detcal::simulator::{generate_scenes, generate_scenes_with_detections, ConfidenceLink, SceneStreamSpec};
use detcal::{DatasetManifest, Detection, Error, ManifestEntry};

use crate::config::RunConfig;
use crate::dataset::{labeled_detections, match_dataset, ImageResult};
use crate::{
    AugmentArgs, ApplyArgs, CalibArgs, CliError, CliResult, Command, EceArgs, FitArgs, MatchArgs, Output,
    OutputArgs, PipelineArgs, SimulateArgs,
};

pub(crate) fn execute(command: Command) -> CliResult<Output> {
    match command {
        Command::Augment(a) => augment(a),
        Command::Match(a) => match_cmd(a),
        Command::Metrics(a) => metrics(a),
        Command::Ece(a) => ece_cmd(a, false),
        Command::Reliability(a) => ece_cmd(a, true),
        Command::CalibrateFit(a) => calibrate_fit(a),
        Command::CalibrateApply(a) => calibrate_apply(a),
        Command::Simulate(a) => simulate(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn check_iou_threshold(t: f64) -> CliResult<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--iou-threshold {t} must be in (0, 1]")))
    }
}

fn check_bins(m: usize) -> CliResult<()> {
    if m >= 1 {
        Ok(())
    } else {
        Err(usage("--bins must be at least 1"))
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

/// Render to stdout; with `--out`, also write CSV, text and the config.
fn finish(config: &RunConfig, report: Report, output: &OutputArgs) -> CliResult<Output> {
    if let Some(dir) = &output.out {
        create_dir(dir)?;
        write_atomic(&dir.join("report.csv"), report.render(ReportFormat::Csv).as_bytes())?;
        write_atomic(&dir.join("report.txt"), report.render(ReportFormat::Table).as_bytes())?;
        config.write(dir)?;
    }
    Ok(Output {
        stdout: report.render(output.format),
        warnings: Vec::new(),
    })
}

fn load_and_match(manifest: &Path, iou_threshold: f64) -> CliResult<Vec<ImageResult>> {
    check_iou_threshold(iou_threshold)?;
    let m = DatasetManifest::load(manifest)?;
    Ok(match_dataset(&m, iou_threshold)?)
}

fn data_config(sub: &str, manifest: &Path, iou_threshold: f64, out: Option<&PathBuf>) -> RunConfig {
    let mut c = RunConfig::new(sub);
    c.manifests = vec![display(manifest)];
    c.iou_threshold = Some(iou_threshold);
    c.out = out.map(|p| display(p));
    c
}

fn match_cmd(a: MatchArgs) -> CliResult<Output> {
    let results = load_and_match(&a.data.manifest, a.data.iou_threshold)?;
    let config = data_config("match", &a.data.manifest, a.data.iou_threshold, a.output.out.as_ref());
    let mut t = Table::new(&[
        "image_id",
        "detection_index",
        "class_id",
        "confidence",
        "truth_index",
        "iou",
        "correct",
    ]);
    for r in &results {
        for o in &r.summary.outcomes {
            let d = &r.detections[o.detection_index];
            t.push(vec![
                r.image_id.as_str().into(),
                o.detection_index.into(),
                (d.class_id as usize).into(),
                o.confidence.into(),
                o.truth_index.map(Cell::from).unwrap_or_else(|| "".into()),
                o.iou.into(),
                (if o.correct { "1" } else { "0" }).into(),
            ]);
        }
    }
    finish(&config, Report::new(config.pairs()).section("matches", t), &a.output)
}

fn metrics(a: MatchArgs) -> CliResult<Output> {
    let results = load_and_match(&a.data.manifest, a.data.iou_threshold)?;
    let config = data_config("metrics", &a.data.manifest, a.data.iou_threshold, a.output.out.as_ref());
    let total = aggregate(results.iter().map(|r| &r.summary));
    let rows = results
        .iter()
        .map(|r| (r.image_id.as_str(), &r.summary))
        .chain(std::iter::once(("ALL", &total)));
    finish(&config, Report::new(config.pairs()).section("metrics", metrics_table(rows)), &a.output)
}

fn calibrated_pairs(labeled: &[(Detection, bool)], model: &GaussianLrModel) -> CliResult<Vec<(f64, bool)>> {
    labeled
        .iter()
        .map(|(d, ok)| Ok((model.calibrate(&model.features(d))?, *ok)))
        .collect()
}

fn ece_cmd(a: EceArgs, reliability: bool) -> CliResult<Output> {
    check_bins(a.bins)?;
    let results = load_and_match(&a.data.manifest, a.data.iou_threshold)?;
    let sub = if reliability { "reliability" } else { "ece" };
    let mut config = data_config(sub, &a.data.manifest, a.data.iou_threshold, a.output.out.as_ref());
    config.bins = Some(a.bins);
    let labeled = labeled_detections(&results);
    let pairs = match &a.model {
        Some(p) => {
            config.model = Some(display(p));
            calibrated_pairs(&labeled, &load_model(p)?)?
        }
        None => labeled.iter().map(|(d, ok)| (d.confidence(), *ok)).collect(),
    };
    let report = Report::new(config.pairs());
    let report = if reliability {
        report.section("reliability", reliability_table(&reliability_rows(&bin_outcomes(&pairs, a.bins))))
    } else {
        let mut t = Table::new(&["scope", "detections", "bins", "ece"]);
        t.push(vec!["ALL".into(), pairs.len().into(), a.bins.into(), ece(&pairs, a.bins)?.into()]);
        report.section("ece", t)
    };
    finish(&config, report, &a.output)
}

impl CalibArgs {
    fn feature_spec(&self) -> CliResult<FeatureSpec> {
        let spec = FeatureSpec::parse_list(&self.features).map_err(|e| usage(format!("--features: {e}")))?;
        Ok(if self.logit_confidence {
            spec.with_transform(ConfidenceTransform::Logit)
        } else {
            spec
        })
    }

    fn fit_options(&self) -> CliResult<FitOptions> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(usage(format!("--lambda {} must be finite and positive", self.lambda)));
        }
        Ok(FitOptions {
            lambda_reg: self.lambda,
            with_prior_term: self.with_prior_term,
            ..FitOptions::default()
        })
    }

    fn record(&self, spec: &FeatureSpec, config: &mut RunConfig) {
        config.features = Some(spec.feature_list());
        config.confidence_transform = Some(spec.confidence_transform.as_str().to_string());
        config.lambda_reg = Some(self.lambda);
        config.with_prior_term = Some(self.with_prior_term);
        config.fit_fraction = Some(self.fit_fraction);
        config.seed = Some(self.seed);
    }

    /// Indices of the fit and test parts. A fit fraction of 1 fits on
    /// everything and leaves no test part.
    fn split(&self, n: usize) -> CliResult<(Vec<usize>, Vec<usize>)> {
        let f = self.fit_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(usage(format!("--fit-fraction {f} must be in (0, 1]")));
        }
        if f == 1.0 {
            return Ok(((0..n).collect(), Vec::new()));
        }
        let mut parts = split_records(n, &SplitSpec::holdout(f, self.seed)?)?;
        let test = parts.pop().expect("two parts");
        let fit = parts.pop().expect("two parts");
        Ok((fit, test))
    }
}

struct Evaluation {
    model: GaussianLrModel,
    n_fit: usize,
    before: Vec<(f64, bool)>,
    after: Vec<(f64, bool)>,
}

fn fit_and_evaluate(labeled: &[(Detection, bool)], calib: &CalibArgs, spec: &FeatureSpec) -> CliResult<Evaluation> {
    let opts = calib.fit_options()?;
    let (fit_idx, test_idx) = calib.split(labeled.len())?;
    let fit_set: Vec<(Detection, bool)> = fit_idx.iter().map(|&i| labeled[i]).collect();
    let model = fit_detections(&fit_set, *spec, opts)?;
    let test: Vec<(Detection, bool)> = test_idx.iter().map(|&i| labeled[i]).collect();
    let before = test.iter().map(|(d, ok)| (d.confidence(), *ok)).collect();
    let after = calibrated_pairs(&test, &model)?;
    Ok(Evaluation {
        model,
        n_fit: fit_set.len(),
        before,
        after,
    })
}

fn optional_ece(pairs: &[(f64, bool)], bins: usize) -> CliResult<Cell> {
    if pairs.is_empty() {
        Ok("".into())
    } else {
        Ok(ece(pairs, bins)?.into())
    }
}

fn calibrate_fit(a: FitArgs) -> CliResult<Output> {
    check_bins(a.bins)?;
    let spec = a.calib.feature_spec()?;
    let results = load_and_match(&a.data.manifest, a.data.iou_threshold)?;
    let mut config = data_config("calibrate-fit", &a.data.manifest, a.data.iou_threshold, a.output.out.as_ref());
    a.calib.record(&spec, &mut config);
    config.bins = Some(a.bins);
    config.model = Some(display(&a.model));

    let labeled = labeled_detections(&results);
    let ev = fit_and_evaluate(&labeled, &a.calib, &spec)?;
    save_model(&ev.model, &a.model)?;

    let mut t = Table::new(&["detections_fit", "detections_test", "ece", "calibrated_ece"]);
    t.push(vec![
        ev.n_fit.into(),
        ev.before.len().into(),
        optional_ece(&ev.before, a.bins)?,
        optional_ece(&ev.after, a.bins)?,
    ]);
    finish(&config, Report::new(config.pairs()).section("fit", t), &a.output)
}

fn calibrate_apply(a: ApplyArgs) -> CliResult<Output> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let model = load_model(&a.model)?;
    let mut config = RunConfig::new("calibrate-apply");
    config.manifests = vec![display(&a.manifest)];
    config.model = Some(display(&a.model));
    config.features = Some(model.spec().feature_list());
    config.confidence_transform = Some(model.spec().confidence_transform.as_str().to_string());
    config.out = Some(display(&a.out));

    let det_dir = a.out.join("detections");
    create_dir(&det_dir)?;
    let written: Vec<detcal::Result<(ManifestEntry, usize)>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let src = e
                .detection_path
                .as_ref()
                .ok_or_else(|| Error::Manifest(format!("entry `{}` has no detections file", e.image_id)))?;
            let dets = detcal::io::annotations::read_detections(src)?;
            let calibrated = model.calibrate_detections(&dets)?;
            let dst = det_dir.join(format!("{}.txt", e.image_id));
            write_atomic(&dst, format_detections(&calibrated).as_bytes())?;
            Ok((
                ManifestEntry {
                    detection_path: Some(dst),
                    ..e.clone()
                },
                calibrated.len(),
            ))
        })
        .collect();
    let mut entries = Vec::with_capacity(written.len());
    let mut total = 0usize;
    for w in written {
        let (entry, n) = w?;
        entries.push(entry);
        total += n;
    }
    let out_manifest = DatasetManifest::new(entries)?;
    out_manifest.save(&a.out.join("manifest.toml"))?;

    let mut t = Table::new(&["images", "detections"]);
    t.push(vec![out_manifest.len().into(), total.into()]);
    let output = OutputArgs {
        format: a.format,
        out: Some(a.out.clone()),
    };
    finish(&config, Report::new(config.pairs()).section("apply", t), &output)
}

fn augment(a: AugmentArgs) -> CliResult<Output> {
    let spec = BlurSpec::new(a.blur_length, a.blur_angle)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let mut config = RunConfig::new("augment");
    config.manifests = vec![display(&a.manifest)];
    config.blur_length = Some(spec.length());
    config.blur_angle_deg = Some(spec.angle_deg());
    config.out = Some(display(&a.out));

    create_dir(&a.out)?;
    let report = augment_dataset(&manifest, &spec, &a.out)?;
    report.manifest.save(&a.out.join("manifest.toml"))?;

    let mut t = Table::new(&["entries_in", "entries_out", "failures"]);
    t.push(vec![
        manifest.len().into(),
        report.manifest.len().into(),
        report.failures.len().into(),
    ]);
    let output = OutputArgs {
        format: a.format,
        out: Some(a.out.clone()),
    };
    let mut out = finish(&config, Report::new(config.pairs()).section("augment", t), &output)?;
    out.warnings = report
        .failures
        .iter()
        .map(|(id, e)| format!("entry `{id}` skipped: {e}"))
        .collect();
    Ok(out)
}

/// Settings accepted from `simulate --spec FILE`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    n_scenes: Option<usize>,
    n_detections: Option<usize>,
    truths_per_scene: Option<String>,
    jitter_sigma: Option<f64>,
    confidence_link: Option<String>,
    confidence_logit_mean: Option<f64>,
    confidence_logit_sd: Option<f64>,
    iou_threshold: Option<f64>,
    seed: Option<u64>,
}

fn parse_truth_range(text: &str) -> CliResult<(usize, usize)> {
    let bad = || usage(format!("truths per scene `{text}`: expected N or LO-HI"));
    let (lo, hi) = match text.split_once('-') {
        Some((lo, hi)) => (lo.trim(), hi.trim()),
        None => (text.trim(), text.trim()),
    };
    Ok((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?))
}

fn simulate(a: SimulateArgs) -> CliResult<Output> {
    let file: SimulateFile = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SimulateFile::default(),
    };
    let defaults = SceneStreamSpec::default();
    let n_detections = a.detections.or(if a.scenes.is_some() { None } else { file.n_detections });
    let n_scenes = a.scenes.or(file.n_scenes).unwrap_or(defaults.n_scenes);
    let truths = a.truths.or(file.truths_per_scene);
    let link = a.link.or(file.confidence_link);
    let spec = SceneStreamSpec {
        n_scenes,
        truths_per_scene: match &truths {
            Some(t) => parse_truth_range(t)?,
            None => defaults.truths_per_scene,
        },
        jitter_sigma: a.jitter.or(file.jitter_sigma).unwrap_or(defaults.jitter_sigma),
        confidence_link: match &link {
            Some(l) => ConfidenceLink::parse(l)?,
            None => defaults.confidence_link,
        },
        confidence_logit_mean: a
            .logit_mean
            .or(file.confidence_logit_mean)
            .unwrap_or(defaults.confidence_logit_mean),
        confidence_logit_sd: a
            .logit_sd
            .or(file.confidence_logit_sd)
            .unwrap_or(defaults.confidence_logit_sd),
        iou_threshold: a.iou_threshold.or(file.iou_threshold).unwrap_or(defaults.iou_threshold),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
    };
    let scenes = match n_detections {
        Some(n) => generate_scenes_with_detections(&spec, n)?,
        None => generate_scenes(&spec)?,
    };

    let mut config = RunConfig::new("simulate");
    match n_detections {
        Some(n) => config.n_detections = Some(n),
        None => config.n_scenes = Some(spec.n_scenes),
    }
    config.truths_per_scene = Some(format!("{}-{}", spec.truths_per_scene.0, spec.truths_per_scene.1));
    config.jitter_sigma = Some(spec.jitter_sigma);
    config.confidence_link = Some(spec.confidence_link.to_string());
    config.confidence_logit_mean = Some(spec.confidence_logit_mean);
    config.confidence_logit_sd = Some(spec.confidence_logit_sd);
    config.iou_threshold = Some(spec.iou_threshold);
    config.seed = Some(spec.seed);
    config.out = Some(display(&a.out));

    let labels = a.out.join("labels");
    let dets = a.out.join("detections");
    create_dir(&labels)?;
    create_dir(&dets)?;
    let width = scenes.len().saturating_sub(1).to_string().len().max(6);
    let entries: Vec<detcal::Result<ManifestEntry>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let id = format!("scene_{i:0width$}");
            let truth_path = labels.join(format!("{id}.txt"));
            let det_path = dets.join(format!("{id}.txt"));
            write_atomic(&truth_path, format_ground_truth(&s.truths).as_bytes())?;
            write_atomic(&det_path, format_detections(&s.detections).as_bytes())?;
            Ok(ManifestEntry {
                image_id: id,
                image_path: None,
                truth_path,
                detection_path: Some(det_path),
            })
        })
        .collect();
    let manifest = DatasetManifest::new(entries.into_iter().collect::<detcal::Result<_>>()?)?;
    manifest.save(&a.out.join("manifest.toml"))?;

    let mut t = Table::new(&["scenes", "truths", "detections", "expected_correct_fraction"]);
    t.push(vec![
        scenes.len().into(),
        scenes.iter().map(|s| s.truths.len()).sum::<usize>().into(),
        scenes.iter().map(|s| s.detections.len()).sum::<usize>().into(),
        spec.correct_fraction().into(),
    ]);
    let output = OutputArgs {
        format: a.format,
        out: Some(a.out.clone()),
    };
    finish(&config, Report::new(config.pairs()).section("simulate", t), &output)
}

fn pipeline_labels(a: &PipelineArgs) -> CliResult<Vec<String>> {
    if !a.label.is_empty() {
        if a.label.len() != a.manifest.len() {
            return Err(usage(format!(
                "{} --label values for {} --manifest values",
                a.label.len(),
                a.manifest.len()
            )));
        }
        return Ok(a.label.clone());
    }
    let stems: Vec<String> = a
        .manifest
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    Ok(stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.is_empty() || stems.iter().filter(|t| *t == s).count() > 1 {
                format!("{}{}", if s.is_empty() { "dataset" } else { s }, i + 1)
            } else {
                s.clone()
            }
        })
        .collect())
}

fn pipeline(a: PipelineArgs) -> CliResult<Output> {
    check_bins(a.bins)?;
    check_iou_threshold(a.iou_threshold)?;
    let spec = a.calib.feature_spec()?;
    a.calib.fit_options()?;
    if a.calib.fit_fraction >= 1.0 {
        return Err(usage("pipeline needs a test split: --fit-fraction must be below 1"));
    }
    let labels = pipeline_labels(&a)?;
    let mut config = RunConfig::new("pipeline");
    config.manifests = a.manifest.iter().map(|p| display(p)).collect();
    config.labels = labels.clone();
    config.iou_threshold = Some(a.iou_threshold);
    config.bins = Some(a.bins);
    a.calib.record(&spec, &mut config);
    config.out = a.output.out.as_ref().map(|p| display(p));

    let mut cal = Table::new(&["scope", "detections_fit", "detections_test", "ece", "calibrated_ece", "delta"]);
    let mut summaries = Vec::new();
    let mut eces = Vec::new();
    let mut extras: Vec<(String, Table, Table, GaussianLrModel)> = Vec::new();
    for (path, label) in a.manifest.iter().zip(&labels) {
        let results = load_and_match(path, a.iou_threshold)?;
        summaries.push(aggregate(results.iter().map(|r| &r.summary)));
        let labeled = labeled_detections(&results);
        let ev = fit_and_evaluate(&labeled, &a.calib, &spec)?;
        let before = ece(&ev.before, a.bins)?;
        let after = ece(&ev.after, a.bins)?;
        cal.push(vec![
            label.as_str().into(),
            ev.n_fit.into(),
            ev.before.len().into(),
            before.into(),
            after.into(),
            (before - after).into(),
        ]);
        eces.push((before, after));
        if a.output.out.is_some() {
            extras.push((
                label.clone(),
                reliability_table(&reliability_rows(&bin_outcomes(&ev.before, a.bins))),
                reliability_table(&reliability_rows(&bin_outcomes(&ev.after, a.bins))),
                ev.model,
            ));
        }
    }
    if eces.len() >= 2 {
        let spread = |f: fn(&(f64, f64)) -> f64| {
            let vals: Vec<f64> = eces.iter().map(f).collect();
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let (gap_before, gap_after) = (spread(|e| e.0), spread(|e| e.1));
        cal.push(vec![
            "difference".into(),
            "".into(),
            "".into(),
            gap_before.into(),
            gap_after.into(),
            (gap_before - gap_after).into(),
        ]);
    }
    let metrics = metrics_table(labels.iter().map(String::as_str).zip(summaries.iter()));
    let report = Report::new(config.pairs())
        .section("calibration", cal)
        .section("metrics", metrics);

    if let Some(dir) = &a.output.out {
        create_dir(dir)?;
        for (label, before, after, model) in &extras {
            let pre = Report::new(config.pairs()).section("reliability", before.clone());
            let post = Report::new(config.pairs()).section("reliability", after.clone());
            write_atomic(
                &dir.join(format!("reliability_{label}_before.csv")),
                pre.render(ReportFormat::Csv).as_bytes(),
            )?;
            write_atomic(
                &dir.join(format!("reliability_{label}_after.csv")),
                post.render(ReportFormat::Csv).as_bytes(),
            )?;
            save_model(model, &dir.join(format!("model_{label}.toml")))?;
        }
    }
    finish(&config, report, &a.output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_ranges() {
        assert_eq!(parse_truth_range("3").unwrap(), (3, 3));
        assert_eq!(parse_truth_range("1-4").unwrap(), (1, 4));
        assert!(parse_truth_range("a-4").is_err());
        assert!(parse_truth_range("").is_err());
    }
}
