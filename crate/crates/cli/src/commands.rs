use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hamloc::data::{generate, load_corpus, save_corpus, split, Corpus, SynthConfig};
use hamloc::evaluation::{default_iou_thresholds, evaluate, GroundTruthSegment};
use hamloc::io::write_atomic;
use hamloc::localization::{detections_from_jsonl, detections_to_jsonl, localize as localize_output, Detection};
use hamloc::model::{load_checkpoint, predict, save_checkpoint};
use hamloc::report;
use hamloc::trainer::{
    ablate as run_ablation, grid_search, infer_split, log_from_csv, log_to_csv, run_table1, train as run_training,
    TrainConfig,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::args::{AblateArgs, ConfigArgs, EvalArgs, LocalizeArgs, Preset, ReportArgs, SynthArgs, TrainArgs};
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| hamloc::Error::Io { path: dir.into(), source: e })?;
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Core(hamloc::Error::Io { path: path.into(), source: e }))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Byte offset of a JSON error from its line and column.
fn json_error_offset(text: &str, e: &serde_json::Error) -> u64 {
    let line_start: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum();
    (line_start + e.column().saturating_sub(1)) as u64
}

/// Parse a data file; malformed content is a format error.
fn parse_data<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(hamloc::Error::Format {
            path: path.into(),
            offset: json_error_offset(&text, &e),
            message: e.to_string(),
        })
    })
}

/// Parse a configuration file; malformed content is a usage error.
fn parse_config_file(path: &Path) -> CliResult<Value> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Layer defaults, an optional JSON file, and flag overrides. Returns the
/// merged value and whether a seed was supplied explicitly.
fn layer<T: serde::Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    flags: Map<String, Value>,
) -> CliResult<(T, bool)> {
    let mut value = serde_json::to_value(defaults).expect("defaults serialize");
    let mut seeded = flags.contains_key("seed");
    if let Some(path) = file {
        let mut from_file = parse_config_file(path)?;
        // A run manifest carries its configuration under `config`.
        if from_file.get("command").is_some() {
            if let Some(c) = from_file.get_mut("config") {
                from_file = c.take();
            }
        }
        if !from_file.is_object() {
            return Err(CliError::usage(format!("{}: expected a JSON object", path.display())));
        }
        seeded |= from_file.get("seed").is_some_and(|s| !s.is_null());
        merge(&mut value, from_file);
    }
    merge(&mut value, Value::Object(flags));
    let resolved = serde_json::from_value(value).map_err(|e| CliError::usage(format!("configuration: {e}")))?;
    Ok((resolved, seeded))
}

fn generated_seed() -> u64 {
    let seed = rand::random::<u64>();
    eprintln!("hamloc: no --seed given, using generated seed {seed}");
    seed
}

fn resolve_train_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let base = match args.preset {
        Preset::Standard => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk_scale(),
    };
    let (mut config, seeded) = layer(&base, args.config.as_deref(), args.overrides())?;
    if !seeded {
        config.seed = generated_seed();
    }
    config.validate()?;
    Ok(config)
}

/// Configuration for commands that use no randomness.
fn resolve_inference_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let base = match args.preset {
        Preset::Standard => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk_scale(),
    };
    let (config, _) = layer(&base, args.config.as_deref(), args.overrides())?;
    config.validate()?;
    Ok(config)
}

fn config_value<T: serde::Serialize>(config: &T) -> Value {
    serde_json::to_value(config).expect("configuration serializes")
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let (mut config, seeded) = layer(&SynthConfig::default(), a.config.as_deref(), a.overrides())?;
    if !seeded {
        config.seed = generated_seed();
    }
    config.validate()?;
    let split_seed = a.split_seed.unwrap_or(config.seed);

    let mut manifest = RunManifest::new("synth", json!({ "synth": config, "split_seed": split_seed }));
    manifest.seed = Some(config.seed);
    manifest.artifacts = vec![a.out.join(hamloc::data::MANIFEST_FILE)];
    create_dir(&a.out)?;
    manifest.write(&a.out)?;

    let corpus = split(&generate(&config)?, config.val_fraction, split_seed)?;
    save_corpus(&corpus, &a.out)?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let config = resolve_train_config(&a.config)?;
    let checkpoint = a.out.join("checkpoint.hamn");
    let log = a.out.join("train_log.csv");
    let config_path = a.out.join("config.json");
    let summary = a.out.join("train_summary.json");

    let mut manifest = RunManifest::new("train", config_value(&config));
    manifest.seed = Some(config.seed);
    manifest.dataset = Some(a.data.clone());
    manifest.artifacts = if a.dry_run {
        vec![config_path.clone()]
    } else {
        vec![checkpoint.clone(), log.clone(), config_path.clone(), summary.clone()]
    };
    create_dir(&a.out)?;
    manifest.write(&a.out)?;
    write_json(&config_path, &config)?;

    let corpus = load_corpus(&a.data)?;
    if a.dry_run {
        return Ok(());
    }
    let outcome = run_training(&corpus, &config)?;
    save_checkpoint(&outcome.best, &checkpoint)?;
    write_text(&log, &log_to_csv(&outcome.log))?;
    write_json(
        &summary,
        &json!({ "best_epoch": outcome.best_epoch, "best_val_avg_map": outcome.best_val_avg_map }),
    )?;
    Ok(())
}

pub fn localize(a: &LocalizeArgs) -> CliResult<()> {
    let config = resolve_inference_config(&a.config)?;
    let detections = a.out.join("detections.jsonl");

    let mut manifest = RunManifest::new("localize", json!({ "train": config, "split": a.split }));
    manifest.dataset = Some(a.data.clone());
    manifest.inputs = vec![("checkpoint".into(), a.checkpoint.clone())];
    manifest.artifacts = vec![detections.clone()];
    create_dir(&a.out)?;
    manifest.write(&a.out)?;

    let corpus = load_corpus(&a.data)?;
    let params = load_checkpoint(&a.checkpoint)?;
    let dets: Vec<Detection> = infer_split(&params, &corpus, a.split, &config)?
        .into_iter()
        .flat_map(|(_, _, d)| d)
        .collect();
    write_text(&detections, &detections_to_jsonl(&dets))
}

#[derive(Deserialize)]
struct GroundTruthFile {
    num_classes: usize,
    ground_truth: Vec<GroundTruthSegment>,
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let thresholds = a.iou_thresholds.clone().unwrap_or_else(default_iou_thresholds);
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(CliError::usage("iou thresholds must be nonempty values in (0, 1]"));
    }
    let json_path = a.out.join("report.json");
    let csv_path = a.out.join("report.csv");

    let mut manifest = RunManifest::new("eval", json!({ "iou_thresholds": thresholds, "split": a.split }));
    manifest.dataset = a.data.clone();
    manifest.inputs = vec![("detections".into(), a.detections.clone())];
    if let Some(gt) = &a.ground_truth {
        manifest.inputs.push(("ground_truth".into(), gt.clone()));
    }
    manifest.artifacts = vec![json_path.clone(), csv_path.clone()];
    create_dir(&a.out)?;
    manifest.write(&a.out)?;

    let (gt, num_classes) = match (&a.data, &a.ground_truth) {
        (Some(dir), _) => {
            let corpus = load_corpus(dir)?;
            (corpus.ground_truth(a.split), corpus.num_classes)
        }
        (None, Some(path)) => {
            let f: GroundTruthFile = parse_data(path)?;
            (f.ground_truth, f.num_classes)
        }
        (None, None) => return Err(CliError::usage("one of --data or --ground-truth is required")),
    };
    let text = read_text(&a.detections)?;
    let dets = detections_from_jsonl(&text, &a.detections)?;
    let report = evaluate(&dets, &gt, &thresholds, num_classes);
    write_json(&json_path, &report)?;
    write_text(&csv_path, &report.to_csv())
}

/// Parse `field=v1,v2,...`.
fn parse_grid_axis(spec: &str) -> CliResult<(String, Vec<f64>)> {
    let (axis, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("grid axis {spec:?} is not field=v1,v2")))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::usage(format!("grid axis {axis}: {e}")))?;
    Ok((axis.trim().to_string(), values))
}

pub fn ablate(a: &AblateArgs) -> CliResult<()> {
    let base = resolve_train_config(&a.config)?;
    let mut grid = BTreeMap::new();
    for spec in &a.grid {
        let (axis, values) = parse_grid_axis(spec)?;
        if grid.insert(axis.clone(), values).is_some() {
            return Err(CliError::usage(format!("grid axis {axis} given twice")));
        }
    }
    let csv = a.out.join("ablation.csv");
    let svg = a.out.join("ablation.svg");
    let best = a.out.join("best_config.json");

    let plan = match (&a.axis, &a.values, a.table1, grid.is_empty()) {
        (Some(axis), Some(values), false, true) => json!({ "mode": "axis", "axis": axis, "values": values }),
        (None, None, true, true) => json!({ "mode": "table1" }),
        (None, None, false, false) => json!({ "mode": "grid", "grid": grid, "cap": a.grid_cap }),
        _ => return Err(CliError::usage("choose exactly one of --axis with --values, --table1, or --grid")),
    };
    let mut manifest = RunManifest::new("ablate", json!({ "base": base, "plan": plan }));
    manifest.seed = Some(base.seed);
    manifest.dataset = Some(a.data.clone());
    manifest.artifacts = vec![csv.clone(), svg.clone()];
    if !grid.is_empty() {
        manifest.artifacts.push(best.clone());
    }
    create_dir(&a.out)?;
    manifest.write(&a.out)?;

    let corpus = load_corpus(&a.data)?;
    if grid.is_empty() {
        let table = match (&a.axis, &a.values) {
            (Some(axis), Some(values)) => run_ablation(&corpus, &base, axis, values)?,
            _ => run_table1(&corpus, &base)?,
        };
        write_text(&csv, &table.to_csv())?;
        write_text(&svg, &report::ablation_svg(&table))
    } else {
        let result = grid_search(&corpus, &base, &grid, a.grid_cap)?;
        write_text(&csv, &result.to_csv())?;
        let bars: Vec<(String, f64)> = result
            .rows
            .iter()
            .map(|r| {
                let label = r.point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
                (label, r.val_avg_map)
            })
            .collect();
        write_text(&svg, &report::bar_chart_svg("Grid search", "val avg mAP", &bars))?;
        write_json(&best, &result.best)
    }
}

fn file_stem_for(video_id: &str) -> String {
    video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn timelines(
    corpus: &Corpus,
    checkpoint: &Path,
    a: &ReportArgs,
    config: &TrainConfig,
    written: &mut Vec<PathBuf>,
) -> CliResult<Vec<String>> {
    let params = load_checkpoint(checkpoint)?;
    let videos = corpus.videos_in(a.split);
    let chosen: Vec<_> = if a.videos.is_empty() {
        videos.into_iter().take(3).collect()
    } else {
        a.videos
            .iter()
            .map(|id| {
                videos
                    .iter()
                    .copied()
                    .find(|v| &v.id == id)
                    .ok_or_else(|| CliError::usage(format!("video {id:?} not in the {:?} split", a.split)))
            })
            .collect::<CliResult<_>>()?
    };
    let gt = corpus.ground_truth(a.split);
    let mut names = Vec::new();
    for v in chosen {
        let out = predict(&params, &v.features, &config.forward_options(v.num_snippets()))?;
        let dets: Vec<Detection> = localize_output(&out, &config.localization)
            .iter()
            .map(|p| Detection::new(&v.id, p, v.fps))
            .collect();
        let video_gt: Vec<GroundTruthSegment> = gt.iter().filter(|g| g.video_id == v.id).cloned().collect();
        let stem = format!("timeline_{}", file_stem_for(&v.id));
        let svg_path = a.out.join(format!("{stem}.svg"));
        let csv_path = a.out.join(format!("{stem}.csv"));
        write_text(
            &svg_path,
            &report::timeline_svg(&v.id, v.num_snippets(), &video_gt, &dets, &out.attn),
        )?;
        let mut csv = String::from("snippet,attention\n");
        for (i, s) in out.attn.iter().enumerate() {
            csv.push_str(&format!("{i},{s}\n"));
        }
        write_text(&csv_path, &csv)?;
        written.extend([svg_path, csv_path]);
        names.push(stem);
    }
    Ok(names)
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    if a.log.is_none() && a.eval_report.is_none() && a.data.is_none() {
        return Err(CliError::usage("give at least one of --log, --eval-report, or --data with --checkpoint"));
    }
    let config = resolve_inference_config(&a.config)?;
    let mut manifest = RunManifest::new("report", json!({ "train": config, "split": a.split, "videos": a.videos }));
    manifest.dataset = a.data.clone();
    for (role, path) in [("log", &a.log), ("eval_report", &a.eval_report), ("checkpoint", &a.checkpoint)] {
        if let Some(p) = path {
            manifest.inputs.push((role.into(), p.clone()));
        }
    }
    let summary_path = a.out.join("summary.md");
    if a.log.is_some() {
        manifest.artifacts.extend([a.out.join("loss_curves.svg"), a.out.join("validation.svg")]);
    }
    if a.eval_report.is_some() {
        manifest.artifacts.push(a.out.join("map_table.md"));
    }
    manifest.artifacts.push(summary_path.clone());
    create_dir(&a.out)?;
    manifest.write(&a.out)?;

    let mut summary = String::from("# Run report\n");
    if let Some(log_path) = &a.log {
        let log = log_from_csv(&read_text(log_path)?)?;
        write_text(&a.out.join("loss_curves.svg"), &report::loss_curves_svg(&log))?;
        write_text(&a.out.join("validation.svg"), &report::validation_curve_svg(&log))?;
        summary.push_str("\n## Training\n\n![losses](loss_curves.svg)\n\n![validation](validation.svg)\n");
    }
    if let Some(path) = &a.eval_report {
        let eval: hamloc::evaluation::EvalReport = parse_data(path)?;
        let table = report::map_table_markdown(&eval);
        write_text(&a.out.join("map_table.md"), &table)?;
        summary.push_str("\n## Localization mAP (%)\n\n");
        summary.push_str(&table);
    }
    if let (Some(data), Some(checkpoint)) = (&a.data, &a.checkpoint) {
        let corpus = load_corpus(data)?;
        let mut written = Vec::new();
        let names = timelines(&corpus, checkpoint, a, &config, &mut written)?;
        summary.push_str("\n## Timelines\n\nRows: ground truth, predictions, attention.\n");
        for n in names {
            summary.push_str(&format!("\n![{n}]({n}.svg)\n"));
        }
        // Timeline files depend on the chosen videos; record them once known.
        manifest.artifacts.extend(written);
        manifest.write(&a.out)?;
    }
    write_text(&summary_path, &summary)
}
