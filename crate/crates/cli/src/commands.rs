//! The pipeline stages. Each reads its inputs, writes its outputs into the
//! output directory, and records provenance beside them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use wordaad::augment::build_augmented_corpus;
use wordaad::baseline::synth_envelope_dataset;
use wordaad::data::{EpochSet, Paradigm};
use wordaad::dsp::preprocess;
use wordaad::eval::report::{summary_markdown, write_comparisons_csv, write_report_files, write_results_csv};
use wordaad::eval::{compare, paired_permutation_test, Comparison, ExperimentReport, Variant};
use wordaad::io::{load_epochset, load_recording, save_epochset, save_recording};
use wordaad::synth::{generation_attrs, plan_counts, synth_dataset, synth_recording};
use wordaad::RngStream;

use crate::config::RunConfig;
use crate::provenance::Provenance;
use crate::CliError;

pub const STAGE_ATTR: &str = "stage";
pub const VERSION_ATTR: &str = "pipeline_version";
pub const ORIGINAL_STAGE: &str = "original";
pub const AUGMENTED_STAGE: &str = "augmented";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn stage_attrs(mut attrs: BTreeMap<String, String>, stage: &str) -> BTreeMap<String, String> {
    attrs.insert(STAGE_ATTR.into(), stage.into());
    attrs.insert(VERSION_ATTR.into(), env!("CARGO_PKG_VERSION").into());
    attrs
}

/// Loads an epoch file and checks it came from the expected stage of this
/// pipeline version.
fn load_stage(path: &Path, stage: &str) -> Result<EpochSet, CliError> {
    let set = load_epochset(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    match (set.attrs.get(STAGE_ATTR), set.attrs.get(VERSION_ATTR)) {
        (Some(s), Some(v)) if s == stage && v == env!("CARGO_PKG_VERSION") => Ok(set),
        (s, v) => Err(CliError::Data(format!(
            "{}: expected stage {stage:?} of version {}, found stage {s:?} of version {v:?}",
            path.display(),
            env!("CARGO_PKG_VERSION")
        ))),
    }
}

fn single_input<'a>(inputs: &'a [PathBuf], what: &str) -> Result<&'a Path, CliError> {
    match inputs {
        [one] => Ok(one),
        _ => Err(CliError::Data(format!("expected exactly one --input ({what}), got {}", inputs.len()))),
    }
}

fn log(msg: &str) {
    eprintln!("wordaad: {msg}");
}

/// Surrogate cohort: epoch-level `original.eaad`, or with `continuous`
/// one raw 1000 Hz recording per subject and paradigm under `raw/`.
pub fn synth(cfg: &RunConfig, seed: u64, out: &Path, continuous: bool) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let mut outputs = Vec::new();
    if continuous {
        let raw = out.join("raw");
        create_dir(&raw)?;
        for plan in plan_counts(&cfg.synth, seed)? {
            let (rec, _) = synth_recording(&plan, cfg.synth.snr_db[plan.paradigm.index()], &cfg.synth, seed)?;
            let path = raw.join(format!("s{:02}_{}.eaac", plan.subject, plan.paradigm));
            save_recording(&rec, &generation_attrs(&cfg.synth, seed), &path)?;
            outputs.push(path);
        }
    } else {
        let ds = synth_dataset(&cfg.synth, seed)?;
        let set = ds.epochs.with_attrs(stage_attrs(generation_attrs(&cfg.synth, seed), ORIGINAL_STAGE));
        let path = out.join("original.eaad");
        save_epochset(&set, &path)?;
        outputs.push(path);
    }
    log(&format!("synth wrote {} file(s)", outputs.len()));
    Provenance::new("synth", seed, cfg).write(out, &outputs)?;
    Ok(outputs)
}

fn expand_inputs(inputs: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let rd = std::fs::read_dir(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            for entry in rd {
                let path = entry.map_err(|e| CliError::Data(e.to_string()))?.path();
                if path.extension().is_some_and(|x| x == ext) {
                    files.push(path);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .{ext} inputs")));
    }
    Ok(files)
}

/// Raw recordings → band-passed, resampled, epoched, artifact-rejected
/// `original.eaad`.
pub fn preprocess_cmd(cfg: &RunConfig, seed: u64, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let files = expand_inputs(inputs, "eaac")?;
    let mut sets = Vec::new();
    let mut notes = Vec::new();
    for f in &files {
        let (rec, _) = load_recording(f).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
        let p = preprocess(&rec, &cfg.preprocess)?;
        notes.push(format!(
            "{}: {} epochs, {} events skipped at the edges, {} rejected",
            f.display(),
            p.epochs.len(),
            p.skipped.len(),
            p.rejected
        ));
        sets.push(p.epochs);
    }
    let mut attrs = BTreeMap::new();
    attrs.insert("preprocess_config".into(), serde_json::to_string(&cfg.preprocess).expect("config serializes"));
    let set = EpochSet::concat(sets).with_attrs(stage_attrs(attrs, ORIGINAL_STAGE));
    let path = out.join("original.eaad");
    save_epochset(&set, &path)?;
    log(&format!("preprocess wrote {} epochs from {} recordings", set.len(), files.len()));
    let mut prov = Provenance::new("preprocess", seed, cfg).inputs(&files)?;
    prov.notes = notes;
    prov.write(out, std::slice::from_ref(&path))?;
    Ok(vec![path])
}

/// Original epochs → the upsampled and three simulated sets.
pub fn augment(cfg: &RunConfig, seed: u64, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let input = single_input(inputs, "original.eaad")?;
    let original = load_stage(input, ORIGINAL_STAGE)?;
    let corpus = build_augmented_corpus(&original, &cfg.augment, 0, &RngStream::derive(seed, "augment")?)?;
    let mut outputs = Vec::new();
    for (origin, set) in corpus.sets() {
        let mut attrs = BTreeMap::new();
        attrs.insert("origin".into(), origin.to_string());
        attrs.insert("augment_config".into(), serde_json::to_string(&cfg.augment).expect("config serializes"));
        let path = out.join(format!("{origin}.eaad"));
        save_epochset(&set.clone().with_attrs(stage_attrs(attrs, AUGMENTED_STAGE)), &path)?;
        outputs.push(path);
    }
    let mut prov = Provenance::new("augment", seed, cfg).inputs(&[input.to_path_buf()])?;
    prov.notes = corpus.skipped.iter().map(|(s, p)| format!("subject {s} {p}: degenerate template, not simulated")).collect();
    log(&format!("augment wrote {} epochs in {} sets", corpus.len(), outputs.len()));
    prov.write(out, &outputs)?;
    Ok(outputs)
}

/// Runs the configured experiment and writes the report files.
pub fn train_eval(cfg: &RunConfig, seed: u64, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let input = single_input(inputs, "original.eaad")?;
    let original = load_stage(input, ORIGINAL_STAGE)?;
    let exp = cfg.experiment();
    let envelopes = if exp.variants.contains(&Variant::LinearBaseline) {
        let trials: Vec<_> = original.iter().map(|e| (e.subject_id, e.paradigm, e.trial_id)).collect();
        Some(synth_envelope_dataset(&trials, &cfg.envelope, &cfg.baseline, seed)?)
    } else {
        None
    };
    let report = wordaad::eval::run_experiment(&original, envelopes.as_deref(), &exp, seed, &mut |m| log(m))?;
    let mut outputs = write_report_files(&report, out)?;
    let json = out.join("report.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    outputs.push(json);
    Provenance::new("train-eval", seed, cfg).inputs(&[input.to_path_buf()])?.write(out, &outputs)?;
    Ok(outputs)
}

fn load_report(path: &Path) -> Result<ExperimentReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// What `compare` tests: the declared comparisons, or one explicit pair.
#[derive(Debug, Clone, Default)]
pub struct ComparisonSpec {
    pub a: Option<Variant>,
    pub b: Option<Variant>,
    pub paradigm: Option<Paradigm>,
}

/// Paired one-sided permutation tests on a report's fold accuracies.
pub fn compare_cmd(
    cfg: &RunConfig,
    seed: u64,
    inputs: &[PathBuf],
    spec: &ComparisonSpec,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let input = single_input(inputs, "report.json")?;
    let report = load_report(input)?;
    let draws = cfg.experiment.permutation_draws;
    let comparisons: Vec<Comparison> = match (spec.a, spec.b) {
        (None, None) => compare(&report, draws, seed)?,
        (Some(a), Some(b)) => {
            let (sa, sb) = (report.fold_scores(a, spec.paradigm), report.fold_scores(b, spec.paradigm));
            let area = spec.paradigm.map_or("all".to_string(), |p| p.to_string());
            let name = format!("{a}>{b}/{area}");
            if sa.is_empty() || sa.len() != sb.len() {
                return Err(CliError::Data(format!("report has no paired fold scores for {name}")));
            }
            let mut rng = RngStream::derive(seed, &format!("eval/compare/{name}"))?;
            let test = paired_permutation_test(&sa, &sb, draws, &mut rng)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            vec![Comparison {
                name,
                a,
                paradigm_a: spec.paradigm,
                b,
                paradigm_b: spec.paradigm,
                mean_a: mean(&sa),
                mean_b: mean(&sb),
                wins: sa.iter().zip(&sb).filter(|(x, y)| x > y).count(),
                test,
            }]
        }
        _ => return Err(CliError::Config("--a and --b go together".into())),
    };
    let path = out.join("comparisons.csv");
    let file = std::fs::File::create(&path).map_err(|e| CliError::Data(e.to_string()))?;
    write_comparisons_csv(&comparisons, file)?;
    for c in &comparisons {
        println!("{}\tmean {:.4} vs {:.4}\twins {}/{}\tp = {:.5}", c.name, c.mean_a, c.mean_b, c.wins, c.test.n, c.test.p_value);
    }
    Provenance::new("compare", seed, cfg).inputs(&[input.to_path_buf()])?.write(out, std::slice::from_ref(&path))?;
    Ok(vec![path])
}

/// Merges one or more reports into `summary.md` and `results.csv`.
pub fn report_cmd(cfg: &RunConfig, seed: u64, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    if inputs.is_empty() {
        return Err(CliError::Data("report needs at least one --input report.json".into()));
    }
    let mut md = String::new();
    let mut csv = Vec::new();
    for (i, path) in inputs.iter().enumerate() {
        let report = load_report(path)?;
        md.push_str(&summary_markdown(&report));
        md.push('\n');
        let mut buf = Vec::new();
        write_results_csv(&report, &mut buf)?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |(_, rest)| rest) };
        csv.extend_from_slice(body.as_bytes());
    }
    let (md_path, csv_path) = (out.join("summary.md"), out.join("results.csv"));
    std::fs::write(&md_path, md).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&csv_path, csv).map_err(|e| CliError::Data(e.to_string()))?;
    let outputs = vec![md_path, csv_path];
    Provenance::new("report", seed, cfg).inputs(inputs)?.write(out, &outputs)?;
    Ok(outputs)
}
