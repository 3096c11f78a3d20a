use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use physaffect::corpus;
use physaffect::eval::{
    self, default_rho, kfold_cv, loso_cv, loto_cv, mode_classes, nested_summary, per_subject_oob, split_subjects,
    subject_graph, targets, CvReport, HistogramBin, LosoReport, LosoScope, NeighborGraph, NestedSummary, SubjectData,
    SubjectOob, Summary, TruncationReport,
};
use physaffect::features::{self, normalize_per_subject, FeatureMatrix, N_FEATURES, REGISTRY_VERSION};
use physaffect::forest::{
    self, class_counts, gini_importance, oob_report, stratified_sampsize, Balanced, Classifier, ForestModel,
    ForestParams, OobReport,
};
use physaffect::seed::derive_seed;
use physaffect::synthgen::{self, LabelPlan, SynthSpec};
use physaffect::{with_workers, LabelMode};
use serde::Serialize;

use crate::output::{eval_failure, forest_failure, invalid, write_atomic, write_dir_atomic, write_text, CliResult, OrExit};
use crate::{Command, ForestArgs, Protocol};

/// Everything that determines a run's result; embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub data: PathBuf,
    pub out: PathBuf,
    pub label_mode: LabelMode,
    pub trees: usize,
    pub mtry: usize,
    pub balanced: bool,
    pub ratio: f64,
    pub protocol: Option<String>,
    pub per_subject: bool,
    pub pooled: bool,
    pub k: Option<usize>,
    pub rho: Option<f64>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub normalize: bool,
}

impl RunConfig {
    fn new(command: &str, data: &Path, out: &Path, f: &ForestArgs) -> Self {
        RunConfig {
            command: command.into(),
            data: data.to_path_buf(),
            out: out.to_path_buf(),
            label_mode: f.label_mode,
            trees: f.trees,
            mtry: f.mtry,
            balanced: f.balanced,
            ratio: f.ratio,
            protocol: None,
            per_subject: false,
            pooled: false,
            k: None,
            rho: None,
            seed: f.seed,
            workers: f.workers,
            normalize: !f.no_normalize,
        }
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(invalid(anyhow!(msg)));
        if self.trees == 0 {
            return bad("--trees must be at least 1".into());
        }
        if self.mtry == 0 || self.mtry > N_FEATURES {
            return bad(format!("--mtry must be in 1..={N_FEATURES}"));
        }
        if !(self.ratio >= 1.0 && self.ratio.is_finite()) {
            return bad("--ratio must be a finite number >= 1".into());
        }
        if let Some(r) = self.rho {
            if !(-1.0..=1.0).contains(&r) {
                return bad("--rho must lie in [-1, 1]".into());
            }
        }
        if self.k.is_some_and(|k| k < 2) {
            return bad("--k must be at least 2".into());
        }
        validate_workers(self.workers)
    }

    fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.trees,
            mtry: self.mtry,
            seed: self.seed,
            ..Default::default()
        }
    }
}

fn validate_workers(workers: Option<usize>) -> CliResult<()> {
    if workers == Some(0) {
        return Err(invalid(anyhow!("--workers must be at least 1")));
    }
    Ok(())
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Extract { data, out, workers } => {
            validate_workers(workers)?;
            with_workers(workers, || extract(&data, &out))
        }
        Command::Train { data, out, forest } => {
            let cfg = RunConfig::new("train", &data, &out, &forest);
            cfg.validate()?;
            with_workers(cfg.workers, || train(&cfg))
        }
        Command::Evaluate {
            data,
            out,
            protocol,
            per_subject,
            pooled,
            k,
            rho,
            forest,
        } => {
            let mut cfg = RunConfig::new("evaluate", &data, &out, &forest);
            cfg.protocol = Some(protocol.name().into());
            cfg.per_subject = per_subject;
            cfg.pooled = pooled;
            cfg.k = (protocol == Protocol::Kfold).then_some(k);
            cfg.rho = match protocol {
                Protocol::LosoNeighbors => Some(rho.unwrap_or(default_rho(forest.label_mode))),
                _ => rho,
            };
            cfg.validate()?;
            with_workers(cfg.workers, || evaluate(&cfg, protocol))
        }
        Command::Importance { model, out } => importance(&model, &out),
        Command::Cluster {
            data,
            out,
            label_mode,
            rho,
        } => cluster(&data, &out, label_mode, rho.unwrap_or(default_rho(label_mode))),
        Command::Synth {
            print_spec: true, ..
        } => {
            let json = serde_json::to_string_pretty(&starter_spec()).or_runtime("serializing spec")?;
            println!("{json}");
            Ok(())
        }
        Command::Synth { spec, out, workers, .. } => {
            validate_workers(workers)?;
            let (Some(spec), Some(out)) = (spec, out) else {
                return Err(invalid(anyhow!("synth needs --spec and --out")));
            };
            with_workers(workers, || synth(&spec, &out))
        }
    }
}

fn extract(data: &Path, out: &Path) -> CliResult<()> {
    let records = corpus::load_dataset(data).or_invalid("loading corpus")?;
    let m = features::extract_dataset(&records);
    drop(records);
    write_atomic(out, |f| Ok(features::write_features_csv(f, &m)?))?;
    println!("{} rows x {} features ({} subjects) -> {}", m.n_rows(), m.n_features(), m.subjects.len(), out.display());
    Ok(())
}

fn load_features(cfg: &RunConfig) -> CliResult<FeatureMatrix> {
    let m = features::read_features_csv(&cfg.data).or_invalid(&format!("reading {}", cfg.data.display()))?;
    if m.n_rows() == 0 {
        return Err(invalid(anyhow!("{} has no rows", cfg.data.display())));
    }
    Ok(if cfg.normalize { normalize_per_subject(&m).0 } else { m })
}

fn train(cfg: &RunConfig) -> CliResult<()> {
    let m = load_features(cfg)?;
    let y = targets(&m, cfg.label_mode).map_err(eval_failure)?;
    let mut params = cfg.params();
    if cfg.balanced {
        params.sampsize = Some(stratified_sampsize(&class_counts(&y), cfg.ratio).map_err(forest_failure)?);
    }
    let model = forest::fit(m.values.view(), &y, &params).map_err(forest_failure)?;
    write_text(&cfg.out, &model.to_json())?;
    println!(
        "{} trees on {} rows, classes {:?}{} -> {}",
        model.trees.len(),
        m.n_rows(),
        model.classes,
        params.sampsize.map_or(String::new(), |s| format!(", sampsize {s:?}")),
        cfg.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    registry_version: &'static str,
    n_subjects: usize,
    n_rows: usize,
    n_features: usize,
    /// Per-unit error percentages that feed histogram.csv: subjects for oob
    /// --per-subject, loto and loso; folds for kfold; the single pooled error
    /// for oob.
    unit_errors: Vec<f64>,
    unit_summary: Summary,
    result: Outcome,
}

#[derive(Serialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
enum Outcome {
    Oob {
        error: f64,
        sampsize: Option<Vec<usize>>,
        report: OobReport,
    },
    OobPerSubject {
        subjects: Vec<SubjectOob>,
    },
    Kfold {
        report: CvReport,
    },
    Loto {
        subjects: Vec<LotoSubject>,
        nested: NestedSummary,
        truncated_accuracy: f64,
    },
    Loso {
        report: LosoReport,
    },
    LosoNeighbors {
        graph: NeighborGraph,
        report: LosoReport,
    },
}

#[derive(Serialize)]
struct LotoSubject {
    subject: String,
    report: CvReport,
    truncation: TruncationReport,
}

fn evaluate(cfg: &RunConfig, protocol: Protocol) -> CliResult<()> {
    let m = load_features(cfg)?;
    if cfg.balanced {
        let balanced = Balanced {
            params: cfg.params(),
            ratio: cfg.ratio,
        };
        evaluate_with(cfg, protocol, &m, &balanced)
    } else {
        evaluate_with(cfg, protocol, &m, &cfg.params())
    }
}

fn evaluate_with<C: Classifier>(cfg: &RunConfig, protocol: Protocol, m: &FeatureMatrix, classifier: &C) -> CliResult<()>
where
    C::Model: Sync,
{
    let mode = cfg.label_mode;
    let classes = mode_classes(mode);
    let subjects: Vec<SubjectData> = split_subjects(m, mode).map_err(eval_failure)?;
    let (unit_errors, result) = match protocol {
        Protocol::Oob if cfg.per_subject => {
            let ratio = cfg.balanced.then_some(cfg.ratio);
            let per = per_subject_oob(&subjects, &classes, &cfg.params(), ratio).map_err(eval_failure)?;
            (per.iter().map(|s| s.error).collect(), Outcome::OobPerSubject { subjects: per })
        }
        Protocol::Oob => {
            let y = targets(m, mode).map_err(eval_failure)?;
            let mut params = cfg.params();
            if cfg.balanced {
                params.sampsize = Some(stratified_sampsize(&class_counts(&y), cfg.ratio).map_err(forest_failure)?);
            }
            let model: ForestModel = forest::fit(m.values.view(), &y, &params).map_err(forest_failure)?;
            let mut report = oob_report(&model, m.values.view(), &y).map_err(forest_failure)?;
            report.confusion = eval::expand_confusion(&report.confusion, &classes);
            report.per_class_error = report.confusion.per_class_error();
            let error = 100.0 * report.error;
            (
                vec![error],
                Outcome::Oob {
                    error,
                    sampsize: params.sampsize,
                    report,
                },
            )
        }
        Protocol::Kfold => {
            let y = targets(m, mode).map_err(eval_failure)?;
            // whole videos go to one fold so no trial leaks across folds
            let mut video_ids = BTreeMap::new();
            let groups: Vec<usize> = m
                .keys
                .iter()
                .map(|k| {
                    let next = video_ids.len();
                    *video_ids.entry((k.subject, k.trial)).or_insert(next)
                })
                .collect();
            let k = cfg.k.expect("set for kfold");
            let report = kfold_cv(m.values.view(), &y, Some(&groups), k, &classes, classifier, cfg.seed)
                .map_err(eval_failure)?;
            (report.fold_errors(), Outcome::Kfold { report })
        }
        Protocol::Loto => {
            let mut per = Vec::with_capacity(subjects.len());
            for (s, d) in subjects.iter().enumerate() {
                let (report, truncation) =
                    loto_cv(d, &classes, classifier, derive_seed(cfg.seed, s as u64)).map_err(eval_failure)?;
                per.push(LotoSubject {
                    subject: d.id.clone(),
                    report,
                    truncation,
                });
            }
            let reports: Vec<CvReport> = per.iter().map(|p| p.report.clone()).collect();
            let nested = nested_summary(&reports).map_err(eval_failure)?;
            let videos: usize = per.iter().map(|p| p.truncation.videos.len()).sum();
            let correct: usize = per
                .iter()
                .flat_map(|p| &p.truncation.videos)
                .filter(|v| v.observed == v.predicted)
                .count();
            (
                per.iter().map(|p| p.report.summary.mean).collect(),
                Outcome::Loto {
                    subjects: per,
                    nested,
                    truncated_accuracy: 100.0 * correct as f64 / videos.max(1) as f64,
                },
            )
        }
        Protocol::Loso => {
            let report = loso_cv(&subjects, &classes, classifier, &LosoScope::All, cfg.seed).map_err(eval_failure)?;
            (report.folds.iter().map(|f| f.window_error).collect(), Outcome::Loso { report })
        }
        Protocol::LosoNeighbors => {
            let rho = cfg.rho.expect("set for loso-neighbors");
            let graph = subject_graph(&subjects, mode, rho).map_err(eval_failure)?;
            let scope = LosoScope::Neighbors {
                graph: graph.clone(),
                pooled: cfg.pooled,
            };
            let report = loso_cv(&subjects, &classes, classifier, &scope, cfg.seed).map_err(eval_failure)?;
            (
                report.folds.iter().map(|f| f.window_error).collect(),
                Outcome::LosoNeighbors { graph, report },
            )
        }
    };

    let unit_summary = eval::summarize(&unit_errors).map_err(eval_failure)?;
    let bins = eval::histogram(&unit_errors).map_err(eval_failure)?;
    let report = Report {
        config: cfg,
        registry_version: REGISTRY_VERSION,
        n_subjects: m.subjects.len(),
        n_rows: m.n_rows(),
        n_features: m.n_features(),
        unit_errors,
        unit_summary,
        result,
    };
    let json = serde_json::to_string_pretty(&report).or_runtime("serializing report")?;
    fs::create_dir_all(&cfg.out).or_runtime(&format!("creating {}", cfg.out.display()))?;
    write_text(&cfg.out.join("report.json"), &(json + "\n"))?;
    write_text(&cfg.out.join("histogram.csv"), &histogram_csv(&bins))?;
    println!(
        "{}: mean error {:.2}% over {} unit(s) -> {}",
        protocol.name(),
        unit_summary.mean,
        unit_summary.n,
        cfg.out.display()
    );
    Ok(())
}

fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        s.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    s
}

fn importance(model_path: &Path, out: &Path) -> CliResult<()> {
    let text = fs::read_to_string(model_path).or_invalid(&format!("reading {}", model_path.display()))?;
    let model = ForestModel::from_json(&text).or_invalid(&format!("parsing {}", model_path.display()))?;
    if !model.registry_matches() {
        eprintln!(
            "warning: model registry {:?} differs from {REGISTRY_VERSION:?}; features are named by index",
            model.registry_version
        );
    }
    let ranking = gini_importance(&model);
    write_atomic(out, |f| {
        writeln!(f, "rank,feature,importance")?;
        for e in &ranking.entries {
            writeln!(f, "{},{},{}", e.rank, e.name, e.importance)?;
        }
        Ok(())
    })?;
    let top = ranking.entries.first().map_or("-", |e| e.name.as_str());
    println!("total importance {:.6}, top feature {top} -> {}", ranking.total(), out.display());
    Ok(())
}

fn cluster(data: &Path, out: &Path, mode: LabelMode, rho: f64) -> CliResult<()> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(invalid(anyhow!("--rho must lie in [-1, 1]")));
    }
    let ratings = corpus::load_ratings(data).or_invalid("loading ratings")?;
    let axis = mode.similarity_axis();
    let ids: Vec<String> = ratings.iter().map(|(id, _)| id.clone()).collect();
    let vectors: Vec<Vec<f64>> = ratings
        .iter()
        .map(|(_, r)| r.iter().map(|t| f64::from(t[axis])).collect())
        .collect();
    let graph = eval::build_neighbor_graph(&ids, &vectors, rho).map_err(eval_failure)?;
    let json = serde_json::to_string_pretty(&graph).or_runtime("serializing graph")?;
    write_text(out, &(json + "\n"))?;
    let edges: usize = graph.adjacency.iter().map(Vec::len).sum::<usize>() / 2;
    println!(
        "{} subjects, {edges} edges, {} fallback link(s) at rho > {rho} -> {}",
        ids.len(),
        graph.fallback.len(),
        out.display()
    );
    Ok(())
}

/// Two subjects, unit noise, quadrant classes planted on the temperature
/// level with a 6-sigma step between neighbouring classes.
fn starter_spec() -> SynthSpec {
    let recipe = synthgen::planted_recipe(1.0, 1);
    SynthSpec {
        n_subjects: 2,
        plan: Some(LabelPlan::cycling(
            LabelMode::Quad,
            synthgen::DEFAULT_PLANT_CHANNEL,
            1.0,
            6.0 / 33.0,
            1,
        )),
        recipe,
    }
}

fn synth(spec_path: &Path, out: &Path) -> CliResult<()> {
    let text = fs::read_to_string(spec_path).or_invalid(&format!("reading {}", spec_path.display()))?;
    let spec: SynthSpec = serde_json::from_str(&text).or_invalid(&format!("parsing {}", spec_path.display()))?;
    if spec.n_subjects == 0 {
        return Err(invalid(anyhow!("n_subjects must be at least 1")));
    }
    let (records, truth) =
        synthgen::generate(&spec.recipe, spec.n_subjects, spec.plan.as_ref()).or_invalid("generating corpus")?;
    write_dir_atomic(out, |dir| {
        synthgen::write_synthetic(dir, &records, &truth).or_runtime("writing corpus")?;
        Ok(())
    })?;
    println!("{} synthetic subject(s) -> {}", records.len(), out.display());
    Ok(())
}
