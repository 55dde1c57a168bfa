//! Accuracy under frame/GPS tolerance, benchmark grids over keyframe ratios,
//! area under the accuracy curve and the AMS quality gate.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::clustering::{DistanceMatrix, Init};
use crate::error::{Error, Result};
use crate::featurestore::{FrameDatabase, GeoTag, GroundTruth, Truth};
use crate::retrieval::{query_exhaustive, QueryReport, SearchIndex, Task};
use crate::strategies::{
    calibrate_distance, calibrate_similarity, medoid_count, select_fixed_rate, select_medoid_k,
    KeyframeSet, StrategyKind,
};

/// Default sequence length for seq2seq queries.
pub const DEFAULT_SEQ_LEN: usize = 3;
/// Frame tolerance used for frame-indexed ground truth.
pub const DEFAULT_FRAME_TOLERANCE: usize = 2;
/// Manhattan GPS tolerance in degrees.
pub const DEFAULT_GPS_TOLERANCE: f64 = 0.0002;
/// Slack added to GPS tolerances so decimal boundaries stay inclusive after
/// binary rounding of degree coordinates (1e-9 deg is about 0.1 mm).
pub const GPS_BOUNDARY_SLACK: f64 = 1e-9;

/// When a prediction counts as correct.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceRule {
    /// `|pred - truth| <= tol` frames.
    Frame(usize),
    /// Manhattan distance in degrees between the predicted frame's geotag and
    /// the true location `<= tol`.
    Gps(f64),
}

impl ToleranceRule {
    pub fn gps(tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("gps tolerance must be positive, got {tol}")));
        }
        Ok(ToleranceRule::Gps(tol))
    }
}

/// Checks one prediction. Frame-indexed truth can be judged under a GPS rule
/// through the truth frame's geotag.
pub fn is_correct(pred: usize, truth: Truth, rule: ToleranceRule, geotags: Option<&[GeoTag]>) -> Result<bool> {
    match (rule, truth) {
        (ToleranceRule::Frame(tol), Truth::Frame(t)) => Ok(pred.abs_diff(t) <= tol),
        (ToleranceRule::Frame(_), Truth::Gps(_)) => Err(Error::GroundTruth(
            "a frame tolerance needs frame-indexed ground truth".into(),
        )),
        (ToleranceRule::Gps(tol), truth) => {
            let tags = geotags.ok_or(Error::MissingGeotags)?;
            let at = |i: usize| {
                tags.get(i).copied().ok_or_else(|| {
                    Error::Contract(format!("frame {i} has no geotag ({} tags)", tags.len()))
                })
            };
            let want = match truth {
                Truth::Gps(g) => g,
                Truth::Frame(t) => at(t)?,
            };
            Ok(at(pred)?.manhattan(&want) <= tol + GPS_BOUNDARY_SLACK)
        }
    }
}

/// Strategy entry of a benchmark grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrategySpec {
    Medoid(Init),
    Similarity,
    Distance,
    FixedRate,
}

impl StrategySpec {
    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategySpec::Medoid(_) => StrategyKind::Medoid,
            StrategySpec::Similarity => StrategyKind::Similarity,
            StrategySpec::Distance => StrategyKind::Distance,
            StrategySpec::FixedRate => StrategyKind::FixedRate,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub ratios: Vec<f64>,
    pub tasks: Vec<Task>,
    pub strategies: Vec<StrategySpec>,
    pub rule: ToleranceRule,
    pub seq_len: usize,
    /// Run every query once untimed before the measured pass.
    pub warmup: bool,
    pub baseline: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            tasks: vec![Task::Im2Im, Task::Seq2Seq],
            strategies: vec![
                StrategySpec::Medoid(Init::FixedRate),
                StrategySpec::Similarity,
                StrategySpec::Distance,
                StrategySpec::FixedRate,
            ],
            rule: ToleranceRule::Frame(DEFAULT_FRAME_TOLERANCE),
            seq_len: DEFAULT_SEQ_LEN,
            warmup: true,
            baseline: true,
        }
    }
}

/// One grid cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRecord {
    /// Strategy name, or `"baseline"` for exhaustive search.
    pub strategy: String,
    pub task: Task,
    /// Keyframe ratio of the cell; 1.0 for baseline rows.
    pub ratio: f64,
    /// Number of keyframes actually used.
    pub keyframes: usize,
    pub accuracy: f64,
    pub mean_comparisons: f64,
    pub mean_ns: f64,
    pub ams: Option<f64>,
}

/// A strategy/ratio combination that produced no record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Skip {
    pub strategy: String,
    pub ratio: Option<f64>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BenchmarkReport {
    pub records: Vec<BenchmarkRecord>,
    pub skips: Vec<Skip>,
}

/// Outcome of evaluating every query of a task against one searcher.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutcome {
    pub correct: usize,
    pub total: usize,
    pub reports: Vec<QueryReport>,
}

impl TaskOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn mean_comparisons(&self) -> f64 {
        self.reports.iter().map(|r| r.comparisons as f64).sum::<f64>() / self.total as f64
    }

    pub fn mean_ns(&self) -> f64 {
        self.reports.iter().map(|r| r.elapsed_ns as f64).sum::<f64>() / self.total as f64
    }
}

/// Query sequences of a task: im2im uses each query frame; seq2seq uses every
/// run of `seq_len` consecutive query frames, judged at its center.
pub fn task_queries(queries: &FrameDatabase, task: Task, seq_len: usize) -> Result<Vec<(usize, Vec<&[f32]>)>> {
    let len = match task {
        Task::Im2Im => 1,
        Task::Seq2Seq => seq_len,
    };
    if len == 0 || len > queries.len() {
        return Err(Error::InvalidArgument(format!(
            "sequence length {len} invalid for {} queries",
            queries.len()
        )));
    }
    Ok((0..=queries.len() - len)
        .map(|s| (s + len / 2, (s..s + len).map(|i| queries.frame(i)).collect()))
        .collect())
}

/// Runs all queries of `task` through `search` and scores them.
pub fn evaluate_task(
    db: &FrameDatabase,
    queries: &FrameDatabase,
    truth: &GroundTruth,
    task: Task,
    seq_len: usize,
    rule: ToleranceRule,
    warmup: bool,
    mut search: impl FnMut(&[&[f32]]) -> Result<QueryReport>,
) -> Result<TaskOutcome> {
    let seqs = task_queries(queries, task, seq_len)?;
    if warmup {
        for (_, qseq) in &seqs {
            search(qseq)?;
        }
    }
    let mut correct = 0;
    let mut reports = Vec::with_capacity(seqs.len());
    for (judged, qseq) in &seqs {
        let rep = search(qseq)?;
        let t = truth
            .get(*judged)
            .ok_or_else(|| Error::GroundTruth(format!("no entry for query {judged}")))?;
        if is_correct(rep.best_index, t, rule, db.geotags())? {
            correct += 1;
        }
        reports.push(rep);
    }
    Ok(TaskOutcome {
        correct,
        total: seqs.len(),
        reports,
    })
}

fn keyframes_for(
    db: &FrameDatabase,
    dist: &mut Option<DistanceMatrix>,
    spec: StrategySpec,
    ratio: f64,
) -> Result<KeyframeSet> {
    let n = db.len();
    let target = (ratio * n as f64).round() as usize;
    match spec {
        StrategySpec::Medoid(init) => {
            let k = medoid_count(n, ratio)?;
            let dist = dist.get_or_insert_with(|| DistanceMatrix::from_database(db));
            select_medoid_k(db, dist, k, init)
        }
        StrategySpec::FixedRate => select_fixed_rate(db, target.clamp(2, n)),
        StrategySpec::Similarity => calibrate_similarity(db, target),
        StrategySpec::Distance => calibrate_distance(db, target),
    }
}

/// Runs the full grid: baseline rows (exhaustive search) plus one record per
/// (strategy, ratio, task). Inapplicable combinations are recorded as skips.
pub fn run_benchmark(
    db: &FrameDatabase,
    queries: &FrameDatabase,
    truth: &GroundTruth,
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    if config.ratios.is_empty() && !config.baseline {
        return Err(Error::InvalidArgument("nothing to benchmark".into()));
    }
    db.check_dim(queries.dim())?;
    truth.validate(db.len(), queries.len())?;
    if let ToleranceRule::Gps(_) = config.rule {
        if db.geotags().is_none() {
            return Err(Error::MissingGeotags);
        }
    }
    let mut report = BenchmarkReport::default();
    let run = |task: Task, search: &mut dyn FnMut(&[&[f32]]) -> Result<QueryReport>| {
        evaluate_task(db, queries, truth, task, config.seq_len, config.rule, config.warmup, search)
    };

    if config.baseline {
        for &task in &config.tasks {
            let out = run(task, &mut |q| query_exhaustive(db, q))?;
            report.records.push(BenchmarkRecord {
                strategy: "baseline".into(),
                task,
                ratio: 1.0,
                keyframes: db.len(),
                accuracy: out.accuracy(),
                mean_comparisons: out.mean_comparisons(),
                mean_ns: out.mean_ns(),
                ams: None,
            });
        }
    }

    let mut dist = None;
    for &spec in &config.strategies {
        if spec == StrategySpec::Distance && db.geotags().is_none() {
            report.skips.push(Skip {
                strategy: spec.name().into(),
                ratio: None,
                reason: "database has no geotags".into(),
            });
            continue;
        }
        for &ratio in &config.ratios {
            let keyframes = match keyframes_for(db, &mut dist, spec, ratio) {
                Ok(k) => k,
                Err(e) if e.is_usage() => {
                    report.skips.push(Skip {
                        strategy: spec.name().into(),
                        ratio: Some(ratio),
                        reason: e.to_string(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let index = SearchIndex::build(db, &keyframes)?;
            for &task in &config.tasks {
                let out = run(task, &mut |q| index.query_seq2seq(q))?;
                report.records.push(BenchmarkRecord {
                    strategy: spec.name().into(),
                    task,
                    ratio,
                    keyframes: keyframes.len(),
                    accuracy: out.accuracy(),
                    mean_comparisons: out.mean_comparisons(),
                    mean_ns: out.mean_ns(),
                    ams: keyframes.ams,
                });
            }
        }
    }
    Ok(report)
}

/// Trapezoidal area under accuracy over the ratio axis. Points are sorted
/// internally; at least two distinct ratios are required.
pub fn area_under_accuracy(points: &[(f64, f64)]) -> Result<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("duplicate ratio in accuracy curve".into()));
    }
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(
            "area under accuracy needs at least 2 ratios".into(),
        ));
    }
    Ok(pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum())
}

impl BenchmarkReport {
    pub fn records_for<'a>(&'a self, strategy: &'a str, task: Task) -> impl Iterator<Item = &'a BenchmarkRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.strategy == strategy && r.task == task)
    }

    pub fn accuracy_at(&self, strategy: &str, task: Task, ratio: f64) -> Option<f64> {
        self.records_for(strategy, task)
            .find(|r| r.ratio == ratio)
            .map(|r| r.accuracy)
    }

    pub fn baseline(&self, task: Task) -> Option<&BenchmarkRecord> {
        self.records_for("baseline", task).next()
    }

    /// AUC for one strategy/task, `None` when fewer than two ratios ran.
    pub fn auc(&self, strategy: &str, task: Task) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .records_for(strategy, task)
            .map(|r| (r.ratio, r.accuracy))
            .collect();
        area_under_accuracy(&pts).ok()
    }

    /// CSV with header `strategy,task,ratio,accuracy,auc,mean_comparisons,mean_ns,ams`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "strategy",
            "task",
            "ratio",
            "accuracy",
            "auc",
            "mean_comparisons",
            "mean_ns",
            "ams",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let auc = if r.strategy == "baseline" {
                None
            } else {
                self.auc(&r.strategy, r.task)
            };
            out.write_record([
                r.strategy.clone(),
                r.task.to_string(),
                r.ratio.to_string(),
                r.accuracy.to_string(),
                opt(auc),
                r.mean_comparisons.to_string(),
                r.mean_ns.to_string(),
                opt(r.ams),
            ])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))
    }

    /// Summary grouped the way the timing, accuracy and AUC tables are laid
    /// out: strategy -> task -> ratio -> value.
    pub fn summary(&self) -> serde_json::Value {
        let mut time: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
        let mut acc = time.clone();
        let mut auc: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
        for r in &self.records {
            let key = if r.strategy == "baseline" {
                "baseline".to_string()
            } else {
                format!("{}", r.ratio)
            };
            time.entry(r.strategy.clone())
                .or_default()
                .entry(r.task.to_string())
                .or_default()
                .insert(key.clone(), r.mean_ns);
            acc.entry(r.strategy.clone())
                .or_default()
                .entry(r.task.to_string())
                .or_default()
                .insert(key, r.accuracy);
            if r.strategy != "baseline" {
                auc.entry(r.strategy.clone())
                    .or_default()
                    .insert(r.task.to_string(), self.auc(&r.strategy, r.task));
            }
        }
        serde_json::json!({
            "mean_ns": time,
            "accuracy": acc,
            "auc": auc,
            "records": self.records,
            "skips": self.skips,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum QualityVerdict {
    Accept { ams: f64 },
    Reject { ams: Option<f64>, reason: String },
}

/// Accepts medoid keyframes whose AMS reaches `min_ams`. Other strategies
/// carry no quality criterion and are always rejected.
pub fn quality_gate(keyframes: &KeyframeSet, min_ams: f64) -> QualityVerdict {
    match keyframes.ams {
        Some(ams) if keyframes.strategy == StrategyKind::Medoid => {
            if ams >= min_ams {
                QualityVerdict::Accept { ams }
            } else {
                QualityVerdict::Reject {
                    ams: Some(ams),
                    reason: format!("ams {ams:.4} below {min_ams}"),
                }
            }
        }
        _ => QualityVerdict::Reject {
            ams: None,
            reason: "no quality criterion".into(),
        },
    }
}
