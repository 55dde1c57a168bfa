use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kfreloc::evaluation::{DEFAULT_FRAME_TOLERANCE, DEFAULT_GPS_TOLERANCE};
use kfreloc::strategies::{calibrate_distance, calibrate_similarity, medoid_count, select_medoid_k};
use kfreloc::{
    load_features, load_geotags, load_ground_truth, query_exhaustive, quality_gate, recompute_ams,
    run_benchmark, select_distance, select_fixed_rate, select_similarity, BenchmarkConfig,
    DistanceMatrix, Error, FeatureFormat, FrameDatabase, Init, KeyframeSet, QualityVerdict,
    SearchIndex, StrategyKind, StrategySpec, SynthSpec, Task, ToleranceRule,
};

const USAGE: u8 = 1;
const DATA: u8 = 2;

#[derive(Parser)]
#[command(name = "kfreloc", version, about = "Keyframe extraction and two-stage place recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic clustered-trajectory dataset to a directory.
    Synth(SynthArgs),
    /// Select keyframes and write them as JSON.
    Select(SelectArgs),
    /// Answer queries against a keyframe index (or exhaustively), one JSON line each.
    Query(QueryArgs),
    /// Run the ratio x strategy x task grid and write a CSV report.
    Bench(BenchArgs),
    /// Print AMS and region statistics for a keyframe set.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    /// Per-frame angular jitter (radians).
    #[arg(long, default_value_t = 0.05)]
    intra_noise: f64,
    /// Minimum angle between cluster centers (radians).
    #[arg(long, default_value_t = 0.5)]
    inter_gap: f64,
    #[arg(long, default_value_t = 0.02)]
    query_noise: f64,
    /// Half-width of the sweep through each cluster (radians).
    #[arg(long, default_value_t = 0.3)]
    sweep: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Also write db.csv and queries.csv.
    #[arg(long)]
    csv: bool,
}

/// Database feature file plus optional geotags.
#[derive(Args)]
struct DbArgs {
    /// Database features (.vprf binary, or .csv).
    #[arg(long)]
    db: PathBuf,
    /// Geotag CSV (frame,lat,lon).
    #[arg(long)]
    geotags: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    #[value(name = "random_restart", alias = "random-restart")]
    RandomRestart,
    #[value(name = "fixed_rate", alias = "fixed-rate")]
    FixedRate,
}

#[derive(Args)]
struct InitArgs {
    /// Medoid initialization.
    #[arg(long, value_enum, default_value = "random_restart")]
    init: InitArg,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl InitArgs {
    fn init(&self) -> Init {
        match self.init {
            InitArg::RandomRestart => Init::RandomRestart {
                restarts: self.restarts,
                seed: self.seed,
            },
            InitArg::FixedRate => Init::FixedRate,
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DbArgs,
    #[arg(long)]
    strategy: StrategyKind,
    /// Keyframes per database frame.
    #[arg(long, group = "amount")]
    ratio: Option<f64>,
    /// Number of keyframes.
    #[arg(long, group = "amount")]
    count: Option<usize>,
    /// Cosine threshold (similarity) or degrees (distance).
    #[arg(long, group = "amount")]
    threshold: Option<f64>,
    #[command(flatten)]
    init: InitArgs,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for clustering (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    data: DbArgs,
    /// Query features.
    #[arg(long)]
    queries: PathBuf,
    /// Keyframe set JSON written by `select`.
    #[arg(long, required_unless_present = "exhaustive")]
    index: Option<PathBuf>,
    /// Search every database frame instead of using an index.
    #[arg(long, conflicts_with = "index")]
    exhaustive: bool,
    #[arg(long, default_value = "im2im")]
    task: Task,
    #[arg(long, default_value_t = 3)]
    seq_len: usize,
    /// Only answer the query judged at this index.
    #[arg(long)]
    query: Option<usize>,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ToleranceMode {
    Frame,
    Gps,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DbArgs,
    #[arg(long)]
    queries: PathBuf,
    /// Ground truth CSV (query,db or query,lat,lon).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "im2im,seq2seq")]
    tasks: Vec<Task>,
    #[arg(long, value_delimiter = ',', default_value = "medoid,similarity,distance,fixed_rate")]
    strategies: Vec<StrategyKind>,
    #[arg(long, value_enum, default_value = "frame")]
    tolerance_mode: ToleranceMode,
    /// Frames (frame mode) or degrees (gps mode); defaults to 2 or 0.0002.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, default_value_t = 3)]
    seq_len: usize,
    #[command(flatten)]
    init: InitArgs,
    /// Skip the untimed warm-up pass.
    #[arg(long)]
    no_warmup: bool,
    /// Leave out the exhaustive baseline rows.
    #[arg(long)]
    no_baseline: bool,
    /// CSV report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a JSON summary with AUC per strategy and task.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct InspectArgs {
    /// Keyframe set JSON.
    index: PathBuf,
    /// Database to recompute AMS and region sizes against.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Reject the set when its AMS falls below this value.
    #[arg(long)]
    min_ams: Option<f64>,
}

fn open_db(args: &DbArgs) -> kfreloc::Result<FrameDatabase> {
    let db = load(&args.db)?;
    match &args.geotags {
        Some(p) => db.with_geotags(load_geotags(p)?),
        None => Ok(db),
    }
}

fn load(path: &Path) -> kfreloc::Result<FrameDatabase> {
    load_features(path, FeatureFormat::from_path(path))
}

fn create(path: &Path) -> kfreloc::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn threads(n: usize) -> kfreloc::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn synth(a: SynthArgs) -> kfreloc::Result<()> {
    let spec = SynthSpec {
        n_frames: a.frames,
        dim: a.dim,
        n_clusters: a.clusters,
        intra_noise: a.intra_noise,
        inter_gap: a.inter_gap,
        query_noise: a.query_noise,
        sweep: a.sweep,
        seed: a.seed,
    };
    let data = kfreloc::generate(&spec)?;
    data.write_to(&a.out)?;
    if a.csv {
        kfreloc::featurestore::save_features(&data.db, a.out.join("db.csv"), FeatureFormat::Csv)?;
        kfreloc::featurestore::save_features(&data.queries, a.out.join("queries.csv"), FeatureFormat::Csv)?;
    }
    println!(
        "wrote {} frames ({} segments) to {}",
        data.db.len(),
        data.segments.len(),
        a.out.display()
    );
    Ok(())
}

fn select(a: SelectArgs) -> kfreloc::Result<()> {
    threads(a.threads)?;
    let db = open_db(&a.data)?;
    let n = db.len();
    let target = |what: &str| -> kfreloc::Result<usize> {
        match (a.ratio, a.count) {
            (Some(r), _) if r > 0.0 && r <= 1.0 => Ok((r * n as f64).round() as usize),
            (Some(r), _) => Err(Error::InvalidArgument(format!("ratio {r} outside (0, 1]"))),
            (_, Some(c)) => Ok(c),
            _ => Err(Error::InvalidArgument(format!("{what} needs --ratio or --count"))),
        }
    };
    let set = match a.strategy {
        StrategyKind::Medoid => {
            if a.threshold.is_some() {
                return Err(Error::InvalidArgument("medoid takes --ratio or --count, not --threshold".into()));
            }
            let k = match (a.count, a.ratio) {
                (Some(c), _) => c,
                (None, Some(r)) => medoid_count(n, r)?,
                _ => return Err(Error::InvalidArgument("medoid needs --ratio or --count".into())),
            };
            select_medoid_k(&db, &DistanceMatrix::from_database(&db), k, a.init.init())?
        }
        StrategyKind::Similarity => match a.threshold {
            Some(t) => select_similarity(&db, t)?,
            None => calibrate_similarity(&db, target("similarity")?)?,
        },
        StrategyKind::Distance => match a.threshold {
            Some(t) => select_distance(&db, t)?,
            None => calibrate_distance(&db, target("distance")?)?,
        },
        StrategyKind::FixedRate => {
            if a.threshold.is_some() {
                return Err(Error::InvalidArgument("fixed_rate takes --ratio or --count, not --threshold".into()));
            }
            select_fixed_rate(&db, target("fixed_rate")?)?
        }
    };
    set.save(&a.out)?;
    let ams = set.ams.map(|v| format!(", AMS {v:.4}")).unwrap_or_default();
    println!("{} keyframes (ratio {:.4}{ams}) -> {}", set.len(), set.ratio, a.out.display());
    Ok(())
}

fn query(a: QueryArgs) -> kfreloc::Result<()> {
    let db = open_db(&a.data)?;
    let queries = load(&a.queries)?;
    if queries.dim() != db.dim() {
        return Err(Error::DimensionMismatch { expected: db.dim(), found: queries.dim() });
    }
    let seq_len = match a.task {
        Task::Im2Im => 1,
        Task::Seq2Seq => a.seq_len,
    };
    let keyframes = a.index.as_deref().map(KeyframeSet::load).transpose()?;
    let index = match &keyframes {
        Some(k) => {
            k.validate(db.len())?;
            Some(SearchIndex::build(&db, k)?)
        }
        None => None,
    };
    let seqs = kfreloc::evaluation::task_queries(&queries, a.task, seq_len)?;
    let selected: Vec<_> = match a.query {
        Some(q) => {
            let hit: Vec<_> = seqs.into_iter().filter(|(j, _)| *j == q).collect();
            if hit.is_empty() {
                return Err(Error::InvalidArgument(format!("no {} query is judged at index {q}", a.task)));
            }
            hit
        }
        None => seqs,
    };
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for (judged, qseq) in &selected {
        let rep = match &index {
            Some(ix) => ix.query_seq2seq(qseq)?,
            None => query_exhaustive(&db, qseq)?,
        };
        writeln!(out, "{}", rep.to_json_line(*judged)).map_err(|e| io_err(&a.out, e))?;
    }
    out.flush().map_err(|e| io_err(&a.out, e))
}

fn io_err(path: &Option<PathBuf>, e: std::io::Error) -> Error {
    Error::Io {
        path: path.clone().unwrap_or_else(|| "<stdout>".into()),
        source: e,
    }
}

fn bench(a: BenchArgs) -> kfreloc::Result<()> {
    threads(a.threads)?;
    let rule = match a.tolerance_mode {
        ToleranceMode::Frame => {
            let t = a.tolerance.unwrap_or(DEFAULT_FRAME_TOLERANCE as f64);
            if !(t >= 0.0 && t.fract() == 0.0) {
                return Err(Error::InvalidArgument(format!("frame tolerance must be a whole number, got {t}")));
            }
            ToleranceRule::Frame(t as usize)
        }
        ToleranceMode::Gps => ToleranceRule::gps(a.tolerance.unwrap_or(DEFAULT_GPS_TOLERANCE))?,
    };
    let init = a.init.init();
    let strategies = a
        .strategies
        .iter()
        .map(|s| match s {
            StrategyKind::Medoid => StrategySpec::Medoid(init),
            StrategyKind::Similarity => StrategySpec::Similarity,
            StrategyKind::Distance => StrategySpec::Distance,
            StrategyKind::FixedRate => StrategySpec::FixedRate,
        })
        .collect();
    let config = BenchmarkConfig {
        ratios: a.ratios,
        tasks: a.tasks,
        strategies,
        rule,
        seq_len: a.seq_len,
        warmup: !a.no_warmup,
        baseline: !a.no_baseline,
    };
    let db = open_db(&a.data)?;
    let queries = load(&a.queries)?;
    let truth = load_ground_truth(&a.truth)?;
    let report = run_benchmark(&db, &queries, &truth, &config)?;

    let mut csv = create(&a.out)?;
    report.write_csv(&mut csv)?;
    csv.flush().map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    if let Some(p) = &a.json {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &report.summary())?;
        w.flush().map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    for skip in &report.skips {
        let at = skip.ratio.map(|r| format!(" at ratio {r}")).unwrap_or_default();
        eprintln!("skipped {}{at}: {}", skip.strategy, skip.reason);
    }
    println!("{} rows -> {}", report.records.len(), a.out.display());
    Ok(())
}

fn inspect(a: InspectArgs) -> kfreloc::Result<()> {
    let mut set = KeyframeSet::load(&a.index)?;
    println!("strategy   {}", set.strategy);
    println!("keyframes  {}", set.len());
    println!("ratio      {:.4}", set.ratio);
    println!("database   {}", set.db_label);
    for (k, v) in &set.params {
        println!("param      {k} = {v}");
    }
    match set.ams {
        Some(v) => println!("ams        {v:.6}"),
        None => println!("ams        -"),
    }
    if let Some(path) = &a.db {
        let db = load(path)?;
        set.validate(db.len())?;
        if set.len() < db.len() {
            let ams = recompute_ams(&db, &set.indices)?;
            println!("ams (recomputed) {ams:.6}");
            if set.strategy == StrategyKind::Medoid {
                set.ams = Some(ams);
            }
        }
        let index = SearchIndex::build(&db, &set)?;
        let lens: Vec<usize> = index.regions().iter().map(|r| r.len()).collect();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        println!(
            "regions    min {} / mean {mean:.2} / max {}",
            lens.iter().min().unwrap(),
            lens.iter().max().unwrap()
        );
    }
    if let Some(min) = a.min_ams {
        match quality_gate(&set, min) {
            QualityVerdict::Accept { ams } => println!("quality    accept (AMS {ams:.4} >= {min})"),
            QualityVerdict::Reject { reason, .. } => {
                println!("quality    reject: {reason}");
                return Err(Error::Contract(format!("quality gate failed: {reason}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Select(a) => select(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { USAGE } else { DATA })
        }
    }
}
