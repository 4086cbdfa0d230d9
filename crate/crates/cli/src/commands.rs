use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use kacl::bench::{run_scaling_bench, BenchConfig};
use kacl::consistency::build_consistency;
use kacl::dataset::{
    generate_synthetic, load_dataset, load_vocabulary, planted_partner_graph, save_dataset,
};
use kacl::eval::{evaluate, predict_dataset};
use kacl::kgraph::{load_edge_list, map_labels, proximity_table};
use kacl::model::{load_checkpoint, save_checkpoint};
use kacl::{
    ConsistencyMatrix, Dataset, Error, EvalReport, ModelKind, ModelParams, RelationFilter,
    Result, RwrConfig, SynthConfig, TrainConfig,
};

use crate::manifest::{io_error, sidecar, RunManifest};

#[derive(Args)]
pub struct ConsistencyArgs {
    /// Concept edge list: head<TAB>relation<TAB>tail, '#' comments allowed.
    pub edges: PathBuf,
    /// Label vocabulary, one name per line; line number = label index.
    pub vocab: PathBuf,
    /// Output path for the consistency matrix in COO text form.
    #[arg(long)]
    pub out: PathBuf,
    /// Restart probability of the proximity walk.
    #[arg(long, default_value_t = 0.15)]
    pub restart: f64,
    /// Keep entries ranking in the top K of either incident row.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub knn: u64,
    /// Convergence threshold for the walk iteration.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Also write the vocabulary subset that matched a graph concept.
    #[arg(long)]
    pub matched_vocab_out: Option<PathBuf>,
}

pub fn consistency(args: &ConsistencyArgs) -> Result<()> {
    let mut manifest = RunManifest::new("consistency", None);
    manifest.parameter("restart", args.restart);
    manifest.parameter("knn", args.knn);
    manifest.parameter("tol", args.tol);
    manifest.parameter("out", args.out.display().to_string());
    manifest.input("edges", &args.edges)?;
    manifest.input("vocab", &args.vocab)?;
    manifest.write_next_to(&args.out)?;

    let graph = load_edge_list(&args.edges, &RelationFilter::default())?;
    let names = load_vocabulary(&args.vocab)?;
    let mapped = map_labels(&graph, &names);
    let matched = mapped.iter().flatten().count();
    eprintln!("matched {matched}/{} labels to graph concepts", names.len());
    if matched == 0 {
        return Err(Error::InvalidInput(
            "no vocabulary label matches a concept in the graph".into(),
        ));
    }

    let walk = RwrConfig { restart_prob: args.restart, tolerance: args.tol, ..RwrConfig::default() };
    let table = proximity_table(&graph, &mapped, &walk)?;
    if !table.unconverged.is_empty() {
        eprintln!("warning: {} walks hit the iteration cap", table.unconverged.len());
    }
    let full = build_consistency(&table)?;
    let reduced = full.knn_reduce(args.knn as usize)?;
    reduced.write_coo_path(&args.out)?;

    let meta_path = sidecar(&args.out, "meta");
    let meta = format!("restart_prob={}\nknn={}\ntolerance={:e}\n", args.restart, args.knn, args.tol);
    fs::write(&meta_path, meta).map_err(|e| io_error(&meta_path, e))?;

    if let Some(path) = &args.matched_vocab_out {
        let mut out = BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?);
        for (name, id) in names.iter().zip(&mapped) {
            if id.is_some() {
                writeln!(out, "{name}").map_err(|e| io_error(path, e))?;
            }
        }
        out.flush().map_err(|e| io_error(path, e))?;
    }

    println!(
        "wrote {} entries over {} labels to {}",
        reduced.nnz(),
        reduced.size(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for features.tsv, labels.tsv, vocab.txt, graph.coo.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub labels: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub features: u64,
    /// Number of instances.
    #[arg(long, default_value_t = 4000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Target expected label-set size per instance.
    #[arg(long, default_value_t = 3.4)]
    pub avg_labels: f64,
    /// Standard deviation of per-frame feature noise.
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    /// Leading fraction of the vocabulary given near-zero feature signal.
    #[arg(long, default_value_t = 0.3)]
    pub weak_fraction: f64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    /// Prototype scale for weak labels.
    #[arg(long, default_value_t = 0.02)]
    pub weak_scale: f64,
    /// Correlation graph as a COO file; defaults to a planted graph pairing
    /// each weak label with one strong partner plus background edges.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.weak_fraction) {
        return Err(Error::InvalidInput(format!(
            "weak fraction must lie in [0, 1], got {}",
            args.weak_fraction
        )));
    }
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;

    let mut manifest = RunManifest::new("synth", Some(args.seed));
    manifest.parameter("labels", args.labels);
    manifest.parameter("features", args.features);
    manifest.parameter("n", args.n);
    manifest.parameter("avg_labels", args.avg_labels);
    manifest.parameter("noise", args.noise);
    manifest.parameter("weak_fraction", args.weak_fraction);
    manifest.parameter("frames", args.frames);
    manifest.parameter("weak_scale", args.weak_scale);
    manifest.parameter(
        "graph",
        args.graph.as_ref().map(|p| p.display().to_string()),
    );
    manifest.parameter("out", args.out.display().to_string());
    if let Some(path) = &args.graph {
        manifest.input("graph", path)?;
    }
    manifest.write_next_to(&args.out.join("dataset"))?;

    let num_labels = args.labels as usize;
    let weak: Vec<usize> =
        (0..(num_labels as f64 * args.weak_fraction).round() as usize).collect();
    let graph = match &args.graph {
        Some(path) => ConsistencyMatrix::read_coo_path(path)?,
        None => planted_partner_graph(num_labels, &weak, 1.0, 0.2, 2, args.seed)?,
    };

    let mut config = SynthConfig::new(num_labels, args.features as usize, args.n as usize, graph);
    config.avg_labels_per_instance = args.avg_labels;
    config.feature_noise = args.noise;
    config.weak_labels = weak;
    config.frames_per_instance = args.frames as usize;
    config.weak_prototype_scale = args.weak_scale;
    config.seed = args.seed;

    let (dataset, matrix) = generate_synthetic(&config)?;
    save_dataset(
        &dataset,
        args.out.join("features.tsv"),
        args.out.join("labels.tsv"),
        args.out.join("vocab.txt"),
    )?;
    matrix.write_coo_path(args.out.join("graph.coo"))?;
    println!(
        "wrote {} instances, {} labels, graph with {} entries to {}",
        dataset.len(),
        dataset.num_labels(),
        matrix.nnz(),
        args.out.display()
    );
    Ok(())
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum ModelChoice {
    Logistic,
    Moe,
}

impl ModelChoice {
    fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Logistic => ModelKind::Logistic,
            ModelChoice::Moe => ModelKind::MixtureOfExperts,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Consistency matrix COO file from the `consistency` command.
    #[arg(long)]
    pub consistency: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelChoice::Moe)]
    pub model: ModelChoice,
    /// Weight of the consistency penalty; 0 disables it exactly.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    /// Experts per label for the moe model.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub experts: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint output path; the epoch log goes to `<out>.log`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::new("train", Some(args.seed));
    manifest.parameter("model", format!("{:?}", args.model).to_lowercase());
    manifest.parameter("lambda", args.lambda);
    manifest.parameter("lr", args.lr);
    manifest.parameter("epochs", args.epochs);
    manifest.parameter("batch", args.batch);
    manifest.parameter("experts", args.experts);
    manifest.parameter("out", args.out.display().to_string());
    manifest.input("features", &args.features)?;
    manifest.input("labels", &args.labels)?;
    manifest.input("vocab", &args.vocab)?;
    manifest.input("consistency", &args.consistency)?;
    manifest.write_next_to(&args.out)?;

    let dataset: Dataset = load_dataset(&args.features, &args.labels, &args.vocab)?;
    let matrix = ConsistencyMatrix::read_coo_path(&args.consistency)?;
    let config = TrainConfig {
        lambda: args.lambda,
        learning_rate: args.lr,
        epochs: args.epochs as usize,
        batch_size: args.batch as usize,
        num_experts: args.experts as usize,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let (params, report) = kacl::train::train(args.model.kind(), &dataset, &matrix, &config)?;

    save_checkpoint(&args.out, &params, args.seed)?;
    let log_path = sidecar(&args.out, "log");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_error(&log_path, e))?);
    for record in &report.epochs {
        let line = format!(
            "{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.3}",
            record.epoch,
            record.mean_feature_cost,
            record.mean_regularizer,
            record.mean_total,
            record.seconds
        );
        println!("{line}");
        writeln!(log, "{line}").map_err(|e| io_error(&log_path, e))?;
    }
    log.flush().map_err(|e| io_error(&log_path, e))?;
    println!(
        "checkpoint {} ({} {} parameters)",
        args.out.display(),
        params.param_count(),
        params.kind_name()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Ranking cutoff per video.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub top: u64,
    /// Write the key=value report here as well as to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one line per video: id, average precision, ranked label:prob.
    #[arg(long)]
    pub per_video: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    if let Some(anchor) = args.out.as_ref().or(args.per_video.as_ref()) {
        let mut manifest = RunManifest::new("eval", None);
        manifest.parameter("top", args.top);
        manifest.parameter("out", args.out.as_ref().map(|p| p.display().to_string()));
        manifest.parameter(
            "per_video",
            args.per_video.as_ref().map(|p| p.display().to_string()),
        );
        manifest.input("checkpoint", &args.checkpoint)?;
        manifest.input("features", &args.features)?;
        manifest.input("labels", &args.labels)?;
        manifest.input("vocab", &args.vocab)?;
        manifest.write_next_to(anchor)?;
    }

    let (params, _): (ModelParams, u64) = load_checkpoint(&args.checkpoint)?;
    let dataset: Dataset = load_dataset(&args.features, &args.labels, &args.vocab)?;
    let predictions = predict_dataset(&params, &dataset)?;
    let truths: Vec<_> = dataset.instances.iter().map(|v| v.labels.clone()).collect();
    let report = evaluate(&predictions, &truths, args.top as usize)?;

    println!(
        "videos {}  labels {}  top {}",
        dataset.len(),
        dataset.num_labels(),
        args.top
    );
    println!("map  {:.4}", report.map);
    println!("hit  {:.4}", report.hit);
    println!("gap  {:.4}", report.gap);
    let machine = render_key_values(&report);
    print!("{machine}");

    if let Some(path) = &args.out {
        fs::write(path, &machine).map_err(|e| io_error(path, e))?;
    }
    if let Some(path) = &args.per_video {
        let mut out = BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?);
        for video in &report.per_video {
            write!(
                out,
                "{}\t{:.16e}\t",
                dataset.instances[video.index].id, video.average_precision
            )
            .map_err(|e| io_error(path, e))?;
            let ranked: Vec<String> =
                video.ranked.iter().map(|(label, p)| format!("{label}:{p:.6e}")).collect();
            writeln!(out, "{}", ranked.join(" ")).map_err(|e| io_error(path, e))?;
        }
        out.flush().map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn render_key_values(report: &EvalReport) -> String {
    format!(
        "map={:.16e}\nhit={:.16e}\ngap={:.16e}\n",
        report.map, report.hit, report.gap
    )
}

#[derive(Args)]
pub struct BenchArgs {
    /// Label counts to time, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![256, 512, 1024])]
    pub labels: Vec<usize>,
    /// Batch sizes: prediction vectors per measured pass.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4])]
    pub batch: Vec<usize>,
    /// Target incident entries per matrix row.
    #[arg(long, default_value_t = 8)]
    pub nnz: usize,
    /// Minimum wall time per measured block, seconds.
    #[arg(long, default_value_t = 0.01)]
    pub min_duration: f64,
    /// Timing samples per cell; the median is reported.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench_reg(args: &BenchArgs) -> Result<()> {
    if let Some(path) = &args.out {
        let mut manifest = RunManifest::new("bench-reg", Some(args.seed));
        manifest.parameter("labels", args.labels.iter().map(|&l| l as u64).collect::<Vec<_>>());
        manifest.parameter("batch", args.batch.iter().map(|&b| b as u64).collect::<Vec<_>>());
        manifest.parameter("nnz", args.nnz as u64);
        manifest.parameter("min_duration", args.min_duration);
        manifest.parameter("samples", args.samples);
        manifest.parameter("out", path.display().to_string());
        manifest.write_next_to(path)?;
    }

    let config = BenchConfig {
        label_counts: args.labels.clone(),
        batch_sizes: args.batch.clone(),
        nnz_per_row: args.nnz,
        seed: args.seed,
        min_duration: args.min_duration,
        samples: args.samples as usize,
    };
    let records = run_scaling_bench::<f64>(&config)?;

    let mut table = String::from("labels\tbatch\tnnz\tsparse_seconds\tpairwise_seconds\tpairwise_over_sparse\n");
    for record in &records {
        table.push_str(&format!(
            "{}\t{}\t{}\t{:.3e}\t{:.3e}\t{:.1}\n",
            record.num_labels,
            record.batch,
            record.nnz,
            record.laplacian_seconds,
            record.pairwise_seconds,
            record.pairwise_seconds / record.laplacian_seconds
        ));
    }
    print!("{table}");
    if let Some(path) = &args.out {
        fs::write(path, &table).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}
