use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcc_core::checkpoint::{self, adam_checksum, params_checksum, CheckpointError};
use gcc_core::config::{CliConfig, ConfigError, SEED_ENV};
use gcc_core::downstream::{self, DownstreamError, FineTuneMode, LabeledNodes};
use gcc_core::graph::{load_edge_list, Graph, GraphError};
use gcc_core::synthetic;
use gcc_core::trainer::{TrainError, Trainer};

#[derive(Parser)]
#[command(name = "gccpt", version, about = "Contrastive pre-training of structural graph encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train an encoder pair and write a checkpoint plus a loss CSV.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Edge-list files, or directories whose files are all edge lists.
        #[arg(long, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train on the built-in synthetic corpus (cycles, stars, barbells, grids).
        #[arg(long)]
        synthetic: bool,
    },
    /// Write embeddings as CSV.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "node")]
        mode: EmbedMode,
        /// One vertex id per line (node mode); all vertices by default.
        #[arg(long)]
        vertices: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold node classification.
    NodeClassify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "freeze")]
        mode: FineTuneMode,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// k-fold graph classification.
    GraphClassify {
        #[arg(long)]
        ckpt: PathBuf,
        /// Graph-set file of `g <id> <class> <n> <m>` records.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "freeze")]
        mode: FineTuneMode,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Top-k similarity search between the vertices of two graphs.
    Simsearch {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        graph_a: PathBuf,
        #[arg(long)]
        graph_b: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Print a checkpoint's config, step counter and checksums.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EmbedMode {
    Node,
    Graph,
}

/// Failure classes, each with its own exit code.
enum Failure {
    Config(String),
    Data(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<DownstreamError> for Failure {
    fn from(e: DownstreamError) -> Self {
        match e {
            DownstreamError::TooFewFolds(_) | DownstreamError::InvalidK { .. } => Failure::Config(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Failure::Config(e.to_string()),
            TrainError::Diverged { .. } => Failure::Diverged(e.to_string()),
            TrainError::Sink(_) => Failure::Data(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<CliConfig, Failure> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    Ok(CliConfig::parse(&text, env_seed.as_deref())?)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn load_graph(path: &Path) -> Result<Graph, Failure> {
    Ok(load_edge_list(path)?.graph)
}

fn load_corpus(paths: &[PathBuf]) -> Result<Vec<Graph>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| io_failure(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Failure::Data("no input graphs".into()));
    }
    files.iter().map(|f| load_graph(f)).collect()
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    Ok(checkpoint::write_atomic(path, bytes)?)
}

fn loss_csv_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".loss.csv");
    out.with_file_name(name)
}

fn pretrain(config: Option<&Path>, data: &[PathBuf], out: &Path, use_synthetic: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let corpus = if use_synthetic {
        synthetic::pretrain_corpus(cfg.pretrain.seed, cfg.synthetic_per_family)
    } else if data.is_empty() {
        return Err(Failure::Config("pass --data or --synthetic".into()));
    } else {
        load_corpus(data)?
    };
    let csv_path = loss_csv_path(out);
    let mut trainer = Trainer::new(cfg.pretrain)?;
    let mut csv = String::from("step,loss,lr\n");
    let interval = cfg.pretrain.checkpoint_interval;
    trainer.run(&corpus, |r, t| {
        println!("step={} loss={:.6} lr={:.6e}", r.step, r.loss, r.lr);
        let _ = writeln!(csv, "{},{:?},{:?}", r.step, r.loss, r.lr);
        if interval > 0 && t.step % interval == 0 && !t.is_finished() {
            checkpoint::save_checkpoint(t, out).map_err(|e| TrainError::Sink(e.to_string()))?;
        }
        Ok(())
    })?;
    checkpoint::save_checkpoint(&trainer, out)?;
    write_output(&csv_path, csv.as_bytes())?;
    Ok(())
}

fn read_vertex_list(path: &Path, n: usize) -> Result<Vec<usize>, Failure> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: usize = t
            .parse()
            .map_err(|_| Failure::Data(format!("{}:{}: invalid vertex id {t:?}", path.display(), i + 1)))?;
        if v >= n {
            return Err(Failure::Data(format!(
                "{}:{}: vertex {v} out of range for {n} vertices",
                path.display(),
                i + 1
            )));
        }
        out.push(v);
    }
    Ok(out)
}

fn embed(ckpt: &Path, graph: &Path, mode: EmbedMode, vertices: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let trainer = checkpoint::load_checkpoint(ckpt)?;
    let params = &trainer.pair.query;
    let g = load_graph(graph)?;
    let (ids, rows) = match mode {
        EmbedMode::Node => {
            let ids = match vertices {
                Some(p) => read_vertex_list(p, g.num_vertices())?,
                None => (0..g.num_vertices()).collect(),
            };
            let e = downstream::embed_nodes(params, &g, &ids, &trainer.config.rwr)?;
            let rows = (0..e.rows()).map(|i| e.row(i).to_vec()).collect::<Vec<_>>();
            (ids, rows)
        }
        EmbedMode::Graph => {
            let rep = downstream::embed_graph(params, &g, downstream::DEFAULT_GRAPH_CAP)?;
            (vec![0], vec![rep])
        }
    };
    let dim = params.config.out_dim;
    let mut csv = String::from("id");
    for j in 0..dim {
        let _ = write!(csv, ",e{j}");
    }
    csv.push('\n');
    for (id, row) in ids.iter().zip(&rows) {
        let _ = write!(csv, "{id}");
        for x in row {
            let _ = write!(csv, ",{x:.8e}");
        }
        csv.push('\n');
    }
    write_output(out, csv.as_bytes())
}

fn print_report(report: &downstream::ClassificationReport) {
    for (i, acc) in report.fold_accuracies.iter().enumerate() {
        println!("fold={i} acc={acc:.6}");
    }
    println!("mean_acc={:.6}", report.mean_accuracy);
}

fn eval_options(config: Option<&Path>, folds: usize, seed: Option<u64>) -> Result<downstream::EvalOptions, Failure> {
    if folds < 2 {
        return Err(Failure::Config(format!("folds must be >= 2, got {folds}")));
    }
    let cfg = load_config(config)?;
    let mut opts = cfg.eval;
    opts.folds = folds;
    if let Some(s) = seed {
        opts.seed = s;
    }
    Ok(opts)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Pretrain {
            config,
            data,
            out,
            synthetic,
        } => pretrain(config.as_deref(), &data, &out, synthetic),
        Command::Embed {
            ckpt,
            graph,
            mode,
            vertices,
            out,
        } => embed(&ckpt, &graph, mode, vertices.as_deref(), &out),
        Command::NodeClassify {
            ckpt,
            graph,
            labels,
            mode,
            folds,
            seed,
            config,
        } => {
            let opts = eval_options(config.as_deref(), folds, seed)?;
            let trainer = checkpoint::load_checkpoint(&ckpt)?;
            let g = load_graph(&graph)?;
            let labels = downstream::parse_labels(&read_text(&labels)?)?;
            let data = LabeledNodes::new(g, labels)?;
            let report = downstream::node_classify(&trainer.pair.query, &data, &trainer.config.rwr, mode, &opts)?;
            print_report(&report);
            Ok(())
        }
        Command::GraphClassify {
            ckpt,
            dataset,
            mode,
            folds,
            seed,
            config,
        } => {
            let opts = eval_options(config.as_deref(), folds, seed)?;
            let trainer = checkpoint::load_checkpoint(&ckpt)?;
            let data = downstream::parse_graph_set(&read_text(&dataset)?)?;
            let report = downstream::graph_classify(&trainer.pair.query, &data, mode, &opts)?;
            print_report(&report);
            Ok(())
        }
        Command::Simsearch {
            ckpt,
            graph_a,
            graph_b,
            truth,
            k,
        } => {
            if k == 0 {
                return Err(Failure::Config("k must be >= 1".into()));
            }
            let trainer = checkpoint::load_checkpoint(&ckpt)?;
            let g1 = load_graph(&graph_a)?;
            let g2 = load_graph(&graph_b)?;
            let truth = downstream::parse_truth(&read_text(&truth)?)?;
            let hits = downstream::top_k_similarity(&trainer.pair.query, &g1, &g2, &truth, k, &trainer.config.rwr)?;
            println!("hits_at_{k}={hits:?}");
            Ok(())
        }
        Command::Inspect { ckpt } => {
            let bytes = fs::read(&ckpt).map_err(|e| io_failure(&ckpt, e))?;
            let trainer = checkpoint::from_bytes(&bytes)?;
            let config = serde_json::to_string_pretty(&trainer.config).expect("config serializes");
            println!("config={config}");
            println!("step={}", trainer.step);
            println!("query_checksum={:08x}", params_checksum(&trainer.pair.query));
            println!("key_checksum={:08x}", params_checksum(&trainer.pair.key));
            println!("adam_checksum={:08x}", adam_checksum(&trainer.adam));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
