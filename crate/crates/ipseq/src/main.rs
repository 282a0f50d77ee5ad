use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use ipseq::checkpoint::Checkpoint;
use ipseq::demo::{build_demo, DemoOptions};
use ipseq::engine::Engine;
use ipseq::error::{Error, Result};
use ipseq::server::serve;
use ipseq::simulate::{format_summary, simulate, SimulateOptions, Transport};
use ipseq::training::{train_from_split, TrainSetup};
use ipseq_core::learn::{OptimizerKind, TrainConfig, DEFAULT_CLIP_NORM};
use ipseq_core::model::Modality;
use ipseq_core::vocab::Tokenization;

#[derive(Parser)]
#[command(name = "ipseq", version, about = "Interactive-predictive sequence-to-sequence engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve every task under a tasks directory over HTTP.
    Serve(ServeArgs),
    /// Replay references through the interactive protocol and measure effort.
    Simulate(SimulateArgs),
    /// Train a model on a split and write a checkpoint.
    Train(TrainArgs),
    /// Write small trained demo tasks into a directory.
    Demo(DemoArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "TASKS_DIR", default_value = "tasks")]
    tasks_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, env = "TASKS_DIR", default_value = "tasks")]
    tasks_dir: PathBuf,
    #[arg(long)]
    task: String,
    /// Split stem: `<split>.src` and `<split>.tgt` are read.
    #[arg(long)]
    split: PathBuf,
    /// Update the model after every validated sample.
    #[arg(long)]
    learn: bool,
    /// Online learning rate (0.05 when learning and not given).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
    /// Characters typed per correction.
    #[arg(long, default_value_t = 1)]
    burst: usize,
    /// Drive the engine directly instead of over HTTP.
    #[arg(long)]
    in_process: bool,
    /// Concurrent sessions; needs learning disabled.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Per-sample TSV report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Split stem of the training corpus.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "text")]
    modality: Modality,
    #[arg(long, default_value = "char")]
    src_tokenization: Tokenization,
    #[arg(long, default_value = "word")]
    tgt_tokenization: Tokenization,
    #[arg(long, default_value = "adadelta")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_CLIP_NORM)]
    clip_norm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    max_vocab: usize,
    #[arg(long, default_value_t = 16)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 16)]
    encoder_dim: usize,
    #[arg(long, default_value_t = 32)]
    decoder_dim: usize,
    #[arg(long, default_value_t = 16)]
    attention_dim: usize,
    #[arg(long, default_value_t = ipseq_core::model::DEFAULT_MAX_OUTPUT_LEN)]
    max_len: usize,
    /// Write the loss curve here instead of stdout.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "tasks")]
    out: PathBuf,
    #[arg(long, default_value_t = DemoOptions::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = DemoOptions::default().seed)]
    seed: u64,
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let engine = Arc::new(Engine::load_dir(&args.tasks_dir)?);
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Transport(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Transport(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().unwrap_or(addr));
        serve(listener, engine, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Transport(e.to_string()))
    })
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut opts = SimulateOptions::new(&args.tasks_dir, &args.task, &args.split);
    opts.learn = args.learn;
    opts.lr = args.lr;
    opts.beam = args.beam;
    opts.burst = args.burst;
    opts.transport = if args.in_process { Transport::InProcess } else { Transport::Http };
    opts.parallel = args.parallel;
    opts.report = args.report;
    let report = simulate(&opts)?;
    print!("{}", format_summary(&report.summary));
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut setup = TrainSetup::new(
        args.modality,
        (args.modality == Modality::Text).then_some(args.src_tokenization),
        args.tgt_tokenization,
    );
    setup.max_vocab = args.max_vocab;
    setup.embedding_dim = args.embedding_dim;
    setup.encoder_hidden_dim = args.encoder_dim;
    setup.decoder_hidden_dim = args.decoder_dim;
    setup.attention_dim = args.attention_dim;
    setup.max_output_len = args.max_len;
    setup.train = TrainConfig {
        optimizer: args.optimizer,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        clip_norm: Some(args.clip_norm),
        seed: args.seed,
    };
    let mut sink: Box<dyn std::io::Write> = match &args.loss_curve {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut write_error = None;
    let (ckpt, _): (Checkpoint, _) = train_from_split(&args.train, &setup, |p| {
        if write_error.is_none() {
            if let Err(e) = writeln!(sink, "{}\t{}\t{}", p.epoch, p.batch, p.loss) {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(Error::Transport(format!("writing the loss curve: {e}")));
    }
    ckpt.save(&args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => run_serve(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Train(a) => run_train(a),
        Command::Demo(a) => build_demo(
            &a.out,
            DemoOptions {
                epochs: a.epochs,
                seed: a.seed,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
