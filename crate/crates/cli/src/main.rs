use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reid_cli::ablate::ablate;
use reid_cli::checkpoint::checkpoint_dir;
use reid_cli::evaluate::{embed, evaluate_model, export_ranking, load_model};
use reid_cli::train::{train, TrainOptions};
use reid_cli::{CliError, RunConfig};
use reid_core::data::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "reid", version, about = "Person re-identification baseline: train, evaluate, ablate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file with [section] key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset for keys the file does not set: desk or paper.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Override one key, e.g. --set train.epochs=10 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for --set data.manifest=PATH.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Shorthand for --set train.seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --set train.epochs=N.
    #[arg(long)]
    epochs: Option<usize>,
    /// Shorthand for --set output.dir=DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = RunConfig::preset(&self.preset)?;
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                RunConfig::parse_onto(base, &text)?
            }
            None => base,
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(m) = &self.manifest {
            cfg.data.manifest = m.clone();
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config.txt, train.log and checkpoint/ to the run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the query and gallery splits.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint directory (default: the run directory's checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate good_practices and every configured ablation over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Shorthand for --set ablate.seeds=N.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Write the top-k gallery entries of every valid query as tab-separated lines.
    ExportRanking {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Output file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render a synthetic dataset and its manifest.
    GenSynthetic {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        train_ids: usize,
        #[arg(long, default_value_t = 20)]
        images_per_id: usize,
        #[arg(long, default_value_t = 10)]
        test_ids: usize,
        #[arg(long, default_value_t = 2)]
        query_per_id: usize,
        #[arg(long, default_value_t = 8)]
        gallery_per_id: usize,
        #[arg(long, default_value_t = 4)]
        cameras: u32,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Render left-right mirror-symmetric images.
        #[arg(long)]
        symmetric: bool,
    },
    /// Print the resolved configuration.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let out_err = |e| CliError::io(std::path::Path::new("<stdout>"), e);
    match command {
        Command::Train { cfg, resume } => {
            let cfg = cfg.resolve()?;
            let outcome = train(&cfg, TrainOptions { resume }, &mut stdout)?;
            writeln!(stdout, "run_dir={}", outcome.run_dir.display()).map_err(out_err)?;
        }
        Command::Eval { cfg, checkpoint } => {
            let cfg = cfg.resolve()?;
            let run_dir = cfg.run_dir();
            let ckpt = checkpoint.unwrap_or_else(|| checkpoint_dir(&run_dir));
            let (model, manifest) = load_model(&cfg, &ckpt)?;
            let outcome = evaluate_model(&cfg, &model, &manifest, &run_dir)?;
            write!(stdout, "{}", outcome.report.to_key_value()).map_err(out_err)?;
            writeln!(stdout, "random_baseline_map={:.6}", outcome.random_baseline_map).map_err(out_err)?;
            writeln!(stdout, "report={}", outcome.report_path.display()).map_err(out_err)?;
        }
        Command::Ablate { cfg, seeds } => {
            let mut cfg = cfg.resolve()?;
            if let Some(s) = seeds {
                cfg.ablate.seeds = s;
            }
            let result = ablate(&cfg)?;
            write!(stdout, "{}", reid_cli::ablate::format_table(&result.rows)).map_err(out_err)?;
            writeln!(stdout, "table={}", result.table_path.display()).map_err(out_err)?;
        }
        Command::ExportRanking {
            cfg,
            checkpoint,
            k,
            output,
        } => {
            let cfg = cfg.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| checkpoint_dir(&cfg.run_dir()));
            let (model, manifest) = load_model(&cfg, &ckpt)?;
            let embedded = embed(&cfg, &model, &manifest)?;
            let mut stderr = std::io::stderr();
            match output {
                Some(path) => {
                    let mut buf = Vec::new();
                    export_ranking(&cfg, &embedded, k, &mut buf, &mut stderr)?;
                    std::fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
                }
                None => {
                    export_ranking(&cfg, &embedded, k, &mut stdout, &mut stderr)?;
                }
            }
        }
        Command::GenSynthetic {
            out,
            train_ids,
            images_per_id,
            test_ids,
            query_per_id,
            gallery_per_id,
            cameras,
            height,
            width,
            seed,
            symmetric,
        } => {
            let cfg = SynthConfig {
                train_ids,
                images_per_train_id: images_per_id,
                test_ids,
                query_per_id,
                gallery_per_id,
                cameras,
                height,
                width,
                seed,
                symmetric,
            };
            let manifest = generate(&cfg, &out)?;
            writeln!(stdout, "manifest={}", manifest.display()).map_err(out_err)?;
        }
        Command::ShowConfig { cfg } => {
            let cfg = cfg.resolve()?;
            write!(stdout, "{}", cfg.to_text()).map_err(out_err)?;
            writeln!(stdout, "# run_dir={}", cfg.run_dir().display()).map_err(out_err)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(1)
        }
    }
}
