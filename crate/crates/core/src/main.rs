use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cocoa::attribution::Method;
use cocoa::foil::{required_foil_size, SampleSizeQuery};
use cocoa::pipeline::{run_attribute, run_embed, run_evaluate, RunConfig};
use cocoa::Result;

#[derive(Parser)]
#[command(name = "cocoa", version, about = "Contrastive corpus attributions for representation encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode tensor files and write their representations.
    Embed {
        #[arg(long)]
        encoder: PathBuf,
        /// Output JSON file (array of vectors).
        #[arg(long)]
        out: PathBuf,
        /// Input tensor files.
        inputs: Vec<PathBuf>,
    },
    /// Compute attribution maps for every explicand in a run config.
    Attribute(RunArgs),
    /// Compute insertion and deletion curves for a run config.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Evaluate seeded uniform random maps instead of stored ones.
        #[arg(long)]
        random: bool,
    },
    /// Number of foil samples needed for the foil term to be within
    /// epsilon of its population value with probability 1 - delta.
    SampleSize {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        epsilon: f64,
        /// Representations are nonnegative (e.g. a relu output layer).
        #[arg(long)]
        nonnegative: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the attribution method.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Override the random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also write PGM heatmaps.
    #[arg(long)]
    heatmap: bool,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected one of vanilla-grad, integrated-gradients, gradient-shap, rise, random".to_string()
    })
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = self.method {
            cfg.attribution.method = m;
        }
        if let Some(s) = self.seed {
            cfg.attribution.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.heatmap |= self.heatmap;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Embed { encoder, out, inputs } => {
            run_embed(&encoder, &inputs, &out)?;
        }
        Command::Attribute(args) => {
            for path in run_attribute(&args.load()?)? {
                println!("{}", path.display());
            }
        }
        Command::Evaluate { run, random } => {
            let mut cfg = run.load()?;
            cfg.evaluation.random |= random;
            let report = run_evaluate(&cfg)?;
            for r in &report.rows {
                println!(
                    "{} {} {} {} mean_auc={} ci95={} n={}",
                    r.method,
                    r.target,
                    r.measure,
                    r.mode.name(),
                    r.mean_auc,
                    r.ci95,
                    r.n
                );
            }
        }
        Command::SampleSize {
            delta,
            epsilon,
            nonnegative,
        } => {
            let q = SampleSizeQuery {
                delta,
                epsilon,
                nonnegative,
            };
            let m = required_foil_size(&q)?;
            println!("{m}");
            println!("{}", q.form().formula());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
