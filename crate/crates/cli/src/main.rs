use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nirtext::pipeline::{self, parse_participant, report, RunConfig};
use nirtext::Error;

#[derive(Parser)]
#[command(name = "nirtext", version, about = "Synthetic fNIRS brain-to-text decoding workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides paths.workdir.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// `section.key=value` override, repeatable. Applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct Who {
    /// Participant number or id (`1`, `p01`); all participants when omitted.
    #[arg(long)]
    participant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy LM if needed and render the synthetic dataset.
    Gen {
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Raw intensity to band-passed haemoglobin for every run.
    Preprocess(Who),
    /// FIR estimate of the haemodynamic delay.
    Delay(Who),
    /// Pretrain and train the brain encoder against the frozen LM.
    Train(Who),
    /// Score the four prompt conditions on the test split.
    Eval(Who),
    /// Fit the cross-participant alignment of every leave-one-out fold.
    Align,
    /// Leave-one-participant-out training, fine-tuning and evaluation.
    Finetune(Who),
    /// Imagined speech vs rest classification with permutation p-values.
    Detect,
    /// Word cloud > rest activation contrast.
    Glm(Who),
    /// Render report.md from the artifacts present.
    Report,
    /// Every stage in order, then the report.
    All,
    /// Print the effective configuration.
    Config,
}

fn resolve(common: &Common, extra: &[String]) -> nirtext::Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut sets = common.set.clone();
    sets.extend_from_slice(extra);
    let mut cfg = base.with_overrides(&sets)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = &common.workdir {
        cfg.paths.workdir = w.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn who(cfg: &RunConfig, w: &Who) -> nirtext::Result<Vec<String>> {
    match &w.participant {
        Some(p) => {
            let id = parse_participant(p)?;
            if !cfg.participant_ids().contains(&id) {
                return Err(Error::config(format!("participant {id} is outside the configured {} participants", cfg.dataset.participants)));
            }
            Ok(vec![id])
        }
        None => Ok(cfg.participant_ids()),
    }
}

fn run(cli: Cli) -> nirtext::Result<()> {
    let mut extra = Vec::new();
    if let Command::Gen { participants, runs } = &cli.command {
        if let Some(n) = participants {
            extra.push(format!("dataset.participants={n}"));
        }
        if let Some(n) = runs {
            extra.push(format!("dataset.runs={n}"));
        }
    }
    let cfg = resolve(&cli.common, &extra)?;
    match &cli.command {
        Command::Config => print!("{}", cfg.to_toml()?),
        Command::Gen { .. } => {
            let lm = pipeline::ensure_lm(&cfg)?;
            for d in pipeline::gen(&cfg, &lm)? {
                println!("{}", d.display());
            }
        }
        Command::Preprocess(w) => pipeline::preprocess(&cfg, &who(&cfg, w)?)?,
        Command::Delay(w) => {
            for p in who(&cfg, w)? {
                let d = pipeline::delay(&cfg, &p)?;
                println!("{p}: haemodynamic delay {} s", d.chosen_delay_s);
            }
        }
        Command::Train(w) => {
            let lm = pipeline::ensure_lm(&cfg)?;
            for p in who(&cfg, w)? {
                let s = pipeline::train(&cfg, &p, &lm)?;
                println!("{p}: best epoch {} of {}, validation loss {:?}", s.best_epoch, s.history.len(), s.best_val);
            }
        }
        Command::Eval(w) => {
            let lm = pipeline::ensure_lm(&cfg)?;
            for p in who(&cfg, w)? {
                let a = pipeline::eval(&cfg, &p, &lm)?;
                println!("## {p}\n\n{}", report::conditions_table(&a.report));
            }
        }
        Command::Align => {
            let lm = pipeline::ensure_lm(&cfg)?;
            for a in pipeline::align(&cfg, &lm)? {
                println!("fold {}: {:?}", a.held_out, a.n_trials);
            }
        }
        Command::Finetune(w) => {
            let lm = pipeline::ensure_lm(&cfg)?;
            for p in who(&cfg, w)? {
                let a = pipeline::finetune(&cfg, &p, &lm)?;
                println!("## {p} held out\n\n{}", report::conditions_table(&a.report));
            }
        }
        Command::Detect => {
            let a = pipeline::detect(&cfg)?;
            print!("{}", a.table.to_csv());
        }
        Command::Glm(w) => {
            for p in who(&cfg, w)? {
                let g = pipeline::glm(&cfg, &p)?;
                let (a, na) = g.active_detected();
                let (q, nq) = g.inactive_quiet();
                println!("{p}: {a}/{na} active pairs with z > 3, {q}/{nq} inactive pairs with |z| < 2");
            }
        }
        Command::Report => print!("{}", report::write_report(&cfg)?),
        Command::All => print!("{}", pipeline::run_all(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
