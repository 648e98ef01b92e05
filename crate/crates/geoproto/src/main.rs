use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoproto::archive::ModelArchive;
use geoproto::config::RunConfig;
use geoproto::pipeline::{ablation_text, Pipeline};
use geoproto::report::{self, Format};
use geoproto::{AppError, AppResult};
use geoproto_core::aggregate::PoolMode;
use geoproto_core::synth::PatternKind;

#[derive(Parser)]
#[command(name = "geoproto", version, about = "Prototype-based spatiotemporal event classification")]
struct Cli {
    /// TOML or JSON run configuration; `default` for the built-in one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for encoding and pooling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Locations {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Cache root.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        intervals: Option<usize>,
        #[arg(long, value_enum)]
        pattern: Option<Pattern>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit global baselines on the training split.
    Baseline {
        #[command(flatten)]
        loc: Locations,
    },
    /// Encode every sample into the cache.
    Encode {
        #[command(flatten)]
        loc: Locations,
    },
    /// Train a model and write its archive.
    Train {
        #[command(flatten)]
        loc: Locations,
        /// Archive path (default `<out>/model.gpn`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        pooling: Option<PoolMode>,
    },
    /// Validation and test metrics of a trained model.
    Eval {
        #[command(flatten)]
        loc: Locations,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Explain one sample's prediction.
    Explain {
        #[command(flatten)]
        loc: Locations,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Project prototypes onto their closest training cases.
    Project {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Replace prototypes by their projections and report the metric change.
        #[arg(long)]
        hard: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Per-prototype maps of where the most similar samples occur.
    Maps {
        #[command(flatten)]
        loc: Locations,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per pooling mode and compare.
    Ablation {
        #[command(flatten)]
        loc: Locations,
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Option<Vec<PoolMode>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Run every stage.
    All {
        #[command(flatten)]
        loc: Locations,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Pattern {
    Hotspot,
    Regimes,
}

fn parse_mode(s: &str) -> Result<PoolMode, String> {
    match s {
        "spatial" | "mean" => Ok(PoolMode::Mean),
        "max" => Ok(PoolMode::Max),
        "none" => Ok(PoolMode::None),
        _ => Err(format!("unknown pooling {s:?}; expected spatial, max or none")),
    }
}

fn apply(cfg: &mut RunConfig, loc: &Locations) {
    if let Some(d) = &loc.data {
        cfg.paths.data = d.clone();
    }
    if let Some(c) = &loc.cache {
        cfg.paths.cache = Some(c.clone());
    }
}

fn load_model(p: &Pipeline, path: &Option<PathBuf>) -> AppResult<ModelArchive> {
    ModelArchive::load(&path.clone().unwrap_or_else(|| p.model_path()))
}

fn run(cli: Cli) -> AppResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::Config(e.to_string()))?;
    }

    match cli.command {
        Command::Synth {
            rows,
            cols,
            intervals,
            pattern,
            out,
        } => {
            let s = &mut cfg.synth;
            s.rows = rows.unwrap_or(s.rows);
            s.cols = cols.unwrap_or(s.cols);
            s.intervals = intervals.unwrap_or(s.intervals);
            if let Some(p) = pattern {
                s.pattern.kind = match p {
                    Pattern::Hotspot => PatternKind::Hotspot,
                    Pattern::Regimes => PatternKind::Regimes,
                };
            }
            if let Some(o) = out {
                cfg.paths.data = o;
            }
            cfg.validate()?;
            Pipeline::new(cfg).synth(true)?;
        }
        Command::Baseline { loc } => {
            apply(&mut cfg, &loc);
            let mut p = Pipeline::new(cfg);
            let data = p.data()?;
            p.baseline(&data)?;
        }
        Command::Encode { loc } => {
            apply(&mut cfg, &loc);
            let mut p = Pipeline::new(cfg);
            let data = p.data()?;
            p.encode(&data)?;
        }
        Command::Train { loc, out, pooling } => {
            apply(&mut cfg, &loc);
            if let Some(m) = pooling {
                cfg.pooling.mode = m;
            }
            let mut p = Pipeline::new(cfg);
            let data = p.data()?;
            let enc = p.encode(&data)?;
            let path = out.unwrap_or_else(|| p.model_path());
            p.train(&enc, &path)?;
        }
        Command::Eval { loc, model, format } => {
            apply(&mut cfg, &loc);
            let mut p = Pipeline::new(cfg);
            let archive = load_model(&p, &model)?;
            let data = p.data()?;
            archive.check_encoding(&p.encode_hash(&data.hash))?;
            let enc = p.encode(&data)?;
            let doc = p.evaluate(&archive, &enc)?;
            print!(
                "{}",
                report::render(&doc, format, |d| report::metrics_text("validation", &d.validation)
                    + &report::metrics_text("test", &d.test))
            );
        }
        Command::Explain {
            loc,
            model,
            sample,
            top,
            format,
        } => {
            apply(&mut cfg, &loc);
            let mut p = Pipeline::new(cfg);
            let archive = load_model(&p, &model)?;
            let enc = p.encoded_for(&archive)?;
            let doc = p.explain(&archive, &enc, sample, top.unwrap_or(p.cfg.explain.top_n))?;
            print!("{}", p.write_case(&doc, format)?);
        }
        Command::Project {
            model,
            cache,
            hard,
            format,
        } => {
            if let Some(c) = cache {
                cfg.paths.cache = Some(c);
            }
            let mut p = Pipeline::new(cfg);
            let archive = load_model(&p, &model)?;
            let enc = p.encoded_for(&archive)?;
            let doc = p.project(&archive, &enc, hard || p.cfg.explain.hard_projection)?;
            print!("{}", report::render(&doc, format, report::projection_text));
        }
        Command::Maps {
            loc,
            model,
            percentile,
            out,
        } => {
            apply(&mut cfg, &loc);
            let mut p = Pipeline::new(cfg);
            let archive = load_model(&p, &model)?;
            let enc = p.encoded_for(&archive)?;
            let dir = out.unwrap_or_else(|| p.out_dir().join("maps"));
            let pct = percentile.unwrap_or(p.cfg.explain.percentile);
            let maps = p.maps(&archive, &enc, pct, &dir)?;
            println!("wrote {} maps to {}", maps.len(), dir.display());
        }
        Command::Ablation { loc, modes, out, format } => {
            apply(&mut cfg, &loc);
            if let Some(o) = out {
                cfg.paths.out = o;
            }
            let modes = modes.unwrap_or_else(|| cfg.evaluation.ablation_modes.clone());
            let mut p = Pipeline::new(cfg);
            let data = p.data()?;
            let enc = p.encode(&data)?;
            let rows = p.ablation(&enc, &modes)?;
            print!("{}", report::render(&rows, format, |r| ablation_text(r)));
        }
        Command::All { loc, out } => {
            apply(&mut cfg, &loc);
            if let Some(o) = out {
                cfg.paths.out = o;
            }
            let mut p = Pipeline::new(cfg);
            let m = p.all()?;
            print!(
                "{}{}",
                report::metrics_text("validation", &m.metrics.validation),
                report::metrics_text("test", &m.metrics.test)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
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
