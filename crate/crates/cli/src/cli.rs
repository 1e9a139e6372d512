use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use tracing::{info, warn};

use topoadvisor::advisor::{advise, AdviseOptions};
use topoadvisor::case_io::{load_case, read_archive, write_archive, Snapshot};
use topoadvisor::config::Config;
use topoadvisor::grid::Grid;
use topoadvisor::miner::{mine, RemedialDB, WindowSet};
use topoadvisor::powerflow::{n_minus_1, AcSolver, SecurityCriterion};
use topoadvisor::scenario::{
    build_dataset, case_rng, event_fixture, plan_events, synth_history, Dataset, Sampler, Split,
};
use topoadvisor::surrogate::{fast_n_minus_1, train, SurrogateModel};

use crate::error::{CliError, Context};
use crate::service::{self, Session};

#[derive(Debug, Parser)]
#[command(name = "topoadvisor", version, about = "Topology advice for power grid operation")]
pub struct Cli {
    /// Seed for every stochastic stage; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Where the grid state comes from: a saved grid or a case file.
#[derive(Debug, Clone, clap::Args)]
pub struct GridArgs {
    /// MATPOWER case file or bundled case name.
    #[arg(long, default_value = "case30")]
    pub case: String,
    /// Grid state saved as JSON; takes precedence over --case.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a case file and summarize it.
    Parse {
        case: String,
        /// Write the parsed grid as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic snapshot archive with planted events.
    SynthHistory {
        #[arg(long, default_value = "case30")]
        case: String,
        /// Archive output, one JSON record per line.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth events as JSON.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Directory receiving one overloaded grid per protective event.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Mine remedial actions from a snapshot archive.
    Mine {
        archive: PathBuf,
        #[arg(long, default_value = "case30")]
        case: String,
        /// `default` or a comma-separated list such as `5min, 1h30`.
        #[arg(long)]
        windows: Option<String>,
        /// Remedial database output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample and label a training dataset.
    GenDataset {
        #[arg(long, default_value = "case30")]
        case: String,
        #[arg(long)]
        out: PathBuf,
        /// Samples per outage configuration.
        #[arg(long)]
        n_s: Option<usize>,
    },
    /// Train the load-flow surrogate.
    Train {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report surrogate errors per output block.
    Eval {
        model: PathBuf,
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Screen every single-line outage with the surrogate.
    Screen {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Recommend topological actions for the grid's overloads.
    Advise {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Remedial database from `mine`.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Substations explored per issue.
        #[arg(long)]
        k: Option<usize>,
        /// Cap on reference-solver calls.
        #[arg(long)]
        budget: Option<usize>,
        /// Recheck single-line outages when validating.
        #[arg(long)]
        n_minus_1: bool,
    },
    /// Time surrogate screening against full AC N-1 analysis.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "case30")]
        case: String,
        #[arg(long, default_value_t = 100)]
        reps: usize,
    },
    /// Serve the JSON API.
    Serve {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn config(cli: &Cli) -> Result<Config, CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn load_grid(case: &str) -> Result<Grid, CliError> {
    let parsed = load_case(case).context(format!("case {case}"))?;
    for w in &parsed.warnings {
        warn!(case, "{w}");
    }
    Ok(parsed.grid)
}

fn grid_of(args: &GridArgs) -> Result<Grid, CliError> {
    match &args.state {
        Some(path) => {
            let grid: Grid = serde_json::from_reader(BufReader::new(open(path)?)).context(path.display())?;
            grid.validate().context(path.display())?;
            Ok(grid)
        }
        None => load_grid(&args.case),
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).context(path.display())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).context(path.display())?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).context(path.display())?;
    out.flush().context(path.display())
}

fn read_model(path: &Path) -> Result<SurrogateModel, CliError> {
    SurrogateModel::read(BufReader::new(open(path)?)).context(path.display())
}

fn read_db(path: Option<&Path>) -> Result<RemedialDB, CliError> {
    match path {
        Some(p) => RemedialDB::read(BufReader::new(open(p)?)).context(p.display()),
        None => Ok(RemedialDB::default()),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::read(BufReader::new(open(path)?)).context(path.display())
}

/// Writes `value` to stdout; a closed pipe is not an error.
fn print(value: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = config(&cli)?;
    let solver = AcSolver::default();
    match cli.command {
        Command::Parse { case, out } => {
            let parsed = load_case(&case).context(format!("case {case}"))?;
            let g = &parsed.grid;
            if let Some(path) = out {
                write_json(&path, g)?;
            }
            print(&json!({
                "case": case,
                "summary": format!("{} buses, {} lines", g.buses.len(), g.lines.len()),
                "buses": g.buses.len(),
                "lines": g.lines.len(),
                "generators": g.generators.len(),
                "loads": g.loads.len(),
                "total_load_mw": g.total_load_mw(),
                "synthetic_ratings": parsed.synthetic_ratings,
                "warnings": parsed.warnings,
            }));
        }
        Command::SynthHistory {
            case,
            out,
            events,
            fixtures,
        } => {
            let base = load_grid(&case)?;
            let hc = config.history_config();
            let planned = plan_events(&base, &hc, &solver).context("event planning")?;
            let history = synth_history(&base, &planned, &hc, &solver).context("history")?;
            write_archive(create(&out)?, &history.snapshots)
                .context(out.display())?
                .flush()
                .context(out.display())?;
            if let Some(path) = events {
                write_json(&path, &history.events)?;
            }
            let mut written = Vec::new();
            if let Some(dir) = fixtures {
                std::fs::create_dir_all(&dir).context(dir.display())?;
                for (i, e) in history.events.iter().filter(|e| e.relieved.is_some()).enumerate() {
                    let path = dir.join(format!("fixture_{i:02}.json"));
                    write_json(&path, &event_fixture(&base, &hc, e))?;
                    written.push(json!({ "path": path, "action": e.action, "relieved": e.relieved }));
                }
            }
            print(&json!({
                "snapshots": history.snapshots.len(),
                "events": history.events.len(),
                "fixtures": written,
            }));
        }
        Command::Mine {
            archive,
            case,
            windows,
            out,
        } => {
            let base = load_grid(&case)?;
            let mut mc = config.miner_config().map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(w) = windows {
                mc.windows = w.parse::<WindowSet>().map_err(|e| CliError::Usage(format!("--windows: {e}")))?;
            }
            let snapshots: Vec<Snapshot> = read_archive(BufReader::new(open(&archive)?), &base)
                .collect::<Result<_, _>>()
                .context(archive.display())?;
            let started = Instant::now();
            let result = mine(&snapshots, &mc, &solver);
            info!(seconds = started.elapsed().as_secs_f64(), "mining done");
            if let Some(path) = out {
                let mut w = create(&path)?;
                result.db.write(&mut w).context(path.display())?;
                w.flush().context(path.display())?;
            }
            let table: Vec<_> = result
                .stats
                .table()
                .iter()
                .map(|(label, value)| json!({ "counter": label, "value": value }))
                .collect();
            print(&json!({ "counters": table, "stats": result.stats, "windows": mc.windows.labels() }));
        }
        Command::GenDataset { case, out, n_s } => {
            let base = load_grid(&case)?;
            let mut sc = config.sampling.clone();
            if let Some(n) = n_s {
                sc.n_s = n;
            }
            let ds = build_dataset(&base, &sc, &solver).context("dataset")?;
            let mut w = create(&out)?;
            ds.write(&mut w).context(out.display())?;
            w.flush().context(out.display())?;
            print(&json!({
                "cases": ds.cases.len(),
                "diverged": ds.diverged,
                "train": ds.count(Split::Train),
                "valid": ds.count(Split::Valid),
                "test": ds.count(Split::Test),
            }));
        }
        Command::Train { dataset, out, epochs } => {
            let ds = read_dataset(&dataset)?;
            let mut tc = config.training.clone();
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let model = train(&ds, &tc).context("training")?;
            let mut w = create(&out)?;
            model.write(&mut w).context(out.display())?;
            w.flush().context(out.display())?;
            let test = model.evaluate(&ds, Split::Test).context("evaluation")?;
            print(&json!({
                "epochs": model.meta.epochs,
                "best_epoch": model.meta.best_epoch,
                "seconds": model.meta.seconds,
                "test": test,
            }));
        }
        Command::Eval { model, dataset, split } => {
            let m = read_model(&model)?;
            let ds = read_dataset(&dataset)?;
            let report = m.evaluate(&ds, split.into()).context("evaluation")?;
            print(&serde_json::to_value(report).expect("serializable"));
        }
        Command::Screen { model, grid, margin } => {
            let m = read_model(&model)?;
            let g = grid_of(&grid)?;
            let crit = SecurityCriterion::n_minus_one(config.criterion.threshold);
            let report = fast_n_minus_1(&m, &g, &crit, margin.unwrap_or(config.screening.margin)).context("screening")?;
            print(&serde_json::to_value(report).expect("serializable"));
        }
        Command::Advise {
            grid,
            model,
            db,
            k,
            budget,
            n_minus_1,
        } => {
            let g = grid_of(&grid)?;
            let m = model.as_deref().map(read_model).transpose()?;
            let db = read_db(db.as_deref())?;
            let opts = AdviseOptions {
                k: k.unwrap_or(config.advise.k),
                budget: budget.or(config.advise.budget),
                validate_n_minus_1: n_minus_1 || config.advise.validate_n_minus_1,
                ..config.advise.clone()
            };
            let advice = advise(&g, &config.criterion, m.as_ref(), &db, &config.cost, &opts, &solver)
                .map_err(|e| match e {
                    topoadvisor::advisor::AdviceError::InvalidOptions(m) => CliError::Usage(m),
                    other => CliError::data("advice", other),
                })?;
            print(&serde_json::to_value(advice).expect("serializable"));
        }
        Command::Bench { model, case, reps } => {
            let m = read_model(&model)?;
            let base = load_grid(&case)?;
            print(&bench(&m, &base, &config, reps)?);
        }
        Command::Serve { grid, model, db, bind } => {
            let session = Session {
                grid: grid_of(&grid)?,
                model: model.as_deref().map(read_model).transpose()?,
                db: read_db(db.as_deref())?,
                criterion: config.criterion,
                cost: config.cost.clone(),
                advise: config.advise.clone(),
                margin: config.screening.margin,
            };
            let rt = tokio::runtime::Runtime::new().context("runtime")?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(bind).await.context(bind)?;
                let addr = listener.local_addr().context(bind)?;
                print(&json!({ "listening": addr.to_string() }));
                axum::serve(listener, service::router(session)).await.context("server")
            })?;
        }
    }
    Ok(())
}

fn bench(model: &SurrogateModel, base: &Grid, config: &Config, reps: usize) -> Result<serde_json::Value, CliError> {
    if reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    let sampler = Sampler::new(&config.sampling).map_err(|e| CliError::Usage(e.to_string()))?;
    let states: Vec<Grid> = (0..reps)
        .map(|i| sampler.sample(base, None, &mut case_rng(config.sampling.seed ^ 0xbe4c, i as u64)))
        .collect::<Result<_, _>>()
        .context("sampling")?;
    let crit = SecurityCriterion::n_minus_one(config.criterion.threshold);
    let solver = AcSolver::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().context("thread pool")?;
    pool.install(|| {
        fast_n_minus_1(model, &states[0], &crit, config.screening.margin).context("screening")?;
        let started = Instant::now();
        for g in &states {
            fast_n_minus_1(model, g, &crit, config.screening.margin).context("screening")?;
        }
        let fast = started.elapsed().as_secs_f64();
        let started = Instant::now();
        for g in &states {
            std::hint::black_box(n_minus_1(g, &crit, &solver));
        }
        let full = started.elapsed().as_secs_f64();
        Ok(json!({
            "screenings": reps,
            "threads": 1,
            "surrogate_ms": 1e3 * fast / reps as f64,
            "ac_ms": 1e3 * full / reps as f64,
            "speedup": full / fast,
        }))
    })
}
