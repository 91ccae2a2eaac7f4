use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use afape::data::Split;
use afape::dgp::generate;
use afape::pipeline::{
    prepare, run_convergence_prepared, run_prepared, write_convergence_csv, write_results_csv, RunConfig,
};
use afape::positivity::{diagnose, View};
use afape::simulate::{sample_dprime, Inner};
use afape::{AfapeError, Result};

/// Evaluate active feature acquisition agents on retrospective data.
///
/// Set AFAPE_WORKERS to bound the number of worker threads; results do not
/// depend on it.
#[derive(Parser)]
#[command(name = "afape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment 1-5.
    #[arg(long)]
    experiment: Option<String>,
    /// Records to generate.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated agents, e.g. random50,fixed100.
    #[arg(long, value_delimiter = ',')]
    agent: Option<Vec<String>>,
    /// Output file (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Sample the semi-offline simulated dataset of one split.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Simulated trajectories per record (0 = exact enumeration).
        #[arg(long, default_value_t = 0)]
        n_mc: usize,
    },
    /// Fit the classifier, propensity and value models and write them as JSON.
    FitNuisance {
        #[command(flatten)]
        common: Common,
        /// Directory for classifier.json, propensity.json and q-<agent>.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run estimators and emit one CSV row per estimator and agent.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated estimators or "all".
        #[arg(long, value_delimiter = ',')]
        estimator: Option<Vec<String>>,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        normalize: Option<bool>,
    },
    /// Error of the weighting estimators on subsamples of the test split.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// Replicates per subsample size.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Every estimator for every agent of one experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Positivity diagnostics as JSON.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Views to report; all when absent.
        #[arg(long, value_enum, value_delimiter = ',')]
        view: Option<Vec<ViewArg>>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Records to inspect (0 = whole split).
        #[arg(long, default_value_t = 0)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Nuisance,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Nuisance => Split::Nuisance,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Offline,
    Missing,
    SemiGlobal,
    SemiMaximal,
}

impl From<ViewArg> for View {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Offline => View::Offline,
            ViewArg::Missing => View::Missing,
            ViewArg::SemiGlobal => View::SemiGlobal,
            ViewArg::SemiMaximal => View::SemiMaximal,
        }
    }
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        if let Some(e) = &self.experiment {
            cfg.experiment = e.clone();
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = &self.agent {
            cfg.agents = a.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn init_workers() -> Result<()> {
    let Ok(v) = std::env::var("AFAPE_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| AfapeError::config(format!("AFAPE_WORKERS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AfapeError::config(e.to_string()))
}

fn write_json(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_workers()?;
    match cli.command {
        Command::Generate { common, format } => {
            let cfg = common.run_config()?;
            let data = generate(&cfg.dgp()?)?;
            eprintln!("complete-case ratio {:.5}", data.complete_case_ratio());
            let w = common.writer()?;
            match format {
                Format::Csv => data.write_csv(w),
                Format::Jsonl => data.write_jsonl(w),
            }
        }
        Command::Simulate { common, split, n_mc } => {
            let cfg = common.run_config()?;
            let prep = prepare(&cfg)?;
            let agent = cfg.agents.first().expect("validated non-empty");
            let policy = prep.policy(agent)?;
            let sim = prep.sim_policy(&cfg)?;
            let dprime = sample_dprime(
                prep.splits.get(split.into()),
                prep.context(&policy),
                &sim,
                Inner::from_count(n_mc),
                cfg.seed,
            )?;
            dprime.write_csv(common.writer()?)
        }
        Command::FitNuisance { common, out_dir } => {
            let cfg = common.run_config()?;
            let prep = prepare(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            write_json(&out_dir.join("classifier.json"), &prep.classifier.to_json()?)?;
            write_json(&out_dir.join("propensity.json"), &prep.propensity.to_json()?)?;
            for w in &prep.propensity.warnings {
                eprintln!("warning: {w}");
            }
            let sim = prep.sim_policy(&cfg)?;
            for agent in &cfg.agents {
                let policy = prep.policy(agent)?;
                let q = prep.fit_q(&cfg, &policy, &sim).map_err(|e| e.at_stage("q-model"))?;
                write_json(&out_dir.join(format!("q-{agent}.json")), &q.to_json()?)?;
            }
            Ok(())
        }
        Command::Evaluate {
            common,
            estimator,
            bootstrap,
            normalize,
        } => {
            let mut cfg = common.run_config()?;
            if let Some(e) = estimator {
                cfg.estimators = e;
            }
            if let Some(b) = bootstrap {
                cfg.bootstrap = b;
            }
            if let Some(n) = normalize {
                cfg.normalize = n;
            }
            cfg.validate()?;
            experiment(&cfg, &common)
        }
        Command::Convergence { common, ns, seeds } => {
            let mut cfg = common.run_config()?;
            if let Some(ns) = ns {
                cfg.ns = ns;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let prep = prepare(&cfg)?;
            let rows = run_convergence_prepared(&cfg, &prep)?;
            write_convergence_csv(&rows, common.writer()?)
        }
        Command::Experiment { common } => {
            let cfg = common.run_config()?;
            experiment(&cfg, &common)
        }
        Command::Diagnose {
            common,
            view,
            threshold,
            budget,
            split,
        } => {
            let mut cfg = common.run_config()?;
            if let Some(t) = threshold {
                cfg.positivity_threshold = t;
            }
            let prep = prepare(&cfg)?;
            let views: Vec<View> = match view {
                Some(v) => v.into_iter().map(View::from).collect(),
                None => View::ALL.to_vec(),
            };
            let data = prep.splits.get(split.into());
            let mut reports = Vec::new();
            for agent in &cfg.agents {
                let policy = prep.policy(agent)?;
                for &v in &views {
                    let r = diagnose(v, data, &prep.propensity, &policy, cfg.positivity_threshold, budget, cfg.seed);
                    reports.push(serde_json::json!({ "agent": agent, "report": r }));
                }
            }
            let mut w = common.writer()?;
            serde_json::to_writer_pretty(&mut w, &reports)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn experiment(cfg: &RunConfig, common: &Common) -> Result<()> {
    let prep = prepare(cfg)?;
    let out = run_prepared(cfg, &prep)?;
    for s in &out.skipped {
        eprintln!("skipped {} for {}: {}", s.estimator, s.agent, s.reason);
    }
    write_results_csv(&out.rows, common.writer()?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
