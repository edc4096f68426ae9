//! `puscreen` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage error, 10 synth, 11 ingest, 12 features,
//! 13 train, 14 score, 15 evaluate, 16 rank, 17 allocate, 18 sweep,
//! 19 configuration or output-directory problems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use puscreen::pipeline::{self, AtStage, Inputs, RunConfig, Stage, StageError, SweepGrid};
use puscreen::pu::{self, Approach, ModelBundle, ScoredObservation, SpyUnit};
use puscreen::rank::{self, Aggregation, AllocationMode};
use puscreen::synth::{self, SynthConfig};
use puscreen::{eval, features, ingest, io};

type CliResult<T> = std::result::Result<T, StageError>;

#[derive(Parser)]
#[command(name = "puscreen", version, about = "Positive-unlabeled risk screening and inspection planning")]
struct Cli {
    /// Root seed; overrides the seed in any configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration: a generator config for `synth`, a run config
    /// otherwise. Unset fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    #[arg(long, value_parser = parse_approach)]
    approach: Option<Approach>,
    /// Bagging iterations.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    features_per_split: Option<usize>,
    #[arg(long)]
    spy_fraction: Option<f64>,
    /// establishment or observation-week.
    #[arg(long, value_parser = parse_spy_unit)]
    spy_unit: Option<SpyUnit>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark population.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Filter visit records, join ads and label weeks.
    Ingest {
        /// Visit records (CSV or JSON lines).
        #[arg(long, alias = "visits")]
        pois: PathBuf,
        #[arg(long)]
        ads: PathBuf,
        #[arg(long)]
        start_date: Option<NaiveDate>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the 28-feature table from labeled observations.
    Features {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        geo: PathBuf,
        #[arg(long)]
        partisan: Option<PathBuf>,
        /// Consistency features use only weeks before this date.
        #[arg(long)]
        train_end: Option<NaiveDate>,
        /// Output path; `.csv` or JSON lines.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a PU Bagging model.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Hide a spy sample of positives for later evaluation.
        #[arg(long)]
        spies: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every feature row with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute spy metrics and optional business-level cross-validation.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        /// Require and report spy metrics.
        #[arg(long)]
        spy: bool,
        /// Cross-validation folds (needs --features).
        #[arg(long)]
        cv: Option<usize>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Cross-validation aggregation; all three when omitted.
        #[arg(long, value_parser = parse_aggregation)]
        aggregation: Option<Aggregation>,
        /// Ground-truth file from `synth`.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate week scores to establishments and rank them.
    Rank {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_parser = parse_aggregation)]
        aggregation: Option<Aggregation>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose establishments to inspect under a budget.
    Allocate {
        #[arg(long)]
        ranks: PathBuf,
        /// CSV with placekey,cost; every cost is 1 when omitted.
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Defaults to a tenth of the ranked establishments.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AllocationMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search over K, tree depth and forest size with the spy protocol.
    Sweep {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,20,50")]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "30")]
        max_depth: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "100")]
        n_trees: Vec<usize>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_parser = parse_approach)]
        approach: Option<Approach>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage and write a manifest.
    Run {
        /// Run all stages (the only mode; required).
        #[arg(long, required = true)]
        all: bool,
        /// Directory written by `synth`; supplies all inputs.
        #[arg(long)]
        synth_dir: Option<PathBuf>,
        #[arg(long)]
        visits: Option<PathBuf>,
        #[arg(long)]
        ads: Option<PathBuf>,
        #[arg(long)]
        geo: Option<PathBuf>,
        #[arg(long)]
        partisan: Option<PathBuf>,
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        cv: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_approach(s: &str) -> Result<Approach, String> {
    s.parse()
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<AllocationMode, String> {
    s.parse()
}

fn parse_spy_unit(s: &str) -> Result<SpyUnit, String> {
    match s {
        "establishment" => Ok(SpyUnit::Establishment),
        "observation-week" | "week" => Ok(SpyUnit::ObservationWeek),
        other => Err(format!("unknown spy unit {other:?}")),
    }
}

fn config_error(msg: String) -> StageError {
    StageError {
        stage: Stage::Config,
        source: puscreen::Error::Invalid(msg),
    }
}

fn load_run_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => io::read_json::<RunConfig>(p).at(Stage::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) {
    if let Some(a) = m.approach {
        cfg.approach = a;
    }
    if let Some(k) = m.k {
        cfg.pu.k = k;
    }
    if let Some(v) = m.n_trees {
        cfg.pu.forest.n_trees = v;
    }
    if let Some(v) = m.max_depth {
        cfg.pu.forest.max_depth = v;
    }
    if let Some(v) = m.min_leaf {
        cfg.pu.forest.min_leaf = v;
    }
    if let Some(v) = m.features_per_split {
        cfg.pu.forest.features_per_split = v;
    }
    if let Some(v) = m.spy_fraction {
        cfg.pu.spy_fraction = v;
    }
    if let Some(v) = m.spy_unit {
        cfg.pu.spy_unit = v;
    }
}

fn read_scores(path: &Path, stage: Stage) -> CliResult<Vec<ScoredObservation>> {
    io::read_jsonl(path).at(stage)
}

fn print_json(value: serde_json::Result<serde_json::Value>) {
    match value.and_then(|v| serde_json::to_string_pretty(&v)) {
        Ok(s) => println!("{s}"),
        Err(e) => log::warn!("could not print summary: {e}"),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { out_dir } => {
            let mut cfg = match &cli.config {
                Some(p) => io::read_json::<SynthConfig>(p).at(Stage::Config)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let data = synth::generate(&cfg).at(Stage::Synth)?;
            data.write(&out_dir).at(Stage::Synth)?;
            println!(
                "wrote {} visit rows, {} ad rows, {} establishments to {}",
                data.visits.len(),
                data.ads.len(),
                data.truth.len(),
                out_dir.display()
            );
        }
        Command::Ingest {
            pois,
            ads,
            start_date,
            out,
        } => {
            let cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            let (labeled, summary) = ingest::run(&pois, &ads, start_date.unwrap_or(cfg.start_date)).at(Stage::Ingest)?;
            ingest::write_labeled(&out, &labeled).at(Stage::Ingest)?;
            print_json(serde_json::to_value(&summary));
        }
        Command::Features {
            labeled,
            geo,
            partisan,
            train_end,
            out,
        } => {
            let cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            let obs = ingest::read_labeled(&labeled).at(Stage::Features)?;
            let (geo, partisan) = pipeline::load_geo(&geo, partisan.as_deref()).at(Stage::Features)?;
            let (rows, stats) =
                features::build_feature_table(&obs, &geo, &partisan, train_end.or(cfg.train_end)).at(Stage::Features)?;
            features::write_feature_table(&out, &rows).at(Stage::Features)?;
            print_json(serde_json::to_value(&stats));
        }
        Command::Train {
            features,
            spies,
            model,
            out,
        } => {
            // Without a config file only the flag enables spies; with one, its
            // `spies` field applies too, matching `run`.
            let with_spies = spies || (cli.config.is_some() && load_run_config(cli.config.as_deref(), None)?.spies);
            let mut cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            apply_model_args(&mut cfg, &model);
            let rows = features::read_feature_table(&features).at(Stage::Train)?;
            let bundle = pu::train(&rows, &cfg.train_config(), cfg.approach, with_spies).at(Stage::Train)?;
            bundle.save(&out).at(Stage::Train)?;
            println!("trained {} iterations; model written to {}", bundle.model.models.len(), out.display());
        }
        Command::Score { model, features, out } => {
            let bundle = ModelBundle::load(&model).at(Stage::Score)?;
            bundle.check_schema().at(Stage::Score)?;
            let rows = features::read_feature_table(&features).at(Stage::Score)?;
            let scored = pu::score_rows(&bundle, &rows).at(Stage::Score)?;
            io::write_jsonl(&out, &scored).at(Stage::Score)?;
            println!("scored {} rows", scored.len());
        }
        Command::Evaluate {
            scores,
            spy,
            cv,
            features,
            aggregation,
            truth,
            model,
            out,
        } => {
            let mut cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            apply_model_args(&mut cfg, &model);
            cfg.cv_folds = cv.or(cfg.cv_folds);
            let scored = read_scores(&scores, Stage::Evaluate)?;
            if spy && !scored.iter().any(|s| s.role == pu::Role::Spy) {
                return Err(StageError {
                    stage: Stage::Evaluate,
                    source: puscreen::Error::Invalid("scores contain no spy rows; train with --spies".into()),
                });
            }
            let rows = features
                .as_deref()
                .map(features::read_feature_table)
                .transpose()
                .at(Stage::Evaluate)?;
            let illicit = pipeline::read_truth_set(truth.as_deref()).at(Stage::Evaluate)?;
            let mut report = pipeline::evaluate(
                &scored,
                None,
                &RunConfig {
                    cv_folds: None,
                    ..cfg.clone()
                },
                illicit.as_ref(),
            )
            .at(Stage::Evaluate)?;
            report.config = cfg.clone();
            if let Some(folds) = cfg.cv_folds {
                let rows = rows.ok_or_else(|| config_error("--cv needs --features".into()))?;
                let aggs = aggregation.map_or(Aggregation::ALL.to_vec(), |a| vec![a]);
                report.cv = Some(eval::business_cv(&rows, &cfg.cv_config(folds), &aggs).at(Stage::Evaluate)?);
            }
            io::write_json(&out, &report).at(Stage::Evaluate)?;
            print!("{}", report.summary_table());
        }
        Command::Rank {
            scores,
            aggregation,
            out,
        } => {
            let cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            let scored = read_scores(&scores, Stage::Rank)?;
            let ranked = pipeline::rank_scores(&scored, aggregation.unwrap_or(cfg.aggregation)).at(Stage::Rank)?;
            rank::write_ranks(&out, &ranked).at(Stage::Rank)?;
            println!("ranked {} establishments", ranked.len());
        }
        Command::Allocate {
            ranks,
            costs,
            budget,
            mode,
            out,
        } => {
            let mut cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            cfg.budget = budget.or(cfg.budget);
            cfg.allocation = mode.unwrap_or(cfg.allocation);
            let ranked = rank::read_ranks(&ranks).at(Stage::Allocate)?;
            let report = pipeline::allocate(&ranked, costs.as_deref(), cfg.budget, cfg.allocation).at(Stage::Allocate)?;
            println!(
                "selected {} establishments, cost {}, expected detections {:.4}",
                report.plan.selected.len(),
                report.plan.total_cost,
                report.plan.expected_detections
            );
            io::write_json(&out, &pipeline::PlanFile { config: cfg, report }).at(Stage::Allocate)?;
        }
        Command::Sweep {
            features,
            k,
            max_depth,
            n_trees,
            truth,
            approach,
            out,
        } => {
            let mut cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            cfg.approach = approach.unwrap_or(cfg.approach);
            let rows = features::read_feature_table(&features).at(Stage::Sweep)?;
            let illicit = pipeline::read_truth_set(truth.as_deref()).at(Stage::Sweep)?;
            let grid = SweepGrid { k, max_depth, n_trees };
            let table =
                pipeline::sweep(&rows, &cfg.train_config(), cfg.approach, &grid, illicit.as_ref()).at(Stage::Sweep)?;
            io::write_json(&out, &serde_json::json!({ "config": cfg, "grid": grid, "results": table }))
                .at(Stage::Sweep)?;
            print!("{}", pipeline::format_sweep_table(&table));
        }
        Command::Run {
            all,
            synth_dir,
            visits,
            ads,
            geo,
            partisan,
            costs,
            truth,
            cv,
            model,
            out_dir,
        } => {
            debug_assert!(all);
            let mut cfg = load_run_config(cli.config.as_deref(), cli.seed)?;
            apply_model_args(&mut cfg, &model);
            cfg.cv_folds = cv.or(cfg.cv_folds);
            let mut inputs = match &synth_dir {
                Some(dir) => Inputs::from_synth_dir(dir),
                None => Inputs {
                    visits: visits.clone().ok_or_else(|| config_error("--visits or --synth-dir is required".into()))?,
                    ads: ads.clone().ok_or_else(|| config_error("--ads or --synth-dir is required".into()))?,
                    geo: geo.clone().ok_or_else(|| config_error("--geo or --synth-dir is required".into()))?,
                    partisan: None,
                    costs: None,
                    truth: None,
                },
            };
            if let Some(p) = visits {
                inputs.visits = p;
            }
            if let Some(p) = ads {
                inputs.ads = p;
            }
            if let Some(p) = geo {
                inputs.geo = p;
            }
            inputs.partisan = partisan.or(inputs.partisan);
            inputs.costs = costs.or(inputs.costs);
            inputs.truth = truth.or(inputs.truth);
            let (manifest, report) = pipeline::run_pipeline(&inputs, &cfg, &out_dir)?;
            print!("{}", report.summary_table());
            println!(
                "wrote {} artifacts and {} to {}",
                manifest.artifacts.len(),
                pipeline::MANIFEST_FILE,
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(Stage::Config.exit_code() as u8);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
