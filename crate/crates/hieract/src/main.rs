use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use hieract::config::{load_config, RunConfig};
use hieract::data::{generate_synthetic, make_splits, read_dataset, write_dataset, Dataset};
use hieract::encoding::ProjectionParams;
use hieract::eval::{self, AblationRow, MetricsReport};
use hieract::gradcheck;
use hieract::taxonomy::taxonomy_for;
use hieract::train::{save_report, train, write_metrics_csv};
use hieract::Error;

type Result<T> = hieract::Result<T>;

#[derive(Parser)]
#[command(
    name = "hieract",
    version,
    about = "Hierarchical video-language recognition head: synthetic data, training, \
             evaluation and ablation tools"
)]
struct Cli {
    /// JSON configuration file (flat keys; missing file fields use defaults).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Configuration override, repeatable (e.g. --set epochs=20).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Seed for data generation, splits and training; wins over --set.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; created if missing, no command writes elsewhere.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a synthetic labeled dataset into --out.
    GenData,
    /// Trains a model; writes params.json, report.json and metrics.csv.
    Train {
        /// Dataset directory from gen-data; defaults to generating in memory.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Evaluates saved parameters on the test split.
    Eval {
        /// Dataset directory from gen-data; defaults to generating in memory.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Parameter file from a train run.
        #[arg(long, value_name = "FILE")]
        params: PathBuf,
    },
    /// Trains the full model and each single-switch variant, shared seed.
    Ablate {
        /// Dataset directory from gen-data; defaults to generating in memory.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Audits every operation's gradient against finite differences.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e
                .to_string()
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("bad arguments")
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("error: category=usage {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: category={} {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    init_logging()?;
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Error::io(cli.out.display().to_string(), e))?;
    cfg.save(&cli.out.join("config.json"))?;

    match &cli.command {
        Command::GenData => gen_data(&cli, &cfg),
        Command::Train { data } => run_train(&cli, &cfg, data.as_deref()),
        Command::Eval { data, params } => run_eval(&cli, &cfg, data.as_deref(), params),
        Command::Ablate { data } => run_ablate(&cli, &cfg, data.as_deref()),
        Command::Gradcheck => run_gradcheck(&cli),
    }
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("HIER_LOG_LEVEL") {
        Err(std::env::VarError::NotPresent) => "error".to_string(),
        Err(e) => return Err(Error::Config(format!("HIER_LOG_LEVEL: {e}"))),
        Ok(v) => v,
    };
    if !matches!(level.as_str(), "error" | "info" | "debug") {
        return Err(Error::Config(format!(
            "HIER_LOG_LEVEL must be one of error, info, debug; got {level:?}"
        )));
    }
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
    Ok(())
}

fn obtain_dataset(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(dir) => read_dataset(dir),
        None => {
            let tax = taxonomy_for(cfg.items)?;
            generate_synthetic(&cfg.synth(), &tax)
        }
    }
}

fn gen_data(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let tax = taxonomy_for(cfg.items)?;
    let ds = generate_synthetic(&cfg.synth(), &tax)?;
    write_dataset(&cli.out, &ds)?;
    println!(
        "wrote {} samples ({} items x 3 scores, dim {}) to {}",
        ds.samples(),
        cfg.items,
        cfg.dim,
        cli.out.display()
    );
    Ok(())
}

fn run_train(cli: &Cli, cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    let ds = obtain_dataset(cfg, data)?;
    let splits = make_splits(&ds.labels, ds.taxonomy.num_items(), &cfg.split_spec())?;
    let (params, report) = train(&ds, &splits, &cfg.train_config())?;
    params.save(&cli.out.join("params.json"))?;
    save_report(&cli.out.join("report.json"), &report)?;
    write_metrics_csv(&cli.out.join("metrics.csv"), &report)?;
    if let Some(test) = &report.test {
        println!("{}", summary_line("test", test));
    }
    println!(
        "trained {} epochs in {:.1}s; outputs in {}",
        report.epochs.len(),
        report.wall_time_secs,
        cli.out.display()
    );
    Ok(())
}

fn run_eval(cli: &Cli, cfg: &RunConfig, data: Option<&Path>, params: &Path) -> Result<()> {
    let ds = obtain_dataset(cfg, data)?;
    let splits = make_splits(&ds.labels, ds.taxonomy.num_items(), &cfg.split_spec())?;
    let params = ProjectionParams::load(params)?;
    let report = eval::evaluate(&params, &ds, &splits.test, cfg.train_config().forward_flags())?;
    write_json(&cli.out.join("eval_report.json"), &report)?;
    println!("{}", summary_line("test", &report));
    Ok(())
}

fn run_ablate(cli: &Cli, cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    let ds = obtain_dataset(cfg, data)?;
    let splits = make_splits(&ds.labels, ds.taxonomy.num_items(), &cfg.split_spec())?;
    let rows = eval::run_ablation(&ds, &splits, &cfg.train_config())?;
    eval::write_ablation_csv(&cli.out.join("ablation_table.csv"), &rows)?;
    eval::save_ablation_json(&cli.out.join("ablation_table.json"), &rows)?;
    for row in &rows {
        println!("{}", ablation_line(row));
    }
    Ok(())
}

fn run_gradcheck(cli: &Cli) -> Result<()> {
    let rows = gradcheck::run_suite()?;
    write_json(&cli.out.join("gradcheck.json"), &rows)?;
    for row in &rows {
        println!(
            "{}: max_rel_err={:.3e} tol={:.0e} {}",
            row.name,
            row.max_rel_err,
            row.tol,
            if row.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(worst) = rows
        .iter()
        .filter(|r| !r.passed)
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    {
        return Err(Error::GradCheck {
            op: worst.name.clone(),
            max_rel_err: worst.max_rel_err,
            tol: worst.tol,
        });
    }
    Ok(())
}

fn summary_line(split: &str, m: &MetricsReport) -> String {
    format!(
        "{split}: c1_top1={:.4} c1_top3={:.4} c2_top1_independent={:.4} \
         c2_top1_coherent={:.4} n={}",
        m.c1_top1, m.c1_top3, m.c2_top1_independent, m.c2_top1_coherent, m.n_eval
    )
}

fn ablation_line(row: &AblationRow) -> String {
    let m = &row.metrics;
    format!(
        "{:<14} c1_top1={:.4} c1_top3={:.4} c2_top1_independent={:.4} c2_top1_coherent={:.4}{}",
        row.variant,
        m.c1_top1,
        m.c1_top3,
        m.c2_top1_independent,
        m.c2_top1_coherent,
        if row.flat_baseline { "  [flat baseline]" } else { "" }
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
