use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pvn_core::config::{ExperimentConfig, Profile};
use pvn_core::dataset::{read_dataset, write_dataset};
use pvn_core::policy::PolicyJson;
use pvn_core::pvn::Checkpoint;
use pvnlab::pipeline::{prepare, run_ascend, run_collect, run_polytope, run_train};
use pvnlab::report::{ascent_curve, curve_csv, parse_traces, render_svg, return_counts};

/// Policy evaluation network experiments.
#[derive(Parser)]
#[command(name = "pvnlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value polytope of a two-state MDP: regression, gradient fields and ascents.
    Polytope(Common),
    /// Generate random CartPole policies and sample their returns.
    Collect(Common),
    /// Train a network on a collected dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset to train on [default: OUT/dataset.jsonl].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Gradient ascent through a trained network.
    Ascend {
        #[command(flatten)]
        common: Common,
        /// Trained network [default: OUT/checkpoint.json].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Histogram and ascent-curve tables, optionally rendered as SVG.
    Report {
        #[command(flatten)]
        common: Common,
        /// [default: OUT/dataset.jsonl]
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Ascent traces; skipped when the default file is absent [default: OUT/traces.csv].
        #[arg(long)]
        traces: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel stages.
    #[arg(long)]
    jobs: Option<usize>,
    /// Configuration overrides, `key=value`.
    overrides: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<pvn_core::Error> for Failure {
    fn from(e: pvn_core::Error) -> Self {
        use pvn_core::Error::*;
        let code = match &e {
            InvalidArgument(_) | Io(_) => 2,
            Schema(_) | Json(_) | EmptyDataset | Shape(_) => 3,
            NonFinite(_) | Singular | NonScalarRoot(_) => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(message: String) -> Failure {
    Failure { code: 2, message }
}

fn read_input(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(out: &Path, name: &str, contents: &str) -> Outcome {
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn json<T: serde::Serialize>(value: &T) -> Outcome<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(pvn_core::Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Profile defaults, then the file, then `key=value` overrides, then `--seed`.
fn load_config(common: &Common, default: Profile) -> Outcome<ExperimentConfig> {
    let mut cfg = ExperimentConfig::profile(default);
    if let Some(path) = &common.config {
        cfg.apply_text(&read_input(path)?)?;
    }
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(format!("expected key=value, got {o:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn setup(common: &Common, default: Profile, command: &str) -> Outcome<ExperimentConfig> {
    let cfg = load_config(common, default)?;
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| usage(format!("cannot size the worker pool: {e}")))?;
    }
    fs::create_dir_all(&common.out).map_err(|e| usage(format!("cannot create {}: {e}", common.out.display())))?;
    write(&common.out, &format!("{command}.config.txt"), &cfg.to_text())?;
    Ok(cfg)
}

fn load_records(path: &Path) -> Outcome<Vec<pvn_core::dataset::PolicyRecord>> {
    let file = fs::File::open(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(read_dataset(BufReader::new(file))?.1)
}

fn polytope(common: &Common) -> Outcome {
    let cfg = setup(common, Profile::Polytope, "polytope")?;
    let run = run_polytope(&cfg)?;
    let out = &common.out;
    write(out, "polytope.csv", &pvn_core::mdp::polytope_csv(&run.points))?;
    write(out, "train_report.csv", &run.report.to_csv())?;
    write(out, "field_exact.csv", &pvn_core::ascent::field_csv(&run.exact_field))?;
    write(out, "field_pvn.csv", &pvn_core::ascent::field_csv(&run.learned_field))?;
    write(out, "trace_exact.csv", &run.exact_trace.to_csv())?;
    write(out, "trace_pvn.csv", &run.learned_trace.to_csv())?;
    write(out, "checkpoint.json", &json(&Checkpoint::new(&run.pvn, Some(run.train_config), cfg.seed))?)?;
    write(out, "summary.json", &json(&run.summary)?)?;
    let s = &run.summary;
    println!(
        "test MAE {:?}, field cosine {:.3}, exact ascent ends at {:?}, learned ascent ends at {:?}, best corner {:?}",
        s.test_mae, s.field_cosine, s.exact_end, s.learned_end, s.best_corner
    );
    Ok(())
}

fn collect(common: &Common) -> Outcome {
    let cfg = setup(common, Profile::CartpoleLinear, "collect")?;
    let (header, records) = run_collect(&cfg)?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &header, &records)?;
    let path = common.out.join("dataset.jsonl");
    fs::write(&path, buf).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    println!("{} policies x {} returns -> {}", header.k, header.b, path.display());
    Ok(())
}

fn train(common: &Common, dataset: Option<&Path>) -> Outcome {
    let cfg = setup(common, Profile::CartpoleLinear, "train")?;
    let path = dataset.map_or_else(|| common.out.join("dataset.jsonl"), Path::to_path_buf);
    let prepared = prepare(&cfg, load_records(&path)?)?;
    let (pvn, tc, report) = run_train(&cfg, &prepared)?;
    write(&common.out, "checkpoint.json", &json(&Checkpoint::new(&pvn, Some(tc), cfg.seed))?)?;
    write(&common.out, "train_report.csv", &report.to_csv())?;
    println!(
        "{} kept, {} discarded; final train loss {:.4}, test loss {}",
        prepared.kept.len(),
        prepared.discarded.len(),
        report.final_train_loss,
        report.test_loss.last().map_or("n/a".into(), |(_, l)| format!("{l:.4}"))
    );
    Ok(())
}

fn ascend(common: &Common, checkpoint: Option<&Path>) -> Outcome {
    let cfg = setup(common, Profile::CartpoleLinear, "ascend")?;
    let path = checkpoint.map_or_else(|| common.out.join("checkpoint.json"), Path::to_path_buf);
    let ck: Checkpoint =
        serde_json::from_str(&read_input(&path)?).map_err(|e| pvn_core::Error::Schema(format!("checkpoint: {e}")))?;
    let run = run_ascend(&cfg, &ck.to_pvn()?)?;
    write(&common.out, "traces.csv", &pvn_core::ascent::traces_csv(&run.outcome.traces))?;
    write(&common.out, "best_policy.json", &json(&PolicyJson::from(&run.best))?)?;
    write(&common.out, "ascent_summary.json", &json(&run.summary())?)?;
    for t in run.outcome.traces.iter().filter(|t| t.aborted.is_some()) {
        eprintln!("restart {} aborted: {}", t.restart, t.aborted.as_deref().unwrap_or_default());
    }
    println!("best policy from restart {}: mean return {:.1}", run.selected, run.final_mean);
    Ok(())
}

fn report(common: &Common, dataset: Option<&Path>, traces: Option<&Path>) -> Outcome {
    let cfg = setup(common, Profile::CartpoleLinear, "report")?;
    let path = dataset.map_or_else(|| common.out.join("dataset.jsonl"), Path::to_path_buf);
    let prepared = prepare(&cfg, load_records(&path)?)?;
    let counts = return_counts(&prepared.kept, &prepared.discarded, prepared.spec);
    write(&common.out, "histogram.csv", &counts.to_csv())?;
    let rows = match traces {
        Some(p) => parse_traces(&read_input(p)?)?,
        None => {
            let p = common.out.join("traces.csv");
            if p.exists() {
                parse_traces(&read_input(&p)?)?
            } else {
                Vec::new()
            }
        }
    };
    if !rows.is_empty() {
        write(&common.out, "ascent_curve.csv", &curve_csv(&ascent_curve(&rows)))?;
    }
    if cfg.svg {
        write(&common.out, "report.svg", &render_svg(&counts, &rows, cfg.return_limit))?;
    }
    println!("{} kept, {} discarded, {} trace rows", prepared.kept.len(), prepared.discarded.len(), rows.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Polytope(c) => polytope(c),
        Command::Collect(c) => collect(c),
        Command::Train { common, dataset } => train(common, dataset.as_deref()),
        Command::Ascend { common, checkpoint } => ascend(common, checkpoint.as_deref()),
        Command::Report { common, dataset, traces } => report(common, dataset.as_deref(), traces.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pvnlab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

