use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ccpred::charting::write_chart_csv;
use ccpred::dataset::{read_dataset, write_dataset};
use ccpred::pipeline::{self, RunConfig, Split};
use ccpred::{ChartPosition, Dataset, FcfModel, HorizonReport, Method, MetricReport, WienerBank};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::config;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "ccpred",
    version,
    about = "Channel-chart-based CSI prediction workbench",
    after_help = "Every configuration key is also a flag of the same name, e.g. \
                  --memory 10 or --scenario.speed 0.5. Values are JSON; bare words are strings.\n\
                  CCPRED_THREADS caps the number of worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON configuration file, or `demo` for the bundled demo scenario.
    #[arg(long)]
    config: Option<String>,
}

#[derive(Debug, Args)]
struct SeedArgs {
    /// Master seed; every random stream of the run is derived from it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Pred,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one split of the scenario and write it as a CSID file.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the charting function on a training set.
    Chart {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Chart quality of a dataset with ground-truth positions.
    Metrics {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate temporal correlations and build the Wiener filter bank.
    WienerFit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sum rate versus prediction horizon for every method.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        filters: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarize a results CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage in sequence, all artifacts in one directory.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Exclusive claim on an output directory, released on drop.
struct OutputLock(PathBuf);

impl OutputLock {
    const NAME: &'static str = ".ccpred.lock";

    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        let path = dir.join(Self::NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(CliError::output(path, e)),
        }
    }

    fn for_file(file: &Path) -> Result<Self> {
        match file.parent() {
            Some(p) if !p.as_os_str().is_empty() => Self::acquire(p),
            _ => Self::acquire(Path::new(".")),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn resolve(
    cfg: &ConfigArgs,
    seed: Option<&SeedArgs>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let mut run = config::resolve(cfg.config.as_deref(), overrides)?;
    if let Some(s) = seed.and_then(|s| s.seed) {
        config::apply_seed(&mut run, s);
        run.validate()?;
    }
    Ok(run)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input {
            path: path.into(),
            source: e.into(),
        })
}

fn load<T>(path: &Path, read: impl FnOnce(BufReader<File>) -> ccpred::Result<T>) -> Result<T> {
    read(open(path)?).map_err(|source| CliError::Input {
        path: path.into(),
        source,
    })
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    load(path, read_dataset)
}

/// Write a file through `body`, mapping every failure to the path.
fn save(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> ccpred::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::output(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| match e {
        ccpred::Error::Io(io) => CliError::output(path, io),
        other => CliError::Core(other),
    })?;
    w.flush().map_err(|e| CliError::output(path, e))
}

fn save_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

/// Run record stored next to a single-file output.
fn log_beside(file: &Path, command: &str, cfg: &RunConfig, extra: Value) -> Result<()> {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    config::write_log(
        &file.with_file_name(name),
        &config::run_log(command, cfg, extra),
    )
}

fn log_in(dir: &Path, command: &str, cfg: &RunConfig, extra: Value) -> Result<()> {
    config::write_log(
        &dir.join(format!("{command}.run.json")),
        &config::run_log(command, cfg, extra),
    )
}

fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    save(path, |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in history.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    })
}

fn write_chart(path: &Path, chart: &[ChartPosition]) -> Result<()> {
    save(path, |w| write_chart_csv(chart, w))
}

fn write_results(dir: &Path, report: &HorizonReport) -> Result<()> {
    save(&dir.join("results.csv"), |w| report.write_csv(w))?;
    let mirrored = HorizonReport {
        samples: None,
        ..report.clone()
    };
    let json = serde_json::to_string_pretty(&mirrored).expect("report serializes") + "\n";
    save_text(&dir.join("results.json"), &json)?;
    if report.samples.is_some() {
        save(&dir.join("samples.csv"), |w| report.write_samples_csv(w))?;
    }
    Ok(())
}

/// Plain-text table of mean sum rates with a few derived observations.
pub fn render_report(report: &HorizonReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:>3}", "p");
    for m in Method::ALL {
        let _ = write!(out, " {:>10}", m.tag());
    }
    let _ = writeln!(out, " {:>9} {:>8}", "samples", "excluded");
    for p in report.horizons() {
        let _ = write!(out, "{p:>3}");
        for m in Method::ALL {
            match report.mean_sr(m, p) {
                Some(v) => {
                    let _ = write!(out, " {v:>10.4}");
                }
                None => {
                    let _ = write!(out, " {:>10}", "-");
                }
            }
        }
        if let Some(r) = report.rows.iter().find(|r| r.p == p) {
            let _ = write!(out, " {:>9} {:>8.3}", r.n_samples, r.excluded_frac);
        }
        out.push('\n');
    }
    let ps = report.horizons();
    let beats = |p: usize| match (
        report.mean_sr(Method::CcInterp, p),
        report.mean_sr(Method::Outdated, p),
    ) {
        (Some(a), Some(b)) => a >= b,
        _ => false,
    };
    match (0..ps.len()).find(|&i| ps[i..].iter().all(|&p| beats(p))) {
        Some(i) => {
            let _ = writeln!(out, "cc_interp at or above outdated from p = {}", ps[i]);
        }
        None => {
            let _ = writeln!(out, "cc_interp never stays at or above outdated");
        }
    }
    let worst = report
        .rows
        .iter()
        .map(|r| r.excluded_frac)
        .fold(0.0, f64::max);
    let _ = writeln!(out, "max excluded fraction {worst:.3}");
    out
}

fn metrics_extra(report: &MetricReport) -> Value {
    json!({ "metrics": report })
}

pub fn dispatch(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    let takes_config = !matches!(cli.command, Command::Report { .. });
    if !takes_config && !overrides.is_empty() {
        return Err(CliError::Usage(format!(
            "report takes no configuration keys, got --{}",
            overrides[0].0
        )));
    }
    match cli.command {
        Command::Generate {
            cfg,
            seed,
            split,
            out,
        } => {
            let run = resolve(&cfg, Some(&seed), overrides)?;
            let _lock = OutputLock::for_file(&out)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Pred => Split::Pred,
            };
            let data = pipeline::generate(&run, split)?;
            save(&out, |w| write_dataset(&data, w))?;
            log_beside(
                &out,
                "generate",
                &run,
                json!({ "split": format!("{split:?}").to_lowercase() }),
            )?;
            println!("wrote {} ({} snapshots)", out.display(), data.len());
        }
        Command::Chart {
            cfg,
            seed,
            train,
            out_dir,
        } => {
            let run = resolve(&cfg, Some(&seed), overrides)?;
            let data = load_dataset(&train)?;
            let _lock = OutputLock::acquire(&out_dir)?;
            let art = pipeline::chart(&run, &data)?;
            save(&out_dir.join("model.fcf"), |w| art.model.write(w))?;
            write_chart(&out_dir.join("train_chart.csv"), &art.train_chart)?;
            write_history(&out_dir.join("loss.csv"), &art.history)?;
            log_in(
                &out_dir,
                "chart",
                &run,
                json!({ "beta": art.beta, "alpha": art.alpha }),
            )?;
            println!(
                "trained on {} points, final loss {}",
                data.len(),
                art.history.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Metrics {
            cfg,
            data,
            model,
            out,
        } => {
            let run = resolve(&cfg, None, overrides)?;
            let set = load_dataset(&data)?;
            let model = load(&model, FcfModel::read)?;
            let _lock = OutputLock::for_file(&out)?;
            let chart = pipeline::infer_chart(&model, &set, run.taps)?;
            let report = pipeline::metrics(&run, &set, &chart)?;
            save(&out, |w| report.write_csv(w))?;
            log_beside(&out, "metrics", &run, metrics_extra(&report))?;
            println!(
                "CT {:.4} TW {:.4} KS {:.4} MAE {:.4}",
                report.ct, report.tw, report.ks, report.mae
            );
        }
        Command::WienerFit { cfg, train, out } => {
            let run = resolve(&cfg, None, overrides)?;
            let data = load_dataset(&train)?;
            let _lock = OutputLock::for_file(&out)?;
            let bank = pipeline::wiener_fit(&run, &data)?;
            save(&out, |w| bank.write(w))?;
            log_beside(&out, "wiener-fit", &run, json!({}))?;
            println!(
                "wrote {} filters of order {}",
                bank.filters().len(),
                run.memory
            );
        }
        Command::Evaluate {
            cfg,
            train,
            pred,
            model,
            filters,
            out_dir,
        } => {
            let run = resolve(&cfg, None, overrides)?;
            let train = load_dataset(&train)?;
            let pred = load_dataset(&pred)?;
            let model = load(&model, FcfModel::read)?;
            let bank = load(&filters, WienerBank::read)?;
            let _lock = OutputLock::acquire(&out_dir)?;
            let report = pipeline::evaluate(&run, &train, &pred, &model, &bank)?;
            write_results(&out_dir, &report)?;
            log_in(&out_dir, "evaluate", &run, json!({}))?;
            print!("{}", render_report(&report));
        }
        Command::Report { results, out } => {
            let report = load(&results, HorizonReport::read_csv)?;
            let text = render_report(&report);
            match out {
                Some(path) => {
                    let _lock = OutputLock::for_file(&path)?;
                    save_text(&path, &text)?;
                }
                None => print!("{text}"),
            }
        }
        Command::Pipeline { cfg, seed, out_dir } => {
            let run = resolve(&cfg, Some(&seed), overrides)?;
            let _lock = OutputLock::acquire(&out_dir)?;
            let o = pipeline::run(&run)?;
            save(&out_dir.join("train.csid"), |w| write_dataset(&o.train, w))?;
            save(&out_dir.join("pred.csid"), |w| write_dataset(&o.pred, w))?;
            save(&out_dir.join("model.fcf"), |w| o.chart.model.write(w))?;
            write_history(&out_dir.join("loss.csv"), &o.chart.history)?;
            write_chart(&out_dir.join("train_chart.csv"), &o.chart.train_chart)?;
            write_chart(&out_dir.join("pred_chart.csv"), &o.pred_chart)?;
            save(&out_dir.join("train_metrics.csv"), |w| {
                o.train_metrics.write_csv(w)
            })?;
            save(&out_dir.join("pred_metrics.csv"), |w| {
                o.pred_metrics.write_csv(w)
            })?;
            save(&out_dir.join("filters.wnr"), |w| o.bank.write(w))?;
            write_results(&out_dir, &o.report)?;
            let text = render_report(&o.report);
            save_text(&out_dir.join("report.txt"), &text)?;
            log_in(
                &out_dir,
                "pipeline",
                &run,
                json!({
                    "beta": o.chart.beta,
                    "alpha": o.chart.alpha,
                    "train_metrics": o.train_metrics,
                    "pred_metrics": o.pred_metrics,
                }),
            )?;
            print!("{text}");
        }
    }
    Ok(())
}
