use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mofo::harness::config::parse_kv;
use mofo::harness::run::{read_trace_csv, run_on, summary_text, write_trace_csv};
use mofo::harness::verify::{self, preset, PRESETS};
use mofo::harness::{
    emit_plot, exit_code, run_pareto_sweep, ExperimentConfig, PlotData, PlotKind, SweepTable,
};
use mofo::MofoError;

/// Environment variable that overrides the output directory.
const OUT_ENV: &str = "MOFO_OUT_DIR";
const DEFAULT_OUT: &str = "mofo-out";

#[derive(Parser, Debug)]
#[command(name = "mofo", version, about = "Momentum-filtered fine-tuning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[arg(long, global = true, value_name = "N")]
    steps: Option<u64>,

    /// adam, mofo, lion, mofo-lion, random-bcd, grad-bcd, mv-bcd, gv-bcd, hft
    #[arg(long, global = true, value_name = "NAME")]
    optimizer: Option<String>,

    /// Filter fraction in percent, (0, 100].
    #[arg(long, global = true, value_name = "PCT")]
    alpha: Option<f64>,

    /// Output directory (default `mofo-out`).
    #[arg(long, global = true, value_name = "DIR", env = OUT_ENV)]
    out: Option<PathBuf>,

    /// epsilon = 0 and per-step update-bound auditing.
    #[arg(long, global = true)]
    theory_mode: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its trace.
    Run {
        /// Start from a named configuration.
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
    },
    /// Run a grid over alpha or the regularization strength.
    Sweep {
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Comma-separated alpha values (percent).
        #[arg(long, value_name = "LIST", conflicts_with = "lambda_grid")]
        alpha_grid: Option<String>,
        /// Comma-separated regularization strengths.
        #[arg(long, value_name = "LIST")]
        lambda_grid: Option<String>,
        /// none, l1 or l2
        #[arg(long, value_name = "KIND")]
        reg: Option<String>,
    },
    /// Run the acceptance checks.
    Verify {
        /// Comma-separated check ids; all when omitted.
        #[arg(long, value_name = "IDS")]
        only: Option<String>,
    },
    /// Render an SVG from a trace or sweep CSV.
    Plot {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        /// loss_curve, distance_bar or pareto_scatter
        #[arg(long, value_name = "KIND")]
        kind: Option<String>,
        /// Output file; defaults to `<out>/<kind>.svg`.
        #[arg(long, value_name = "SVG")]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, MofoError> {
    match &cli.command {
        Command::Run { preset } => cmd_run(&cli.common, preset.as_deref()),
        Command::Sweep { preset, alpha_grid, lambda_grid, reg } => {
            let mut extra = BTreeMap::new();
            if let Some(g) = alpha_grid {
                extra.insert("alpha_grid".to_string(), g.clone());
            }
            if let Some(g) = lambda_grid {
                extra.insert("lambda_grid".to_string(), g.clone());
            }
            if let Some(r) = reg {
                extra.insert("reg".to_string(), r.clone());
            }
            cmd_sweep(&cli.common, preset.as_deref(), &extra)
        }
        Command::Verify { only } => cmd_verify(only.as_deref()),
        Command::Plot { input, kind, output } => cmd_plot(&cli.common, input, kind.as_deref(), output.as_deref()),
    }
}

/// Preset, then config file, then `extra`, then flags.
fn build_config(
    common: &Common,
    preset_name: Option<&str>,
    extra: &BTreeMap<String, String>,
) -> Result<ExperimentConfig, MofoError> {
    let mut cfg = match preset_name {
        Some(name) => preset(name).ok_or_else(|| {
            MofoError::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| MofoError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply(&parse_kv(&text)?)?;
    }
    cfg.apply(extra)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = common.steps {
        cfg.steps = steps;
    }
    if let Some(name) = &common.optimizer {
        cfg.optimizer = name.parse()?;
    }
    if let Some(alpha) = common.alpha {
        cfg.hyper.alpha_pct = alpha;
    }
    if common.theory_mode {
        cfg.hyper.theory_mode = true;
        cfg.hyper.epsilon = 0.0;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn cmd_run(common: &Common, preset_name: Option<&str>) -> Result<u8, MofoError> {
    let cfg = build_config(common, preset_name, &BTreeMap::new())?;
    let dir = out_dir(&cfg);
    let problem = cfg.problem.build(cfg.seed)?;
    let trace = dir.join("trace.csv");
    match run_on(problem.as_ref(), &cfg) {
        Ok(record) => {
            write_trace_csv(&trace, &record.rows)?;
            let summary = summary_text(&cfg, &record);
            fs::write(dir.join("summary.txt"), &summary)?;
            emit_plot(PlotData::Trace(&record.rows), PlotKind::LossCurve, &dir.join("loss_curve.svg"))?;
            print!("{summary}");
            println!("trace written to {}", trace.display());
            if cfg.hyper.theory_mode && record.lemma_violations > 0 {
                eprintln!("update bound violated on {} steps", record.lemma_violations);
                return Ok(2);
            }
            Ok(0)
        }
        Err(failure) => {
            write_trace_csv(&trace, &failure.rows)?;
            eprintln!("partial trace written to {}", trace.display());
            Err(failure.error)
        }
    }
}

fn cmd_sweep(
    common: &Common,
    preset_name: Option<&str>,
    extra: &BTreeMap<String, String>,
) -> Result<u8, MofoError> {
    let cfg = build_config(common, preset_name, extra)?;
    let dir = out_dir(&cfg);
    let table = run_pareto_sweep(&cfg)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("sweep.csv"), table.to_csv())?;
    print!("{}", table.to_csv());
    let ok = table.ok_rows().count();
    if ok == 0 {
        return Err(MofoError::Numeric {
            step: 0,
            reason: "every grid cell failed".into(),
        });
    }
    emit_plot(PlotData::Sweep(&table), PlotKind::ParetoScatter, &dir.join("pareto_scatter.svg"))?;
    emit_plot(PlotData::Sweep(&table), PlotKind::DistanceBar, &dir.join("distance_bar.svg"))?;
    if ok < table.rows.len() {
        eprintln!("{} of {} grid cells failed", table.rows.len() - ok, table.rows.len());
    }
    Ok(0)
}

fn cmd_verify(only: Option<&str>) -> Result<u8, MofoError> {
    let ids: Option<Vec<u8>> = only
        .map(|s| {
            s.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| MofoError::Config(format!("bad check id `{x}`")))
                })
                .collect()
        })
        .transpose()?;
    let mut failed = 0;
    for (id, _, check) in verify::CHECKS {
        if ids.as_ref().is_some_and(|ids| !ids.contains(&id)) {
            continue;
        }
        let outcome = check();
        println!("{outcome}");
        if !outcome.passed {
            failed += 1;
        }
    }
    Ok(if failed == 0 { 0 } else { 3 })
}

fn cmd_plot(
    common: &Common,
    input: &Path,
    kind: Option<&str>,
    output: Option<&Path>,
) -> Result<u8, MofoError> {
    let text = fs::read_to_string(input)
        .map_err(|e| MofoError::Config(format!("{}: {e}", input.display())))?;
    let kind = kind.map(str::parse::<PlotKind>).transpose()?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let name = |k: PlotKind| match k {
        PlotKind::LossCurve => "loss_curve.svg",
        PlotKind::DistanceBar => "distance_bar.svg",
        PlotKind::ParetoScatter => "pareto_scatter.svg",
    };
    let written = if let Ok(table) = SweepTable::from_csv(&text) {
        let kind = kind.unwrap_or(PlotKind::ParetoScatter);
        let path = output.map(Path::to_path_buf).unwrap_or_else(|| dir.join(name(kind)));
        emit_plot(PlotData::Sweep(&table), kind, &path)?;
        path
    } else {
        let rows = read_trace_csv(&text)?;
        let kind = kind.unwrap_or(PlotKind::LossCurve);
        let path = output.map(Path::to_path_buf).unwrap_or_else(|| dir.join(name(kind)));
        emit_plot(PlotData::Trace(&rows), kind, &path)?;
        path
    };
    println!("wrote {}", written.display());
    Ok(0)
}
