//! `parapack`: simulate parallel modules, run Monte Carlo campaigns, analyse
//! them and compare cell arrangements.

mod manifest;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use parapack::arrange::{self, ArrangementResponses};
use parapack::io::{binary_to_csv, csv_to_binary, fmt_f64, write_atomic};
use parapack::module_solver::run_protocol;
use parapack::montecarlo::{run_campaign, CampaignSpec, ResultsTable, RunOptions, RESULTS_FILE};
use parapack::params::{ModuleConfig, SolverSettings};
use parapack::stats::analysis::analyze_response;
use parapack::stats::StepwiseOptions;
use parapack::Error;

use manifest::RunManifest;

const BINARY_MAGIC: &[u8] = b"PPKTAB";

#[derive(Parser)]
#[command(name = "parapack", version, about = "Parallel-module heterogeneity simulator and analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; overrides the seed in the input file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "PARAPACK_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Output location.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Cycle one module and write its trace and per-cycle summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Number of cycles; overrides the config.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        cycles: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Run (or resume) a Monte Carlo campaign.
    Sweep {
        /// Campaign file; without it the built-in full or fast campaign runs.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Coarse solver grids (and, without --spec, 50 modules of 50 cycles).
        #[arg(long)]
        fast: bool,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        modules: Option<u32>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        cycles: Option<u32>,
        /// Write every module's trace under <out>/traces.
        #[arg(long)]
        keep_traces: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Stepwise regression and importance shares for one response.
    Analyze {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_parser = ["sigma_i", "sigma_t", "dtmax", "dq", "de", "elost", "sigma_rsei"])]
        response: String,
        /// Use the response's extended predictor list.
        #[arg(long)]
        extended_predictors: bool,
        /// Importance method: dominance or sequential.
        #[arg(long, default_value = "dominance")]
        method: String,
        #[command(flatten)]
        common: Common,
    },
    /// Compare cell placements of one module.
    Arrange {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        cycles: u32,
        /// Also evaluate every permutation.
        #[arg(long)]
        exhaustive: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a CSV table to the compact binary form or back.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// A failure with its exit code: 2 for bad input, 3 for a failed run.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn text(bytes: &[u8], path: &Path) -> Result<String, Failure> {
    String::from_utf8(bytes.to_vec()).map_err(|_| usage(format!("{} is not UTF-8 text", path.display())))
}

fn init_pool(workers: usize) {
    // a second initialisation only happens in-process and is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = stdout.flush();
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli, log: &mut dyn std::io::Write) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, cycles, common } => cmd_simulate(&config, cycles, &common, log),
        Command::Sweep {
            spec,
            fast,
            modules,
            cycles,
            keep_traces,
            common,
        } => cmd_sweep(spec.as_deref(), fast, modules, cycles, keep_traces, &common, log),
        Command::Analyze {
            results,
            response,
            extended_predictors,
            method,
            common,
        } => cmd_analyze(&results, &response, extended_predictors, &method, &common, log),
        Command::Arrange {
            config,
            cycles,
            exhaustive,
            common,
        } => cmd_arrange(&config, cycles as usize, exhaustive, &common, log),
        Command::Export { input, common } => cmd_export(&input, &common, log),
    }
}

fn load_module(path: &Path, seed: Option<u64>) -> Result<(Vec<u8>, ModuleConfig), Failure> {
    let bytes = read_input(path)?;
    let mut cfg = ModuleConfig::from_toml(&text(&bytes, path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((bytes, cfg))
}

fn cmd_simulate(config: &Path, cycles: Option<u32>, common: &Common, log: &mut dyn std::io::Write) -> Result<(), Failure> {
    let (bytes, mut cfg) = load_module(config, common.seed)?;
    if let Some(c) = cycles {
        cfg.n_cycles = c as usize;
    }
    cfg.validate()?;
    init_pool(common.workers);
    let manifest = RunManifest::new("simulate", &bytes, Some(cfg.seed), common.workers);
    let trace = run_protocol(&cfg)?;
    trace.write_csv(&common.out)?;
    manifest.finish(&common.out, &["trace.csv".into(), "cycles.csv".into()])?;
    let last = trace.last_cycle().expect("at least one cycle");
    let _ = writeln!(
        log,
        "simulated {} cycles of {} cells: Q_mod {:.4} Ah, E_mod {:.4} Wh in the last cycle",
        trace.cycles.len(),
        cfg.n_p,
        last.q_mod,
        last.e_mod
    );
    Ok(())
}

fn cmd_sweep(
    spec_path: Option<&Path>,
    fast: bool,
    modules: Option<u32>,
    cycles: Option<u32>,
    keep_traces: bool,
    common: &Common,
    log: &mut dyn std::io::Write,
) -> Result<(), Failure> {
    let seed = common.seed.unwrap_or(0);
    let mut spec = match spec_path {
        Some(p) => CampaignSpec::from_toml(&text(&read_input(p)?, p)?)?,
        None if fast => CampaignSpec::fast(seed),
        None => CampaignSpec::full(seed),
    };
    if let Some(s) = common.seed {
        spec.master_seed = s;
    }
    if fast {
        spec.solver = SolverSettings::fast();
    }
    if let Some(m) = modules {
        spec.n_modules = m as usize;
    }
    if let Some(c) = cycles {
        spec.n_cycles = c as usize;
    }
    spec.validate()?;
    // hash the effective campaign so command-line overrides are covered
    let manifest = RunManifest::new("sweep", spec.to_toml()?.as_bytes(), Some(spec.master_seed), common.workers);
    let opts = RunOptions {
        workers: common.workers,
        keep_traces,
    };
    let table = run_campaign(&spec, &common.out, &opts)?;
    manifest.finish(&common.out, &[RESULTS_FILE.into(), "campaign.toml".into()])?;
    let ok = table.ok_rows().count();
    let _ = writeln!(
        log,
        "{} modules x {} cycles: {ok} ok, {} failed; results in {}",
        spec.n_modules,
        spec.n_cycles,
        table.rows.len() - ok,
        common.out.join(RESULTS_FILE).display()
    );
    Ok(())
}

fn cmd_analyze(
    results: &Path,
    response: &str,
    extended: bool,
    method: &str,
    common: &Common,
    log: &mut dyn std::io::Write,
) -> Result<(), Failure> {
    let bytes = read_input(results)?;
    let table = ResultsTable::from_csv(&text(&bytes, results)?)?;
    init_pool(common.workers);
    let manifest = RunManifest::new("analyze", &bytes, common.seed, common.workers);
    let a = analyze_response(&table.to_table(), response, extended, method, &StepwiseOptions::default())?;
    let out = &common.out;
    let files = ["summary.txt", "pareto.csv", "residuals.csv"];
    write_atomic(&out.join(files[0]), a.summary_text().as_bytes())?;
    write_atomic(&out.join(files[1]), a.report.to_csv().as_bytes())?;
    write_atomic(&out.join(files[2]), a.residuals_csv().as_bytes())?;
    manifest.finish(out, &files.map(PathBuf::from))?;
    let _ = writeln!(
        log,
        "{response}: R^2 {:.4} over {} modules; top predictors {}",
        a.model.r_squared,
        a.model.n,
        a.report.top(3).join(", ")
    );
    Ok(())
}

fn order_label(order: &[usize]) -> String {
    order.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ")
}

fn responses_csv(rows: &[(String, &ArrangementResponses)]) -> String {
    let mut out = String::from("label,order");
    for m in ArrangementResponses::METRICS {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label},{}", order_label(&r.order));
        for v in r.values() {
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

fn cmd_arrange(
    config: &Path,
    cycles: usize,
    exhaustive: bool,
    common: &Common,
    log: &mut dyn std::io::Write,
) -> Result<(), Failure> {
    let (bytes, cfg) = load_module(config, common.seed)?;
    if exhaustive && cfg.n_p > 6 {
        return Err(usage("--exhaustive supports at most 6 cells"));
    }
    init_pool(common.workers);
    let manifest = RunManifest::new("arrange", &bytes, Some(cfg.seed), common.workers);
    let strategies = arrange::strategies();
    let names = ["identity", "descending", "ascending", "reversed"];
    let orders = names
        .iter()
        .map(|n| strategies.get(n)?.order(&cfg.cells))
        .collect::<parapack::Result<Vec<_>>>()?;
    let comparisons = arrange::compare_arrangements(&cfg, &orders, cycles)?;

    let mut rows = vec![(names[0].to_string(), &comparisons[0].baseline)];
    rows.extend(names[1..].iter().zip(&comparisons).map(|(n, c)| (n.to_string(), &c.proposed)));
    let csv = responses_csv(&rows);
    // relative changes against the configured order
    let mut rel = String::from("label");
    for m in ArrangementResponses::METRICS {
        let _ = write!(rel, ",{m}_rel");
    }
    rel.push('\n');
    for (n, c) in names[1..].iter().zip(&comparisons) {
        let _ = write!(rel, "{n}");
        for v in c.relative_changes() {
            let _ = write!(rel, ",{}", fmt_f64(v));
        }
        rel.push('\n');
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "{} cells, {cycles} cycles, baseline = configured order", cfg.n_p);
    for (n, c) in names[1..].iter().zip(&comparisons) {
        let r = c.relative_changes();
        let _ = writeln!(
            summary,
            "{n:<10} order [{}]  sigma_i {:+.1}%  delta_t_max {:+.1}%  e_lost {:+.1}%  sigma_r_sei {:+.1}%  q_mod {:+.2}%",
            order_label(&c.proposed.order),
            100.0 * r[0],
            100.0 * r[1],
            100.0 * r[2],
            100.0 * r[3],
            100.0 * r[4]
        );
    }
    let mut files: Vec<PathBuf> = vec!["arrangement.csv".into(), "relative_changes.csv".into(), "summary.txt".into()];
    if exhaustive {
        let all = arrange::exhaustive(&cfg, cycles)?;
        let labelled: Vec<(String, &ArrangementResponses)> = all.iter().map(|r| ("permutation".to_string(), r)).collect();
        write_atomic(&common.out.join("exhaustive.csv"), responses_csv(&labelled).as_bytes())?;
        files.push("exhaustive.csv".into());
        let _ = writeln!(summary, "\nrank among {} permutations (1 = smallest)", all.len());
        for n in &names[1..3] {
            let order = strategies.get(n)?.order(&cfg.cells)?;
            let ranks = ["sigma_i", "delta_t_max", "sigma_r_sei"]
                .iter()
                .map(|m| Ok(format!("{m} {}", arrange::rank_of(&order, &all, m)?)))
                .collect::<parapack::Result<Vec<_>>>()?;
            let _ = writeln!(summary, "{n:<10} {}", ranks.join("  "));
        }
    }
    write_atomic(&common.out.join("arrangement.csv"), csv.as_bytes())?;
    write_atomic(&common.out.join("relative_changes.csv"), rel.as_bytes())?;
    write_atomic(&common.out.join("summary.txt"), summary.as_bytes())?;
    manifest.finish(&common.out, &files)?;
    let _ = write!(log, "{summary}");
    Ok(())
}

fn cmd_export(input: &Path, common: &Common, log: &mut dyn std::io::Write) -> Result<(), Failure> {
    let bytes = read_input(input)?;
    let (converted, kind) = if bytes.starts_with(BINARY_MAGIC) {
        (binary_to_csv(&bytes)?.into_bytes(), "CSV")
    } else {
        (csv_to_binary(&text(&bytes, input)?)?, "binary")
    };
    write_atomic(&common.out, &converted)?;
    let _ = writeln!(log, "wrote {kind} table {} ({} bytes)", common.out.display(), converted.len());
    Ok(())
}
