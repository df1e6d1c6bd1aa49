//! Command-line front door for the demand-response market simulator:
//! `run` executes one configuration and writes a trajectory and regret
//! report, `compare` races two operator policies across a horizon grid
//! under common random numbers, and `fit` fits growth models to a regret
//! curve produced by `run`.
//!
//! Exit codes: 0 success, 1 usage/config/data errors, 2 singular regression
//! design (a zero price perturbation).

use clap::{Args, Parser, Subcommand};
use oldrm_core::agents::SOPolicyKind;
use oldrm_core::analysis::{compare_policies, fit_growth, AnalysisError, Comparison};
use oldrm_core::sim::{regret, run_ensemble, trajectory_csv, SimError, SimulationConfig};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const SCHEMA_VERSION: u64 = 1;

/// Exit code paired with the message printed to stderr.
type Failure = (u8, String);

#[derive(Parser)]
#[command(
    name = "oldrm",
    version,
    about = "Simulator for an online-learning demand-response market",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration; write trajectory.csv and report.json.
    Run(RunArgs),
    /// Race two operator policies over a horizon grid; write
    /// comparison.csv and summary.json.
    Compare(CompareArgs),
    /// Fit growth models to a cumulative-regret curve CSV.
    Fit(FitArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON simulation config.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path config overrides, e.g. --set market.delta_p=0.3
    /// (values parse as JSON, falling back to strings).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Replaces the config's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores). Outputs are
    /// identical at any thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Comma-separated horizons, e.g. --t-grid 100,300,1000
    #[arg(long = "t-grid", value_delimiter = ',', required = true)]
    t_grid: Vec<usize>,
    /// Two comma-separated policy names.
    #[arg(long, value_delimiter = ',', default_value = "oldrm,averaging_etc")]
    policies: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV holding the curve: either named `t` and `cumulative_regret`
    /// columns (as written by `run`) or exactly two columns.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the fit JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fits use only days t >= t-min, skipping the transient.
    #[arg(long = "t-min", default_value_t = 50)]
    t_min: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Fit(args) => cmd_fit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

// ---------------------------------------------------------------------------
// config loading and overrides

fn load_config(common: &CommonArgs) -> Result<SimulationConfig, Failure> {
    let text = fs::read_to_string(&common.config).map_err(|e| {
        (1, format!("cannot read config {}: {e}", common.config.display()))
    })?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| (1, format!("config is not valid JSON: {e}")))?;
    if let Some(v) = value.get("schema_version") {
        if v != &json!(SCHEMA_VERSION) {
            return Err((
                1,
                format!("unsupported config schema_version {v}, expected {SCHEMA_VERSION}"),
            ));
        }
        value.as_object_mut().map(|o| o.remove("schema_version"));
    }
    for spec in &common.set {
        apply_override(&mut value, spec)?;
    }
    if let Some(seed) = common.seed {
        match value.as_object_mut() {
            Some(obj) => {
                obj.insert("seed".into(), json!(seed));
            }
            None => return Err((1, "config root must be a JSON object".into())),
        }
    }
    let cfg: SimulationConfig = serde_json::from_value(value)
        .map_err(|e| (1, format!("invalid config: {e}")))?;
    cfg.validate().map_err(|e| (1, e.to_string()))?;
    Ok(cfg)
}

/// Applies one `path.to.field=value` override in place. Numeric path
/// segments index arrays; the value is parsed as JSON, falling back to a
/// plain string.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), Failure> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        (1, format!("override `{spec}` must look like path.to.field=value"))
    })?;
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (k, seg) in segments.iter().enumerate() {
        let last = k + 1 == segments.len();
        if let Ok(idx) = seg.parse::<usize>() {
            let arr = cur.as_array_mut().ok_or_else(|| {
                (1, format!("override path `{path}`: `{seg}` does not index an array"))
            })?;
            if idx >= arr.len() {
                return Err((
                    1,
                    format!("override path `{path}`: index {idx} is out of bounds"),
                ));
            }
            if last {
                arr[idx] = parsed;
                return Ok(());
            }
            cur = &mut arr[idx];
        } else {
            let obj = cur.as_object_mut().ok_or_else(|| {
                (1, format!("override path `{path}`: `{seg}` does not address an object"))
            })?;
            if last {
                obj.insert(seg.to_string(), parsed);
                return Ok(());
            }
            cur = obj
                .entry(seg.to_string())
                .or_insert_with(|| json!({}));
        }
    }
    Ok(())
}

fn configure_threads(common: &CommonArgs) -> Result<(), Failure> {
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err((1, "--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| (1, format!("cannot configure {threads} threads: {e}")))?;
    }
    Ok(())
}

fn map_sim(e: SimError) -> Failure {
    let code = match e {
        SimError::SingularDesign { .. } => 2,
        _ => 1,
    };
    (code, e.to_string())
}

fn map_analysis(e: AnalysisError) -> Failure {
    match e {
        AnalysisError::Sim(inner) => map_sim(inner),
        AnalysisError::InsufficientData { .. } => (1, e.to_string()),
    }
}

fn meta(cfg: &SimulationConfig) -> Value {
    json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "n_replications": cfg.n_replications,
        "threads": rayon::current_num_threads(),
        // Consumer demand slopes are treated as known to the operator when
        // computing optimal-cost benchmarks and upfront payments.
        "so_oracle_d_access": true,
    })
}

fn write_output(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| (1, format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    configure_threads(&args.common)?;
    let cfg = load_config(&args.common)?;
    let stats = run_ensemble(&cfg).map_err(map_sim)?;
    let report = regret(&cfg, &stats).map_err(map_sim)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| (1, format!("cannot create {}: {e}", args.out.display())))?;
    let csv = trajectory_csv(&stats.trajectory, &report.cumulative_regret);
    write_output(&args.out.join("trajectory.csv"), &csv)?;

    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "meta": meta(&cfg),
        "config": cfg,
        "report": report,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    write_output(&args.out.join("report.json"), &text)?;

    let total = report.cumulative_regret.last().copied().unwrap_or(0.0);
    println!(
        "wrote {}/report.json and trajectory.csv (T = {}, replications = {}, total regret = {total:.4})",
        args.out.display(),
        cfg.market.t_horizon,
        cfg.n_replications,
    );
    Ok(())
}

fn parse_policy(name: &str) -> Result<SOPolicyKind, Failure> {
    match name {
        "oldrm" => Ok(SOPolicyKind::OlDrm),
        "averaging_etc" => Ok(SOPolicyKind::AveragingEtc { n_explore: None }),
        other => Err((
            1,
            format!("unknown policy `{other}`; valid names: oldrm, averaging_etc"),
        )),
    }
}

fn comparison_csv(cmp: &Comparison) -> String {
    let mut out = String::from("policy,t,mean_regret,sd_regret\n");
    for curve in &cmp.curves {
        for ((&t, &mean), &sd) in curve
            .t_grid
            .iter()
            .zip(&curve.mean_regret)
            .zip(&curve.sd_regret)
        {
            out.push_str(&format!("{},{t},{mean},{sd}\n", curve.policy));
        }
    }
    out
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    configure_threads(&args.common)?;
    let cfg = load_config(&args.common)?;
    if args.t_grid.is_empty() {
        return Err((1, "empty horizon grid: pass --t-grid 100,300,1000".into()));
    }
    if args.t_grid.iter().any(|&t| t == 0) {
        return Err((1, "--t-grid horizons must be >= 1".into()));
    }
    if args.policies.len() != 2 {
        return Err((
            1,
            format!(
                "--policies needs exactly two comma-separated names, got {}",
                args.policies.len()
            ),
        ));
    }
    let policies = [parse_policy(&args.policies[0])?, parse_policy(&args.policies[1])?];
    let cmp = compare_policies(&cfg, policies, &args.t_grid).map_err(map_analysis)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| (1, format!("cannot create {}: {e}", args.out.display())))?;
    write_output(&args.out.join("comparison.csv"), &comparison_csv(&cmp))?;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "meta": meta(&cfg),
        "config": cfg,
        "comparison": cmp,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("comparison serializes");
    text.push('\n');
    write_output(&args.out.join("summary.json"), &text)?;

    println!(
        "wrote {}/summary.json and comparison.csv ({} vs {} over {} horizons)",
        args.out.display(),
        cmp.curves[0].policy,
        cmp.curves[1].policy,
        cmp.curves[0].t_grid.len(),
    );
    Ok(())
}

/// Extracts `(t, cumulative_regret)` pairs from the CSV, accepting either
/// the named columns `run` writes or a bare two-column file.
fn parse_curve(text: &str, path: &Path) -> Result<(Vec<usize>, Vec<f64>), Failure> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| (1, format!("{} is empty", path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    let t_col = columns.iter().position(|c| *c == "t");
    let r_col = columns.iter().position(|c| *c == "cumulative_regret");
    let (t_col, r_col, header_is_data) = match (t_col, r_col) {
        (Some(t), Some(r)) => (t, r, false),
        _ if columns.len() == 2 => {
            // Headerless two-column data, or a two-column header line.
            let is_data = columns[0].parse::<usize>().is_ok();
            (0, 1, is_data)
        }
        _ => {
            return Err((
                1,
                format!(
                    "cannot locate `t` and `cumulative_regret` columns in {}",
                    path.display()
                ),
            ))
        }
    };

    let mut ts = Vec::new();
    let mut rs = Vec::new();
    let rows: Vec<(usize, &str)> = if header_is_data {
        std::iter::once((1, header)).chain(lines).collect()
    } else {
        lines.collect()
    };
    for (line_no, row) in rows {
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() <= t_col.max(r_col) {
            return Err((
                1,
                format!("line {line_no}: expected at least {} columns", t_col.max(r_col) + 1),
            ));
        }
        let t: usize = cells[t_col].trim().parse().map_err(|_| {
            (1, format!("line {line_no}: cannot parse `{}` as a day index", cells[t_col]))
        })?;
        let r: f64 = cells[r_col].trim().parse().map_err(|_| {
            (1, format!("line {line_no}: cannot parse `{}` as a number", cells[r_col]))
        })?;
        ts.push(t);
        rs.push(r);
    }
    Ok((ts, rs))
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| (1, format!("cannot read {}: {e}", args.input.display())))?;
    let (ts, rs) = parse_curve(&text, &args.input)?;
    let fit = fit_growth(&ts, &rs, args.t_min).map_err(map_analysis)?;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "t_min": args.t_min,
        "fit": fit,
    });
    let mut rendered = serde_json::to_string_pretty(&doc).expect("fit serializes");
    rendered.push('\n');
    match &args.out {
        Some(path) => write_output(path, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}
