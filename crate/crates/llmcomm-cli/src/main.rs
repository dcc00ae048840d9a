//! Command-line front end: run scenarios, validate documents, sweep
//! parameters, and print the routing and cost tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use llmcomm::costmodel::{breakeven_messages, CostParams, CostReport};
use llmcomm::metrics::{compare, summarize, Reduction, ReductionReport, RunReport};
use llmcomm::netsim::engine::run;
use llmcomm::protocol::routing_table_csv;
use llmcomm::scenario::Scenario;
use llmcomm::scenarios;

#[derive(Parser)]
#[command(
    name = "llmcomm",
    version,
    about = "Simulator for presence-routed, model-mediated messaging",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and its direct-messaging baseline, writing reports.
    Run(RunArgs),
    /// Check that a scenario document parses and cross-validates.
    Validate {
        /// Scenario file path, or the name of a packaged scenario.
        #[arg(long)]
        scenario: String,
    },
    /// Print the full presence-routing decision table as CSV.
    Routes,
    /// Price a training job (USD, kWh, tCO2eq, optional break-even count).
    Cost(CostArgs),
    /// Run one scenario across several values of one parameter.
    Sweep(SweepArgs),
    /// List packaged scenarios, or print one with --show.
    Scenarios {
        /// Print the named packaged scenario as JSON.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file path, or the name of a packaged scenario.
    #[arg(long)]
    scenario: String,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Count model shipping against the scenario in the reduction report.
    #[arg(long)]
    include_model_transfer: bool,
    /// Also write the served-interaction log (logs.jsonl).
    #[arg(long)]
    logs: bool,
    /// Also write the final model registry (registry.json).
    #[arg(long)]
    dump_registry: bool,
}

#[derive(Args)]
struct CostArgs {
    /// Nominal GPU-hours of the training job.
    #[arg(long)]
    gpu_hours: f64,
    /// USD per GPU-hour.
    #[arg(long, default_value_t = 1.0)]
    price_usd_per_gpu_hour: f64,
    /// Accelerator draw in kW.
    #[arg(long, default_value_t = 0.4)]
    tdp_kw: f64,
    /// Grid carbon intensity in kg CO2 per kWh.
    #[arg(long, default_value_t = 0.4235)]
    carbon_kg_per_kwh: f64,
    /// Model size; with --core-bytes-per-exchange adds the break-even count.
    #[arg(long)]
    model_bytes: Option<u64>,
    /// Core traffic one direct exchange would move.
    #[arg(long)]
    core_bytes_per_exchange: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario file path, or the name of a packaged scenario.
    #[arg(long)]
    scenario: String,
    /// Override, as `dotted.path=v1,v2,...` into the scenario document
    /// (for example `duration_s=10,20` or `settings.control_bytes=0,64`).
    #[arg(long)]
    sweep: String,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; one subdirectory per swept value plus sweep.csv.
    #[arg(long)]
    out: PathBuf,
    /// Report format for the per-value runs.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Count model shipping against the scenario in the reduction reports.
    #[arg(long)]
    include_model_transfer: bool,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Validate { scenario } => {
            let text = load_text(&scenario)?;
            Scenario::from_json(&text).map_err(|e| e.to_string())?;
            println!("ok: {scenario}");
            Ok(())
        }
        Cmd::Routes => {
            print!("{}", routing_table_csv());
            Ok(())
        }
        Cmd::Cost(args) => cmd_cost(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Scenarios { show } => cmd_scenarios(show),
    }
}

/// Reads a scenario document from disk, falling back to the packaged set.
fn load_text(name_or_path: &str) -> Result<String, String> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        return fs::read_to_string(path)
            .map_err(|e| format!("reading {}: {e}", path.display()));
    }
    for (name, text) in scenarios::all() {
        if name == name_or_path {
            return Ok(text.to_string());
        }
    }
    Err(format!(
        "{name_or_path} is neither a file nor a packaged scenario (try `llmcomm scenarios`)"
    ))
}

/// The full product of one scenario: both runs, reports, and comparison.
struct Outcome {
    trace_jsonl: String,
    logs_jsonl: String,
    registry_json: String,
    report: RunReport,
    baseline_report: RunReport,
    reduction: ReductionReport,
}

fn execute(scenario: &Scenario, include_model_transfer: bool) -> Result<Outcome, String> {
    let out = run(scenario, false).map_err(|e| e.to_string())?;
    let base = run(scenario, true).map_err(|e| e.to_string())?;
    let report = summarize(&out.trace);
    let baseline_report = summarize(&base.trace);
    let reduction = compare(&baseline_report, &report, include_model_transfer);
    Ok(Outcome {
        trace_jsonl: out.trace.to_jsonl(),
        logs_jsonl: out.logs.to_jsonl(),
        registry_json: out.registry.dump_json(),
        report,
        baseline_report,
        reduction,
    })
}

/// Staging directory that cleans up after itself unless all renames land.
struct Stage {
    dir: PathBuf,
}

impl Stage {
    fn new(parent: &Path) -> Result<Stage, String> {
        let dir = parent.join(format!(".stage-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| format!("clearing {}: {e}", dir.display()))?;
        }
        fs::create_dir_all(&dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
        Ok(Stage { dir })
    }

    fn write(&self, name: &str, content: &str) -> Result<(), String> {
        fs::write(self.dir.join(name), content)
            .map_err(|e| format!("writing {name}: {e}"))
    }

    /// Moves every staged file into `parent`; nothing lands until all of the
    /// run's content has been written out successfully.
    fn commit(self, parent: &Path) -> Result<(), String> {
        let entries =
            fs::read_dir(&self.dir).map_err(|e| format!("listing stage: {e}"))?;
        for entry in entries {
            let entry = entry.map_err(|e| format!("listing stage: {e}"))?;
            let target = parent.join(entry.file_name());
            fs::rename(entry.path(), &target)
                .map_err(|e| format!("placing {}: {e}", target.display()))?;
        }
        Ok(())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

fn write_outputs(
    out_dir: &Path,
    format: Format,
    outcome: &Outcome,
    logs: bool,
    dump_registry: bool,
) -> Result<(), String> {
    fs::create_dir_all(out_dir)
        .map_err(|e| format!("creating {}: {e}", out_dir.display()))?;
    let stage = Stage::new(out_dir)?;
    stage.write("trace.jsonl", &outcome.trace_jsonl)?;
    let ext = format.ext();
    let (report, baseline, reduction) = match format {
        Format::Json => (
            outcome.report.to_json() + "\n",
            outcome.baseline_report.to_json() + "\n",
            outcome.reduction.to_json() + "\n",
        ),
        Format::Csv => (
            outcome.report.to_csv(),
            outcome.baseline_report.to_csv(),
            outcome.reduction.to_csv(),
        ),
    };
    stage.write(&format!("report.{ext}"), &report)?;
    stage.write(&format!("baseline_report.{ext}"), &baseline)?;
    stage.write(&format!("reduction_report.{ext}"), &reduction)?;
    if logs {
        stage.write("logs.jsonl", &outcome.logs_jsonl)?;
    }
    if dump_registry {
        stage.write("registry.json", &outcome.registry_json)?;
    }
    stage.commit(out_dir)
}

fn reduction_cell(r: &Reduction) -> String {
    match r {
        Reduction::Pct(p) => format!("{p:.6}"),
        Reduction::UndefinedZeroBaseline => String::new(),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let text = load_text(&args.scenario)?;
    let scenario =
        Scenario::from_json_with_seed(&text, args.seed).map_err(|e| e.to_string())?;
    let outcome = execute(&scenario, args.include_model_transfer)?;
    write_outputs(&args.out, args.format, &outcome, args.logs, args.dump_registry)?;

    let r = &outcome.report;
    println!(
        "messages {}  direct {}  served {}  forwarded {}  held {}",
        r.messages_sent, r.delivered_direct, r.llm_served, r.forwarded, r.held
    );
    println!(
        "core bytes: scenario {}  baseline {}  model transfer {}",
        r.core_bytes, outcome.baseline_report.core_bytes, r.model_transfer_bytes
    );
    match outcome.reduction.reduction {
        Reduction::Pct(p) => println!(
            "core reduction: {p:.2}% ({} model transfer)",
            if outcome.reduction.include_model_transfer { "including" } else { "excluding" }
        ),
        Reduction::UndefinedZeroBaseline => {
            println!("core reduction: undefined (baseline moved zero core bytes)")
        }
    }
    println!("wrote {}", args.out.join("trace.jsonl").display());
    Ok(())
}

fn cmd_cost(args: CostArgs) -> Result<(), String> {
    let params = CostParams {
        price_usd_per_gpu_hour: args.price_usd_per_gpu_hour,
        tdp_kw: args.tdp_kw,
        carbon_kg_per_kwh: args.carbon_kg_per_kwh,
    };
    let report = CostReport::compute(args.gpu_hours, &params).map_err(|e| e.to_string())?;
    match (args.model_bytes, args.core_bytes_per_exchange) {
        (Some(model), Some(per_exchange)) => {
            let n = breakeven_messages(model, per_exchange).map_err(|e| e.to_string())?;
            let mut v: serde_json::Value =
                serde_json::from_str(&report.to_json()).expect("report JSON is valid");
            v["breakeven_messages"] = serde_json::json!(n);
            println!("{v}");
        }
        (None, None) => println!("{}", report.to_json()),
        _ => {
            return Err(
                "--model-bytes and --core-bytes-per-exchange must be given together".into()
            )
        }
    }
    Ok(())
}

fn cmd_scenarios(show: Option<String>) -> Result<(), String> {
    match show {
        None => {
            for (name, text) in scenarios::all() {
                let v: serde_json::Value =
                    serde_json::from_str(text).expect("packaged scenarios parse");
                println!(
                    "{name}: {} users, {} flows, {}s",
                    v["users"].as_array().map_or(0, Vec::len),
                    v["flows"].as_array().map_or(0, Vec::len),
                    v["duration_s"]
                );
            }
            Ok(())
        }
        Some(name) => {
            for (n, text) in scenarios::all() {
                if n == name {
                    print!("{text}");
                    return Ok(());
                }
            }
            Err(format!("no packaged scenario named {name}"))
        }
    }
}

/// Sets `dotted.path` in a JSON document, erroring on unknown segments so a
/// typo cannot silently sweep nothing.
fn apply_override(
    doc: &mut serde_json::Value,
    dotted: &str,
    value: serde_json::Value,
) -> Result<(), String> {
    let mut cursor = doc;
    let segments: Vec<&str> = dotted.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cursor = match cursor {
            serde_json::Value::Object(map) => {
                if last {
                    // Settings may be absent entirely; create on assignment.
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*seg)
                    .ok_or_else(|| format!("path {dotted}: no key {seg:?} in the document"))?
            }
            serde_json::Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| format!("path {dotted}: {seg:?} is not an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| format!("path {dotted}: index {idx} out of range ({len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            other => {
                return Err(format!(
                    "path {dotted}: {seg:?} cannot descend into {}",
                    match other {
                        serde_json::Value::Null => "null",
                        serde_json::Value::Bool(_) => "a boolean",
                        serde_json::Value::Number(_) => "a number",
                        serde_json::Value::String(_) => "a string",
                        _ => unreachable!(),
                    }
                ))
            }
        };
    }
    unreachable!("empty paths are rejected by the parser above")
}

struct SweepRow {
    value: String,
    report: RunReport,
    baseline: RunReport,
    excl: Reduction,
    incl: Reduction,
}

fn cmd_sweep(args: SweepArgs) -> Result<(), String> {
    let (key, values_raw) = args
        .sweep
        .split_once('=')
        .ok_or("expected --sweep key=v1,v2,...")?;
    if key.is_empty() {
        return Err("expected --sweep key=v1,v2,...".into());
    }
    let values: Vec<&str> = values_raw.split(',').filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err("expected at least one sweep value".into());
    }

    let text = load_text(&args.scenario)?;
    let base_doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("scenario parse error: {e}"))?;

    // Validate every point before any run burns time.
    let mut points = Vec::new();
    for raw in &values {
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut doc = base_doc.clone();
        apply_override(&mut doc, key, value)?;
        let scenario = Scenario::from_json_with_seed(&doc.to_string(), args.seed)
            .map_err(|e| format!("{key}={raw}: {e}"))?;
        points.push((raw.to_string(), scenario));
    }

    fs::create_dir_all(&args.out)
        .map_err(|e| format!("creating {}: {e}", args.out.display()))?;

    let results: Vec<Result<SweepRow, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .iter()
            .map(|(raw, scenario)| {
                let out_dir = args.out.join(sanitize(raw));
                let include = args.include_model_transfer;
                let format = args.format;
                scope.spawn(move || -> Result<SweepRow, String> {
                    let outcome = execute(scenario, include)?;
                    write_outputs(&out_dir, format, &outcome, false, false)?;
                    let excl =
                        compare(&outcome.baseline_report, &outcome.report, false).reduction;
                    let incl =
                        compare(&outcome.baseline_report, &outcome.report, true).reduction;
                    Ok(SweepRow {
                        value: raw.clone(),
                        report: outcome.report,
                        baseline: outcome.baseline_report,
                        excl,
                        incl,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });

    let mut csv = String::from(
        "value,messages_sent,llm_served,forwarded,held,baseline_core_bytes,scenario_core_bytes,model_transfer_bytes,reduction_excl_pct,reduction_incl_pct\n",
    );
    for res in results {
        let row = res?;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            row.value,
            row.report.messages_sent,
            row.report.llm_served,
            row.report.forwarded,
            row.report.held,
            row.baseline.core_bytes,
            row.report.core_bytes,
            row.report.model_transfer_bytes,
            reduction_cell(&row.excl),
            reduction_cell(&row.incl),
        )
        .expect("writing to a string cannot fail");
    }
    let csv_path = args.out.join("sweep.csv");
    fs::write(&csv_path, &csv).map_err(|e| format!("writing sweep.csv: {e}"))?;
    println!("swept {key} over {} values", values.len());
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// Keeps sweep subdirectory names filesystem-safe.
fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}
