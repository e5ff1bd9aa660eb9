//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 validation or data error, 3 simulation
//! error (for example a missing lookup entry under the `error` policy).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::engine::{compare_traces, simulate_ensemble, EngineError, EnsembleOptions, Reference};
use crate::format::{
    parse_quantizer_spec, read_aggregate_element, read_model_file, write_aggregate, write_lut, write_series,
    write_trace, FormatError, VariableSpec,
};
use crate::ingest::{
    aggregate_spatial_dataset, aggregate_temporal, read_table_path, AggOp, IngestError, Schema, Window,
};
use crate::lut::{build_lookup_table, MissingPolicy};
use crate::quantizer::{make_uniform_thresholds, msqe, quantize_series};

#[derive(Debug, Parser)]
#[command(name = "hybrid-ebm", version, about = "Hybrid element-based model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize a real-valued series into levels.
    Quantize(QuantizeArgs),
    /// Build a lookup table from a component-model dataset.
    BuildLut(BuildLutArgs),
    /// Run a stochastic ensemble and write aggregate traces.
    Simulate(SimulateArgs),
    /// Compare a simulated element trace with a reference series.
    Validate(ValidateArgs),
    /// Temporal or spatial aggregation of tabular data.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    min: f64,
    #[arg(long, allow_negative_numbers = true)]
    max: f64,
    #[arg(long)]
    levels: u32,
    #[arg(long)]
    out: PathBuf,
    /// Column holding the values.
    #[arg(long, default_value = "value")]
    column: String,
    /// Column holding step indices; row order is used when absent from the file.
    #[arg(long, default_value = "index")]
    index_column: String,
}

#[derive(Debug, Args)]
struct BuildLutArgs {
    #[arg(long)]
    data: PathBuf,
    /// Input variables, `name:min:max:levels` or `name:levels`, in table order.
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<String>,
    /// Output variable, same syntax as the inputs.
    #[arg(long)]
    output: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Hold)]
    policy: PolicyArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Error,
    Hold,
    Nearest,
}

impl From<PolicyArg> for MissingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Error => MissingPolicy::Error,
            PolicyArg::Hold => MissingPolicy::Hold,
            PolicyArg::Nearest => MissingPolicy::Nearest,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives `aggregate.csv` and, with `--keep-runs`, `runs/`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    keep_runs: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    simulated: PathBuf,
    #[arg(long)]
    element: String,
    /// CSV with `step` and `level` columns, or `step` and `value` with `--quantizer`.
    #[arg(long)]
    reference: PathBuf,
    /// `min:max:levels` quantizer for a real-valued reference.
    #[arg(long)]
    quantizer: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    min_spearman: Option<f64>,
    #[arg(long)]
    max_mae: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WindowArg {
    Weekly,
    Monthly,
    Annual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OpArg {
    Sum,
    Mean,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, value_enum)]
    window: Option<WindowArg>,
    #[arg(long, value_enum, default_value_t = OpArg::Mean)]
    op: OpArg,
    #[arg(long)]
    out: PathBuf,
    /// Date column (temporal) or time-key column (spatial).
    #[arg(long, default_value = "date")]
    time_column: String,
    #[arg(long, default_value = "cell")]
    cell_column: String,
    #[arg(long, default_value = "value")]
    value_column: String,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Simulation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Simulation(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Quantize(a) => cmd_quantize(&a, &mut stdout),
        Command::BuildLut(a) => cmd_build_lut(&a, &mut stdout),
        Command::Simulate(a) => cmd_simulate(&a, &mut stdout),
        Command::Validate(a) => cmd_validate(&a, &mut stdout),
        Command::Aggregate(a) => cmd_aggregate(&a, &mut stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn cmd_quantize(a: &QuantizeArgs, out: &mut impl Write) -> Result<(), CliError> {
    if a.min.is_nan() || a.max.is_nan() || a.min >= a.max {
        return Err(CliError::Usage(format!("--min ({}) must be less than --max ({})", a.min, a.max)));
    }
    let q = make_uniform_thresholds(a.min, a.max, a.levels).map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = read_table_path(&a.input, &Schema::new().numeric(&a.column))?;
    let values = ds.numeric_column(&a.column)?;
    let indices: Vec<Option<f64>> = match ds.column_index(&a.index_column) {
        Ok(_) => ds.numeric_column(&a.index_column)?,
        Err(_) => (0..values.len()).map(|i| Some(i as f64)).collect(),
    };
    let mut series = Vec::with_capacity(values.len());
    for (i, (idx, v)) in indices.iter().zip(&values).enumerate() {
        match (idx, v) {
            (Some(idx), Some(v)) if *idx >= 0.0 && idx.fract() == 0.0 => series.push((*idx as usize, *v)),
            (Some(_), Some(_)) | (None, _) => {
                return Err(CliError::Data(format!("line {}: index must be a non-negative integer", i + 2)))
            }
            (_, None) => log::warn!("line {}: missing value skipped", i + 2),
        }
    }
    let ts = quantize_series(&q, &series).map_err(|e| CliError::Data(e.to_string()))?;
    let raw: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
    let error = msqe(&q, &raw).map_err(|e| CliError::Data(e.to_string()))?;

    let mut w = create(&a.out)?;
    write_series(&ts, &mut w).and_then(|_| w.flush()).map_err(io_err(&a.out))?;
    let thresholds: Vec<String> = q.thresholds().iter().map(f64::to_string).collect();
    writeln!(out, "thresholds: {}", thresholds.join(",")).ok();
    writeln!(out, "msqe: {error}").ok();
    Ok(())
}

fn cmd_build_lut(a: &BuildLutArgs, out: &mut impl Write) -> Result<(), CliError> {
    let parse = |s: &str| s.parse::<VariableSpec>().map_err(|e| CliError::Usage(e.to_string()));
    let inputs = a.inputs.iter().map(|s| parse(s)).collect::<Result<Vec<_>, _>>()?;
    let output = parse(&a.output)?;
    let vars: Vec<&VariableSpec> = inputs.iter().chain(std::iter::once(&output)).collect();

    let schema = vars.iter().fold(Schema::new(), |s, v| s.numeric(&v.name));
    let ds = read_table_path(&a.data, &schema)?;
    let columns = vars
        .iter()
        .map(|v| {
            ds.numeric_column(&v.name)?
                .into_iter()
                .enumerate()
                .map(|(r, x)| x.ok_or_else(|| CliError::Data(format!("line {}: missing `{}`", r + 2, v.name))))
                .collect::<Result<Vec<f64>, CliError>>()
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let quantizers = vars
        .iter()
        .zip(&columns)
        .map(|(v, col)| v.quantizer(col).map_err(|e| CliError::Data(format!("`{}`: {e}", v.name))))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<f64>> = (0..ds.rows.len()).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    let names: Vec<&str> = inputs.iter().map(|v| v.name.as_str()).collect();
    let (out_q, in_q) = quantizers.split_last().expect("output is always present");

    let (table, report) =
        build_lookup_table(&rows, in_q, out_q, &names, &output.name).map_err(|e| CliError::Data(e.to_string()))?;
    let table = table.with_policy(a.policy.into());
    let mut w = create(&a.out)?;
    w.write_all(write_lut(&table).as_bytes()).and_then(|_| w.flush()).map_err(io_err(&a.out))?;
    writeln!(out, "total combinations: {}", report.total).ok();
    writeln!(out, "filled: {}", report.filled).ok();
    writeln!(out, "duplicates merged: {}", report.duplicate_groups).ok();
    writeln!(out, "max spread: {}", report.max_spread).ok();
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, out: &mut impl Write) -> Result<(), CliError> {
    let (_, model, mut scenario) = read_model_file(&a.model)?;
    if let Some(s) = a.steps {
        scenario.steps = s;
    }
    if let Some(r) = a.runs {
        scenario.runs = r;
    }
    if let Some(seed) = a.seed {
        scenario.master_seed = seed;
    }
    if a.threads == Some(0) {
        return Err(CliError::Usage("--threads must be positive".into()));
    }
    let options = EnsembleOptions { keep_runs: a.keep_runs, threads: a.threads };
    let set = simulate_ensemble(&model, &scenario, options).map_err(|e| match e {
        EngineError::Run { .. } => CliError::Simulation(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;

    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let agg_path = a.out.join("aggregate.csv");
    let mut w = create(&agg_path)?;
    write_aggregate(&set, &mut w).and_then(|_| w.flush()).map_err(io_err(&agg_path))?;
    if let Some(traces) = &set.traces {
        let width = traces.len().saturating_sub(1).to_string().len().max(4);
        for (r, trace) in traces.iter().enumerate() {
            let path = a.out.join("runs").join(format!("run_{r:0width$}.csv"));
            let mut w = create(&path)?;
            write_trace(trace, &set.names, &mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        }
    }
    writeln!(
        out,
        "simulated {} runs x {} steps (seed {}); wrote {}",
        scenario.runs,
        scenario.steps,
        scenario.master_seed,
        agg_path.display()
    )
    .ok();
    Ok(())
}

fn cmd_validate(a: &ValidateArgs, out: &mut impl Write) -> Result<(), CliError> {
    let sim = read_aggregate_element(&a.simulated, &a.element)?;
    let quantizer =
        a.quantizer.as_deref().map(parse_quantizer_spec).transpose().map_err(|e| CliError::Usage(e.to_string()))?;
    let value_col = if quantizer.is_some() { "value" } else { "level" };
    let ds = read_table_path(&a.reference, &Schema::new().numeric("step").numeric(value_col))?;
    let steps = ds.numeric_column("step")?;
    let values = ds.numeric_column(value_col)?;

    let mut simulated = Vec::with_capacity(steps.len());
    let mut reference = Vec::with_capacity(steps.len());
    for (i, (s, v)) in steps.iter().zip(&values).enumerate() {
        let (Some(s), Some(v)) = (s, v) else {
            return Err(CliError::Data(format!("{}: line {}: missing value", a.reference.display(), i + 2)));
        };
        let pos = sim.steps.iter().position(|&t| t as f64 == *s).ok_or_else(|| {
            CliError::Data(format!(
                "length mismatch: reference step {s} has no simulated value (simulated steps 0..={})",
                sim.steps.last().copied().unwrap_or(0)
            ))
        })?;
        simulated.push(sim.mean[pos]);
        reference.push(*v);
    }

    let metrics = match &quantizer {
        Some(q) => compare_traces(&simulated, Reference::Values { values: &reference, quantizer: q }, sim.levels),
        None => {
            let levels: Vec<u32> = reference.iter().map(|&v| v as u32).collect();
            if reference.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                return Err(CliError::Data("reference levels must be non-negative integers".into()));
            }
            compare_traces(&simulated, Reference::Levels(&levels), sim.levels)
        }
    }
    .map_err(|e| CliError::Data(e.to_string()))?;

    match metrics.spearman {
        Some(s) => writeln!(out, "spearman: {s}").ok(),
        None => writeln!(out, "spearman: absent (constant series)").ok(),
    };
    writeln!(out, "mae_normalized: {}", metrics.mae_normalized).ok();
    writeln!(out, "level_match_fraction: {}", metrics.level_match_fraction).ok();

    let mut failures = Vec::new();
    if let Some(min) = a.min_spearman {
        if metrics.spearman.is_none_or(|s| s < min) {
            failures.push(format!("spearman below {min}"));
        }
    }
    if let Some(max) = a.max_mae {
        if metrics.mae_normalized > max {
            failures.push(format!("mae above {max}"));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("validation failed: {}", failures.join("; "))))
    }
}

fn cmd_aggregate(a: &AggregateArgs, out: &mut impl Write) -> Result<(), CliError> {
    match a.mode {
        ModeArg::Temporal => {
            let window = match a.window {
                Some(WindowArg::Weekly) => Window::Weekly,
                Some(WindowArg::Monthly) => Window::Monthly,
                Some(WindowArg::Annual) => Window::Annual,
                None => return Err(CliError::Usage("--window is required for temporal aggregation".into())),
            };
            let op = match a.op {
                OpArg::Sum => AggOp::Sum,
                OpArg::Mean => AggOp::Mean,
            };
            let ds = read_table_path(&a.input, &Schema::new().text(&a.time_column).numeric(&a.value_column))?;
            let dates = ds.text_column(&a.time_column)?;
            let values = ds.numeric_column(&a.value_column)?;
            let series: Vec<(String, Option<f64>)> = dates.into_iter().zip(values).collect();
            let windows = aggregate_temporal(&series, window, op)?;
            let mut w = create(&a.out)?;
            let result = (|| -> std::io::Result<()> {
                writeln!(w, "index,start,value,partial")?;
                for win in &windows {
                    let v = win.value.map_or(String::new(), |v| v.to_string());
                    writeln!(w, "{},{},{},{}", win.index, win.start, v, win.partial)?;
                }
                w.flush()
            })();
            result.map_err(io_err(&a.out))?;
        }
        ModeArg::Spatial => {
            let schema = Schema::new().text(&a.time_column).text(&a.cell_column).numeric(&a.value_column);
            let ds = read_table_path(&a.input, &schema)?;
            let means = aggregate_spatial_dataset(&ds, &a.time_column, &a.cell_column, &a.value_column)?;
            let mut w = create(&a.out)?;
            let result = (|| -> std::io::Result<()> {
                writeln!(w, "{},value", a.time_column)?;
                for (k, v) in &means {
                    writeln!(w, "{k},{v}")?;
                }
                w.flush()
            })();
            result.map_err(io_err(&a.out))?;
        }
    }
    writeln!(out, "wrote {}", a.out.display()).ok();
    Ok(())
}
