//! `symexec`: parse, run, explore and time programs of the intermediate
//! language, and check the certificates the explorer writes.

mod error;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use symexec_core::contracts::{parse_contract, parse_label_ranges, prove_contract, Verdict};
use symexec_core::engine::{AnalysisReport, EngineError, ExploreOptions, MergePolicy};
use symexec_core::il::{run_in_fragment, Label, Program, RunError, State, Type, Value};
use symexec_core::kernel::{check_soundness, program_digest, Certificate, Kernel, ReplayError};
use symexec_core::solver::Solver;
use symexec_core::text::{parse_expr, parse_program};
use symexec_core::timing::{analyze_wcet, instrument, timing_kernel, CostModel};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "symexec", version, about = "Proof-producing symbolic execution")]
struct Cli {
    /// Solver backend. `external` runs the command in SYMEXEC_SOLVER
    /// (default `z3 -in`).
    #[arg(long, value_enum, global = true, default_value_t = Backend::Brute)]
    solver: Backend,
    /// Seed for all sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print results as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for feasibility checks.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Backend {
    Brute,
    External,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and typecheck a program.
    Check { file: PathBuf },
    /// Run a program concretely and print the trace.
    Interp {
        file: PathBuf,
        /// Start label; defaults to the program's entry.
        #[arg(long)]
        entry: Option<Label>,
        /// Initial values `name=value`; unlisted variables start at zero.
        /// For a memory, the value fills every cell.
        #[arg(long = "env", value_name = "NAME=VALUE")]
        env: Vec<String>,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
    },
    /// Explore a fragment symbolically and print the resulting structure.
    Symexec {
        file: PathBuf,
        #[command(flatten)]
        explore: ExploreArgs,
        /// Labels of the fragment, e.g. `1-14`. Defaults to every statement.
        #[arg(long)]
        fragment: Option<String>,
        /// Test the structure on this many concrete runs.
        #[arg(long, default_value_t = 0)]
        samples: u64,
    },
    /// Instrument with a cycle counter and print the execution-time interval.
    Wcet {
        file: PathBuf,
        #[command(flatten)]
        explore: ExploreArgs,
        /// Exit labels; defaults to the program's exits.
        #[arg(long = "exit", value_name = "LABEL")]
        exits: Vec<Label>,
        /// Width of the cycle counter.
        #[arg(long, default_value_t = 32)]
        counter_width: u32,
    },
    /// Check a certificate against a program.
    Replay { cert: PathBuf, file: PathBuf },
    /// Explore a contract's fragment and check the contract.
    Contract {
        file: PathBuf,
        contract: PathBuf,
        #[command(flatten)]
        explore: ExploreArgs,
    },
}

#[derive(Args, Debug)]
struct ExploreArgs {
    /// Start label; defaults to the program's entry.
    #[arg(long)]
    entry: Option<Label>,
    /// Precondition over the program variables.
    #[arg(long)]
    pre: Option<String>,
    /// `none`, `join`, `all`, or a label list such as `6,12`.
    #[arg(long, default_value = "join")]
    merge: String,
    /// How often one path may revisit a label.
    #[arg(long, default_value_t = 16)]
    unroll: usize,
    /// Variables whose values are replaced by fresh symbols after each step.
    #[arg(long, value_delimiter = ',')]
    forget: Vec<String>,
    #[arg(long, default_value_t = 64)]
    max_paths: usize,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Where to write the certificate.
    #[arg(long)]
    cert: Option<PathBuf>,
}

struct Output {
    text: String,
    json: serde_json::Value,
    code: i32,
}

impl Output {
    fn ok(text: String, json: serde_json::Value) -> Self {
        Output { text, json, code: 0 }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_program(path: &Path) -> Result<Program, CliError> {
    Ok(parse_program(&read(path)?)?)
}

fn solver(cli: &Cli) -> Solver {
    match cli.solver {
        Backend::Brute => Solver::brute(),
        Backend::External => Solver::external(),
    }
}

fn merge_policy(text: &str) -> Result<MergePolicy, CliError> {
    Ok(match text {
        "none" => MergePolicy::None,
        "join" => MergePolicy::JoinPoints,
        "all" => MergePolicy::Aggressive,
        ranges => MergePolicy::AtLabels(
            parse_label_ranges(ranges).map_err(|e| CliError::Usage(format!("--merge: {e}")))?,
        ),
    })
}

fn explore_options(cli: &Cli, a: &ExploreArgs, p: &Program) -> Result<ExploreOptions, CliError> {
    let mut forget_vars = BTreeSet::new();
    for name in &a.forget {
        let v = p
            .var(name)
            .ok_or_else(|| CliError::Usage(format!("--forget: unknown variable {name}")))?;
        forget_vars.insert(v);
    }
    Ok(ExploreOptions {
        max_paths: a.max_paths,
        max_steps: a.max_steps,
        merge_policy: merge_policy(&a.merge)?,
        forget_vars,
        unroll_bound: a.unroll,
        jobs: cli.jobs.max(1),
        ..ExploreOptions::default()
    })
}

fn precondition(a: &ExploreArgs, p: &Program) -> Result<Option<symexec_core::il::Expr>, CliError> {
    a.pre
        .as_deref()
        .map(|text| parse_expr(text, p.typing()))
        .transpose()
        .map_err(CliError::from)
}

/// Write the certificate of a finished or budget-stopped exploration.
fn save_certificate(a: &ExploreArgs, cert: &Certificate) -> Result<(), CliError> {
    match &a.cert {
        Some(path) => write(path, &cert.to_jsonl()),
        None => Ok(()),
    }
}

fn keep_partial(a: &ExploreArgs, e: &EngineError) {
    if let EngineError::BudgetExhausted { report, .. } = e {
        let _ = save_certificate(a, &report.certificate);
    }
}

fn report_json(r: &AnalysisReport) -> serde_json::Value {
    json!({
        "structure": r.structure.to_string(),
        "source": r.structure.source(),
        "targets": r.structure.targets(),
        "digest": r.structure.digest(),
        "stats": {
            "steps": r.stats.steps,
            "paths": r.stats.paths,
            "pruned": r.stats.pruned,
            "merges": r.stats.merges,
            "solver_queries": r.stats.solver_queries,
        },
        "certificate_records": r.certificate.records().len(),
    })
}

fn check(path: &Path) -> Result<Output, CliError> {
    let p = load_program(path)?;
    let digest = program_digest(&p);
    Ok(Output::ok(
        format!("ok {} {} statements {digest}", p.name(), p.labels().len()),
        json!({"program": p.name(), "statements": p.labels().len(), "digest": digest}),
    ))
}

fn parse_assignment(p: &Program, text: &str) -> Result<(symexec_core::il::Var, Value), CliError> {
    let usage = |m: String| CliError::Usage(format!("--env {text}: {m}"));
    let (name, raw) = text.split_once('=').ok_or_else(|| usage("expected NAME=VALUE".into()))?;
    let v = p
        .var(name.trim())
        .ok_or_else(|| usage(format!("unknown variable {name}")))?;
    let raw = raw.trim();
    let n = match raw.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => raw.parse(),
    }
    .map_err(|_| usage(format!("bad number {raw}")))?;
    let value = match symexec_core::il::Atom::ty(&v) {
        Type::Word(w) => Value::word(w, n),
        Type::Mem { addr, val } => Value::Mem(symexec_core::il::MemoryValue::new(addr, val, n)),
    };
    Ok((v, value))
}

fn interp(path: &Path, entry: Option<Label>, env: &[String], max_steps: usize) -> Result<Output, CliError> {
    let p = load_program(path)?;
    let mut store: BTreeMap<_, _> = p
        .vars()
        .map(|v| {
            let z = Value::zero(symexec_core::il::Atom::ty(&v));
            (v, z)
        })
        .collect();
    for a in env {
        let (v, x) = parse_assignment(&p, a)?;
        store.insert(v, x);
    }
    let labels: BTreeSet<Label> = p.labels().into_iter().filter(|l| !p.exits().contains(l)).collect();
    let start = State::running(entry.unwrap_or(p.entry()), store);
    let trace = match run_in_fragment(&p, &start, &labels, max_steps) {
        Ok(t) => t,
        Err(RunError::Truncated { max_steps, .. }) => {
            return Err(CliError::Truncated(max_steps))
        }
        Err(RunError::NotInFragment) => {
            return Err(CliError::Usage("start label is not a statement".into()))
        }
    };
    let text: Vec<String> = trace.iter().map(|s| s.to_string()).collect();
    let last = trace.last().expect("trace is nonempty");
    let failed = matches!(last, State::Error { .. });
    Ok(Output {
        text: text.join("\n"),
        json: json!({
            "trace": text,
            "steps": trace.len() - 1,
            "final_pc": last.pc(),
            "failed": failed,
        }),
        code: if failed { 1 } else { 0 },
    })
}

fn symexec(cli: &Cli, path: &Path, a: &ExploreArgs, fragment: Option<&str>, samples: u64) -> Result<Output, CliError> {
    let p = load_program(path)?;
    let entry = a.entry.unwrap_or(p.entry());
    let labels = match fragment {
        Some(text) => parse_label_ranges(text).map_err(|e| CliError::Usage(format!("--fragment: {e}")))?,
        None => p.labels().into_iter().collect(),
    };
    let opts = explore_options(cli, a, &p)?;
    let pre = precondition(a, &p)?.unwrap_or_else(|| symexec_core::il::Term::bool(true));
    let source = symexec_core::contracts::source_from_precondition(entry, &pre, p.typing())?;
    let k = Kernel::new(p, solver(cli));
    let report = symexec_core::engine::explore(&k, &source, &labels, &opts).inspect_err(|e| keep_partial(a, e))?;
    save_certificate(a, &report.certificate)?;
    let mut text = report.structure.to_string();
    let mut js = report_json(&report);
    if samples > 0 {
        let seeds = cli.seed..cli.seed + samples;
        let ran = check_soundness(&k, &report.structure, seeds, opts.max_steps)
            .map_err(|v| CliError::Soundness(v.to_string()))?;
        text.push_str(&format!("\nsampled {ran} runs, all matched"));
        js["sampled_runs"] = json!(ran);
    }
    Ok(Output::ok(text, js))
}

fn wcet(cli: &Cli, path: &Path, a: &ExploreArgs, exits: &[Label], counter_width: u32) -> Result<Output, CliError> {
    let p = load_program(path)?;
    let cm = CostModel {
        counter_width,
        ..CostModel::default()
    };
    let inst = instrument(&p, &cm)?;
    let exits: BTreeSet<Label> = if exits.is_empty() {
        p.exits().clone()
    } else {
        exits.iter().copied().collect()
    };
    if exits.is_empty() {
        return Err(CliError::Usage("no exit label given and the program declares none".into()));
    }
    let opts = explore_options(cli, a, &p)?;
    let pre = precondition(a, &p)?;
    let k = timing_kernel(&inst, solver(cli));
    let entry = a.entry.unwrap_or(p.entry());
    let r = analyze_wcet(&k, &inst, entry, &exits, pre.as_ref(), &opts).inspect_err(|e| {
        if let symexec_core::timing::TimingError::Engine(e) = e {
            keep_partial(a, e)
        }
    })?;
    save_certificate(a, &r.analysis.certificate)?;
    let mut text = r.to_string();
    if let Some(path) = &a.cert {
        text.push_str(&format!("certificate {}\n", path.display()));
    }
    let per_target: Vec<_> = r
        .per_target
        .iter()
        .map(|(l, i)| json!({"label": l, "lo": i.lo, "hi": i.hi}))
        .collect();
    Ok(Output::ok(
        text.trim_end().to_string(),
        json!({
            "program_digest": r.program_digest,
            "entry": r.entry,
            "exits": r.exits,
            "interval": {"lo": r.interval.lo, "hi": r.interval.hi},
            "per_target": per_target,
            "failed_targets": r.failed_targets,
            "certificate": a.cert.as_ref().map(|p| p.display().to_string()),
        }),
    ))
}

/// Replay against the program itself or, for timing certificates, against
/// its instrumented form.
fn replay(cli: &Cli, cert_path: &Path, path: &Path) -> Result<Output, CliError> {
    let p = load_program(path)?;
    let cert = Certificate::from_jsonl(&read(cert_path)?)?;
    let program = match instrument(&p, &CostModel::default()) {
        Ok(inst) if cert.program_digest() == program_digest(&inst.program) => inst.program,
        _ if cert.program_digest() != program_digest(&p) => {
            return Err(ReplayError::ProgramMismatch {
                expected: program_digest(&p),
                found: cert.program_digest().to_string(),
            }
            .into())
        }
        _ => p,
    };
    let k = Kernel::new(program, solver(cli));
    let ps = k.replay(&cert)?;
    Ok(Output::ok(
        format!("ok {} records\n{ps}", cert.records().len()),
        json!({
            "records": cert.records().len(),
            "structure": ps.to_string(),
            "digest": ps.digest(),
            "widenings": cert.widenings(),
        }),
    ))
}

fn contract(cli: &Cli, path: &Path, contract_path: &Path, a: &ExploreArgs) -> Result<Output, CliError> {
    if a.entry.is_some() || a.pre.is_some() {
        return Err(CliError::Usage(
            "a contract sets its own entry and precondition".into(),
        ));
    }
    let p = load_program(path)?;
    let c = parse_contract(&read(contract_path)?, p.typing())?;
    let opts = explore_options(cli, a, &p)?;
    let k = Kernel::new(p, solver(cli));
    let (verdict, report) = prove_contract(&k, &c, &opts).inspect_err(|e| {
        if let symexec_core::contracts::ContractError::Engine(e) = e {
            keep_partial(a, e)
        }
    })?;
    save_certificate(a, &report.certificate)?;
    let (code, condition) = match &verdict {
        Verdict::Holds => (0, None),
        Verdict::Failed { condition, .. } => (1, Some(*condition)),
    };
    Ok(Output {
        text: format!("{verdict}\n{}", report.structure),
        json: json!({
            "holds": verdict.holds(),
            "failed_condition": condition,
            "verdict": verdict.to_string(),
            "analysis": report_json(&report),
        }),
        code,
    })
}

fn run(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Check { file } => check(file),
        Command::Interp {
            file,
            entry,
            env,
            max_steps,
        } => interp(file, *entry, env, *max_steps),
        Command::Symexec {
            file,
            explore,
            fragment,
            samples,
        } => symexec(cli, file, explore, fragment.as_deref(), *samples),
        Command::Wcet {
            file,
            explore,
            exits,
            counter_width,
        } => wcet(cli, file, explore, exits, *counter_width),
        Command::Replay { cert, file } => replay(cli, cert, file),
        Command::Contract {
            file,
            contract: c,
            explore,
        } => contract(cli, file, c, explore),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", out.json);
            } else {
                println!("{}", out.text);
            }
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            if cli.json {
                println!("{}", json!({"error": e.class(), "detail": detail}));
            }
            eprintln!("error: {}: {detail}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
