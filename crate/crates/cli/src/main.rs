//! `hazsynth` command line: each verb reads and writes the documented file
//! formats so the stages compose through files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hazsynth_core::extract::{self, EventSequence, ExtractOptions};
use hazsynth_core::harness::{self, AnalysisReport, Config, ReportFormat};
use hazsynth_core::search::{self, SearchConfig};
use hazsynth_core::sim::{self, InfeasiblePolicy, Scenario, SimEvaluator};
use hazsynth_core::{bundled, parse_model, synthesize_model, HazError, ModelSet, Result, Supervisor};

#[derive(Parser)]
#[command(name = "hazsynth", version, about = "Two-layer hazard analysis: supervisor synthesis plus risk-scored simulation")]
struct Cli {
    /// Config file (TOML); defaults to $HAZSYNTH_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Model file (.des); the bundled scenario-A model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scenario file (.scn); the bundled scenario A when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Maximum sequence length for extraction (default 10)
    #[arg(long)]
    horizon: Option<usize>,
    /// Episodes per method and seed (default 500)
    #[arg(long)]
    budget: Option<usize>,
    /// Number of seeds (seeds 0..k).
    #[arg(long)]
    seeds: Option<u64>,
    /// Risk value at or above which an episode is unsafe (default 1.0)
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format (default json)
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Md => ReportFormat::Md,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Method {
    Mcts,
    Random,
}

#[derive(Subcommand)]
enum Verb {
    /// Synthesize the supervisor of a model.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Also write a Graphviz rendering.
        #[arg(long)]
        dot: bool,
    },
    /// Enumerate bounded hazard-reaching sequences.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Read a supervisor JSON instead of synthesizing from --model.
        #[arg(long)]
        supervisor: Option<PathBuf>,
        /// Emit deduplicated proactive projections instead of full sequences.
        #[arg(long)]
        proactive: bool,
        /// Do not count the final hazard event toward the horizon.
        #[arg(long)]
        exclude_terminal: bool,
    },
    /// Replay sequences in the simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Sequences file (.jsonl or .csv).
        #[arg(long, conflicts_with = "seq")]
        sequences: Option<PathBuf>,
        /// A single space-separated sequence.
        #[arg(long)]
        seq: Option<String>,
        /// Write a per-step trace CSV for every episode into --out.
        #[arg(long)]
        traces: bool,
    },
    /// Run a simulation-only baseline.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mcts")]
        method: Method,
        /// Events per baseline episode (default 12)
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Two-layer method against both baselines over all seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Events per baseline episode (default 12)
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Re-render a JSON analysis report.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report JSON written by `compare`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HazError::Config(format!("{}: {e}", path.display())))
}

fn load_model(c: &Common) -> Result<ModelSet> {
    match &c.model {
        Some(p) => parse_model(&read(p)?),
        None => parse_model(bundled::SCENARIO_A_DES),
    }
}

fn load_scenario(c: &Common) -> Result<Scenario> {
    match &c.scenario {
        Some(p) => Scenario::from_toml(&read(p)?),
        None => Ok(Scenario::scenario_a()),
    }
}

fn load_config(explicit: Option<&Path>, c: &Common, max_len: Option<usize>) -> Result<Config> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("HAZSYNTH_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => Config::from_toml(&read(&p)?)?,
        None => Config::default(),
    };
    if let Some(v) = c.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = c.budget {
        cfg.budget = v;
    }
    if let Some(v) = c.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = c.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = max_len {
        cfg.max_len = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `name` under --out, or prints to stdout.
fn emit(c: &Common, name: &str, content: &str) -> Result<()> {
    match &c.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            fs::write(&path, content)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn load_sequences(path: &Path) -> Result<Vec<EventSequence>> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        extract::from_csv(&text)
    } else {
        extract::from_jsonl(&text)
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg_path = cli.config.clone();
    match cli.verb {
        Verb::Synth { common, dot } => {
            let model = load_model(&common)?;
            let sup = synthesize_model(&model)?;
            eprintln!(
                "supervisor: {} states, {} transitions (unrestricted {} / {}){}",
                sup.automaton.num_states(),
                sup.automaton.num_transitions(),
                sup.unrestricted_states,
                sup.unrestricted_transitions,
                if sup.empty { ", EMPTY" } else { "" }
            );
            emit(&common, "supervisor.json", &sup.to_json())?;
            if dot {
                emit(&common, "supervisor.dot", &sup.automaton.to_dot())?;
            }
        }
        Verb::Extract {
            common,
            supervisor,
            proactive,
            exclude_terminal,
        } => {
            let cfg = load_config(cfg_path.as_deref(), &common, None)?;
            let model = load_model(&common)?;
            let sup = match &supervisor {
                Some(p) => Supervisor::from_json(&read(p)?)?,
                None => synthesize_model(&model)?,
            };
            let mut opts = ExtractOptions::new(cfg.horizon);
            opts.count_terminal_event = cfg.count_terminal_event && !exclude_terminal;
            let mut seqs = extract::enumerate_unsafe(&sup, opts)?;
            eprintln!("{} sequences at horizon {}", seqs.len(), cfg.horizon);
            if proactive {
                let table = model.event_table();
                let projected = seqs
                    .iter()
                    .map(|s| extract::project_proactive(s, &table))
                    .collect::<Result<Vec<_>>>()?;
                seqs = extract::dedup_projections(&projected);
                eprintln!("{} distinct proactive projections", seqs.len());
            }
            match common.format {
                Some(Format::Csv) => emit(&common, "sequences.csv", &extract::to_csv(&seqs))?,
                Some(Format::Md) => return Err(HazError::Config("extract writes json (jsonl) or csv".into())),
                _ => emit(&common, "sequences.jsonl", &extract::to_jsonl(&seqs))?,
            }
        }
        Verb::Simulate {
            common,
            sequences,
            seq,
            traces,
        } => {
            let cfg = load_config(cfg_path.as_deref(), &common, None)?;
            let scenario = cfg.apply_to(&load_scenario(&common)?);
            let seqs: Vec<Vec<String>> = match (&sequences, &seq) {
                (Some(p), _) => load_sequences(p)?.into_iter().map(|s| s.events).collect(),
                (None, Some(s)) => vec![s.split_whitespace().map(String::from).collect()],
                (None, None) => return Err(HazError::Config("simulate needs --sequences or --seq".into())),
            };
            let mut summaries = Vec::new();
            for (i, s) in seqs.iter().enumerate() {
                if s.is_empty() {
                    continue;
                }
                for seed in 0..cfg.seeds {
                    let tr = sim::run_episode(&scenario, s, seed, InfeasiblePolicy::Abort)?;
                    if traces && common.out.is_some() {
                        emit(&common, &format!("trace_{i}_{seed}.csv"), &tr.to_csv())?;
                    }
                    let verdict = sim::classify_trace(&tr, cfg.threshold);
                    summaries.push(serde_json::json!({
                        "sequence": s,
                        "verdict": verdict,
                        "summary": tr.summary(),
                    }));
                }
            }
            let body = serde_json::to_string_pretty(&summaries).map_err(HazError::from)?;
            emit(&common, "simulation.json", &format!("{body}\n"))?;
        }
        Verb::Search { common, method, max_len } => {
            let cfg = load_config(cfg_path.as_deref(), &common, max_len)?;
            let scenario = cfg.apply_to(&load_scenario(&common)?);
            let model = load_model(&common)?;
            scenario.check_bindings(&model)?;
            let alphabet: Vec<String> = model
                .event_table()
                .into_iter()
                .filter(|e| e.proactive)
                .map(|e| e.name)
                .collect();
            let eval = SimEvaluator { scenario: &scenario };
            for seed in 0..cfg.seeds {
                let sc: SearchConfig = cfg.search_config(seed);
                let (name, res) = match method {
                    Method::Mcts => ("mcts", search::mcts_search(&eval, &alphabet, &sc)?),
                    Method::Random => ("random", search::random_search(&eval, &alphabet, &sc)?),
                };
                eprintln!("{name} seed {seed}: N = {}, r_mean = {:.4}", res.n, res.r_mean);
                match common.format {
                    Some(Format::Csv) => emit(&common, &format!("{name}_{seed}.csv"), &res.to_csv())?,
                    _ => emit(&common, &format!("{name}_{seed}.json"), &format!("{}\n", res.to_json()))?,
                }
            }
        }
        Verb::Compare { common, max_len } => {
            let cfg = load_config(cfg_path.as_deref(), &common, max_len)?;
            let model = load_model(&common)?;
            let scenario = load_scenario(&common)?;
            let report = harness::compare(&model, &scenario, &cfg)?;
            for s in &report.summary {
                eprintln!("{:>9}: mean N {:.2}, mean r_mean {:.4}", s.method, s.mean_n, s.mean_r_mean);
            }
            write_report(&common, &report)?;
        }
        Verb::Report { common, input } => {
            let report = AnalysisReport::from_json(&read(&input)?)?;
            write_report(&common, &report)?;
        }
    }
    Ok(())
}

fn write_report(common: &Common, report: &AnalysisReport) -> Result<()> {
    let fmt: ReportFormat = common.format.unwrap_or(Format::Json).into();
    let mut body = harness::emit_report(report, fmt);
    if !body.ends_with('\n') {
        body.push('\n');
    }
    emit(common, &format!("report.{}", fmt.extension()), &body)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let HazError::Validation(diags) = &e {
                for d in diags {
                    eprintln!("  {d}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
