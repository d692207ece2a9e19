//! Pipeline orchestration: the two-layer method, the baselines under a
//! shared budget, alarm classification and report rendering.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::ModelSet;
use crate::error::{HazError, Result};
use crate::extract::{dedup_projections, enumerate_unsafe, project_proactive, ExtractOptions};
use crate::search::{mcts_search, random_search, EpisodeRecord, SearchConfig, SearchResult};
use crate::sim::{classify_r, run_episode, InfeasiblePolicy, RiskParams, Scenario, SimEvaluator, Verdict};
use crate::synth::synthesize_model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub horizon: usize,
    pub budget: usize,
    /// Episode length of the baselines.
    pub max_len: usize,
    /// Number of seeds; seeds run 0..seeds.
    pub seeds: u64,
    pub threshold: f64,
    pub uct_c: f64,
    /// Whether the final hazard-reaching event counts toward the horizon.
    pub count_terminal_event: bool,
    /// Overrides the scenario's risk parameters when set.
    pub risk: Option<RiskParams>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            horizon: 10,
            budget: 500,
            max_len: 12,
            seeds: 10,
            threshold: crate::sim::DEFAULT_THRESHOLD,
            uct_c: std::f64::consts::SQRT_2,
            count_terminal_event: true,
            risk: None,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| HazError::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(HazError::Config("budget must be at least 1".into()));
        }
        if self.horizon == 0 || self.max_len == 0 {
            return Err(HazError::Config("horizon and max_len must be at least 1".into()));
        }
        if self.seeds == 0 {
            return Err(HazError::Config("at least one seed is required".into()));
        }
        if self.uct_c.is_nan() || self.uct_c <= 0.0 || !self.threshold.is_finite() {
            return Err(HazError::Config("uct_c must be positive and threshold finite".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            budget: self.budget,
            max_len: self.max_len,
            seed,
            threshold: self.threshold,
            uct_c: self.uct_c,
        }
    }

    pub fn apply_to(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        if let Some(r) = self.risk {
            s.risk = r;
        }
        s
    }
}

/// Layer-1 output: the deduplicated proactive projections to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalSequences {
    pub full_count: usize,
    pub projections: Vec<Vec<String>>,
    pub flags: Vec<String>,
}

pub fn formal_sequences(model: &ModelSet, horizon: usize, count_terminal_event: bool) -> Result<FormalSequences> {
    // an unmarked spec would count as all-marked; there is no hazard to reach
    if !model.specs().any(|s| s.has_marking()) {
        return Ok(FormalSequences {
            full_count: 0,
            projections: Vec::new(),
            flags: vec!["empty_supervisor".into(), "no_marked_hazard".into()],
        });
    }
    let sup = synthesize_model(model)?;
    if sup.empty {
        return Ok(FormalSequences {
            full_count: 0,
            projections: Vec::new(),
            flags: vec!["empty_supervisor".into()],
        });
    }
    let mut opts = ExtractOptions::new(horizon);
    opts.count_terminal_event = count_terminal_event;
    let full = enumerate_unsafe(&sup, opts)?;
    let table = model.event_table();
    let projected = full
        .iter()
        .map(|s| project_proactive(s, &table))
        .collect::<Result<Vec<_>>>()?;
    let projections: Vec<Vec<String>> = dedup_projections(&projected)
        .into_iter()
        .map(|s| s.events)
        .filter(|e| !e.is_empty())
        .collect();
    let mut flags = Vec::new();
    if projections.is_empty() {
        flags.push("no_sequences".into());
    }
    Ok(FormalSequences {
        full_count: full.len(),
        projections,
        flags,
    })
}

/// Synthesize, extract, project and simulate under a fixed episode budget.
/// Projections are replayed round-robin with fresh seeds when fewer than
/// the budget, and truncated when more.
pub fn run_two_layer(model: &ModelSet, scenario: &Scenario, cfg: &Config, seed: u64) -> Result<SearchResult> {
    if cfg.budget == 0 {
        return Err(HazError::Config("budget must be at least 1".into()));
    }
    let formal = formal_sequences(model, cfg.horizon, cfg.count_terminal_event)?;
    run_formal(&formal, scenario, cfg, seed)
}

pub fn run_formal(formal: &FormalSequences, scenario: &Scenario, cfg: &Config, seed: u64) -> Result<SearchResult> {
    if cfg.budget == 0 {
        return Err(HazError::Config("budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::new();
    if !formal.projections.is_empty() {
        for i in 0..cfg.budget {
            let seq = &formal.projections[i % formal.projections.len()];
            let ep_seed = rng.next_u64();
            let tr = run_episode(scenario, seq, ep_seed, InfeasiblePolicy::Skip)?;
            episodes.push(EpisodeRecord {
                sequence: seq.clone(),
                executed: tr.executed,
                seed: ep_seed,
                r_max: tr.r_max,
                is_unsafe: classify_r(tr.r_max, cfg.threshold) == Verdict::Unsafe,
            });
        }
    }
    let mut res = SearchResult::from_episodes("two_layer", seed, cfg.threshold, episodes);
    res.flags = formal.flags.clone();
    if formal.projections.len() > cfg.budget {
        res.flags.push(format!("truncated {} of {} projections", formal.projections.len() - cfg.budget, formal.projections.len()));
    }
    Ok(res)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlarmClassification {
    pub agreements: Vec<Vec<String>>,
    pub missed_alarms: Vec<Vec<String>>,
    pub false_alarms: Vec<Vec<String>>,
    /// Evaluated, benign and not flagged by the formal layer.
    pub benign: Vec<Vec<String>>,
}

/// A sequence evaluated several times counts as risky if any evaluation is.
pub fn classify_alarms(
    formal: &BTreeSet<Vec<String>>,
    sim_results: &[(Vec<String>, f64)],
    threshold: f64,
) -> AlarmClassification {
    let mut worst: BTreeMap<&Vec<String>, f64> = BTreeMap::new();
    for (s, r) in sim_results {
        let e = worst.entry(s).or_insert(f64::NEG_INFINITY);
        *e = e.max(*r);
    }
    let mut out = AlarmClassification::default();
    for (s, r) in worst {
        let risky = r >= threshold;
        let bucket = match (formal.contains(s), risky) {
            (true, true) => &mut out.agreements,
            (true, false) => &mut out.false_alarms,
            (false, true) => &mut out.missed_alarms,
            (false, false) => &mut out.benign,
        };
        bucket.push(s.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: String,
    pub scenario: String,
    pub budget: usize,
    pub horizon: usize,
    pub max_len: usize,
    pub seeds: Vec<u64>,
    pub threshold: f64,
    pub config_hash: String,
    pub formal_full_sequences: usize,
    pub formal_projections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub method: String,
    pub seed: u64,
    pub episodes: usize,
    pub n: usize,
    pub r_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_episodes: f64,
    pub mean_n: f64,
    /// Mean of per-seed r_mean over seeds with at least one unsafe episode.
    pub mean_r_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub meta: RunMeta,
    pub per_seed: Vec<SeedRow>,
    pub summary: Vec<MethodSummary>,
    pub alarms: AlarmClassification,
    pub notes: Vec<String>,
    pub results: Vec<SearchResult>,
}

pub const METHODS: [&str; 3] = ["two_layer", "mcts", "random"];

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn from_results(meta: RunMeta, results: Vec<SearchResult>, formal: &BTreeSet<Vec<String>>) -> Self {
        let per_seed: Vec<SeedRow> = results
            .iter()
            .map(|r| SeedRow {
                method: r.method.clone(),
                seed: r.seed,
                episodes: r.episodes.len(),
                n: r.n,
                r_mean: r.r_mean,
            })
            .collect();
        let mut summary = Vec::new();
        for m in METHODS {
            let rows: Vec<&SeedRow> = per_seed.iter().filter(|r| r.method == m).collect();
            if rows.is_empty() {
                continue;
            }
            let k = rows.len() as f64;
            let hits: Vec<f64> = rows.iter().filter(|r| r.n > 0).map(|r| r.r_mean).collect();
            summary.push(MethodSummary {
                method: m.to_string(),
                mean_episodes: rows.iter().map(|r| r.episodes as f64).sum::<f64>() / k,
                mean_n: rows.iter().map(|r| r.n as f64).sum::<f64>() / k,
                mean_r_mean: if hits.is_empty() { 0.0 } else { hits.iter().sum::<f64>() / hits.len() as f64 },
            });
        }
        // two-layer episodes are keyed by the formal sequence, baseline
        // episodes by what the simulated human actually did
        let evaluated: Vec<(Vec<String>, f64)> = results
            .iter()
            .flat_map(|r| {
                r.episodes.iter().map(move |e| {
                    let key = if r.method == "two_layer" { e.sequence.clone() } else { e.executed.clone() };
                    (key, e.r_max)
                })
            })
            .collect();
        let alarms = classify_alarms(formal, &evaluated, meta.threshold);
        let mut notes = Vec::new();
        for m in METHODS {
            if let Some(s) = summary.iter().find(|s| s.method == m) {
                if s.mean_episodes != meta.budget as f64 {
                    notes.push(format!("{m}: mean episodes {} vs budget {}", s.mean_episodes, meta.budget));
                }
            }
        }
        for r in &results {
            for f in &r.flags {
                let note = format!("{}: {f}", r.method);
                if !notes.contains(&note) {
                    notes.push(note);
                }
            }
        }
        AnalysisReport {
            meta,
            per_seed,
            summary,
            alarms,
            notes,
            results,
        }
    }
}

/// The full comparison: every method once per seed.
pub fn compare(model: &ModelSet, scenario: &Scenario, cfg: &Config) -> Result<AnalysisReport> {
    cfg.validate()?;
    scenario.check_bindings(model)?;
    let scenario = cfg.apply_to(scenario);
    let formal = formal_sequences(model, cfg.horizon, cfg.count_terminal_event)?;
    let eval = SimEvaluator { scenario: &scenario };
    let alphabet: Vec<String> = model
        .event_table()
        .into_iter()
        .filter(|e| e.proactive)
        .map(|e| e.name)
        .collect();
    let seeds: Vec<u64> = (0..cfg.seeds).collect();
    let mut results = Vec::new();
    for &seed in &seeds {
        results.push(run_formal(&formal, &scenario, cfg, seed)?);
        let sc = cfg.search_config(seed);
        results.push(mcts_search(&eval, &alphabet, &sc)?);
        results.push(random_search(&eval, &alphabet, &sc)?);
    }
    let meta = RunMeta {
        model: model.name.clone(),
        scenario: scenario.name.clone(),
        budget: cfg.budget,
        horizon: cfg.horizon,
        max_len: cfg.max_len,
        seeds,
        threshold: cfg.threshold,
        config_hash: cfg.hash(),
        formal_full_sequences: formal.full_count,
        formal_projections: formal.projections.len(),
    };
    let set: BTreeSet<Vec<String>> = formal.projections.iter().cloned().collect();
    Ok(AnalysisReport::from_results(meta, results, &set))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = HazError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(HazError::Config(format!("unknown format `{other}`"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Md => "md",
        }
    }
}

pub fn emit_report(report: &AnalysisReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["method", "seed", "episodes", "n", "r_mean"]).expect("in-memory write");
            for m in METHODS {
                let rows: Vec<&SeedRow> = report.per_seed.iter().filter(|r| r.method == m).collect();
                for r in &rows {
                    w.write_record([
                        r.method.clone(),
                        r.seed.to_string(),
                        r.episodes.to_string(),
                        r.n.to_string(),
                        format!("{:.6}", r.r_mean),
                    ])
                    .expect("in-memory write");
                }
                if let Some(s) = report.summary_for(m) {
                    w.write_record([
                        m.to_string(),
                        "mean".to_string(),
                        format!("{:.1}", s.mean_episodes),
                        format!("{:.3}", s.mean_n),
                        format!("{:.6}", s.mean_r_mean),
                    ])
                    .expect("in-memory write");
                }
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
        }
        ReportFormat::Md => {
            let m = &report.meta;
            let mut out = format!(
                "# Hazard analysis: {} / {}\n\nbudget {}, horizon {}, max length {}, {} seeds, threshold {}\n\nconfig `{}`\n\n",
                m.model,
                m.scenario,
                m.budget,
                m.horizon,
                m.max_len,
                m.seeds.len(),
                m.threshold,
                m.config_hash
            );
            out.push_str("| method | episodes | mean N | mean r_mean |\n|---|---:|---:|---:|\n");
            for s in &report.summary {
                out.push_str(&format!(
                    "| {} | {:.1} | {:.2} | {:.4} |\n",
                    s.method, s.mean_episodes, s.mean_n, s.mean_r_mean
                ));
            }
            let a = &report.alarms;
            out.push_str(&format!(
                "\nformal sequences: {} full, {} proactive projections\n\nagreements {}, missed alarms {}, false alarms {}, benign {}\n",
                m.formal_full_sequences,
                m.formal_projections,
                a.agreements.len(),
                a.missed_alarms.len(),
                a.false_alarms.len(),
                a.benign.len()
            ));
            let list = |title: &str, seqs: &[Vec<String>], out: &mut String| {
                if !seqs.is_empty() {
                    out.push_str(&format!("\n## {title}\n\n"));
                    for s in seqs.iter().take(50) {
                        out.push_str(&format!("- `{}`\n", s.join(" ")));
                    }
                    if seqs.len() > 50 {
                        out.push_str(&format!("- … {} more\n", seqs.len() - 50));
                    }
                }
            };
            list("Agreements", &a.agreements, &mut out);
            list("False alarms", &a.false_alarms, &mut out);
            list("Missed alarms", &a.missed_alarms, &mut out);
            if !report.notes.is_empty() {
                out.push_str("\n## Notes\n\n");
                for n in &report.notes {
                    out.push_str(&format!("- {n}\n"));
                }
            }
            out
        }
    }
}
