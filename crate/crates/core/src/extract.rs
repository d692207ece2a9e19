//! Bounded enumeration of hazard-reaching event sequences and their
//! projection onto proactive events.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::compose::ExplicitAutomaton;
use crate::efa::EventDecl;
use crate::error::{HazError, Result};
use crate::synth::Supervisor;

pub const DEFAULT_MAX_SEQUENCES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Full,
    Proactive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSequence {
    pub id: usize,
    pub kind: SequenceKind,
    pub events: Vec<String>,
    /// Ids of the full sequences this one was derived from.
    #[serde(default)]
    pub sources: Vec<usize>,
}

impl EventSequence {
    pub fn full(id: usize, events: Vec<String>) -> Self {
        EventSequence {
            id,
            kind: SequenceKind::Full,
            events,
            sources: vec![id],
        }
    }

    pub fn proactive(id: usize, events: Vec<String>) -> Self {
        EventSequence {
            id,
            kind: SequenceKind::Proactive,
            events,
            sources: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn joined(&self) -> String {
        self.events.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub horizon: usize,
    /// Whether the event entering the hazard counts towards the horizon.
    pub count_terminal_event: bool,
    pub max_sequences: usize,
}

impl ExtractOptions {
    pub fn new(horizon: usize) -> Self {
        ExtractOptions {
            horizon,
            count_terminal_event: true,
            max_sequences: DEFAULT_MAX_SEQUENCES,
        }
    }
}

/// All distinct words of bounded length that lead from an initial state to
/// a marked state, cut at the first marked state reached. Sorted
/// lexicographically by event names.
pub fn enumerate_unsafe(sup: &Supervisor, opts: ExtractOptions) -> Result<Vec<EventSequence>> {
    if sup.empty {
        return Err(HazError::Config("supervisor is empty; no hazard is reachable".into()));
    }
    enumerate_paths(&sup.automaton, opts)
}

pub fn enumerate_paths(a: &ExplicitAutomaton, opts: ExtractOptions) -> Result<Vec<EventSequence>> {
    if opts.horizon == 0 {
        return Err(HazError::Config("horizon must be at least 1".into()));
    }
    let succ = a.successors();
    let marked: Vec<bool> = a.states.iter().map(|s| s.marked).collect();
    let mut found: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut path = Vec::with_capacity(opts.horizon + 1);

    struct Ctx<'a> {
        succ: &'a [Vec<(usize, usize)>],
        marked: &'a [bool],
        opts: ExtractOptions,
    }

    fn dfs(ctx: &Ctx<'_>, s: usize, path: &mut Vec<usize>, found: &mut BTreeSet<Vec<usize>>) -> Result<()> {
        if !path.is_empty() && ctx.marked[s] {
            found.insert(path.clone());
            if found.len() > ctx.opts.max_sequences {
                return Err(HazError::Resource(format!(
                    "more than {} unsafe sequences",
                    ctx.opts.max_sequences
                )));
            }
            return Ok(());
        }
        let depth = path.len();
        for &(e, t) in &ctx.succ[s] {
            let allowed = depth < ctx.opts.horizon
                || (depth == ctx.opts.horizon && !ctx.opts.count_terminal_event && ctx.marked[t]);
            if !allowed {
                continue;
            }
            path.push(e);
            dfs(ctx, t, path, found)?;
            path.pop();
        }
        Ok(())
    }

    let ctx = Ctx {
        succ: &succ,
        marked: &marked,
        opts,
    };
    for &s in &a.initial {
        dfs(&ctx, s, &mut path, &mut found)?;
    }

    let mut words: Vec<Vec<String>> = found
        .into_iter()
        .map(|w| w.into_iter().map(|e| a.event_name(e).to_string()).collect())
        .collect();
    words.sort();
    words.dedup();
    Ok(words
        .into_iter()
        .enumerate()
        .map(|(i, w)| EventSequence::full(i, w))
        .collect())
}

/// Keeps only proactive events, preserving order. An empty result means
/// the hazard is reachable without any proactive stimulus.
pub fn project_proactive(seq: &EventSequence, events: &[EventDecl]) -> Result<EventSequence> {
    if seq.kind != SequenceKind::Full {
        return Err(HazError::Config(format!("sequence {} is already a projection", seq.id)));
    }
    let mut out = Vec::new();
    for name in &seq.events {
        let decl = events
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| HazError::Config(format!("event `{name}` not in event table")))?;
        if decl.proactive {
            out.push(name.clone());
        }
    }
    let mut p = EventSequence::proactive(seq.id, out);
    p.sources = vec![seq.id];
    Ok(p)
}

/// Collapses equal projections, first occurrence first, merging source ids
/// and renumbering.
pub fn dedup_projections(seqs: &[EventSequence]) -> Vec<EventSequence> {
    let mut out: Vec<EventSequence> = Vec::new();
    for s in seqs {
        match out.iter_mut().find(|o| o.events == s.events) {
            Some(o) => {
                for &src in &s.sources {
                    if !o.sources.contains(&src) {
                        o.sources.push(src);
                    }
                }
            }
            None => {
                let mut n = s.clone();
                n.kind = SequenceKind::Proactive;
                out.push(n);
            }
        }
    }
    for (i, s) in out.iter_mut().enumerate() {
        s.id = i;
    }
    out
}

pub fn to_jsonl(seqs: &[EventSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&serde_json::to_string(s).expect("sequence serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<EventSequence>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HazError::from))
        .collect()
}

/// CSV with columns `id,kind,sources,events`; sources are `;`-separated and
/// events space-separated.
pub fn to_csv(seqs: &[EventSequence]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "kind", "sources", "events"]).expect("in-memory write");
    for s in seqs {
        let kind = match s.kind {
            SequenceKind::Full => "full",
            SequenceKind::Proactive => "proactive",
        };
        let sources = s.sources.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([s.id.to_string().as_str(), kind, &sources, &s.joined()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn from_csv(text: &str) -> Result<Vec<EventSequence>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| HazError::Format(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id = field(0)
            .parse()
            .map_err(|_| HazError::Format(format!("bad sequence id `{}`", field(0))))?;
        let kind = match field(1) {
            "full" => SequenceKind::Full,
            "proactive" => SequenceKind::Proactive,
            k => return Err(HazError::Format(format!("unknown sequence kind `{k}`"))),
        };
        let sources = field(2)
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| HazError::Format(format!("bad source id `{s}`"))))
            .collect::<Result<Vec<usize>>>()?;
        out.push(EventSequence {
            id,
            kind,
            events: field(3).split_whitespace().map(String::from).collect(),
            sources,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use crate::synth::synthesize_model;
    use proptest::prelude::*;

    fn table(names: &[(&str, bool)]) -> Vec<EventDecl> {
        names
            .iter()
            .map(|(n, p)| {
                let e = EventDecl::new(*n);
                if *p {
                    e.proactive()
                } else {
                    e
                }
            })
            .collect()
    }

    #[test]
    fn projection_drops_reactive_events() {
        let ev = table(&[
            ("activateRobot", true),
            ("approachRobot", true),
            ("robotStops", false),
            ("enterWorkspace", true),
        ]);
        let seq = EventSequence::full(
            0,
            ["activateRobot", "approachRobot", "robotStops", "enterWorkspace"]
                .map(String::from)
                .to_vec(),
        );
        let p = project_proactive(&seq, &ev).unwrap();
        assert_eq!(p.events, ["activateRobot", "approachRobot", "enterWorkspace"]);
        assert_eq!(p.kind, SequenceKind::Proactive);

        let all = EventSequence::full(1, vec!["activateRobot".into(), "approachRobot".into()]);
        assert_eq!(project_proactive(&all, &ev).unwrap().events, all.events);

        let none = EventSequence::full(2, vec!["robotStops".into()]);
        assert!(project_proactive(&none, &ev).unwrap().is_empty());
    }

    #[test]
    fn dedup_merges_sources() {
        let ev = table(&[("a", true), ("x", false), ("b", true)]);
        let s1 = EventSequence::full(0, vec!["a".into(), "x".into(), "b".into()]);
        let s2 = EventSequence::full(1, vec!["a".into(), "b".into(), "x".into()]);
        let s3 = EventSequence::full(2, vec!["b".into()]);
        let ps: Vec<_> = [s1, s2, s3].iter().map(|s| project_proactive(s, &ev).unwrap()).collect();
        let d = dedup_projections(&ps);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].sources, [0, 1]);
        assert_eq!(d[1].events, ["b"]);
        assert_eq!(d[1].id, 1);
        assert_eq!(dedup_projections(&d[1..]).len(), 1);
    }

    #[test]
    fn marked_initial_state_needs_at_least_one_event() {
        let m = parse_model(
            "model m; event a; event b;\n\
             spec K { location x initial marked; location y; trans x -> x on a; trans x -> y on b; trans y -> x on a; }",
        )
        .unwrap();
        let sup = synthesize_model(&m).unwrap();
        let seqs = enumerate_unsafe(&sup, ExtractOptions::new(1)).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].events, ["a"]);
        assert!(enumerate_unsafe(&sup, ExtractOptions::new(0)).is_err());
        let two = enumerate_unsafe(&sup, ExtractOptions::new(2)).unwrap();
        let words: Vec<_> = two.iter().map(|s| s.joined()).collect();
        assert_eq!(words, ["a", "b a"]);
    }

    #[test]
    fn terminal_event_switch_extends_by_one() {
        let m = parse_model(
            "model m; event a; event c;\n\
             spec K { location x initial; location y marked; trans x -> x on a; trans x -> y on c; }",
        )
        .unwrap();
        let sup = synthesize_model(&m).unwrap();
        let mut opts = ExtractOptions::new(2);
        assert_eq!(enumerate_unsafe(&sup, opts).unwrap().len(), 2);
        opts.count_terminal_event = false;
        let words: Vec<_> = enumerate_unsafe(&sup, opts).unwrap().iter().map(|s| s.joined()).collect();
        assert_eq!(words, ["a a c", "a c", "c"]);
        opts.max_sequences = 2;
        assert!(matches!(enumerate_unsafe(&sup, opts), Err(HazError::Resource(_))));
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let mut s = EventSequence::proactive(3, vec!["b2".into(), "r".into()]);
        s.sources = vec![4, 7];
        let seqs = vec![EventSequence::full(0, vec!["a".into()]), s];
        assert_eq!(from_jsonl(&to_jsonl(&seqs)).unwrap(), seqs);
        assert_eq!(from_csv(&to_csv(&seqs)).unwrap(), seqs);
    }

    proptest! {
        #[test]
        fn projection_is_monotone(events in proptest::collection::vec(0usize..4, 0..12), cut in 0usize..12) {
            let names = ["p", "q", "x", "y"];
            let ev = table(&[("p", true), ("q", true), ("x", false), ("y", false)]);
            let full = EventSequence::full(0, events.iter().map(|&i| names[i].to_string()).collect());
            let cut = cut.min(full.len());
            let prefix = EventSequence::full(0, full.events[..cut].to_vec());
            let pf = project_proactive(&full, &ev).unwrap();
            let pp = project_proactive(&prefix, &ev).unwrap();
            prop_assert!(pf.events.starts_with(&pp.events));
        }
    }
}
