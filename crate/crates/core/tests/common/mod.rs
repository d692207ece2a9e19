//! Naive reference implementations used as test oracles. They interpret
//! model sets directly, without the composer, the flattener or the
//! bitset-based synthesis.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use hazsynth_core::efa::{CmpOp, Efa, EfaRole, Guard};
use hazsynth_core::{ExplicitAutomaton, ModelSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OState = (Vec<String>, Vec<i64>);
pub type OTrans = (OState, String, OState);

fn eval(g: &Guard, names: &[String], vals: &[i64]) -> bool {
    match g {
        Guard::True => true,
        Guard::False => false,
        Guard::Not(a) => !eval(a, names, vals),
        Guard::And(a, b) => eval(a, names, vals) && eval(b, names, vals),
        Guard::Or(a, b) => eval(a, names, vals) || eval(b, names, vals),
        Guard::Cmp { var, op, value } => {
            let i = names.iter().position(|n| n == var).expect("guard variable declared");
            let x = vals[i];
            match op {
                CmpOp::Eq => x == *value,
                CmpOp::Ne => x != *value,
                CmpOp::Lt => x < *value,
                CmpOp::Le => x <= *value,
                CmpOp::Gt => x > *value,
                CmpOp::Ge => x >= *value,
            }
        }
    }
}

pub struct Oracle<'a> {
    pub model: &'a ModelSet,
    names: Vec<String>,
}

impl<'a> Oracle<'a> {
    pub fn new(model: &'a ModelSet) -> Self {
        Oracle {
            model,
            names: model.vars.iter().map(|v| v.name.clone()).collect(),
        }
    }

    pub fn initial(&self) -> OState {
        let locs = self
            .model
            .efas
            .iter()
            .map(|e| e.locations.iter().find(|l| l.initial).expect("initial location").name.clone())
            .collect();
        (locs, self.model.vars.iter().map(|v| v.init).collect())
    }

    pub fn marked(&self, s: &OState) -> bool {
        self.model.efas.iter().zip(&s.0).all(|(e, l)| {
            let any = e.locations.iter().any(|x| x.marked);
            !any || e.locations.iter().any(|x| &x.name == l && x.marked)
        })
    }

    /// Synchronous moves of the automata selected by `include`.
    fn moves(&self, s: &OState, include: &dyn Fn(&Efa) -> bool) -> Vec<(String, OState)> {
        let efas: Vec<(usize, &Efa)> = self.model.efas.iter().enumerate().filter(|(_, e)| include(e)).collect();
        let mut events: BTreeSet<String> = BTreeSet::new();
        for (_, e) in &efas {
            for ev in &e.alphabet {
                events.insert(ev.name.clone());
            }
        }
        let mut out = Vec::new();
        for ev in events {
            // partial products: (locations, assignments)
            let mut partial: Vec<(Vec<String>, BTreeMap<String, i64>)> = vec![(s.0.clone(), BTreeMap::new())];
            for (i, e) in &efas {
                if !e.alphabet.iter().any(|a| a.name == ev) {
                    continue;
                }
                let mut next = Vec::new();
                for (locs, acts) in &partial {
                    for t in e.transitions.iter().filter(|t| t.source == s.0[*i] && t.event == ev) {
                        if !eval(&t.guard, &self.names, &s.1) {
                            continue;
                        }
                        let mut acts = acts.clone();
                        let mut ok = true;
                        for a in &t.action.0 {
                            match acts.get(&a.var) {
                                Some(v) if *v != a.value => ok = false,
                                _ => {
                                    acts.insert(a.var.clone(), a.value);
                                }
                            }
                        }
                        if ok {
                            let mut locs = locs.clone();
                            locs[*i] = t.target.clone();
                            next.push((locs, acts));
                        }
                    }
                }
                partial = next;
            }
            for (locs, acts) in partial {
                let vals = self
                    .names
                    .iter()
                    .zip(&s.1)
                    .map(|(n, v)| *acts.get(n).unwrap_or(v))
                    .collect();
                out.push((ev.clone(), (locs, vals)));
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn step(&self, s: &OState) -> Vec<(String, OState)> {
        self.moves(s, &|_| true)
    }

    pub fn reachable(&self) -> (BTreeSet<OState>, BTreeSet<OTrans>) {
        let mut seen = BTreeSet::new();
        let mut trans = BTreeSet::new();
        let init = self.initial();
        seen.insert(init.clone());
        let mut q = VecDeque::from([init]);
        while let Some(s) = q.pop_front() {
            for (e, t) in self.step(&s) {
                trans.insert((s.clone(), e, t.clone()));
                if seen.insert(t.clone()) {
                    q.push_back(t);
                }
            }
        }
        (seen, trans)
    }

    /// The plant can fire an uncontrollable event the closed loop cannot.
    pub fn violates(&self, s: &OState) -> bool {
        let plant = self.moves(s, &|e| e.role == EfaRole::Plant);
        let full = self.step(s);
        plant
            .iter()
            .any(|(u, _)| self.uncontrollable(u) && !full.iter().any(|(e, _)| e == u))
    }

    pub fn uncontrollable(&self, ev: &str) -> bool {
        self.model.event_table().iter().any(|e| e.name == ev && !e.controllable)
    }

    /// Maximal controllable non-blocking sub-behaviour: states and transitions.
    pub fn synthesize(&self) -> (BTreeSet<OState>, BTreeSet<OTrans>) {
        let (states, trans) = self.reachable();
        let mut alive: BTreeSet<OState> = states.iter().filter(|s| !self.violates(s)).cloned().collect();
        loop {
            let before = alive.clone();
            // coreachability
            let mut co: BTreeSet<OState> = alive.iter().filter(|s| self.marked(s)).cloned().collect();
            loop {
                let add: Vec<OState> = trans
                    .iter()
                    .filter(|(s, _, t)| alive.contains(s) && co.contains(t) && !co.contains(s))
                    .map(|(s, _, _)| s.clone())
                    .collect();
                if add.is_empty() {
                    break;
                }
                co.extend(add);
            }
            alive = co;
            // controllability
            loop {
                let drop: Vec<OState> = trans
                    .iter()
                    .filter(|(s, e, t)| alive.contains(s) && !alive.contains(t) && self.uncontrollable(e))
                    .map(|(s, _, _)| s.clone())
                    .collect();
                if drop.is_empty() {
                    break;
                }
                for s in drop {
                    alive.remove(&s);
                }
            }
            // reachability
            let init = self.initial();
            let mut reach = BTreeSet::new();
            if alive.contains(&init) {
                reach.insert(init.clone());
                let mut q = VecDeque::from([init]);
                while let Some(s) = q.pop_front() {
                    for (_, _, t) in trans.iter().filter(|(src, _, _)| *src == s) {
                        if alive.contains(t) && reach.insert(t.clone()) {
                            q.push_back(t.clone());
                        }
                    }
                }
            }
            alive = reach;
            if alive == before {
                break;
            }
        }
        let kept = trans
            .into_iter()
            .filter(|(s, _, t)| alive.contains(s) && alive.contains(t))
            .collect();
        (alive, kept)
    }
}

/// Label-level view of an explicit automaton, comparable with oracle output.
pub fn labelled(a: &ExplicitAutomaton, model: &ModelSet) -> (BTreeSet<OState>, BTreeSet<OTrans>) {
    let order: Vec<usize> = model
        .vars
        .iter()
        .map(|v| a.var_names.iter().position(|n| n == &v.name).expect("variable present"))
        .collect();
    let st = |i: usize| -> OState {
        let s = &a.states[i];
        (s.location.clone(), order.iter().map(|&j| s.values[j]).collect())
    };
    let states = (0..a.num_states()).map(st).collect();
    let trans = a
        .transitions
        .iter()
        .map(|t| (st(t.source), a.event_name(t.event).to_string(), st(t.target)))
        .collect();
    (states, trans)
}

/// Words reaching a marked state for the first time after at least one
/// step. `horizon` bounds the word length; with `count_terminal == false`
/// the hazard event may be one step beyond it.
pub fn first_hit_words(
    marked: &dyn Fn(&OState) -> bool,
    init: &OState,
    trans: &BTreeSet<OTrans>,
    horizon: usize,
    count_terminal: bool,
) -> BTreeSet<Vec<String>> {
    let mut out = BTreeSet::new();
    let mut frontier: Vec<(OState, Vec<String>)> = vec![(init.clone(), Vec::new())];
    let limit = if count_terminal { horizon } else { horizon + 1 };
    for depth in 1..=limit {
        let mut next = Vec::new();
        for (s, w) in &frontier {
            for (src, e, t) in trans.iter() {
                if src != s {
                    continue;
                }
                let mut w2 = w.clone();
                w2.push(e.clone());
                if marked(t) {
                    out.insert(w2);
                } else if depth < limit {
                    next.push((t.clone(), w2));
                }
            }
        }
        frontier = next;
    }
    out
}

/// A random DSL model: ≤3 automata (the last one a spec), ≤4 locations
/// each, ≤2 variables with domains of at most 3 values.
pub fn random_model_source(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = ["a", "b", "c", "d"];
    let n_events = rng.gen_range(2..=4);
    let events: Vec<(&str, bool)> = all[..n_events].iter().map(|&e| (e, rng.gen_bool(0.3))).collect();
    let n_vars = rng.gen_range(0..=2);
    let vars: Vec<(&str, i64)> = ["x", "y"][..n_vars].iter().map(|&v| (v, rng.gen_range(1..=2))).collect();

    let mut src = format!("model rnd{seed};\n");
    for (e, unc) in &events {
        src.push_str(&format!("event {e}{};\n", if *unc { " uncontrollable" } else { "" }));
    }
    for (v, hi) in &vars {
        src.push_str(&format!("var {v} : 0..{hi} init {};\n", rng.gen_range(0..=*hi)));
    }

    let n_efa = rng.gen_range(1..=3);
    for k in 0..n_efa {
        let kw = if k + 1 == n_efa { "spec" } else { "efa" };
        src.push_str(&format!("{kw} A{k} {{\n"));
        if rng.gen_bool(0.2) {
            let (e, unc) = events[rng.gen_range(0..events.len())];
            src.push_str(&format!("    event {e}{};\n", if unc { " uncontrollable" } else { "" }));
        }
        let n_loc = rng.gen_range(1..=4);
        for l in 0..n_loc {
            let mut line = format!("    location l{l}");
            if l == 0 {
                line.push_str(" initial");
            }
            if rng.gen_bool(0.3) {
                line.push_str(" marked");
            }
            src.push_str(&line);
            src.push_str(";\n");
        }
        for _ in 0..rng.gen_range(0..=6) {
            let (e, _) = events[rng.gen_range(0..events.len())];
            let mut line = format!(
                "    trans l{} -> l{} on {e}",
                rng.gen_range(0..n_loc),
                rng.gen_range(0..n_loc)
            );
            if !vars.is_empty() && rng.gen_bool(0.4) {
                let cmp = |rng: &mut ChaCha8Rng| {
                    let (v, hi) = vars[rng.gen_range(0..vars.len())];
                    let op = ["==", "!=", "<", ">="][rng.gen_range(0..4)];
                    format!("{v} {op} {}", rng.gen_range(0..=hi))
                };
                let g = if rng.gen_bool(0.3) {
                    format!("{} && !({})", cmp(&mut rng), cmp(&mut rng))
                } else {
                    cmp(&mut rng)
                };
                line.push_str(&format!(" when {g}"));
            }
            if !vars.is_empty() && rng.gen_bool(0.4) {
                let n = rng.gen_range(1..=vars.len());
                let acts: Vec<String> = vars[..n]
                    .iter()
                    .map(|(v, hi)| format!("{v} := {}", rng.gen_range(0..=*hi)))
                    .collect();
                line.push_str(&format!(" do {}", acts.join(", ")));
            }
            src.push_str(&line);
            src.push_str(";\n");
        }
        src.push_str("}\n");
    }
    src
}
