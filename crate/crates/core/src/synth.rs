//! Minimally restrictive non-blocking supervisor synthesis over explicit
//! state graphs.
//!
//! Marked states are read as hazards, so the retained sub-automaton is the
//! set of all behaviours that can still reach a hazard.

use std::collections::{HashMap, VecDeque};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::compose::{compile_action, flatten_with, CompiledGuard, ExplicitAutomaton, ExplicitTransition, FlattenOptions};
use crate::dsl::ModelSet;
use crate::efa::{Efa, EfaRole};
use crate::error::{HazError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Supervisor {
    /// Retained sub-automaton, renumbered breadth-first.
    pub automaton: ExplicitAutomaton,
    /// For each retained state, its index in the unrestricted automaton.
    pub retained: Vec<usize>,
    /// Indices into the unrestricted automaton.
    pub removed_states: Vec<usize>,
    /// Transitions of the unrestricted automaton that the supervisor disables.
    pub removed_transitions: Vec<ExplicitTransition>,
    /// No behaviour reaches a marked state.
    pub empty: bool,
    pub unrestricted_states: usize,
    pub unrestricted_transitions: usize,
}

impl Supervisor {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("supervisor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// States of `surviving` from which a marked state of `surviving` is
/// reachable using only transitions inside `surviving`.
pub fn coreachable_set(a: &ExplicitAutomaton, surviving: &FixedBitSet) -> FixedBitSet {
    let preds = a.predecessors();
    let mut co = FixedBitSet::with_capacity(a.num_states());
    let mut work: Vec<usize> = a.marked().filter(|&s| surviving.contains(s)).collect();
    for &s in &work {
        co.insert(s);
    }
    while let Some(s) = work.pop() {
        for &p in &preds[s] {
            if surviving.contains(p) && !co.contains(p) {
                co.insert(p);
                work.push(p);
            }
        }
    }
    co
}

fn reachable_within(a: &ExplicitAutomaton, succ: &[Vec<(usize, usize)>], alive: &FixedBitSet) -> FixedBitSet {
    let mut seen = FixedBitSet::with_capacity(a.num_states());
    let mut work: Vec<usize> = a.initial.iter().copied().filter(|&s| alive.contains(s)).collect();
    for &s in &work {
        seen.insert(s);
    }
    while let Some(s) = work.pop() {
        for &(_, t) in &succ[s] {
            if alive.contains(t) && !seen.contains(t) {
                seen.insert(t);
                work.push(t);
            }
        }
    }
    seen
}

fn full_set(n: usize) -> FixedBitSet {
    let mut s = FixedBitSet::with_capacity(n);
    s.insert_range(..);
    s
}

/// Fixpoint of coreachability, controllability and reachability pruning.
/// `bad` lists states that must go regardless (uncontrollable plant moves
/// the specification blocks).
pub fn synthesize_explicit(a: &ExplicitAutomaton, bad: &FixedBitSet) -> Supervisor {
    let n = a.num_states();
    let succ = a.successors();
    let preds = a.predecessors();
    let mut alive = full_set(n);
    alive.difference_with(bad);

    loop {
        let before = alive.count_ones(..);
        alive = coreachable_set(a, &alive);

        // a state with an uncontrollable move into a dead state cannot be kept
        let mut work: Vec<usize> = (0..n).filter(|s| !alive.contains(*s)).collect();
        while let Some(dead) = work.pop() {
            for &p in &preds[dead] {
                if alive.contains(p)
                    && succ[p]
                        .iter()
                        .any(|&(e, t)| t == dead && !a.events[e].controllable)
                {
                    alive.set(p, false);
                    work.push(p);
                }
            }
        }

        alive = reachable_within(a, &succ, &alive);
        if alive.count_ones(..) == before {
            break;
        }
    }

    build_supervisor(a, &alive, &succ)
}

fn build_supervisor(a: &ExplicitAutomaton, alive: &FixedBitSet, succ: &[Vec<(usize, usize)>]) -> Supervisor {
    let mut new_id: HashMap<usize, usize> = HashMap::new();
    let mut retained = Vec::new();
    let mut queue = VecDeque::new();
    for &s in a.initial.iter().filter(|&&s| alive.contains(s)) {
        if new_id.insert(s, retained.len()).is_none() {
            retained.push(s);
            queue.push_back(s);
        }
    }
    let mut transitions = Vec::new();
    while let Some(s) = queue.pop_front() {
        for &(e, t) in &succ[s] {
            if !alive.contains(t) {
                continue;
            }
            let id = *new_id.entry(t).or_insert_with(|| {
                retained.push(t);
                queue.push_back(t);
                retained.len() - 1
            });
            transitions.push(ExplicitTransition {
                source: new_id[&s],
                event: e,
                target: id,
            });
        }
    }

    let automaton = ExplicitAutomaton {
        name: format!("sup({})", a.name),
        components: a.components.clone(),
        var_names: a.var_names.clone(),
        events: a.events.clone(),
        states: retained.iter().map(|&s| a.states[s].clone()).collect(),
        initial: a.initial.iter().filter_map(|s| new_id.get(s).copied()).collect(),
        transitions,
    };
    Supervisor {
        empty: automaton.states.is_empty(),
        retained,
        removed_states: (0..a.num_states()).filter(|s| !alive.contains(*s)).collect(),
        removed_transitions: a
            .transitions
            .iter()
            .filter(|t| !(alive.contains(t.source) && alive.contains(t.target)))
            .copied()
            .collect(),
        unrestricted_states: a.num_states(),
        unrestricted_transitions: a.num_transitions(),
        automaton,
    }
}

/// Synthesizes against the model's own plant/spec split. Every automaton
/// declared with `spec` acts as specification; the rest form the plant.
pub fn synthesize_model(model: &ModelSet) -> Result<Supervisor> {
    synthesize_model_with(model, FlattenOptions::default())
}

pub fn synthesize_model_with(model: &ModelSet, opts: FlattenOptions) -> Result<Supervisor> {
    if model.specs().next().is_none() {
        return Err(HazError::Config("model declares no specification automaton".into()));
    }
    let product = flatten_with(model, opts)?;
    let bad = uncontrollable_violations(model, &product)?;
    Ok(synthesize_explicit(&product, &bad))
}

/// Synthesizes a supervisor for `plant` (all automata treated as plant)
/// under specification `spec`.
pub fn synthesize(plant: &ModelSet, spec: &Efa) -> Result<Supervisor> {
    let mut model = plant.clone();
    for e in &mut model.efas {
        e.role = EfaRole::Plant;
    }
    let mut spec = spec.clone();
    spec.role = EfaRole::Spec;
    for ev in &spec.alphabet {
        if let Some(p) = model.event_table().into_iter().find(|p| p.name == ev.name) {
            if p.controllable != ev.controllable || p.proactive != ev.proactive {
                return Err(HazError::Config(format!(
                    "alphabet mismatch: event `{}` declared differently by plant and specification",
                    ev.name
                )));
            }
        }
    }
    model.efas.push(spec);
    synthesize_model(&model)
}

/// Product states where the plant alone can fire an uncontrollable event
/// but the closed loop cannot.
fn uncontrollable_violations(model: &ModelSet, product: &ExplicitAutomaton) -> Result<FixedBitSet> {
    let mut bad = FixedBitSet::with_capacity(product.num_states());
    let plant_ids: Vec<usize> = (0..model.efas.len())
        .filter(|&i| model.efas[i].role == EfaRole::Plant)
        .collect();
    let unc: Vec<usize> = product
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.controllable)
        .filter(|(_, e)| plant_ids.iter().any(|&i| model.efas[i].has_event(&e.name)))
        .map(|(i, _)| i)
        .collect();
    if unc.is_empty() || model.efas.len() != product.components.len() {
        return Ok(bad);
    }

    let index: HashMap<&str, usize> = model.vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    // compiled[(efa, location, event)] -> guarded moves
    let mut compiled: HashMap<(usize, &str, &str), Vec<Move>> = HashMap::new();
    for &i in &plant_ids {
        for t in &model.efas[i].transitions {
            compiled
                .entry((i, t.source.as_str(), t.event.as_str()))
                .or_default()
                .push((CompiledGuard::compile(&t.guard, &index)?, compile_action(&t.action, &index)?));
        }
    }

    let succ = product.successors();
    for (s, state) in product.states.iter().enumerate() {
        for &u in &unc {
            let name = product.events[u].name.as_str();
            if succ[s].iter().any(|&(e, _)| e == u) {
                continue;
            }
            let mut options: Vec<Vec<&Move>> = Vec::new();
            let mut blocked = false;
            for &i in plant_ids.iter().filter(|&&i| model.efas[i].has_event(name)) {
                let moves: Vec<&Move> = compiled
                    .get(&(i, state.location[i].as_str(), name))
                    .map(|v| v.iter().filter(|(g, _)| g.eval(&state.values)).collect())
                    .unwrap_or_default();
                if moves.is_empty() {
                    blocked = true;
                    break;
                }
                options.push(moves);
            }
            if !blocked && has_consistent_combo(&options, &mut Vec::new()) {
                bad.insert(s);
            }
        }
    }
    Ok(bad)
}

type Move = (CompiledGuard, Vec<(usize, i64)>);

fn has_consistent_combo(options: &[Vec<&Move>], acc: &mut Vec<(usize, i64)>) -> bool {
    let Some((first, rest)) = options.split_first() else { return true };
    for (_, action) in first {
        let consistent = action
            .iter()
            .all(|(i, v)| acc.iter().all(|(j, w)| i != j || v == w));
        if consistent {
            let len = acc.len();
            acc.extend(action.iter().copied());
            let ok = has_consistent_combo(rest, acc);
            acc.truncate(len);
            if ok {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonblockingReport {
    pub nonblocking: bool,
    pub blocking_state: Option<usize>,
    /// Event names along a shortest path from an initial state.
    pub path: Vec<String>,
}

/// Checks that every reachable state can reach a marked state. On failure
/// reports the first blocking state in breadth-first order with a shortest
/// path to it (ties broken towards lower state indices).
pub fn check_nonblocking(a: &ExplicitAutomaton) -> NonblockingReport {
    let co = coreachable_set(a, &full_set(a.num_states()));
    let succ = a.successors();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; a.num_states()];
    let mut seen = FixedBitSet::with_capacity(a.num_states());
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut inits = a.initial.clone();
    inits.sort_unstable();
    for s in inits {
        if !seen.contains(s) {
            seen.insert(s);
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        if !co.contains(s) {
            let mut path = Vec::new();
            let mut cur = s;
            while let Some((p, e)) = parent[cur] {
                path.push(a.event_name(e).to_string());
                cur = p;
            }
            path.reverse();
            return NonblockingReport {
                nonblocking: false,
                blocking_state: Some(s),
                path,
            };
        }
        let mut next: Vec<(usize, usize)> = succ[s].iter().map(|&(e, t)| (t, e)).collect();
        next.sort_unstable();
        for (t, e) in next {
            if !seen.contains(t) {
                seen.insert(t);
                parent[t] = Some((s, e));
                queue.push_back(t);
            }
        }
    }
    NonblockingReport {
        nonblocking: true,
        blocking_state: None,
        path: Vec::new(),
    }
}
