//! Synchronous composition of EFAs and flattening to an explicit state graph.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsl::ModelSet;
use crate::efa::{ActionSet, CmpOp, Efa, EfaRole, EventDecl, Guard, Location, Transition, VarDecl};
use crate::error::{HazError, Result};

pub const DEFAULT_STATE_CAP: usize = 10_000_000;

/// Guard-domain enumeration budget for the unsatisfiable-combination check.
const SAT_ENUM_LIMIT: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitState {
    pub location: Vec<String>,
    pub values: Vec<i64>,
    pub marked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExplicitTransition {
    pub source: usize,
    pub event: usize,
    pub target: usize,
}

/// Reachable state graph over locations × valuations, numbered in
/// breadth-first discovery order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitAutomaton {
    pub name: String,
    /// Automaton names, one per entry of each state's location vector.
    pub components: Vec<String>,
    pub var_names: Vec<String>,
    /// Sorted by name; transitions refer to events by index.
    pub events: Vec<EventDecl>,
    pub states: Vec<ExplicitState>,
    pub transitions: Vec<ExplicitTransition>,
    pub initial: Vec<usize>,
}

impl ExplicitAutomaton {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn marked(&self) -> impl Iterator<Item = usize> + '_ {
        self.states.iter().enumerate().filter(|(_, s)| s.marked).map(|(i, _)| i)
    }

    pub fn event_index(&self, name: &str) -> Option<usize> {
        self.events.binary_search_by(|e| e.name.as_str().cmp(name)).ok()
    }

    pub fn event_name(&self, idx: usize) -> &str {
        &self.events[idx].name
    }

    /// Outgoing `(event, target)` lists per state, in canonical order.
    pub fn successors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.states.len()];
        for t in &self.transitions {
            out[t.source].push((t.event, t.target));
        }
        out
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.states.len()];
        for t in &self.transitions {
            out[t.target].push(t.source);
        }
        out
    }

    /// Finds a state by its location vector and values (values in
    /// `var_names` order).
    pub fn find_state(&self, location: &[&str], values: &[i64]) -> Option<usize> {
        self.states
            .iter()
            .position(|s| s.values == values && s.location.iter().map(String::as_str).eq(location.iter().copied()))
    }

    pub fn state_label(&self, idx: usize) -> String {
        let s = &self.states[idx];
        let mut out = format!("<{}", s.location.join(","));
        if !s.values.is_empty() {
            out.push_str(" |");
            for (n, v) in self.var_names.iter().zip(&s.values) {
                let _ = write!(out, " {n}={v}");
            }
        }
        out.push('>');
        out
    }

    /// Replays `events` from every initial state; returns the reachable end
    /// states (empty when the word is not in the language).
    pub fn run_word(&self, events: &[&str]) -> Vec<usize> {
        let succ = self.successors();
        let mut cur: Vec<usize> = self.initial.clone();
        for name in events {
            let Some(e) = self.event_index(name) else { return Vec::new() };
            let mut next: Vec<usize> = cur
                .iter()
                .flat_map(|&s| succ[s].iter().filter(|(ev, _)| *ev == e).map(|(_, t)| *t))
                .collect();
            next.sort_unstable();
            next.dedup();
            cur = next;
        }
        cur
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("explicit automaton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph G {\n  rankdir=LR;\n");
        for (i, s) in self.states.iter().enumerate() {
            let shape = if s.marked { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  s{i} [shape={shape}, label=\"{}\"];", self.state_label(i));
        }
        for &i in &self.initial {
            let _ = writeln!(out, "  init{i} [shape=point];\n  init{i} -> s{i};");
        }
        for t in &self.transitions {
            let _ = writeln!(out, "  s{} -> s{} [label=\"{}\"];", t.source, t.target, self.event_name(t.event));
        }
        out.push_str("}\n");
        out
    }
}

/// Guard with variables resolved to indices into a value vector.
#[derive(Debug, Clone)]
pub(crate) enum CompiledGuard {
    Const(bool),
    Cmp(usize, CmpOp, i64),
    Not(Box<CompiledGuard>),
    And(Box<CompiledGuard>, Box<CompiledGuard>),
    Or(Box<CompiledGuard>, Box<CompiledGuard>),
}

impl CompiledGuard {
    pub(crate) fn compile(g: &Guard, index: &HashMap<&str, usize>) -> Result<CompiledGuard> {
        Ok(match g {
            Guard::True => CompiledGuard::Const(true),
            Guard::False => CompiledGuard::Const(false),
            Guard::Cmp { var, op, value } => {
                let i = *index
                    .get(var.as_str())
                    .ok_or_else(|| HazError::Config(format!("guard references undeclared variable `{var}`")))?;
                CompiledGuard::Cmp(i, *op, *value)
            }
            Guard::Not(a) => CompiledGuard::Not(Box::new(Self::compile(a, index)?)),
            Guard::And(a, b) => CompiledGuard::And(Box::new(Self::compile(a, index)?), Box::new(Self::compile(b, index)?)),
            Guard::Or(a, b) => CompiledGuard::Or(Box::new(Self::compile(a, index)?), Box::new(Self::compile(b, index)?)),
        })
    }

    pub(crate) fn eval(&self, values: &[i64]) -> bool {
        match self {
            CompiledGuard::Const(b) => *b,
            CompiledGuard::Cmp(i, op, v) => op.apply(values[*i], *v),
            CompiledGuard::Not(a) => !a.eval(values),
            CompiledGuard::And(a, b) => a.eval(values) && b.eval(values),
            CompiledGuard::Or(a, b) => a.eval(values) || b.eval(values),
        }
    }
}

pub(crate) fn compile_action(a: &ActionSet, index: &HashMap<&str, usize>) -> Result<Vec<(usize, i64)>> {
    a.0.iter()
        .map(|asg| {
            index
                .get(asg.var.as_str())
                .map(|i| (*i, asg.value))
                .ok_or_else(|| HazError::Config(format!("action assigns undeclared variable `{}`", asg.var)))
        })
        .collect()
}

fn var_index(vars: &[VarDecl]) -> HashMap<&str, usize> {
    vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect()
}

fn ensure_valid(model: &ModelSet) -> Result<()> {
    let diags = model.validate();
    if diags.is_empty() {
        Ok(())
    } else {
        Err(HazError::Validation(diags))
    }
}

/// Whether some valuation within the declared domains satisfies `g`.
/// Falls back to `true` when the domain product is too large to enumerate.
fn satisfiable(g: &Guard, vars: &[VarDecl]) -> bool {
    if g.is_true() {
        return true;
    }
    let used: Vec<&VarDecl> = g
        .variables()
        .into_iter()
        .filter_map(|n| vars.iter().find(|v| v.name == n))
        .collect();
    let total = used.iter().try_fold(1u64, |acc, v| acc.checked_mul(v.domain_size()));
    match total {
        Some(t) if t <= SAT_ENUM_LIMIT => {}
        _ => return true,
    }
    let mut current: Vec<i64> = used.iter().map(|v| v.lo).collect();
    loop {
        let lookup = |name: &str| used.iter().position(|v| v.name == name).map(|i| current[i]);
        if g.eval_with(&lookup).unwrap_or(true) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == used.len() {
                return false;
            }
            if current[k] < used[k].hi {
                current[k] += 1;
                break;
            }
            current[k] = used[k].lo;
            k += 1;
        }
    }
}

/// N-ary synchronous product. Shared events fire jointly with conjoined
/// guards and merged actions; combinations with conflicting assignments or
/// unsatisfiable guards are dropped. Only location tuples reachable in the
/// guard-free location graph are emitted. The result holds one EFA whose
/// location `parts` name the constituent locations.
pub fn compose(model: &ModelSet) -> Result<ModelSet> {
    compose_capped(model, DEFAULT_STATE_CAP)
}

pub fn compose_capped(model: &ModelSet, cap: usize) -> Result<ModelSet> {
    ensure_valid(model)?;
    let efas = &model.efas;
    let events = model.event_table();

    let product_name = efas.iter().map(|e| e.name.as_str()).collect::<Vec<_>>().join("||");
    let mut product = Efa::new(product_name);
    if !efas.is_empty() && efas.iter().all(|e| e.role == EfaRole::Spec) {
        product.role = EfaRole::Spec;
    }
    product.alphabet = events
        .iter()
        .filter(|e| efas.iter().any(|a| a.has_event(&e.name)))
        .cloned()
        .collect();

    let loc_ids: Vec<HashMap<&str, usize>> = efas
        .iter()
        .map(|e| e.locations.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect())
        .collect();

    // outgoing[efa][loc] -> transitions grouped by event name
    let outgoing: Vec<Vec<BTreeMap<&str, Vec<&Transition>>>> = efas
        .iter()
        .zip(&loc_ids)
        .map(|(efa, ids)| {
            let mut per = vec![BTreeMap::new(); efa.locations.len()];
            for t in &efa.transitions {
                per[ids[t.source.as_str()]].entry(t.event.as_str()).or_insert_with(Vec::new).push(t);
            }
            per
        })
        .collect();

    let mut initial_tuples: Vec<Vec<usize>> = vec![Vec::new()];
    for efa in efas {
        let inits: Vec<usize> = efa
            .locations
            .iter()
            .enumerate()
            .filter(|(_, l)| l.initial)
            .map(|(i, _)| i)
            .collect();
        initial_tuples = initial_tuples
            .into_iter()
            .flat_map(|prefix| {
                inits.iter().map(move |&i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }

    let tuple_name = |tuple: &[usize]| -> Vec<String> {
        tuple
            .iter()
            .zip(efas)
            .map(|(&l, e)| e.locations[l].name.clone())
            .collect()
    };

    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for t in initial_tuples {
        if !seen.contains_key(&t) {
            seen.insert(t.clone(), order.len());
            order.push(t.clone());
            queue.push_back(t);
        }
    }

    let mut transitions = Vec::new();
    while let Some(tuple) = queue.pop_front() {
        let src = tuple_name(&tuple).join(".");
        for ev in &product.alphabet {
            let participants: Vec<usize> = (0..efas.len()).filter(|&i| efas[i].has_event(&ev.name)).collect();
            let mut choices: Vec<Vec<&Transition>> = Vec::with_capacity(participants.len());
            for &i in &participants {
                match outgoing[i][tuple[i]].get(ev.name.as_str()) {
                    Some(ts) => choices.push(ts.clone()),
                    None => {
                        choices.clear();
                        break;
                    }
                }
            }
            if choices.len() != participants.len() || choices.is_empty() {
                continue;
            }
            let mut idx = vec![0usize; choices.len()];
            'combos: loop {
                let picked: Vec<&Transition> = idx.iter().zip(&choices).map(|(&k, c)| c[k]).collect();
                let mut guard = Guard::True;
                let mut action = ActionSet::empty();
                let mut ok = true;
                for t in &picked {
                    guard = guard.and(t.guard.clone());
                    match action.merge(&t.action) {
                        Some(a) => action = a,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok && satisfiable(&guard, &model.vars) {
                    let mut next = tuple.clone();
                    for (&i, t) in participants.iter().zip(&picked) {
                        next[i] = loc_ids[i][t.target.as_str()];
                    }
                    if !seen.contains_key(&next) {
                        if order.len() >= cap {
                            return Err(HazError::Resource(format!("product location count exceeds cap {cap}")));
                        }
                        seen.insert(next.clone(), order.len());
                        order.push(next.clone());
                        queue.push_back(next.clone());
                    }
                    transitions.push(Transition {
                        source: src.clone(),
                        event: ev.name.clone(),
                        guard,
                        action,
                        target: tuple_name(&next).join("."),
                    });
                }
                // odometer over participating transition choices
                let mut k = idx.len();
                loop {
                    if k == 0 {
                        break 'combos;
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] < choices[k].len() {
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
    }

    let mark_all = efas.iter().all(|e| !e.has_marking());
    product.locations = order
        .iter()
        .map(|tuple| {
            let parts = tuple_name(tuple);
            let marked = mark_all || parts.iter().zip(efas).all(|(p, e)| e.is_effectively_marked(p));
            Location {
                name: parts.join("."),
                initial: efas.iter().zip(tuple).all(|(e, &l)| e.locations[l].initial),
                marked,
                parts,
            }
        })
        .collect();
    product.transitions = transitions;

    Ok(ModelSet {
        name: model.name.clone(),
        description: model.description.clone(),
        events,
        vars: model.vars.clone(),
        efas: vec![product],
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FlattenOptions {
    pub state_cap: usize,
}

impl Default for FlattenOptions {
    fn default() -> Self {
        FlattenOptions {
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

/// Flattens a model to its reachable explicit state graph. Models with more
/// than one automaton are composed first.
pub fn flatten(model: &ModelSet) -> Result<ExplicitAutomaton> {
    flatten_with(model, FlattenOptions::default())
}

pub fn flatten_with(model: &ModelSet, opts: FlattenOptions) -> Result<ExplicitAutomaton> {
    let composed;
    let (single, components): (&ModelSet, Vec<String>) = if model.efas.len() == 1 {
        ensure_valid(model)?;
        (model, vec![model.efas[0].name.clone()])
    } else {
        composed = compose_capped(model, opts.state_cap)?;
        (&composed, model.efas.iter().map(|e| e.name.clone()).collect())
    };
    let efa = single
        .efas
        .first()
        .ok_or_else(|| HazError::Config("model contains no automata".into()))?;
    let vars = &single.vars;
    let index = var_index(vars);

    let events: Vec<EventDecl> = single.event_table();
    let event_ids: HashMap<&str, usize> = events.iter().enumerate().map(|(i, e)| (e.name.as_str(), i)).collect();
    let loc_ids: HashMap<&str, usize> = efa.locations.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();

    struct Compiled {
        event: usize,
        guard: CompiledGuard,
        action: Vec<(usize, i64)>,
        target: usize,
        target_name: String,
    }
    let mut outgoing: Vec<Vec<Compiled>> = (0..efa.locations.len()).map(|_| Vec::new()).collect();
    for t in &efa.transitions {
        outgoing[loc_ids[t.source.as_str()]].push(Compiled {
            event: event_ids[t.event.as_str()],
            guard: CompiledGuard::compile(&t.guard, &index)?,
            action: compile_action(&t.action, &index)?,
            target: loc_ids[t.target.as_str()],
            target_name: t.target.clone(),
        });
    }
    for list in &mut outgoing {
        list.sort_by(|a, b| (a.event, &a.target_name).cmp(&(b.event, &b.target_name)));
    }

    let init_vals: Vec<i64> = vars.iter().map(|v| v.init).collect();
    let mut seen: HashMap<(usize, Vec<i64>), usize> = HashMap::new();
    let mut states: Vec<(usize, Vec<i64>)> = Vec::new();
    let mut queue = VecDeque::new();
    let mut initial = Vec::new();
    for (i, _) in efa.locations.iter().enumerate().filter(|(_, l)| l.initial) {
        let key = (i, init_vals.clone());
        if !seen.contains_key(&key) {
            seen.insert(key.clone(), states.len());
            initial.push(states.len());
            states.push(key);
            queue.push_back(states.len() - 1);
        }
    }

    let mut transitions = Vec::new();
    while let Some(s) = queue.pop_front() {
        let (loc, vals) = states[s].clone();
        for t in &outgoing[loc] {
            if !t.guard.eval(&vals) {
                continue;
            }
            let mut next = vals.clone();
            for &(i, v) in &t.action {
                next[i] = v;
            }
            let key = (t.target, next);
            let target = match seen.get(&key) {
                Some(&id) => id,
                None => {
                    if states.len() >= opts.state_cap {
                        return Err(HazError::Resource(format!(
                            "flattened state count exceeds cap {}",
                            opts.state_cap
                        )));
                    }
                    let id = states.len();
                    seen.insert(key.clone(), id);
                    states.push(key);
                    queue.push_back(id);
                    id
                }
            };
            transitions.push(ExplicitTransition {
                source: s,
                event: t.event,
                target,
            });
        }
    }

    // the product already applied the per-component rule, so an empty
    // marked set there means nothing marked is reachable
    let marked_all = model.efas.len() == 1 && !efa.has_marking();
    Ok(ExplicitAutomaton {
        name: efa.name.clone(),
        components,
        var_names: vars.iter().map(|v| v.name.clone()).collect(),
        events,
        states: states
            .into_iter()
            .map(|(l, values)| {
                let loc = &efa.locations[l];
                ExplicitState {
                    location: loc.vector(),
                    values,
                    marked: marked_all || loc.marked,
                }
            })
            .collect(),
        transitions,
        initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use crate::efa::Transition;

    fn intro() -> ModelSet {
        parse_model(include_str!("../models/intro.des")).unwrap()
    }

    #[test]
    fn flatten_g_alone() {
        let mut m = intro();
        m.efas.truncate(1);
        let a = flatten(&m).unwrap();
        assert_eq!((a.num_states(), a.num_transitions()), (3, 4));
    }

    #[test]
    fn intro_product_states() {
        let a = flatten(&intro()).unwrap();
        assert_eq!(a.num_states(), 5);
        assert_eq!(a.num_transitions(), 6);
        for loc in [["i", "x"], ["k", "x"], ["j", "y"], ["k", "y"], ["i", "y"]] {
            assert!(a.find_state(&loc, &[]).is_some(), "{loc:?} missing");
        }
        let marked: Vec<_> = a.marked().map(|s| a.states[s].location.clone()).collect();
        assert_eq!(marked, vec![vec!["j".to_string(), "y".to_string()]]);
    }

    #[test]
    fn single_efa_compose_is_identity_up_to_naming() {
        let mut m = intro();
        m.efas.truncate(1);
        let c = compose(&m).unwrap();
        assert_eq!(flatten(&c).unwrap().num_transitions(), flatten(&m).unwrap().num_transitions());
        assert_eq!(c.efas[0].transitions.len(), 4);
    }

    #[test]
    fn exclusive_guards_never_synchronise() {
        let mut m = ModelSet::new("x");
        m.vars.push(VarDecl::new("P", 0, 1, 0));
        m.events.push(EventDecl::new("e"));
        for (name, p) in [("A", 0), ("B", 1)] {
            m.efas.push(
                Efa::new(name)
                    .with_event(EventDecl::new("e"))
                    .with_location(Location::new("q").initial())
                    .with_transition(Transition::new("q", "e", "q").when(Guard::cmp("P", CmpOp::Eq, p))),
            );
        }
        let c = compose(&m).unwrap();
        assert!(c.efas[0].transitions.is_empty());
        assert_eq!(flatten(&m).unwrap().num_transitions(), 0);
    }

    #[test]
    fn conflicting_actions_dropped() {
        let mut m = ModelSet::new("x");
        m.vars.push(VarDecl::new("P", 0, 2, 0));
        for (name, p) in [("A", 1), ("B", 2)] {
            m.efas.push(
                Efa::new(name)
                    .with_event(EventDecl::new("e"))
                    .with_location(Location::new("q").initial())
                    .with_transition(Transition::new("q", "e", "q").doing(ActionSet::empty().assign("P", p))),
            );
        }
        assert_eq!(flatten(&m).unwrap().num_transitions(), 0);
    }

    #[test]
    fn state_cap_is_an_error() {
        let err = flatten_with(&intro(), FlattenOptions { state_cap: 3 }).unwrap_err();
        assert!(matches!(err, HazError::Resource(_)));
    }

    #[test]
    fn flattening_is_deterministic() {
        let m = parse_model(include_str!("../models/scenario_a.des")).unwrap();
        assert_eq!(flatten(&m).unwrap(), flatten(&m).unwrap());
    }

    #[test]
    fn json_and_dot_exports() {
        let a = flatten(&intro()).unwrap();
        assert_eq!(ExplicitAutomaton::from_json(&a.to_json()).unwrap(), a);
        let dot = a.to_dot();
        assert!(dot.contains("doublecircle"));
        assert_eq!(dot.matches(" -> s").count(), a.num_transitions() + a.initial.len());
    }
}
