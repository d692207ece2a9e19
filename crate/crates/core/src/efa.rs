//! Extended finite automata: locations, events, bounded integer variables,
//! guarded transitions with constant-assignment actions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Diagnostic, HazError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventDecl {
    pub name: String,
    pub controllable: bool,
    pub proactive: bool,
}

impl EventDecl {
    /// Default flags: controllable and reactive.
    pub fn new(name: impl Into<String>) -> Self {
        EventDecl {
            name: name.into(),
            controllable: true,
            proactive: false,
        }
    }

    pub fn uncontrollable(mut self) -> Self {
        self.controllable = false;
        self
    }

    pub fn proactive(mut self) -> Self {
        self.proactive = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

impl VarDecl {
    pub fn new(name: impl Into<String>, lo: i64, hi: i64, init: i64) -> Self {
        VarDecl {
            name: name.into(),
            lo,
            hi,
            init,
        }
    }

    pub fn contains(&self, v: i64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn domain_size(&self) -> u64 {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo) as u64 + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn apply(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Boolean guard over variable-vs-constant comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Guard {
    True,
    False,
    Cmp { var: String, op: CmpOp, value: i64 },
    Not(Box<Guard>),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
}

impl Guard {
    pub fn cmp(var: impl Into<String>, op: CmpOp, value: i64) -> Guard {
        Guard::Cmp {
            var: var.into(),
            op,
            value,
        }
    }

    pub fn and(self, other: Guard) -> Guard {
        match (self, other) {
            (Guard::True, g) | (g, Guard::True) => g,
            (a, b) => Guard::And(Box::new(a), Box::new(b)),
        }
    }

    pub fn or(self, other: Guard) -> Guard {
        Guard::Or(Box::new(self), Box::new(other))
    }

    pub fn negate(self) -> Guard {
        Guard::Not(Box::new(self))
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Guard::True)
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Guard::True | Guard::False => {}
            Guard::Cmp { var, .. } => {
                out.insert(var.as_str());
            }
            Guard::Not(g) => g.collect_vars(out),
            Guard::And(a, b) | Guard::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates with an arbitrary variable lookup. `None` from the lookup
    /// means the variable is unbound.
    pub fn eval_with<F>(&self, lookup: &F) -> Result<bool, String>
    where
        F: Fn(&str) -> Option<i64>,
    {
        Ok(match self {
            Guard::True => true,
            Guard::False => false,
            Guard::Cmp { var, op, value } => {
                let v = lookup(var).ok_or_else(|| var.clone())?;
                op.apply(v, *value)
            }
            Guard::Not(g) => !g.eval_with(lookup)?,
            Guard::And(a, b) => a.eval_with(lookup)? && b.eval_with(lookup)?,
            Guard::Or(a, b) => a.eval_with(lookup)? || b.eval_with(lookup)?,
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Guard::Or(..) => 1,
            Guard::And(..) => 2,
            Guard::Not(_) => 3,
            _ => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let p = self.precedence();
        let paren = p < parent;
        if paren {
            write!(f, "(")?;
        }
        match self {
            Guard::True => write!(f, "true")?,
            Guard::False => write!(f, "false")?,
            Guard::Cmp { var, op, value } => write!(f, "{}{}{}", var, op.symbol(), value)?,
            Guard::Not(g) => {
                write!(f, "!")?;
                g.fmt_prec(f, 4)?;
            }
            // Left-associative chains print without parentheses; a right
            // operand of the same precedence needs them to re-parse identically.
            Guard::And(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, " && ")?;
                b.fmt_prec(f, 3)?;
            }
            Guard::Or(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " || ")?;
                b.fmt_prec(f, 2)?;
            }
        }
        if paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub var: String,
    pub value: i64,
}

/// Constant assignments executed when a transition fires.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSet(pub Vec<Assignment>);

impl ActionSet {
    pub fn empty() -> Self {
        ActionSet(Vec::new())
    }

    pub fn assign(mut self, var: impl Into<String>, value: i64) -> Self {
        self.0.push(Assignment {
            var: var.into(),
            value,
        });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, var: &str) -> Option<i64> {
        self.0.iter().find(|a| a.var == var).map(|a| a.value)
    }

    /// Merges two action sets. Identical assignments collapse; two
    /// different constants for one variable are a conflict (`None`).
    pub fn merge(&self, other: &ActionSet) -> Option<ActionSet> {
        let mut out = self.0.clone();
        for a in &other.0 {
            match out.iter().find(|b| b.var == a.var) {
                Some(b) if b.value != a.value => return None,
                Some(_) => {}
                None => out.push(a.clone()),
            }
        }
        Some(ActionSet(out))
    }
}

impl fmt::Display for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}:={}", a.var, a.value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub source: String,
    pub event: String,
    pub guard: Guard,
    pub action: ActionSet,
    pub target: String,
}

impl Transition {
    pub fn new(source: impl Into<String>, event: impl Into<String>, target: impl Into<String>) -> Self {
        Transition {
            source: source.into(),
            event: event.into(),
            guard: Guard::True,
            action: ActionSet::empty(),
            target: target.into(),
        }
    }

    pub fn when(mut self, guard: Guard) -> Self {
        self.guard = guard;
        self
    }

    pub fn doing(mut self, action: ActionSet) -> Self {
        self.action = action;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub initial: bool,
    pub marked: bool,
    /// Constituent location names when this location belongs to a
    /// synchronous product; empty for an atomic automaton.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<String>,
}

impl Location {
    pub fn new(name: impl Into<String>) -> Self {
        Location {
            name: name.into(),
            initial: false,
            marked: false,
            parts: Vec::new(),
        }
    }

    pub fn initial(mut self) -> Self {
        self.initial = true;
        self
    }

    pub fn marked(mut self) -> Self {
        self.marked = true;
        self
    }

    /// Location vector: the parts for a product location, else the name itself.
    pub fn vector(&self) -> Vec<String> {
        if self.parts.is_empty() {
            vec![self.name.clone()]
        } else {
            self.parts.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EfaRole {
    #[default]
    Plant,
    Spec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Efa {
    pub name: String,
    pub role: EfaRole,
    /// Sorted by event name.
    pub alphabet: Vec<EventDecl>,
    pub locations: Vec<Location>,
    pub transitions: Vec<Transition>,
}

impl Efa {
    pub fn new(name: impl Into<String>) -> Self {
        Efa {
            name: name.into(),
            role: EfaRole::Plant,
            alphabet: Vec::new(),
            locations: Vec::new(),
            transitions: Vec::new(),
        }
    }

    pub fn spec(mut self) -> Self {
        self.role = EfaRole::Spec;
        self
    }

    pub fn with_location(mut self, loc: Location) -> Self {
        self.locations.push(loc);
        self
    }

    pub fn with_event(mut self, ev: EventDecl) -> Self {
        if !self.alphabet.iter().any(|e| e.name == ev.name) {
            self.alphabet.push(ev);
            self.alphabet.sort_by(|a, b| a.name.cmp(&b.name));
        }
        self
    }

    pub fn with_transition(mut self, t: Transition) -> Self {
        self.transitions.push(t);
        self
    }

    pub fn has_event(&self, name: &str) -> bool {
        self.alphabet.iter().any(|e| e.name == name)
    }

    pub fn location(&self, name: &str) -> Option<&Location> {
        self.locations.iter().find(|l| l.name == name)
    }

    pub fn initial_locations(&self) -> impl Iterator<Item = &Location> {
        self.locations.iter().filter(|l| l.initial)
    }

    pub fn has_marking(&self) -> bool {
        self.locations.iter().any(|l| l.marked)
    }

    /// A location counts as marked when it is marked explicitly, or when the
    /// automaton marks nothing at all.
    pub fn is_effectively_marked(&self, loc: &str) -> bool {
        !self.has_marking() || self.location(loc).is_some_and(|l| l.marked)
    }
}

/// Variable assignment, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Valuation(pub BTreeMap<String, i64>);

impl Valuation {
    pub fn new() -> Self {
        Valuation(BTreeMap::new())
    }

    pub fn initial(vars: &[VarDecl]) -> Self {
        Valuation(vars.iter().map(|v| (v.name.clone(), v.init)).collect())
    }

    pub fn with(mut self, var: impl Into<String>, value: i64) -> Self {
        self.0.insert(var.into(), value);
        self
    }

    pub fn get(&self, var: &str) -> Option<i64> {
        self.0.get(var).copied()
    }
}

impl<const N: usize> From<[(&str, i64); N]> for Valuation {
    fn from(pairs: [(&str, i64); N]) -> Self {
        Valuation(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

pub fn eval_guard(guard: &Guard, valuation: &Valuation) -> Result<bool, HazError> {
    guard
        .eval_with(&|name| valuation.get(name))
        .map_err(|var| HazError::Validation(vec![Diagnostic::new(format!("unbound variable `{var}` in guard"))]))
}

/// Overwrites exactly the assigned variables. `vars` supplies the domains;
/// pass an empty slice to skip domain checks.
pub fn apply_action(action: &ActionSet, valuation: &Valuation, vars: &[VarDecl]) -> Result<Valuation, HazError> {
    let mut out = valuation.clone();
    for a in &action.0 {
        if let Some(decl) = vars.iter().find(|v| v.name == a.var) {
            if !decl.contains(a.value) {
                return Err(HazError::Validation(vec![Diagnostic::new(format!(
                    "assignment {}:={} outside domain {}..{}",
                    a.var, a.value, decl.lo, decl.hi
                ))]));
            }
        }
        out.0.insert(a.var.clone(), a.value);
    }
    Ok(out)
}

/// Transitions leaving `location` whose guard holds, sorted by event then target.
pub fn enabled_transitions<'a>(
    efa: &'a Efa,
    location: &str,
    valuation: &Valuation,
) -> Result<Vec<&'a Transition>, HazError> {
    let mut out = Vec::new();
    for t in efa.transitions.iter().filter(|t| t.source == location) {
        if eval_guard(&t.guard, valuation)? {
            out.push(t);
        }
    }
    out.sort_by(|a, b| (&a.event, &a.target).cmp(&(&b.event, &b.target)));
    Ok(out)
}

/// Checks every well-formedness rule across a set of automata sharing
/// `vars`. Never fails; an empty result means the set is valid.
pub fn validate_model(efas: &[Efa], vars: &[VarDecl]) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut var_index: HashMap<&str, &VarDecl> = HashMap::new();
    for v in vars {
        if var_index.insert(v.name.as_str(), v).is_some() {
            diags.push(Diagnostic::new(format!("variable `{}` declared more than once", v.name)));
        }
        if v.lo > v.hi {
            diags.push(Diagnostic::new(format!("variable `{}` has empty domain {}..{}", v.name, v.lo, v.hi)));
        } else if !v.contains(v.init) {
            diags.push(Diagnostic::new(format!(
                "variable `{}` initial value {} outside domain {}..{}",
                v.name, v.init, v.lo, v.hi
            )));
        }
    }

    let mut efa_names = BTreeSet::new();
    let mut shared: BTreeMap<&str, (&EventDecl, &str)> = BTreeMap::new();
    for efa in efas {
        if !efa_names.insert(efa.name.as_str()) {
            diags.push(Diagnostic::new(format!("automaton `{}` declared more than once", efa.name)));
        }
        let mut seen_events = BTreeSet::new();
        for ev in &efa.alphabet {
            if !seen_events.insert(ev.name.as_str()) {
                diags.push(Diagnostic::new(format!("event `{}` listed twice in `{}`", ev.name, efa.name)));
            }
            match shared.get(ev.name.as_str()) {
                Some((other, owner)) if other.controllable != ev.controllable || other.proactive != ev.proactive => {
                    diags.push(Diagnostic::new(format!(
                        "event `{}` declared with conflicting flags in `{}` and `{}`",
                        ev.name, owner, efa.name
                    )));
                }
                Some(_) => {}
                None => {
                    shared.insert(ev.name.as_str(), (ev, efa.name.as_str()));
                }
            }
        }

        let mut loc_names = BTreeSet::new();
        for l in &efa.locations {
            if !loc_names.insert(l.name.as_str()) {
                diags.push(Diagnostic::new(format!("location `{}` declared twice in `{}`", l.name, efa.name)));
            }
        }
        if !efa.locations.iter().any(|l| l.initial) {
            diags.push(Diagnostic::new(format!("automaton `{}` has no initial location", efa.name)));
        }

        for t in &efa.transitions {
            let at = format!("`{}`: {} -> {} on {}", efa.name, t.source, t.target, t.event);
            for end in [&t.source, &t.target] {
                if !loc_names.contains(end.as_str()) {
                    diags.push(Diagnostic::new(format!("{at}: unknown location `{end}`")));
                }
            }
            if !seen_events.contains(t.event.as_str()) {
                diags.push(Diagnostic::new(format!("{at}: event not in alphabet")));
            }
            for var in t.guard.variables() {
                if !var_index.contains_key(var) {
                    diags.push(Diagnostic::new(format!("{at}: guard references undeclared variable `{var}`")));
                }
            }
            let mut assigned = BTreeSet::new();
            for a in &t.action.0 {
                if !assigned.insert(a.var.as_str()) {
                    diags.push(Diagnostic::new(format!("{at}: variable `{}` assigned twice", a.var)));
                }
                match var_index.get(a.var.as_str()) {
                    None => diags.push(Diagnostic::new(format!(
                        "{at}: action assigns undeclared variable `{}`",
                        a.var
                    ))),
                    Some(d) if !d.contains(a.value) => diags.push(Diagnostic::new(format!(
                        "{at}: assignment {}:={} outside domain {}..{}",
                        a.var, a.value, d.lo, d.hi
                    ))),
                    Some(_) => {}
                }
            }
        }
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intro_g() -> Efa {
        Efa::new("G")
            .with_event(EventDecl::new("a"))
            .with_event(EventDecl::new("b"))
            .with_event(EventDecl::new("c"))
            .with_event(EventDecl::new("d"))
            .with_location(Location::new("i").initial())
            .with_location(Location::new("j").marked())
            .with_location(Location::new("k"))
            .with_transition(Transition::new("i", "c", "k"))
            .with_transition(Transition::new("i", "a", "j"))
            .with_transition(Transition::new("k", "d", "i"))
            .with_transition(Transition::new("j", "b", "i"))
    }

    #[test]
    fn guard_examples() {
        let v = Valuation::from([("P", 1)]);
        assert!(eval_guard(&Guard::cmp("P", CmpOp::Eq, 1), &v).unwrap());
        assert!(!eval_guard(&Guard::cmp("P", CmpOp::Ne, 1), &v).unwrap());
        let g = Guard::cmp("R", CmpOp::Eq, 1).and(Guard::cmp("W", CmpOp::Eq, 1));
        assert!(!eval_guard(&g, &Valuation::from([("R", 1), ("W", 0)])).unwrap());
    }

    #[test]
    fn unbound_guard_variable_is_validation_error() {
        let err = eval_guard(&Guard::cmp("Q", CmpOp::Eq, 1), &Valuation::new()).unwrap_err();
        assert!(matches!(err, HazError::Validation(_)));
    }

    #[test]
    fn action_examples() {
        let vars = [VarDecl::new("P", 0, 2, 0), VarDecl::new("W", 0, 1, 0)];
        let out = apply_action(&ActionSet::empty().assign("P", 1), &Valuation::from([("P", 0), ("W", 0)]), &vars).unwrap();
        assert_eq!(out, Valuation::from([("P", 1), ("W", 0)]));
        let same = apply_action(&ActionSet::empty(), &Valuation::from([("P", 2)]), &vars).unwrap();
        assert_eq!(same, Valuation::from([("P", 2)]));
        let both = ActionSet::empty().assign("P", 2).assign("W", 1);
        let out = apply_action(&both, &Valuation::from([("P", 1), ("W", 0)]), &vars).unwrap();
        assert_eq!(out, Valuation::from([("P", 2), ("W", 1)]));
        assert!(apply_action(&ActionSet::empty().assign("P", 3), &out, &vars).is_err());
    }

    #[test]
    fn enabled_in_intro_g() {
        let g = intro_g();
        let en = enabled_transitions(&g, "i", &Valuation::new()).unwrap();
        let evs: Vec<_> = en.iter().map(|t| t.event.as_str()).collect();
        assert_eq!(evs, ["a", "c"]);
        let empty = Efa::new("E").with_location(Location::new("q").initial());
        assert!(enabled_transitions(&empty, "q", &Valuation::new()).unwrap().is_empty());
    }

    #[test]
    fn validation_diagnostics() {
        let g = intro_g();
        assert!(validate_model(std::slice::from_ref(&g), &[]).is_empty());

        let bad_init = validate_model(std::slice::from_ref(&g), &[VarDecl::new("X", 0, 1, 4)]);
        assert_eq!(bad_init.len(), 1);
        assert!(bad_init[0].message.contains("`X`"));

        let h = Efa::new("H")
            .with_event(EventDecl::new("a").uncontrollable())
            .with_location(Location::new("q").initial())
            .with_transition(Transition::new("q", "a", "q"));
        let conflict = validate_model(&[g, h], &[]);
        assert_eq!(conflict.len(), 1);
        assert!(conflict[0].message.contains("conflicting"));
    }

    #[test]
    fn action_merge_conflicts() {
        let a = ActionSet::empty().assign("P", 1);
        assert!(a.merge(&ActionSet::empty().assign("P", 2)).is_none());
        assert_eq!(a.merge(&ActionSet::empty().assign("P", 1)).unwrap(), a);
    }

    proptest! {
        #[test]
        fn action_frame_property(
            init in proptest::collection::vec(0i64..3, 4),
            assign in proptest::collection::btree_map(0usize..4, 0i64..3, 0..4),
        ) {
            let names = ["A", "B", "C", "D"];
            let vars: Vec<_> = names.iter().map(|n| VarDecl::new(*n, 0, 2, 0)).collect();
            let val = Valuation(names.iter().zip(&init).map(|(n, v)| (n.to_string(), *v)).collect());
            let mut act = ActionSet::empty();
            for (i, v) in &assign {
                act = act.assign(names[*i], *v);
            }
            let out = apply_action(&act, &val, &vars).unwrap();
            for (i, n) in names.iter().enumerate() {
                let expected = assign.get(&i).copied().unwrap_or(init[i]);
                prop_assert_eq!(out.get(n), Some(expected));
            }
        }

        #[test]
        fn enabled_subset_of_source(p in 0i64..3) {
            let efa = Efa::new("H")
                .with_event(EventDecl::new("x"))
                .with_event(EventDecl::new("y"))
                .with_location(Location::new("a").initial())
                .with_location(Location::new("b"))
                .with_transition(Transition::new("a", "x", "b").when(Guard::cmp("P", CmpOp::Ne, 1)))
                .with_transition(Transition::new("a", "y", "a").when(Guard::cmp("P", CmpOp::Ge, 1)))
                .with_transition(Transition::new("b", "x", "a"));
            let val = Valuation::from([("P", p)]);
            for t in enabled_transitions(&efa, "a", &val).unwrap() {
                prop_assert_eq!(&t.source, "a");
                prop_assert!(eval_guard(&t.guard, &val).unwrap());
            }
        }
    }
}
