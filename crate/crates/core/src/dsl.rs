//! Line-oriented `.des` model format.
//!
//! ```text
//! model intro "plant G and specification K";
//! event a;
//! event u uncontrollable proactive;
//! var P : 0..2 init 0;
//! efa G {
//!     location i initial;
//!     location j marked;
//!     trans i -> j on a when P==0 do P:=1;
//! }
//! spec K { ... }
//! ```
//!
//! Events default to controllable and reactive. A `trans` line may list
//! several events (`on b0, b1`); each becomes its own transition. An
//! automaton's alphabet is every event used on its transitions plus any
//! `event` declared inside its block.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::efa::{
    validate_model, ActionSet, Assignment, CmpOp, Efa, EfaRole, EventDecl, Guard, Location, Transition, VarDecl,
};
use crate::error::{Diagnostic, HazError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSet {
    pub name: String,
    pub description: Option<String>,
    /// Model-level event declarations.
    pub events: Vec<EventDecl>,
    pub vars: Vec<VarDecl>,
    pub efas: Vec<Efa>,
}

impl ModelSet {
    pub fn new(name: impl Into<String>) -> Self {
        ModelSet {
            name: name.into(),
            description: None,
            events: Vec::new(),
            vars: Vec::new(),
            efas: Vec::new(),
        }
    }

    /// Union of all alphabets and model-level declarations, sorted by name.
    pub fn event_table(&self) -> Vec<EventDecl> {
        let mut table: BTreeMap<&str, &EventDecl> = BTreeMap::new();
        for e in self.events.iter().chain(self.efas.iter().flat_map(|a| a.alphabet.iter())) {
            table.entry(e.name.as_str()).or_insert(e);
        }
        table.into_values().cloned().collect()
    }

    pub fn efa(&self, name: &str) -> Option<&Efa> {
        self.efas.iter().find(|e| e.name == name)
    }

    pub fn plants(&self) -> impl Iterator<Item = &Efa> {
        self.efas.iter().filter(|e| e.role == EfaRole::Plant)
    }

    pub fn specs(&self) -> impl Iterator<Item = &Efa> {
        self.efas.iter().filter(|e| e.role == EfaRole::Spec)
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = validate_model(&self.efas, &self.vars);
        let mut top: BTreeMap<&str, &EventDecl> = BTreeMap::new();
        for e in &self.events {
            if top.insert(e.name.as_str(), e).is_some() {
                diags.push(Diagnostic::new(format!("event `{}` declared more than once", e.name)));
            }
        }
        for efa in &self.efas {
            for e in &efa.alphabet {
                if let Some(t) = top.get(e.name.as_str()) {
                    if t.controllable != e.controllable || t.proactive != e.proactive {
                        diags.push(Diagnostic::new(format!(
                            "event `{}` in `{}` conflicts with its model-level declaration",
                            e.name, efa.name
                        )));
                    }
                }
            }
        }
        diags
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 20] = [
    ":=", "..", "->", "==", "!=", "<=", ">=", "&&", "||", ";", ":", "{", "}", ",", "<", ">", "!", "(", ")", "=",
];

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, col: &mut usize, n: usize| {
        *i += n;
        *col += n;
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(&mut i, &mut col, 1);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut col, 1);
            }
            out.push(Token {
                tok: Tok::Ident(chars[s..i].iter().collect()),
                line: start_line,
                col: start_col,
            });
            continue;
        }
        let negative = c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
        if c.is_ascii_digit() || negative {
            let s = i;
            if negative {
                advance(&mut i, &mut col, 1);
            }
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&mut i, &mut col, 1);
            }
            let text: String = chars[s..i].iter().collect();
            let value = text.parse::<i64>().map_err(|_| HazError::Lex {
                line: start_line,
                column: start_col,
                message: format!("integer literal `{text}` out of range"),
            })?;
            out.push(Token {
                tok: Tok::Int(value),
                line: start_line,
                col: start_col,
            });
            continue;
        }
        if c == '"' {
            advance(&mut i, &mut col, 1);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(HazError::Lex {
                            line: start_line,
                            column: start_col,
                            message: "unterminated string".into(),
                        })
                    }
                    Some('"') => {
                        advance(&mut i, &mut col, 1);
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => s.push(e),
                            Some('n') => s.push('\n'),
                            _ => {
                                return Err(HazError::Lex {
                                    line,
                                    column: col,
                                    message: "invalid escape in string".into(),
                                })
                            }
                        }
                        advance(&mut i, &mut col, 2);
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance(&mut i, &mut col, 1);
                    }
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                line: start_line,
                col: start_col,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(sym) => {
                advance(&mut i, &mut col, sym.len());
                out.push(Token {
                    tok: Tok::Sym(sym),
                    line: start_line,
                    col: start_col,
                });
            }
            None => {
                return Err(HazError::Lex {
                    line,
                    column: col,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

struct RawEfa {
    efa: Efa,
    local_events: Vec<EventDecl>,
    used: Vec<(String, usize, usize)>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        let t = self.peek();
        Err(HazError::Syntax {
            line: t.line,
            column: t.col,
            message: message.into(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == kw)
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.is_sym(s) {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.is_kw(kw) {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected `{kw}`"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn int(&mut self) -> Result<i64> {
        match self.peek().tok {
            Tok::Int(v) => {
                self.next();
                Ok(v)
            }
            _ => self.err("expected integer"),
        }
    }

    fn model(&mut self) -> Result<(ModelSet, Vec<RawEfa>)> {
        if !self.is_kw("model") {
            return self.err("expected model header");
        }
        self.next();
        let mut model = ModelSet::new(self.ident("model name")?);
        if let Tok::Str(s) = &self.peek().tok {
            model.description = Some(s.clone());
            self.next();
        }
        self.expect_sym(";")?;
        let mut raws = Vec::new();
        loop {
            match &self.peek().tok {
                Tok::Eof => break,
                Tok::Ident(k) if k == "event" => model.events.push(self.event_decl()?),
                Tok::Ident(k) if k == "var" => model.vars.push(self.var_decl()?),
                Tok::Ident(k) if k == "efa" || k == "spec" => raws.push(self.efa_block()?),
                _ => return self.err("expected `event`, `var`, `efa` or `spec`"),
            }
        }
        Ok((model, raws))
    }

    fn event_decl(&mut self) -> Result<EventDecl> {
        self.expect_kw("event")?;
        let mut ev = EventDecl::new(self.ident("event name")?);
        let (mut seen_ctrl, mut seen_kind) = (false, false);
        while !self.is_sym(";") {
            let flag = self.ident("event flag or `;`")?;
            match flag.as_str() {
                "uncontrollable" | "controllable" if !seen_ctrl => {
                    ev.controllable = flag == "controllable";
                    seen_ctrl = true;
                }
                "proactive" | "reactive" if !seen_kind => {
                    ev.proactive = flag == "proactive";
                    seen_kind = true;
                }
                _ => {
                    self.pos -= 1;
                    return self.err(format!("unexpected event flag `{flag}`"));
                }
            }
        }
        self.expect_sym(";")?;
        Ok(ev)
    }

    fn var_decl(&mut self) -> Result<VarDecl> {
        self.expect_kw("var")?;
        let name = self.ident("variable name")?;
        self.expect_sym(":")?;
        let lo = self.int()?;
        self.expect_sym("..")?;
        let hi = self.int()?;
        self.expect_kw("init")?;
        let init = self.int()?;
        self.expect_sym(";")?;
        Ok(VarDecl { name, lo, hi, init })
    }

    fn efa_block(&mut self) -> Result<RawEfa> {
        let kind = self.ident("`efa` or `spec`")?;
        let mut efa = Efa::new(self.ident("automaton name")?);
        if kind == "spec" {
            efa.role = EfaRole::Spec;
        }
        self.expect_sym("{")?;
        let mut raw_events = Vec::new();
        let mut used = Vec::new();
        while !self.is_sym("}") {
            if self.is_kw("event") {
                raw_events.push(self.event_decl()?);
            } else if self.is_kw("location") {
                self.next();
                let mut loc = Location::new(self.ident("location name")?);
                while !self.is_sym(";") {
                    match self.ident("`initial`, `marked` or `;`")?.as_str() {
                        "initial" => loc.initial = true,
                        "marked" => loc.marked = true,
                        other => {
                            self.pos -= 1;
                            return self.err(format!("unexpected location flag `{other}`"));
                        }
                    }
                }
                self.next();
                efa.locations.push(loc);
            } else if self.is_kw("trans") {
                self.next();
                let source = self.ident("source location")?;
                self.expect_sym("->")?;
                let target = self.ident("target location")?;
                self.expect_kw("on")?;
                let mut events = Vec::new();
                loop {
                    let t = self.peek().clone();
                    events.push((self.ident("event name")?, t.line, t.col));
                    if self.is_sym(",") {
                        self.next();
                    } else {
                        break;
                    }
                }
                let guard = if self.is_kw("when") {
                    self.next();
                    self.guard_or()?
                } else {
                    Guard::True
                };
                let mut action = ActionSet::empty();
                if self.is_kw("do") {
                    self.next();
                    loop {
                        let var = self.ident("variable name")?;
                        self.expect_sym(":=")?;
                        let value = self.int()?;
                        action.0.push(Assignment { var, value });
                        if self.is_sym(",") {
                            self.next();
                        } else {
                            break;
                        }
                    }
                }
                self.expect_sym(";")?;
                for (ev, line, col) in events {
                    efa.transitions.push(Transition {
                        source: source.clone(),
                        event: ev.clone(),
                        guard: guard.clone(),
                        action: action.clone(),
                        target: target.clone(),
                    });
                    used.push((ev, line, col));
                }
            } else {
                return self.err("expected `event`, `location`, `trans` or `}`");
            }
        }
        self.next();
        Ok(RawEfa {
            efa,
            local_events: raw_events,
            used,
        })
    }

    fn guard_or(&mut self) -> Result<Guard> {
        let mut g = self.guard_and()?;
        while self.is_sym("||") {
            self.next();
            g = Guard::Or(Box::new(g), Box::new(self.guard_and()?));
        }
        Ok(g)
    }

    fn guard_and(&mut self) -> Result<Guard> {
        let mut g = self.guard_unary()?;
        while self.is_sym("&&") {
            self.next();
            g = Guard::And(Box::new(g), Box::new(self.guard_unary()?));
        }
        Ok(g)
    }

    fn guard_unary(&mut self) -> Result<Guard> {
        if self.is_sym("!") {
            self.next();
            return Ok(Guard::Not(Box::new(self.guard_unary()?)));
        }
        if self.is_sym("(") {
            self.next();
            let g = self.guard_or()?;
            self.expect_sym(")")?;
            return Ok(g);
        }
        let var = self.ident("guard")?;
        match var.as_str() {
            "true" => return Ok(Guard::True),
            "false" => return Ok(Guard::False),
            _ => {}
        }
        let op = match &self.peek().tok {
            Tok::Sym("==") | Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => return self.err("expected comparison operator"),
        };
        self.next();
        let value = self.int()?;
        Ok(Guard::Cmp { var, op, value })
    }
}

/// Parses and validates a model set.
pub fn parse_model(text: &str) -> Result<ModelSet> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let (mut model, raws) = p.model()?;

    let mut diags = Vec::new();
    let top: BTreeMap<&str, &EventDecl> = model.events.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut efas = Vec::with_capacity(raws.len());
    for raw in raws {
        let mut efa = raw.efa;
        let mut alphabet: BTreeMap<String, EventDecl> = BTreeMap::new();
        for e in raw.local_events {
            if alphabet.insert(e.name.clone(), e.clone()).is_some() {
                diags.push(Diagnostic::new(format!("event `{}` declared twice in `{}`", e.name, efa.name)));
            }
        }
        for (ev, line, col) in raw.used {
            if alphabet.contains_key(&ev) {
                continue;
            }
            match top.get(ev.as_str()) {
                Some(decl) => {
                    alphabet.insert(ev, (*decl).clone());
                }
                None => diags.push(Diagnostic::new(format!("undeclared event `{ev}`")).at(line, col)),
            }
        }
        efa.alphabet = alphabet.into_values().collect();
        efas.push(efa);
    }
    model.efas = efas;
    // undeclared events would resurface as alphabet errors; report them once
    if diags.is_empty() {
        diags = model.validate();
    }
    if diags.is_empty() {
        Ok(model)
    } else {
        Err(HazError::Validation(diags))
    }
}

fn write_event(out: &mut String, indent: &str, e: &EventDecl) {
    let _ = write!(out, "{indent}event {}", e.name);
    if !e.controllable {
        out.push_str(" uncontrollable");
    }
    if e.proactive {
        out.push_str(" proactive");
    }
    out.push_str(";\n");
}

fn quote(s: &str) -> String {
    let mut q = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

/// Canonical text form; `parse_model(&serialize_model(m))` reproduces `m`.
pub fn serialize_model(model: &ModelSet) -> String {
    let mut out = String::new();
    let _ = write!(out, "model {}", model.name);
    if let Some(d) = &model.description {
        let _ = write!(out, " {}", quote(d));
    }
    out.push_str(";\n");
    if !model.events.is_empty() {
        out.push('\n');
    }
    for e in &model.events {
        write_event(&mut out, "", e);
    }
    if !model.vars.is_empty() {
        out.push('\n');
    }
    for v in &model.vars {
        let _ = writeln!(out, "var {} : {}..{} init {};", v.name, v.lo, v.hi, v.init);
    }
    for efa in &model.efas {
        let kw = match efa.role {
            EfaRole::Plant => "efa",
            EfaRole::Spec => "spec",
        };
        let _ = writeln!(out, "\n{kw} {} {{", efa.name);
        for e in &efa.alphabet {
            let inherited = model.events.iter().any(|t| t == e) && efa.transitions.iter().any(|t| t.event == e.name);
            if !inherited {
                write_event(&mut out, "    ", e);
            }
        }
        for l in &efa.locations {
            let _ = write!(out, "    location {}", l.name);
            if l.initial {
                out.push_str(" initial");
            }
            if l.marked {
                out.push_str(" marked");
            }
            out.push_str(";\n");
        }
        for t in &efa.transitions {
            let _ = write!(out, "    trans {} -> {} on {}", t.source, t.target, t.event);
            if !t.guard.is_true() {
                let _ = write!(out, " when {}", t.guard);
            }
            if !t.action.is_empty() {
                let _ = write!(out, " do {}", t.action);
            }
            out.push_str(";\n");
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_needs_header() {
        match parse_model("").unwrap_err() {
            HazError::Syntax { message, line, column } => {
                assert_eq!(message, "expected model header");
                assert_eq!((line, column), (1, 1));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn error_categories_are_distinct() {
        assert!(matches!(parse_model("model m; event $;"), Err(HazError::Lex { .. })));
        assert!(matches!(parse_model("model m; event a"), Err(HazError::Syntax { .. })));
        let err = parse_model("model m;\nefa A {\n location q initial;\n trans q -> q on zz;\n}").unwrap_err();
        match err {
            HazError::Validation(d) => {
                assert_eq!(d.len(), 1, "{d:?}");
                assert_eq!(d[0].line, Some(4));
                assert_eq!(d[0].column, Some(18));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn multi_event_arcs_are_split() {
        let m = parse_model(
            "model m; event b; event c; event d;\nefa K { location x initial; trans x -> x on b, c, d; }",
        )
        .unwrap();
        let k = &m.efas[0];
        assert_eq!(k.transitions.len(), 3);
        assert_eq!(k.alphabet.len(), 3);
    }

    #[test]
    fn guard_precedence() {
        let m = parse_model(
            "model m; event e; var A : 0..1 init 0; var B : 0..1 init 0;\n\
             efa X { location q initial; trans q -> q on e when !A==1 || A==0 && (B==1 || B==0); }",
        )
        .unwrap();
        let g = &m.efas[0].transitions[0].guard;
        assert_eq!(g.to_string(), "!A==1 || A==0 && (B==1 || B==0)");
    }

    #[test]
    fn empty_alphabet_round_trips() {
        let mut m = ModelSet::new("lonely");
        m.efas.push(Efa::new("E").with_location(Location::new("q").initial()));
        let text = serialize_model(&m);
        assert_eq!(parse_model(&text).unwrap(), m);
    }

    #[test]
    fn local_event_declarations_round_trip() {
        let text = "model m \"quote \\\" inside\";\nevent a;\n\
                    efa A { event z uncontrollable; location q initial; trans q -> q on a; }\n";
        let m = parse_model(text).unwrap();
        assert_eq!(m.efas[0].alphabet.len(), 2);
        assert_eq!(parse_model(&serialize_model(&m)).unwrap(), m);
    }

    #[test]
    fn conflicting_local_flag_rejected() {
        let text = "model m; event a;\nefa A { event a uncontrollable; location q initial; trans q -> q on a; }";
        assert!(matches!(parse_model(text), Err(HazError::Validation(_))));
    }
}
