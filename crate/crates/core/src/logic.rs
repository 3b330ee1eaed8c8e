//! Terms, atoms and clauses, their textual syntax, and grounding over a
//! constant set.
//!
//! The grammar is the one used in the rule listings throughout the crate:
//!
//! ```text
//! atom   := name "(" [term ("," term)*] ")"
//! clause := atom "<-" atom ["," atom]
//! ```
//!
//! Identifiers starting with an uppercase letter are variables; everything
//! else is a constant. Clause bodies always hold exactly two atoms, a single
//! body atom is duplicated.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ARITY: usize = 3;
pub const MAX_CLAUSE_VARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
}

impl Predicate {
    pub fn new(name: impl Into<String>, arity: usize) -> Result<Self> {
        let name = name.into();
        if !is_predicate_name(&name) {
            return Err(Error::Language(format!("bad predicate name `{name}`")));
        }
        if arity > MAX_ARITY {
            return Err(Error::Language(format!(
                "predicate {name} has arity {arity}, the maximum is {MAX_ARITY}"
            )));
        }
        Ok(Self { name, arity })
    }

    /// Parses the `name/arity` notation used in config files.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, arity) = text
            .trim()
            .split_once('/')
            .ok_or_else(|| Error::Language(format!("expected name/arity, got `{text}`")))?;
        let arity = arity
            .trim()
            .parse()
            .map_err(|_| Error::Language(format!("bad arity in `{text}`")))?;
        Self::new(name.trim(), arity)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

fn is_predicate_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Variables are numbered; they print as `V0`, `V1`, ...
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(u8),
    Const(String),
}

impl Term {
    pub fn constant(name: impl Into<String>) -> Self {
        Term::Const(name.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "V{v}"),
            Term::Const(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Self {
            predicate: predicate.into(),
            args,
        }
    }

    /// Ground atom from constant names.
    pub fn ground(predicate: impl Into<String>, args: &[&str]) -> Self {
        Self::new(predicate, args.iter().map(|a| Term::constant(*a)).collect())
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn signature(&self) -> Predicate {
        Predicate {
            name: self.predicate.clone(),
            arity: self.args.len(),
        }
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }

    pub fn vars(&self) -> impl Iterator<Item = u8> + '_ {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(*v),
            Term::Const(_) => None,
        })
    }

    pub fn constants(&self) -> impl Iterator<Item = &str> + '_ {
        self.args.iter().filter_map(|t| match t {
            Term::Const(c) => Some(c.as_str()),
            Term::Var(_) => None,
        })
    }

    /// Applies a variable assignment; `subst[v]` is the constant for `Vv`.
    pub fn substitute(&self, subst: &[&str]) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => Term::Const(subst[*v as usize].to_string()),
                    c => c.clone(),
                })
                .collect(),
        }
    }

    pub fn rename_constants(&self, map: &HashMap<String, String>) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| match t {
                    Term::Const(c) => Term::Const(map.get(c).cloned().unwrap_or_else(|| c.clone())),
                    v => v.clone(),
                })
                .collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, t) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str(")")
    }
}

impl Serialize for Atom {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_atom(&text).map_err(serde::de::Error::custom)
    }
}

/// A definite clause with a two-atom body in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Clause {
    pub head: Atom,
    pub body: [Atom; 2],
}

impl Clause {
    /// Builds a canonical clause: pads a one-atom body, checks safety,
    /// numbers head variables by first occurrence, then picks the numbering
    /// of body-only variables that yields the smallest sorted body.
    pub fn new(head: Atom, body: Vec<Atom>) -> Result<Self> {
        let body = match body.len() {
            1 => vec![body[0].clone(), body[0].clone()],
            2 => body,
            n => return Err(Error::BodyWidth(n)),
        };
        let head_vars: Vec<u8> = dedup_in_order(head.vars());
        let body_vars: BTreeSet<u8> = body.iter().flat_map(|a| a.vars()).collect();
        if head_vars.iter().any(|v| !body_vars.contains(v)) {
            let shown = format!("{} <- {}, {}", head, body[0], body[1]);
            return Err(Error::UnsafeClause(shown));
        }
        let fresh: Vec<u8> = dedup_in_order(body.iter().flat_map(|a| a.vars()))
            .into_iter()
            .filter(|v| !head_vars.contains(v))
            .collect();
        if head_vars.len() + fresh.len() > MAX_CLAUSE_VARS {
            return Err(Error::Language(format!(
                "clause uses {} variables, the maximum is {MAX_CLAUSE_VARS}",
                head_vars.len() + fresh.len()
            )));
        }

        let mut rename: HashMap<u8, u8> = head_vars
            .iter()
            .enumerate()
            .map(|(i, v)| (*v, i as u8))
            .collect();
        let head = rename_vars(&head, &rename);
        let base = head_vars.len() as u8;
        let mut best: Option<[Atom; 2]> = None;
        for perm in permutations(fresh.len()) {
            for (slot, v) in fresh.iter().enumerate() {
                rename.insert(*v, base + perm[slot] as u8);
            }
            let mut cand = [
                rename_vars(&body[0], &rename),
                rename_vars(&body[1], &rename),
            ];
            cand.sort();
            if best.as_ref().is_none_or(|b| cand < *b) {
                best = Some(cand);
            }
        }
        Ok(Self {
            head,
            body: best.expect("at least one permutation"),
        })
    }

    pub fn num_vars(&self) -> usize {
        self.vars().len()
    }

    /// Distinct variables, sorted.
    pub fn vars(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self
            .head
            .vars()
            .chain(self.body.iter().flat_map(|a| a.vars()))
            .collect();
        set.into_iter().collect()
    }

    /// True if some body atom equals the head.
    pub fn is_tautology(&self) -> bool {
        self.body.contains(&self.head)
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.body[0] == self.body[1] {
            write!(f, "{} <- {}", self.head, self.body[0])
        } else {
            write!(f, "{} <- {}, {}", self.head, self.body[0], self.body[1])
        }
    }
}

impl Serialize for Clause {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Clause {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_clause(&text).map_err(serde::de::Error::custom)
    }
}

fn dedup_in_order(it: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in it {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn rename_vars(atom: &Atom, map: &HashMap<u8, u8>) -> Atom {
    Atom {
        predicate: atom.predicate.clone(),
        args: atom
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => Term::Var(map[v]),
                c => c.clone(),
            })
            .collect(),
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

// --- parsing ---------------------------------------------------------------

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: &str) -> Result<()> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            Ok(())
        } else {
            Err(self.err(format!("expected `{tok}`")))
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        for c in self.src[self.pos..].chars() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if start == self.pos {
            Err(self.err("expected identifier"))
        } else {
            Ok(&self.src[start..self.pos])
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.src.len()
    }
}

/// Maps variable names to numbers within one clause. `V<n>` keeps its
/// number; other names get the next free one.
#[derive(Default)]
struct VarTable {
    names: HashMap<String, u8>,
}

impl VarTable {
    fn get(&mut self, name: &str) -> u8 {
        if let Some(v) = self.names.get(name) {
            return *v;
        }
        let v = name
            .strip_prefix('V')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| !self.names.values().any(|v| v == n))
            .unwrap_or_else(|| {
                (0..=u8::MAX)
                    .find(|n| !self.names.values().any(|v| v == n))
                    .unwrap()
            });
        self.names.insert(name.to_string(), v);
        v
    }
}

fn atom_from(lx: &mut Lexer<'_>, vars: &mut VarTable) -> Result<Atom> {
    let name = lx.ident()?;
    if !is_predicate_name(name) {
        return Err(Error::Syntax {
            offset: lx.pos - name.len(),
            message: format!("`{name}` is not a predicate name"),
        });
    }
    lx.expect("(")?;
    let mut args = Vec::new();
    if !lx.eat(")") {
        loop {
            let t = lx.ident()?;
            let first = t.chars().next().unwrap();
            if first.is_ascii_uppercase() {
                args.push(Term::Var(vars.get(t)));
            } else if first.is_ascii_lowercase() || first.is_ascii_digit() {
                args.push(Term::Const(t.to_string()));
            } else {
                return Err(lx.err(format!("bad term `{t}`")));
            }
            if lx.eat(")") {
                break;
            }
            lx.expect(",")?;
        }
    }
    if args.len() > MAX_ARITY {
        return Err(Error::Language(format!(
            "atom {name} has {} arguments, the maximum is {MAX_ARITY}",
            args.len()
        )));
    }
    Ok(Atom::new(name, args))
}

pub fn parse_atom(text: &str) -> Result<Atom> {
    let mut lx = Lexer::new(text);
    if lx.at_end() {
        return Err(lx.err("empty input"));
    }
    let atom = atom_from(&mut lx, &mut VarTable::default())?;
    if !lx.at_end() {
        return Err(lx.err("trailing input"));
    }
    Ok(atom)
}

/// Accepts `<-` or `←` as the separator.
pub fn parse_clause(text: &str) -> Result<Clause> {
    let normalized = text.replace('←', "<-");
    let mut lx = Lexer::new(&normalized);
    let mut vars = VarTable::default();
    let head = atom_from(&mut lx, &mut vars)?;
    lx.expect("<-")?;
    let mut body = vec![atom_from(&mut lx, &mut vars)?];
    while lx.eat(",") {
        body.push(atom_from(&mut lx, &mut vars)?);
    }
    if !lx.at_end() {
        return Err(lx.err("trailing input"));
    }
    Clause::new(head, body)
}

pub fn format_atom(atom: &Atom) -> String {
    atom.to_string()
}

pub fn format_clause(clause: &Clause) -> String {
    clause.to_string()
}

/// Tracks declared predicate arities across several parses.
#[derive(Debug, Default, Clone)]
pub struct Signature {
    arities: HashMap<String, usize>,
}

impl Signature {
    pub fn declare(&mut self, p: &Predicate) -> Result<()> {
        match self.arities.get(&p.name) {
            Some(&a) if a != p.arity => Err(Error::ArityConflict {
                name: p.name.clone(),
                declared: a,
                found: p.arity,
            }),
            _ => {
                self.arities.insert(p.name.clone(), p.arity);
                Ok(())
            }
        }
    }

    pub fn parse_atom(&mut self, text: &str) -> Result<Atom> {
        let atom = parse_atom(text)?;
        self.declare(&atom.signature())?;
        Ok(atom)
    }

    pub fn parse_clause(&mut self, text: &str) -> Result<Clause> {
        let clause = parse_clause(text)?;
        for a in std::iter::once(&clause.head).chain(clause.body.iter()) {
            self.declare(&a.signature())?;
        }
        Ok(clause)
    }
}

// --- language frame and grounding -------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageFrame {
    pub target_predicates: Vec<Predicate>,
    pub extensional_predicates: Vec<Predicate>,
    #[serde(default)]
    pub constants: Option<Vec<String>>,
}

impl LanguageFrame {
    pub fn new(targets: Vec<Predicate>, extensional: Vec<Predicate>) -> Result<Self> {
        let frame = Self {
            target_predicates: targets,
            extensional_predicates: extensional,
            constants: None,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let mut sig = Signature::default();
        for p in self.predicates() {
            sig.declare(p)?;
        }
        for t in &self.target_predicates {
            if self.extensional_predicates.iter().any(|e| e.name == t.name) {
                return Err(Error::Language(format!(
                    "{t} is both a target and an extensional predicate"
                )));
            }
        }
        Ok(())
    }

    /// Extensional predicates first, then targets.
    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.extensional_predicates
            .iter()
            .chain(self.target_predicates.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Grounding {
    pub head: usize,
    pub body: [usize; 2],
}

/// Dense numbering of every ground atom over a constant list. Index 0 is a
/// sentinel atom that is never true.
#[derive(Debug, Clone)]
pub struct GroundIndex {
    constants: Vec<String>,
    const_pos: HashMap<String, usize>,
    predicates: Vec<(Predicate, usize)>,
    pred_pos: HashMap<String, usize>,
    len: usize,
}

impl GroundIndex {
    pub fn new<'a>(
        predicates: impl IntoIterator<Item = &'a Predicate>,
        constants: &[String],
    ) -> Result<Self> {
        if constants.is_empty() {
            return Err(Error::EmptyConstants);
        }
        let mut const_pos = HashMap::with_capacity(constants.len());
        for (i, c) in constants.iter().enumerate() {
            if const_pos.insert(c.clone(), i).is_some() {
                return Err(Error::DuplicateConstant(c.clone()));
            }
        }
        let n = constants.len();
        let mut offset = 1;
        let mut preds = Vec::new();
        let mut pred_pos = HashMap::new();
        for p in predicates {
            if let Some(&i) = pred_pos.get(&p.name) {
                let (existing, _): &(Predicate, usize) = &preds[i];
                if existing.arity != p.arity {
                    return Err(Error::ArityConflict {
                        name: p.name.clone(),
                        declared: existing.arity,
                        found: p.arity,
                    });
                }
                continue;
            }
            pred_pos.insert(p.name.clone(), preds.len());
            preds.push((p.clone(), offset));
            offset += n.pow(p.arity as u32);
        }
        Ok(Self {
            constants: constants.to_vec(),
            const_pos,
            predicates: preds,
            pred_pos,
            len: offset,
        })
    }

    /// Number of entries including the sentinel.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn constants(&self) -> &[String] {
        &self.constants
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.predicates.iter().map(|(p, _)| p)
    }

    pub fn has_predicate(&self, name: &str) -> bool {
        self.pred_pos.contains_key(name)
    }

    /// Index range covered by one predicate's groundings.
    pub fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let (p, off) = &self.predicates[*self.pred_pos.get(name)?];
        Some(*off..off + self.constants.len().pow(p.arity as u32))
    }

    pub fn index_of(&self, atom: &Atom) -> Option<usize> {
        let (p, off) = &self.predicates[*self.pred_pos.get(&atom.predicate)?];
        if p.arity != atom.args.len() {
            return None;
        }
        let n = self.constants.len();
        let mut idx = 0;
        for t in &atom.args {
            match t {
                Term::Const(c) => idx = idx * n + self.const_pos.get(c)?,
                Term::Var(_) => return None,
            }
        }
        Some(off + idx)
    }

    /// The atom at `index`; `None` for the sentinel or out of range.
    pub fn atom(&self, index: usize) -> Option<Atom> {
        if index == 0 || index >= self.len {
            return None;
        }
        let pos = self.predicates.partition_point(|(_, off)| *off <= index) - 1;
        let (p, off) = &self.predicates[pos];
        let n = self.constants.len();
        let mut rem = index - off;
        let mut args = vec![Term::Var(0); p.arity];
        for k in (0..p.arity).rev() {
            args[k] = Term::Const(self.constants[rem % n].clone());
            rem /= n;
        }
        Some(Atom::new(p.name.clone(), args))
    }

    pub fn atoms(&self) -> impl Iterator<Item = Atom> + '_ {
        (1..self.len).filter_map(|i| self.atom(i))
    }

    fn index_with(&self, atom: &Atom, subst: &[usize]) -> Option<usize> {
        let (p, off) = &self.predicates[*self.pred_pos.get(&atom.predicate)?];
        if p.arity != atom.args.len() {
            return None;
        }
        let n = self.constants.len();
        let mut idx = 0;
        for t in &atom.args {
            let c = match t {
                Term::Var(v) => subst[*v as usize],
                Term::Const(c) => *self.const_pos.get(c)?,
            };
            idx = idx * n + c;
        }
        Some(off + idx)
    }
}

pub fn build_ground_index(frame: &LanguageFrame, constants: &[String]) -> Result<GroundIndex> {
    GroundIndex::new(frame.predicates(), constants)
}

/// One entry per assignment of the clause's variables to constants, in
/// lexicographic order of the assignment. Body atoms over unknown predicates
/// or constants point at the sentinel; a head outside the index yields no
/// entries.
pub fn ground_clause(clause: &Clause, index: &GroundIndex) -> Vec<Grounding> {
    let nvars = clause.vars().last().map(|v| *v as usize + 1).unwrap_or(0);
    let n = index.constants.len();
    let total = n.pow(nvars as u32);
    let mut out = Vec::with_capacity(total);
    let mut subst = vec![0usize; nvars];
    for code in 0..total {
        let mut rem = code;
        for k in (0..nvars).rev() {
            subst[k] = rem % n;
            rem /= n;
        }
        let Some(head) = index.index_with(&clause.head, &subst) else {
            continue;
        };
        let b0 = index.index_with(&clause.body[0], &subst).unwrap_or(0);
        let b1 = index.index_with(&clause.body[1], &subst).unwrap_or(0);
        out.push(Grounding {
            head,
            body: [b0, b1],
        });
    }
    out
}
