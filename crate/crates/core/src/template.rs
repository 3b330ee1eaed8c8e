//! Candidate clause generation from rule templates, template complexity, and
//! complexity-ordered enumeration of program templates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library;
use crate::logic::{Atom, Clause, LanguageFrame, Predicate, Term, MAX_CLAUSE_VARS};

pub const MAX_FRESH_VARS: u8 = 2;

/// `v` extra existential variables; `i` allows intensional body predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleTemplate {
    pub v: u8,
    pub i: bool,
}

impl RuleTemplate {
    pub fn new(v: u8, i: bool) -> Result<Self> {
        if v > MAX_FRESH_VARS {
            return Err(Error::Config(format!(
                "rule template v = {v} exceeds {MAX_FRESH_VARS}"
            )));
        }
        Ok(Self { v, i })
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Predicate::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Frozen clauses added to every sample: named library sets plus literal
/// clauses in the textual grammar.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    #[serde(default)]
    pub libraries: Vec<String>,
    #[serde(default)]
    pub clauses: Vec<String>,
}

impl BackgroundSpec {
    pub fn is_empty(&self) -> bool {
        self.libraries.is_empty() && self.clauses.is_empty()
    }

    pub fn resolve(&self) -> Result<Vec<Clause>> {
        let mut out: Vec<Clause> = Vec::new();
        for name in &self.libraries {
            for c in library::background_library(name)? {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        for text in &self.clauses {
            let c = crate::logic::parse_clause(text)?;
            if !out.contains(&c) {
                out.push(c);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub predicate: Predicate,
    pub templates: Vec<RuleTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramTemplate {
    #[serde(default = "default_steps")]
    pub forward_steps: usize,
    #[serde(default)]
    pub auxiliary: Vec<Predicate>,
    #[serde(default)]
    pub background: BackgroundSpec,
    pub slots: Vec<SlotSpec>,
}

fn default_steps() -> usize {
    10
}

impl ProgramTemplate {
    pub fn from_toml(text: &str) -> Result<Self> {
        let pt: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        pt.validate()?;
        Ok(pt)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.forward_steps == 0 {
            return Err(Error::Config("forward_steps must be positive".into()));
        }
        for s in &self.slots {
            if s.templates.is_empty() || s.templates.len() > 2 {
                return Err(Error::Config(format!(
                    "{} needs 1 or 2 rule templates, got {}",
                    s.predicate,
                    s.templates.len()
                )));
            }
            for t in &s.templates {
                RuleTemplate::new(t.v, t.i)?;
            }
        }
        for a in &self.auxiliary {
            if !self.slots.iter().any(|s| s.predicate == *a) {
                return Err(Error::Config(format!("auxiliary {a} has no slot")));
            }
        }
        Ok(())
    }

    pub fn learnable(&self) -> impl Iterator<Item = &Predicate> {
        self.slots.iter().map(|s| &s.predicate)
    }

    /// A stable textual key, used to break complexity ties.
    pub fn canonical_key(&self) -> String {
        let mut key = String::new();
        for s in &self.slots {
            key.push_str(&s.predicate.to_string());
            key.push('[');
            for t in &s.templates {
                key.push_str(&format!("v{}i{}", t.v, t.i as u8));
            }
            key.push_str("];");
        }
        key.push_str(&format!("aux{:?};T{}", self.auxiliary, self.forward_steps));
        key
    }
}

/// The predicates clause generation may draw body atoms from. Predicates
/// defined by background clauses count as given knowledge and sit with the
/// extensional ones, so `i = false` still lets a rule use them.
#[derive(Debug, Clone, Default)]
pub struct PredicatePool {
    pub extensional: Vec<Predicate>,
    /// Targets and auxiliary predicates.
    pub intensional: Vec<Predicate>,
}

impl PredicatePool {
    pub fn new(extensional: Vec<Predicate>, intensional: Vec<Predicate>) -> Self {
        Self {
            extensional,
            intensional,
        }
    }

    pub fn for_template(frame: &LanguageFrame, pt: &ProgramTemplate) -> Result<Self> {
        let background = pt.background.resolve()?;
        let mut intensional: Vec<Predicate> = Vec::new();
        for p in frame.target_predicates.iter().chain(pt.learnable()) {
            if !intensional.contains(p) {
                intensional.push(p.clone());
            }
        }
        let mut extensional: Vec<Predicate> = Vec::new();
        for p in background
            .iter()
            .map(|c| c.head.signature())
            .chain(frame.extensional_predicates.iter().cloned())
        {
            if !intensional
                .iter()
                .chain(&extensional)
                .any(|q| q.name == p.name)
            {
                extensional.push(p);
            }
        }
        Ok(Self {
            extensional,
            intensional,
        })
    }
}

fn var_tuples(nvars: u8, arity: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..nvars).map(move |v| {
                    let mut t = t.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// All safe, canonical, non-tautological clauses with a two-atom body for
/// `head` under `template`, sorted and free of duplicates.
pub fn generate_clauses(
    head: &Predicate,
    template: RuleTemplate,
    pool: &PredicatePool,
) -> Vec<Clause> {
    let nvars = head.arity + template.v as usize;
    if nvars > MAX_CLAUSE_VARS {
        return Vec::new();
    }
    let nvars = nvars as u8;
    let head_atom = Atom::new(
        head.name.clone(),
        (0..head.arity as u8).map(Term::Var).collect(),
    );

    let mut preds: Vec<&Predicate> = pool.extensional.iter().collect();
    if template.i {
        for p in pool.intensional.iter().chain(std::iter::once(head)) {
            if !preds.iter().any(|q| q.name == p.name) {
                preds.push(p);
            }
        }
    }
    let atoms: Vec<Atom> = preds
        .iter()
        .flat_map(|p| {
            var_tuples(nvars, p.arity)
                .into_iter()
                .map(|vs| Atom::new(p.name.clone(), vs.into_iter().map(Term::Var).collect()))
        })
        .collect();

    let mut out = BTreeSet::new();
    for i in 0..atoms.len() {
        for j in i..atoms.len() {
            if let Ok(c) = Clause::new(head_atom.clone(), vec![atoms[i].clone(), atoms[j].clone()])
            {
                if !c.is_tautology() {
                    out.insert(c);
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Total number of candidate clauses over every (predicate, slot).
pub fn template_complexity(pt: &ProgramTemplate, frame: &LanguageFrame) -> Result<usize> {
    let pool = PredicatePool::for_template(frame, pt)?;
    Ok(pt
        .slots
        .iter()
        .flat_map(|s| s.templates.iter().map(move |t| (&s.predicate, *t)))
        .map(|(p, t)| generate_clauses(p, t, &pool).len())
        .sum())
}

/// Search grid for [`enumerate_templates`].
#[derive(Debug, Clone)]
pub struct TemplateGrid {
    pub v_max: u8,
    pub slot_options: Vec<usize>,
    pub max_auxiliary: usize,
    pub forward_steps: usize,
    pub background: BackgroundSpec,
}

impl Default for TemplateGrid {
    fn default() -> Self {
        Self {
            v_max: MAX_FRESH_VARS,
            slot_options: vec![1, 2],
            max_auxiliary: 2,
            forward_steps: 10,
            background: BackgroundSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankedTemplate {
    pub complexity: usize,
    pub template: ProgramTemplate,
}

/// Every grid point, in non-decreasing complexity with ties ordered by
/// [`ProgramTemplate::canonical_key`]. Auxiliary predicates are named
/// `pred1`, `pred2`, ... and have arity at most 2.
pub fn enumerate_templates(
    frame: &LanguageFrame,
    grid: &TemplateGrid,
) -> Result<Vec<RankedTemplate>> {
    let v_max = grid.v_max.min(MAX_FRESH_VARS);
    let mut choices = Vec::new();
    for v in 0..=v_max {
        for i in [false, true] {
            for &n in &grid.slot_options {
                if (1..=2).contains(&n) {
                    choices.push(vec![RuleTemplate { v, i }; n]);
                }
            }
        }
    }
    if choices.is_empty() {
        return Ok(Vec::new());
    }

    let mut out = Vec::new();
    for n_aux in 0..=grid.max_auxiliary {
        for arities in nondecreasing(n_aux, 2) {
            let aux: Vec<Predicate> = arities
                .iter()
                .enumerate()
                .map(|(k, a)| Predicate::new(format!("pred{}", k + 1), *a))
                .collect::<Result<_>>()?;
            let learnable: Vec<Predicate> = frame
                .target_predicates
                .iter()
                .cloned()
                .chain(aux.iter().cloned())
                .collect();
            let k = learnable.len();
            let total = choices.len().pow(k as u32);
            for code in 0..total {
                let mut rem = code;
                let mut slots = Vec::with_capacity(k);
                for p in &learnable {
                    slots.push(SlotSpec {
                        predicate: p.clone(),
                        templates: choices[rem % choices.len()].clone(),
                    });
                    rem /= choices.len();
                }
                let pt = ProgramTemplate {
                    forward_steps: grid.forward_steps,
                    auxiliary: aux.clone(),
                    background: grid.background.clone(),
                    slots,
                };
                let complexity = template_complexity(&pt, frame)?;
                out.push(RankedTemplate {
                    complexity,
                    template: pt,
                });
            }
        }
    }
    out.sort_by_cached_key(|r| (r.complexity, r.template.canonical_key()));
    Ok(out)
}

fn nondecreasing(len: usize, max: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for prefix in nondecreasing(len - 1, max) {
        let lo = prefix.last().copied().unwrap_or(0);
        for a in lo..=max {
            let mut p = prefix.clone();
            p.push(a);
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parse_clause;

    fn p(s: &str) -> Predicate {
        Predicate::parse(s).unwrap()
    }

    fn qr_pool() -> PredicatePool {
        PredicatePool::new(vec![p("q/1"), p("r/1")], vec![])
    }

    #[test]
    fn two_unary_predicates_give_three_clauses() {
        let got = generate_clauses(&p("p/1"), RuleTemplate { v: 0, i: true }, &qr_pool());
        let want: BTreeSet<Clause> = [
            "p(X) <- q(X), q(X)",
            "p(X) <- r(X), r(X)",
            "p(X) <- q(X), r(X)",
        ]
        .iter()
        .map(|s| parse_clause(s).unwrap())
        .collect();
        assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), want);
    }

    #[test]
    fn no_extensional_and_no_intensional_gives_nothing() {
        let pool = PredicatePool::new(vec![], vec![p("aux/1")]);
        assert!(generate_clauses(&p("p/1"), RuleTemplate { v: 0, i: false }, &pool).is_empty());
    }

    #[test]
    fn all_definition_is_a_candidate() {
        let pool = PredicatePool::new(
            vec![p("true/1"), p("succ/2"), p("terminal/1")],
            vec![p("pred1/2"), p("all/1")],
        );
        let got = generate_clauses(&p("all/1"), RuleTemplate { v: 1, i: true }, &pool);
        let want = parse_clause("all(V0) <- true(V0), pred1(V0, V1)").unwrap();
        assert!(got.contains(&want));
        for c in &got {
            assert!(!c.is_tautology());
        }
    }

    #[test]
    fn fresh_variables_beyond_limit_yield_nothing() {
        let pool = PredicatePool::new(vec![p("e/2")], vec![]);
        assert!(generate_clauses(&p("t/2"), RuleTemplate { v: 2, i: false }, &pool).is_empty());
    }

    fn qr_frame() -> LanguageFrame {
        LanguageFrame::new(vec![p("p/1")], vec![p("q/1"), p("r/1")]).unwrap()
    }

    fn single(v: u8, i: bool, n: usize) -> ProgramTemplate {
        ProgramTemplate {
            forward_steps: 1,
            auxiliary: vec![],
            background: BackgroundSpec::default(),
            slots: vec![SlotSpec {
                predicate: p("p/1"),
                templates: vec![RuleTemplate { v, i }; n],
            }],
        }
    }

    #[test]
    fn complexity_counts_candidates() {
        let frame = qr_frame();
        assert_eq!(template_complexity(&single(0, true, 1), &frame).unwrap(), 3);
        assert_eq!(template_complexity(&single(0, true, 2), &frame).unwrap(), 6);
        let empty = LanguageFrame::new(vec![p("p/1")], vec![]).unwrap();
        assert_eq!(
            template_complexity(&single(0, false, 1), &empty).unwrap(),
            0
        );
    }

    #[test]
    fn template_toml_round_trip() {
        let text = r#"
            forward_steps = 4
            auxiliary = ["pred1/2"]
            [background]
            libraries = ["all"]
            [[slots]]
            predicate = "p/1"
            templates = [{ v = 0, i = true }, { v = 1, i = false }]
            [[slots]]
            predicate = "pred1/2"
            templates = [{ v = 0, i = true }]
        "#;
        let pt = ProgramTemplate::from_toml(text).unwrap();
        assert_eq!(pt.slots[0].templates[1], RuleTemplate { v: 1, i: false });
        assert_eq!(ProgramTemplate::from_toml(&pt.to_toml()).unwrap(), pt);
    }

    #[test]
    fn enumeration_is_ordered_and_exhaustive() {
        let frame = qr_frame();
        let grid = TemplateGrid {
            v_max: 1,
            slot_options: vec![1],
            max_auxiliary: 0,
            forward_steps: 1,
            background: BackgroundSpec::default(),
        };
        let ranked = enumerate_templates(&frame, &grid).unwrap();
        assert_eq!(ranked.len(), 4);
        for w in ranked.windows(2) {
            assert!(w[0].complexity <= w[1].complexity);
        }
        let keys: BTreeSet<String> = ranked.iter().map(|r| r.template.canonical_key()).collect();
        assert_eq!(keys.len(), 4);
        let pos = |v: u8| {
            ranked
                .iter()
                .position(|r| r.template.slots[0].templates[0] == RuleTemplate { v, i: true })
                .unwrap()
        };
        assert!(pos(0) < pos(1));
    }
}
