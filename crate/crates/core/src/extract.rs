//! Reading a trained model back as a symbolic program, and running that
//! program with ordinary boolean forward chaining.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::infer::{closed_world_negatives, infer, Sample, TrainedModel};
use crate::logic::{parse_clause, Atom, Clause, Predicate, Term};

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramSlot {
    pub predicate: Predicate,
    /// Argmax clause first, then any others above the threshold in
    /// descending probability.
    pub clauses: Vec<(Clause, f64)>,
}

impl ProgramSlot {
    pub fn argmax(&self) -> &Clause {
        &self.clauses[0].0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProgram {
    pub slots: Vec<ProgramSlot>,
    pub background: Vec<Clause>,
    pub targets: Vec<Predicate>,
    pub forward_steps: usize,
}

impl PolicyProgram {
    /// The clauses crisp inference runs: one argmax per slot, then the
    /// background.
    pub fn active_clauses(&self) -> Vec<&Clause> {
        self.slots
            .iter()
            .map(ProgramSlot::argmax)
            .chain(self.background.iter())
            .collect()
    }

    /// Argmax clauses of every slot for `predicate`.
    pub fn argmax_for(&self, predicate: &str) -> Vec<&Clause> {
        self.slots
            .iter()
            .filter(|s| s.predicate.name == predicate)
            .map(ProgramSlot::argmax)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "@steps {}", self.forward_steps).unwrap();
        let targets: Vec<String> = self.targets.iter().map(Predicate::to_string).collect();
        writeln!(out, "@targets {}", targets.join(" ")).unwrap();
        writeln!(out, "@background").unwrap();
        for c in &self.background {
            writeln!(out, "{c}").unwrap();
        }
        for s in &self.slots {
            writeln!(out, "@slot {}", s.predicate).unwrap();
            for (c, p) in &s.clauses {
                writeln!(out, "{p} {c}").unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut prog = PolicyProgram {
            slots: Vec::new(),
            background: Vec::new(),
            targets: Vec::new(),
            forward_steps: 0,
        };
        let mut in_background = false;
        let bad =
            |line: usize, msg: &str| Error::Config(format!("program line {}: {msg}", line + 1));
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("@steps") {
                prog.forward_steps = rest.trim().parse().map_err(|_| bad(n, "bad step count"))?;
            } else if let Some(rest) = line.strip_prefix("@targets") {
                prog.targets = rest
                    .split_whitespace()
                    .map(Predicate::parse)
                    .collect::<Result<_>>()?;
            } else if line == "@background" {
                in_background = true;
            } else if let Some(rest) = line.strip_prefix("@slot") {
                in_background = false;
                prog.slots.push(ProgramSlot {
                    predicate: Predicate::parse(rest.trim())?,
                    clauses: Vec::new(),
                });
            } else if in_background {
                prog.background.push(parse_clause(line)?);
            } else {
                let slot = prog
                    .slots
                    .last_mut()
                    .ok_or_else(|| bad(n, "clause outside a slot"))?;
                let (p, c) = line
                    .split_once(' ')
                    .ok_or_else(|| bad(n, "expected `prob clause`"))?;
                let p: f64 = p.parse().map_err(|_| bad(n, "bad probability"))?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(bad(n, "probability outside (0, 1]"));
                }
                slot.clauses.push((parse_clause(c)?, p));
            }
        }
        if let Some(s) = prog.slots.iter().find(|s| s.clauses.is_empty()) {
            return Err(Error::Config(format!(
                "slot {} has no clauses",
                s.predicate
            )));
        }
        if prog.forward_steps == 0 {
            return Err(Error::Config("program has no @steps line".into()));
        }
        Ok(prog)
    }
}

/// Per slot, keeps the argmax clause and every clause with probability at
/// least `threshold`.
pub fn extract_program(trained: &TrainedModel, threshold: f64) -> Result<PolicyProgram> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    let probs = trained.weights.probabilities();
    let mut slots = Vec::new();
    for (slot, p) in trained.pool.slots.iter().zip(&probs) {
        if slot.clauses.is_empty() {
            continue;
        }
        let mut best = 0;
        for (k, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = k;
            }
        }
        let mut rest: Vec<usize> = (0..p.len())
            .filter(|&k| k != best && p[k] >= threshold)
            .collect();
        rest.sort_by(|a, b| p[*b].total_cmp(&p[*a]).then(a.cmp(b)));
        let clauses = std::iter::once(best)
            .chain(rest)
            .map(|k| (slot.clauses[k].clone(), p[k]))
            .collect();
        slots.push(ProgramSlot {
            predicate: slot.predicate.clone(),
            clauses,
        });
    }
    Ok(PolicyProgram {
        slots,
        background: trained.pool.background.clone(),
        targets: trained.pool.targets.clone(),
        forward_steps: trained.pool.forward_steps,
    })
}

type Facts = HashMap<String, BTreeSet<Vec<String>>>;

fn match_atom(pattern: &Atom, tuple: &[String], binding: &mut [Option<String>; 4]) -> bool {
    let saved = binding.clone();
    for (t, c) in pattern.args.iter().zip(tuple) {
        let ok = match t {
            Term::Const(k) => k == c,
            Term::Var(v) => match &binding[*v as usize] {
                Some(b) => b == c,
                None => {
                    binding[*v as usize] = Some(c.clone());
                    true
                }
            },
        };
        if !ok {
            *binding = saved;
            return false;
        }
    }
    true
}

fn instantiate(head: &Atom, binding: &[Option<String>; 4]) -> Option<Atom> {
    let args = head
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Some(Term::Const(c.clone())),
            Term::Var(v) => binding[*v as usize].clone().map(Term::Const),
        })
        .collect::<Option<Vec<_>>>()?;
    Some(Atom::new(head.predicate.clone(), args))
}

fn fire(clause: &Clause, facts: &Facts, out: &mut Vec<Atom>) {
    let empty = BTreeSet::new();
    let first = facts.get(&clause.body[0].predicate).unwrap_or(&empty);
    let second = facts.get(&clause.body[1].predicate).unwrap_or(&empty);
    for t0 in first {
        let mut b: [Option<String>; 4] = Default::default();
        if !match_atom(&clause.body[0], t0, &mut b) {
            continue;
        }
        for t1 in second {
            let mut b1 = b.clone();
            if match_atom(&clause.body[1], t1, &mut b1) {
                if let Some(h) = instantiate(&clause.head, &b1) {
                    out.push(h);
                }
            }
        }
    }
}

fn tuple(a: &Atom) -> Vec<String> {
    a.args
        .iter()
        .map(|t| match t {
            Term::Const(c) => c.clone(),
            Term::Var(v) => format!("V{v}"),
        })
        .collect()
}

/// Every atom derivable from `background` with `clauses` in at most
/// `steps` parallel rounds, including the background itself. Derived atoms
/// with constants outside `constants` are dropped.
pub fn crisp_closure(
    clauses: &[&Clause],
    background: &[Atom],
    constants: &[String],
    steps: usize,
) -> BTreeSet<Atom> {
    let allowed: BTreeSet<&str> = constants.iter().map(String::as_str).collect();
    let mut facts: Facts = HashMap::new();
    let mut all: BTreeSet<Atom> = BTreeSet::new();
    for a in background {
        facts
            .entry(a.predicate.clone())
            .or_default()
            .insert(tuple(a));
        all.insert(a.clone());
    }
    for _ in 0..steps {
        let mut new = Vec::new();
        for c in clauses {
            fire(c, &facts, &mut new);
        }
        let mut changed = false;
        for a in new {
            if a.constants().all(|c| allowed.contains(c)) && all.insert(a.clone()) {
                facts
                    .entry(a.predicate.clone())
                    .or_default()
                    .insert(tuple(&a));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    all
}

/// Target atoms derived by the program's argmax clauses and background.
pub fn crisp_infer(
    program: &PolicyProgram,
    background: &[Atom],
    constants: &[String],
) -> BTreeSet<Atom> {
    let clauses = program.active_clauses();
    crisp_closure(&clauses, background, constants, program.forward_steps)
        .into_iter()
        .filter(|a| program.targets.iter().any(|t| t.name == a.predicate))
        .collect()
}

/// Fraction of target groundings where the fuzzy valuation (thresholded at
/// 0.5) agrees with crisp inference. Vacuously 1 with no samples.
pub fn agreement(
    trained: &TrainedModel,
    program: &PolicyProgram,
    samples: &[Sample],
) -> Result<f64> {
    let cache = trained.cache();
    let mut total = 0usize;
    let mut agree = 0usize;
    for s in samples {
        let model = cache.get(&s.constants)?;
        let v = infer(
            &model,
            &trained.weights,
            s,
            trained.hyperparams.amalgamation,
        )?;
        let crisp = crisp_infer(program, &s.background, &s.constants);
        for atom in closed_world_negatives(&program.targets, &s.constants, &[]) {
            let fuzzy = v.get(model.index(), &atom).unwrap_or(0.0) >= 0.5;
            total += 1;
            if fuzzy == crisp.contains(&atom) {
                agree += 1;
            }
        }
    }
    Ok(if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::background_library;
    use crate::logic::parse_atom;

    fn atoms(xs: &[&str]) -> Vec<Atom> {
        xs.iter().map(|x| parse_atom(x).unwrap()).collect()
    }

    fn consts(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn closure_follows_list() {
        let all = background_library("all").unwrap();
        let refs: Vec<&Clause> = all.iter().collect();
        let bg = atoms(&[
            "terminal(t)",
            "succ(a, b)",
            "succ(b, t)",
            "true(a)",
            "true(b)",
        ]);
        let out = crisp_closure(&refs, &bg, &consts(&["a", "b", "t"]), 10);
        assert!(out.contains(&parse_atom("all(a)").unwrap()));
        assert!(out.contains(&parse_atom("all(b)").unwrap()));
        assert!(!out.contains(&parse_atom("all(t)").unwrap()));
        // Three rounds reach all(b) but not all(a).
        let short = crisp_closure(&refs, &bg, &consts(&["a", "b", "t"]), 3);
        assert!(short.contains(&parse_atom("all(b)").unwrap()));
        assert!(!short.contains(&parse_atom("all(a)").unwrap()));
    }

    fn tiny_program() -> PolicyProgram {
        PolicyProgram {
            slots: vec![ProgramSlot {
                predicate: Predicate::parse("sys_inform/1").unwrap(),
                clauses: vec![
                    (parse_clause("sys_inform(X) <- kb_return(X)").unwrap(), 0.75),
                    (
                        parse_clause("sys_inform(X) <- kb_return(X), unknown(X)").unwrap(),
                        0.25,
                    ),
                ],
            }],
            background: vec![],
            targets: vec![Predicate::parse("sys_inform/1").unwrap()],
            forward_steps: 3,
        }
    }

    #[test]
    fn empty_background_derives_nothing() {
        assert!(crisp_infer(&tiny_program(), &[], &consts(&["a"])).is_empty());
    }

    #[test]
    fn program_text_round_trip() {
        let p = tiny_program();
        let back = PolicyProgram::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn program_text_rejects_orphan_clause() {
        assert!(PolicyProgram::from_text("@steps 2\n0.5 p(X) <- q(X)\n").is_err());
        assert!(PolicyProgram::from_text("@slot p/1\n0.5 p(X) <- q(X)\n").is_err());
    }

    #[test]
    fn only_argmax_runs() {
        let got = crisp_infer(
            &tiny_program(),
            &atoms(&["kb_return(a)", "known(a)"]),
            &consts(&["a"]),
        );
        assert_eq!(got, atoms(&["sys_inform(a)"]).into_iter().collect());
    }
}
