//! Differentiable forward chaining over ground atoms.
//!
//! A valuation assigns every ground atom a truth value in `[0, 1]`. One
//! inference step evaluates every candidate clause on the current valuation
//! (product for the body conjunction, max over groundings sharing a head),
//! mixes the clauses of each slot by the softmax of that slot's weights,
//! joins the two slots of a predicate by probabilistic sum, applies the
//! frozen background clauses with weight one, and amalgamates the result
//! into the valuation by element-wise max.
//!
//! Gradients are computed by hand in reverse mode. The backward pass
//! recomputes each step's intermediates from the stored valuations instead
//! of keeping them alive across all steps.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{ground_clause, Atom, Clause, GroundIndex, LanguageFrame, Predicate, Term};
use crate::template::{generate_clauses, PredicatePool, ProgramTemplate, RuleTemplate};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the log loss.
pub const EPS: f64 = 1e-6;
pub const DEFAULT_CLAUSE_BUDGET: usize = 50_000;

static VIOLATIONS: AtomicU64 = AtomicU64::new(0);
static CHECKED_STEPS: AtomicU64 = AtomicU64::new(0);

/// Number of range or monotonicity violations seen by any forward pass in
/// this process.
pub fn invariant_violations() -> u64 {
    VIOLATIONS.load(Ordering::Relaxed)
}

/// Number of forward steps that went through the invariant check.
pub fn checked_steps() -> u64 {
    CHECKED_STEPS.load(Ordering::Relaxed)
}

// --- samples ----------------------------------------------------------------

/// One training instance: background facts, positive and negative target
/// atoms, and the constants they ground over.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub background: Vec<Atom>,
    pub positive: Vec<Atom>,
    pub negative: Vec<Atom>,
    pub constants: Vec<String>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let consts: BTreeSet<&str> = self.constants.iter().map(String::as_str).collect();
        if consts.is_empty() {
            return Err(Error::EmptyConstants);
        }
        if consts.len() != self.constants.len() {
            return Err(Error::InvalidSample("duplicate constants".into()));
        }
        for a in self
            .background
            .iter()
            .chain(&self.positive)
            .chain(&self.negative)
        {
            if !a.is_ground() {
                return Err(Error::InvalidSample(format!("`{a}` is not ground")));
            }
            if let Some(c) = a.constants().find(|c| !consts.contains(c)) {
                return Err(Error::InvalidSample(format!(
                    "`{a}` uses unknown constant {c}"
                )));
            }
        }
        let pos: BTreeSet<&Atom> = self.positive.iter().collect();
        if let Some(a) = self.negative.iter().find(|a| pos.contains(a)) {
            return Err(Error::InvalidSample(format!(
                "`{a}` is both positive and negative"
            )));
        }
        Ok(())
    }

    pub fn rename_constants(&self, map: &HashMap<String, String>) -> Sample {
        let r = |v: &Vec<Atom>| v.iter().map(|a| a.rename_constants(map)).collect();
        Sample {
            background: r(&self.background),
            positive: r(&self.positive),
            negative: r(&self.negative),
            constants: self
                .constants
                .iter()
                .map(|c| map.get(c).cloned().unwrap_or_else(|| c.clone()))
                .collect(),
        }
    }
}

/// Every grounding of `targets` over `constants` that is not in `positive`.
pub fn closed_world_negatives(
    targets: &[Predicate],
    constants: &[String],
    positive: &[Atom],
) -> Vec<Atom> {
    let pos: BTreeSet<&Atom> = positive.iter().collect();
    let mut out = Vec::new();
    for p in targets {
        let mut tuples: Vec<Vec<Term>> = vec![vec![]];
        for _ in 0..p.arity {
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    constants.iter().map(move |c| {
                        let mut t = t.clone();
                        t.push(Term::Const(c.clone()));
                        t
                    })
                })
                .collect();
        }
        for args in tuples {
            let a = Atom::new(p.name.clone(), args);
            if !pos.contains(&a) {
                out.push(a);
            }
        }
    }
    out
}

/// Extensional predicates seen in the samples' backgrounds, sorted by name,
/// excluding anything in `intensional`.
pub fn frame_from_samples(
    targets: Vec<Predicate>,
    samples: &[Sample],
    intensional: &[Predicate],
) -> Result<LanguageFrame> {
    let mut ext: BTreeSet<Predicate> = BTreeSet::new();
    for s in samples {
        for a in &s.background {
            let p = a.signature();
            if !intensional.iter().any(|q| q.name == p.name)
                && !targets.iter().any(|q| q.name == p.name)
            {
                ext.insert(p);
            }
        }
    }
    LanguageFrame::new(targets, ext.into_iter().collect())
}

// --- hyperparameters ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amalgamation {
    #[default]
    Max,
    ProbSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    #[default]
    None,
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub training_steps: usize,
    pub reg_kind: RegKind,
    pub reg_lambda: f64,
    pub seed: u64,
    pub init_scale: f64,
    /// Initial weight offset per extra distinct body atom; a prior toward
    /// shorter clauses among ones the data cannot tell apart.
    pub succinct_prior: f64,
    pub amalgamation: Amalgamation,
    pub clause_budget: usize,
    /// Independent runs from seeds `seed, seed + 1, ...`; the one with the
    /// lowest final loss is kept.
    pub restarts: usize,
    /// Stop a run early once the loss drops below this; 0 disables.
    pub target_loss: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            training_steps: 6000,
            reg_kind: RegKind::None,
            reg_lambda: 0.0,
            seed: 0,
            init_scale: 0.1,
            succinct_prior: 0.0,
            amalgamation: Amalgamation::Max,
            clause_budget: DEFAULT_CLAUSE_BUDGET,
            restarts: 1,
            target_loss: 0.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.reg_lambda.is_nan() || self.reg_lambda < 0.0 {
            return Err(Error::Config("reg_lambda must be non-negative".into()));
        }
        if self.init_scale.is_nan() || self.init_scale < 0.0 || !self.succinct_prior.is_finite() {
            return Err(Error::Config("bad initialisation parameters".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let hp: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        hp.validate()?;
        Ok(hp)
    }
}

// --- clause pool ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub predicate: Predicate,
    pub template: RuleTemplate,
    pub clauses: Vec<Clause>,
}

/// Candidate clauses per slot plus the frozen background; independent of
/// any constant set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClausePool {
    pub slots: Vec<Slot>,
    pub background: Vec<Clause>,
    /// Every predicate the ground index must cover, in index order.
    pub predicates: Vec<Predicate>,
    pub targets: Vec<Predicate>,
    pub forward_steps: usize,
}

impl ClausePool {
    pub fn build(pt: &ProgramTemplate, frame: &LanguageFrame, budget: usize) -> Result<Self> {
        pt.validate()?;
        frame.validate()?;
        let background = pt.background.resolve()?;
        let pool = PredicatePool::for_template(frame, pt)?;

        let mut slots = Vec::new();
        for spec in &pt.slots {
            for t in &spec.templates {
                slots.push(Slot {
                    predicate: spec.predicate.clone(),
                    template: *t,
                    clauses: generate_clauses(&spec.predicate, *t, &pool),
                });
            }
        }
        let count: usize = slots.iter().map(|s| s.clauses.len()).sum();
        if count > budget {
            return Err(Error::ClauseBudget { count, budget });
        }

        let mut predicates: Vec<Predicate> = Vec::new();
        let mut add = |p: Predicate| {
            if !predicates.iter().any(|q| q.name == p.name) {
                predicates.push(p);
            }
        };
        for p in &frame.extensional_predicates {
            add(p.clone());
        }
        for c in &background {
            add(c.head.signature());
            for b in &c.body {
                add(b.signature());
            }
        }
        for p in &frame.target_predicates {
            add(p.clone());
        }
        for s in &pt.slots {
            add(s.predicate.clone());
        }
        let mut sig = crate::logic::Signature::default();
        for p in &predicates {
            sig.declare(p)?;
        }
        for c in &background {
            for a in std::iter::once(&c.head).chain(c.body.iter()) {
                sig.declare(&a.signature())?;
            }
        }

        Ok(Self {
            slots,
            background,
            predicates,
            targets: frame.target_predicates.clone(),
            forward_steps: pt.forward_steps,
        })
    }

    pub fn num_clauses(&self) -> usize {
        self.slots.iter().map(|s| s.clauses.len()).sum()
    }

    pub fn learnable(&self) -> Vec<Predicate> {
        let mut out: Vec<Predicate> = Vec::new();
        for s in &self.slots {
            if !out.contains(&s.predicate) {
                out.push(s.predicate.clone());
            }
        }
        out
    }

    /// Compiles against one constant list.
    pub fn compile(self: &Arc<Self>, constants: &[String]) -> Result<CompiledModel> {
        let index = GroundIndex::new(&self.predicates, constants)?;
        let mut slots = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            let range = index
                .range_of(&s.predicate.name)
                .expect("learnable predicate is indexed");
            let tables = s
                .clauses
                .iter()
                .map(|c| ClauseTable::build(c, &index, range.start))
                .collect();
            slots.push(CompiledSlot { range, tables });
        }
        let mut groups: Vec<PredGroup> = Vec::new();
        for (k, s) in self.slots.iter().enumerate() {
            match groups.iter_mut().find(|g| g.name == s.predicate.name) {
                Some(g) => g.slots.push(k),
                None => groups.push(PredGroup {
                    name: s.predicate.name.clone(),
                    range: slots[k].range.clone(),
                    slots: vec![k],
                }),
            }
        }
        if let Some(g) = groups.iter().find(|g| g.slots.len() > 2) {
            return Err(Error::Config(format!("{} has more than two slots", g.name)));
        }
        let background = self
            .background
            .iter()
            .map(|c| ClauseTable::build(c, &index, 0))
            .collect();
        Ok(CompiledModel {
            pool: Arc::clone(self),
            index,
            slots,
            groups,
            background,
            forward_steps: self.forward_steps,
        })
    }
}

/// Groundings of one clause, grouped by head. Heads are stored relative to
/// `base`.
#[derive(Debug, Clone)]
struct ClauseTable {
    heads: Vec<u32>,
    starts: Vec<u32>,
    bodies: Vec<[u32; 2]>,
}

impl ClauseTable {
    fn build(clause: &Clause, index: &GroundIndex, base: usize) -> Self {
        let mut gs = ground_clause(clause, index);
        gs.sort_by_key(|g| g.head);
        let mut heads = Vec::new();
        let mut starts = Vec::new();
        let mut bodies = Vec::with_capacity(gs.len());
        for (i, g) in gs.iter().enumerate() {
            if i == 0 || gs[i - 1].head != g.head {
                heads.push((g.head - base) as u32);
                starts.push(i as u32);
            }
            bodies.push([g.body[0] as u32, g.body[1] as u32]);
        }
        starts.push(bodies.len() as u32);
        Self {
            heads,
            starts,
            bodies,
        }
    }

    fn groups(&self) -> impl Iterator<Item = (usize, Range<usize>)> + '_ {
        self.heads.iter().enumerate().map(|(k, h)| {
            (
                *h as usize,
                self.starts[k] as usize..self.starts[k + 1] as usize,
            )
        })
    }
}

#[derive(Debug, Clone)]
struct CompiledSlot {
    range: Range<usize>,
    tables: Vec<ClauseTable>,
}

#[derive(Debug, Clone)]
struct PredGroup {
    name: String,
    range: Range<usize>,
    slots: Vec<usize>,
}

/// A clause pool grounded over one constant list. Immutable.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pool: Arc<ClausePool>,
    index: GroundIndex,
    slots: Vec<CompiledSlot>,
    groups: Vec<PredGroup>,
    background: Vec<ClauseTable>,
    pub forward_steps: usize,
}

impl CompiledModel {
    pub fn index(&self) -> &GroundIndex {
        &self.index
    }

    pub fn pool(&self) -> &Arc<ClausePool> {
        &self.pool
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Number of candidate clauses in each slot.
    pub fn slot_sizes(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.tables.len()).collect()
    }
}

/// Builds the clause pool and grounds it over `constants`.
pub fn compile(
    pt: &ProgramTemplate,
    frame: &LanguageFrame,
    constants: &[String],
) -> Result<CompiledModel> {
    let pool = Arc::new(ClausePool::build(pt, frame, DEFAULT_CLAUSE_BUDGET)?);
    pool.compile(constants)
}

/// Compiled models keyed on their constant list.
#[derive(Debug)]
pub struct ModelCache {
    pool: Arc<ClausePool>,
    cache: Mutex<HashMap<Vec<String>, Arc<CompiledModel>>>,
}

impl ModelCache {
    pub fn new(pool: Arc<ClausePool>) -> Self {
        Self {
            pool,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, constants: &[String]) -> Result<Arc<CompiledModel>> {
        if let Some(m) = self.cache.lock().unwrap().get(constants) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(self.pool.compile(constants)?);
        self.cache
            .lock()
            .unwrap()
            .insert(constants.to_vec(), Arc::clone(&m));
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// --- weights --------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseWeights {
    pub slots: Vec<Vec<f64>>,
}

impl ClauseWeights {
    pub fn zeros(pool: &ClausePool) -> Self {
        Self {
            slots: pool
                .slots
                .iter()
                .map(|s| vec![0.0; s.clauses.len()])
                .collect(),
        }
    }

    /// Zero-centred uniform initialisation, shifted down by `prior` for each
    /// distinct body atom beyond the first.
    pub fn random(pool: &ClausePool, scale: f64, prior: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            slots: pool
                .slots
                .iter()
                .map(|s| {
                    s.clauses
                        .iter()
                        .map(|c| {
                            let extra = if c.body[0] == c.body[1] { 0.0 } else { 1.0 };
                            scale * rng.gen_range(-1.0..1.0) - prior * extra
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Weights that put (almost) all mass on one clause per slot.
    pub fn one_hot(pool: &ClausePool, choice: &[usize], strength: f64) -> Self {
        Self {
            slots: pool
                .slots
                .iter()
                .zip(choice)
                .map(|(s, &c)| {
                    (0..s.clauses.len())
                        .map(|k| if k == c { strength } else { 0.0 })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.slots.iter().map(|w| softmax(w)).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slots.iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for s in &mut self.slots {
            for w in s.iter_mut() {
                *w = *it.next().expect("length matches");
            }
        }
    }

    pub fn len(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn softmax(w: &[f64]) -> Vec<f64> {
    if w.is_empty() {
        return Vec::new();
    }
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

// --- valuation and forward pass ---------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Valuation {
    pub values: Vec<f64>,
}

impl Valuation {
    pub fn get(&self, index: &GroundIndex, atom: &Atom) -> Option<f64> {
        index.index_of(atom).map(|i| self.values[i])
    }
}

pub fn init_valuation(sample: &Sample, model: &CompiledModel) -> Result<Valuation> {
    let mut values = vec![0.0; model.index.len()];
    for a in &sample.background {
        let i = model
            .index
            .index_of(a)
            .ok_or_else(|| Error::UnknownAtom(a.to_string()))?;
        values[i] = 1.0;
    }
    Ok(Valuation { values })
}

/// Intermediates of one step, kept for the backward pass.
struct StepState {
    /// Per slot: per clause, per local head, the best body product.
    m: Vec<Vec<f64>>,
    /// Grounding index achieving `m`, or `u32::MAX`.
    arg: Vec<Vec<u32>>,
    /// Per slot mixture over its clauses.
    y: Vec<Vec<f64>>,
    /// Learnable contribution, global index.
    learn: Vec<f64>,
    /// Background contribution and its (clause, grounding).
    bg: Vec<f64>,
    bg_arg: Vec<(u32, u32)>,
    /// Combined derived value per atom.
    d: Vec<f64>,
}

fn best_product(a: &[f64], bodies: &[[u32; 2]], range: Range<usize>) -> (f64, u32) {
    let mut best = -1.0;
    let mut arg = u32::MAX;
    for j in range {
        let [b0, b1] = bodies[j];
        let v = a[b0 as usize] * a[b1 as usize];
        if v > best {
            best = v;
            arg = j as u32;
        }
    }
    (best.max(0.0), arg)
}

fn compute_step(model: &CompiledModel, probs: &[Vec<f64>], a: &[f64]) -> StepState {
    let g = a.len();
    let mut m = Vec::with_capacity(model.slots.len());
    let mut arg = Vec::with_capacity(model.slots.len());
    let mut y = Vec::with_capacity(model.slots.len());
    for (s, slot) in model.slots.iter().enumerate() {
        let n = slot.range.len();
        let k = slot.tables.len();
        let mut ms = vec![0.0; k * n];
        let mut args = vec![u32::MAX; k * n];
        let mut ys = vec![0.0; n];
        for (c, table) in slot.tables.iter().enumerate() {
            let pi = probs[s][c];
            for (h, r) in table.groups() {
                let (v, j) = best_product(a, &table.bodies, r);
                ms[c * n + h] = v;
                args[c * n + h] = j;
                ys[h] += pi * v;
            }
        }
        m.push(ms);
        arg.push(args);
        y.push(ys);
    }

    let mut learn = vec![0.0; g];
    for grp in &model.groups {
        let base = grp.range.start;
        match grp.slots.as_slice() {
            [s] => {
                for (h, v) in y[*s].iter().enumerate() {
                    learn[base + h] = *v;
                }
            }
            [s0, s1] => {
                for h in 0..grp.range.len() {
                    let (u, v) = (y[*s0][h], y[*s1][h]);
                    learn[base + h] = u + v - u * v;
                }
            }
            _ => unreachable!("one or two slots per predicate"),
        }
    }

    let mut bg = vec![0.0; g];
    let mut bg_arg = vec![(u32::MAX, u32::MAX); g];
    for (c, table) in model.background.iter().enumerate() {
        for (h, r) in table.groups() {
            let (v, j) = best_product(a, &table.bodies, r);
            if j != u32::MAX && (bg_arg[h].0 == u32::MAX || v > bg[h]) {
                bg[h] = v;
                bg_arg[h] = (c as u32, j);
            }
        }
    }

    let d = learn
        .iter()
        .zip(&bg)
        .map(|(l, b)| if *l >= *b { *l } else { *b })
        .collect();
    StepState {
        m,
        arg,
        y,
        learn,
        bg,
        bg_arg,
        d,
    }
}

fn amalgamate(kind: Amalgamation, old: f64, new: f64) -> f64 {
    match kind {
        Amalgamation::Max => {
            if old >= new {
                old
            } else {
                new
            }
        }
        Amalgamation::ProbSum => old + new * (1.0 - old),
    }
}

fn forward_step(
    model: &CompiledModel,
    probs: &[Vec<f64>],
    a: &[f64],
    kind: Amalgamation,
) -> Vec<f64> {
    let st = compute_step(model, probs, a);
    let mut out: Vec<f64> = a
        .iter()
        .zip(&st.d)
        .map(|(old, d)| amalgamate(kind, *old, *d))
        .collect();
    out[0] = 0.0;
    let mut bad = 0;
    for (new, old) in out.iter_mut().zip(a) {
        if !(-1e-12..=1.0 + 1e-12).contains(new) || *new < *old {
            bad += 1;
        }
        *new = new.clamp(0.0, 1.0);
    }
    CHECKED_STEPS.fetch_add(1, Ordering::Relaxed);
    if bad > 0 {
        VIOLATIONS.fetch_add(bad, Ordering::Relaxed);
    }
    out
}

/// One inference step.
pub fn step(
    model: &CompiledModel,
    weights: &ClauseWeights,
    valuation: &Valuation,
    kind: Amalgamation,
) -> Valuation {
    let probs = weights.probabilities();
    Valuation {
        values: forward_step(model, &probs, &valuation.values, kind),
    }
}

/// Valuations after 0, 1, ..., T steps.
pub fn infer_trace(
    model: &CompiledModel,
    weights: &ClauseWeights,
    sample: &Sample,
    kind: Amalgamation,
) -> Result<Vec<Valuation>> {
    let probs = weights.probabilities();
    let mut trace = vec![init_valuation(sample, model)?];
    for _ in 0..model.forward_steps {
        let next = forward_step(model, &probs, &trace.last().unwrap().values, kind);
        trace.push(Valuation { values: next });
    }
    Ok(trace)
}

pub fn infer(
    model: &CompiledModel,
    weights: &ClauseWeights,
    sample: &Sample,
    kind: Amalgamation,
) -> Result<Valuation> {
    Ok(infer_trace(model, weights, sample, kind)?.pop().unwrap())
}

// --- loss and gradient --------------------------------------------------------------

fn labelled(sample: &Sample, model: &CompiledModel) -> Result<Vec<(usize, bool)>> {
    let look = |a: &Atom| {
        model
            .index
            .index_of(a)
            .ok_or_else(|| Error::UnknownAtom(a.to_string()))
    };
    let mut out = Vec::with_capacity(sample.positive.len() + sample.negative.len());
    for a in &sample.positive {
        out.push((look(a)?, true));
    }
    for a in &sample.negative {
        out.push((look(a)?, false));
    }
    Ok(out)
}

/// Mean log loss over the labelled atoms; 0 when nothing is labelled.
fn sample_loss_value(values: &[f64], labels: &[(usize, bool)]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut l = 0.0;
    for &(i, pos) in labels {
        let v = values[i].clamp(EPS, 1.0 - EPS);
        l -= if pos { v.ln() } else { (1.0 - v).ln() };
    }
    l / labels.len() as f64
}

fn penalty(weights: &ClauseWeights, kind: RegKind) -> f64 {
    let w = weights.slots.iter().flatten();
    match kind {
        RegKind::None => 0.0,
        RegKind::L1 => w.map(|x| x.abs()).sum(),
        RegKind::L2 => w.map(|x| x * x).sum(),
    }
}

/// Loss of one sample and its gradient with respect to the per-slot clause
/// probabilities.
fn sample_loss_grad(
    model: &CompiledModel,
    probs: &[Vec<f64>],
    sample: &Sample,
    kind: Amalgamation,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let labels = labelled(sample, model)?;
    let init = init_valuation(sample, model)?.values;
    Ok(loss_grad_from(model, probs, init, &labels, kind))
}

/// Runs T steps from an arbitrary (possibly fuzzy) initial valuation and
/// backpropagates the log loss on `labels`.
fn loss_grad_from(
    model: &CompiledModel,
    probs: &[Vec<f64>],
    init: Vec<f64>,
    labels: &[(usize, bool)],
    kind: Amalgamation,
) -> (f64, Vec<Vec<f64>>) {
    let mut dprob: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.len()]).collect();
    if labels.is_empty() {
        return (0.0, dprob);
    }
    let mut trace = vec![init];
    for _ in 0..model.forward_steps {
        let next = forward_step(model, probs, trace.last().unwrap(), kind);
        trace.push(next);
    }
    let last = trace.last().unwrap();
    let loss = sample_loss_value(last, labels);

    let scale = 1.0 / labels.len() as f64;
    let mut grad = vec![0.0; last.len()];
    for &(i, pos) in labels {
        let v = last[i];
        if v > EPS && v < 1.0 - EPS {
            grad[i] += if pos { -scale / v } else { scale / (1.0 - v) };
        }
    }

    for t in (0..model.forward_steps).rev() {
        grad = backward_step(model, probs, &trace[t], &grad, kind, &mut dprob);
    }
    (loss, dprob)
}

/// Maps gradients with respect to softmax outputs (already divided by
/// `n`) back to the raw weights.
fn softmax_backward(probs: &[Vec<f64>], dprob: &[Vec<f64>], n: f64) -> ClauseWeights {
    let mut g = ClauseWeights {
        slots: Vec::with_capacity(probs.len()),
    };
    for (p, dp) in probs.iter().zip(dprob) {
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum::<f64>() / n;
        g.slots
            .push(p.iter().zip(dp).map(|(pi, d)| pi * (d / n - dot)).collect());
    }
    g
}

/// Backpropagates `dnew` (gradient at the step output) through one step
/// whose input was `a`. Returns the gradient at `a` and accumulates the
/// gradient with respect to clause probabilities into `dprob`.
fn backward_step(
    model: &CompiledModel,
    probs: &[Vec<f64>],
    a: &[f64],
    dnew: &[f64],
    kind: Amalgamation,
    dprob: &mut [Vec<f64>],
) -> Vec<f64> {
    let st = compute_step(model, probs, a);
    let g = a.len();
    let mut da = vec![0.0; g];
    let mut dd = vec![0.0; g];
    for i in 1..g {
        match kind {
            Amalgamation::Max => {
                if a[i] >= st.d[i] {
                    da[i] += dnew[i];
                } else {
                    dd[i] = dnew[i];
                }
            }
            Amalgamation::ProbSum => {
                da[i] += dnew[i] * (1.0 - st.d[i]);
                dd[i] = dnew[i] * (1.0 - a[i]);
            }
        }
    }

    let mut dlearn = vec![0.0; g];
    for i in 1..g {
        if dd[i] == 0.0 {
            continue;
        }
        if st.learn[i] >= st.bg[i] {
            dlearn[i] = dd[i];
        } else {
            let (c, j) = st.bg_arg[i];
            let [b0, b1] = model.background[c as usize].bodies[j as usize];
            let (b0, b1) = (b0 as usize, b1 as usize);
            da[b0] += dd[i] * a[b1];
            da[b1] += dd[i] * a[b0];
        }
    }

    for grp in &model.groups {
        let base = grp.range.start;
        let n = grp.range.len();
        let dz = &dlearn[base..base + n];
        if dz.iter().all(|x| *x == 0.0) {
            continue;
        }
        let dys: Vec<(usize, Vec<f64>)> = match grp.slots.as_slice() {
            [s] => vec![(*s, dz.to_vec())],
            [s0, s1] => {
                let (y0, y1) = (&st.y[*s0], &st.y[*s1]);
                vec![
                    (*s0, (0..n).map(|h| dz[h] * (1.0 - y1[h])).collect()),
                    (*s1, (0..n).map(|h| dz[h] * (1.0 - y0[h])).collect()),
                ]
            }
            _ => unreachable!(),
        };
        for (s, dy) in dys {
            let slot = &model.slots[s];
            for (c, table) in slot.tables.iter().enumerate() {
                let pi = probs[s][c];
                let mut acc = 0.0;
                for (h, _) in table.groups() {
                    if dy[h] == 0.0 {
                        continue;
                    }
                    let mv = st.m[s][c * n + h];
                    acc += dy[h] * mv;
                    let j = st.arg[s][c * n + h];
                    if j != u32::MAX {
                        let dm = dy[h] * pi;
                        let [b0, b1] = table.bodies[j as usize];
                        let (b0, b1) = (b0 as usize, b1 as usize);
                        da[b0] += dm * a[b1];
                        da[b1] += dm * a[b0];
                    }
                }
                dprob[s][c] += acc;
            }
        }
    }
    da[0] = 0.0;
    da
}

/// Mean per-sample loss plus the regulariser.
pub fn loss(
    cache: &ModelCache,
    weights: &ClauseWeights,
    samples: &[Sample],
    hp: &Hyperparams,
) -> Result<f64> {
    Ok(loss_and_grad(cache, weights, samples, hp)?.0)
}

/// Gradient of [`loss`] with respect to the raw weights.
pub fn grad(
    cache: &ModelCache,
    weights: &ClauseWeights,
    samples: &[Sample],
    hp: &Hyperparams,
) -> Result<ClauseWeights> {
    Ok(loss_and_grad(cache, weights, samples, hp)?.1)
}

pub fn loss_and_grad(
    cache: &ModelCache,
    weights: &ClauseWeights,
    samples: &[Sample],
    hp: &Hyperparams,
) -> Result<(f64, ClauseWeights)> {
    if samples.is_empty() {
        return Err(Error::InvalidSample("no samples".into()));
    }
    let probs = weights.probabilities();
    let models: Vec<Arc<CompiledModel>> = samples
        .iter()
        .map(|s| cache.get(&s.constants))
        .collect::<Result<_>>()?;
    let per: Vec<(f64, Vec<Vec<f64>>)> = samples
        .par_iter()
        .zip(models.par_iter())
        .map(|(s, m)| sample_loss_grad(m, &probs, s, hp.amalgamation))
        .collect::<Result<_>>()?;

    let n = samples.len() as f64;
    let mut total = 0.0;
    let mut dprob: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.len()]).collect();
    for (l, dp) in &per {
        total += l;
        for (acc, d) in dprob.iter_mut().zip(dp) {
            for (x, y) in acc.iter_mut().zip(d) {
                *x += y;
            }
        }
    }
    total /= n;
    let mut g = softmax_backward(&probs, &dprob, n);

    total += hp.reg_lambda * penalty(weights, hp.reg_kind);
    if hp.reg_lambda > 0.0 {
        for (gs, ws) in g.slots.iter_mut().zip(&weights.slots) {
            for (gk, wk) in gs.iter_mut().zip(ws) {
                *gk += hp.reg_lambda
                    * match hp.reg_kind {
                        RegKind::None => 0.0,
                        RegKind::L1 => {
                            if *wk > 0.0 {
                                1.0
                            } else if *wk < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        RegKind::L2 => 2.0 * wk,
                    };
            }
        }
    }
    Ok((total, g))
}

// --- finite-difference check ---------------------------------------------------------

/// A random small problem with a fuzzy initial valuation, used to compare
/// the hand-written gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub model: CompiledModel,
    pub weights: ClauseWeights,
    pub init: Vec<f64>,
    labels: Vec<(usize, bool)>,
    pub amalgamation: Amalgamation,
}

impl GradInstance {
    /// Up to 5 constants, up to 8 candidate clauses over one or two slots,
    /// an optional background clause and 1 to 3 forward steps.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_const = rng.gen_range(1..=5);
        let constants: Vec<String> = (0..n_const).map(|i| format!("c{i}")).collect();
        let pred = |s: &str| Predicate::parse(s).expect("valid predicate");
        let ext = vec![pred("q/1"), pred("r/2"), pred("s/1")];
        let target = pred("p/1");
        let aux = pred("aux/1");
        let pool = PredicatePool::new(ext.clone(), vec![target.clone(), aux.clone()]);

        let n_slots = rng.gen_range(1..=2);
        let mut budget = 8;
        let mut slots = Vec::new();
        for k in 0..n_slots {
            let t = RuleTemplate {
                v: rng.gen_range(0..=1),
                i: rng.gen_bool(0.5),
            };
            let mut cands = generate_clauses(&target, t, &pool);
            let max = if k + 1 == n_slots { budget } else { budget / 2 };
            let take = rng.gen_range(1..=max.min(cands.len()));
            let mut chosen = Vec::with_capacity(take);
            for _ in 0..take {
                chosen.push(cands.swap_remove(rng.gen_range(0..cands.len())));
            }
            budget -= take;
            slots.push(Slot {
                predicate: target.clone(),
                template: t,
                clauses: chosen,
            });
        }
        let mut background = Vec::new();
        if rng.gen_bool(0.5) {
            let cands = generate_clauses(&aux, RuleTemplate { v: 1, i: false }, &pool);
            background.push(cands[rng.gen_range(0..cands.len())].clone());
        }
        let mut predicates = ext;
        predicates.push(aux);
        predicates.push(target.clone());
        let clause_pool = Arc::new(ClausePool {
            slots,
            background,
            predicates,
            targets: vec![target.clone()],
            forward_steps: rng.gen_range(1..=3),
        });
        let model = clause_pool.compile(&constants).expect("valid instance");

        let mut weights = ClauseWeights::random(&clause_pool, 2.0, 0.0, rng.gen());
        for w in weights.slots.iter_mut().flatten() {
            *w += rng.gen_range(-0.5..0.5);
        }
        let mut init = vec![0.0; model.index.len()];
        let target_range = model.index.range_of("p").expect("target indexed");
        for (i, v) in init.iter_mut().enumerate().skip(1) {
            if !target_range.contains(&i) && rng.gen_bool(0.8) {
                *v = rng.gen_range(0.05..0.95);
            }
        }
        let mut labels = Vec::new();
        for i in target_range.clone() {
            if rng.gen_bool(0.7) {
                labels.push((i, rng.gen_bool(0.5)));
            }
        }
        if labels.is_empty() {
            labels.push((target_range.start, true));
        }
        let amalgamation = if rng.gen_bool(0.5) {
            Amalgamation::Max
        } else {
            Amalgamation::ProbSum
        };
        Self {
            model,
            weights,
            init,
            labels,
            amalgamation,
        }
    }

    pub fn loss_and_grad(&self, weights: &ClauseWeights) -> (f64, ClauseWeights) {
        let probs = weights.probabilities();
        let (l, dp) = loss_grad_from(
            &self.model,
            &probs,
            self.init.clone(),
            &self.labels,
            self.amalgamation,
        );
        (l, softmax_backward(&probs, &dp, 1.0))
    }

    /// Largest relative error between the analytic gradient and central
    /// differences with step `h`, over all weights.
    pub fn max_relative_error(&self, h: f64) -> f64 {
        let (_, g) = self.loss_and_grad(&self.weights);
        let g = g.flatten();
        let base = self.weights.flatten();
        let mut worst: f64 = 0.0;
        let mut w = self.weights.clone();
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += h;
            w.set_flat(&plus);
            let lp = self.loss_and_grad(&w).0;
            let mut minus = base.clone();
            minus[k] -= h;
            w.set_flat(&minus);
            let lm = self.loss_and_grad(&w).0;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max(relative_error(g[k], fd));
        }
        worst
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst_seed: u64,
}

/// Checks `n` random instances derived from `seed`.
pub fn gradcheck(n: usize, seed: u64, h: f64) -> GradcheckReport {
    let results: Vec<(u64, usize, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i);
            let inst = GradInstance::random(s);
            (s, inst.weights.len(), inst.max_relative_error(h))
        })
        .collect();
    let mut report = GradcheckReport {
        instances: n,
        parameters: 0,
        max_relative_error: 0.0,
        worst_seed: seed,
    };
    for (s, p, e) in results {
        report.parameters += p;
        if e > report.max_relative_error {
            report.max_relative_error = e;
            report.worst_seed = s;
        }
    }
    report
}

// --- training ----------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub template: ProgramTemplate,
    pub frame: LanguageFrame,
    pub pool: Arc<ClausePool>,
    pub weights: ClauseWeights,
    pub hyperparams: Hyperparams,
    pub loss_trace: Vec<f64>,
    /// Which restart produced these weights; its seed is `seed + restart`.
    pub restart: usize,
}

impl TrainedModel {
    pub fn cache(&self) -> ModelCache {
        ModelCache::new(Arc::clone(&self.pool))
    }

    /// First step at which the training loss fell below `threshold`.
    pub fn steps_to_loss(&self, threshold: f64) -> Option<usize> {
        self.loss_trace.iter().position(|l| *l < threshold)
    }
}

/// Full-batch training with per-parameter accumulated-square step scaling.
pub fn train(
    frame: &LanguageFrame,
    samples: &[Sample],
    pt: &ProgramTemplate,
    hp: &Hyperparams,
) -> Result<TrainedModel> {
    hp.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidSample(
            "training needs at least one sample".into(),
        ));
    }
    for s in samples {
        s.validate()?;
    }
    let pool = Arc::new(ClausePool::build(pt, frame, hp.clause_budget)?);
    let cache = ModelCache::new(Arc::clone(&pool));
    let runs: Vec<Result<(ClauseWeights, Vec<f64>)>> = (0..hp.restarts.max(1))
        .into_par_iter()
        .map(|r| train_once(&pool, &cache, samples, hp, hp.seed.wrapping_add(r as u64)))
        .collect();
    let mut best: Option<(usize, ClauseWeights, Vec<f64>)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let (w, trace) = run?;
        let better = match &best {
            None => true,
            Some((_, _, t)) => trace.last() < t.last(),
        };
        if better {
            best = Some((r, w, trace));
        }
    }
    let (restart, weights, loss_trace) = best.expect("at least one run");
    Ok(TrainedModel {
        template: pt.clone(),
        frame: frame.clone(),
        pool,
        weights,
        hyperparams: hp.clone(),
        loss_trace,
        restart,
    })
}

fn train_once(
    pool: &ClausePool,
    cache: &ModelCache,
    samples: &[Sample],
    hp: &Hyperparams,
    seed: u64,
) -> Result<(ClauseWeights, Vec<f64>)> {
    let mut weights = ClauseWeights::random(pool, hp.init_scale, hp.succinct_prior, seed);
    let mut flat = weights.flatten();
    let mut accum = vec![0.0; flat.len()];
    let mut trace = Vec::with_capacity(hp.training_steps + 1);

    for step in 0..hp.training_steps {
        let (l, g) = loss_and_grad(cache, &weights, samples, hp)?;
        if !l.is_finite() {
            return Err(Error::Divergence { step, loss: l });
        }
        trace.push(l);
        if l < hp.target_loss {
            return Ok((weights, trace));
        }
        for ((w, acc), gk) in flat.iter_mut().zip(accum.iter_mut()).zip(g.flatten()) {
            *acc += gk * gk;
            *w -= hp.learning_rate * gk / (acc.sqrt() + 1e-10);
        }
        if flat.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { step, loss: l });
        }
        weights.set_flat(&flat);
        if step % 500 == 0 {
            log::debug!("seed {seed} step {step}: loss {l:.6}");
        }
    }
    let final_loss = loss(cache, &weights, samples, hp)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: hp.training_steps,
            loss: final_loss,
        });
    }
    trace.push(final_loss);
    Ok((weights, trace))
}

// --- model file -------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SlotRecord {
    predicate: Predicate,
    template: RuleTemplate,
    clauses: Vec<Clause>,
    weights: Vec<f64>,
    probabilities: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    template: ProgramTemplate,
    frame: LanguageFrame,
    hyperparams: Hyperparams,
    background: Vec<Clause>,
    predicates: Vec<Predicate>,
    slots: Vec<SlotRecord>,
    loss_trace: Vec<f64>,
    restart: usize,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        let probs = self.weights.probabilities();
        let rec = ModelRecord {
            template: self.template.clone(),
            frame: self.frame.clone(),
            hyperparams: self.hyperparams.clone(),
            background: self.pool.background.clone(),
            predicates: self.pool.predicates.clone(),
            slots: self
                .pool
                .slots
                .iter()
                .zip(&self.weights.slots)
                .zip(probs)
                .map(|((s, w), p)| SlotRecord {
                    predicate: s.predicate.clone(),
                    template: s.template,
                    clauses: s.clauses.clone(),
                    weights: w.clone(),
                    probabilities: p,
                })
                .collect(),
            loss_trace: self.loss_trace.clone(),
            restart: self.restart,
        };
        serde_json::to_string_pretty(&rec).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelRecord = serde_json::from_str(text)?;
        let pool = ClausePool {
            slots: rec
                .slots
                .iter()
                .map(|s| Slot {
                    predicate: s.predicate.clone(),
                    template: s.template,
                    clauses: s.clauses.clone(),
                })
                .collect(),
            background: rec.background,
            predicates: rec.predicates,
            targets: rec.frame.target_predicates.clone(),
            forward_steps: rec.template.forward_steps,
        };
        for s in &rec.slots {
            if s.weights.len() != s.clauses.len() {
                return Err(Error::Config(format!(
                    "slot {} has {} clauses but {} weights",
                    s.predicate,
                    s.clauses.len(),
                    s.weights.len()
                )));
            }
        }
        Ok(Self {
            template: rec.template,
            frame: rec.frame,
            pool: Arc::new(pool),
            weights: ClauseWeights {
                slots: rec.slots.into_iter().map(|s| s.weights).collect(),
            },
            hyperparams: rec.hyperparams,
            loss_trace: rec.loss_trace,
            restart: rec.restart,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parse_atom;
    use crate::template::{BackgroundSpec, SlotSpec};

    fn p(s: &str) -> Predicate {
        Predicate::parse(s).unwrap()
    }

    fn atoms(xs: &[&str]) -> Vec<Atom> {
        xs.iter().map(|x| parse_atom(x).unwrap()).collect()
    }

    fn consts(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn tiny_task() -> (LanguageFrame, ProgramTemplate) {
        let frame = LanguageFrame::new(vec![p("p/1")], vec![p("q/1"), p("r/1")]).unwrap();
        let pt = ProgramTemplate {
            forward_steps: 1,
            auxiliary: vec![],
            background: BackgroundSpec::default(),
            slots: vec![SlotSpec {
                predicate: p("p/1"),
                templates: vec![RuleTemplate { v: 0, i: true }],
            }],
        };
        (frame, pt)
    }

    #[test]
    fn tiny_model_shape() {
        let (frame, pt) = tiny_task();
        let m = compile(&pt, &frame, &consts(&["a", "b", "c"])).unwrap();
        assert_eq!(m.index().len(), 10);
        assert_eq!(m.slot_sizes(), vec![3]);
    }

    #[test]
    fn empty_template_is_identity() {
        let (frame, mut pt) = tiny_task();
        pt.slots.clear();
        let m = compile(&pt, &frame, &consts(&["a"])).unwrap();
        let s = Sample {
            background: atoms(&["q(a)"]),
            ..Default::default()
        };
        let w = ClauseWeights::zeros(m.pool());
        let v0 = init_valuation(&s, &m).unwrap();
        let v = infer(&m, &w, &s, Amalgamation::Max).unwrap();
        assert_eq!(v0, v);
    }

    #[test]
    fn budget_overflow() {
        let (frame, pt) = tiny_task();
        assert!(matches!(
            ClausePool::build(&pt, &frame, 2),
            Err(Error::ClauseBudget {
                count: 3,
                budget: 2
            })
        ));
    }

    #[test]
    fn init_valuation_sets_background() {
        let frame = LanguageFrame::new(vec![p("all/1")], vec![p("true/1")]).unwrap();
        let pt = ProgramTemplate {
            forward_steps: 1,
            auxiliary: vec![],
            background: BackgroundSpec::default(),
            slots: vec![],
        };
        let m = compile(&pt, &frame, &consts(&["a"])).unwrap();
        let s = Sample {
            background: atoms(&["true(a)"]),
            ..Default::default()
        };
        let v = init_valuation(&s, &m).unwrap();
        let i = m.index().index_of(&parse_atom("true(a)").unwrap()).unwrap();
        for (k, x) in v.values.iter().enumerate() {
            assert_eq!(*x, if k == i { 1.0 } else { 0.0 });
        }
        let empty = init_valuation(&Sample::default(), &m).unwrap();
        assert!(empty.values.iter().all(|x| *x == 0.0));
        let bad = Sample {
            background: atoms(&["nope(a)"]),
            ..Default::default()
        };
        assert!(matches!(
            init_valuation(&bad, &m),
            Err(Error::UnknownAtom(_))
        ));
    }

    fn confirm_model() -> CompiledModel {
        let frame = LanguageFrame::new(
            vec![p("confirm/1")],
            vec![p("user_request/2"), p("not_confident/1")],
        )
        .unwrap();
        let pt = ProgramTemplate {
            forward_steps: 1,
            auxiliary: vec![],
            background: BackgroundSpec::default(),
            slots: vec![SlotSpec {
                predicate: p("confirm/1"),
                templates: vec![RuleTemplate { v: 1, i: false }],
            }],
        };
        compile(&pt, &frame, &consts(&["contact", "calling"])).unwrap()
    }

    #[test]
    fn one_hot_confirm_derives_contact() {
        let m = confirm_model();
        let target =
            crate::logic::parse_clause("confirm(S) <- user_request(S, T), not_confident(S)")
                .unwrap();
        let k = m.pool().slots[0]
            .clauses
            .iter()
            .position(|c| *c == target)
            .unwrap();
        let w = ClauseWeights::one_hot(m.pool(), &[k], 800.0);
        let s = Sample {
            background: atoms(&["user_request(contact, calling)", "not_confident(contact)"]),
            ..Default::default()
        };
        let v = infer(&m, &w, &s, Amalgamation::Max).unwrap();
        let got = v
            .get(m.index(), &parse_atom("confirm(contact)").unwrap())
            .unwrap();
        assert!((got - 1.0).abs() < 1e-12, "{got}");
        let other = v
            .get(m.index(), &parse_atom("confirm(calling)").unwrap())
            .unwrap();
        assert_eq!(other, 0.0);
    }

    #[test]
    fn zero_valuation_is_absorbing() {
        let m = confirm_model();
        let w = ClauseWeights::random(m.pool(), 1.0, 0.0, 3);
        let v = Valuation {
            values: vec![0.0; m.index().len()],
        };
        let out = step(&m, &w, &v, Amalgamation::Max);
        assert!(out.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn product_then_max() {
        let (frame, pt) = tiny_task();
        let m = compile(&pt, &frame, &consts(&["a"])).unwrap();
        let target = crate::logic::parse_clause("p(X) <- q(X), r(X)").unwrap();
        let k = m.pool().slots[0]
            .clauses
            .iter()
            .position(|c| *c == target)
            .unwrap();
        // A large logit makes the softmax exactly one-hot in f64.
        let w = ClauseWeights::one_hot(m.pool(), &[k], 800.0);
        let idx = m.index();
        let mut v = Valuation {
            values: vec![0.0; idx.len()],
        };
        v.values[idx.index_of(&parse_atom("q(a)").unwrap()).unwrap()] = 0.8;
        v.values[idx.index_of(&parse_atom("r(a)").unwrap()).unwrap()] = 0.5;
        let pa = idx.index_of(&parse_atom("p(a)").unwrap()).unwrap();
        v.values[pa] = 0.3;
        let out = step(&m, &w, &v, Amalgamation::Max);
        assert!((out.values[pa] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn unlabelled_samples_leave_only_the_regulariser() {
        let (frame, pt) = tiny_task();
        let pool = Arc::new(ClausePool::build(&pt, &frame, 100).unwrap());
        let cache = ModelCache::new(Arc::clone(&pool));
        let mut w = ClauseWeights::zeros(&pool);
        w.slots[0][0] = 0.7;
        let s = Sample {
            background: atoms(&["q(a)"]),
            constants: consts(&["a"]),
            ..Default::default()
        };
        let (l, g) = loss_and_grad(&cache, &w, &[s.clone()], &Hyperparams::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.flatten().iter().all(|x| *x == 0.0));
        let hp = Hyperparams {
            reg_kind: RegKind::L2,
            reg_lambda: 0.5,
            ..Default::default()
        };
        let (l, g) = loss_and_grad(&cache, &w, &[s], &hp).unwrap();
        assert!((l - 0.5 * 0.49).abs() < 1e-12);
        assert!((g.slots[0][0] - 0.7).abs() < 1e-12);
        assert!(g.flatten().iter().skip(1).all(|x| *x == 0.0));
    }

    #[test]
    fn regulariser_is_additive() {
        let (frame, pt) = tiny_task();
        let pool = Arc::new(ClausePool::build(&pt, &frame, 100).unwrap());
        let cache = ModelCache::new(Arc::clone(&pool));
        let w = ClauseWeights::random(&pool, 1.0, 0.0, 9);
        let s = Sample {
            background: atoms(&["q(a)"]),
            positive: atoms(&["p(a)"]),
            negative: vec![],
            constants: consts(&["a"]),
        };
        let base = Hyperparams::default();
        let l0 = loss(&cache, &w, std::slice::from_ref(&s), &base).unwrap();
        for (kind, pen) in [
            (
                RegKind::L1,
                w.flatten().iter().map(|x| x.abs()).sum::<f64>(),
            ),
            (RegKind::L2, w.flatten().iter().map(|x| x * x).sum::<f64>()),
        ] {
            let hp = Hyperparams {
                reg_kind: kind,
                reg_lambda: 0.25,
                ..base.clone()
            };
            let l = loss(&cache, &w, std::slice::from_ref(&s), &hp).unwrap();
            assert!((l - l0 - 0.25 * pen).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let r = gradcheck(40, 1, 1e-4);
        assert!(r.max_relative_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn closed_world_negatives_cover_the_rest() {
        let neg = closed_world_negatives(
            &[p("a/1"), p("z/0")],
            &consts(&["x", "y"]),
            &atoms(&["a(x)"]),
        );
        assert_eq!(neg, atoms(&["a(y)", "z()"]));
    }

    #[test]
    fn sample_validation() {
        let s = Sample {
            background: atoms(&["q(a)"]),
            positive: atoms(&["p(a)"]),
            negative: atoms(&["p(a)"]),
            constants: consts(&["a"]),
        };
        assert!(s.validate().is_err());
        let s = Sample {
            background: atoms(&["q(b)"]),
            positive: vec![],
            negative: vec![],
            constants: consts(&["a"]),
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let (frame, pt) = tiny_task();
        let s = Sample {
            background: atoms(&["q(a)"]),
            positive: atoms(&["p(a)"]),
            negative: vec![],
            constants: consts(&["a"]),
        };
        let hp = Hyperparams {
            training_steps: 5,
            ..Default::default()
        };
        let m = train(&frame, &[s], &pt, &hp).unwrap();
        let back = TrainedModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(*back.pool, *m.pool);
        assert_eq!(back.loss_trace, m.loss_trace);
    }
}
