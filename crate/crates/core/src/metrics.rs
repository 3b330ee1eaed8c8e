//! Turn-level act metrics. Every metric is a micro F1: per-turn multisets
//! of predicted and gold items are matched, and true/false positive and
//! false negative counts are summed over all turns before the F1 is taken.
//!
//! * intent F1 matches intents and ignores slots;
//! * entity F1 matches slot names of acts that carry a slot;
//! * action F1 matches whole (intent, slot) acts.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dialog::{DialogAct, Intent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, which equals 2PR/(P+R). Nothing predicted
    /// and nothing gold scores 1.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Multiset matching of two item lists.
pub fn match_counts<T: Ord>(mut predicted: Vec<T>, mut gold: Vec<T>) -> Counts {
    predicted.sort();
    gold.sort();
    let (mut i, mut j, mut tp) = (0, 0, 0u64);
    while i < predicted.len() && j < gold.len() {
        match predicted[i].cmp(&gold[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                tp += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Counts {
        tp,
        fp: predicted.len() as u64 - tp,
        fn_: gold.len() as u64 - tp,
    }
}

pub fn intent_counts(predicted: &[DialogAct], gold: &[DialogAct]) -> Counts {
    let f = |xs: &[DialogAct]| xs.iter().map(|a| a.intent).collect::<Vec<Intent>>();
    match_counts(f(predicted), f(gold))
}

pub fn entity_counts(predicted: &[DialogAct], gold: &[DialogAct]) -> Counts {
    let f = |xs: &[DialogAct]| {
        xs.iter()
            .filter_map(|a| a.slot.clone())
            .collect::<Vec<String>>()
    };
    match_counts(f(predicted), f(gold))
}

pub fn action_counts(predicted: &[DialogAct], gold: &[DialogAct]) -> Counts {
    match_counts(predicted.to_vec(), gold.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub f1: f64,
    /// `sqrt(f1 (1 - f1) / turns)`.
    pub std_err: f64,
    pub counts: Counts,
}

impl Score {
    pub fn new(counts: Counts, turns: usize) -> Self {
        let f1 = counts.f1();
        Self {
            f1,
            std_err: std_err(f1, turns),
            counts,
        }
    }
}

pub fn std_err(x: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (x * (1.0 - x) / n as f64).sqrt()
    }
}

fn corpus_score(
    predicted: &[Vec<DialogAct>],
    gold: &[Vec<DialogAct>],
    f: fn(&[DialogAct], &[DialogAct]) -> Counts,
) -> Score {
    assert_eq!(predicted.len(), gold.len(), "turn lists differ in length");
    let counts = predicted
        .par_iter()
        .zip(gold)
        .map(|(p, g)| f(p, g))
        .reduce(Counts::default, |a, b| a + b);
    Score::new(counts, predicted.len())
}

/// Intent F1 over aligned per-turn act lists.
pub fn intent_f1(predicted: &[Vec<DialogAct>], gold: &[Vec<DialogAct>]) -> Score {
    corpus_score(predicted, gold, intent_counts)
}

pub fn entity_f1(predicted: &[Vec<DialogAct>], gold: &[Vec<DialogAct>]) -> Score {
    corpus_score(predicted, gold, entity_counts)
}

pub fn action_f1(predicted: &[Vec<DialogAct>], gold: &[Vec<DialogAct>]) -> Score {
    corpus_score(predicted, gold, action_counts)
}

/// The acts of one turn, as stored in prediction files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnActs {
    pub dialog_id: String,
    pub turn: usize,
    pub domain: String,
    pub acts: Vec<DialogAct>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub turns: usize,
    pub intent_f1: Score,
    pub entity_f1: Score,
    pub action_f1: Score,
}

impl Scores {
    fn of(predicted: &[Vec<DialogAct>], gold: &[Vec<DialogAct>]) -> Self {
        Self {
            turns: predicted.len(),
            intent_f1: intent_f1(predicted, gold),
            entity_f1: entity_f1(predicted, gold),
            action_f1: action_f1(predicted, gold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: Scores,
    pub per_domain: BTreeMap<String, Scores>,
}

impl MetricsReport {
    pub fn summary(&self) -> String {
        let line = |name: &str, s: &Scores| {
            format!(
                "{name:<12} turns {:>6}  intent {:.4} ±{:.4}  entity {:.4} ±{:.4}  action {:.4} ±{:.4}\n",
                s.turns,
                s.intent_f1.f1,
                s.intent_f1.std_err,
                s.entity_f1.f1,
                s.entity_f1.std_err,
                s.action_f1.f1,
                s.action_f1.std_err
            )
        };
        let mut out = line("all", &self.overall);
        for (d, s) in &self.per_domain {
            out.push_str(&line(d, s));
        }
        out
    }
}

/// Scores predictions against gold turns keyed by (dialog id, turn). Both
/// sides must cover exactly the same turns.
pub fn evaluate(predicted: &[TurnActs], gold: &[TurnActs]) -> Result<MetricsReport> {
    let mut by_key: HashMap<(&str, usize), &TurnActs> = HashMap::new();
    for g in gold {
        if by_key.insert((&g.dialog_id, g.turn), g).is_some() {
            return Err(Error::Config(format!(
                "duplicate gold turn {} {}",
                g.dialog_id, g.turn
            )));
        }
    }
    if predicted.len() != gold.len() {
        return Err(Error::Config(format!(
            "{} predicted turns against {} gold turns",
            predicted.len(),
            gold.len()
        )));
    }
    type Aligned = (Vec<Vec<DialogAct>>, Vec<Vec<DialogAct>>);
    let mut groups: BTreeMap<String, Aligned> = BTreeMap::new();
    let (mut all_p, mut all_g) = (Vec::new(), Vec::new());
    for p in predicted {
        let g = by_key
            .remove(&(p.dialog_id.as_str(), p.turn))
            .ok_or_else(|| Error::Config(format!("no gold turn for {} {}", p.dialog_id, p.turn)))?;
        let e = groups.entry(g.domain.clone()).or_default();
        e.0.push(p.acts.clone());
        e.1.push(g.acts.clone());
        all_p.push(p.acts.clone());
        all_g.push(g.acts.clone());
    }
    Ok(MetricsReport {
        overall: Scores::of(&all_p, &all_g),
        per_domain: groups
            .iter()
            .map(|(d, (p, g))| (d.clone(), Scores::of(p, g)))
            .collect(),
    })
}
