//! The stages behind the command-line tool, usable without touching disk,
//! plus the file helpers the tool uses around them.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dialog::{
    builtin_domain, convert_multiwoz, decode_actions, dialog_samples, frame_for, Dialog, Encoding,
    MwozDialog, SampleRecord,
};
use crate::error::{Error, Result};
use crate::extract::{crisp_infer, PolicyProgram};
use crate::infer::{train, Hyperparams, TrainedModel};
use crate::metrics::{evaluate, MetricsReport, TurnActs};
use crate::presets::{multiwoz_template, simdial_hyperparams, simdial_template};
use crate::simulator::{generate_corpus, representative_dialog, GeneratorConfig};
use crate::template::ProgramTemplate;

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `n` dialogs, or the single representative dialog when `n` is `None`.
pub fn generate(
    domain: &str,
    n: Option<usize>,
    seed: u64,
    correction_probability: f64,
) -> Result<Vec<Dialog>> {
    match n {
        None => Ok(vec![representative_dialog(domain)?]),
        Some(n) => {
            let cfg = GeneratorConfig {
                correction_probability,
                ..GeneratorConfig::new(builtin_domain(domain)?, seed)
            };
            generate_corpus(&cfg, n)
        }
    }
}

pub fn convert_simdial(dialogs: &[Dialog]) -> Result<Vec<SampleRecord>> {
    let per: Vec<Vec<SampleRecord>> = dialogs
        .par_iter()
        .map(|d| dialog_samples(d, &builtin_domain(&d.domain)?))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn convert_mwoz(dialogs: &[MwozDialog]) -> Result<Vec<SampleRecord>> {
    let per: Vec<Vec<SampleRecord>> = dialogs
        .par_iter()
        .map(convert_multiwoz)
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

fn encoding_of(records: &[SampleRecord]) -> Result<Encoding> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("no samples".into()))?
        .encoding;
    if records.iter().any(|r| r.encoding != first) {
        return Err(Error::Config("samples mix state encodings".into()));
    }
    Ok(first)
}

/// Trains on every record with at least one system act. Without an explicit
/// template the built-in one for the records' encoding is used.
pub fn train_records(
    records: &[SampleRecord],
    template: Option<&ProgramTemplate>,
    hp: Option<&Hyperparams>,
) -> Result<TrainedModel> {
    let enc = encoding_of(records)?;
    let pt = match (template, enc) {
        (Some(t), _) => t.clone(),
        (None, Encoding::SimDial) => simdial_template(),
        (None, Encoding::MultiWoz) => multiwoz_template(),
    };
    let hp = hp.cloned().unwrap_or_else(simdial_hyperparams);
    let samples = crate::dialog::training_samples(records);
    train(&frame_for(enc), &samples, &pt, &hp)
}

/// Runs the program on every record; acts are decoded against the record's
/// own slot constants, so records from unseen domains work unchanged.
pub fn transfer(program: &PolicyProgram, records: &[SampleRecord]) -> Result<Vec<TurnActs>> {
    records
        .par_iter()
        .map(|r| {
            let derived: Vec<_> = crisp_infer(program, &r.sample.background, &r.sample.constants)
                .into_iter()
                .collect();
            Ok(TurnActs {
                dialog_id: r.dialog_id.clone(),
                turn: r.turn,
                domain: r.domain.clone(),
                acts: decode_actions(&derived, &r.slot_domain())?,
            })
        })
        .collect()
}

pub fn gold_turns(records: &[SampleRecord]) -> Result<Vec<TurnActs>> {
    records
        .iter()
        .map(|r| {
            Ok(TurnActs {
                dialog_id: r.dialog_id.clone(),
                turn: r.turn,
                domain: r.domain.clone(),
                acts: r.gold_actions()?,
            })
        })
        .collect()
}

pub fn eval_records(predicted: &[TurnActs], gold: &[SampleRecord]) -> Result<MetricsReport> {
    evaluate(predicted, &gold_turns(gold)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parse_clause;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = generate("bus", Some(3), 1, 0.5).unwrap();
        write_jsonl(&path, &ds).unwrap();
        assert_eq!(read_jsonl::<Dialog>(&path).unwrap(), ds);
    }

    #[test]
    fn hand_written_policy_scores_perfectly_without_corrections() {
        let text = "@steps 14\n@targets sys_request/1 sys_inform/1 sys_query/1\n@background\n";
        let mut program = PolicyProgram::from_text(text).unwrap();
        let bg: Vec<String> = crate::library::background_library("all")
            .unwrap()
            .into_iter()
            .chain(crate::library::background_library("member").unwrap())
            .map(|c| c.to_string())
            .chain(["true(V0) <- known(V0)".to_string()])
            .collect();
        program.background = bg.iter().map(|c| parse_clause(c).unwrap()).collect();
        let slot = |c: &[&str]| crate::extract::ProgramSlot {
            predicate: parse_clause(c[0]).unwrap().head.signature(),
            clauses: c.iter().map(|t| (parse_clause(t).unwrap(), 1.0)).collect(),
        };
        program.slots = vec![
            slot(&["sys_request(V0) <- member_usr(V0), unknown(V0)"]),
            slot(&["sys_inform(V0) <- kb_return(V0)"]),
            slot(&["sys_query(V0) <- pred2(), request(V0)"]),
            slot(&["pred2() <- all(V0), usr_slots(V0)"]),
        ];
        let records = convert_simdial(&generate("weather", Some(30), 3, 0.0).unwrap()).unwrap();
        let pred = transfer(&program, &records).unwrap();
        let r = eval_records(&pred, &records).unwrap();
        assert_eq!(r.overall.action_f1.f1, 1.0, "{}", r.summary());
    }

    #[test]
    fn mixed_encodings_are_rejected() {
        let mut records = convert_simdial(&generate("bus", Some(1), 1, 0.0).unwrap()).unwrap();
        records[0].encoding = Encoding::MultiWoz;
        assert!(train_records(&records, None, None).is_err());
    }
}
