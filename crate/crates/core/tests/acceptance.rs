//! End-to-end acceptance checks, one test per criterion. Each prints a
//! `criterion NN PASS|FAIL ...` line before asserting.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dialog_ilp::dialog::{
    convert_multiwoz, dialog_samples, restaurant, ActTriple, Dialog, DialogAct, Intent, MwozDialog,
    MwozTurn, SampleRecord,
};
use dialog_ilp::extract::{crisp_infer, extract_program, PolicyProgram};
use dialog_ilp::infer::{
    checked_steps, gradcheck, infer, invariant_violations, train, Amalgamation, ClausePool,
    ClauseWeights, Hyperparams, Sample, TrainedModel,
};
use dialog_ilp::logic::{parse_atom, parse_clause, Atom, Clause, LanguageFrame, Predicate, Term};
use dialog_ilp::metrics::MetricsReport;
use dialog_ilp::pipeline::{convert_simdial, eval_records, generate, train_records, transfer};
use dialog_ilp::presets::{all_frame, all_hyperparams, all_template};
use dialog_ilp::simulator::{generate_dialog, is_complete, GeneratorConfig};
use dialog_ilp::template::{ProgramTemplate, RuleTemplate, SlotSpec};

const THRESHOLD: f64 = 0.05;
const CORPUS: usize = 500;
const CORPUS_SEED: u64 = 2024;
const CORRECTIONS: f64 = 0.02;

fn report(n: u32, ok: bool, detail: &str) {
    println!(
        "criterion {n:02} {} {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn atoms(xs: &[&str]) -> Vec<Atom> {
    xs.iter().map(|x| parse_atom(x).unwrap()).collect()
}

// --- shared runs ---------------------------------------------------------------------

struct Run {
    model: TrainedModel,
    program: PolicyProgram,
}

fn simdial_run(amalgamation: Amalgamation) -> Run {
    let records = convert_simdial(&generate("restaurant", None, 0, 0.0).unwrap()).unwrap();
    let hp = Hyperparams {
        amalgamation,
        ..dialog_ilp::presets::simdial_hyperparams()
    };
    let model = train_records(&records, None, Some(&hp)).unwrap();
    let program = extract_program(&model, THRESHOLD).unwrap();
    Run { model, program }
}

fn simdial() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| simdial_run(Amalgamation::Max))
}

fn corpus_records(domain: &str) -> Vec<SampleRecord> {
    convert_simdial(&generate(domain, Some(CORPUS), CORPUS_SEED, CORRECTIONS).unwrap()).unwrap()
}

fn evaluate_domain(program: &PolicyProgram, domain: &str) -> MetricsReport {
    let records = corpus_records(domain);
    eval_records(&transfer(program, &records).unwrap(), &records).unwrap()
}

fn all_sample() -> Sample {
    Sample {
        background: atoms(&[
            "terminal(t)",
            "succ(a, b)",
            "succ(b, c)",
            "succ(c, d)",
            "succ(d, e)",
            "succ(e, t)",
            "succ(f, g)",
            "succ(g, h)",
            "succ(h, t)",
            "true(a)",
            "true(c)",
            "true(d)",
            "true(e)",
            "true(f)",
            "true(g)",
        ]),
        positive: atoms(&["all(c)", "all(d)", "all(e)"]),
        negative: atoms(&["all(a)", "all(b)", "all(f)", "all(g)", "all(h)"]),
        constants: "a b c d e f g h t".split(' ').map(String::from).collect(),
    }
}

fn all_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let model = train(
            &all_frame(),
            &[all_sample()],
            &all_template(),
            &all_hyperparams(),
        )
        .unwrap();
        let program = extract_program(&model, 0.3).unwrap();
        Run { model, program }
    })
}

// --- 1 -------------------------------------------------------------------------------

/// Every element from `i` to the end of the list is true.
fn all_oracle(truth: &[bool], i: usize) -> bool {
    truth[i..].iter().all(|t| *t)
}

#[test]
fn criterion_01_all_golden_task() {
    let start = std::time::Instant::now();
    let run = all_run();
    let mut errors = 0;

    let s = all_sample();
    let derived = crisp_infer(&run.program, &s.background, &s.constants);
    errors += s.positive.iter().filter(|a| !derived.contains(a)).count();
    errors += s.negative.iter().filter(|a| derived.contains(a)).count();

    // Held-out lists need up to two rounds per element.
    let mut program = run.program.clone();
    program.forward_steps = 14;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..20 {
        let len = rng.gen_range(1..=6);
        let truth: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.7)).collect();
        let names: Vec<String> = (0..len).map(|i| format!("x{i}")).collect();
        let mut bg = vec![format!("terminal(t)")];
        for i in 0..len {
            let next = if i + 1 < len {
                names[i + 1].clone()
            } else {
                "t".into()
            };
            bg.push(format!("succ({}, {next})", names[i]));
            if truth[i] {
                bg.push(format!("true({})", names[i]));
            }
        }
        let bg: Vec<Atom> = bg.iter().map(|a| parse_atom(a).unwrap()).collect();
        let mut constants = names.clone();
        constants.push("t".into());
        let derived = crisp_infer(&program, &bg, &constants);
        for (i, name) in names.iter().enumerate() {
            let a = parse_atom(&format!("all({name})")).unwrap();
            if derived.contains(&a) != all_oracle(&truth, i) {
                errors += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let rules: Vec<String> = run
        .program
        .active_clauses()
        .iter()
        .map(|c| c.to_string())
        .collect();
    report(
        1,
        errors == 0 && elapsed.as_secs() < 300,
        &format!(
            "errors {errors}, final loss {:.2e}, {:.0?}, rules {rules:?}",
            run.model.loss_trace.last().unwrap(),
            elapsed
        ),
    );
}

// --- 2, 3, 4 -------------------------------------------------------------------------

#[test]
fn criterion_02_one_shot_in_domain() {
    let start = std::time::Instant::now();
    let r = evaluate_domain(&simdial().program, "restaurant");
    let s = &r.overall;
    let ok = s.intent_f1.f1 >= 0.99 && s.entity_f1.f1 >= 0.99 && start.elapsed().as_secs() < 1800;
    report(
        2,
        ok,
        &format!(
            "intent {:.4} ±{:.4} entity {:.4} ±{:.4} over {} turns",
            s.intent_f1.f1, s.intent_f1.std_err, s.entity_f1.f1, s.entity_f1.std_err, s.turns
        ),
    );
}

#[test]
fn criterion_03_zero_shot_transfer() {
    let mut ok = true;
    let mut detail = Vec::new();
    for d in ["movie", "bus", "weather"] {
        let s = evaluate_domain(&simdial().program, d).overall;
        ok &= s.intent_f1.f1 >= 0.99 && s.entity_f1.f1 >= 0.99;
        detail.push(format!(
            "{d} intent {:.4} entity {:.4}",
            s.intent_f1.f1, s.entity_f1.f1
        ));
    }
    report(3, ok, &detail.join(", "));
}

fn argmax_text(program: &PolicyProgram, pred: &str) -> Vec<Clause> {
    program.argmax_for(pred).into_iter().cloned().collect()
}

#[test]
fn criterion_04_rule_identity() {
    let p = &simdial().program;
    let want_req = parse_clause("sys_request(V0) <- member_usr(V0), unknown(V0)").unwrap();
    let want_inf = parse_clause("sys_inform(V0) <- kb_return(V0)").unwrap();
    let req = argmax_text(p, "sys_request");
    let inf = argmax_text(p, "sys_inform");
    let show = |cs: &[Clause]| {
        cs.iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    };
    report(
        4,
        req == [want_req] && inf == [want_inf],
        &format!("sys_request: {}; sys_inform: {}", show(&req), show(&inf)),
    );
}

// --- 5 -------------------------------------------------------------------------------

fn correction_dialogs(count: usize) -> Vec<Dialog> {
    (0..)
        .map(|seed| {
            let cfg = GeneratorConfig {
                correction_probability: 1.0,
                ..GeneratorConfig::new(restaurant(), seed)
            };
            generate_dialog(&cfg).unwrap()
        })
        .filter(is_complete)
        .take(count)
        .collect()
}

fn correction_turn(records: &[SampleRecord], d: &Dialog) -> SampleRecord {
    let k = d
        .turns
        .iter()
        .position(|t| !t.state.reverted.is_empty())
        .unwrap();
    records[k].clone()
}

fn predicted(program: &PolicyProgram, r: &SampleRecord) -> Vec<DialogAct> {
    transfer(program, std::slice::from_ref(r))
        .unwrap()
        .remove(0)
        .acts
}

#[test]
fn criterion_05_failure_case_and_fix() {
    let ds = correction_dialogs(2);
    let (train_d, test_d) = (&ds[0], &ds[1]);
    let test_records = dialog_samples(test_d, &restaurant()).unwrap();
    let turn = correction_turn(&test_records, test_d);
    let gold = vec![DialogAct::new(Intent::Query, "default")];
    assert_eq!(turn.gold_actions().unwrap(), gold);

    let before = predicted(&simdial().program, &turn);

    let mut records = convert_simdial(&generate("restaurant", None, 0, 0.0).unwrap()).unwrap();
    records.extend(dialog_samples(train_d, &restaurant()).unwrap());
    let model = train_records(&records, None, None).unwrap();
    let program = extract_program(&model, THRESHOLD).unwrap();
    let after = predicted(&program, &turn);
    let whole = eval_records(&transfer(&program, &test_records).unwrap(), &test_records).unwrap();
    let ok = before.is_empty() && after == gold && whole.overall.action_f1.f1 == 1.0;
    report(
        5,
        ok,
        &format!(
            "before {before:?}, after {after:?}, held-out dialog action F1 {:.3}, fix rule {:?}",
            whole.overall.action_f1.f1,
            program
                .argmax_for("sys_query")
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
        ),
    );
}

// --- 6 -------------------------------------------------------------------------------

#[test]
fn criterion_06_gradient_check() {
    let r = gradcheck(200, 17, 1e-4);
    report(
        6,
        r.instances >= 100 && r.max_relative_error <= 1e-4,
        &format!(
            "{} instances, {} parameters, max relative error {:.2e}",
            r.instances, r.parameters, r.max_relative_error
        ),
    );
}

// --- 7 -------------------------------------------------------------------------------

/// Parallel-round boolean forward chaining written directly over variable
/// assignments.
fn oracle_fixpoint(
    clauses: &[Clause],
    facts: &BTreeSet<Atom>,
    constants: &[String],
    steps: usize,
) -> BTreeSet<Atom> {
    let mut cur = facts.clone();
    for _ in 0..steps {
        let mut next = cur.clone();
        for c in clauses {
            let nvars = c
                .body
                .iter()
                .chain(std::iter::once(&c.head))
                .flat_map(|a| a.args.iter())
                .filter_map(|t| match t {
                    Term::Var(v) => Some(*v as usize + 1),
                    _ => None,
                })
                .max()
                .unwrap_or(0);
            let total = constants.len().pow(nvars as u32);
            for code in 0..total {
                let mut assign = Vec::with_capacity(nvars);
                let mut x = code;
                for _ in 0..nvars {
                    assign.push(constants[x % constants.len()].clone());
                    x /= constants.len();
                }
                let ground = |a: &Atom| {
                    Atom::new(
                        a.predicate.clone(),
                        a.args
                            .iter()
                            .map(|t| match t {
                                Term::Var(v) => Term::Const(assign[*v as usize].clone()),
                                c => c.clone(),
                            })
                            .collect(),
                    )
                };
                if c.body.iter().all(|b| cur.contains(&ground(b))) {
                    next.insert(ground(&c.head));
                }
            }
        }
        cur = next;
    }
    cur
}

fn small_template() -> (ProgramTemplate, LanguageFrame) {
    let p = |s: &str| Predicate::parse(s).unwrap();
    let t = |v, i| RuleTemplate { v, i };
    let frame = LanguageFrame::new(vec![p("p/1")], vec![p("q/1"), p("r/2")]).unwrap();
    let pt = ProgramTemplate {
        forward_steps: 3,
        auxiliary: vec![p("aux/1")],
        background: Default::default(),
        slots: vec![
            SlotSpec {
                predicate: p("p/1"),
                templates: vec![t(0, true), t(1, false)],
            },
            SlotSpec {
                predicate: p("aux/1"),
                templates: vec![t(0, false)],
            },
        ],
    };
    (pt, frame)
}

fn all_backgrounds(constants: &[String]) -> Vec<Vec<Atom>> {
    let mut ground = Vec::new();
    for a in constants {
        ground.push(Atom::new("q", vec![Term::Const(a.clone())]));
        for b in constants {
            ground.push(Atom::new(
                "r",
                vec![Term::Const(a.clone()), Term::Const(b.clone())],
            ));
        }
    }
    (0u32..1 << ground.len())
        .map(|mask| {
            ground
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, a)| a.clone())
                .collect()
        })
        .collect()
}

fn random_background(constants: &[String], rng: &mut ChaCha8Rng) -> Vec<Atom> {
    let mut out = Vec::new();
    for a in constants {
        if rng.gen_bool(0.5) {
            out.push(Atom::new("q", vec![Term::Const(a.clone())]));
        }
        for b in constants {
            if rng.gen_bool(0.3) {
                out.push(Atom::new(
                    "r",
                    vec![Term::Const(a.clone()), Term::Const(b.clone())],
                ));
            }
        }
    }
    out
}

#[test]
fn criterion_07_crisp_agreement() {
    let (pt, frame) = small_template();
    let pool = std::sync::Arc::new(ClausePool::build(&pt, &frame, 10_000).unwrap());
    let sizes: Vec<usize> = pool.slots.iter().map(|s| s.clauses.len()).collect();
    let mut choices: Vec<Vec<usize>> = vec![vec![]];
    for n in &sizes {
        choices = choices
            .into_iter()
            .flat_map(|c| {
                (0..*n).map(move |k| {
                    let mut c = c.clone();
                    c.push(k);
                    c
                })
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut checked, mut mismatches) = (0usize, 0usize);
    for n in 1..=5usize {
        let constants: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let model = pool.compile(&constants).unwrap();
        let backgrounds = if n <= 2 {
            all_backgrounds(&constants)
        } else {
            (0..12)
                .map(|_| random_background(&constants, &mut rng))
                .collect()
        };
        for choice in &choices {
            let weights = ClauseWeights::one_hot(&pool, choice, 800.0);
            let clauses: Vec<Clause> = pool
                .slots
                .iter()
                .zip(choice)
                .map(|(s, k)| s.clauses[*k].clone())
                .collect();
            for bg in &backgrounds {
                let sample = Sample {
                    background: bg.clone(),
                    positive: vec![],
                    negative: vec![],
                    constants: constants.clone(),
                };
                let val = infer(&model, &weights, &sample, Amalgamation::Max).unwrap();
                let facts: BTreeSet<Atom> = bg.iter().cloned().collect();
                let want = oracle_fixpoint(&clauses, &facts, &constants, pt.forward_steps);
                let index = model.index();
                for i in 1..index.len() {
                    let atom = index.atom(i).unwrap();
                    let v = val.values[i];
                    let crisp = v == 1.0 || v == 0.0;
                    if !crisp || (v == 1.0) != want.contains(&atom) {
                        mismatches += 1;
                    }
                    checked += 1;
                }
            }
        }
    }
    report(
        7,
        mismatches == 0 && checked > 0,
        &format!(
            "{} programs, {checked} atom checks, {mismatches} mismatches",
            choices.len()
        ),
    );
}

// --- 8 -------------------------------------------------------------------------------

#[test]
fn criterion_08_monotone_and_in_range() {
    simdial();
    all_run();
    // Exercise inference over a transfer corpus as well.
    evaluate_domain(&simdial().program, "bus");
    let cache = simdial().model.cache();
    for r in corpus_records("weather").iter().take(200) {
        let m = cache.get(&r.sample.constants).unwrap();
        infer(&m, &simdial().model.weights, &r.sample, Amalgamation::Max).unwrap();
    }
    let (v, n) = (invariant_violations(), checked_steps());
    report(
        8,
        v == 0 && n > 0,
        &format!("{v} violations over {n} checked steps"),
    );
}

// --- 9 -------------------------------------------------------------------------------

fn triple(i: &str, d: &str, s: &str) -> ActTriple {
    (i.into(), d.into(), s.into())
}

fn eritrean_turn() -> MwozTurn {
    let bs = serde_json::json!({
        "book": {"booked": [], "people": "", "day": "", "time": ""},
        "semi": {"food": "eritrean", "pricerange": "not mentioned", "name": "not mentioned", "area": "west"}
    });
    MwozTurn {
        belief_state: [("restaurant".to_string(), bs)].into_iter().collect(),
        user_acts: vec![
            triple("inform", "restaurant", "food"),
            triple("inform", "restaurant", "area"),
        ],
        system_acts: vec![
            triple("nooffer", "restaurant", "none"),
            triple("reqmore", "general", "none"),
        ],
        db_pointer: BTreeMap::new(),
    }
}

#[test]
fn criterion_09_multiwoz_converter() {
    let d = MwozDialog {
        dialog_id: "mw".into(),
        turns: vec![eritrean_turn()],
    };
    let rec = &convert_multiwoz(&d).unwrap()[0];
    let want: BTreeSet<Atom> = atoms(&[
        "usr_inform(food)",
        "usr_inform(area)",
        "known(food)",
        "unknown(price)",
        "unknown(name)",
        "known(area)",
        "unknown(people)",
        "unknown(day)",
        "unknown(time)",
    ])
    .into_iter()
    .collect();
    let got: BTreeSet<Atom> = rec.sample.background.iter().cloned().collect();
    let atoms_ok = rec.sample.background.len() == 9 && got == want;
    let nooffer_ok = rec.sample.positive == atoms(&["nooffer()"]);

    let mut t = eritrean_turn();
    t.system_acts = vec![
        triple("select", "restaurant", "food"),
        triple("recommend", "restaurant", "name"),
        triple("offerbook", "restaurant", "area"),
    ];
    let d = MwozDialog {
        dialog_id: "mw2".into(),
        turns: vec![t],
    };
    let acts = convert_multiwoz(&d).unwrap()[0].gold_actions().unwrap();
    let inform_ok = acts
        == vec![
            DialogAct::new(Intent::Inform, "area"),
            DialogAct::new(Intent::Inform, "food"),
            DialogAct::new(Intent::Inform, "name"),
        ];
    report(
        9,
        atoms_ok && nooffer_ok && inform_ok,
        &format!(
            "9 atoms {atoms_ok}, nooffer {nooffer_ok}, select/recommend/offerbook {inform_ok}"
        ),
    );
}

// --- 10 ------------------------------------------------------------------------------

#[test]
fn criterion_10_amalgamation_ablation() {
    let sum = simdial_run(Amalgamation::ProbSum);
    let max = simdial();
    let (a, b) = (max.model.steps_to_loss(0.01), sum.model.steps_to_loss(0.01));
    let ok = match (a, b) {
        (Some(a), Some(b)) => a <= b,
        (Some(_), None) => true,
        _ => false,
    };
    report(
        10,
        ok,
        &format!(
            "steps to loss < 0.01: max {a:?}, probsum {b:?}; final loss max {:.2e}, probsum {:.2e}",
            max.model.loss_trace.last().unwrap(),
            sum.model.loss_trace.last().unwrap()
        ),
    );
}

// --- 11 ------------------------------------------------------------------------------

#[test]
fn criterion_11_determinism() {
    let first = simdial();
    let second = simdial_run(Amalgamation::Max);
    let model_ok = first.model.to_json() == second.model.to_json();
    let program_ok = first.program.to_text() == second.program.to_text();

    let stage = || {
        let dialogs = generate("movie", Some(100), 9, 0.2).unwrap();
        let records = convert_simdial(&dialogs).unwrap();
        let pred = transfer(&second.program, &records).unwrap();
        let report = eval_records(&pred, &records).unwrap();
        (
            serde_json::to_string(&dialogs).unwrap(),
            serde_json::to_string(&records).unwrap(),
            serde_json::to_string(&pred).unwrap(),
            serde_json::to_string(&report).unwrap(),
        )
    };
    let stages_ok = stage() == stage();
    let g = |seed| serde_json::to_string(&gradcheck(20, seed, 1e-4)).unwrap();
    let grad_ok = g(3) == g(3);
    let all_ok = {
        let again = train(
            &all_frame(),
            &[all_sample()],
            &all_template(),
            &all_hyperparams(),
        )
        .unwrap();
        again.to_json() == all_run().model.to_json()
    };
    report(
        11,
        model_ok && program_ok && stages_ok && grad_ok && all_ok,
        &format!(
            "model {model_ok}, program {program_ok}, generate/convert/transfer/eval {stages_ok}, gradcheck {grad_ok}, all-task training {all_ok}"
        ),
    );
}
