//! Built-in program templates and hyperparameters, kept as TOML so they
//! double as examples of the config format.

use crate::infer::Hyperparams;
use crate::logic::{LanguageFrame, Predicate};
use crate::template::ProgramTemplate;

/// Slot-filling policy over the linked-list state encoding. `true` is
/// bridged from `known` so the `all` library reads "every user slot is
/// known".
pub const SIMDIAL_TEMPLATE: &str = r#"
forward_steps = 14
auxiliary = ["pred2/0", "pred3/1"]

[background]
libraries = ["all", "member"]
clauses = ["true(V0) <- known(V0)"]

[[slots]]
predicate = "sys_request/1"
templates = [{ v = 0, i = false }]

[[slots]]
predicate = "sys_inform/1"
templates = [{ v = 0, i = false }]

[[slots]]
predicate = "sys_query/1"
templates = [{ v = 0, i = true }, { v = 0, i = true }]

[[slots]]
predicate = "pred2/0"
templates = [{ v = 1, i = true }]

[[slots]]
predicate = "pred3/1"
templates = [{ v = 0, i = true }]
"#;

pub const SIMDIAL_HYPERPARAMS: &str = r#"
learning_rate = 0.05
training_steps = 6000
seed = 0
init_scale = 0.1
succinct_prior = 0.5
amalgamation = "max"
"#;

/// Learning `all` from scratch with one invented binary predicate.
pub const ALL_TEMPLATE: &str = r#"
forward_steps = 10
auxiliary = ["pred1/2"]

[[slots]]
predicate = "pred1/2"
templates = [{ v = 0, i = true }, { v = 0, i = true }]

[[slots]]
predicate = "all/1"
templates = [{ v = 1, i = true }]
"#;

pub const ALL_HYPERPARAMS: &str = r#"
learning_rate = 2.0
training_steps = 1500
seed = 0
init_scale = 1.0
restarts = 8
"#;

pub const MULTIWOZ_TEMPLATE: &str = r#"
forward_steps = 3

[[slots]]
predicate = "sys_inform/1"
templates = [{ v = 0, i = false }, { v = 0, i = false }]

[[slots]]
predicate = "sys_request/1"
templates = [{ v = 0, i = false }]

[[slots]]
predicate = "offerbooked/0"
templates = [{ v = 1, i = false }]

[[slots]]
predicate = "nooffer/0"
templates = [{ v = 1, i = false }]
"#;

pub fn simdial_template() -> ProgramTemplate {
    ProgramTemplate::from_toml(SIMDIAL_TEMPLATE).expect("built-in template")
}

pub fn simdial_hyperparams() -> Hyperparams {
    Hyperparams::from_toml(SIMDIAL_HYPERPARAMS).expect("built-in hyperparameters")
}

pub fn all_template() -> ProgramTemplate {
    ProgramTemplate::from_toml(ALL_TEMPLATE).expect("built-in template")
}

pub fn all_hyperparams() -> Hyperparams {
    Hyperparams::from_toml(ALL_HYPERPARAMS).expect("built-in hyperparameters")
}

pub fn multiwoz_template() -> ProgramTemplate {
    ProgramTemplate::from_toml(MULTIWOZ_TEMPLATE).expect("built-in template")
}

pub fn all_frame() -> LanguageFrame {
    let p = |s: &str| Predicate::parse(s).expect("built-in predicate");
    LanguageFrame::new(
        vec![p("all/1")],
        vec![p("terminal/1"), p("succ/2"), p("true/1")],
    )
    .expect("valid frame")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialog::{frame_for, Encoding};
    use crate::infer::ClausePool;
    use crate::logic::parse_clause;

    #[test]
    fn presets_parse_and_build() {
        for (pt, frame) in [
            (simdial_template(), frame_for(Encoding::SimDial)),
            (all_template(), all_frame()),
            (multiwoz_template(), frame_for(Encoding::MultiWoz)),
        ] {
            ClausePool::build(&pt, &frame, 50_000).unwrap();
        }
        simdial_hyperparams();
        all_hyperparams();
    }

    #[test]
    fn simdial_pool_contains_hand_written_rules() {
        let pool =
            ClausePool::build(&simdial_template(), &frame_for(Encoding::SimDial), 50_000).unwrap();
        for text in [
            "sys_request(V0) <- member_usr(V0), unknown(V0)",
            "sys_inform(V0) <- kb_return(V0)",
            "sys_query(V0) <- request(V0), pred3(V0)",
            "pred2() <- all(V0), usr_slots(V0)",
            "pred3(V0) <- pred2(), unknown(V0)",
        ] {
            let c = parse_clause(text).unwrap();
            assert!(pool.slots.iter().any(|s| s.clauses.contains(&c)), "{text}");
        }
    }

    #[test]
    fn all_pool_contains_hand_written_rules() {
        let pool = ClausePool::build(&all_template(), &all_frame(), 50_000).unwrap();
        for text in [
            "pred1(V0, V1) <- succ(V0, V1), all(V1)",
            "pred1(V0, V1) <- succ(V0, V1), terminal(V1)",
            "all(V0) <- true(V0), pred1(V0, V1)",
        ] {
            let c = parse_clause(text).unwrap();
            assert!(pool.slots.iter().any(|s| s.clauses.contains(&c)), "{text}");
        }
    }
}
