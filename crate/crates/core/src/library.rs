//! Pre-learned clause sets that can be frozen into a model's background.

use crate::error::{Error, Result};
use crate::logic::{parse_clause, Clause};

/// `all(X)`: the property `true` holds for `X` and every node after it in a
/// `succ` chain ending in a `terminal` node.
const ALL: &[&str] = &[
    "pred1(V0, V1) <- succ(V0, V1), all(V1)",
    "pred1(V0, V1) <- succ(V0, V1), terminal(V1)",
    "all(V0) <- true(V0), pred1(V0, V1)",
];

/// `member(X, L)`: `X` is a non-terminal node reachable from `L` along
/// `succ`. `member_usr(X)`: `X` is in the list headed by `usr_slots`.
const MEMBER: &[&str] = &[
    "member(V0, V1) <- succ(V1, V0), succ(V0, V2)",
    "member(V0, V1) <- succ(V1, V2), member(V0, V2)",
    "member_usr(V0) <- usr_slots(V1), member(V0, V1)",
];

pub const LIBRARY_NAMES: &[&str] = &["all", "member"];

pub fn background_library(name: &str) -> Result<Vec<Clause>> {
    let src = match name {
        "all" => ALL,
        "member" => MEMBER,
        other => return Err(Error::UnknownLibrary(other.to_string())),
    };
    src.iter().map(|s| parse_clause(s)).collect()
}
