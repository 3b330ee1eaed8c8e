//! Dialog states and acts, and their conversion to logical samples.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{closed_world_negatives, Sample};
use crate::logic::{Atom, LanguageFrame, Predicate, Term};

pub const TERM: &str = "term";
pub const USR_SLOT: &str = "usr_slot";

/// How a domain's turns become atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Linked list of user slots, known/unknown for every slot, plain user
    /// act predicates.
    #[default]
    SimDial,
    /// known/unknown for user slots only, `usr_` act predicates, database
    /// flags.
    MultiWoz,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub user_slots: Vec<String>,
    pub system_slots: Vec<String>,
    #[serde(default)]
    pub encoding: Encoding,
}

fn slots(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl DomainSpec {
    pub fn new(name: &str, user: &[&str], system: &[&str], encoding: Encoding) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            user_slots: slots(user),
            system_slots: slots(system),
            encoding,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_slots.is_empty() || self.system_slots.is_empty() {
            return Err(Error::Dialog(format!(
                "domain {} needs user and system slots",
                self.name
            )));
        }
        let mut seen = BTreeSet::new();
        for s in self.slots() {
            Predicate::new(s.clone(), 0)
                .map_err(|_| Error::Dialog(format!("bad slot name `{s}`")))?;
            if s == TERM || s == USR_SLOT {
                return Err(Error::Dialog(format!("`{s}` is reserved")));
            }
            if !seen.insert(s) {
                return Err(Error::Dialog(format!(
                    "slot `{s}` declared twice in {}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn slots(&self) -> impl Iterator<Item = &String> {
        self.user_slots.iter().chain(&self.system_slots)
    }

    pub fn has_slot(&self, s: &str) -> bool {
        self.slots().any(|x| x == s)
    }

    pub fn constants(&self) -> Vec<String> {
        let mut c: Vec<String> = self.slots().cloned().collect();
        if self.encoding == Encoding::SimDial {
            c.push(TERM.into());
            c.push(USR_SLOT.into());
        }
        c
    }

    pub fn targets(&self) -> Vec<Predicate> {
        system_predicates(self.encoding)
    }

    /// The first system slot; the default goal in SimDial domains.
    pub fn default_goal(&self) -> &str {
        &self.system_slots[0]
    }

    /// Domain whose slots are renamed by `map` (slots not in the map keep
    /// their name).
    pub fn renamed(&self, name: &str, map: &HashMap<String, String>) -> Self {
        let r = |v: &Vec<String>| {
            v.iter()
                .map(|s| map.get(s).cloned().unwrap_or_else(|| s.clone()))
                .collect()
        };
        Self {
            name: name.into(),
            user_slots: r(&self.user_slots),
            system_slots: r(&self.system_slots),
            encoding: self.encoding,
        }
    }
}

pub fn system_predicates(encoding: Encoding) -> Vec<Predicate> {
    let p = |s: &str| Predicate::parse(s).expect("built-in predicate");
    match encoding {
        Encoding::SimDial => vec![p("sys_request/1"), p("sys_inform/1"), p("sys_query/1")],
        Encoding::MultiWoz => vec![
            p("sys_inform/1"),
            p("sys_request/1"),
            p("offerbooked/0"),
            p("nooffer/0"),
        ],
    }
}

/// Extensional predicates every sample of this encoding may use.
pub fn state_predicates(encoding: Encoding) -> Vec<Predicate> {
    let p = |s: &str| Predicate::parse(s).expect("built-in predicate");
    match encoding {
        Encoding::SimDial => vec![
            p("terminal/1"),
            p("succ/2"),
            p("usr_slots/1"),
            p("known/1"),
            p("unknown/1"),
            p("kb_return/1"),
            p("reverted/1"),
            p("inform/1"),
            p("request/1"),
        ],
        Encoding::MultiWoz => vec![
            p("known/1"),
            p("unknown/1"),
            p("no_match/0"),
            p("book_fail/0"),
            p("usr_inform/1"),
            p("usr_request/1"),
        ],
    }
}

pub fn frame_for(encoding: Encoding) -> LanguageFrame {
    LanguageFrame::new(system_predicates(encoding), state_predicates(encoding))
        .expect("built-in frame is valid")
}

pub fn restaurant() -> DomainSpec {
    DomainSpec::new(
        "restaurant",
        &["food_pref", "loc"],
        &["default", "open", "price", "parking"],
        Encoding::SimDial,
    )
    .unwrap()
}

pub fn movie() -> DomainSpec {
    DomainSpec::new(
        "movie",
        &["genre", "years", "country"],
        &["default", "rating", "company", "director"],
        Encoding::SimDial,
    )
    .unwrap()
}

/// Stand-in slot names; a transferred policy never looks at them.
pub fn bus() -> DomainSpec {
    DomainSpec::new(
        "bus",
        &["from_loc", "to_loc", "datetime"],
        &["default", "arrive_in", "duration"],
        Encoding::SimDial,
    )
    .unwrap()
}

/// Stand-in slot list, like [`bus`].
pub fn weather() -> DomainSpec {
    DomainSpec::new(
        "weather",
        &["loc", "datetime"],
        &["default", "temperature", "weather_type"],
        Encoding::SimDial,
    )
    .unwrap()
}

pub const SIMDIAL_DOMAINS: &[&str] = &["restaurant", "movie", "bus", "weather"];

/// Booking and search slots per MultiWoZ domain. User slots follow the
/// belief-state layout (search slots, then booking slots); system slots are
/// the ones that only appear in system acts.
pub fn multiwoz_domain(name: &str) -> Result<DomainSpec> {
    let (user, system): (&[&str], &[&str]) = match name {
        "restaurant" => (
            &["food", "price", "name", "area", "people", "day", "time"],
            &["address", "phone", "postcode", "ref", "choice"],
        ),
        "hotel" => (
            &[
                "type", "parking", "price", "internet", "stars", "name", "area", "stay", "day",
                "people",
            ],
            &["address", "phone", "postcode", "ref", "choice"],
        ),
        "attraction" => (
            &["type", "name", "area"],
            &["address", "phone", "postcode", "fee", "open", "choice"],
        ),
        "train" => (
            &[
                "leave",
                "destination",
                "day",
                "arrive",
                "departure",
                "people",
            ],
            &["ref", "ticket", "duration", "id", "choice"],
        ),
        "taxi" => (
            &["leave", "destination", "departure", "arrive"],
            &["car", "phone"],
        ),
        "hospital" => (&["department"], &["address", "phone", "postcode"]),
        "police" => (&["name"], &["address", "phone", "postcode"]),
        other => return Err(Error::Dialog(format!("unknown MultiWoZ domain `{other}`"))),
    };
    DomainSpec::new(name, user, system, Encoding::MultiWoz)
}

pub fn builtin_domain(name: &str) -> Result<DomainSpec> {
    match name {
        "restaurant" => Ok(restaurant()),
        "movie" => Ok(movie()),
        "bus" => Ok(bus()),
        "weather" => Ok(weather()),
        other => Err(Error::Dialog(format!("unknown domain `{other}`"))),
    }
}

// --- states and acts ---------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefState {
    /// Slots (user or system) whose value is known.
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    pub known: BTreeSet<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    pub kb_return: BTreeSet<String>,
    /// Goals whose answer was withdrawn because the user changed a
    /// constraint.
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    pub reverted: BTreeSet<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub no_match: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub book_fail: bool,
}

impl BeliefState {
    pub fn validate(&self, spec: &DomainSpec) -> Result<()> {
        for s in self
            .known
            .iter()
            .chain(&self.reverted)
            .chain(self.values.keys())
        {
            if !spec.has_slot(s) {
                return Err(Error::Dialog(format!(
                    "state slot `{s}` not in domain {}",
                    spec.name
                )));
            }
        }
        if let Some(s) = self
            .kb_return
            .iter()
            .find(|s| !spec.system_slots.contains(s))
        {
            return Err(Error::Dialog(format!(
                "kb_return slot `{s}` is not a system slot"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Inform,
    Request,
    Query,
    OfferBooked,
    NoOffer,
}

impl Intent {
    pub fn takes_slot(self) -> bool {
        !matches!(self, Intent::OfferBooked | Intent::NoOffer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DialogAct {
    pub intent: Intent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
}

impl DialogAct {
    pub fn new(intent: Intent, slot: &str) -> Self {
        Self {
            intent,
            slot: Some(slot.to_string()),
        }
    }

    pub fn bare(intent: Intent) -> Self {
        Self { intent, slot: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub state: BeliefState,
    pub user_acts: Vec<DialogAct>,
    pub system_acts: Vec<DialogAct>,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub domain: String,
    pub turns: Vec<Turn>,
}

// --- encoding ------------------------------------------------------------------------

fn unary(p: &str, c: &str) -> Atom {
    Atom::new(p, vec![Term::constant(c)])
}

fn check_slot(spec: &DomainSpec, s: &str) -> Result<()> {
    if spec.has_slot(s) {
        Ok(())
    } else {
        Err(Error::Dialog(format!(
            "slot `{s}` not in domain {}",
            spec.name
        )))
    }
}

pub fn encode_state(state: &BeliefState, spec: &DomainSpec) -> Result<Vec<Atom>> {
    state.validate(spec)?;
    let mut out = Vec::new();
    let flag = |s: &String| {
        if state.known.contains(s) {
            "known"
        } else {
            "unknown"
        }
    };
    match spec.encoding {
        Encoding::SimDial => {
            out.push(unary("terminal", TERM));
            let chain: Vec<&str> = std::iter::once(USR_SLOT)
                .chain(spec.user_slots.iter().map(String::as_str))
                .chain(std::iter::once(TERM))
                .collect();
            for w in chain.windows(2) {
                out.push(Atom::ground("succ", &[w[0], w[1]]));
            }
            out.push(unary("usr_slots", USR_SLOT));
            out.push(unary("known", USR_SLOT));
            for s in spec.slots() {
                out.push(unary(flag(s), s));
            }
            for s in &state.kb_return {
                out.push(unary("kb_return", s));
            }
            for s in &state.reverted {
                out.push(unary("reverted", s));
            }
        }
        Encoding::MultiWoz => {
            for s in &spec.user_slots {
                out.push(unary(flag(s), s));
            }
        }
    }
    if state.no_match {
        out.push(Atom::new("no_match", vec![]));
    }
    if state.book_fail {
        out.push(Atom::new("book_fail", vec![]));
    }
    Ok(out)
}

pub fn encode_acts(acts: &[DialogAct], side: Side, spec: &DomainSpec) -> Result<Vec<Atom>> {
    let mut out = Vec::with_capacity(acts.len());
    for act in acts {
        if let Some(s) = &act.slot {
            check_slot(spec, s)?;
        }
        let slot = || {
            act.slot
                .as_deref()
                .ok_or_else(|| Error::Dialog(format!("{:?} act needs a slot", act.intent)))
        };
        let atom = match (side, act.intent) {
            (Side::User, Intent::Inform) | (Side::User, Intent::Request) => {
                let base = if act.intent == Intent::Inform {
                    "inform"
                } else {
                    "request"
                };
                let name = match spec.encoding {
                    Encoding::SimDial => base.to_string(),
                    Encoding::MultiWoz => format!("usr_{base}"),
                };
                unary(&name, slot()?)
            }
            (Side::System, Intent::Inform) => unary("sys_inform", slot()?),
            (Side::System, Intent::Request) => unary("sys_request", slot()?),
            (Side::System, Intent::Query) => unary("sys_query", slot()?),
            (Side::System, Intent::OfferBooked) => Atom::new("offerbooked", vec![]),
            (Side::System, Intent::NoOffer) => Atom::new("nooffer", vec![]),
            (Side::User, other) => {
                return Err(Error::Dialog(format!("user cannot perform {other:?}")))
            }
        };
        if !out.contains(&atom) {
            out.push(atom);
        }
    }
    Ok(out)
}

/// Inverse of [`encode_acts`] for system acts, sorted by (intent, slot).
pub fn decode_actions(derived: &[Atom], spec: &DomainSpec) -> Result<Vec<DialogAct>> {
    let mut out = BTreeSet::new();
    for a in derived {
        let intent = match a.predicate.as_str() {
            "sys_inform" => Intent::Inform,
            "sys_request" => Intent::Request,
            "sys_query" => Intent::Query,
            "offerbooked" => Intent::OfferBooked,
            "nooffer" => Intent::NoOffer,
            other => return Err(Error::Dialog(format!("`{other}` is not a system act"))),
        };
        let consts: Vec<&str> = a.constants().collect();
        let act = match (intent.takes_slot(), consts.as_slice()) {
            (true, [s]) => {
                check_slot(spec, s)?;
                DialogAct::new(intent, s)
            }
            (false, []) => DialogAct::bare(intent),
            _ => return Err(Error::Dialog(format!("malformed act atom `{a}`"))),
        };
        out.insert(act);
    }
    Ok(out.into_iter().collect())
}

/// One training or evaluation instance. System acts are the positives and
/// every other system-act grounding is a negative. A turn without system
/// acts gives a sample with empty P, which only evaluation uses.
pub fn build_sample(turn: &Turn, spec: &DomainSpec) -> Result<Sample> {
    let mut background = encode_state(&turn.state, spec)?;
    for a in encode_acts(&turn.user_acts, Side::User, spec)? {
        if !background.contains(&a) {
            background.push(a);
        }
    }
    let positive = encode_acts(&turn.system_acts, Side::System, spec)?;
    let constants = spec.constants();
    let negative = closed_world_negatives(&spec.targets(), &constants, &positive);
    Ok(Sample {
        background,
        positive,
        negative,
        constants,
    })
}

/// A sample with its provenance, as stored in sample files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub dialog_id: String,
    pub turn: usize,
    pub domain: String,
    #[serde(default)]
    pub encoding: Encoding,
    #[serde(flatten)]
    pub sample: Sample,
}

impl SampleRecord {
    /// The record's domain reduced to its slot constants, which is all that
    /// decoding act atoms needs.
    pub fn slot_domain(&self) -> DomainSpec {
        DomainSpec {
            name: self.domain.clone(),
            user_slots: Vec::new(),
            system_slots: self
                .sample
                .constants
                .iter()
                .filter(|c| *c != TERM && *c != USR_SLOT)
                .cloned()
                .collect(),
            encoding: self.encoding,
        }
    }

    pub fn gold_actions(&self) -> Result<Vec<DialogAct>> {
        decode_actions(&self.sample.positive, &self.slot_domain())
    }
}

pub fn dialog_samples(dialog: &Dialog, spec: &DomainSpec) -> Result<Vec<SampleRecord>> {
    dialog
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(SampleRecord {
                dialog_id: dialog.id.clone(),
                turn: i,
                domain: spec.name.clone(),
                encoding: spec.encoding,
                sample: build_sample(t, spec)?,
            })
        })
        .collect()
}

/// Samples with at least one positive atom; the rest are logged and
/// dropped.
pub fn training_samples(records: &[SampleRecord]) -> Vec<Sample> {
    records
        .iter()
        .filter(|r| {
            let keep = !r.sample.positive.is_empty();
            if !keep {
                log::warn!("skipping {} turn {}: no system act", r.dialog_id, r.turn);
            }
            keep
        })
        .map(|r| r.sample.clone())
        .collect()
}

// --- MultiWoZ ------------------------------------------------------------------------

/// `[intent, domain, slot]` as in the annotated corpus.
pub type ActTriple = (String, String, String);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbPointer {
    pub no_match: bool,
    pub book_fail: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MwozTurn {
    /// Domain name to `{"semi": {...}, "book": {...}}`.
    #[serde(default)]
    pub belief_state: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub user_acts: Vec<ActTriple>,
    #[serde(default)]
    pub system_acts: Vec<ActTriple>,
    #[serde(default)]
    pub db_pointer: BTreeMap<String, DbPointer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MwozDialog {
    pub dialog_id: String,
    pub turns: Vec<MwozTurn>,
}

fn normalize_slot(s: &str) -> Option<String> {
    let s = s.trim().to_lowercase();
    let mapped = match s.as_str() {
        "" | "none" => return None,
        "pricerange" => "price",
        "addr" => "address",
        "post" => "postcode",
        "dest" => "destination",
        "depart" => "departure",
        "arriveby" => "arrive",
        "leaveat" => "leave",
        other => other,
    };
    Some(mapped.to_string())
}

fn is_unknown_value(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::String(s) => {
            let s = s.trim().to_lowercase();
            s.is_empty() || s == "not mentioned" || s == "none"
        }
        serde_json::Value::Null => true,
        serde_json::Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

fn domain_state(
    turn: usize,
    domain: &str,
    raw: &serde_json::Value,
    spec: &DomainSpec,
) -> Result<BeliefState> {
    let schema = |message: String| Error::Schema { turn, message };
    let mut state = BeliefState::default();
    let obj = raw
        .as_object()
        .ok_or_else(|| schema(format!("belief state of {domain} is not an object")))?;
    for part in ["semi", "book"] {
        let Some(section) = obj.get(part) else {
            continue;
        };
        let section = section
            .as_object()
            .ok_or_else(|| schema(format!("{domain}.{part} is not an object")))?;
        for (k, v) in section {
            if k == "booked" {
                continue;
            }
            let slot =
                normalize_slot(k).ok_or_else(|| schema(format!("empty slot name in {domain}")))?;
            if !spec.user_slots.contains(&slot) {
                return Err(schema(format!(
                    "unknown slot `{k}` in {domain} belief state"
                )));
            }
            if !is_unknown_value(v) {
                state.known.insert(slot);
            }
        }
    }
    Ok(state)
}

fn map_act(
    turn: usize,
    side: Side,
    triple: &ActTriple,
    spec: &DomainSpec,
) -> Result<Option<DialogAct>> {
    let (intent, _, slot) = triple;
    let intent = intent.trim().to_lowercase();
    let intent = match (side, intent.as_str()) {
        (_, "inform") | (Side::System, "select" | "recommend" | "offerbook") => Intent::Inform,
        (_, "request") => Intent::Request,
        (Side::System, "offerbooked") => Intent::OfferBooked,
        (Side::System, "nooffer" | "nobook") => Intent::NoOffer,
        (_, "greet" | "bye" | "thank" | "welcome" | "reqmore") => return Ok(None),
        (_, other) => {
            return Err(Error::Schema {
                turn,
                message: format!("unsupported intent `{other}`"),
            })
        }
    };
    if !intent.takes_slot() {
        return Ok(Some(DialogAct::bare(intent)));
    }
    let Some(slot) = normalize_slot(slot) else {
        return Ok(None);
    };
    if !spec.has_slot(&slot) {
        return Err(Error::Schema {
            turn,
            message: format!("unknown slot `{slot}` in domain {}", spec.name),
        });
    }
    Ok(Some(DialogAct::new(intent, &slot)))
}

/// One sample per (turn, domain) for every domain that has an act in the
/// turn or a known slot in its belief state. General-domain acts are
/// dropped.
pub fn convert_multiwoz(dialog: &MwozDialog) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for (i, t) in dialog.turns.iter().enumerate() {
        let mut domains: BTreeSet<String> = BTreeSet::new();
        for (_, d, _) in t.user_acts.iter().chain(&t.system_acts) {
            let d = d.trim().to_lowercase();
            if d != "general" {
                domains.insert(d);
            }
        }
        for (d, raw) in &t.belief_state {
            let spec = multiwoz_domain(d).map_err(|e| Error::Schema {
                turn: i,
                message: e.to_string(),
            })?;
            if !domain_state(i, d, raw, &spec)?.known.is_empty() {
                domains.insert(d.clone());
            }
        }
        for d in domains {
            let spec = multiwoz_domain(&d).map_err(|e| Error::Schema {
                turn: i,
                message: e.to_string(),
            })?;
            let mut state = match t.belief_state.get(&d) {
                Some(raw) => domain_state(i, &d, raw, &spec)?,
                None => BeliefState::default(),
            };
            if let Some(db) = t.db_pointer.get(&d) {
                state.no_match = db.no_match;
                state.book_fail = db.book_fail;
            }
            let acts = |side: Side, triples: &[ActTriple]| -> Result<Vec<DialogAct>> {
                let mut v = Vec::new();
                for tr in triples.iter().filter(|tr| tr.1.trim().to_lowercase() == d) {
                    if let Some(a) = map_act(i, side, tr, &spec)? {
                        if !v.contains(&a) {
                            v.push(a);
                        }
                    }
                }
                Ok(v)
            };
            let turn = Turn {
                state,
                user_acts: acts(Side::User, &t.user_acts)?,
                system_acts: acts(Side::System, &t.system_acts)?,
                domain: d.clone(),
            };
            out.push(SampleRecord {
                dialog_id: dialog.dialog_id.clone(),
                turn: i,
                domain: d.clone(),
                encoding: Encoding::MultiWoz,
                sample: build_sample(&turn, &spec)?,
            });
        }
    }
    Ok(out)
}

/// Union of per-domain predictions for each (dialog, turn).
pub fn recombine(
    per_domain: &[(String, usize, Vec<DialogAct>)],
) -> BTreeMap<(String, usize), Vec<DialogAct>> {
    let mut out: BTreeMap<(String, usize), BTreeSet<DialogAct>> = BTreeMap::new();
    for (id, turn, acts) in per_domain {
        out.entry((id.clone(), *turn))
            .or_default()
            .extend(acts.iter().cloned());
    }
    out.into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect()
}
