//! Trial generation for the 18 experimental conditions, and the two trial
//! encodings (one-hot vectors and token sequences).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::prng::{Prng, Stream};
use crate::numerics::Scalar;
use crate::stimuli::{
    build_stimulus_set, Letter, StimulusId, CLASS_COUNT, DUMMY_COUNT, MEMBER_COUNT,
    STIMULUS_COUNT,
};
use crate::structures::{derive_test_pairs, StimulusPair, TestKind, TrainingStructure};

pub const COMPARISONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    SelectReject,
    SelectOnly,
    RejectOnly,
}

impl RelationType {
    pub const ALL: [RelationType; 3] = [
        RelationType::SelectReject,
        RelationType::SelectOnly,
        RelationType::RejectOnly,
    ];

    pub fn abbrev(self) -> &'static str {
        match self {
            RelationType::SelectReject => "Sel-Rej",
            RelationType::SelectOnly => "Sel",
            RelationType::RejectOnly => "Rej",
        }
    }

    pub fn trains_selects(self) -> bool {
        self != RelationType::RejectOnly
    }

    pub fn trains_rejects(self) -> bool {
        self != RelationType::SelectOnly
    }
}

/// Negative-comparison selection policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    Standard,
    Biased,
}

impl NegativePolicy {
    pub const ALL: [NegativePolicy; 2] = [NegativePolicy::Standard, NegativePolicy::Biased];

    pub fn abbrev(self) -> &'static str {
        match self {
            NegativePolicy::Standard => "Std",
            NegativePolicy::Biased => "B(S-)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub ts: TrainingStructure,
    pub relation: RelationType,
    pub ncs: NegativePolicy,
}

impl Condition {
    pub const fn new(ts: TrainingStructure, relation: RelationType, ncs: NegativePolicy) -> Self {
        Condition { ts, relation, ncs }
    }

    /// The standard select-reject protocol of a structure (used for testing).
    pub const fn standard(ts: TrainingStructure) -> Self {
        Condition::new(ts, RelationType::SelectReject, NegativePolicy::Standard)
    }

    /// All 18 conditions in report order (structure, relation type, policy).
    pub fn all() -> Vec<Condition> {
        let mut out = Vec::with_capacity(18);
        for ts in TrainingStructure::ALL {
            for relation in RelationType::ALL {
                for ncs in NegativePolicy::ALL {
                    out.push(Condition::new(ts, relation, ncs));
                }
            }
        }
        out
    }

    /// Position in [`Condition::all`].
    pub fn ordinal(&self) -> usize {
        let ts = TrainingStructure::ALL.iter().position(|&t| t == self.ts).unwrap();
        let rel = RelationType::ALL.iter().position(|&r| r == self.relation).unwrap();
        let ncs = NegativePolicy::ALL.iter().position(|&n| n == self.ncs).unwrap();
        (ts * 3 + rel) * 2 + ncs
    }

    /// Display name, e.g. `LS`, `MTO biased`, `OTM Reject biased`.
    pub fn name(&self) -> String {
        let mut name = self.ts.abbrev().to_string();
        match self.relation {
            RelationType::SelectReject => {}
            RelationType::SelectOnly => name.push_str(" Select"),
            RelationType::RejectOnly => name.push_str(" Reject"),
        }
        if self.ncs == NegativePolicy::Biased {
            name.push_str(" biased");
        }
        name
    }

    /// Command-line friendly name, e.g. `mto-reject-biased`.
    pub fn slug(&self) -> String {
        self.name().to_ascii_lowercase().replace(' ', "-")
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// Accepts the display name or the slug, case-insensitive, with spaces,
    /// underscores or hyphens as separators.
    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_lowercase().replace([' ', '_'], "-");
        Condition::all()
            .into_iter()
            .find(|c| c.slug() == wanted)
            .ok_or_else(|| Error::Parse {
                what: "condition",
                text: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

/// One sample and three comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trial {
    pub sample: StimulusId,
    pub comparisons: [StimulusId; COMPARISONS],
    pub correct_index: usize,
    pub phase: Phase,
    pub test_kind: TestKind,
}

impl Trial {
    pub fn correct(&self) -> StimulusId {
        self.comparisons[self.correct_index]
    }

    pub fn is_correct(&self, selection: Selection) -> bool {
        selection == Selection::Comparison(self.correct_index)
    }
}

/// An agent's response to a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selection {
    /// Position of the chosen comparison.
    Comparison(usize),
    /// A token other than a response option was emitted.
    NonResponse(TokenId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSet {
    pub condition: Condition,
    pub seed: u64,
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn of_kind(&self, kind: TestKind) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(move |t| t.test_kind == kind)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for trial in &self.trials {
            out.push_str(&serde_json::to_string(trial).expect("trials always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<Trial>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Arrangement of the reinforced comparison and two negatives on screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PositionScheme {
    /// The three cyclic placements.
    #[default]
    Rotations,
    /// All six orderings.
    Permutations,
    /// `k` orderings drawn uniformly (seeded) per negative subset.
    Random(usize),
}

impl fmt::Display for PositionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PositionScheme::Rotations => f.write_str("rotations"),
            PositionScheme::Permutations => f.write_str("permutations"),
            PositionScheme::Random(k) => write!(f, "random:{k}"),
        }
    }
}

impl FromStr for PositionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            what: "position scheme",
            text: s.to_string(),
        };
        match s {
            "rotations" => Ok(PositionScheme::Rotations),
            "permutations" => Ok(PositionScheme::Permutations),
            _ => {
                let k: usize = s
                    .strip_prefix("random:")
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(bad)?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(PositionScheme::Random(k))
            }
        }
    }
}

impl From<PositionScheme> for String {
    fn from(p: PositionScheme) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for PositionScheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

// Placement `p` puts slot `p[i]` at screen position `i`; slot 0 is the
// reinforced comparison.
const ROTATIONS: [[usize; 3]; 3] = [[0, 1, 2], [2, 0, 1], [1, 2, 0]];
const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

impl PositionScheme {
    fn placements(&self, stream: &mut Stream) -> Vec<[usize; 3]> {
        match *self {
            PositionScheme::Rotations => ROTATIONS.to_vec(),
            PositionScheme::Permutations => PERMUTATIONS.to_vec(),
            PositionScheme::Random(k) => (0..k).map(|_| PERMUTATIONS[stream.below(6)]).collect(),
        }
    }
}

/// Negative comparisons available for a (sample, positive) pair. Standard:
/// the positive's member letter in every other class. Biased: every member
/// of every other class.
pub fn negative_pool(pair: StimulusPair, ncs: NegativePolicy) -> Vec<StimulusId> {
    let positive = pair.comparison;
    let (Some(class), Some(letter)) = (positive.class(), positive.letter()) else {
        return Vec::new();
    };
    let others = (1..=CLASS_COUNT).filter(move |&c| c != class);
    match ncs {
        NegativePolicy::Standard => others.map(|c| StimulusId::member(c, letter)).collect(),
        NegativePolicy::Biased => others
            .flat_map(|c| Letter::all().map(move |l| StimulusId::member(c, l)))
            .collect(),
    }
}

const DUMMY_STREAM: &str = "trials/dummies";
const POSITION_STREAM: &str = "trials/positions";

struct Expansion<'a> {
    phase: Phase,
    test_kind: TestKind,
    relation: RelationType,
    scheme: &'a PositionScheme,
}

fn dummy(i: usize) -> StimulusId {
    StimulusId::from_index(MEMBER_COUNT + i).unwrap()
}

/// Expands one pair into trials: every 2-subset of `pool`, every placement.
fn expand_pair(
    pair: StimulusPair,
    pool: &[StimulusId],
    how: &Expansion<'_>,
    positions: &mut Stream,
    dummies: &mut Stream,
    out: &mut Vec<Trial>,
) -> Result<()> {
    if pool.len() < 2 {
        return Err(Error::Generation(format!(
            "negative pool for {pair} has {} stimuli, need at least 2",
            pool.len()
        )));
    }
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            for placement in how.scheme.placements(positions) {
                let mut slots = [pair.comparison, pool[i], pool[j]];
                match how.relation {
                    RelationType::SelectReject => {}
                    RelationType::SelectOnly => {
                        let picks = dummies.choose_without_replacement(DUMMY_COUNT, 2);
                        slots[1] = dummy(picks[0]);
                        slots[2] = dummy(picks[1]);
                    }
                    RelationType::RejectOnly => slots[0] = dummy(dummies.below(DUMMY_COUNT)),
                }
                let comparisons = placement.map(|slot| slots[slot]);
                let correct_index = placement.iter().position(|&s| s == 0).unwrap();
                out.push(Trial {
                    sample: pair.sample,
                    comparisons,
                    correct_index,
                    phase: how.phase,
                    test_kind: how.test_kind,
                });
            }
        }
    }
    Ok(())
}

/// Baseline training trials of a condition.
pub fn generate_training_trials(
    condition: &Condition,
    scheme: &PositionScheme,
    seed: u64,
) -> Result<TrialSet> {
    if *scheme == PositionScheme::Random(0) {
        return Err(Error::Generation("random position scheme needs k >= 1".into()));
    }
    let prng = Prng::new(seed);
    let mut positions = prng.substream(POSITION_STREAM);
    let mut dummies = prng.substream(DUMMY_STREAM);
    let how = Expansion {
        phase: Phase::Train,
        test_kind: TestKind::Baseline,
        relation: condition.relation,
        scheme,
    };
    let mut trials = Vec::new();
    for pair in derive_test_pairs(condition.ts).baseline {
        let pool = negative_pool(pair, condition.ncs);
        expand_pair(pair, &pool, &how, &mut positions, &mut dummies, &mut trials)?;
    }
    Ok(TrialSet {
        condition: *condition,
        seed,
        trials,
    })
}

/// Evaluation trials of a structure under the standard select-reject
/// protocol: baseline re-test, then reflexivity, symmetry and transitivity.
pub fn generate_eval_trials(ts: TrainingStructure) -> TrialSet {
    generate_eval_trials_with(ts, &PositionScheme::Rotations, 0)
        .expect("rotation expansion of standard pools cannot fail")
}

/// Like [`generate_eval_trials`] with an explicit position scheme.
pub fn generate_eval_trials_with(
    ts: TrainingStructure,
    scheme: &PositionScheme,
    seed: u64,
) -> Result<TrialSet> {
    if *scheme == PositionScheme::Random(0) {
        return Err(Error::Generation("random position scheme needs k >= 1".into()));
    }
    let condition = Condition::standard(ts);
    let pairs = derive_test_pairs(ts);
    let prng = Prng::new(seed);
    let mut positions = prng.substream(POSITION_STREAM);
    let mut dummies = prng.substream(DUMMY_STREAM);
    let mut trials = Vec::new();
    for kind in TestKind::ALL {
        let how = Expansion {
            phase: Phase::Eval,
            test_kind: kind,
            relation: RelationType::SelectReject,
            scheme,
        };
        for &pair in pairs.pairs(kind) {
            let pool = negative_pool(pair, NegativePolicy::Standard);
            expand_pair(pair, &pool, &how, &mut positions, &mut dummies, &mut trials)?;
        }
    }
    Ok(TrialSet {
        condition,
        seed,
        trials,
    })
}

/// Length of the concatenated one-hot encoding.
pub const ONEHOT_LEN: usize = (1 + COMPARISONS) * STIMULUS_COUNT;

/// Concatenated one-hot blocks `[sample, comp0, comp1, comp2]`.
pub fn encode_onehot<T: Scalar>(trial: &Trial) -> Vec<T> {
    let mut v = vec![T::zero(); ONEHOT_LEN];
    write_onehot(trial, &mut v);
    v
}

pub(crate) fn write_onehot<T: Scalar>(trial: &Trial, out: &mut [T]) {
    out.fill(T::zero());
    out[trial.sample.index()] = T::one();
    for (block, c) in trial.comparisons.iter().enumerate() {
        out[(block + 1) * STIMULUS_COUNT + c.index()] = T::one();
    }
}

pub type TokenId = u16;

/// Stimuli occupy tokens `0..48`; response options `O_1..O_3` follow.
pub const RESPONSE_TOKEN_OFFSET: TokenId = STIMULUS_COUNT as TokenId;
pub const VOCAB_SIZE: usize = STIMULUS_COUNT + COMPARISONS;
pub const SEQUENCE_LEN: usize = 5;
pub const PROMPT_LEN: usize = SEQUENCE_LEN - 1;

pub fn response_token(index: usize) -> TokenId {
    assert!(index < COMPARISONS);
    RESPONSE_TOKEN_OFFSET + index as TokenId
}

/// Comparison position of a response token, if it is one.
pub fn response_index(token: TokenId) -> Option<usize> {
    let i = token.checked_sub(RESPONSE_TOKEN_OFFSET)? as usize;
    (i < COMPARISONS).then_some(i)
}

pub fn token_label(token: TokenId) -> String {
    match response_index(token) {
        Some(i) => format!("O_{}", i + 1),
        None => StimulusId::from_index(token as usize)
            .map(|s| s.label())
            .unwrap_or_else(|| format!("<{token}>")),
    }
}

/// `[sample, comp0, comp1, comp2, O_(correct+1)]`.
pub fn encode_tokens(trial: &Trial) -> [TokenId; SEQUENCE_LEN] {
    let mut t = [0; SEQUENCE_LEN];
    t[0] = trial.sample.index() as TokenId;
    for (i, c) in trial.comparisons.iter().enumerate() {
        t[i + 1] = c.index() as TokenId;
    }
    t[PROMPT_LEN] = response_token(trial.correct_index);
    t
}

/// Correct-selection rates per test kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TestRates {
    pub base: f64,
    pub refl: f64,
    pub symm: f64,
    pub trans: f64,
}

impl TestRates {
    pub fn get(&self, kind: TestKind) -> f64 {
        match kind {
            TestKind::Baseline => self.base,
            TestKind::Reflexivity => self.refl,
            TestKind::Symmetry => self.symm,
            TestKind::Transitivity => self.trans,
        }
    }

    pub fn set(&mut self, kind: TestKind, value: f64) {
        match kind {
            TestKind::Baseline => self.base = value,
            TestKind::Reflexivity => self.refl = value,
            TestKind::Symmetry => self.symm = value,
            TestKind::Transitivity => self.trans = value,
        }
    }
}

/// Correct/total counts per test kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: [usize; 4],
    pub total: [usize; 4],
}

impl Tally {
    pub fn record(&mut self, kind: TestKind, correct: bool) {
        let k = kind as usize;
        self.total[k] += 1;
        self.correct[k] += correct as usize;
    }

    pub fn rate(&self, kind: TestKind) -> Option<f64> {
        let k = kind as usize;
        (self.total[k] > 0).then(|| self.correct[k] as f64 / self.total[k] as f64)
    }

    /// Rates with empty kinds reported as 0.
    pub fn rates(&self) -> TestRates {
        let mut r = TestRates::default();
        for kind in TestKind::ALL {
            r.set(kind, self.rate(kind).unwrap_or(0.0));
        }
        r
    }

    pub fn score(trials: &[Trial], selections: &[Selection]) -> Tally {
        assert_eq!(trials.len(), selections.len());
        let mut tally = Tally::default();
        for (t, &s) in trials.iter().zip(selections) {
            tally.record(t.test_kind, t.is_correct(s));
        }
        tally
    }
}

/// Every stimulus label, in index order.
pub fn vocabulary_labels() -> Vec<String> {
    build_stimulus_set()
        .iter()
        .map(|s| s.label())
        .chain((0..COMPARISONS).map(|i| format!("O_{}", i + 1)))
        .collect()
}
