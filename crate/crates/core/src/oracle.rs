//! Closed-form predictions for the probabilistic agent.
//!
//! After training, every (sample, comparison) cell of the agent's table is
//! exactly 1 (reinforced), exactly 0 (presented and not reinforced) or still
//! carries its initial noise around 0.5. The agent's choice on a trial only
//! depends on that three-level ordering plus, among noisy cells, the noise.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::Serialize;

use crate::agents::probabilistic::initial_probabilities;
use crate::agents::argmax_lowest;
use crate::error::{Error, Result};
use crate::stimuli::{StimulusId, MEMBER_COUNT, STIMULUS_COUNT};
use crate::structures::{derive_test_pairs, StimulusPair, TestKind};
use crate::trials::{
    generate_eval_trials, negative_pool, Condition, Selection, TestRates, Trial, TrialSet, COMPARISONS,
};

/// Exact rational rate.
pub type Rate = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PLevel {
    Zero,
    Tie,
    One,
}

impl PLevel {
    pub fn symbol(self) -> char {
        match self {
            PLevel::Zero => '0',
            PLevel::Tie => '~',
            PLevel::One => '1',
        }
    }
}

/// Levels of every (member sample, member comparison) cell. Dummy columns
/// are not represented: which dummies a condition touches depends on the
/// generation seed, and evaluation never presents them.
#[derive(Clone, PartialEq, Eq)]
pub struct PairLevels {
    cells: Vec<PLevel>,
}

impl PairLevels {
    pub fn all_tie() -> Self {
        PairLevels {
            cells: vec![PLevel::Tie; MEMBER_COUNT * MEMBER_COUNT],
        }
    }

    fn slot(sample: StimulusId, comparison: StimulusId) -> Option<usize> {
        (sample.is_member() && comparison.is_member()).then(|| sample.index() * MEMBER_COUNT + comparison.index())
    }

    /// Level of a cell; any cell involving a dummy reads as `Tie`.
    pub fn get(&self, sample: StimulusId, comparison: StimulusId) -> PLevel {
        Self::slot(sample, comparison).map_or(PLevel::Tie, |i| self.cells[i])
    }

    fn mark(&mut self, sample: StimulusId, comparison: StimulusId, level: PLevel) -> Result<()> {
        let Some(i) = Self::slot(sample, comparison) else {
            return Ok(());
        };
        match self.cells[i] {
            PLevel::Tie => self.cells[i] = level,
            current if current == level => {}
            _ => {
                return Err(Error::Integrity {
                    sample: sample.label(),
                    comparison: comparison.label(),
                })
            }
        }
        Ok(())
    }

    /// Copy with every row except `sample` reset to `Tie`.
    pub fn restricted_to(&self, sample: StimulusId) -> Self {
        let mut out = PairLevels::all_tie();
        if sample.is_member() {
            let r = sample.index() * MEMBER_COUNT;
            out.cells[r..r + MEMBER_COUNT].copy_from_slice(&self.cells[r..r + MEMBER_COUNT]);
        }
        out
    }

    pub fn count(&self, level: PLevel) -> usize {
        self.cells.iter().filter(|&&l| l == level).count()
    }
}

impl fmt::Debug for PairLevels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PairLevels")?;
        for row in self.cells.chunks(MEMBER_COUNT) {
            writeln!(f, "  {}", row.iter().map(|l| l.symbol()).collect::<String>())?;
        }
        Ok(())
    }
}

/// Levels implied by a condition's training protocol, without generating
/// trials: baseline comparisons are selects, every stimulus in the pair's
/// negative pool is a reject (unless the relation type removes them).
pub fn classify_pairs(condition: &Condition) -> Result<PairLevels> {
    let mut levels = PairLevels::all_tie();
    for pair in derive_test_pairs(condition.ts).baseline {
        if condition.relation.trains_selects() {
            levels.mark(pair.sample, pair.comparison, PLevel::One)?;
        }
        if condition.relation.trains_rejects() {
            for n in negative_pool(pair, condition.ncs) {
                levels.mark(pair.sample, n, PLevel::Zero)?;
            }
        }
    }
    Ok(levels)
}

/// Levels read off a concrete training set (member columns only).
pub fn levels_from_training(training: &TrialSet) -> Result<PairLevels> {
    let mut levels = PairLevels::all_tie();
    for t in &training.trials {
        for (pos, &c) in t.comparisons.iter().enumerate() {
            let level = if pos == t.correct_index { PLevel::One } else { PLevel::Zero };
            levels.mark(t.sample, c, level)?;
        }
    }
    Ok(levels)
}

/// Probability that the level-argmax picks the correct comparison when
/// ties among the top level are broken uniformly.
pub fn trial_expectation(levels: &PairLevels, trial: &Trial) -> Rate {
    let l: Vec<PLevel> = trial.comparisons.iter().map(|&c| levels.get(trial.sample, c)).collect();
    let top = *l.iter().max().unwrap();
    let correct = l[trial.correct_index];
    if correct < top {
        return Rate::from_integer(0);
    }
    let k = l.iter().filter(|&&x| x == top).count() as u64;
    // Two cells pinned at exactly 1 (or 0) tie for real and go to the
    // lowest position.
    if top != PLevel::Tie && k > 1 {
        let first = l.iter().position(|&x| x == top).unwrap();
        return Rate::from_integer((first == trial.correct_index) as u64);
    }
    Rate::new(1, k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairExpectation {
    pub kind: TestKind,
    pub pair: StimulusPair,
    pub trials: usize,
    #[serde(serialize_with = "ser_rate")]
    pub rate: Rate,
}

fn ser_rate<S: serde::Serializer>(r: &Rate, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(rate_f64(*r))
}

pub fn rate_f64(r: Rate) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedRates {
    #[serde(serialize_with = "ser_rates")]
    pub rates: [Rate; 4],
    pub pairs: Vec<PairExpectation>,
}

fn ser_rates<S: serde::Serializer>(r: &[Rate; 4], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = s.serialize_map(Some(4))?;
    for kind in TestKind::ALL {
        m.serialize_entry(kind.short(), &rate_f64(r[kind as usize]))?;
    }
    m.end()
}

impl ExpectedRates {
    pub fn get(&self, kind: TestKind) -> Rate {
        self.rates[kind as usize]
    }

    pub fn to_rates(&self) -> TestRates {
        let mut out = TestRates::default();
        for kind in TestKind::ALL {
            out.set(kind, rate_f64(self.get(kind)));
        }
        out
    }

    /// Largest expectation among the derived-relation tests.
    pub fn max_derived(&self) -> Rate {
        [TestKind::Reflexivity, TestKind::Symmetry, TestKind::Transitivity]
            .iter()
            .map(|&k| self.get(k))
            .max()
            .unwrap()
    }
}

/// Expected rates of a condition over its evaluation set.
pub fn expected_rates(condition: &Condition) -> Result<ExpectedRates> {
    let levels = classify_pairs(condition)?;
    Ok(expected_rates_over(&levels, &generate_eval_trials(condition.ts).trials))
}

/// Expected rates for arbitrary levels and trials. Kinds without trials
/// report 0.
pub fn expected_rates_over(levels: &PairLevels, trials: &[Trial]) -> ExpectedRates {
    let mut sums = [Rate::from_integer(0); 4];
    let mut counts = [0u64; 4];
    let mut per_pair: BTreeMap<(usize, StimulusId, StimulusId), (usize, Rate)> = BTreeMap::new();
    for t in trials {
        let e = trial_expectation(levels, t);
        let k = t.test_kind as usize;
        sums[k] += e;
        counts[k] += 1;
        let slot = per_pair
            .entry((k, t.sample, t.correct()))
            .or_insert((0, Rate::from_integer(0)));
        slot.0 += 1;
        slot.1 += e;
    }
    let rates = std::array::from_fn(|k| {
        if counts[k] == 0 {
            Rate::from_integer(0)
        } else {
            sums[k] / counts[k]
        }
    });
    let pairs = per_pair
        .into_iter()
        .map(|((k, sample, comparison), (n, sum))| PairExpectation {
            kind: TestKind::ALL[k],
            pair: StimulusPair { sample, comparison },
            trials: n,
            rate: sum / n as u64,
        })
        .collect();
    ExpectedRates { rates, pairs }
}

/// Per-trial predictions for one seed, obtained from the levels and the
/// seed's initial noise rather than by simulating the training updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactRun {
    pub condition: Condition,
    pub seed: u64,
    pub trials: Vec<Trial>,
    pub selections: Vec<usize>,
    pub rates: TestRates,
}

impl ExactRun {
    /// Checks simulated selections against the prediction trial by trial.
    pub fn verify(&self, selections: &[Selection]) -> Result<()> {
        if selections.len() != self.selections.len() {
            return Err(Error::Determinism {
                trial: selections.len().min(self.selections.len()),
                expected: format!("{} selections", self.selections.len()),
                actual: format!("{} selections", selections.len()),
            });
        }
        for (i, (&want, &got)) in self.selections.iter().zip(selections).enumerate() {
            if got != Selection::Comparison(want) {
                return Err(Error::Determinism {
                    trial: i,
                    expected: format!("comparison {want}"),
                    actual: format!("{got:?}"),
                });
            }
        }
        Ok(())
    }
}

fn level_value(level: PLevel, noise: f64) -> f64 {
    match level {
        PLevel::Zero => 0.0,
        PLevel::One => 1.0,
        PLevel::Tie => noise,
    }
}

/// Predicted selections of a probabilistic agent trained on `condition`
/// with `seed`.
pub fn exact_run(condition: &Condition, seed: u64) -> Result<ExactRun> {
    let levels = classify_pairs(condition)?;
    exact_run_over(condition, seed, &levels, &generate_eval_trials(condition.ts).trials)
}

/// Predictions for given levels and trials.
pub fn exact_run_over(condition: &Condition, seed: u64, levels: &PairLevels, trials: &[Trial]) -> Result<ExactRun> {
    let noise = initial_probabilities(seed);
    let mut selections = Vec::with_capacity(trials.len());
    let mut tally = crate::trials::Tally::default();
    for t in trials {
        let s = t.sample.index();
        let mut values = [0.0; COMPARISONS];
        for (v, &c) in values.iter_mut().zip(&t.comparisons) {
            if c.is_dummy() {
                return Err(Error::Generation(format!("evaluation trial presents dummy {c}")));
            }
            *v = level_value(levels.get(t.sample, c), noise[s * STIMULUS_COUNT + c.index()]);
        }
        let pick = argmax_lowest(&values);
        tally.record(t.test_kind, pick == t.correct_index);
        selections.push(pick);
    }
    Ok(ExactRun {
        condition: *condition,
        seed,
        trials: trials.to_vec(),
        selections,
        rates: tally.rates(),
    })
}

/// `condition,base,refl,symm,trans` rows with four decimals.
pub fn oracle_csv(conditions: &[Condition]) -> Result<String> {
    let mut out = String::from("condition,base,refl,symm,trans\n");
    for c in conditions {
        let e = expected_rates(c)?;
        out.push_str(&c.name());
        for kind in TestKind::ALL {
            out.push_str(&format!(",{:.4}", rate_f64(e.get(kind))));
        }
        out.push('\n');
    }
    Ok(out)
}
