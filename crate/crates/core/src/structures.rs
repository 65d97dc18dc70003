//! Baseline and test pair sets per training structure, and the trained
//! relation matrix of a condition.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimuli::{
    build_stimulus_set, Letter, StimulusId, CLASS_COUNT, MEMBER_COUNT, STIMULUS_COUNT,
};
use crate::trials::{Condition, TrialSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainingStructure {
    #[serde(rename = "LS")]
    LinearSeries,
    #[serde(rename = "MTO")]
    ManyToOne,
    #[serde(rename = "OTM")]
    OneToMany,
}

impl TrainingStructure {
    /// Report order: LS, MTO, OTM.
    pub const ALL: [TrainingStructure; 3] = [
        TrainingStructure::LinearSeries,
        TrainingStructure::ManyToOne,
        TrainingStructure::OneToMany,
    ];

    pub fn abbrev(self) -> &'static str {
        match self {
            TrainingStructure::LinearSeries => "LS",
            TrainingStructure::ManyToOne => "MTO",
            TrainingStructure::OneToMany => "OTM",
        }
    }
}

impl fmt::Display for TrainingStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for TrainingStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LS" => Ok(TrainingStructure::LinearSeries),
            "MTO" => Ok(TrainingStructure::ManyToOne),
            "OTM" => Ok(TrainingStructure::OneToMany),
            _ => Err(Error::Parse {
                what: "training structure",
                text: s.to_string(),
            }),
        }
    }
}

/// Kind of a trial: directly trained baseline relation, or one of the three
/// emergent-relation tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Baseline,
    Reflexivity,
    Symmetry,
    Transitivity,
}

impl TestKind {
    pub const ALL: [TestKind; 4] = [
        TestKind::Baseline,
        TestKind::Reflexivity,
        TestKind::Symmetry,
        TestKind::Transitivity,
    ];

    pub fn short(self) -> &'static str {
        match self {
            TestKind::Baseline => "base",
            TestKind::Reflexivity => "refl",
            TestKind::Symmetry => "symm",
            TestKind::Transitivity => "trans",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

/// Ordered sample -> comparison relation between member letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LetterPair {
    pub sample: Letter,
    pub comparison: Letter,
}

impl LetterPair {
    pub const fn new(sample: Letter, comparison: Letter) -> Self {
        LetterPair { sample, comparison }
    }

    pub fn reversed(self) -> Self {
        LetterPair::new(self.comparison, self.sample)
    }

    pub fn instantiate(self, class: usize) -> StimulusPair {
        StimulusPair {
            sample: StimulusId::member(class, self.sample),
            comparison: StimulusId::member(class, self.comparison),
        }
    }
}

impl fmt::Display for LetterPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.sample, self.comparison)
    }
}

/// Ordered (sample, comparison) pair of concrete stimuli.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StimulusPair {
    pub sample: StimulusId,
    pub comparison: StimulusId,
}

impl fmt::Display for StimulusPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.sample, self.comparison)
    }
}

/// Letter-level baseline relations of a training structure.
pub fn baseline_pairs(ts: TrainingStructure) -> Vec<LetterPair> {
    let others = Letter::all().skip(1);
    match ts {
        TrainingStructure::LinearSeries => Letter::all()
            .zip(Letter::all().skip(1))
            .map(|(s, c)| LetterPair::new(s, c))
            .collect(),
        TrainingStructure::OneToMany => others.map(|c| LetterPair::new(Letter::A, c)).collect(),
        TrainingStructure::ManyToOne => others.map(|s| LetterPair::new(s, Letter::A)).collect(),
    }
}

/// Instantiated baseline and test pairs for all classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub baseline: Vec<StimulusPair>,
    pub reflexivity: Vec<StimulusPair>,
    pub symmetry: Vec<StimulusPair>,
    pub transitivity: Vec<StimulusPair>,
}

impl PairSet {
    pub fn pairs(&self, kind: TestKind) -> &[StimulusPair] {
        match kind {
            TestKind::Baseline => &self.baseline,
            TestKind::Reflexivity => &self.reflexivity,
            TestKind::Symmetry => &self.symmetry,
            TestKind::Transitivity => &self.transitivity,
        }
    }

    pub fn kind_of(&self, pair: StimulusPair) -> Option<TestKind> {
        TestKind::ALL
            .into_iter()
            .find(|&k| self.pairs(k).contains(&pair))
    }
}

/// Derives the test pairs of a structure. Transitivity is the closure: every
/// ordered within-class pair that is neither identity, baseline nor a
/// reversed baseline.
pub fn derive_test_pairs(ts: TrainingStructure) -> PairSet {
    let base = baseline_pairs(ts);
    let trained: BTreeSet<LetterPair> = base.iter().copied().collect();
    let reversed: BTreeSet<LetterPair> = base.iter().map(|p| p.reversed()).collect();

    let mut set = PairSet {
        baseline: Vec::new(),
        reflexivity: Vec::new(),
        symmetry: Vec::new(),
        transitivity: Vec::new(),
    };
    for class in 1..=CLASS_COUNT {
        set.baseline.extend(base.iter().map(|p| p.instantiate(class)));
        set.symmetry
            .extend(base.iter().map(|p| p.reversed().instantiate(class)));
        for s in Letter::all() {
            set.reflexivity
                .push(LetterPair::new(s, s).instantiate(class));
            for c in Letter::all() {
                let p = LetterPair::new(s, c);
                if s != c && !trained.contains(&p) && !reversed.contains(&p) {
                    set.transitivity.push(p.instantiate(class));
                }
            }
        }
    }
    set
}

/// Trained relation of a (sample, comparison) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RelationKind {
    #[default]
    None,
    Select,
    Reject,
}

impl RelationKind {
    pub fn symbol(self) -> &'static str {
        match self {
            RelationKind::None => "",
            RelationKind::Select => "S+",
            RelationKind::Reject => "S-",
        }
    }
}

/// Member samples (rows) by all stimuli (columns).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMatrix {
    cells: Vec<RelationKind>,
}

impl RelationMatrix {
    pub const ROWS: usize = MEMBER_COUNT;
    pub const COLS: usize = STIMULUS_COUNT;

    pub fn empty() -> Self {
        RelationMatrix {
            cells: vec![RelationKind::None; Self::ROWS * Self::COLS],
        }
    }

    pub fn get(&self, sample: StimulusId, comparison: StimulusId) -> RelationKind {
        assert!(sample.is_member(), "relation rows are member samples");
        self.cells[sample.index() * Self::COLS + comparison.index()]
    }

    fn mark(&mut self, sample: StimulusId, comparison: StimulusId, kind: RelationKind) -> Result<()> {
        if !sample.is_member() {
            return Err(Error::Generation(format!("sample {sample} is not a class member")));
        }
        let cell = &mut self.cells[sample.index() * Self::COLS + comparison.index()];
        match (*cell, kind) {
            (RelationKind::None, k) => *cell = k,
            (a, b) if a == b => {}
            _ => {
                return Err(Error::Integrity {
                    sample: sample.label(),
                    comparison: comparison.label(),
                })
            }
        }
        Ok(())
    }

    pub fn count(&self, kind: RelationKind) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    /// Count of `kind` cells restricted to member or dummy columns.
    pub fn count_in(&self, kind: RelationKind, dummy_columns: bool) -> usize {
        self.cells
            .iter()
            .enumerate()
            .filter(|(i, &c)| c == kind && ((i % Self::COLS) >= MEMBER_COUNT) == dummy_columns)
            .count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StimulusId, StimulusId, RelationKind)> + '_ {
        self.cells.iter().enumerate().map(|(i, &k)| {
            (
                StimulusId::from_index(i / Self::COLS).unwrap(),
                StimulusId::from_index(i % Self::COLS).unwrap(),
                k,
            )
        })
    }

    /// CSV export: sample label column followed by one column per stimulus.
    pub fn to_csv(&self) -> String {
        let set = build_stimulus_set();
        let mut out = String::from("sample");
        for id in set.iter() {
            out.push(',');
            out.push_str(&id.label());
        }
        out.push('\n');
        for sample in set.members() {
            out.push_str(&sample.label());
            for comparison in set.iter() {
                out.push(',');
                out.push_str(self.get(sample, comparison).symbol());
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap with blue select cells and red reject cells.
    pub fn to_svg(&self, title: &str) -> String {
        const CELL: usize = 12;
        const LEFT: usize = 40;
        const TOP: usize = 56;
        let set = build_stimulus_set();
        let width = LEFT + Self::COLS * CELL + 8;
        let height = TOP + Self::ROWS * CELL + 8;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             font-family=\"sans-serif\" font-size=\"8\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{LEFT}\" y=\"12\" font-size=\"11\">{}</text>\n",
            escape_xml(title)
        );
        for (c, id) in set.iter().enumerate() {
            let x = LEFT + c * CELL + CELL / 2;
            svg.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-90 {x} {})\">{}</text>\n",
                TOP - 3,
                TOP - 3,
                id.label()
            ));
        }
        for (r, sample) in set.members().enumerate() {
            let y = TOP + r * CELL;
            svg.push_str(&format!(
                "<text x=\"2\" y=\"{}\">{}</text>\n",
                y + CELL - 3,
                sample.label()
            ));
            for (c, comparison) in set.iter().enumerate() {
                let fill = match self.get(sample, comparison) {
                    RelationKind::None => "#f4f4f4",
                    RelationKind::Select => "#1f5fbf",
                    RelationKind::Reject => "#d0302a",
                };
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{y}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"#ffffff\" stroke-width=\"0.5\"/>\n",
                    LEFT + c * CELL,
                    CELL,
                    CELL
                ));
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Summarizes the (sample, comparison, reinforced?) triples of a training set.
pub fn relation_matrix(condition: &Condition, training: &TrialSet) -> Result<RelationMatrix> {
    if training.condition != *condition {
        return Err(Error::Generation(format!(
            "training set belongs to {}, not {}",
            training.condition, condition
        )));
    }
    let mut matrix = RelationMatrix::empty();
    for trial in &training.trials {
        for (pos, &comparison) in trial.comparisons.iter().enumerate() {
            let kind = if pos == trial.correct_index {
                RelationKind::Select
            } else {
                RelationKind::Reject
            };
            matrix.mark(trial.sample, comparison, kind)?;
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimuli::parse_label;
    use crate::trials::{generate_training_trials, NegativePolicy, PositionScheme, RelationType};

    fn letters(pairs: &[LetterPair]) -> Vec<String> {
        pairs.iter().map(|p| p.to_string()).collect()
    }

    fn labels(pairs: &[StimulusPair]) -> Vec<String> {
        pairs
            .iter()
            .map(|p| format!("{}{}", p.sample, p.comparison))
            .collect()
    }

    #[test]
    fn baseline_pairs_per_structure() {
        assert_eq!(
            letters(&baseline_pairs(TrainingStructure::LinearSeries)),
            ["AB", "BC", "CD", "DE", "EF"]
        );
        assert_eq!(
            letters(&baseline_pairs(TrainingStructure::OneToMany)),
            ["AB", "AC", "AD", "AE", "AF"]
        );
        assert_eq!(
            letters(&baseline_pairs(TrainingStructure::ManyToOne)),
            ["BA", "CA", "DA", "EA", "FA"]
        );
    }

    #[test]
    fn ls_test_pairs() {
        let set = derive_test_pairs(TrainingStructure::LinearSeries);
        assert_eq!(
            labels(&set.symmetry[..5]),
            ["B1A1", "C1B1", "D1C1", "E1D1", "F1E1"]
        );
        let trans = labels(&set.transitivity);
        assert!(trans.contains(&"A1C1".to_string()));
        assert!(trans.contains(&"C1A1".to_string()));
        assert!(!trans.contains(&"A1B1".to_string()));
        assert!(!trans.contains(&"B1A1".to_string()));
        assert_eq!(set.reflexivity.len(), 24);
    }

    #[test]
    fn pair_sets_partition_each_class() {
        for ts in TrainingStructure::ALL {
            let set = derive_test_pairs(ts);
            assert_eq!(set.baseline.len(), 20);
            assert_eq!(set.reflexivity.len(), 24);
            assert_eq!(set.symmetry.len(), 20);
            assert_eq!(set.transitivity.len(), 80);
            let mut all = BTreeSet::new();
            for kind in TestKind::ALL {
                for &p in set.pairs(kind) {
                    assert_eq!(p.sample.class(), p.comparison.class());
                    assert!(all.insert(p), "{p} appears twice");
                }
            }
            assert_eq!(all.len(), 36 * 4);
            for (b, s) in set.baseline.iter().zip(&set.symmetry) {
                assert_eq!((b.sample, b.comparison), (s.comparison, s.sample));
            }
        }
    }

    fn matrix_for(ts: TrainingStructure, relation: RelationType, ncs: NegativePolicy) -> RelationMatrix {
        let condition = Condition::new(ts, relation, ncs);
        let training = generate_training_trials(&condition, &PositionScheme::Rotations, 7).unwrap();
        relation_matrix(&condition, &training).unwrap()
    }

    #[test]
    fn ls_matrix_counts() {
        let std = matrix_for(TrainingStructure::LinearSeries, RelationType::SelectReject, NegativePolicy::Standard);
        assert_eq!(std.count(RelationKind::Select), 20);
        assert_eq!(std.count(RelationKind::Reject), 60);
        let biased = matrix_for(TrainingStructure::LinearSeries, RelationType::SelectReject, NegativePolicy::Biased);
        assert_eq!(biased.count(RelationKind::Select), 20);
        assert_eq!(biased.count(RelationKind::Reject), 360);
    }

    #[test]
    fn select_only_rejects_live_in_dummy_columns() {
        for ncs in [NegativePolicy::Standard, NegativePolicy::Biased] {
            let m = matrix_for(TrainingStructure::LinearSeries, RelationType::SelectOnly, ncs);
            assert_eq!(m.count_in(RelationKind::Reject, false), 0);
            assert!(m.count_in(RelationKind::Reject, true) > 0);
            assert_eq!(m.count_in(RelationKind::Select, false), 20);
        }
    }

    #[test]
    fn standard_rejects_share_the_member_letter() {
        for ts in TrainingStructure::ALL {
            let m = matrix_for(ts, RelationType::SelectReject, NegativePolicy::Standard);
            for (sample, comparison, kind) in m.iter() {
                if kind == RelationKind::Reject {
                    assert!(comparison.is_member());
                    assert_ne!(sample.class(), comparison.class());
                }
                if sample == comparison {
                    assert_eq!(kind, RelationKind::None);
                }
            }
            assert_eq!(m.count_in(RelationKind::Select, true), 0);
            assert_eq!(m.count_in(RelationKind::Reject, true), 0);
        }
    }

    #[test]
    fn mto_selects_form_member_a_column() {
        let m = matrix_for(TrainingStructure::ManyToOne, RelationType::SelectReject, NegativePolicy::Standard);
        for (_, comparison, kind) in m.iter() {
            if kind == RelationKind::Select {
                assert_eq!(comparison.letter(), Some(Letter::A));
            }
        }
    }

    #[test]
    fn conflicting_cells_are_rejected() {
        let mut m = RelationMatrix::empty();
        let a1 = parse_label("A1").unwrap();
        let b1 = parse_label("B1").unwrap();
        m.mark(a1, b1, RelationKind::Select).unwrap();
        m.mark(a1, b1, RelationKind::Select).unwrap();
        assert!(matches!(
            m.mark(a1, b1, RelationKind::Reject),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let m = matrix_for(TrainingStructure::LinearSeries, RelationType::SelectReject, NegativePolicy::Standard);
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 25);
        assert_eq!(lines[0].split(',').count(), 49);
        assert!(lines[0].starts_with("sample,A1,B1"));
        assert!(lines[0].ends_with("Z_34"));
        let a1: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(a1[0], "A1");
        assert_eq!(a1[1 + 1], "S+");
        assert_eq!(a1[1 + 7], "S-");
        assert!(m.to_svg("LS").contains("#1f5fbf"));
    }
}
