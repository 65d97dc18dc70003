//! Registry of class-member and dummy stimuli.
//!
//! Stimuli are abstract tokens identified by a dense index. Class members
//! come first, ordered class-major (`A1, B1, ..., F1, A2, ..., F4`), followed
//! by the 24 dummies `Z_11 ..= Z_34`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MEMBERS_PER_CLASS: usize = 6;
pub const CLASS_COUNT: usize = 4;
pub const MEMBER_COUNT: usize = MEMBERS_PER_CLASS * CLASS_COUNT;
pub const DUMMY_COUNT: usize = MEMBER_COUNT;
pub const STIMULUS_COUNT: usize = MEMBER_COUNT + DUMMY_COUNT;

const FIRST_DUMMY_ORDINAL: usize = 11;
const MEMBER_LETTERS: [char; MEMBERS_PER_CLASS] = ['A', 'B', 'C', 'D', 'E', 'F'];

/// Member letter within a class (`A` = 0 .. `F` = 5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter(u8);

impl Letter {
    pub const A: Letter = Letter(0);
    pub const B: Letter = Letter(1);
    pub const C: Letter = Letter(2);
    pub const D: Letter = Letter(3);
    pub const E: Letter = Letter(4);
    pub const F: Letter = Letter(5);

    pub fn new(index: usize) -> Option<Letter> {
        (index < MEMBERS_PER_CLASS).then_some(Letter(index as u8))
    }

    pub fn all() -> impl Iterator<Item = Letter> {
        (0..MEMBERS_PER_CLASS as u8).map(Letter)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        MEMBER_LETTERS[self.index()]
    }

    pub fn from_char(c: char) -> Option<Letter> {
        MEMBER_LETTERS
            .iter()
            .position(|&l| l == c)
            .map(|i| Letter(i as u8))
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Dense stimulus index in `0..48`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct StimulusId(u8);

impl StimulusId {
    pub fn from_index(index: usize) -> Option<StimulusId> {
        (index < STIMULUS_COUNT).then_some(StimulusId(index as u8))
    }

    /// Class member `letter` of class `class` (1-based, as in the labels).
    pub fn member(class: usize, letter: Letter) -> StimulusId {
        assert!((1..=CLASS_COUNT).contains(&class), "class {class} out of range");
        StimulusId(((class - 1) * MEMBERS_PER_CLASS + letter.index()) as u8)
    }

    /// Dummy stimulus by its label ordinal (`11 ..= 34`).
    pub fn dummy(ordinal: usize) -> Option<StimulusId> {
        let offset = ordinal.checked_sub(FIRST_DUMMY_ORDINAL)?;
        (offset < DUMMY_COUNT).then_some(StimulusId((MEMBER_COUNT + offset) as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_member(self) -> bool {
        self.index() < MEMBER_COUNT
    }

    pub fn is_dummy(self) -> bool {
        !self.is_member()
    }

    /// 1-based class of a member stimulus.
    pub fn class(self) -> Option<usize> {
        self.is_member().then(|| self.index() / MEMBERS_PER_CLASS + 1)
    }

    pub fn letter(self) -> Option<Letter> {
        self.is_member()
            .then(|| Letter((self.index() % MEMBERS_PER_CLASS) as u8))
    }

    pub fn dummy_ordinal(self) -> Option<usize> {
        self.is_dummy()
            .then(|| self.index() - MEMBER_COUNT + FIRST_DUMMY_ORDINAL)
    }

    pub fn label(self) -> String {
        match (self.letter(), self.class(), self.dummy_ordinal()) {
            (Some(letter), Some(class), _) => format!("{letter}{class}"),
            (_, _, Some(ordinal)) => format!("Z_{ordinal}"),
            _ => unreachable!("stimulus is either a member or a dummy"),
        }
    }
}

/// Parses a member label (`A1` .. `F4`) or a dummy label (`Z_11` .. `Z_34`).
pub fn parse_label(label: &str) -> Result<StimulusId> {
    let bad = || Error::Label(label.to_string());
    if let Some(digits) = label.strip_prefix("Z_") {
        if digits.len() != 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let ordinal: usize = digits.parse().map_err(|_| bad())?;
        return StimulusId::dummy(ordinal).ok_or_else(bad);
    }
    let mut chars = label.chars();
    let (Some(l), Some(d), None) = (chars.next(), chars.next(), chars.next()) else {
        return Err(bad());
    };
    let letter = Letter::from_char(l).ok_or_else(bad)?;
    let class = d.to_digit(10).ok_or_else(bad)? as usize;
    if !(1..=CLASS_COUNT).contains(&class) {
        return Err(bad());
    }
    Ok(StimulusId::member(class, letter))
}

impl fmt::Display for StimulusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for StimulusId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl From<StimulusId> for String {
    fn from(id: StimulusId) -> String {
        id.label()
    }
}

impl TryFrom<String> for StimulusId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_label(&s)
    }
}

/// The fixed stimulus registry: 4 classes of 6 members plus 24 dummies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StimulusSet {
    pub members_per_class: usize,
    pub class_count: usize,
    pub dummy_count: usize,
}

impl Default for StimulusSet {
    fn default() -> Self {
        build_stimulus_set()
    }
}

pub fn build_stimulus_set() -> StimulusSet {
    StimulusSet {
        members_per_class: MEMBERS_PER_CLASS,
        class_count: CLASS_COUNT,
        dummy_count: DUMMY_COUNT,
    }
}

impl StimulusSet {
    pub fn len(&self) -> usize {
        self.members_per_class * self.class_count + self.dummy_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> Option<StimulusId> {
        StimulusId::from_index(index).filter(|_| index < self.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = StimulusId> {
        (0..self.len()).map(|i| StimulusId(i as u8))
    }

    pub fn members(&self) -> impl Iterator<Item = StimulusId> {
        (0..MEMBER_COUNT).map(|i| StimulusId(i as u8))
    }

    pub fn dummies(&self) -> impl Iterator<Item = StimulusId> {
        (MEMBER_COUNT..STIMULUS_COUNT).map(|i| StimulusId(i as u8))
    }

    /// Members of one class in letter order.
    pub fn class_members(&self, class: usize) -> impl Iterator<Item = StimulusId> {
        Letter::all().map(move |l| StimulusId::member(class, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_layout() {
        let set = build_stimulus_set();
        assert_eq!(set.len(), 48);
        assert_eq!(set.members().count(), 24);
        assert_eq!(set.dummies().count(), 24);
        assert_eq!(set.get(0).unwrap().label(), "A1");
        assert_eq!(set.get(5).unwrap().label(), "F1");
        assert_eq!(set.get(6).unwrap().label(), "A2");
        assert_eq!(set.get(24).unwrap().label(), "Z_11");
        assert_eq!(set.get(47).unwrap().label(), "Z_34");
        assert!(set.get(48).is_none());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_label("F4").unwrap().index(), 23);
        assert_eq!(parse_label("Z_34").unwrap().index(), 47);
        assert_eq!(parse_label("B1").unwrap().index(), 1);
        for bad in ["G1", "A5", "A0", "Z_10", "Z_35", "Z_1", "a1", "", "A12", "Z_3x", "Z__11"] {
            let err = parse_label(bad).unwrap_err();
            assert!(err.to_string().contains(bad), "{err}");
        }
    }

    #[test]
    fn label_round_trip_all() {
        let set = build_stimulus_set();
        for id in set.iter() {
            assert_eq!(parse_label(&id.label()).unwrap(), id);
        }
    }

    #[test]
    fn member_accessors() {
        let c3 = parse_label("C3").unwrap();
        assert_eq!(c3.class(), Some(3));
        assert_eq!(c3.letter(), Some(Letter::C));
        assert!(c3.dummy_ordinal().is_none());
        let z = parse_label("Z_17").unwrap();
        assert!(z.is_dummy());
        assert_eq!(z.dummy_ordinal(), Some(17));
        assert!(z.class().is_none());
    }

    #[test]
    fn serde_uses_labels() {
        let id = parse_label("Z_23").unwrap();
        assert_eq!(serde_json::to_string(&id).unwrap(), "\"Z_23\"");
        let back: StimulusId = serde_json::from_str("\"E2\"").unwrap();
        assert_eq!(back.label(), "E2");
        assert!(serde_json::from_str::<StimulusId>("\"Q9\"").is_err());
    }
}
