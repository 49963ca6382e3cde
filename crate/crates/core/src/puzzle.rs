//! Domain types shared by both puzzle protocols.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest supported number of children.
pub const MAX_CHILDREN: usize = 16;

/// A child's epistemic status about their own forehead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    /// Doesn't know.
    #[serde(rename = "u")]
    Unknown,
    /// Knows they are muddy.
    #[serde(rename = "m")]
    Muddy,
    /// Knows they are clean.
    #[serde(rename = "c")]
    Clean,
}

impl Status {
    pub fn is_final(self) -> bool {
        self != Status::Unknown
    }

    pub fn symbol(self) -> char {
        match self {
            Status::Unknown => 'u',
            Status::Muddy => 'm',
            Status::Clean => 'c',
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// A set of 1-based child indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ChildSet(u32);

impl ChildSet {
    pub const EMPTY: ChildSet = ChildSet(0);

    /// `{1, ..., n}`.
    pub fn all(n: usize) -> Self {
        assert!(n <= MAX_CHILDREN);
        ChildSet(((1u64 << n) - 1) as u32)
    }

    pub fn from_bits(bits: u32) -> Self {
        ChildSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn singleton(child: usize) -> Self {
        Self::EMPTY.with(child)
    }

    pub fn contains(self, child: usize) -> bool {
        (1..=MAX_CHILDREN).contains(&child) && self.0 & (1 << (child - 1)) != 0
    }

    pub fn with(self, child: usize) -> Self {
        assert!((1..=MAX_CHILDREN).contains(&child), "child index {child} out of range");
        ChildSet(self.0 | (1 << (child - 1)))
    }

    pub fn without(self, child: usize) -> Self {
        if (1..=MAX_CHILDREN).contains(&child) {
            ChildSet(self.0 & !(1 << (child - 1)))
        } else {
            self
        }
    }

    pub fn union(self, other: ChildSet) -> Self {
        ChildSet(self.0 | other.0)
    }

    pub fn is_subset(self, other: ChildSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (1..=MAX_CHILDREN).filter(move |&c| self.contains(c))
    }

    /// Every subset of `{1, ..., n} \ {excluded}`, in increasing bit order.
    pub fn subsets_excluding(n: usize, excluded: usize) -> Vec<ChildSet> {
        let universe = ChildSet::all(n).without(excluded).0;
        let mut out = Vec::new();
        // standard submask enumeration, ascending
        let mut sub: u32 = 0;
        loop {
            out.push(ChildSet(sub));
            if sub == universe {
                break;
            }
            sub = (sub.wrapping_sub(universe)) & universe;
        }
        out
    }
}

impl FromIterator<usize> for ChildSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter().fold(ChildSet::EMPTY, ChildSet::with)
    }
}

impl fmt::Debug for ChildSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for ChildSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, c) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for ChildSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ChildSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let members = Vec::<usize>::deserialize(deserializer)?;
        if let Some(bad) = members.iter().find(|c| !(1..=MAX_CHILDREN).contains(c)) {
            return Err(serde::de::Error::custom(format!("child index {bad} out of range")));
        }
        Ok(members.into_iter().collect())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PuzzleError {
    #[error("number of children must be between 1 and {MAX_CHILDREN}, got {0}")]
    ChildCount(usize),
    #[error("child {child} is outside 1..={n}")]
    ChildOutOfRange { child: usize, n: usize },
    #[error("at least one child must be muddy")]
    NoMuddyChild,
    #[error("the history protocol is only defined for three children (its similarity grouping does not scale beyond n = 3), got n = {0}")]
    HistoryNeedsThreeChildren(usize),
}

/// Ground truth of one puzzle run: `n` children, of whom `muddy` are muddy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PuzzleInstance {
    n: usize,
    muddy: ChildSet,
}

impl PuzzleInstance {
    pub fn new(n: usize, muddy: impl IntoIterator<Item = usize>) -> Result<Self, PuzzleError> {
        check_child_count(n)?;
        let mut set = ChildSet::EMPTY;
        for child in muddy {
            if !(1..=n).contains(&child) {
                return Err(PuzzleError::ChildOutOfRange { child, n });
            }
            set = set.with(child);
        }
        if set.is_empty() {
            return Err(PuzzleError::NoMuddyChild);
        }
        Ok(PuzzleInstance { n, muddy: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn muddy(&self) -> ChildSet {
        self.muddy
    }

    /// `N`, the true number of muddy children.
    pub fn muddy_count(&self) -> usize {
        self.muddy.len()
    }

    pub fn is_muddy(&self, child: usize) -> bool {
        self.muddy.contains(child)
    }

    /// What child `i` sees: every other muddy child.
    pub fn observation(&self, child: usize) -> ChildSet {
        self.muddy.without(child)
    }

    pub fn observations(&self) -> Vec<ChildSet> {
        (1..=self.n).map(|i| self.observation(i)).collect()
    }

    /// The status each child must end with.
    pub fn expected_statuses(&self) -> Vec<Status> {
        (1..=self.n)
            .map(|i| if self.is_muddy(i) { Status::Muddy } else { Status::Clean })
            .collect()
    }

    /// Every instance with `n` children, ordered by muddy-set bitmask.
    pub fn all(n: usize) -> Result<Vec<PuzzleInstance>, PuzzleError> {
        check_child_count(n)?;
        Ok((1..(1u32 << n))
            .map(|bits| PuzzleInstance { n, muddy: ChildSet(bits) })
            .collect())
    }
}

fn check_child_count(n: usize) -> Result<(), PuzzleError> {
    if (1..=MAX_CHILDREN).contains(&n) {
        Ok(())
    } else {
        Err(PuzzleError::ChildCount(n))
    }
}

/// The consistency predicate over one observation set per child
/// (position `k` belongs to child `k + 1`): with `M` the union of all
/// observations, `M` is non-empty and child `i` sees exactly `M \ {i}`.
///
/// A lone child can never observe anyone, so for a single child the
/// announcement alone is taken as witness and only `Obs = {}` is required.
pub fn consistent(observations: &[ChildSet]) -> bool {
    if let [only] = observations {
        return only.is_empty();
    }
    let all = observations.iter().fold(ChildSet::EMPTY, |acc, o| acc.union(*o));
    !all.is_empty()
        && observations
            .iter()
            .enumerate()
            .all(|(k, obs)| *obs == all.without(k + 1))
}

/// Transition labels of a puzzle child. The history protocol has no `Jump`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChildLabel {
    Init,
    Emit,
    Receive,
    Jump,
}

impl fmt::Display for ChildLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ChildLabel::Init => "init",
            ChildLabel::Emit => "emit",
            ChildLabel::Receive => "receive",
            ChildLabel::Jump => "jump",
        };
        f.write_str(name)
    }
}

/// Per-child view shared by both protocols' child states.
pub trait ChildView {
    fn observation(&self) -> ChildSet;
    /// `None` while still in the initial state.
    fn status(&self) -> Option<Status>;
}

/// Final states: every child is running with a decided status.
pub fn is_final<S: ChildView>(children: &[S]) -> bool {
    children.iter().all(|c| c.status().is_some_and(Status::is_final))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> ChildSet {
        xs.iter().copied().collect()
    }

    #[test]
    fn consistency_examples() {
        assert!(consistent(&[set(&[2]), set(&[1]), set(&[1, 2])]));
        assert!(!consistent(&[ChildSet::EMPTY, ChildSet::EMPTY, ChildSet::EMPTY]));
        assert!(!consistent(&[set(&[2]), set(&[2])]));
        assert!(consistent(&[ChildSet::EMPTY]));
        assert!(!consistent(&[ChildSet::singleton(1)]));
    }

    #[test]
    fn instance_observations_are_consistent() {
        for n in 1..=5 {
            for instance in PuzzleInstance::all(n).unwrap() {
                assert!(consistent(&instance.observations()), "{instance:?}");
            }
        }
        assert_eq!(PuzzleInstance::all(5).unwrap().len(), 31);
    }

    #[test]
    fn instance_validation() {
        assert_eq!(PuzzleInstance::new(3, []), Err(PuzzleError::NoMuddyChild));
        assert_eq!(
            PuzzleInstance::new(3, [4]),
            Err(PuzzleError::ChildOutOfRange { child: 4, n: 3 })
        );
        assert_eq!(PuzzleInstance::new(0, [1]), Err(PuzzleError::ChildCount(0)));
        let x = PuzzleInstance::new(5, [1, 2, 3, 4]).unwrap();
        assert_eq!(x.muddy_count(), 4);
        assert_eq!(x.observation(1), set(&[2, 3, 4]));
        assert_eq!(x.observation(5), set(&[1, 2, 3, 4]));
    }

    #[test]
    fn subsets_exclude_the_owner() {
        let subsets = ChildSet::subsets_excluding(3, 2);
        assert_eq!(subsets, vec![set(&[]), set(&[1]), set(&[3]), set(&[1, 3])]);
    }

    #[test]
    fn child_set_serializes_as_sorted_list() {
        let s = set(&[3, 1]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[1,3]");
        let back: ChildSet = serde_json::from_str("[3,1]").unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<ChildSet>("[0]").is_err());
        assert_eq!(s.to_string(), "{1,3}");
        assert_eq!(serde_json::to_string(&Status::Clean).unwrap(), "\"c\"");
    }
}
