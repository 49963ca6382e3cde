//! The classical synchronous solution: a Kripke model over all `2^n`
//! muddiness assignments and iterated public elimination of worlds.
//!
//! A world is the set of muddy children, so `p_i` holds in `w` iff
//! `i ∈ w`, and `p` iff `w` is non-empty. Rounds are counted from 1.

use serde::Serialize;
use thiserror::Error;

use crate::puzzle::{ChildSet, Status};

/// Largest `n` the model is enumerated for.
pub const MAX_KRIPKE_CHILDREN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("the Kripke model is enumerated for 1..={MAX_KRIPKE_CHILDREN} children, got {0}")]
    ChildCount(usize),
    #[error("assignment {assignment} mentions children outside 1..={n}")]
    OutOfRange { assignment: ChildSet, n: usize },
    #[error("no child is muddy, so the announcement that someone is would be false")]
    NoMuddyChild,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KripkeModel {
    n: usize,
}

pub fn build_kripke(n: usize) -> Result<KripkeModel, OracleError> {
    if (1..=MAX_KRIPKE_CHILDREN).contains(&n) {
        Ok(KripkeModel { n })
    } else {
        Err(OracleError::ChildCount(n))
    }
}

impl KripkeModel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn world_count(&self) -> usize {
        1 << self.n
    }

    pub fn worlds(&self) -> impl Iterator<Item = ChildSet> {
        (0..1u32 << self.n).map(ChildSet::from_bits)
    }

    /// `(s, t) ∈ K_i`: the worlds agree on everyone but child `i`.
    pub fn accessible(&self, i: usize, s: ChildSet, t: ChildSet) -> bool {
        let diff = ChildSet::from_bits(s.bits() ^ t.bits());
        diff.is_subset(ChildSet::singleton(i))
    }

    /// Equivalence classes of `K_i`, each listed in ascending world order.
    pub fn classes(&self, i: usize) -> Vec<Vec<ChildSet>> {
        self.worlds()
            .filter(|w| !w.contains(i))
            .map(|w| vec![w, w.with(i)])
            .collect()
    }

    pub fn holds_p_i(&self, world: ChildSet, i: usize) -> bool {
        world.contains(i)
    }

    pub fn holds_p(&self, world: ChildSet) -> bool {
        !world.is_empty()
    }

    fn check(&self, x: ChildSet) -> Result<(), OracleError> {
        if x.is_subset(ChildSet::all(self.n)) {
            Ok(())
        } else {
            Err(OracleError::OutOfRange { assignment: x, n: self.n })
        }
    }
}

/// The worlds still considered possible by everyone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Elimination {
    model: KripkeModel,
    alive: Vec<bool>,
}

impl Elimination {
    /// Every world except the one where nobody is muddy.
    pub fn announced(model: KripkeModel) -> Self {
        let alive = model.worlds().map(|w| model.holds_p(w)).collect();
        Elimination { model, alive }
    }

    /// Every world, as if the father had said nothing.
    pub fn silent(model: KripkeModel) -> Self {
        Elimination { model, alive: vec![true; model.world_count()] }
    }

    pub fn is_alive(&self, world: ChildSet) -> bool {
        self.alive[world.bits() as usize]
    }

    pub fn alive(&self) -> Vec<ChildSet> {
        self.model.worlds().filter(|w| self.is_alive(*w)).collect()
    }

    /// In live world `w`, child `i` knows whether they are muddy iff the
    /// world differing from `w` only at `i` was eliminated.
    pub fn knows(&self, world: ChildSet, i: usize) -> bool {
        let other = ChildSet::from_bits(world.bits() ^ ChildSet::singleton(i).bits());
        !self.is_alive(other)
    }

    /// What child `i` knows about themselves in live world `w`.
    pub fn known_status(&self, world: ChildSet, i: usize) -> Status {
        match (self.knows(world, i), world.contains(i)) {
            (false, _) => Status::Unknown,
            (true, true) => Status::Muddy,
            (true, false) => Status::Clean,
        }
    }

    /// Who answers "I know" in `world`.
    pub fn answers(&self, world: ChildSet) -> ChildSet {
        (1..=self.model.n).filter(|&i| self.knows(world, i)).collect()
    }

    /// Publicly announces the answers given in the actual world `x`,
    /// keeping the worlds where everyone would have answered the same.
    pub fn step(&mut self, x: ChildSet) {
        let heard = self.answers(x);
        let keep: Vec<bool> = self
            .model
            .worlds()
            .map(|w| self.is_alive(w) && self.answers(w) == heard)
            .collect();
        self.alive = keep;
    }
}

/// Outcome of the synchronous protocol for one assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyncOutcome {
    /// Round at which each child first knows whether they are muddy.
    pub rounds_to_yes: Vec<u32>,
    pub final_statuses: Vec<Status>,
}

/// Runs elimination rounds from the announcement until every child knows.
pub fn sync_rounds(model: &KripkeModel, x: ChildSet) -> Result<SyncOutcome, OracleError> {
    model.check(x)?;
    if x.is_empty() {
        return Err(OracleError::NoMuddyChild);
    }
    let n = model.n;
    let mut state = Elimination::announced(*model);
    let mut rounds_to_yes = vec![0u32; n];
    let mut round = 0u32;
    while rounds_to_yes.contains(&0) {
        round += 1;
        let answers = state.answers(x);
        for i in answers.iter() {
            if rounds_to_yes[i - 1] == 0 {
                rounds_to_yes[i - 1] = round;
            }
        }
        state.step(x);
        // x itself always survives; at most n + 1 rounds are ever needed
        assert!(round as usize <= n + 1, "elimination did not settle");
    }
    let final_statuses = (1..=n).map(|i| state.known_status(x, i)).collect();
    Ok(SyncOutcome { rounds_to_yes, final_statuses })
}

pub fn expected_status(x: ChildSet, i: usize) -> Status {
    if x.contains(i) {
        Status::Muddy
    } else {
        Status::Clean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> ChildSet {
        xs.iter().copied().collect()
    }

    #[test]
    fn model_shape() {
        let one = build_kripke(1).unwrap();
        assert_eq!(one.world_count(), 2);
        assert!(one.accessible(1, set(&[]), set(&[1])));
        let three = build_kripke(3).unwrap();
        assert_eq!(three.world_count(), 8);
        for i in 1..=3 {
            let classes = three.classes(i);
            assert_eq!(classes.len(), 4);
            assert!(classes.iter().all(|c| c.len() == 2 && three.accessible(i, c[0], c[1])));
        }
        assert!(!three.accessible(1, set(&[1]), set(&[2])));
        let w = set(&[1, 2]);
        assert!(three.holds_p_i(w, 1) && three.holds_p_i(w, 2) && !three.holds_p_i(w, 3) && three.holds_p(w));
        assert_eq!(build_kripke(0), Err(OracleError::ChildCount(0)));
        assert_eq!(build_kripke(11), Err(OracleError::ChildCount(11)));
    }

    #[test]
    fn accessibility_is_an_equivalence() {
        let m = build_kripke(3).unwrap();
        let worlds: Vec<_> = m.worlds().collect();
        for i in 1..=3 {
            for &a in &worlds {
                assert!(m.accessible(i, a, a));
                for &b in &worlds {
                    assert_eq!(m.accessible(i, a, b), m.accessible(i, b, a));
                    for &c in &worlds {
                        if m.accessible(i, a, b) && m.accessible(i, b, c) {
                            assert!(m.accessible(i, a, c));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sync_examples() {
        let three = build_kripke(3).unwrap();
        let out = sync_rounds(&three, set(&[1])).unwrap();
        assert_eq!(out.rounds_to_yes, vec![1, 2, 2]);
        assert_eq!(out.final_statuses, vec![Status::Muddy, Status::Clean, Status::Clean]);
        let five = build_kripke(5).unwrap();
        let out = sync_rounds(&five, set(&[1, 2, 3, 4])).unwrap();
        assert_eq!(out.rounds_to_yes, vec![4, 4, 4, 4, 5]);
        let two = build_kripke(2).unwrap();
        assert_eq!(sync_rounds(&two, set(&[1, 2])).unwrap().rounds_to_yes, vec![2, 2]);
        assert_eq!(sync_rounds(&two, ChildSet::EMPTY), Err(OracleError::NoMuddyChild));
        assert!(matches!(sync_rounds(&two, set(&[3])), Err(OracleError::OutOfRange { .. })));
    }

    #[test]
    fn expected_status_examples() {
        assert_eq!(expected_status(set(&[1, 2, 5]), 3), Status::Clean);
        assert_eq!(expected_status(set(&[1]), 1), Status::Muddy);
    }

    #[test]
    fn unanimous_no_eliminates_small_worlds() {
        let m = build_kripke(4).unwrap();
        let x = ChildSet::all(4);
        let mut state = Elimination::announced(m);
        for k in 1..4 {
            assert!(state.answers(x).is_empty());
            state.step(x);
            assert!(state.alive().iter().all(|w| w.len() > k), "after round {k}");
        }
    }

    #[test]
    fn nothing_is_eliminated_without_the_announcement() {
        let m = build_kripke(3).unwrap();
        let mut state = Elimination::silent(m);
        for _ in 0..5 {
            state.step(set(&[1, 2]));
            assert_eq!(state.alive().len(), 8);
        }
        assert!(state.answers(set(&[1, 2])).is_empty());
        assert_eq!(state.known_status(set(&[1, 2]), 1), Status::Unknown);
    }
}
