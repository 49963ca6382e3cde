//! Indexed composition of machines over a shared message type, filtered by
//! a composition constraint, and the no-equivocation predicate.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vlsm::Vlsm;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompositionError {
    #[error("cannot compose an empty family of machines")]
    EmptyFamily,
    #[error("state is not in the product of the component initial states: {0}")]
    NotInitial(String),
    #[error("message has no identifiable sender in 1..={components}")]
    NoSender { components: usize },
}

/// A component-local label tagged with its (1-based) component index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompositeLabel<L> {
    pub index: usize,
    pub label: L,
}

impl<L> CompositeLabel<L> {
    pub fn new(index: usize, label: L) -> Self {
        CompositeLabel { index, label }
    }
}

/// One state per component; `component(i)` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompositeState<S>(Vec<S>);

impl<S> CompositeState<S> {
    pub fn new(components: Vec<S>) -> Self {
        CompositeState(components)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn components(&self) -> &[S] {
        &self.0
    }

    pub fn component(&self, index: usize) -> Option<&S> {
        index.checked_sub(1).and_then(|k| self.0.get(k))
    }

    pub fn into_components(self) -> Vec<S> {
        self.0
    }
}

impl<S: Clone> CompositeState<S> {
    /// Copy with component `index` replaced.
    pub fn replaced(&self, index: usize, state: S) -> Self {
        let mut next = self.0.clone();
        next[index - 1] = state;
        CompositeState(next)
    }
}

/// The predicate `φ` over composite label, state, and input.
pub trait CompositionConstraint<V: Vlsm> {
    fn admits(
        &self,
        label: &CompositeLabel<V::Label>,
        state: &CompositeState<V::State>,
        input: Option<&V::Message>,
    ) -> bool;

    /// Superset of the inputs `admits` can accept, if cheaply known.
    fn candidate_inputs(
        &self,
        _label: &CompositeLabel<V::Label>,
        _state: &CompositeState<V::State>,
    ) -> Option<Vec<V::Message>> {
        None
    }
}

/// The trivial constraint; yields the free composition.
#[derive(Debug, Clone, Copy, Default)]
pub struct Free;

impl<V: Vlsm> CompositionConstraint<V> for Free {
    fn admits(&self, _: &CompositeLabel<V::Label>, _: &CompositeState<V::State>, _: Option<&V::Message>) -> bool {
        true
    }
}

/// Conjunction of two constraints.
#[derive(Debug, Clone, Copy)]
pub struct Both<A, B>(pub A, pub B);

impl<V: Vlsm, A: CompositionConstraint<V>, B: CompositionConstraint<V>> CompositionConstraint<V> for Both<A, B> {
    fn admits(
        &self,
        label: &CompositeLabel<V::Label>,
        state: &CompositeState<V::State>,
        input: Option<&V::Message>,
    ) -> bool {
        self.0.admits(label, state, input) && self.1.admits(label, state, input)
    }

    fn candidate_inputs(
        &self,
        label: &CompositeLabel<V::Label>,
        state: &CompositeState<V::State>,
    ) -> Option<Vec<V::Message>> {
        intersect_hints(self.0.candidate_inputs(label, state), self.1.candidate_inputs(label, state))
    }
}

fn intersect_hints<M: Eq + std::hash::Hash>(a: Option<Vec<M>>, b: Option<Vec<M>>) -> Option<Vec<M>> {
    match (a, b) {
        (Some(a), Some(b)) => {
            let keep: HashSet<M> = b.into_iter().collect();
            Some(a.into_iter().filter(|m| keep.contains(m)).collect())
        }
        (Some(a), None) => Some(a),
        (None, b) => b,
    }
}

/// `(V_1 + ... + V_n) |φ`.
#[derive(Debug, Clone)]
pub struct Composite<V: Vlsm, C> {
    components: Vec<V>,
    constraint: C,
    initial: Option<Vec<CompositeState<<V as Vlsm>::State>>>,
}

/// Composes a non-empty family under `constraint`. Initial states are the
/// product of component initial states and `M0` is the union of component
/// initial messages.
pub fn compose<V: Vlsm, C: CompositionConstraint<V>>(
    components: Vec<V>,
    constraint: C,
) -> Result<Composite<V, C>, CompositionError> {
    if components.is_empty() {
        return Err(CompositionError::EmptyFamily);
    }
    Ok(Composite { components, constraint, initial: None })
}

impl<V: Vlsm, C: CompositionConstraint<V>> Composite<V, C> {
    pub fn components(&self) -> &[V] {
        &self.components
    }

    pub fn component(&self, index: usize) -> Option<&V> {
        index.checked_sub(1).and_then(|k| self.components.get(k))
    }

    pub fn constraint(&self) -> &C {
        &self.constraint
    }

    pub fn size(&self) -> usize {
        self.components.len()
    }

    /// Narrows `S0` to the given members of the product of component
    /// initial states.
    pub fn with_initial_states(
        mut self,
        states: Vec<CompositeState<V::State>>,
    ) -> Result<Self, CompositionError> {
        if states.is_empty() {
            return Err(CompositionError::NotInitial("empty initial state set".into()));
        }
        for state in &states {
            if !self.in_initial_product(state) {
                return Err(CompositionError::NotInitial(format!("{state:?}")));
            }
        }
        self.initial = Some(states);
        Ok(self)
    }

    fn in_initial_product(&self, state: &CompositeState<V::State>) -> bool {
        state.len() == self.components.len()
            && self
                .components
                .iter()
                .zip(state.components())
                .all(|(v, s)| v.is_state(s) && v.is_initial_state(s))
    }
}

impl<V: Vlsm, C: CompositionConstraint<V>> Vlsm for Composite<V, C> {
    type Label = CompositeLabel<V::Label>;
    type State = CompositeState<V::State>;
    type Message = V::Message;

    fn labels(&self) -> Vec<Self::Label> {
        self.components
            .iter()
            .enumerate()
            .flat_map(|(k, v)| v.labels().into_iter().map(move |l| CompositeLabel::new(k + 1, l)))
            .collect()
    }

    fn initial_states(&self) -> Vec<Self::State> {
        if let Some(initial) = &self.initial {
            return initial.clone();
        }
        let mut product = vec![Vec::new()];
        for v in &self.components {
            let options = v.initial_states();
            product = product
                .into_iter()
                .flat_map(|prefix| {
                    options.iter().map(move |s| {
                        let mut next = prefix.clone();
                        next.push(s.clone());
                        next
                    })
                })
                .collect();
        }
        product.into_iter().map(CompositeState).collect()
    }

    fn initial_messages(&self) -> Vec<Self::Message> {
        let mut seen = HashSet::new();
        self.components
            .iter()
            .flat_map(|v| v.initial_messages())
            .filter(|m| seen.insert(m.clone()))
            .collect()
    }

    fn is_state(&self, state: &Self::State) -> bool {
        state.len() == self.components.len()
            && self.components.iter().zip(state.components()).all(|(v, s)| v.is_state(s))
    }

    fn is_initial_state(&self, state: &Self::State) -> bool {
        match &self.initial {
            Some(initial) => initial.contains(state),
            None => self.in_initial_product(state),
        }
    }

    fn transition(
        &self,
        label: &Self::Label,
        state: &Self::State,
        input: Option<&Self::Message>,
    ) -> (Self::State, Option<Self::Message>) {
        let (v, local) = match (self.component(label.index), state.component(label.index)) {
            (Some(v), Some(local)) => (v, local),
            _ => return (state.clone(), None),
        };
        let (next, output) = v.transition(&label.label, local, input);
        (state.replaced(label.index, next), output)
    }

    fn valid(&self, label: &Self::Label, state: &Self::State, input: Option<&Self::Message>) -> bool {
        match (self.component(label.index), state.component(label.index)) {
            (Some(v), Some(local)) => {
                v.valid(&label.label, local, input) && self.constraint.admits(label, state, input)
            }
            _ => false,
        }
    }

    fn candidate_inputs(&self, label: &Self::Label, state: &Self::State) -> Option<Vec<Self::Message>> {
        let local = match (self.component(label.index), state.component(label.index)) {
            (Some(v), Some(s)) => v.candidate_inputs(&label.label, s),
            _ => return Some(Vec::new()),
        };
        intersect_hints(local, self.constraint.candidate_inputs(label, state))
    }
}

/// Messages that name the component that sent them.
pub trait Sender {
    /// 1-based sender index.
    fn sender(&self) -> usize;
}

/// True iff the sender of `message` could have emitted it on a trace
/// leading to its current component state, as decided by `emittable`
/// (called with the sender index and that component's state).
pub fn no_equivocation<S, M: Sender>(
    state: &CompositeState<S>,
    message: &M,
    emittable: impl Fn(usize, &S, &M) -> bool,
) -> Result<bool, CompositionError> {
    let sender = message.sender();
    match state.component(sender) {
        Some(local) => Ok(emittable(sender, local, message)),
        None => Err(CompositionError::NoSender { components: state.len() }),
    }
}

/// Bounded search over a single component's constrained traces: is
/// there a trace of at most `bound` transitions, using inputs drawn from
/// `pool`, that ends in `target` and outputs `message` somewhere along the way
/// (including an emission from `target` itself)?
pub fn emittable_within<V: Vlsm>(
    component: &V,
    target: &V::State,
    message: &V::Message,
    pool: &[V::Message],
    bound: usize,
) -> bool {
    let labels = component.labels();
    let mut seen: HashSet<(V::State, bool)> = HashSet::new();
    let mut queue = VecDeque::new();
    for s in component.initial_states() {
        if seen.insert((s.clone(), false)) {
            queue.push_back((s, false, 0usize));
        }
    }
    while let Some((state, emitted, depth)) = queue.pop_front() {
        if emitted && &state == target {
            return true;
        }
        if depth == bound {
            continue;
        }
        for label in &labels {
            let inputs = std::iter::once(None).chain(pool.iter().map(Some));
            for input in inputs {
                if !component.valid(label, &state, input) {
                    continue;
                }
                let (next, output) = component.transition(label, &state, input);
                let flag = emitted || output.as_ref() == Some(message);
                if seen.insert((next.clone(), flag)) {
                    queue.push_back((next, flag, depth + 1));
                }
            }
        }
    }
    false
}

/// The no-equivocation constraint realized by [`emittable_within`], for
/// machines without a closed-form emission test.
#[derive(Debug, Clone)]
pub struct BoundedNoEquivocation<V: Vlsm> {
    components: Vec<V>,
    pool: Vec<V::Message>,
    bound: usize,
}

impl<V: Vlsm> BoundedNoEquivocation<V> {
    pub fn new(components: Vec<V>, pool: Vec<V::Message>, bound: usize) -> Self {
        BoundedNoEquivocation { components, pool, bound }
    }
}

impl<V: Vlsm> CompositionConstraint<V> for BoundedNoEquivocation<V>
where
    V::Message: Sender,
{
    fn admits(
        &self,
        _label: &CompositeLabel<V::Label>,
        state: &CompositeState<V::State>,
        input: Option<&V::Message>,
    ) -> bool {
        let Some(message) = input else { return true };
        no_equivocation(state, message, |j, local, m| {
            emittable_within(&self.components[j - 1], local, m, &self.pool, self.bound)
        })
        .unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vlsm::{apply_transition, valid_closure};

    /// Toggle that broadcasts its bit and may copy a received bit.
    #[derive(Debug, Clone)]
    struct Toggle {
        me: usize,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Hash)]
    enum ToggleLabel {
        Flip,
        Send,
        Copy,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Hash)]
    struct Bit {
        from: usize,
        value: bool,
    }

    impl Sender for Bit {
        fn sender(&self) -> usize {
            self.from
        }
    }

    impl Vlsm for Toggle {
        type Label = ToggleLabel;
        type State = bool;
        type Message = Bit;
        fn labels(&self) -> Vec<ToggleLabel> {
            vec![ToggleLabel::Flip, ToggleLabel::Send, ToggleLabel::Copy]
        }
        fn initial_states(&self) -> Vec<bool> {
            vec![false]
        }
        fn is_state(&self, _: &bool) -> bool {
            true
        }
        fn is_initial_state(&self, s: &bool) -> bool {
            !*s
        }
        fn transition(&self, l: &ToggleLabel, s: &bool, m: Option<&Bit>) -> (bool, Option<Bit>) {
            match l {
                ToggleLabel::Flip => (!*s, None),
                ToggleLabel::Send => (*s, Some(Bit { from: self.me, value: *s })),
                ToggleLabel::Copy => (m.map_or(*s, |b| b.value), None),
            }
        }
        fn valid(&self, l: &ToggleLabel, s: &bool, m: Option<&Bit>) -> bool {
            match l {
                ToggleLabel::Flip => m.is_none() && !*s,
                ToggleLabel::Send => m.is_none(),
                ToggleLabel::Copy => m.is_some(),
            }
        }
    }

    #[test]
    fn empty_family_is_rejected() {
        assert_eq!(compose(Vec::<Toggle>::new(), Free).err(), Some(CompositionError::EmptyFamily));
    }

    #[test]
    fn unit_composition_mirrors_the_component() {
        let single = Toggle { me: 1 };
        let composite = compose(vec![single.clone()], Free).unwrap();
        let lone = valid_closure(&single, 10);
        let wrapped = valid_closure(&composite, 10);
        assert_eq!(lone.states().len(), wrapped.states().len());
        for s in lone.states() {
            assert!(wrapped.contains_state(&CompositeState::new(vec![*s])));
        }
        assert_eq!(lone.messages(), wrapped.messages());
    }

    #[test]
    fn transitions_touch_only_their_component() {
        let composite = compose(vec![Toggle { me: 1 }, Toggle { me: 2 }], Free).unwrap();
        let start = CompositeState::new(vec![false, false]);
        let record = apply_transition(&composite, &CompositeLabel::new(2, ToggleLabel::Flip), &start, None)
            .unwrap()
            .unwrap();
        assert_eq!(record.destination, CompositeState::new(vec![false, true]));
        assert_eq!(composite.initial_states(), vec![start]);
    }

    /// Rejects every input.
    struct Deaf;
    impl CompositionConstraint<Toggle> for Deaf {
        fn admits(&self, _: &CompositeLabel<ToggleLabel>, _: &CompositeState<bool>, m: Option<&Bit>) -> bool {
            m.is_none()
        }
    }

    #[test]
    fn constraint_filters_transitions_the_component_accepts() {
        let composite = compose(vec![Toggle { me: 1 }, Toggle { me: 2 }], Deaf).unwrap();
        let start = CompositeState::new(vec![false, false]);
        let message = Bit { from: 2, value: true };
        let label = CompositeLabel::new(1, ToggleLabel::Copy);
        assert!(Toggle { me: 1 }.valid(&label.label, &false, Some(&message)));
        assert_eq!(apply_transition(&composite, &label, &start, Some(&message)), Ok(None));
    }

    #[test]
    fn no_equivocation_requires_a_sender() {
        let state = CompositeState::new(vec![false, true]);
        let ok = no_equivocation(&state, &Bit { from: 2, value: true }, |_, s, m| *s == m.value);
        assert_eq!(ok, Ok(true));
        let stale = no_equivocation(&state, &Bit { from: 1, value: true }, |_, s, m| *s == m.value);
        assert_eq!(stale, Ok(false));
        let orphan = no_equivocation(&state, &Bit { from: 3, value: true }, |_, _, _| true);
        assert_eq!(orphan, Err(CompositionError::NoSender { components: 2 }));
    }

    #[test]
    fn bounded_search_finds_past_emissions() {
        let t = Toggle { me: 1 };
        let sent_false = Bit { from: 1, value: false };
        let sent_true = Bit { from: 1, value: true };
        // false was sendable before the flip
        assert!(emittable_within(&t, &true, &sent_false, &[], 3));
        assert!(emittable_within(&t, &true, &sent_true, &[], 3));
        // without a flip the state never held true
        assert!(!emittable_within(&t, &false, &sent_true, &[], 5));
        assert!(!emittable_within(&t, &true, &sent_false, &[], 1));
    }

    #[test]
    fn bounded_constraint_shrinks_the_free_composition() {
        let family = vec![Toggle { me: 1 }, Toggle { me: 2 }];
        let free = valid_closure(&compose(family.clone(), Free).unwrap(), 20);
        let guarded = compose(family.clone(), BoundedNoEquivocation::new(family, vec![], 4)).unwrap();
        let guarded = valid_closure(&guarded, 20);
        assert!(free.converged() && guarded.converged());
        for s in guarded.states() {
            assert!(free.contains_state(s));
        }
        assert!(guarded.states().len() <= free.states().len());
    }
}
