//! Single machines: labeled transitions guarded by a validity constraint,
//! constrained and valid traces, and the valid state/message closure.

use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;
use std::ops::Range;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A message or the distinguished no-message marker (`None`).
///
/// `None` is distinct from every message and always valid.
pub type OptionalMessage<M> = Option<M>;

/// A labeled state transition and message production system guarded by a
/// validity constraint.
///
/// `transition` is total on its domain; partiality comes only from `valid`.
/// States and messages need structural equality and hashing, never ordering.
pub trait Vlsm {
    type Label: Clone + Eq + Hash + Debug;
    type State: Clone + Eq + Hash + Debug;
    type Message: Clone + Eq + Hash + Debug;

    /// The finite label set, in a fixed order.
    fn labels(&self) -> Vec<Self::Label>;

    /// Enumeration of the (non-empty) initial state set.
    fn initial_states(&self) -> Vec<Self::State>;

    fn initial_messages(&self) -> Vec<Self::Message> {
        Vec::new()
    }

    /// State-membership predicate.
    fn is_state(&self, state: &Self::State) -> bool;

    fn is_initial_state(&self, state: &Self::State) -> bool;

    fn transition(
        &self,
        label: &Self::Label,
        state: &Self::State,
        input: Option<&Self::Message>,
    ) -> (Self::State, Option<Self::Message>);

    /// The validity constraint on transition inputs.
    fn valid(&self, label: &Self::Label, state: &Self::State, input: Option<&Self::Message>) -> bool;

    /// Optional pruning hint for exploration: a superset of the messages
    /// that can satisfy `valid` for `(label, state)`. `None` means every
    /// message must be tried.
    fn candidate_inputs(&self, _label: &Self::Label, _state: &Self::State) -> Option<Vec<Self::Message>> {
        None
    }
}

impl<V: Vlsm + ?Sized> Vlsm for &V {
    type Label = V::Label;
    type State = V::State;
    type Message = V::Message;

    fn labels(&self) -> Vec<Self::Label> {
        (**self).labels()
    }
    fn initial_states(&self) -> Vec<Self::State> {
        (**self).initial_states()
    }
    fn initial_messages(&self) -> Vec<Self::Message> {
        (**self).initial_messages()
    }
    fn is_state(&self, state: &Self::State) -> bool {
        (**self).is_state(state)
    }
    fn is_initial_state(&self, state: &Self::State) -> bool {
        (**self).is_initial_state(state)
    }
    fn transition(
        &self,
        label: &Self::Label,
        state: &Self::State,
        input: Option<&Self::Message>,
    ) -> (Self::State, Option<Self::Message>) {
        (**self).transition(label, state, input)
    }
    fn valid(&self, label: &Self::Label, state: &Self::State, input: Option<&Self::Message>) -> bool {
        (**self).valid(label, state, input)
    }
    fn candidate_inputs(&self, label: &Self::Label, state: &Self::State) -> Option<Vec<Self::Message>> {
        (**self).candidate_inputs(label, state)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VlsmError {
    #[error("value is not a state of this machine: {0}")]
    NotAState(String),
}

/// A constrained transition `label: (source, input) -> (destination, output)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransitionRecord<L, S, M> {
    pub label: L,
    pub source: S,
    pub input: Option<M>,
    pub destination: S,
    pub output: Option<M>,
}

/// An initial state followed by chained transition records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace<L, S, M> {
    pub initial: S,
    pub records: Vec<TransitionRecord<L, S, M>>,
}

pub type RecordOf<V> = TransitionRecord<<V as Vlsm>::Label, <V as Vlsm>::State, <V as Vlsm>::Message>;
pub type TraceOf<V> = Trace<<V as Vlsm>::Label, <V as Vlsm>::State, <V as Vlsm>::Message>;

impl<L, S: Clone, M> Trace<L, S, M> {
    pub fn empty(initial: S) -> Self {
        Trace { initial, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The state the trace ends in.
    pub fn last_state(&self) -> &S {
        self.records.last().map_or(&self.initial, |r| &r.destination)
    }

    /// Every message output along the trace, in order.
    pub fn outputs(&self) -> impl Iterator<Item = &M> {
        self.records.iter().filter_map(|r| r.output.as_ref())
    }
}

/// Fires `label` from `state` on `input`.
///
/// Returns `Ok(None)` when the validity constraint rejects the input and an
/// error when `state` is not a state of the machine at all.
pub fn apply_transition<V: Vlsm>(
    vlsm: &V,
    label: &V::Label,
    state: &V::State,
    input: Option<&V::Message>,
) -> Result<Option<RecordOf<V>>, VlsmError> {
    if !vlsm.is_state(state) {
        return Err(VlsmError::NotAState(format!("{state:?}")));
    }
    if !vlsm.valid(label, state, input) {
        return Ok(None);
    }
    let (destination, output) = vlsm.transition(label, state, input);
    Ok(Some(TransitionRecord {
        label: label.clone(),
        source: state.clone(),
        input: input.cloned(),
        destination,
        output,
    }))
}

/// True iff the trace starts in an initial state, is properly chained, and
/// every record re-validates.
pub fn is_constrained_trace<V: Vlsm>(vlsm: &V, trace: &TraceOf<V>) -> bool {
    if !vlsm.is_state(&trace.initial) || !vlsm.is_initial_state(&trace.initial) {
        return false;
    }
    let mut current = &trace.initial;
    for record in &trace.records {
        if &record.source != current {
            return false;
        }
        match apply_transition(vlsm, &record.label, &record.source, record.input.as_ref()) {
            Ok(Some(replayed))
                if replayed.destination == record.destination && replayed.output == record.output => {}
            _ => return false,
        }
        current = &record.destination;
    }
    true
}

/// Outcome of a validity query that depends on a truncated closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceValidity {
    Valid,
    Invalid,
    /// Some input was not found in a closure that did not converge.
    Indeterminate,
}

/// Checks a trace against the valid-message closure computed with
/// `depth_bound` sweeps.
pub fn is_valid_trace<V: Vlsm>(vlsm: &V, trace: &TraceOf<V>, depth_bound: usize) -> TraceValidity {
    let closure = valid_closure(vlsm, depth_bound);
    closure.trace_validity(vlsm, trace)
}

/// One constrained transition fired during closure computation, by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: usize,
    pub label: usize,
    pub input: Option<usize>,
    pub destination: usize,
    pub output: Option<usize>,
}

/// Cumulative sizes after a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCount {
    pub states: usize,
    pub messages: usize,
}

/// Least fixpoint of valid states and messages, truncated at a sweep bound.
///
/// States and messages are indexed in discovery order; `Edge` indices refer
/// to these positions and to the label order of `Vlsm::labels`.
#[derive(Debug, Clone)]
pub struct Closure<V: Vlsm> {
    labels: Vec<V::Label>,
    states: IndexSet<V::State>,
    messages: IndexSet<V::Message>,
    state_sweep: Vec<usize>,
    message_sweep: Vec<usize>,
    initial: Range<usize>,
    edges: Vec<Edge>,
    per_sweep: Vec<SweepCount>,
    converged: bool,
}

impl<V: Vlsm> Closure<V> {
    pub fn labels(&self) -> &[V::Label] {
        &self.labels
    }

    pub fn states(&self) -> &IndexSet<V::State> {
        &self.states
    }

    pub fn messages(&self) -> &IndexSet<V::Message> {
        &self.messages
    }

    pub fn state(&self, id: usize) -> &V::State {
        &self.states[id]
    }

    pub fn message(&self, id: usize) -> &V::Message {
        &self.messages[id]
    }

    pub fn state_id(&self, state: &V::State) -> Option<usize> {
        self.states.get_index_of(state)
    }

    pub fn message_id(&self, message: &V::Message) -> Option<usize> {
        self.messages.get_index_of(message)
    }

    pub fn contains_state(&self, state: &V::State) -> bool {
        self.states.contains(state)
    }

    /// The no-message marker is always contained.
    pub fn contains_message(&self, message: Option<&V::Message>) -> bool {
        message.is_none_or(|m| self.messages.contains(m))
    }

    /// Sweep in which a state was first produced (0 for initial states).
    pub fn state_sweep(&self, id: usize) -> usize {
        self.state_sweep[id]
    }

    pub fn message_sweep(&self, id: usize) -> usize {
        self.message_sweep[id]
    }

    pub fn initial_ids(&self) -> Range<usize> {
        self.initial.clone()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Cumulative counts after each performed sweep.
    pub fn per_sweep(&self) -> &[SweepCount] {
        &self.per_sweep
    }

    pub fn sweeps(&self) -> usize {
        self.per_sweep.len()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Materializes an edge as a transition record.
    pub fn record(&self, edge: &Edge) -> RecordOf<V> {
        TransitionRecord {
            label: self.labels[edge.label].clone(),
            source: self.states[edge.source].clone(),
            input: edge.input.map(|m| self.messages[m].clone()),
            destination: self.states[edge.destination].clone(),
            output: edge.output.map(|m| self.messages[m].clone()),
        }
    }

    /// Validity of `trace` relative to this closure. Membership in a
    /// truncated closure still proves validity; absence only disproves it
    /// once the closure has converged.
    pub fn trace_validity(&self, vlsm: &V, trace: &TraceOf<V>) -> TraceValidity {
        if !is_constrained_trace(vlsm, trace) {
            return TraceValidity::Invalid;
        }
        let all_inputs_valid = trace
            .records
            .iter()
            .all(|r| self.contains_message(r.input.as_ref()));
        match (all_inputs_valid, self.converged) {
            (true, _) => TraceValidity::Valid,
            (false, true) => TraceValidity::Invalid,
            (false, false) => TraceValidity::Indeterminate,
        }
    }
}

struct Saturation<'v, V: Vlsm> {
    vlsm: &'v V,
    labels: Vec<V::Label>,
    states: IndexSet<V::State>,
    messages: IndexSet<V::Message>,
    state_sweep: Vec<usize>,
    message_sweep: Vec<usize>,
    edges: Vec<Edge>,
    sweep: usize,
}

impl<V: Vlsm> Saturation<'_, V> {
    fn fire(&mut self, source: usize, label: usize, input: Option<usize>) {
        let (destination, output) = {
            let state = &self.states[source];
            let message = input.map(|m| &self.messages[m]);
            let label = &self.labels[label];
            if !self.vlsm.valid(label, state, message) {
                return;
            }
            self.vlsm.transition(label, state, message)
        };
        let (destination, fresh) = self.states.insert_full(destination);
        if fresh {
            self.state_sweep.push(self.sweep);
        }
        let output = output.map(|m| {
            let (id, fresh) = self.messages.insert_full(m);
            if fresh {
                self.message_sweep.push(self.sweep);
            }
            id
        });
        self.edges.push(Edge { source, label, input, destination, output });
    }
}

/// Computes valid states and messages by saturation.
///
/// Sweep `k + 1` fires every constrained transition whose source state and
/// input message were known after sweep `k`; only pairs involving something
/// discovered in sweep `k` are fired again. The result after `depth_bound`
/// sweeps is independent of iteration order.
pub fn valid_closure<V: Vlsm>(vlsm: &V, depth_bound: usize) -> Closure<V> {
    let labels = vlsm.labels();
    let mut states = IndexSet::new();
    for state in vlsm.initial_states() {
        states.insert(state);
    }
    let mut messages = IndexSet::new();
    for message in vlsm.initial_messages() {
        messages.insert(message);
    }
    let initial = 0..states.len();
    let mut run = Saturation {
        vlsm,
        labels,
        state_sweep: vec![0; states.len()],
        message_sweep: vec![0; messages.len()],
        states,
        messages,
        edges: Vec::new(),
        sweep: 0,
    };

    // (state, label) pairs waiting for a candidate message to become valid
    let mut pending: HashMap<V::Message, Vec<(usize, usize)>> = HashMap::new();
    // (state, label) pairs without a candidate hint: paired with every message
    let mut open_pairs: Vec<(usize, usize)> = Vec::new();

    let mut state_frontier = initial.clone();
    let mut message_frontier = 0..run.messages.len();
    let mut per_sweep = Vec::new();
    let mut converged = false;

    loop {
        if state_frontier.is_empty() && message_frontier.is_empty() {
            converged = true;
            break;
        }
        if run.sweep == depth_bound {
            break;
        }
        run.sweep += 1;
        let known_states = run.states.len();
        let known_messages = run.messages.len();

        for m in message_frontier.clone() {
            if let Some(waiting) = pending.remove(&run.messages[m]) {
                for (s, l) in waiting {
                    run.fire(s, l, Some(m));
                }
            }
            for &(s, l) in &open_pairs {
                run.fire(s, l, Some(m));
            }
        }

        for s in state_frontier.clone() {
            for l in 0..run.labels.len() {
                run.fire(s, l, None);
                let hint = run.vlsm.candidate_inputs(&run.labels[l], &run.states[s]);
                match hint {
                    Some(candidates) => {
                        let candidates: IndexSet<V::Message> = candidates.into_iter().collect();
                        for candidate in candidates {
                            match run.messages.get_index_of(&candidate) {
                                Some(m) if m < known_messages => run.fire(s, l, Some(m)),
                                _ => pending.entry(candidate).or_default().push((s, l)),
                            }
                        }
                    }
                    None => {
                        open_pairs.push((s, l));
                        for m in 0..known_messages {
                            run.fire(s, l, Some(m));
                        }
                    }
                }
            }
        }

        state_frontier = known_states..run.states.len();
        message_frontier = known_messages..run.messages.len();
        per_sweep.push(SweepCount { states: run.states.len(), messages: run.messages.len() });
    }

    Closure {
        labels: run.labels,
        states: run.states,
        messages: run.messages,
        state_sweep: run.state_sweep,
        message_sweep: run.message_sweep,
        initial,
        edges: run.edges,
        per_sweep,
        converged,
    }
}
