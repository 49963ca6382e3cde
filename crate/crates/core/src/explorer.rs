//! Exhaustive exploration of composed puzzles and the property checks run
//! over the resulting graph of valid states.

use std::collections::VecDeque;
use std::fmt::Debug;
use std::hash::Hash;

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{Composite, CompositeLabel, CompositeState, CompositionConstraint, Sender};
use crate::oracle;
use crate::puzzle::{self, ChildLabel, ChildSet, ChildView, PuzzleError, PuzzleInstance, Status};
use crate::rounds::RoundChildState;
use crate::vlsm::{Closure, Edge, RecordOf, TraceOf, TransitionRecord, Vlsm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rounds,
    RoundsJump,
    History,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rounds => "rounds",
            ModelKind::RoundsJump => "rounds_jump",
            ModelKind::History => "history",
        }
    }

    pub fn is_rounds(self) -> bool {
        self != ModelKind::History
    }
}

/// Sweep bound used when none is given: `4·n·(n+2)` for the round-based
/// models, and a bound the capped history model always converges within.
pub fn default_bound(model: ModelKind, n: usize) -> usize {
    match model {
        ModelKind::Rounds | ModelKind::RoundsJump => 4 * n * (n + 2),
        ModelKind::History => 64,
    }
}

/// Default per-child history length cap for the history model.
pub const DEFAULT_HISTORY_CAP: usize = 2;

/// History length cap for the fragment that delivers only current messages.
pub const DEFAULT_FRESH_CAP: usize = 3;

/// History length cap for the two-party exchange explorations.
pub const DEFAULT_PAIR_CAP: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error(transparent)]
    Puzzle(#[from] PuzzleError),
    #[error("history cap must be at least 1")]
    ZeroCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub model: ModelKind,
    pub n: usize,
    pub muddy: ChildSet,
    pub bound: usize,
    /// History model only: most messages any child may receive.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub history_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fresh_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pair_cap: Option<usize>,
}

impl ExplorationConfig {
    pub fn new(model: ModelKind, instance: &PuzzleInstance) -> Self {
        let history = model == ModelKind::History;
        ExplorationConfig {
            model,
            n: instance.n(),
            muddy: instance.muddy(),
            bound: default_bound(model, instance.n()),
            history_cap: history.then_some(DEFAULT_HISTORY_CAP),
            fresh_cap: history.then_some(DEFAULT_FRESH_CAP),
            pair_cap: history.then_some(DEFAULT_PAIR_CAP),
        }
    }

    pub fn validate(&self) -> Result<PuzzleInstance, ConfigError> {
        let instance = PuzzleInstance::new(self.n, self.muddy.iter())?;
        if self.model == ModelKind::History {
            if self.n != 3 {
                return Err(PuzzleError::HistoryNeedsThreeChildren(self.n).into());
            }
            if [self.history_cap, self.fresh_cap, self.pair_cap].contains(&Some(0)) {
                return Err(ConfigError::ZeroCap);
            }
        }
        Ok(instance)
    }
}

/// Command-line adjustments to a default configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub bound: Option<usize>,
    pub history_cap: Option<usize>,
    pub fresh_cap: Option<usize>,
    pub pair_cap: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExplorationConfig) {
        if let Some(bound) = self.bound {
            config.bound = bound;
        }
        if config.model == ModelKind::History {
            config.history_cap = self.history_cap.or(config.history_cap);
            config.fresh_cap = self.fresh_cap.or(config.fresh_cap);
            config.pair_cap = self.pair_cap.or(config.pair_cap);
        }
    }
}

/// A composition of puzzle children, with access to the two halves of its
/// validity predicate.
pub trait Puzzle: Vlsm<Label = CompositeLabel<ChildLabel>, State = CompositeState<Self::Child>> {
    type Child: ChildView + Clone + Eq + Hash + Debug + Serialize;

    fn size(&self) -> usize;

    /// The receiving (or acting) child's own validity predicate.
    fn child_valid(&self, label: &Self::Label, state: &Self::State, msg: Option<&Self::Message>) -> bool;

    /// The composition constraint.
    fn constraint_admits(&self, label: &Self::Label, state: &Self::State, msg: Option<&Self::Message>) -> bool;
}

impl<V, C> Puzzle for Composite<V, C>
where
    V: Vlsm<Label = ChildLabel>,
    V::State: ChildView + Serialize,
    C: CompositionConstraint<V>,
{
    type Child = V::State;

    fn size(&self) -> usize {
        Composite::size(self)
    }

    fn child_valid(&self, label: &Self::Label, state: &Self::State, msg: Option<&V::Message>) -> bool {
        match (self.component(label.index), state.component(label.index)) {
            (Some(child), Some(local)) => child.valid(&label.label, local, msg),
            _ => false,
        }
    }

    fn constraint_admits(&self, label: &Self::Label, state: &Self::State, msg: Option<&V::Message>) -> bool {
        self.constraint().admits(label, state, msg)
    }
}

/// Messages that can be named in scenarios and reports.
pub trait PuzzleMessage: Sender + Clone + Eq + Hash + Debug + Serialize + DeserializeOwned {}

impl<M: Sender + Clone + Eq + Hash + Debug + Serialize + DeserializeOwned> PuzzleMessage for M {}

/// The valid-state closure together with shortest-trace information.
pub struct Exploration<P: Puzzle> {
    closure: Closure<P>,
    depth: Vec<usize>,
    parent: Vec<Option<usize>>,
    outgoing: Vec<Vec<usize>>,
    emission_depth: Vec<Option<usize>>,
}

pub fn explore_puzzle<P: Puzzle>(puzzle: &P, bound: usize) -> Exploration<P> {
    let closure = crate::vlsm::valid_closure(puzzle, bound);
    let count = closure.states().len();
    let mut outgoing = vec![Vec::new(); count];
    for (k, edge) in closure.edges().iter().enumerate() {
        outgoing[edge.source].push(k);
    }
    let mut depth = vec![usize::MAX; count];
    let mut parent = vec![None; count];
    let mut queue = VecDeque::new();
    for id in closure.initial_ids() {
        depth[id] = 0;
        queue.push_back(id);
    }
    while let Some(id) = queue.pop_front() {
        for &k in &outgoing[id] {
            let next = closure.edges()[k].destination;
            if depth[next] == usize::MAX {
                depth[next] = depth[id] + 1;
                parent[next] = Some(k);
                queue.push_back(next);
            }
        }
    }
    let mut emission_depth = vec![None; closure.messages().len()];
    for edge in closure.edges() {
        if let Some(m) = edge.output {
            let d = depth[edge.source];
            if emission_depth[m].is_none_or(|best| d < best) {
                emission_depth[m] = Some(d);
            }
        }
    }
    Exploration { closure, depth, parent, outgoing, emission_depth }
}

impl<P: Puzzle> Exploration<P> {
    pub fn closure(&self) -> &Closure<P> {
        &self.closure
    }

    pub fn state_count(&self) -> usize {
        self.depth.len()
    }

    /// Length of a shortest valid trace to the state.
    pub fn depth(&self, id: usize) -> usize {
        self.depth[id]
    }

    /// Fewest transitions needed to reach a state that emits the message.
    pub fn emission_depth(&self, message: usize) -> Option<usize> {
        self.emission_depth[message]
    }

    pub fn outgoing(&self, id: usize) -> impl Iterator<Item = &Edge> {
        self.outgoing[id].iter().map(|&k| &self.closure.edges()[k])
    }

    pub fn is_initial(&self, id: usize) -> bool {
        self.closure.initial_ids().contains(&id)
    }

    pub fn final_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.state_count()).filter(|&id| puzzle::is_final(self.closure.state(id).components()))
    }

    /// A final state reached by a shortest trace, if any.
    pub fn nearest_final(&self) -> Option<usize> {
        self.final_ids().min_by_key(|&id| (self.depth[id], id))
    }

    /// A shortest valid trace to the state.
    pub fn trace_to(&self, id: usize) -> TraceOf<P> {
        let mut records = Vec::new();
        let mut at = id;
        while let Some(k) = self.parent[at] {
            let edge = &self.closure.edges()[k];
            records.push(self.closure.record(edge));
            at = edge.source;
        }
        records.reverse();
        TraceOf::<P> { initial: self.closure.state(at).clone(), records }
    }

    /// A shortest trace to the edge's source, followed by the edge.
    pub fn trace_through(&self, edge: &Edge) -> TraceOf<P> {
        let mut trace = self.trace_to(edge.source);
        trace.records.push(self.closure.record(edge));
        trace
    }
}

/// Inserts, before each receive, an `emit` by the sender from the latest
/// earlier state that outputs the received message, so the trace carries
/// its own witnesses. Receives with no such state are left as they are.
pub fn with_emits<P: Puzzle>(puzzle: &P, trace: &TraceOf<P>) -> TraceOf<P>
where
    P::Message: Sender,
{
    let mut states = vec![trace.initial.clone()];
    states.extend(trace.records.iter().map(|r| r.destination.clone()));
    let mut inserted: Vec<Vec<RecordOf<P>>> = vec![Vec::new(); trace.records.len()];
    let mut emitted: Vec<P::Message> = trace.records.iter().filter_map(|r| r.output.clone()).collect();
    for (k, record) in trace.records.iter().enumerate() {
        let Some(msg) = &record.input else { continue };
        if record.label.label != ChildLabel::Receive || emitted.contains(msg) {
            continue;
        }
        let emit = CompositeLabel::new(msg.sender(), ChildLabel::Emit);
        let found = (0..=k).rev().find_map(|p| {
            let source = &states[p];
            if !puzzle.valid(&emit, source, None) {
                return None;
            }
            let (destination, output) = puzzle.transition(&emit, source, None);
            (output.as_ref() == Some(msg)).then(|| {
                (p, TransitionRecord { label: emit.clone(), source: source.clone(), input: None, destination, output })
            })
        });
        if let Some((p, emit_record)) = found {
            inserted[p].push(emit_record);
            emitted.push(msg.clone());
        }
    }
    let mut records = Vec::new();
    for (extra, record) in inserted.into_iter().zip(&trace.records) {
        records.extend(extra);
        records.push(record.clone());
    }
    TraceOf::<P> { initial: trace.initial.clone(), records }
}

/// Where a property failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Witness {
    State(usize),
    /// Index into the closure's edge list.
    Edge(usize),
    /// An existential property with nothing to show.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Pass { checked: usize },
    Fail { checked: usize, witness: Witness, detail: String },
}

impl Outcome {
    pub fn passed(&self) -> bool {
        matches!(self, Outcome::Pass { .. })
    }
}

/// Runs `violation` on every valid state, skipping initial ones if asked.
/// Stops at the first violation.
pub fn check_states<P: Puzzle>(
    exploration: &Exploration<P>,
    skip_initial: bool,
    mut violation: impl FnMut(&P::State) -> Option<String>,
) -> Outcome {
    let mut checked = 0;
    for id in 0..exploration.state_count() {
        if skip_initial && exploration.is_initial(id) {
            continue;
        }
        checked += 1;
        if let Some(detail) = violation(exploration.closure.state(id)) {
            return Outcome::Fail { checked, witness: Witness::State(id), detail };
        }
    }
    Outcome::Pass { checked }
}

/// Runs `violation` on every valid transition that changes the state.
pub fn check_edges<P: Puzzle>(
    exploration: &Exploration<P>,
    mut violation: impl FnMut(&RecordOf<P>) -> Option<String>,
) -> Outcome {
    let mut checked = 0;
    for (k, edge) in exploration.closure.edges().iter().enumerate() {
        if edge.source == edge.destination {
            continue;
        }
        checked += 1;
        if let Some(detail) = violation(&exploration.closure.record(edge)) {
            return Outcome::Fail { checked, witness: Witness::Edge(k), detail };
        }
    }
    Outcome::Pass { checked }
}

/// Observation sets stay consistent at every valid non-initial state.
pub fn check_consistency<P: Puzzle>(exploration: &Exploration<P>) -> Outcome {
    check_states(exploration, true, |state| {
        let observations: Vec<ChildSet> = state.components().iter().map(ChildView::observation).collect();
        (!puzzle::consistent(&observations)).then(|| format!("observations {observations:?} are inconsistent"))
    })
}

pub fn check_final_reachable<P: Puzzle>(exploration: &Exploration<P>) -> Outcome {
    match exploration.nearest_final() {
        Some(_) => Outcome::Pass { checked: exploration.state_count() },
        None => Outcome::Fail {
            checked: exploration.state_count(),
            witness: Witness::None,
            detail: "no final state among the explored states".to_string(),
        },
    }
}

fn statuses<S: ChildView>(state: &CompositeState<S>) -> Vec<Option<Status>> {
    state.components().iter().map(ChildView::status).collect()
}

/// Every reachable final state carries exactly the expected statuses.
pub fn check_final_statuses<P: Puzzle>(exploration: &Exploration<P>, instance: &PuzzleInstance) -> Outcome {
    let expected: Vec<Option<Status>> = (1..=instance.n())
        .map(|i| Some(oracle::expected_status(instance.muddy(), i)))
        .collect();
    let mut checked = 0;
    for id in exploration.final_ids() {
        checked += 1;
        let got = statuses(exploration.closure.state(id));
        if got != expected {
            return Outcome::Fail {
                checked,
                witness: Witness::State(id),
                detail: format!("final statuses {} differ from expected {}", render(&got), render(&expected)),
            };
        }
    }
    Outcome::Pass { checked }
}

/// No child ever decides a wrong status, final or not.
pub fn check_decisions<P: Puzzle>(exploration: &Exploration<P>, instance: &PuzzleInstance) -> Outcome {
    check_states(exploration, false, |state| {
        state.components().iter().enumerate().find_map(|(k, child)| {
            let i = k + 1;
            let expected = oracle::expected_status(instance.muddy(), i);
            match child.status() {
                Some(s) if s.is_final() && s != expected => Some(format!("child {i} decided {s}, expected {expected}")),
                _ => None,
            }
        })
    })
}

fn render(statuses: &[Option<Status>]) -> String {
    statuses.iter().map(|s| s.map_or('-', Status::symbol)).collect()
}

/// Every constrained receive at a valid state `σ` takes a valid message
/// that some valid trace no longer than a shortest trace to `σ` is in a
/// position to emit.
///
/// Inputs are the constraint's candidate messages admitted at `σ`, so
/// messages that are accepted but never produced are caught too; without
/// candidates, the explored receive edges are used.
pub fn check_no_equivocation_fact<P: Puzzle>(puzzle: &P, exploration: &Exploration<P>) -> Outcome {
    let closure = exploration.closure();
    let receive_labels: Vec<usize> = (0..closure.labels().len())
        .filter(|&l| closure.labels()[l].label == ChildLabel::Receive)
        .collect();
    let mut checked = 0;
    for id in 0..exploration.state_count() {
        let state = closure.state(id);
        let depth = exploration.depth(id);
        for &l in &receive_labels {
            let label = &closure.labels()[l];
            let inputs: Vec<P::Message> = match puzzle.candidate_inputs(label, state) {
                Some(candidates) => candidates.into_iter().filter(|m| puzzle.valid(label, state, Some(m))).collect(),
                None => exploration
                    .outgoing(id)
                    .filter(|e| e.label == l)
                    .filter_map(|e| e.input.map(|m| closure.message(m).clone()))
                    .collect(),
            };
            for msg in inputs {
                checked += 1;
                let emitted_at = closure.message_id(&msg).and_then(|m| exploration.emission_depth(m));
                let ok = emitted_at.is_some_and(|d| d <= depth);
                if !ok {
                    let Some(m) = closure.message_id(&msg) else {
                        return Outcome::Fail {
                            checked,
                            witness: Witness::State(id),
                            detail: format!("child {} accepts {msg:?}, which no valid trace emits", label.index),
                        };
                    };
                    let edge = exploration
                        .outgoing(id)
                        .position(|e| e.label == l && e.input == Some(m))
                        .map(|p| exploration.outgoing[id][p]);
                    let detail = format!(
                        "child {} receives {msg:?} after {depth} steps, but it is first emitted only after {} steps",
                        label.index,
                        emitted_at.map_or("no".to_string(), |d| d.to_string())
                    );
                    return Outcome::Fail { checked, witness: edge.map_or(Witness::State(id), Witness::Edge), detail };
                }
            }
        }
    }
    Outcome::Pass { checked }
}

/// The invariant relating round, status and observations, for a composite
/// state whose instance has `muddy` muddy children. Initial components are
/// exempt.
pub fn lemma1_violation(state: &CompositeState<RoundChildState>, muddy: usize) -> Option<String> {
    state.components().iter().enumerate().find_map(|(k, child)| {
        let RoundChildState::Running { obs, round, status } = *child else {
            return None;
        };
        let seen = obs.len();
        let r = round as usize;
        let ok = match status {
            Status::Unknown => r < seen && seen <= muddy,
            Status::Muddy => muddy >= 1 && r == muddy - 1 && r == seen,
            Status::Clean => r == muddy && r == seen,
        };
        (!ok).then(|| format!("child {} at ({obs}, {round}, {status}) with {muddy} muddy", k + 1))
    })
}

/// No transition takes a child's round past the number of children it sees.
pub fn termination_violation(record: &TransitionRecord<CompositeLabel<ChildLabel>, CompositeState<RoundChildState>, impl Sized>) -> Option<String> {
    record.destination.components().iter().enumerate().find_map(|(k, child)| {
        let RoundChildState::Running { obs, round, .. } = *child else {
            return None;
        };
        ((round as usize) > obs.len()).then(|| format!("child {} reaches round {round} but sees {}", k + 1, obs.len()))
    })
}

/// Every valid non-final state has a valid transition that raises some
/// child's round (an initial child counts as round `-1`).
pub fn check_progress<P>(exploration: &Exploration<P>) -> Outcome
where
    P: Puzzle<Child = RoundChildState>,
{
    let closure = exploration.closure();
    let mut checked = 0;
    for id in 0..exploration.state_count() {
        let state = closure.state(id);
        if puzzle::is_final(state.components()) {
            continue;
        }
        checked += 1;
        let advances = exploration.outgoing(id).any(|edge| {
            let next = closure.state(edge.destination);
            state.components().iter().zip(next.components()).any(|(a, b)| b.round() > a.round())
        });
        if !advances {
            return Outcome::Fail {
                checked,
                witness: Witness::State(id),
                detail: "no valid transition raises any child's round".to_string(),
            };
        }
    }
    Outcome::Pass { checked }
}

/// Some receive by `muddy_child` moves it from unknown to muddy.
pub fn check_no_leak<P: Puzzle>(exploration: &Exploration<P>, muddy_child: usize) -> Outcome {
    check_edges(exploration, |record| {
        let before = record.source.component(muddy_child).and_then(ChildView::status);
        let after = record.destination.component(muddy_child).and_then(ChildView::status);
        (record.label.label == ChildLabel::Receive
            && before == Some(Status::Unknown)
            && after == Some(Status::Muddy))
            .then(|| format!("child {muddy_child} learns it is muddy from {:?}", record.input))
    })
}

/// Admits receives only between children `a` and `b`; every other
/// transition is unrestricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExchange {
    pub a: usize,
    pub b: usize,
}

impl<V> CompositionConstraint<V> for PairExchange
where
    V: Vlsm<Label = ChildLabel>,
    V::Message: Sender,
{
    fn admits(&self, label: &CompositeLabel<ChildLabel>, _state: &CompositeState<V::State>, msg: Option<&V::Message>) -> bool {
        if label.label != ChildLabel::Receive {
            return true;
        }
        let pair = [self.a, self.b];
        pair.contains(&label.index) && msg.is_some_and(|m| pair.contains(&m.sender()))
    }
}

/// Per-child number of receive steps.
pub fn receive_counts<S, M>(n: usize, trace: &crate::vlsm::Trace<CompositeLabel<ChildLabel>, S, M>) -> Vec<usize> {
    let mut counts = vec![0; n];
    for record in &trace.records {
        if record.label.label == ChildLabel::Receive {
            if let Some(c) = counts.get_mut(record.label.index - 1) {
                *c += 1;
            }
        }
    }
    counts
}
