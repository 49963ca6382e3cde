//! The history-based protocol for three children: messages carry the
//! sender's full history of received messages instead of a round number,
//! and a child's status is recomputed from the flattened history.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::composition::{compose, Both, Composite, CompositeLabel, CompositeState, CompositionConstraint, Sender};
use crate::puzzle::{self, ChildLabel, ChildSet, ChildView, PuzzleError, PuzzleInstance, Status};
use crate::vlsm::Vlsm;

/// `⟨sender, status, history⟩`. Cheap to clone; equality is structural
/// with a cached hash.
#[derive(Clone)]
pub struct HistoryMessage(Arc<Node>);

struct Node {
    sender: usize,
    status: Status,
    history: Vec<HistoryMessage>,
    hash: u64,
}

impl HistoryMessage {
    pub fn new(sender: usize, status: Status, history: Vec<HistoryMessage>) -> Self {
        let mut hasher = DefaultHasher::new();
        sender.hash(&mut hasher);
        status.hash(&mut hasher);
        history.len().hash(&mut hasher);
        for m in &history {
            m.0.hash.hash(&mut hasher);
        }
        let hash = hasher.finish();
        HistoryMessage(Arc::new(Node { sender, status, history, hash }))
    }

    pub fn sender(&self) -> usize {
        self.0.sender
    }

    pub fn status(&self) -> Status {
        self.0.status
    }

    pub fn history(&self) -> &[HistoryMessage] {
        &self.0.history
    }

    /// Nesting depth; a message with an empty history has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.history().iter().map(HistoryMessage::depth).max().unwrap_or(0)
    }
}

impl PartialEq for HistoryMessage {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash
                && self.0.sender == other.0.sender
                && self.0.status == other.0.status
                && self.0.history == other.0.history)
    }
}

impl Eq for HistoryMessage {}

impl Hash for HistoryMessage {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl Sender for HistoryMessage {
    fn sender(&self) -> usize {
        self.0.sender
    }
}

impl fmt::Debug for HistoryMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{:?}>", self.sender(), self.status(), self.history())
    }
}

#[derive(Serialize, Deserialize)]
struct RawMessage {
    sender: usize,
    status: Status,
    history: Vec<RawMessage>,
}

impl RawMessage {
    fn from_message(m: &HistoryMessage) -> Self {
        RawMessage {
            sender: m.sender(),
            status: m.status(),
            history: m.history().iter().map(RawMessage::from_message).collect(),
        }
    }

    fn into_message(self) -> HistoryMessage {
        HistoryMessage::new(self.sender, self.status, self.history.into_iter().map(RawMessage::into_message).collect())
    }
}

impl Serialize for HistoryMessage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawMessage::from_message(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HistoryMessage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        RawMessage::deserialize(deserializer).map(RawMessage::into_message)
    }
}

/// True iff `shorter` is a strict prefix of `longer`.
pub fn is_strict_prefix(shorter: &[HistoryMessage], longer: &[HistoryMessage]) -> bool {
    shorter.len() < longer.len() && longer[..shorter.len()] == *shorter
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HistoryChildState {
    Running { obs: ChildSet, status: Status, history: Vec<HistoryMessage> },
    Initial { obs: ChildSet },
}

impl HistoryChildState {
    pub fn initial(obs: ChildSet) -> Self {
        HistoryChildState::Initial { obs }
    }

    pub fn running(obs: ChildSet, status: Status, history: Vec<HistoryMessage>) -> Self {
        HistoryChildState::Running { obs, status, history }
    }

    pub fn history(&self) -> Option<&[HistoryMessage]> {
        match self {
            HistoryChildState::Running { history, .. } => Some(history),
            HistoryChildState::Initial { .. } => None,
        }
    }
}

impl ChildView for HistoryChildState {
    fn observation(&self) -> ChildSet {
        match self {
            HistoryChildState::Initial { obs } | HistoryChildState::Running { obs, .. } => *obs,
        }
    }

    fn status(&self) -> Option<Status> {
        match self {
            HistoryChildState::Initial { .. } => None,
            HistoryChildState::Running { status, .. } => Some(*status),
        }
    }
}

/// Messages the sender of `m` could have emitted earlier: `⟨j, u, h'⟩` for
/// every strict prefix `h'` of `m`'s history.
pub fn extra(m: &HistoryMessage) -> Vec<HistoryMessage> {
    let h = m.history();
    (0..h.len())
        .map(|k| HistoryMessage::new(m.sender(), Status::Unknown, h[..k].to_vec()))
        .collect()
}

/// Every message contained, at any depth, in `history`, together with the
/// [`extra`] messages of each.
pub fn flatten(history: &[HistoryMessage]) -> HashSet<HistoryMessage> {
    fn walk(history: &[HistoryMessage], expanded: &mut HashSet<HistoryMessage>, out: &mut HashSet<HistoryMessage>) {
        for m in history {
            if !expanded.insert(m.clone()) {
                continue;
            }
            out.insert(m.clone());
            // prefixes of m's history are covered by walking m's history
            out.extend(extra(m));
            walk(m.history(), expanded, out);
        }
    }
    let mut expanded = HashSet::new();
    let mut out = HashSet::new();
    walk(history, &mut expanded, &mut out);
    out
}

/// Messages from child `k` with unknown status.
pub fn unknown_k(k: usize, messages: &HashSet<HistoryMessage>) -> HashSet<HistoryMessage> {
    messages
        .iter()
        .filter(|m| m.sender() == k && m.status() == Status::Unknown)
        .cloned()
        .collect()
}

fn echoes(receiver: usize, m: &HistoryMessage) -> bool {
    m.status() == Status::Unknown && m.history().last().is_some_and(|last| last.sender() == receiver)
}

/// Drops every unknown-status message whose history ends with a message
/// sent by `receiver`.
pub fn group_similar(receiver: usize, messages: &HashSet<HistoryMessage>) -> HashSet<HistoryMessage> {
    messages.iter().filter(|m| !echoes(receiver, m)).cloned().collect()
}

/// Children that announced they know they are muddy.
pub fn muddy_set(messages: &HashSet<HistoryMessage>) -> ChildSet {
    messages
        .iter()
        .filter(|m| m.status() == Status::Muddy)
        .map(HistoryMessage::sender)
        .collect()
}

/// Status of child `receiver` with observation `obs` after `history`.
/// Rules are tried in order: muddy, then clean, else unknown.
pub fn compute_status(receiver: usize, obs: ChildSet, history: &[HistoryMessage]) -> Status {
    let flat = flatten(history);
    let needed = obs.len();
    let weakest = obs
        .iter()
        .map(|k| group_similar(receiver, &unknown_k(k, &flat)).len())
        .min()
        .unwrap_or(usize::MAX);
    if weakest >= needed {
        Status::Muddy
    } else if muddy_set(&flat).len() == needed {
        Status::Clean
    } else {
        Status::Unknown
    }
}

pub fn step_init(state: &HistoryChildState) -> Option<HistoryChildState> {
    match state {
        HistoryChildState::Initial { obs } => {
            let status = if obs.is_empty() { Status::Muddy } else { Status::Unknown };
            Some(HistoryChildState::running(*obs, status, Vec::new()))
        }
        HistoryChildState::Running { .. } => None,
    }
}

pub fn step_emit(state: &HistoryChildState, child: usize) -> Option<HistoryMessage> {
    match state {
        HistoryChildState::Running { status, history, .. } => Some(HistoryMessage::new(child, *status, history.clone())),
        HistoryChildState::Initial { .. } => None,
    }
}

pub fn step_receive(state: &HistoryChildState, child: usize, msg: &HistoryMessage) -> Option<HistoryChildState> {
    match state {
        HistoryChildState::Running { status, .. } if status.is_final() => Some(state.clone()),
        HistoryChildState::Running { obs, history, .. } => {
            let mut next = history.clone();
            next.push(msg.clone());
            let status = compute_status(child, *obs, &next);
            Some(HistoryChildState::running(*obs, status, next))
        }
        HistoryChildState::Initial { .. } => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryChild {
    index: usize,
    n: usize,
}

pub fn make_history_child(index: usize, n: usize) -> HistoryChild {
    assert!((1..=n).contains(&index), "child {index} outside 1..={n}");
    HistoryChild { index, n }
}

impl Vlsm for HistoryChild {
    type Label = ChildLabel;
    type State = HistoryChildState;
    type Message = HistoryMessage;

    fn labels(&self) -> Vec<ChildLabel> {
        vec![ChildLabel::Init, ChildLabel::Emit, ChildLabel::Receive]
    }

    fn initial_states(&self) -> Vec<HistoryChildState> {
        ChildSet::subsets_excluding(self.n, self.index)
            .into_iter()
            .map(HistoryChildState::initial)
            .collect()
    }

    fn is_state(&self, state: &HistoryChildState) -> bool {
        let obs = state.observation();
        obs.is_subset(ChildSet::all(self.n)) && !obs.contains(self.index)
    }

    fn is_initial_state(&self, state: &HistoryChildState) -> bool {
        matches!(state, HistoryChildState::Initial { .. }) && self.is_state(state)
    }

    fn transition(
        &self,
        label: &ChildLabel,
        state: &HistoryChildState,
        input: Option<&HistoryMessage>,
    ) -> (HistoryChildState, Option<HistoryMessage>) {
        let unchanged = || (state.clone(), None);
        match (label, input) {
            (ChildLabel::Init, _) => step_init(state).map_or_else(unchanged, |s| (s, None)),
            (ChildLabel::Emit, _) => match step_emit(state, self.index) {
                Some(out) => (state.clone(), Some(out)),
                None => unchanged(),
            },
            (ChildLabel::Receive, Some(msg)) => {
                step_receive(state, self.index, msg).map_or_else(unchanged, |s| (s, None))
            }
            _ => unchanged(),
        }
    }

    fn valid(&self, label: &ChildLabel, state: &HistoryChildState, input: Option<&HistoryMessage>) -> bool {
        let running = matches!(state, HistoryChildState::Running { .. });
        match (label, input) {
            (ChildLabel::Init, None) => !running,
            (ChildLabel::Emit, None) => running,
            (ChildLabel::Receive, Some(msg)) => running && (1..=self.n).contains(&msg.sender()),
            _ => false,
        }
    }

    fn candidate_inputs(&self, label: &ChildLabel, _state: &HistoryChildState) -> Option<Vec<HistoryMessage>> {
        match label {
            ChildLabel::Receive => None,
            _ => Some(Vec::new()),
        }
    }
}

/// Consistency of the observation sets of a composite state.
pub fn consistent(states: &[HistoryChildState]) -> bool {
    let observations: Vec<ChildSet> = states.iter().map(ChildView::observation).collect();
    puzzle::consistent(&observations)
}

/// Closed-form emission test for the history protocol.
pub fn emittable(sender_state: &HistoryChildState, msg: &HistoryMessage) -> bool {
    match sender_state {
        HistoryChildState::Running { status, history, .. } => {
            (msg.status() == *status && msg.history() == history.as_slice())
                || (msg.status() == Status::Unknown && is_strict_prefix(msg.history(), history))
        }
        HistoryChildState::Initial { .. } => false,
    }
}

/// Consistency on `init`, no equivocation over histories on `receive`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HistoryConstraint;

/// `φ` for the history-based composition.
pub fn phi_history(
    label: &CompositeLabel<ChildLabel>,
    state: &CompositeState<HistoryChildState>,
    msg: Option<&HistoryMessage>,
) -> bool {
    HistoryConstraint.admits(label, state, msg)
}

impl CompositionConstraint<HistoryChild> for HistoryConstraint {
    fn admits(
        &self,
        label: &CompositeLabel<ChildLabel>,
        state: &CompositeState<HistoryChildState>,
        msg: Option<&HistoryMessage>,
    ) -> bool {
        match (label.label, msg) {
            (ChildLabel::Init, _) => consistent(state.components()),
            (ChildLabel::Receive, Some(msg)) => {
                crate::composition::no_equivocation(state, msg, |_, s, m| emittable(s, m)).unwrap_or(false)
            }
            _ => true,
        }
    }

    fn candidate_inputs(
        &self,
        label: &CompositeLabel<ChildLabel>,
        state: &CompositeState<HistoryChildState>,
    ) -> Option<Vec<HistoryMessage>> {
        if label.label != ChildLabel::Receive {
            return Some(Vec::new());
        }
        let mut out = Vec::new();
        for (k, s) in state.components().iter().enumerate() {
            if let HistoryChildState::Running { status, history, .. } = s {
                let sender = k + 1;
                out.extend((0..history.len()).map(|len| HistoryMessage::new(sender, Status::Unknown, history[..len].to_vec())));
                out.push(HistoryMessage::new(sender, *status, history.clone()));
            }
        }
        Some(out)
    }
}

/// Restricts exploration to traces on which no child's history grows
/// beyond `cap` messages. Receives by decided children change nothing and
/// stay admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryCap(pub usize);

impl CompositionConstraint<HistoryChild> for HistoryCap {
    fn admits(
        &self,
        label: &CompositeLabel<ChildLabel>,
        state: &CompositeState<HistoryChildState>,
        _msg: Option<&HistoryMessage>,
    ) -> bool {
        if label.label != ChildLabel::Receive {
            return true;
        }
        match state.component(label.index) {
            Some(HistoryChildState::Running { status: Status::Unknown, history, .. }) => history.len() < self.0,
            _ => true,
        }
    }
}

/// Admits a receive only when the message comes from another child.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FromOthers;

impl CompositionConstraint<HistoryChild> for FromOthers {
    fn admits(
        &self,
        label: &CompositeLabel<ChildLabel>,
        _state: &CompositeState<HistoryChildState>,
        msg: Option<&HistoryMessage>,
    ) -> bool {
        label.label != ChildLabel::Receive || msg.is_none_or(|m| m.sender() != label.index)
    }
}

/// Admits a receive only of the sender's current message, never of one
/// sent from an earlier prefix of its history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FreshOnly;

impl CompositionConstraint<HistoryChild> for FreshOnly {
    fn admits(
        &self,
        label: &CompositeLabel<ChildLabel>,
        state: &CompositeState<HistoryChildState>,
        msg: Option<&HistoryMessage>,
    ) -> bool {
        let Some(msg) = msg.filter(|_| label.label == ChildLabel::Receive) else {
            return true;
        };
        match state.component(msg.sender()) {
            Some(HistoryChildState::Running { status, history, .. }) => msg.status() == *status && msg.history() == history.as_slice(),
            _ => false,
        }
    }

    fn candidate_inputs(
        &self,
        label: &CompositeLabel<ChildLabel>,
        state: &CompositeState<HistoryChildState>,
    ) -> Option<Vec<HistoryMessage>> {
        if label.label != ChildLabel::Receive {
            return Some(Vec::new());
        }
        let current = state.components().iter().enumerate().filter_map(|(k, s)| match s {
            HistoryChildState::Running { status, history, .. } => Some(HistoryMessage::new(k + 1, *status, history.clone())),
            HistoryChildState::Initial { .. } => None,
        });
        Some(current.collect())
    }
}

/// φ with histories capped at `cap` and no child receiving its own messages.
pub type Capped = Both<Both<HistoryConstraint, HistoryCap>, FromOthers>;

/// [`Capped`], delivering only each sender's current message.
pub type CappedFresh = Both<Capped, FreshOnly>;

pub fn capped(cap: usize) -> Capped {
    Both(Both(HistoryConstraint, HistoryCap(cap)), FromOthers)
}

pub fn capped_fresh(cap: usize) -> CappedFresh {
    Both(capped(cap), FreshOnly)
}

pub type HistoryPuzzle<C = HistoryConstraint> = Composite<HistoryChild, C>;

pub fn initial_state(instance: &PuzzleInstance) -> CompositeState<HistoryChildState> {
    CompositeState::new(instance.observations().into_iter().map(HistoryChildState::initial).collect())
}

fn require_three(n: usize) -> Result<(), PuzzleError> {
    if n == 3 {
        Ok(())
    } else {
        Err(PuzzleError::HistoryNeedsThreeChildren(n))
    }
}

/// `(C_1 + C_2 + C_3) |φ`, started from the instance's initial state.
pub fn build_puzzle3(instance: &PuzzleInstance) -> Result<HistoryPuzzle, PuzzleError> {
    build_puzzle3_with(instance, HistoryConstraint)
}

pub fn build_puzzle3_with<C: CompositionConstraint<HistoryChild>>(
    instance: &PuzzleInstance,
    constraint: C,
) -> Result<HistoryPuzzle<C>, PuzzleError> {
    require_three(instance.n())?;
    let children = (1..=3).map(|i| make_history_child(i, 3)).collect();
    Ok(compose(children, constraint)
        .and_then(|p| p.with_initial_states(vec![initial_state(instance)]))
        .expect("three children with a product initial state"))
}

/// The three-child composition over every initial state in the product.
pub fn build_family3() -> HistoryPuzzle {
    build_family3_with(HistoryConstraint)
}

pub fn build_family3_with<C: CompositionConstraint<HistoryChild>>(constraint: C) -> HistoryPuzzle<C> {
    let children = (1..=3).map(|i| make_history_child(i, 3)).collect();
    compose(children, constraint).expect("non-empty family")
}

/// Epistemic formula over `K_j`, `&`, `~`, `->`, atoms `q_j` and `T`.
/// Subformulas are shared, so the tree is really a DAG.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    /// `q_j`: child `j` knows the number of muddy children.
    Atom(usize),
    Knows(usize, Arc<Formula>),
    Not(Arc<Formula>),
    And(Vec<Arc<Formula>>),
    Implies(Arc<Formula>, Arc<Formula>),
}

impl Formula {
    fn precedence(&self) -> u8 {
        match self {
            Formula::Implies(..) => 1,
            Formula::And(_) => 2,
            Formula::Not(_) => 3,
            Formula::True | Formula::Atom(_) | Formula::Knows(..) => 4,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, context: u8) -> fmt::Result {
        let wrap = self.precedence() < context;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Formula::True => f.write_str("T")?,
            Formula::Atom(j) => write!(f, "q_{j}")?,
            Formula::Knows(j, inner) => {
                write!(f, "K_{j}(")?;
                inner.write(f, 0)?;
                f.write_str(")")?;
            }
            Formula::Not(inner) => {
                f.write_str("~")?;
                inner.write(f, 4)?;
            }
            Formula::And(parts) => {
                for (k, part) in parts.iter().enumerate() {
                    if k > 0 {
                        f.write_str(" & ")?;
                    }
                    part.write(f, 3)?;
                }
            }
            Formula::Implies(lhs, rhs) => {
                lhs.write(f, 3)?;
                f.write_str(" -> ")?;
                rhs.write(f, 1)?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }

    /// Number of distinct nodes in the shared representation.
    pub fn dag_size(self: &Arc<Self>) -> usize {
        fn visit(node: &Arc<Formula>, seen: &mut HashSet<*const Formula>) {
            if !seen.insert(Arc::as_ptr(node)) {
                return;
            }
            match &**node {
                Formula::True | Formula::Atom(_) => {}
                Formula::Knows(_, inner) | Formula::Not(inner) => visit(inner, seen),
                Formula::And(parts) => parts.iter().for_each(|p| visit(p, seen)),
                Formula::Implies(a, b) => {
                    visit(a, seen);
                    visit(b, seen);
                }
            }
        }
        let mut seen = HashSet::new();
        visit(self, &mut seen);
        seen.len()
    }

    /// Maximum nesting of `K` operators.
    pub fn knowledge_depth(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Knows(_, inner) => 1 + inner.knowledge_depth(),
            Formula::Not(inner) => inner.knowledge_depth(),
            Formula::And(parts) => parts.iter().map(|p| p.knowledge_depth()).max().unwrap_or(0),
            Formula::Implies(a, b) => a.knowledge_depth().max(b.knowledge_depth()),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0)
    }
}

struct Encoder {
    truth: Arc<Formula>,
    atoms: HashMap<usize, Arc<Formula>>,
    memo: HashMap<HistoryMessage, Arc<Formula>>,
}

impl Encoder {
    fn conjunction(&mut self, history: &[HistoryMessage]) -> Arc<Formula> {
        match history {
            [] => self.truth.clone(),
            [only] => self.encode(only),
            many => Arc::new(Formula::And(many.iter().map(|m| self.encode(m)).collect())),
        }
    }

    fn encode(&mut self, m: &HistoryMessage) -> Arc<Formula> {
        if let Some(done) = self.memo.get(m) {
            return done.clone();
        }
        let j = m.sender();
        let premises = self.conjunction(m.history());
        let atom = self.atoms.entry(j).or_insert_with(|| Arc::new(Formula::Atom(j))).clone();
        let knows_premises = Arc::new(Formula::Knows(j, premises.clone()));
        let knows_n = Arc::new(Formula::Knows(j, Arc::new(Formula::Implies(premises, atom))));
        let second = if m.status() == Status::Unknown { Arc::new(Formula::Not(knows_n)) } else { knows_n };
        let formula = Arc::new(Formula::And(vec![knows_premises, second]));
        self.memo.insert(m.clone(), formula.clone());
        formula
    }
}

/// `E(m)`: the sender knows the conjunction of its history's formulas, and
/// (unless its status is unknown) knows that they entail `q_sender`.
pub fn encode_formula(m: &HistoryMessage) -> Arc<Formula> {
    let mut encoder = Encoder { truth: Arc::new(Formula::True), atoms: HashMap::new(), memo: HashMap::new() };
    encoder.encode(m)
}
