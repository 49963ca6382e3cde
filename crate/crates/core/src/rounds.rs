//! The round-based protocol: each child tracks the round of the classical
//! synchronous solution it believes it has reached, and broadcasts
//! `⟨sender, round, status⟩`.
//!
//! Optionally children may `jump` straight to round `|Obs| - 1`.

use serde::{Deserialize, Serialize};

use crate::composition::{compose, CompositeLabel, CompositeState, Composite, CompositionConstraint, Sender};
use crate::puzzle::{self, ChildLabel, ChildSet, ChildView, PuzzleInstance, Status};
use crate::vlsm::Vlsm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoundChildState {
    Running { obs: ChildSet, round: u32, status: Status },
    Initial { obs: ChildSet },
}

impl RoundChildState {
    pub fn initial(obs: ChildSet) -> Self {
        RoundChildState::Initial { obs }
    }

    pub fn running(obs: ChildSet, round: u32, status: Status) -> Self {
        RoundChildState::Running { obs, round, status }
    }

    /// Perceived round, with `-1` for initial states.
    pub fn round(&self) -> i64 {
        match self {
            RoundChildState::Initial { .. } => -1,
            RoundChildState::Running { round, .. } => i64::from(*round),
        }
    }
}

impl ChildView for RoundChildState {
    fn observation(&self) -> ChildSet {
        match self {
            RoundChildState::Initial { obs } | RoundChildState::Running { obs, .. } => *obs,
        }
    }

    fn status(&self) -> Option<Status> {
        match self {
            RoundChildState::Initial { .. } => None,
            RoundChildState::Running { status, .. } => Some(*status),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoundMessage {
    pub sender: usize,
    pub round: u32,
    pub status: Status,
}

impl RoundMessage {
    pub fn new(sender: usize, round: u32, status: Status) -> Self {
        RoundMessage { sender, round, status }
    }
}

impl Sender for RoundMessage {
    fn sender(&self) -> usize {
        self.sender
    }
}

pub fn step_init(state: &RoundChildState) -> Option<RoundChildState> {
    match *state {
        RoundChildState::Initial { obs } if obs.is_empty() => Some(RoundChildState::running(obs, 0, Status::Muddy)),
        RoundChildState::Initial { obs } => Some(RoundChildState::running(obs, 0, Status::Unknown)),
        RoundChildState::Running { .. } => None,
    }
}

pub fn step_emit(state: &RoundChildState, child: usize) -> Option<(RoundChildState, RoundMessage)> {
    match *state {
        RoundChildState::Running { round, status, .. } => Some((*state, RoundMessage::new(child, round, status))),
        RoundChildState::Initial { .. } => None,
    }
}

/// The receive table. `None` is returned for every combination the table
/// does not treat; such receives are rejected by the validity constraint.
pub fn step_receive(state: &RoundChildState, msg: &RoundMessage) -> Option<RoundChildState> {
    let RoundChildState::Running { obs, round: r, status } = *state else {
        return None;
    };
    if status.is_final() {
        return Some(*state);
    }
    let seen = obs.len() as u32;
    let known_muddy = obs.contains(msg.sender);
    let r2 = msg.round;
    let next = |round, status| Some(RoundChildState::running(obs, round, status));
    match (msg.status, known_muddy) {
        (Status::Clean, false) if r2 == seen => next(r2, Status::Clean),
        (Status::Clean, false) if r2 == seen + 1 => next(r2 - 1, Status::Muddy),
        (Status::Muddy, true) if r2 == seen => next(r2, Status::Muddy),
        (Status::Muddy, true) if r2 + 1 == seen => next(r2 + 1, Status::Clean),
        (Status::Unknown, true) if r2 < r => Some(*state),
        (Status::Unknown, true) if r <= r2 && r2 + 1 < seen => next(r2 + 1, Status::Unknown),
        (Status::Unknown, true) if r2 + 1 == seen => next(r2 + 1, Status::Muddy),
        (Status::Unknown, false) if r2 <= r => Some(*state),
        (Status::Unknown, false) if r < r2 && r2 < seen => next(r2, Status::Unknown),
        (Status::Unknown, false) if r2 == seen => next(r2, Status::Muddy),
        _ => None,
    }
}

pub fn step_jump(state: &RoundChildState) -> Option<RoundChildState> {
    match *state {
        RoundChildState::Running { obs, round, status: Status::Unknown } if (round as usize) + 1 < obs.len() => {
            Some(RoundChildState::running(obs, obs.len() as u32 - 1, Status::Unknown))
        }
        _ => None,
    }
}

/// Child `index` of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundChild {
    index: usize,
    n: usize,
    jump: bool,
}

/// Child `i` of `n`, with the `jump` label enabled.
pub fn make_child(index: usize, n: usize) -> RoundChild {
    assert!((1..=n).contains(&index), "child {index} outside 1..={n}");
    RoundChild { index, n, jump: true }
}

impl RoundChild {
    pub fn without_jump(self) -> Self {
        RoundChild { jump: false, ..self }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn jump_enabled(&self) -> bool {
        self.jump
    }
}

impl Vlsm for RoundChild {
    type Label = ChildLabel;
    type State = RoundChildState;
    type Message = RoundMessage;

    fn labels(&self) -> Vec<ChildLabel> {
        let mut labels = vec![ChildLabel::Init, ChildLabel::Emit, ChildLabel::Receive];
        if self.jump {
            labels.push(ChildLabel::Jump);
        }
        labels
    }

    fn initial_states(&self) -> Vec<RoundChildState> {
        ChildSet::subsets_excluding(self.n, self.index)
            .into_iter()
            .map(RoundChildState::initial)
            .collect()
    }

    fn is_state(&self, state: &RoundChildState) -> bool {
        let obs = state.observation();
        obs.is_subset(ChildSet::all(self.n)) && !obs.contains(self.index)
    }

    fn is_initial_state(&self, state: &RoundChildState) -> bool {
        matches!(state, RoundChildState::Initial { .. }) && self.is_state(state)
    }

    fn transition(
        &self,
        label: &ChildLabel,
        state: &RoundChildState,
        input: Option<&RoundMessage>,
    ) -> (RoundChildState, Option<RoundMessage>) {
        let stepped = match (label, input) {
            (ChildLabel::Init, _) => step_init(state),
            (ChildLabel::Emit, _) => {
                if let Some((next, out)) = step_emit(state, self.index) {
                    return (next, Some(out));
                }
                None
            }
            (ChildLabel::Receive, Some(msg)) => step_receive(state, msg),
            (ChildLabel::Receive, None) => None,
            (ChildLabel::Jump, _) => step_jump(state),
        };
        // untreated inputs leave the state unchanged; they are never valid
        (stepped.unwrap_or(*state), None)
    }

    fn valid(&self, label: &ChildLabel, state: &RoundChildState, input: Option<&RoundMessage>) -> bool {
        match (label, input) {
            (ChildLabel::Init, None) => step_init(state).is_some(),
            (ChildLabel::Emit, None) => step_emit(state, self.index).is_some(),
            (ChildLabel::Receive, Some(msg)) => {
                (1..=self.n).contains(&msg.sender) && step_receive(state, msg).is_some()
            }
            (ChildLabel::Jump, None) => self.jump && step_jump(state).is_some(),
            _ => false,
        }
    }

    fn candidate_inputs(&self, label: &ChildLabel, _state: &RoundChildState) -> Option<Vec<RoundMessage>> {
        match label {
            ChildLabel::Receive => None,
            _ => Some(Vec::new()),
        }
    }
}

/// Consistency of the observation sets of a composite state.
pub fn consistent(states: &[RoundChildState]) -> bool {
    let observations: Vec<ChildSet> = states.iter().map(ChildView::observation).collect();
    puzzle::consistent(&observations)
}

/// Closed-form emission test: could a sender currently in `sender_state`
/// have emitted `msg` on a trace leading to that state?
pub fn emittable(sender_state: &RoundChildState, msg: &RoundMessage) -> bool {
    match *sender_state {
        RoundChildState::Running { round, status, .. } => {
            (msg.status == status && msg.round == round) || (msg.status == Status::Unknown && msg.round < round)
        }
        RoundChildState::Initial { .. } => false,
    }
}

/// The composition constraint: consistency on `init`, no equivocation on
/// `receive`, vacuous on `emit` and `jump`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundsConstraint {
    no_equivocation: bool,
}

impl RoundsConstraint {
    pub fn new() -> Self {
        RoundsConstraint { no_equivocation: true }
    }

    /// Keeps the consistency check but lets any valid message be received.
    pub fn without_no_equivocation() -> Self {
        RoundsConstraint { no_equivocation: false }
    }
}

impl Default for RoundsConstraint {
    fn default() -> Self {
        Self::new()
    }
}

/// `φ` for the round-based composition.
pub fn phi_rounds(
    label: &CompositeLabel<ChildLabel>,
    state: &CompositeState<RoundChildState>,
    msg: Option<&RoundMessage>,
) -> bool {
    RoundsConstraint::new().admits(label, state, msg)
}

impl CompositionConstraint<RoundChild> for RoundsConstraint {
    fn admits(
        &self,
        label: &CompositeLabel<ChildLabel>,
        state: &CompositeState<RoundChildState>,
        msg: Option<&RoundMessage>,
    ) -> bool {
        match (label.label, msg) {
            (ChildLabel::Init, _) => consistent(state.components()),
            (ChildLabel::Receive, Some(msg)) if self.no_equivocation => {
                crate::composition::no_equivocation(state, msg, |_, s, m| emittable(s, m)).unwrap_or(false)
            }
            _ => true,
        }
    }

    fn candidate_inputs(
        &self,
        label: &CompositeLabel<ChildLabel>,
        state: &CompositeState<RoundChildState>,
    ) -> Option<Vec<RoundMessage>> {
        if label.label != ChildLabel::Receive {
            return Some(Vec::new());
        }
        if !self.no_equivocation {
            return None;
        }
        let mut out = Vec::new();
        for (k, s) in state.components().iter().enumerate() {
            if let RoundChildState::Running { round, status, .. } = *s {
                let sender = k + 1;
                out.extend((0..round).map(|r| RoundMessage::new(sender, r, Status::Unknown)));
                out.push(RoundMessage::new(sender, round, status));
            }
        }
        Some(out)
    }
}

pub type RoundsPuzzle<C = RoundsConstraint> = Composite<RoundChild, C>;

fn children(n: usize, with_jump: bool) -> Vec<RoundChild> {
    (1..=n)
        .map(|i| {
            let child = make_child(i, n);
            if with_jump { child } else { child.without_jump() }
        })
        .collect()
}

/// The initial composite state of an instance: child `i` sees `Muddy \ {i}`.
pub fn initial_state(instance: &PuzzleInstance) -> CompositeState<RoundChildState> {
    CompositeState::new(instance.observations().into_iter().map(RoundChildState::initial).collect())
}

/// `(C_1 + ... + C_n) |φ`, started from the instance's initial state.
pub fn build_puzzle(instance: &PuzzleInstance, with_jump: bool) -> RoundsPuzzle {
    build_puzzle_with(instance, with_jump, RoundsConstraint::new())
}

/// Same children and initial state as [`build_puzzle`] under another constraint.
pub fn build_puzzle_with<C: CompositionConstraint<RoundChild>>(
    instance: &PuzzleInstance,
    with_jump: bool,
    constraint: C,
) -> RoundsPuzzle<C> {
    compose(children(instance.n(), with_jump), constraint)
        .and_then(|p| p.with_initial_states(vec![initial_state(instance)]))
        .expect("instance children form a non-empty family with a product initial state")
}

/// The composition over every initial state in the product, consistent or not.
pub fn build_family(n: usize, with_jump: bool) -> RoundsPuzzle {
    compose(children(n, with_jump), RoundsConstraint::new()).expect("n >= 1")
}
