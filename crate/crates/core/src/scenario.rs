//! Scheduled step lists that can be replayed through a composed puzzle.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::CompositeLabel;
use crate::explorer::{ModelKind, Puzzle, PuzzleMessage};
use crate::puzzle::{ChildLabel, ChildSet, PuzzleError, PuzzleInstance};
use crate::vlsm::{TraceOf, TransitionRecord};

pub const SCENARIO_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub format: u32,
    pub model: ModelKind,
    pub n: usize,
    pub muddy: ChildSet,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub component: usize,
    pub label: ChildLabel,
    #[serde(default)]
    pub input: Option<Input>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Input {
    /// The output of an earlier step, counted from 0.
    FromStep(StepRef),
    Message(serde_json::Value),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRef {
    pub from_step: usize,
}

/// Which half of the validity predicate rejected a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predicate {
    ChildValidity,
    CompositionConstraint,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Predicate::ChildValidity => "the child's validity constraint",
            Predicate::CompositionConstraint => "the composition constraint",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("scenario format {0} is not supported")]
    Format(u32),
    #[error("scenario instance is invalid: {0}")]
    Instance(#[from] PuzzleError),
    #[error("step {step}: component {component} is outside 1..={n}")]
    Component { step: usize, component: usize, n: usize },
    #[error("step {step}: input refers to step {from_step}, which does not come earlier")]
    ForwardReference { step: usize, from_step: usize },
    #[error("step {step}: referenced step {from_step} emitted no message")]
    NoOutput { step: usize, from_step: usize },
    #[error("step {step}: input is not a message of this model: {reason}")]
    BadMessage { step: usize, reason: String },
    #[error("step {step}: {label} by child {component} is rejected by {predicate}")]
    Rejected { step: usize, component: usize, label: ChildLabel, predicate: Predicate },
}

impl Scenario {
    pub fn instance(&self) -> Result<PuzzleInstance, PuzzleError> {
        PuzzleInstance::new(self.n, self.muddy.iter())
    }

    /// Writes a trace as steps, referring to earlier outputs where possible.
    pub fn from_trace<P>(model: ModelKind, instance: &PuzzleInstance, trace: &TraceOf<P>) -> Self
    where
        P: Puzzle,
        P::Message: PuzzleMessage,
    {
        let mut steps = Vec::with_capacity(trace.records.len());
        for (k, record) in trace.records.iter().enumerate() {
            let input = record.input.as_ref().map(|m| {
                match trace.records[..k].iter().rposition(|r| r.output.as_ref() == Some(m)) {
                    Some(from_step) => Input::FromStep(StepRef { from_step }),
                    None => Input::Message(serde_json::to_value(m).expect("messages serialize")),
                }
            });
            steps.push(Step { component: record.label.index, label: record.label.label, input });
        }
        Scenario { format: SCENARIO_FORMAT, model, n: instance.n(), muddy: instance.muddy(), steps }
    }

    /// Executes the steps in order from `initial`, stopping at the first
    /// rejected step.
    pub fn replay<P>(&self, puzzle: &P, initial: P::State) -> Result<TraceOf<P>, ReplayError>
    where
        P: Puzzle,
        P::Message: PuzzleMessage,
    {
        if self.format != SCENARIO_FORMAT {
            return Err(ReplayError::Format(self.format));
        }
        let n = puzzle.size();
        let mut trace = TraceOf::<P> { initial, records: Vec::new() };
        for (step, s) in self.steps.iter().enumerate() {
            if !(1..=n).contains(&s.component) {
                return Err(ReplayError::Component { step, component: s.component, n });
            }
            let input = match &s.input {
                None => None,
                Some(Input::FromStep(StepRef { from_step })) => {
                    let from_step = *from_step;
                    let source = trace.records.get(from_step).filter(|_| from_step < step);
                    let record = source.ok_or(ReplayError::ForwardReference { step, from_step })?;
                    Some(record.output.clone().ok_or(ReplayError::NoOutput { step, from_step })?)
                }
                Some(Input::Message(value)) => Some(
                    serde_json::from_value::<P::Message>(value.clone())
                        .map_err(|e| ReplayError::BadMessage { step, reason: e.to_string() })?,
                ),
            };
            let label = CompositeLabel::new(s.component, s.label);
            let source = trace.last_state().clone();
            let rejected = |predicate| ReplayError::Rejected { step, component: s.component, label: s.label, predicate };
            if !puzzle.child_valid(&label, &source, input.as_ref()) {
                return Err(rejected(Predicate::ChildValidity));
            }
            if !puzzle.constraint_admits(&label, &source, input.as_ref()) {
                return Err(rejected(Predicate::CompositionConstraint));
            }
            let (destination, output) = puzzle.transition(&label, &source, input.as_ref());
            trace.records.push(TransitionRecord { label, source, input, destination, output });
        }
        Ok(trace)
    }
}

/// True iff every received message was emitted earlier on the same trace,
/// which makes a constrained trace valid on its own.
pub fn is_self_contained<L, S, M: PartialEq>(trace: &crate::vlsm::Trace<L, S, M>) -> bool {
    trace.records.iter().enumerate().all(|(k, record)| {
        record
            .input
            .as_ref()
            .is_none_or(|m| trace.records[..k].iter().any(|r| r.output.as_ref() == Some(m)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rounds::{build_puzzle, initial_state, RoundMessage};
    use crate::puzzle::Status;

    fn scenario(steps: Vec<Step>) -> Scenario {
        Scenario { format: 1, model: ModelKind::Rounds, n: 2, muddy: [1, 2].into_iter().collect(), steps }
    }

    fn step(component: usize, label: ChildLabel, input: Option<Input>) -> Step {
        Step { component, label, input }
    }

    #[test]
    fn json_shape() {
        let s = scenario(vec![
            step(1, ChildLabel::Init, None),
            step(1, ChildLabel::Emit, None),
            step(2, ChildLabel::Receive, Some(Input::FromStep(StepRef { from_step: 1 }))),
            step(2, ChildLabel::Receive, Some(Input::Message(serde_json::json!({"sender":1,"round":0,"status":"u"})))),
        ]);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains(r#""input":{"from_step":1}"#), "{text}");
        assert!(text.contains(r#""input":null"#), "{text}");
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn replay_follows_references() {
        let instance = PuzzleInstance::new(2, [1, 2]).unwrap();
        let puzzle = build_puzzle(&instance, false);
        let s = scenario(vec![
            step(1, ChildLabel::Init, None),
            step(2, ChildLabel::Init, None),
            step(1, ChildLabel::Emit, None),
            step(2, ChildLabel::Receive, Some(Input::FromStep(StepRef { from_step: 2 }))),
        ]);
        let trace = s.replay(&puzzle, initial_state(&instance)).unwrap();
        assert_eq!(trace.records[3].input, Some(RoundMessage::new(1, 0, Status::Unknown)));
        assert!(is_self_contained(&trace));
        assert!(crate::vlsm::is_constrained_trace(&puzzle, &trace));
    }

    #[test]
    fn replay_names_the_failing_step() {
        let instance = PuzzleInstance::new(2, [1, 2]).unwrap();
        let puzzle = build_puzzle(&instance, false);
        let early = scenario(vec![step(1, ChildLabel::Emit, None)]);
        assert_eq!(
            early.replay(&puzzle, initial_state(&instance)),
            Err(ReplayError::Rejected { step: 0, component: 1, label: ChildLabel::Emit, predicate: Predicate::ChildValidity })
        );
        let forged = scenario(vec![
            step(1, ChildLabel::Init, None),
            step(2, ChildLabel::Init, None),
            step(2, ChildLabel::Receive, Some(Input::Message(serde_json::json!({"sender":1,"round":0,"status":"m"})))),
        ]);
        let err = forged.replay(&puzzle, initial_state(&instance)).unwrap_err();
        assert_eq!(
            err,
            ReplayError::Rejected { step: 2, component: 2, label: ChildLabel::Receive, predicate: Predicate::CompositionConstraint }
        );
        assert_eq!(err.to_string(), "step 2: receive by child 2 is rejected by the composition constraint");
        let dangling = scenario(vec![step(1, ChildLabel::Init, None), step(2, ChildLabel::Receive, Some(Input::FromStep(StepRef { from_step: 0 })))]);
        assert_eq!(
            dangling.replay(&puzzle, initial_state(&instance)),
            Err(ReplayError::NoOutput { step: 1, from_step: 0 })
        );
        let forward = scenario(vec![step(2, ChildLabel::Receive, Some(Input::FromStep(StepRef { from_step: 0 })))]);
        assert_eq!(
            forward.replay(&puzzle, initial_state(&instance)),
            Err(ReplayError::ForwardReference { step: 0, from_step: 0 })
        );
        let garbage = scenario(vec![step(2, ChildLabel::Receive, Some(Input::Message(serde_json::json!({"x":1}))))]);
        assert!(matches!(garbage.replay(&puzzle, initial_state(&instance)), Err(ReplayError::BadMessage { step: 0, .. })));
    }
}
