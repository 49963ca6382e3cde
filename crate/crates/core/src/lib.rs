//! VLSM state machines, their constrained composition, and two
//! asynchronous protocols for the Muddy Children Puzzle, together with a
//! Kripke-model reference solution and an exhaustive explorer that checks
//! the protocols' invariants.

pub mod composition;
pub mod explorer;
pub mod history;
pub mod oracle;
pub mod puzzle;
pub mod report;
pub mod rounds;
pub mod scenario;
pub mod vlsm;

pub use composition::{compose, CompositeLabel, CompositeState, Composite, CompositionConstraint, Free};
pub use puzzle::{ChildLabel, ChildSet, PuzzleError, PuzzleInstance, Status};
pub use vlsm::{apply_transition, is_constrained_trace, is_valid_trace, valid_closure, Closure, Trace, TransitionRecord, Vlsm};
