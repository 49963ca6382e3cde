//! Reports produced by `explore`, `check` and `replay`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::composition::{Both, CompositeLabel, CompositeState, Sender};
use crate::explorer::{
    self, check_consistency, check_decisions, check_edges, check_final_reachable, check_final_statuses,
    check_no_equivocation_fact, check_no_leak, check_progress, check_states, explore_puzzle, lemma1_violation,
    termination_violation, with_emits, ConfigError, Exploration, ExplorationConfig, ModelKind, Outcome, PairExchange,
    Overrides, Puzzle, PuzzleMessage, Witness, DEFAULT_FRESH_CAP, DEFAULT_HISTORY_CAP, DEFAULT_PAIR_CAP,
};
use crate::history;
use crate::oracle::{self, OracleError};
use crate::puzzle::{self, ChildLabel, ChildSet, ChildView, PuzzleInstance, Status};
use crate::rounds::{self, RoundChildState};
use crate::scenario::{is_self_contained, ReplayError, Scenario};
use crate::vlsm::{SweepCount, Trace, TraceOf, TraceValidity};

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    /// States, transitions or inputs examined.
    pub checked: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub counterexample: Option<Scenario>,
}

impl Verdict {
    fn pass(checked: usize) -> Self {
        Verdict { pass: true, checked, detail: None, counterexample: None }
    }
}

/// Rounds are counted from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleTable {
    pub rounds_to_yes: Vec<u32>,
    pub expected: Vec<Status>,
    /// Distinct status vectors of the reachable final states.
    pub reached: Vec<String>,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShortestFinal {
    /// Transitions on a shortest trace, emits excluded.
    pub length: usize,
    pub receives_per_child: Vec<usize>,
    /// The same trace with the emits it relies on.
    pub scenario: Scenario,
}

/// One bounded part of an infinite state space, explored exhaustively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fragment {
    pub name: String,
    pub history_cap: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub states: usize,
    pub messages: usize,
    pub final_reachable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub format: u32,
    pub config: ExplorationConfig,
    pub sweeps: usize,
    pub converged: bool,
    pub states: usize,
    pub messages: usize,
    pub final_reachable: bool,
    pub properties: BTreeMap<String, Verdict>,
    pub oracle: OracleTable,
    pub shortest_final: Option<ShortestFinal>,
    /// History model only: the fragments the counts above add up.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fragments: Vec<Fragment>,
    pub per_sweep: Vec<SweepCount>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.converged && self.properties.values().all(|v| v.pass)
    }
}

/// What one exploration established.
struct Findings {
    properties: BTreeMap<String, Verdict>,
    reached: BTreeSet<String>,
    shortest_final: Option<ShortestFinal>,
    sweeps: usize,
    converged: bool,
    states: usize,
    messages: usize,
    per_sweep: Vec<SweepCount>,
}

impl Findings {
    fn fragment(&self, name: &str, history_cap: usize) -> Fragment {
        Fragment {
            name: name.into(),
            history_cap,
            sweeps: self.sweeps,
            converged: self.converged,
            states: self.states,
            messages: self.messages,
            final_reachable: self.shortest_final.is_some(),
        }
    }

    /// Reachability holds if either side reaches a final state; every other
    /// property must hold on both.
    fn merge(mut self, other: Findings) -> Findings {
        for (name, theirs) in other.properties {
            let Some(ours) = self.properties.get_mut(&name) else {
                self.properties.insert(name, theirs);
                continue;
            };
            let either = name == "final_reachable";
            if either && !ours.pass && theirs.pass || !either && ours.pass && !theirs.pass {
                *ours = theirs;
            } else if ours.pass == theirs.pass {
                ours.checked += theirs.checked;
            }
        }
        self.reached.extend(other.reached);
        self.shortest_final = self.shortest_final.or(other.shortest_final);
        self.sweeps = self.sweeps.max(other.sweeps);
        self.converged &= other.converged;
        self.states += other.states;
        self.messages += other.messages;
        self
    }

    fn report(mut self, config: &ExplorationConfig, instance: &PuzzleInstance, fragments: Vec<Fragment>, extra: BTreeMap<String, Verdict>) -> Result<Report, RunError> {
        self.properties.extend(extra);
        let sync = oracle::sync_rounds(&oracle::build_kripke(instance.n())?, instance.muddy())?;
        let expected = sync.final_statuses.clone();
        let expected_text: String = expected.iter().map(|s| s.symbol()).collect();
        let agree = !self.reached.is_empty() && self.reached.iter().all(|r| *r == expected_text);
        Ok(Report {
            format: REPORT_FORMAT,
            config: config.clone(),
            sweeps: self.sweeps,
            converged: self.converged,
            states: self.states,
            messages: self.messages,
            final_reachable: self.shortest_final.is_some(),
            properties: self.properties,
            oracle: OracleTable { rounds_to_yes: sync.rounds_to_yes, expected, reached: self.reached.into_iter().collect(), agree },
            shortest_final: self.shortest_final,
            fragments,
            per_sweep: self.per_sweep,
        })
    }
}

struct Context<'a, P: Puzzle> {
    model: ModelKind,
    instance: PuzzleInstance,
    puzzle: &'a P,
    exploration: &'a Exploration<P>,
}

impl<P> Context<'_, P>
where
    P: Puzzle,
    P::Message: PuzzleMessage,
{
    fn scenario(&self, trace: &TraceOf<P>) -> Scenario {
        Scenario::from_trace::<P>(self.model, &self.instance, &with_emits(self.puzzle, trace))
    }

    fn verdict(&self, outcome: Outcome) -> Verdict {
        match outcome {
            Outcome::Pass { checked } => Verdict::pass(checked),
            Outcome::Fail { checked, witness, detail } => {
                let trace = match witness {
                    Witness::State(id) => Some(self.exploration.trace_to(id)),
                    Witness::Edge(k) => Some(self.exploration.trace_through(&self.exploration.closure().edges()[k])),
                    Witness::None => None,
                };
                Verdict { pass: false, checked, detail: Some(detail), counterexample: trace.map(|t| self.scenario(&t)) }
            }
        }
    }

    fn findings(&self, mut properties: BTreeMap<String, Verdict>) -> Findings {
        let ex = self.exploration;
        let closure = ex.closure();
        properties.insert("fact1".into(), self.verdict(check_consistency(ex)));
        properties.insert("final_reachable".into(), self.verdict(check_final_reachable(ex)));
        properties.insert("final_matches_oracle".into(), self.verdict(check_final_statuses(ex, &self.instance)));
        properties.insert("decisions_sound".into(), self.verdict(check_decisions(ex, &self.instance)));
        let shortest_final = ex.nearest_final().map(|id| {
            let trace = ex.trace_to(id);
            ShortestFinal {
                length: trace.len(),
                receives_per_child: explorer::receive_counts(self.instance.n(), &trace),
                scenario: self.scenario(&trace),
            }
        });
        Findings {
            properties,
            reached: ex.final_ids().map(|id| status_string(closure.state(id))).collect(),
            shortest_final,
            sweeps: closure.sweeps(),
            converged: closure.converged(),
            states: closure.states().len(),
            messages: closure.messages().len(),
            per_sweep: closure.per_sweep().to_vec(),
        }
    }
}

fn status_string<S: ChildView>(state: &CompositeState<S>) -> String {
    state.components().iter().map(|c| c.status().map_or('-', Status::symbol)).collect()
}

/// Explores one instance and checks every property that applies to its model.
pub fn explore(config: &ExplorationConfig) -> Result<Report, RunError> {
    let instance = config.validate()?;
    match config.model {
        ModelKind::Rounds | ModelKind::RoundsJump => {
            let puzzle = rounds::build_puzzle(&instance, config.model == ModelKind::RoundsJump);
            let exploration = explore_puzzle(&puzzle, config.bound);
            let ctx = Context { model: config.model, instance, puzzle: &puzzle, exploration: &exploration };
            let mut properties = BTreeMap::new();
            let muddy = instance.muddy_count();
            properties.insert(
                "lemma1".into(),
                ctx.verdict(check_states(&exploration, true, |s| lemma1_violation(s, muddy))),
            );
            properties.insert("progress".into(), ctx.verdict(check_progress(&exploration)));
            properties.insert("termination".into(), ctx.verdict(check_edges(&exploration, termination_violation)));
            if config.model == ModelKind::Rounds {
                properties.insert("fact2".into(), ctx.verdict(check_no_equivocation_fact(&puzzle, &exploration)));
            }
            ctx.findings(properties).report(config, &instance, Vec::new(), BTreeMap::new())
        }
        ModelKind::History => {
            let cap = config.history_cap.unwrap_or(DEFAULT_HISTORY_CAP);
            let puzzle = history::build_puzzle3_with(&instance, history::capped(cap)).map_err(ConfigError::from)?;
            let exploration = explore_puzzle(&puzzle, config.bound);
            let ctx = Context { model: config.model, instance, puzzle: &puzzle, exploration: &exploration };
            let capped = ctx.findings(BTreeMap::new());

            let fresh_cap = config.fresh_cap.unwrap_or(DEFAULT_FRESH_CAP);
            let puzzle = history::build_puzzle3_with(&instance, history::capped_fresh(fresh_cap)).map_err(ConfigError::from)?;
            let exploration = explore_puzzle(&puzzle, config.bound);
            let ctx = Context { model: config.model, instance, puzzle: &puzzle, exploration: &exploration };
            let fresh = ctx.findings(BTreeMap::new());

            let fragments = vec![capped.fragment("any_delivery", cap), fresh.fragment("fresh_delivery", fresh_cap)];
            let extra = BTreeMap::from([("leak_prevented".to_string(), leak_verdict(config, &instance)?)]);
            capped.merge(fresh).report(config, &instance, fragments, extra)
        }
    }
}

/// For every muddy/clean pair, explores traces whose receives all go
/// between the two, and looks for a receive that tells the muddy child
/// it is muddy.
fn leak_verdict(config: &ExplorationConfig, instance: &PuzzleInstance) -> Result<Verdict, RunError> {
    let cap = config.pair_cap.unwrap_or(DEFAULT_PAIR_CAP);
    let mut checked = 0;
    for a in instance.muddy().iter() {
        for b in (1..=instance.n()).filter(|&b| !instance.is_muddy(b)) {
            let constraint = Both(history::capped(cap), PairExchange { a, b });
            let puzzle = history::build_puzzle3_with(instance, constraint).map_err(ConfigError::from)?;
            let exploration = explore_puzzle(&puzzle, config.bound);
            if !exploration.closure().converged() {
                return Ok(Verdict {
                    pass: false,
                    checked,
                    detail: Some(format!("exchange between {a} and {b} did not converge within {} sweeps", config.bound)),
                    counterexample: None,
                });
            }
            let ctx = Context { model: ModelKind::History, instance: *instance, puzzle: &puzzle, exploration: &exploration };
            match check_no_leak(&exploration, a) {
                Outcome::Pass { checked: c } => checked += c,
                failed => {
                    let mut verdict = ctx.verdict(failed);
                    verdict.checked += checked;
                    return Ok(verdict);
                }
            }
        }
    }
    Ok(Verdict::pass(checked))
}

/// The instance a consistent tuple of observations belongs to.
fn instance_of(observations: &[ChildSet]) -> Option<PuzzleInstance> {
    let n = observations.len();
    if n == 1 {
        return PuzzleInstance::new(1, [1]).ok();
    }
    let muddy = observations.iter().fold(ChildSet::EMPTY, |acc, o| acc.union(*o));
    PuzzleInstance::new(n, muddy.iter()).ok()
}

/// Consistency over the composition started from every initial state,
/// consistent or not.
fn family_fact1(model: ModelKind, n: usize, bound: usize, cap: Option<usize>) -> Verdict {
    fn run<P>(model: ModelKind, puzzle: &P, bound: usize) -> Verdict
    where
        P: Puzzle,
        P::Message: PuzzleMessage,
    {
        let exploration = explore_puzzle(puzzle, bound);
        let outcome = check_consistency(&exploration);
        let (checked, witness, detail) = match outcome {
            Outcome::Pass { checked } => return Verdict::pass(checked),
            Outcome::Fail { checked, witness, detail } => (checked, witness, detail),
        };
        let Witness::State(id) = witness else { unreachable!("consistency failures name a state") };
        let trace = exploration.trace_to(id);
        let observations: Vec<ChildSet> = trace.initial.components().iter().map(ChildView::observation).collect();
        let counterexample = instance_of(&observations).map(|instance| {
            Scenario::from_trace::<P>(model, &instance, &with_emits(puzzle, &trace))
        });
        Verdict { pass: false, checked, detail: Some(detail), counterexample }
    }
    match model {
        ModelKind::Rounds | ModelKind::RoundsJump => {
            run(model, &rounds::build_family(n, model == ModelKind::RoundsJump), bound)
        }
        ModelKind::History => {
            let cap = cap.unwrap_or(DEFAULT_HISTORY_CAP);
            run(model, &history::build_family3_with(history::capped(cap)), bound)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub format: u32,
    pub model: ModelKind,
    pub n: usize,
    pub instances: Vec<Report>,
    /// Properties of the composition over all initial states.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<BTreeMap<String, Verdict>>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckRequest {
    pub model: ModelKind,
    pub n: usize,
    /// `None` checks every instance with `n` children.
    pub muddy: Option<ChildSet>,
    pub overrides: Overrides,
}

/// Runs every property suite over the requested instances.
pub fn check(request: &CheckRequest) -> Result<CheckReport, RunError> {
    let instances = match request.muddy {
        Some(muddy) => vec![PuzzleInstance::new(request.n, muddy.iter()).map_err(ConfigError::from)?],
        None => PuzzleInstance::all(request.n).map_err(ConfigError::from)?,
    };
    let mut reports = Vec::new();
    for instance in &instances {
        let mut config = ExplorationConfig::new(request.model, instance);
        request.overrides.apply(&mut config);
        reports.push(explore(&config)?);
    }
    let family = request.muddy.is_none().then(|| {
        let bound = request.overrides.bound.unwrap_or_else(|| explorer::default_bound(request.model, request.n));
        BTreeMap::from([("fact1".to_string(), family_fact1(request.model, request.n, bound, request.overrides.history_cap))])
    });
    let pass = reports.iter().all(Report::passed) && family.iter().flat_map(|f| f.values()).all(|v| v.pass);
    Ok(CheckReport { format: REPORT_FORMAT, model: request.model, n: request.n, instances: reports, family, pass })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub format: u32,
    pub model: ModelKind,
    pub n: usize,
    pub muddy: ChildSet,
    pub steps: usize,
    pub final_state: serde_json::Value,
    pub statuses: String,
    pub is_final: bool,
    /// Every received message was emitted earlier in the scenario.
    pub self_contained: bool,
    pub validity: TraceValidity,
    /// Violated properties along the trace, with what went wrong.
    pub violations: BTreeMap<String, String>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.validity != TraceValidity::Invalid
    }
}

/// Replays a scenario from its instance's initial state and re-checks the
/// properties along the resulting trace.
pub fn replay(scenario: &Scenario, bound: Option<usize>) -> Result<ReplayReport, RunError> {
    let instance = scenario.instance().map_err(ConfigError::from)?;
    let mut config = ExplorationConfig::new(scenario.model, &instance);
    if let Some(bound) = bound {
        config.bound = bound;
    }
    let instance = config.validate()?;
    match scenario.model {
        ModelKind::Rounds | ModelKind::RoundsJump => {
            let puzzle = rounds::build_puzzle(&instance, scenario.model == ModelKind::RoundsJump);
            let trace = scenario.replay(&puzzle, rounds::initial_state(&instance))?;
            let exploration = explore_puzzle(&puzzle, config.bound);
            let mut violations = common_violations(&instance, &trace);
            rounds_violations(&instance, &puzzle, &exploration, &trace, &mut violations);
            let validity = if is_self_contained(&trace) {
                TraceValidity::Valid
            } else {
                exploration.closure().trace_validity(&puzzle, &trace)
            };
            Ok(replay_report(scenario, &trace, validity, violations))
        }
        ModelKind::History => {
            let puzzle = history::build_puzzle3(&instance).map_err(ConfigError::from)?;
            let trace = scenario.replay(&puzzle, history::initial_state(&instance))?;
            let mut violations = common_violations(&instance, &trace);
            if let Some(detail) = pair_leak(&instance, &trace) {
                violations.insert("leak_prevented".into(), detail);
            }
            let validity = if is_self_contained(&trace) {
                TraceValidity::Valid
            } else {
                let cap = config.history_cap.unwrap_or(DEFAULT_HISTORY_CAP);
                let capped = history::build_puzzle3_with(&instance, history::capped(cap)).map_err(ConfigError::from)?;
                let closure = crate::vlsm::valid_closure(&capped, config.bound);
                let known = trace.records.iter().all(|r| closure.contains_message(r.input.as_ref()));
                if known { TraceValidity::Valid } else { TraceValidity::Indeterminate }
            };
            Ok(replay_report(scenario, &trace, validity, violations))
        }
    }
}

fn replay_report<S: ChildView + Clone + Serialize, M: PartialEq>(
    scenario: &Scenario,
    trace: &Trace<CompositeLabel<ChildLabel>, CompositeState<S>, M>,
    validity: TraceValidity,
    violations: BTreeMap<String, String>,
) -> ReplayReport {
    let last = trace.last_state();
    ReplayReport {
        format: REPORT_FORMAT,
        model: scenario.model,
        n: scenario.n,
        muddy: scenario.muddy,
        steps: trace.len(),
        final_state: serde_json::to_value(last.components()).expect("states serialize"),
        statuses: status_string(last),
        is_final: puzzle::is_final(last.components()),
        self_contained: is_self_contained(trace),
        validity,
        violations,
    }
}

fn common_violations<S: ChildView + Clone, M>(instance: &PuzzleInstance, trace: &Trace<CompositeLabel<ChildLabel>, CompositeState<S>, M>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (k, record) in trace.records.iter().enumerate() {
        let state = &record.destination;
        let observations: Vec<ChildSet> = state.components().iter().map(ChildView::observation).collect();
        if !puzzle::consistent(&observations) {
            out.entry("fact1".into()).or_insert(format!("after step {k}: observations {observations:?} are inconsistent"));
        }
        for (c, child) in state.components().iter().enumerate() {
            let expected = oracle::expected_status(instance.muddy(), c + 1);
            if let Some(s) = child.status().filter(|s| s.is_final() && *s != expected) {
                out.entry("decisions_sound".into())
                    .or_insert(format!("after step {k}: child {} decided {s}, expected {expected}", c + 1));
            }
        }
    }
    let last = trace.last_state();
    if puzzle::is_final(last.components()) {
        let expected: String = instance.expected_statuses().iter().map(|s| s.symbol()).collect();
        let got = status_string(last);
        if got != expected {
            out.insert("final_matches_oracle".into(), format!("final statuses {got} differ from expected {expected}"));
        }
    }
    out
}

fn rounds_violations<P>(
    instance: &PuzzleInstance,
    puzzle: &P,
    exploration: &Exploration<P>,
    trace: &TraceOf<P>,
    out: &mut BTreeMap<String, String>,
) where
    P: Puzzle<Child = RoundChildState>,
{
    for (k, record) in trace.records.iter().enumerate() {
        if let Some(detail) = lemma1_violation(&record.destination, instance.muddy_count()) {
            out.entry("lemma1".into()).or_insert(format!("after step {k}: {detail}"));
        }
        if let Some(detail) = termination_violation(record) {
            out.entry("termination".into()).or_insert(format!("step {k}: {detail}"));
        }
    }
    let closure = exploration.closure();
    let last = trace.last_state();
    if let Some(id) = closure.state_id(last) {
        let stuck = !puzzle::is_final(last.components())
            && !exploration.outgoing(id).any(|e| {
                let next = closure.state(e.destination);
                last.components().iter().zip(next.components()).any(|(a, b)| b.round() > a.round())
            });
        if stuck {
            out.insert("progress".into(), "no valid transition from the last state raises any child's round".into());
        }
    }
    if let Some(record) = trace.records.last().filter(|r| r.label.label == ChildLabel::Receive) {
        let source = closure.state_id(&record.source);
        let message = record.input.as_ref().and_then(|m| closure.message_id(m));
        if let (Some(s), Some(m)) = (source, message) {
            let depth = exploration.depth(s);
            if exploration.emission_depth(m).is_none_or(|d| d > depth) {
                out.insert(
                    "fact2".into(),
                    format!("the last receive takes a message no trace of at most {depth} steps can emit"),
                );
            }
        } else if source.is_some() && !puzzle.valid(&record.label, &record.source, record.input.as_ref()) {
            out.insert("fact2".into(), "the last receive is not constrained".into());
        }
    }
}

/// A receive that tells a muddy child it is muddy on a trace whose
/// receives all go between that child and a single clean child.
fn pair_leak<S: ChildView + Clone, M: Sender>(
    instance: &PuzzleInstance,
    trace: &Trace<CompositeLabel<ChildLabel>, CompositeState<S>, M>,
) -> Option<String> {
    let mut involved = ChildSet::EMPTY;
    for record in trace.records.iter().filter(|r| r.label.label == ChildLabel::Receive) {
        involved = involved.with(record.label.index);
        if let Some(m) = &record.input {
            involved = involved.with(m.sender());
        }
    }
    let members: Vec<usize> = involved.iter().collect();
    let [a, b] = members[..] else { return None };
    let muddy = match (instance.is_muddy(a), instance.is_muddy(b)) {
        (true, false) => a,
        (false, true) => b,
        _ => return None,
    };
    trace.records.iter().enumerate().find_map(|(k, record)| {
        let before = record.source.component(muddy).and_then(ChildView::status);
        let after = record.destination.component(muddy).and_then(ChildView::status);
        (record.label.label == ChildLabel::Receive && before == Some(Status::Unknown) && after == Some(Status::Muddy))
            .then(|| format!("step {k}: child {muddy} learns it is muddy from an exchange with child {} alone", a + b - muddy))
    })
}
