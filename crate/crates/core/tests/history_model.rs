use muddy_vlsm::composition::Both;
use muddy_vlsm::explorer::{explore_puzzle, ExplorationConfig, ModelKind};
use muddy_vlsm::history::{
    build_puzzle3, build_puzzle3_with, capped, capped_fresh, encode_formula, flatten, initial_state, FromOthers,
    HistoryChildState, HistoryConstraint, HistoryMessage,
};
use muddy_vlsm::puzzle::ChildView;
use muddy_vlsm::report;
use muddy_vlsm::scenario::{Input, Predicate, ReplayError, Scenario, Step, StepRef};
use muddy_vlsm::{is_constrained_trace, ChildLabel, ChildSet, PuzzleInstance, Status};

fn step(component: usize, label: ChildLabel, from: Option<usize>) -> Step {
    Step { component, label, input: from.map(|from_step| Input::FromStep(StepRef { from_step })) }
}

fn self_receiving_schedule() -> Scenario {
    use ChildLabel::{Emit, Init, Receive};
    let steps = vec![
        step(1, Init, None),
        step(2, Init, None),
        step(1, Emit, None),
        step(1, Receive, Some(2)),
        step(2, Emit, None),
        step(2, Receive, Some(4)),
        step(2, Emit, None),
        step(1, Receive, Some(6)),
        step(3, Init, None),
        step(1, Emit, None),
        step(3, Receive, Some(9)),
    ];
    Scenario { format: 1, model: ModelKind::History, n: 3, muddy: [1, 2].into_iter().collect(), steps }
}

#[test]
fn literal_phi_lets_self_receives_mislead_a_clean_child() {
    let instance = PuzzleInstance::new(3, [1, 2]).unwrap();
    let puzzle = build_puzzle3(&instance).unwrap();
    let trace = self_receiving_schedule().replay(&puzzle, initial_state(&instance)).unwrap();
    assert!(is_constrained_trace(&puzzle, &trace));
    let last = trace.last_state().components();
    assert_eq!(last[0].status(), Some(Status::Muddy));
    assert_eq!(last[2].status(), Some(Status::Muddy), "child 3 is clean but decides muddy");

    let guarded = build_puzzle3_with(&instance, Both(HistoryConstraint, FromOthers)).unwrap();
    let err = self_receiving_schedule().replay(&guarded, initial_state(&instance)).unwrap_err();
    assert_eq!(
        err,
        ReplayError::Rejected { step: 3, component: 1, label: ChildLabel::Receive, predicate: Predicate::CompositionConstraint }
    );
}

#[test]
fn bundled_pair_exchange_leaves_the_muddy_child_unknown() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/history_pair_exchange.json");
    let scenario: Scenario = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let replayed = report::replay(&scenario, None).unwrap();
    assert!(replayed.passed() && replayed.self_contained);
    assert_eq!(&replayed.statuses[..1], "u");
    let receives = scenario.steps.iter().filter(|s| s.label == ChildLabel::Receive).count();
    assert_eq!(receives, 6);
}

#[test]
fn single_muddy_child_knows_at_once() {
    let instance = PuzzleInstance::new(3, [1]).unwrap();
    let puzzle = build_puzzle3_with(&instance, capped(2)).unwrap();
    let ex = explore_puzzle(&puzzle, 64);
    assert!(ex.closure().converged());
    for id in 0..ex.state_count() {
        if let HistoryChildState::Running { status, .. } = &ex.closure().state(id).components()[0] {
            assert_eq!(*status, Status::Muddy);
        }
    }
    let final_id = ex.nearest_final().unwrap();
    let statuses: Vec<_> = ex.closure().state(final_id).components().iter().map(ChildView::status).collect();
    assert_eq!(statuses, vec![Some(Status::Muddy), Some(Status::Clean), Some(Status::Clean)]);
}

#[test]
fn two_muddy_children_decide_correctly_in_both_fragments() {
    let instance = PuzzleInstance::new(3, [1, 2]).unwrap();
    let config = ExplorationConfig::new(ModelKind::History, &instance);
    let r = report::explore(&config).unwrap();
    assert!(r.passed(), "{:?}", r.properties);
    assert_eq!(r.oracle.reached, vec!["mmc".to_string()]);
    assert_eq!(r.fragments.len(), 2);
    assert!(r.fragments.iter().all(|f| f.converged && f.final_reachable));
}

#[test]
fn three_muddy_children_can_be_misled() {
    let instance = PuzzleInstance::new(3, [1, 2, 3]).unwrap();
    let puzzle = build_puzzle3_with(&instance, capped_fresh(3)).unwrap();
    let ex = explore_puzzle(&puzzle, 64);
    assert!(ex.closure().converged());
    let mut reached: Vec<String> = ex
        .final_ids()
        .map(|id| ex.closure().state(id).components().iter().map(|c| c.status().unwrap().symbol()).collect())
        .collect();
    reached.sort();
    reached.dedup();
    assert_eq!(reached, vec!["cmm", "mcm", "mmc", "mmm"]);
}

#[test]
fn formula_size_tracks_flattened_content() {
    let u2 = HistoryMessage::new(2, Status::Unknown, vec![]);
    let u3 = HistoryMessage::new(3, Status::Unknown, vec![]);
    let a = HistoryMessage::new(1, Status::Unknown, vec![u2.clone(), u3.clone()]);
    let b = HistoryMessage::new(2, Status::Unknown, vec![a.clone()]);
    let m = HistoryMessage::new(3, Status::Muddy, vec![a.clone(), b.clone()]);
    let f = encode_formula(&m);
    assert_eq!(f.knowledge_depth(), m.depth());
    let distinct = flatten(m.history()).len();
    assert!(f.dag_size() <= 8 * (distinct + 1), "{} nodes for {distinct} messages", f.dag_size());
    let obs: ChildSet = [1, 2].into_iter().collect();
    assert_eq!(muddy_vlsm::history::compute_status(3, obs, &[a, b]), Status::Muddy);
}
