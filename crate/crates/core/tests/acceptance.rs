//! Acceptance run: one line per criterion, then a summary.
//!
//! A criterion listed in `KNOWN_FAILURES` still prints FAIL, together with
//! the reason; any other failure makes the run exit non-zero.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, ExitCode};

use muddy_vlsm::explorer::{ExplorationConfig, ModelKind, Overrides};
use muddy_vlsm::oracle::{build_kripke, expected_status, sync_rounds};
use muddy_vlsm::report::{self, CheckReport, CheckRequest, Report};
use muddy_vlsm::rounds::{build_puzzle, initial_state, RoundChildState};
use muddy_vlsm::scenario::{is_self_contained, Scenario};
use muddy_vlsm::vlsm::is_constrained_trace;
use muddy_vlsm::{ChildSet, PuzzleInstance, Status};

const KNOWN_FAILURES: &[(u32, &str)] = &[(
    7,
    "with all three children muddy, a child that hears the other two decide m before it has seen two \
     distinct unknown messages from each of them concludes c",
)];

type Verdict = Result<String, String>;

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "scenarios", name].iter().collect();
    serde_json::from_str(&fs::read_to_string(&path).expect("bundled scenario")).expect("scenario json")
}

fn check(model: ModelKind, n: usize) -> CheckReport {
    let request = CheckRequest { model, n, muddy: None, overrides: Overrides::default() };
    report::check(&request).expect("check runs")
}

fn failing<'a>(reports: impl IntoIterator<Item = &'a Report>, property: &str) -> Option<String> {
    reports.into_iter().find_map(|r| {
        if !r.converged {
            return Some(format!("n={} muddy={} did not converge", r.config.n, r.config.muddy));
        }
        match r.properties.get(property) {
            None => Some(format!("n={} muddy={} has no {property} verdict", r.config.n, r.config.muddy)),
            Some(v) if !v.pass => Some(format!(
                "n={} muddy={}: {}",
                r.config.n,
                r.config.muddy,
                v.detail.clone().unwrap_or_default()
            )),
            Some(_) => None,
        }
    })
}

fn all_hold(checks: &[CheckReport], properties: &[&str]) -> Verdict {
    let mut states = 0;
    for c in checks {
        for p in properties {
            if let Some(why) = failing(&c.instances, p) {
                return Err(format!("{p}: {why}"));
            }
        }
        states += c.instances.iter().map(|r| r.states).sum::<usize>();
    }
    let instances: usize = checks.iter().map(|c| c.instances.len()).sum();
    Ok(format!("{instances} instances, {states} states"))
}

fn criterion1() -> Verdict {
    let instance = PuzzleInstance::new(5, [1, 2, 3, 4]).unwrap();
    let puzzle = build_puzzle(&instance, false);
    let short = scenario("example1.json");
    let two_party = short.steps.iter().all(|s| s.component == 1 || s.component == 5);
    let receives = short.steps.iter().filter(|s| s.label == muddy_vlsm::ChildLabel::Receive).count();
    if !two_party || receives != 6 {
        return Err(format!("schedule is not the two-party exchange ({receives} receives)"));
    }
    let trace = short.replay(&puzzle, initial_state(&instance)).map_err(|e| e.to_string())?;
    if !is_self_contained(&trace) || !is_constrained_trace(&puzzle, &trace) {
        return Err("schedule is not a valid trace".into());
    }
    let child1 = &trace.last_state().components()[0];
    let expected = RoundChildState::running([2, 3, 4].into_iter().collect(), 3, Status::Muddy);
    if *child1 != expected {
        return Err(format!("child 1 ends at {child1:?}"));
    }
    let long = scenario("example1_broadcast.json");
    let replayed = report::replay(&long, None).map_err(|e| e.to_string())?;
    if !replayed.is_final || replayed.statuses != "mmmmc" || !replayed.passed() {
        return Err(format!("broadcast ends with statuses {}", replayed.statuses));
    }
    Ok(format!("{} steps, then {} with statuses mmmmc", trace.len(), replayed.steps))
}

fn criterion8() -> Verdict {
    let mut assignments = 0;
    for n in 1..=5 {
        let model = build_kripke(n).map_err(|e| e.to_string())?;
        for bits in 1u32..1 << n {
            let x = ChildSet::from_bits(bits);
            let out = sync_rounds(&model, x).map_err(|e| e.to_string())?;
            assignments += 1;
            for i in 1..=n {
                if out.final_statuses[i - 1] != expected_status(x, i) {
                    return Err(format!("n={n} muddy={x}: child {i} ends {}", out.final_statuses[i - 1]));
                }
                let k = x.len() as u32;
                let want = if x.contains(i) { k } else { k + 1 };
                if out.rounds_to_yes[i - 1] != want {
                    return Err(format!("n={n} muddy={x}: child {i} knows at round {}", out.rounds_to_yes[i - 1]));
                }
            }
        }
    }
    Ok(format!("{assignments} assignments"))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_muddy-vlsm")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.code() == Some(2) {
        return Err(format!("usage error: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn criterion9() -> Verdict {
    let runs: [&[&str]; 3] = [
        &["check", "--model", "rounds", "--n", "4", "--all-instances"],
        &["check", "--model", "rounds", "--jump", "--n", "3", "--all-instances"],
        &["check", "--model", "history", "--n", "3", "--muddy", "1,2"],
    ];
    let mut bytes = 0;
    for args in runs {
        let first = run_cli(args)?;
        let second = run_cli(args)?;
        if first != second || first.is_empty() {
            return Err(format!("`{}` differs between runs", args.join(" ")));
        }
        bytes += first.len();
    }
    Ok(format!("{} commands, {bytes} identical report bytes", runs.len()))
}

fn main() -> ExitCode {
    let rounds: Vec<CheckReport> = (1..=4).map(|n| check(ModelKind::Rounds, n)).collect();
    let history = check(ModelKind::History, 3);

    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    results.push((1, "two-party leak schedule replay", criterion1()));
    results.push((2, "round invariant on every valid state, n <= 4", all_hold(&rounds, &["lemma1"])));
    results.push((3, "observation consistency on every valid state, both models", {
        let family = rounds.iter().chain([&history]).find_map(|c| {
            c.family.as_ref().and_then(|f| f.get("fact1")).filter(|v| !v.pass).map(|v| v.detail.clone().unwrap_or_default())
        });
        match family {
            Some(why) => Err(format!("from some initial state: {why}")),
            None => all_hold(&rounds, &["fact1"]).and_then(|a| all_hold(std::slice::from_ref(&history), &["fact1"]).map(|b| format!("{a}; history {b}"))),
        }
    }));
    results.push((
        4,
        "progress, termination, final reachability and oracle agreement, n <= 4",
        all_hold(&rounds, &["progress", "termination", "final_reachable", "final_matches_oracle"]),
    ));
    results.push((5, "accepted inputs emitted by no longer traces, n <= 3", all_hold(&rounds[..3], &["fact2"])));
    results.push((6, "jump short path, n = 5", {
        let instance = PuzzleInstance::new(5, [1, 2, 3, 4]).unwrap();
        let config = ExplorationConfig::new(ModelKind::RoundsJump, &instance);
        let r = report::explore(&config).expect("explore runs");
        match &r.shortest_final {
            Some(s) if s.receives_per_child.iter().all(|&k| k <= 3) => {
                let replayed = report::replay(&s.scenario, None).expect("replay runs");
                if replayed.is_final && replayed.passed() {
                    Ok(format!("{} transitions, receives per child {:?}", s.length, s.receives_per_child))
                } else {
                    Err("the reported trace does not replay to a final state".into())
                }
            }
            Some(s) => Err(format!("shortest final trace has receives {:?}", s.receives_per_child)),
            None => Err("no final state reachable".into()),
        }
    }));
    results.push((
        7,
        "history model: reachability, oracle agreement, no two-party leak, n = 3",
        all_hold(std::slice::from_ref(&history), &["final_reachable", "final_matches_oracle", "leak_prevented"]),
    ));
    results.push((8, "oracle self-consistency, n <= 5", criterion8()));
    results.push((9, "determinism of check reports", criterion9()));

    let mut unexpected = 0;
    let mut passed = 0;
    for (k, name, verdict) in &results {
        match verdict {
            Ok(detail) => {
                passed += 1;
                println!("criterion {k} PASS: {name} ({detail})");
            }
            Err(why) => match KNOWN_FAILURES.iter().find(|(c, _)| c == k) {
                Some((_, reason)) => println!("criterion {k} FAIL: {name}: {why} [known: {reason}]"),
                None => {
                    unexpected += 1;
                    println!("criterion {k} FAIL: {name}: {why}");
                }
            },
        }
    }
    for (k, _) in KNOWN_FAILURES {
        if results.iter().any(|(c, _, v)| c == k && v.is_ok()) {
            unexpected += 1;
            println!("criterion {k} passes but is listed as a known failure");
        }
    }
    println!("{passed} of {} criteria pass", results.len());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
