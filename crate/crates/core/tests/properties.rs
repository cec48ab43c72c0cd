use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use agentkernel::agent::{apply_micro_overlay, parse_codeact_response, render_codeact_response, AgentConfig, MicroOverlay, ResponseGrammar};
use agentkernel::agents::parse_browsing_response;
use agentkernel::browse::{
    load_site_dir, run_program, sim_execute, typecheck_call, ActionProgram, ActionSubset, BrowseCall, BrowserState, ParamType,
    Primitive, Value,
};
use agentkernel::eval::{compare_trees, GoldDiff};
use agentkernel::event::{history_pairs, Action, ActionKind, EventStream, Observation, SessionLimits, SessionState, Source};
use agentkernel::llm::{
    normalize_prompt, prompt_digest, raw_prompt, ChatMessage, CompletionRequest, Provider, Recording, RecordingEntry,
    RecordingHeader, ReplayProvider, Role, Usage,
};
use agentkernel::skills::SkillSession;
use proptest::prelude::*;

fn fragment() -> impl Strategy<Value = String> {
    let pieces = prop::sample::select(vec![
        "<execute_bash>", "</execute_bash>", "<execute_ipython>", "</execute_ipython>", "<execute_browse>", "</execute_browse>",
        "<finish>", "</finish>", "```", "\n", " ", "ls", "click('1')", "<", ">", "/", "é", "\t",
    ]);
    prop::collection::vec(prop_oneof![pieces.prop_map(String::from), ".{0,4}"], 0..16).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn codeact_grammar_is_total(text in fragment()) {
        if let Ok(out) = parse_codeact_response(&text) {
            let again = parse_codeact_response(&render_codeact_response(&out));
            prop_assert_eq!(again, Ok(out));
        }
    }

    #[test]
    fn browsing_grammar_is_total(text in fragment()) {
        let _ = parse_browsing_response(&text);
    }

    #[test]
    fn overlays_never_widen(
        base in prop::option::of(prop::sample::subsequence(ActionKind::ALL.to_vec(), 1..=6)),
        extra in prop::option::of(prop::sample::subsequence(ActionKind::ALL.to_vec(), 0..=6)),
        text in "[a-z ]{0,10}",
    ) {
        let mut config = AgentConfig::new("a", ResponseGrammar::Codeact, "system").unwrap();
        config.allowed_action_kinds = base.map(BTreeSet::from_iter);
        let overlay = MicroOverlay { extra_system_text: text, allowed_action_kinds: extra.map(BTreeSet::from_iter) };
        match apply_micro_overlay(&config, &overlay) {
            Ok(narrowed) => {
                for kind in ActionKind::ALL {
                    prop_assert!(!narrowed.permits(kind) || config.permits(kind));
                }
                prop_assert!(ActionKind::ALL.iter().any(|k| narrowed.permits(*k)));
            }
            Err(_) => {
                let remaining = ActionKind::ALL.iter().filter(|k| {
                    config.permits(**k) && overlay.allowed_action_kinds.as_ref().is_none_or(|s| s.contains(k))
                });
                prop_assert_eq!(remaining.count(), 0);
            }
        }
    }
}

fn fixture_state() -> BrowserState {
    let site = load_site_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sites")).unwrap();
    BrowserState::open(Arc::new(site), "http://localhost:8000/form").unwrap()
}

const STRINGS: &[&str] = &[
    "237", "45", "55", "a5289", "a48", "48", "71", "88", "b8", "56", "572", "999", "red", "blue", "x",
    "http://localhost:8000/next", "http://localhost:8000/form", "http://nowhere/",
];

fn value(ty: ParamType) -> BoxedStrategy<Value> {
    let s = || prop::sample::select(STRINGS).prop_map(|s| Value::Str(s.to_string()));
    match ty {
        ParamType::Str => s().boxed(),
        ParamType::Float => (-500i64..500).prop_map(|n| Value::Num(n as f64 / 2.0)).boxed(),
        ParamType::Int => (0i64..3).prop_map(|n| Value::Num(n as f64)).boxed(),
        ParamType::StrOrStrList => prop_oneof![s(), prop::collection::vec(s(), 1..3).prop_map(Value::List)].boxed(),
        ParamType::Enum(vals) => prop::sample::select(vals).prop_map(|v| Value::Str(v.to_string())).boxed(),
        ParamType::EnumList(vals) => prop::sample::subsequence(vals, 0..=vals.len())
            .prop_map(|vs| Value::List(vs.into_iter().map(|v| Value::Str(v.to_string())).collect()))
            .boxed(),
    }
}

fn call() -> impl Strategy<Value = BrowseCall> {
    prop::sample::select(Primitive::ALL).prop_flat_map(|p| {
        let required: Vec<BoxedStrategy<Value>> =
            p.signature().params.iter().filter(|q| q.default.is_none()).map(|q| value(q.ty)).collect();
        required.prop_map(move |args| BrowseCall { primitive: p, args, kwargs: vec![] })
    })
}

fn check_page_invariants(state: &BrowserState) -> Result<(), TestCaseError> {
    prop_assert!(state.active_tab() < state.tabs().len());
    let bids = state.page().bids();
    let unique: BTreeSet<&String> = bids.iter().collect();
    prop_assert_eq!(unique.len(), bids.len());
    if let Some(f) = &state.page().focused {
        prop_assert!(bids.contains(f));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn programs_fold_left_and_never_mutate_input(calls in prop::collection::vec(call(), 1..8)) {
        let start = fixture_state();
        let snapshot = start.clone();
        let program = ActionProgram { calls: calls.clone() };
        let outcome = run_program(&start, &program, &ActionSubset::all());
        prop_assert_eq!(&start, &snapshot);

        let mut current = start.clone();
        let mut executed = 0;
        for c in &calls {
            let Ok(cmd) = typecheck_call(c, &ActionSubset::all()) else { break };
            let before = current.clone();
            match sim_execute(&current, &cmd) {
                Ok(next) => {
                    prop_assert_eq!(&current, &before);
                    check_page_invariants(&next)?;
                    current = next;
                    executed += 1;
                }
                Err(_) => break,
            }
        }
        prop_assert_eq!(outcome.executed, executed);
        prop_assert_eq!(outcome.error.is_none(), executed == calls.len());
        prop_assert_eq!(outcome.state, current);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Open(Option<i64>),
    Goto(i64),
    Down,
    Up,
    Edit(i64, i64, String),
    Create,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        prop::option::of(-2i64..30).prop_map(Op::Open),
        (-2i64..30).prop_map(Op::Goto),
        Just(Op::Down),
        Just(Op::Up),
        (-2i64..30, -2i64..30, "(x\n){0,4}").prop_map(|(s, e, c)| Op::Edit(s, e, c)),
        Just(Op::Create),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn skill_errors_are_atomic_and_windows_clamped(
        lines in 0usize..25,
        window in 1usize..12,
        ops in prop::collection::vec(op(), 1..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        std::fs::write(&path, (1..=lines).map(|i| format!("l{i}\n")).collect::<String>()).unwrap();
        let mut s = SkillSession::new(dir.path()).with_window(window);
        for op in ops {
            let bytes = std::fs::read(&path).unwrap();
            let (cursor, open) = (s.cursor(), s.open_path().map(Path::to_path_buf));
            let result = match op {
                Op::Open(l) => s.open_file("f.txt", l),
                Op::Goto(n) => s.goto_line(n),
                Op::Down => s.scroll_down(),
                Op::Up => s.scroll_up(),
                Op::Edit(a, b, c) => s.edit_file(a, b, &c),
                Op::Create => s.create_file("f.txt"),
            };
            match result {
                Err(_) => {
                    prop_assert_eq!(std::fs::read(&path).unwrap(), bytes);
                    prop_assert_eq!(s.cursor(), cursor);
                    prop_assert_eq!(s.open_path().map(Path::to_path_buf), open);
                }
                Ok(view) => {
                    let total = std::fs::read_to_string(&path).unwrap().lines().count();
                    let numbers: Vec<usize> = view
                        .lines()
                        .filter_map(|l| l.split_once('|').and_then(|(n, _)| n.parse().ok()))
                        .collect();
                    prop_assert!(numbers.iter().all(|n| (1..=total).contains(n)), "{:?} outside 1..={}", numbers, total);
                    prop_assert!(numbers.len() <= window);
                    prop_assert!(numbers.windows(2).all(|w| w[1] == w[0] + 1));
                    let c = s.cursor().unwrap();
                    prop_assert!(c >= 1 && c <= total.max(1));
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn cost_never_decreases_and_history_follows_ids(
        steps in prop::collection::vec((prop_oneof![Just(-1.0f64), 0.0f64..2.0, Just(f64::NAN)], any::<bool>(), any::<bool>()), 1..30),
    ) {
        let mut state = SessionState::new(EventStream::new("s"), SessionLimits::default());
        let mut last_action = None;
        for (amount, is_action, caused) in steps {
            let before = state.accumulated_cost();
            let _ = state.add_cost(amount);
            prop_assert!(state.accumulated_cost() >= before);
            if is_action {
                last_action = Some(state.append_action(Source::Agent, Action::shell("true")).unwrap());
            } else {
                let cause = if caused { last_action } else { None };
                state.append_observation(Source::Environment, Observation::user_message("hi"), cause).unwrap();
            }
        }
        let anchors: Vec<_> = history_pairs(&state.events()).iter().map(|h| h.anchor()).collect();
        prop_assert!(anchors.windows(2).all(|w| w[0] < w[1]));
        let action_ids: Vec<_> = state.events().iter().filter(|e| e.action().is_some()).map(|e| e.id).collect();
        let step_ids: Vec<_> = history_pairs(&state.events())
            .iter()
            .filter(|h| matches!(h, agentkernel::event::HistoryEntry::Step { .. }))
            .map(|h| h.anchor())
            .collect();
        prop_assert_eq!(step_ids, action_ids);
    }
}

fn request(parts: &[String]) -> CompletionRequest {
    let mut messages = vec![ChatMessage::new(Role::System, "sys")];
    messages.extend(parts.iter().map(|p| ChatMessage::new(Role::User, p.clone())));
    CompletionRequest::new(messages)
}

proptest! {
    #[test]
    fn replay_is_a_pure_lookup(
        prompts in prop::collection::vec(prop::collection::vec("[a-z0-9 ]{0,12}", 1..3), 1..6),
        probe in prop::collection::vec("[a-z0-9 ]{0,12}", 1..3),
    ) {
        let mut recording = Recording::new(RecordingHeader { model: "m".into(), platform_version: "0".into() });
        for (i, p) in prompts.iter().enumerate() {
            let req = request(p);
            let normalized = normalize_prompt(&req);
            recording.insert(RecordingEntry {
                prompt_digest: prompt_digest(&normalized),
                normalized_prompt: normalized,
                raw_prompt: raw_prompt(&req),
                response: format!("r{i}"),
                usage: Usage { input_tokens: i as u64, output_tokens: 1 },
                unit_cost: 0.0,
            });
        }
        let digests: BTreeSet<_> = recording.entries().iter().map(|e| e.prompt_digest.clone()).collect();
        prop_assert_eq!(digests.len(), recording.len());

        let before = recording.to_jsonl();
        let provider = ReplayProvider::new(recording);
        for p in prompts.iter().chain([&probe]) {
            let first = provider.complete(&request(p)).map_err(|e| e.to_string());
            let second = provider.complete(&request(p)).map_err(|e| e.to_string());
            prop_assert_eq!(first, second);
        }
        prop_assert!(provider.complete(&request(&prompts[0])).is_ok());
        prop_assert_eq!(provider.recording().to_jsonl(), before);
    }
}

fn tree() -> impl Strategy<Value = BTreeMap<String, Vec<u8>>> {
    prop::collection::btree_map("[ab]{1,2}", prop::collection::vec(0u8..3, 0..4), 0..5)
}

proptest! {
    #[test]
    fn gold_comparison_is_set_difference(workspace in tree(), gold in tree(), strict in any::<bool>()) {
        let result = compare_trees(&workspace, &gold, strict);
        let missing: BTreeSet<&String> = gold.keys().filter(|k| !workspace.contains_key(*k)).collect();
        let extra: BTreeSet<&String> = workspace.keys().filter(|k| !gold.contains_key(*k)).collect();
        let differing: BTreeSet<&String> = gold.iter().filter(|(k, v)| workspace.get(*k).is_some_and(|w| w != *v)).map(|(k, _)| k).collect();

        let mut got = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
        for d in &result.diffs {
            match d {
                GoldDiff::Missing { path } => got.0.insert(path),
                GoldDiff::Extra { path } => got.1.insert(path),
                GoldDiff::Differs { path, offset } => {
                    let (a, b) = (&workspace[path], &gold[path]);
                    prop_assert!(a.get(*offset) != b.get(*offset));
                    prop_assert_eq!(&a[..*offset], &b[..*offset]);
                    got.2.insert(path)
                }
            };
        }
        prop_assert_eq!(&got, &(missing.clone(), extra.clone(), differing.clone()));
        let expected = missing.is_empty() && differing.is_empty() && (!strict || extra.is_empty());
        prop_assert_eq!(result.matched, expected);
    }
}
