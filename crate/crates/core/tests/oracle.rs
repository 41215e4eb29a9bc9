mod common;

use common::{bundle_counterfactual, locate, oracle, random_episode, Located, OracleResult, RuleGen};
use towcheck_core::dsl::library::{sound_suite, table1};
use towcheck_core::dsl::QueryRule;
use towcheck_core::episode::Episode;
use towcheck_core::game::{GameConfig, Transform};
use towcheck_core::models::ModelBundle;
use towcheck_core::play::{play_game, Agent};
use towcheck_core::query::{evaluate, Scope, ViolationReport};
use towcheck_core::store::TreeStore;

fn engine_view(report: &ViolationReport, store: &TreeStore) -> OracleResult {
    OracleResult {
        matches: report
            .matches
            .iter()
            .map(|m| -> Located {
                (m.episode_id.clone(), m.decision_idx, locate(store, &m.episode_id, m.decision_idx, m.output_state_id))
            })
            .collect(),
        errors: report.evaluation_errors,
        per_decision: report
            .per_decision_counts
            .iter()
            .map(|c| (c.episode_id.clone(), c.decision_idx, c.count))
            .collect(),
    }
}

fn build(episodes: &[Episode], bundle: &ModelBundle) -> TreeStore {
    let mut store = TreeStore::new();
    for e in episodes {
        let id = store.ingest(e).episode_id;
        for t in Transform::ALL {
            store.materialize_counterfactuals(&id, bundle, t).unwrap();
        }
    }
    store
}

fn check(rules: &[QueryRule], episodes: &[Episode], store: &TreeStore, bundle: &ModelBundle) -> usize {
    let cf = bundle_counterfactual(bundle);
    let mut total = 0;
    for rule in rules {
        let report = evaluate(rule, store, &Scope::all()).unwrap();
        let expected = oracle(rule, episodes, false, &cf);
        assert_eq!(engine_view(&report, store), expected, "rule {}: {}", rule.name, rule.source);
        total += expected.matches.len();
    }
    total
}

fn planner_games(n: u64) -> (Vec<Episode>, ModelBundle) {
    let cfg = GameConfig::shrunken();
    let bundle = ModelBundle::exact(&cfg);
    let planner = Agent::planner(bundle.clone());
    let episodes = (0..n)
        .map(|s| {
            let record = play_game(&planner, &Agent::Random, &cfg, 40 + s).unwrap();
            Episode::from_game(record, &cfg, "exact", "planner", "random")
        })
        .collect();
    (episodes, bundle)
}

#[test]
fn builtin_rules_agree_with_oracle_on_played_games() {
    let (episodes, bundle) = planner_games(2);
    let store = build(&episodes, &bundle);
    let mut rules = table1();
    rules.extend(sound_suite(GameConfig::shrunken().max_health));
    assert_eq!(check(&rules, &episodes, &store, &bundle), 0);
}

#[test]
fn random_rules_agree_with_oracle_on_random_trees() {
    let episodes: Vec<Episode> = (0..3).map(|s| random_episode(s, 4, 6, 4)).collect();
    let bundle = ModelBundle::exact(&GameConfig::shrunken());
    let store = build(&episodes, &bundle);
    let mut gen = RuleGen::new(11);
    let rules: Vec<QueryRule> = (0..150)
        .map(|i| {
            let (class, text) = gen.rule();
            QueryRule::parse(&format!("r{i}"), class, &text).unwrap_or_else(|e| panic!("{text}\n{e}"))
        })
        .collect();
    let total = check(&rules, &episodes, &store, &bundle);
    assert!(total > 0, "random rules should match somewhere");
}

#[test]
fn predicted_only_skips_roots() {
    let episodes = vec![random_episode(7, 4, 3, 2)];
    let bundle = ModelBundle::exact(&GameConfig::shrunken());
    let store = build(&episodes, &bundle);
    let rule = QueryRule::parse("any", towcheck_core::dsl::RuleClass::StaticState, "outputState.waveIndex >= 0").unwrap();
    let all = evaluate(&rule, &store, &Scope::all()).unwrap();
    let predicted = evaluate(&rule, &store, &Scope::all().predicted_only()).unwrap();
    let cf = bundle_counterfactual(&bundle);
    assert_eq!(engine_view(&predicted, &store), oracle(&rule, &episodes, true, &cf));
    assert_eq!(all.total() - predicted.total(), episodes[0].decisions.len());
}

#[test]
fn division_by_zero_is_an_error_not_a_match() {
    let episodes = vec![random_episode(3, 2, 4, 2)];
    let bundle = ModelBundle::exact(&GameConfig::shrunken());
    let store = build(&episodes, &bundle);
    let rule = QueryRule::parse(
        "div",
        towcheck_core::dsl::RuleClass::StaticState,
        "outputState.friendlyCurrency / outputState.enemyMarineBldgsTop > 1",
    )
    .unwrap();
    let report = evaluate(&rule, &store, &Scope::all()).unwrap();
    let cf = bundle_counterfactual(&bundle);
    let expected = oracle(&rule, &episodes, false, &cf);
    assert!(expected.errors > 0);
    assert_eq!(report.evaluation_errors, expected.errors);
    assert_eq!(report.error_samples.len(), expected.errors.min(20));
    assert_eq!(engine_view(&report, &store), expected);
}
