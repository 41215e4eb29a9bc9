//! Built-in rules: the worked examples and the sound suite that an exact
//! model must never violate.

use super::ast::{QueryRule, Severity};
use super::catalog::RuleClass;
use crate::game::attributes::{state_attribute_names, state_from_values, state_to_values, NUM_STATE_ATTRIBUTES};
use crate::game::{Lane, Player, Transform, UnitType};
use crate::store::WIN_PROBABILITY_COLUMNS;

/// `(name, class, text)` of the six worked examples, written as published
/// (including line breaks and the stray space after a dot).
pub const TABLE1: [(&str, RuleClass, &str); 6] = [
    (
        "immortals-without-buildings",
        RuleClass::StaticState,
        "outputState.friendlyImmortalBldgsTop = 0 AND (\noutputState.friendlyImmortalTopGrid1 + outputState.friendlyImmortalTopGrid2 + ... + outputState.friendlyImmortalTopGrid4) > 0",
    ),
    (
        "win-after-losing-top",
        RuleClass::StaticState,
        "outputState.friendlyHealthTop = 0 AND\n(winProb.probabilityOfWinInTopLane +\nwinProb.probabilityOfWinInBottomLane) != 0",
    ),
    (
        "enemy-top-heals",
        RuleClass::Transition,
        "outputState.enemyHealthTop - inputState.enemyHealthTop > 5.0",
    ),
    (
        "bottom-damage-without-buildings",
        RuleClass::Transition,
        "(outputState.friendlyMarineBldgsBottom +  outputState.friendlyBanelingBldgsBottom\n+ outputState.friendlyImmortalBldgsBottom = 0) AND\noutputState.enemyHealthBottom <  inputState.enemyHealthBottom",
    ),
    (
        "reverse-mirrors-marines",
        RuleClass::SymmetryReverse,
        "outputState.friendlyMarineTopGrid1 > 0 AND outputState.friendlyMarineTopGrid1\n!= outputStateForReversedInputs.enemyMarineTopGrid4",
    ),
    (
        "flip-mirrors-marines",
        RuleClass::SymmetryFlip,
        "outputState.friendlyMarineTopGrid2 != \noutputStateForFlippedInputs. friendlyMarineBottomGrid2",
    ),
];

/// The rule from the interface walkthrough.
pub const WALKTHROUGH_RULE: &str = "inputState.friendlyHealthTop < outputState.friendlyHealthTop";

pub const WIN_FLIP_TOLERANCE_RULE: &str =
    "outputState.probabilityOfWinInTopLane - outputStateForFlippedInputs.probabilityOfWinInBottomLane > 0.1";

pub fn table1() -> Vec<QueryRule> {
    TABLE1
        .iter()
        .map(|(name, class, text)| QueryRule::parse(name, *class, text).expect("built-in rule parses"))
        .collect()
}

/// Name of the attribute that `transform` moves attribute `index` to.
pub fn transformed_attribute(transform: Transform, index: usize) -> usize {
    let mut values = [0; NUM_STATE_ATTRIBUTES];
    values[index] = 1;
    let moved = state_to_values(&transform.state(&state_from_values(&values)));
    moved.iter().position(|&v| v == 1).expect("transforms permute attributes")
}

fn or_all(terms: impl IntoIterator<Item = String>) -> String {
    terms.into_iter().collect::<Vec<_>>().join(" OR ")
}

fn symmetry_rule(transform: Transform) -> QueryRule {
    let names = state_attribute_names();
    let (class, ns) = match transform {
        Transform::Flip => (RuleClass::SymmetryFlip, "outputStateForFlippedInputs"),
        Transform::Reverse => (RuleClass::SymmetryReverse, "outputStateForReversedInputs"),
    };
    let states = (0..NUM_STATE_ATTRIBUTES).map(|i| {
        let j = transformed_attribute(transform, i);
        format!("outputState.{} != {ns}.{}", names[i], names[j])
    });
    let mut unit = [0.0; 4];
    let wins = (0..4).map(|i| {
        unit = [0.0; 4];
        unit[i] = 1.0;
        let j = transform.win_vector(&unit).iter().position(|&v| v == 1.0).expect("permutation");
        format!(
            "outputState.{} != {ns}.{}",
            WIN_PROBABILITY_COLUMNS[i], WIN_PROBABILITY_COLUMNS[j]
        )
    });
    let text = or_all(states.chain(wins.collect::<Vec<_>>()));
    QueryRule::parse(&format!("exact-{}-symmetry", transform.name()), class, &text)
        .expect("generated rule parses")
        .with_description(&format!(
            "Every output attribute and win probability must equal its image under the {} of the inputs.",
            transform.name()
        ))
}

/// Rules entailed by the game rules. `max_health` is the configured base
/// health cap.
pub fn sound_suite(max_health: i32) -> Vec<QueryRule> {
    let mut rules = table1();
    rules.push(QueryRule::parse("walkthrough-friendly-top-heals", RuleClass::Transition, WALKTHROUGH_RULE).expect("parses"));

    let health: Vec<String> = Player::ALL
        .iter()
        .flat_map(|p| Lane::ALL.map(|l| format!("{}Health{}", p.name(), l.title())))
        .collect();
    let monotone = or_all(health.iter().map(|h| format!("outputState.{h} > inputState.{h}")));
    rules.push(
        QueryRule::parse("health-never-increases", RuleClass::Transition, &monotone)
            .expect("parses")
            .with_description("Base health can never increase."),
    );

    let mut range: Vec<String> = health
        .iter()
        .map(|h| format!("outputState.{h} < 0 OR outputState.{h} > {max_health}"))
        .collect();
    range.extend(
        WIN_PROBABILITY_COLUMNS
            .iter()
            .map(|w| format!("winProb.{w} < 0 OR winProb.{w} > 1")),
    );
    range.push("winProb.probabilityOfWinInTopLane + winProb.probabilityOfWinInBottomLane > 1".into());
    range.push("winProb.probabilityOfEnemyWinInTopLane + winProb.probabilityOfEnemyWinInBottomLane > 1".into());
    rules.push(
        QueryRule::parse("values-in-range", RuleClass::StaticState, &or_all(range))
            .expect("parses")
            .with_description("Health within the base cap; probabilities and per-player win sums within [0, 1]."),
    );

    let mut causal = Vec::new();
    for p in Player::ALL {
        for l in Lane::ALL {
            for u in UnitType::ALL {
                let stem = format!("outputState.{}{}{}Grid", p.name(), u.title(), l.title());
                causal.push(format!(
                    "(outputState.{}{}Bldgs{} = 0 AND {stem}1 + ... + {stem}4 > 0)",
                    p.name(),
                    u.title(),
                    l.title()
                ));
            }
        }
    }
    rules.push(
        QueryRule::parse("units-need-buildings", RuleClass::StaticState, &or_all(causal))
            .expect("parses")
            .with_description("Troops only appear in a lane where their owner has the matching building."),
    );

    let lost = Player::ALL
        .iter()
        .flat_map(|p| {
            let prefix = match p {
                Player::Friendly => "",
                Player::Enemy => "Enemy",
            };
            Lane::ALL.map(move |l| {
                format!(
                    "(outputState.{}Health{} = 0 AND winProb.probabilityOf{prefix}WinInTopLane + winProb.probabilityOf{prefix}WinInBottomLane != 0)",
                    p.name(),
                    l.title()
                )
            })
        })
        .collect::<Vec<_>>();
    rules.push(
        QueryRule::parse("loser-cannot-win", RuleClass::StaticState, &or_all(lost))
            .expect("parses")
            .with_description("A player who has lost a base has no chance of winning."),
    );

    rules.push(symmetry_rule(Transform::Flip));
    rules.push(symmetry_rule(Transform::Reverse));
    rules.push(
        QueryRule::parse("win-probability-flip", RuleClass::SymmetryFlip, WIN_FLIP_TOLERANCE_RULE)
            .expect("parses")
            .with_description("Flipping lanes swaps the lane win probabilities."),
    );
    for r in &mut rules {
        r.severity = Severity::Sound;
    }
    rules
}
