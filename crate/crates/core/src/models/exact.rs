//! Simulator-backed models: exact transitions and a hand-written
//! win-condition estimate used as the exact backend's value function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::game::{
    legal_actions, outcome_of, simulate_wave, AbstractState, GameConfig, Lane, Player,
    PurchaseAction, SimError, UnitType,
};

/// How the exact backend scores an action for the ranker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookahead {
    /// Simulate one wave against an opponent that buys nothing, then
    /// evaluate the resulting state.
    Passive,
    /// Exhaustive minimax over both players' legal actions for `depth` waves.
    Minimax { depth: u32 },
}

/// Deterministic one-wave prediction. `config` must be in deterministic mode.
pub fn exact_transition(
    s: &AbstractState,
    friendly: &PurchaseAction,
    enemy: &PurchaseAction,
    config: &GameConfig,
) -> Result<(AbstractState, [f64; 4]), SimError> {
    debug_assert!(config.deterministic_mode);
    // No jitter in deterministic mode, so the generator is never consulted.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (next, outcome) = simulate_wave(s, friendly, enemy, config, &mut rng)?;
    Ok((next, outcome.map_or([0.0; 4], |o| o.reward_vector)))
}

const PRESSURE_WEIGHT: f64 = 4.0;
const ARMY_WEIGHT: f64 = 2.5;
const TEMPERATURE: f64 = 1.5;
/// Softens the army ratio when both sides are nearly empty.
const ARMY_DAMPING: f64 = 20_000.0;

fn lane_power(s: &AbstractState, config: &GameConfig, player: Player, lane: Lane) -> f64 {
    let count = |p: Player, u: UnitType| -> f64 {
        let on_field: i32 = (1..=4).map(|g| s.units_at(p, lane, u, g).max(0)).sum();
        (on_field + s.buildings_of(p, lane, u).max(0)) as f64
    };
    let foe = player.opponent();
    let foe_counts = UnitType::ALL.map(|u| count(foe, u));
    let foe_total: f64 = foe_counts.iter().sum();
    let mut dps = 0.0;
    let mut hp = 0.0;
    for a in UnitType::ALL {
        let n = count(player, a);
        if n == 0.0 {
            continue;
        }
        let row = config.damage.get(a);
        let per_unit = if foe_total > 0.0 {
            UnitType::ALL
                .iter()
                .zip(foe_counts)
                .map(|(&t, c)| row.get(t) as f64 * c)
                .sum::<f64>()
                / foe_total
        } else {
            UnitType::ALL.iter().map(|&t| row.get(t) as f64).sum::<f64>() / 3.0
        };
        dps += n * per_unit;
        hp += n * config.unit_hp.get(a) as f64;
    }
    dps * hp
}

/// Order-independent sum so that permuted inputs give bitwise-equal totals.
fn canonical_sum(values: &[f64; 4]) -> f64 {
    let mut sorted = *values;
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

/// Win-condition estimate for a state, friendly perspective.
///
/// Terminal states get their reward vector. Otherwise each
/// `(player, lane)` gets a threat score from the damage already dealt to the
/// opposing base there and the square-law strength ratio of the two lane
/// armies (counting buildings as pending units); a softmax over the four
/// threats gives the vector. The computation is exactly equivariant under
/// both symmetry transforms.
pub fn heuristic_vector(s: &AbstractState, config: &GameConfig) -> [f64; 4] {
    if let Some(outcome) = outcome_of(s, config) {
        return outcome.reward_vector;
    }
    let mut threat = [0.0; 4];
    for p in Player::ALL {
        for l in Lane::ALL {
            let mine = lane_power(s, config, p, l);
            let theirs = lane_power(s, config, p.opponent(), l);
            let army = (mine - theirs) / (mine + theirs + ARMY_DAMPING);
            let foe_health = s.health_of(p.opponent(), l).clamp(0, config.max_health) as f64;
            let pressure = 1.0 - foe_health / config.max_health as f64;
            threat[p.index() * 2 + l.index()] = PRESSURE_WEIGHT * pressure + ARMY_WEIGHT * army;
        }
    }
    let exp = threat.map(|t| (TEMPERATURE * t).exp());
    let total = canonical_sum(&exp);
    exp.map(|e| e / total)
}

fn friendly_scalar(v: &[f64; 4]) -> f64 {
    v[0] + v[1]
}

/// Friendly-perspective action value under the given lookahead.
pub fn exact_q(
    s: &AbstractState,
    action: &PurchaseAction,
    config: &GameConfig,
    lookahead: Lookahead,
) -> Result<[f64; 4], SimError> {
    match lookahead {
        Lookahead::Passive => {
            let (next, _) = exact_transition(s, action, &PurchaseAction::empty(), config)?;
            Ok(heuristic_vector(&next, config))
        }
        Lookahead::Minimax { depth } => minimax_q(s, action, config, depth.max(1)),
    }
}

fn minimax_q(
    s: &AbstractState,
    action: &PurchaseAction,
    config: &GameConfig,
    depth: u32,
) -> Result<[f64; 4], SimError> {
    let mut worst: Option<[f64; 4]> = None;
    for reply in legal_actions(s, Player::Enemy, config) {
        let (next, _) = exact_transition(s, action, &reply, config)?;
        let v = minimax_value(&next, config, depth - 1)?;
        if worst.is_none_or(|w| friendly_scalar(&v) < friendly_scalar(&w)) {
            worst = Some(v);
        }
    }
    Ok(worst.unwrap_or_else(|| heuristic_vector(s, config)))
}

/// Minimax value of a state with `depth` waves of exhaustive lookahead.
pub fn minimax_value(s: &AbstractState, config: &GameConfig, depth: u32) -> Result<[f64; 4], SimError> {
    if depth == 0 || outcome_of(s, config).is_some() {
        return Ok(heuristic_vector(s, config));
    }
    let mut best: Option<[f64; 4]> = None;
    for a in legal_actions(s, Player::Friendly, config) {
        let v = minimax_q(s, &a, config, depth)?;
        if best.is_none_or(|b| friendly_scalar(&v) > friendly_scalar(&b)) {
            best = Some(v);
        }
    }
    Ok(best.unwrap_or_else(|| heuristic_vector(s, config)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{flip_lanes, initial_state, reverse_players, Transform};

    fn cfg() -> GameConfig {
        GameConfig::default().deterministic()
    }

    #[test]
    fn symmetric_start_is_even() {
        let c = cfg();
        let v = heuristic_vector(&initial_state(&c), &c);
        for x in v {
            assert_eq!(x, 0.25);
        }
    }

    #[test]
    fn terminal_states_get_reward_vector() {
        let c = cfg();
        let mut s = initial_state(&c);
        s.health[0][0] = 0;
        assert_eq!(heuristic_vector(&s, &c), [0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn heuristic_is_exactly_equivariant() {
        let c = cfg();
        let mut s = initial_state(&c);
        s.health = [[1500, 900], [1800, 2000]];
        s.units[0][0][0][2] = 7;
        s.units[1][1][2][1] = 2;
        s.buildings[1][0][1] = 3;
        let v = heuristic_vector(&s, &c);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(heuristic_vector(&flip_lanes(&s), &c), Transform::Flip.win_vector(&v));
        assert_eq!(heuristic_vector(&reverse_players(&s), &c), Transform::Reverse.win_vector(&v));
    }

    #[test]
    fn damage_and_army_raise_threat() {
        let c = cfg();
        let base = initial_state(&c);
        let mut hurt = base.clone();
        hurt.health[1][0] = 500;
        assert!(heuristic_vector(&hurt, &c)[0] > heuristic_vector(&base, &c)[0]);
        let mut army = base.clone();
        army.buildings[0][1][0] = 4;
        let v = heuristic_vector(&army, &c);
        assert!(v[1] > v[0] && v[1] > v[3]);
    }
}
