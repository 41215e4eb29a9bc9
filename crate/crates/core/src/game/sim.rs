//! The wave simulator: action enumeration, legality, combat and game end.

use rand::Rng;

use super::config::GameConfig;
use super::state::{
    AbstractState, Lane, Outcome, Player, PurchaseAction, WinCondition, NUM_GRIDS, NUM_LANES,
    NUM_PLAYERS, NUM_UNIT_TYPES,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("illegal {player:?} purchase ({action}): costs {cost}, only {currency} available")]
    Unaffordable {
        player: Player,
        action: PurchaseAction,
        cost: i64,
        currency: i32,
    },
    #[error("illegal {player:?} purchase ({action}): negative building count")]
    NegativeCount {
        player: Player,
        action: PurchaseAction,
    },
    #[error("the game is already over")]
    GameOver,
}

pub fn initial_state(config: &GameConfig) -> AbstractState {
    let mut s = AbstractState::empty();
    s.health = [[config.max_health; NUM_LANES]; NUM_PLAYERS];
    s.currency = [config.starting_currency; NUM_PLAYERS];
    s
}

pub fn action_cost(action: &PurchaseAction, config: &GameConfig) -> i64 {
    let costs = config.unit_cost.to_array();
    action
        .purchases
        .iter()
        .zip(costs)
        .map(|(&n, c)| n as i64 * c as i64)
        .sum()
}

pub fn check_legal(
    state: &AbstractState,
    player: Player,
    action: &PurchaseAction,
    config: &GameConfig,
) -> Result<(), SimError> {
    if action.purchases.iter().any(|&n| n < 0) {
        return Err(SimError::NegativeCount {
            player,
            action: *action,
        });
    }
    let cost = action_cost(action, config);
    let currency = state.currency[player.index()];
    if cost > currency as i64 {
        return Err(SimError::Unaffordable {
            player,
            action: *action,
            cost,
            currency,
        });
    }
    Ok(())
}

/// Every affordable purchase, cheapest first, then lexicographic on
/// `(marine, baneling, immortal)`, top lane before bottom. The empty purchase
/// appears exactly once at the front. Truncated to `config.action_cap`.
pub fn legal_actions(state: &AbstractState, player: Player, config: &GameConfig) -> Vec<PurchaseAction> {
    if is_terminal(state, config) {
        return Vec::new();
    }
    let currency = state.currency[player.index()].max(0) as i64;
    let [cm, cb, ci] = config.unit_cost.to_array().map(|c| c as i64);
    let mut combos: Vec<(i64, [i32; NUM_UNIT_TYPES])> = Vec::new();
    for m in 0..=currency / cm {
        let left_m = currency - m * cm;
        for b in 0..=left_m / cb {
            let left_b = left_m - b * cb;
            for i in 0..=left_b / ci {
                if m + b + i == 0 {
                    continue;
                }
                combos.push((m * cm + b * cb + i * ci, [m as i32, b as i32, i as i32]));
            }
        }
    }
    combos.sort_unstable();
    let cap = config.action_cap.max(1);
    let mut out = Vec::with_capacity((combos.len() * 2 + 1).min(cap));
    out.push(PurchaseAction::empty());
    'outer: for (_, purchases) in combos {
        for lane in Lane::ALL {
            if out.len() >= cap {
                break 'outer;
            }
            out.push(PurchaseAction::new(lane, purchases));
        }
    }
    out
}

pub fn is_terminal(state: &AbstractState, config: &GameConfig) -> bool {
    state.health.iter().flatten().any(|&h| h <= 0) || state.wave_index >= config.max_waves
}

fn destroyed_lane(state: &AbstractState, player: Player) -> Option<Lane> {
    Lane::ALL
        .into_iter()
        .find(|&l| state.health_of(player, l) <= 0)
}

/// Decides the game on health: the owner of the single weakest base loses,
/// then lower total health loses, and a full tie goes to the enemy.
fn health_decision(state: &AbstractState) -> Player {
    let weakest = |p: Player| state.health[p.index()].iter().copied().min().unwrap_or(0);
    let (wf, we) = (weakest(Player::Friendly), weakest(Player::Enemy));
    let loser = if wf != we {
        if wf < we {
            Player::Friendly
        } else {
            Player::Enemy
        }
    } else {
        let (tf, te) = (
            state.total_health(Player::Friendly),
            state.total_health(Player::Enemy),
        );
        if tf <= te {
            Player::Friendly
        } else {
            Player::Enemy
        }
    };
    loser.opponent()
}

/// The outcome implied by a state, or `None` while the game continues.
///
/// When both players have lost a base the game is decided like a timeout
/// and carries a zero reward vector.
pub fn outcome_of(state: &AbstractState, config: &GameConfig) -> Option<Outcome> {
    let lost_f = destroyed_lane(state, Player::Friendly);
    let lost_e = destroyed_lane(state, Player::Enemy);
    match (lost_f, lost_e) {
        (Some(_), Some(_)) => Some(Outcome::new(
            health_decision(state),
            WinCondition::TimeoutLowestHealth,
        )),
        (None, Some(lane)) => Some(Outcome::new(
            Player::Friendly,
            WinCondition::destroys(Player::Friendly, lane),
        )),
        (Some(lane), None) => Some(Outcome::new(
            Player::Enemy,
            WinCondition::destroys(Player::Enemy, lane),
        )),
        (None, None) if state.wave_index >= config.max_waves => Some(Outcome::new(
            health_decision(state),
            WinCondition::TimeoutLowestHealth,
        )),
        (None, None) => None,
    }
}

type Counts = [[[i64; NUM_GRIDS]; NUM_UNIT_TYPES]; NUM_PLAYERS];

/// Where the units of one player standing in a cell direct their attacks.
#[derive(Clone, Copy)]
enum Target {
    Cell(usize),
    Base,
    Nothing,
}

fn occupied(counts: &Counts, player: usize, grid: usize) -> bool {
    (0..NUM_UNIT_TYPES).any(|u| counts[player][u][grid] > 0)
}

fn target_of(counts: &Counts, player: usize, grid: usize) -> Target {
    let opp = 1 - player;
    // Friendly units advance toward higher grid indices, enemy units toward lower.
    let ahead = if player == 0 {
        (grid + 1 < NUM_GRIDS).then_some(grid + 1)
    } else {
        grid.checked_sub(1)
    };
    let at_far_end = if player == 0 {
        grid == NUM_GRIDS - 1
    } else {
        grid == 0
    };
    if occupied(counts, opp, grid) {
        Target::Cell(grid)
    } else if let Some(next) = ahead.filter(|&g| occupied(counts, opp, g)) {
        Target::Cell(next)
    } else if at_far_end {
        Target::Base
    } else {
        Target::Nothing
    }
}

struct Jitter<'a, R: Rng> {
    fraction: f64,
    rng: &'a mut R,
}

impl<R: Rng> Jitter<'_, R> {
    fn apply(&mut self, amount: i64) -> i64 {
        if self.fraction == 0.0 || amount == 0 {
            return amount;
        }
        let factor = self
            .rng
            .random_range((1.0 - self.fraction)..=(1.0 + self.fraction));
        (amount as f64 * factor).round() as i64
    }
}

/// Plays one wave: purchases, spawning, `ticks_per_wave` combat ticks, income.
///
/// In deterministic mode the result depends only on the inputs and commutes
/// exactly with both symmetry transforms.
pub fn simulate_wave<R: Rng>(
    state: &AbstractState,
    friendly: &PurchaseAction,
    enemy: &PurchaseAction,
    config: &GameConfig,
    rng: &mut R,
) -> Result<(AbstractState, Option<Outcome>), SimError> {
    if is_terminal(state, config) {
        return Err(SimError::GameOver);
    }
    check_legal(state, Player::Friendly, friendly, config)?;
    check_legal(state, Player::Enemy, enemy, config)?;

    let mut next = state.clone();
    for (player, action) in [(Player::Friendly, friendly), (Player::Enemy, enemy)] {
        let p = player.index();
        next.currency[p] -= action_cost(action, config) as i32;
        for u in 0..NUM_UNIT_TYPES {
            next.buildings[p][action.lane.index()][u] += action.purchases[u];
        }
    }

    let mut counts: [Counts; NUM_LANES] = [[[[0; NUM_GRIDS]; NUM_UNIT_TYPES]; NUM_PLAYERS]; NUM_LANES];
    for (l, lane_counts) in counts.iter_mut().enumerate() {
        for p in 0..NUM_PLAYERS {
            for u in 0..NUM_UNIT_TYPES {
                for g in 0..NUM_GRIDS {
                    lane_counts[p][u][g] = next.units[p][l][u][g] as i64;
                }
                let spawn = if p == 0 { 0 } else { NUM_GRIDS - 1 };
                lane_counts[p][u][spawn] += next.buildings[p][l][u].max(0) as i64;
            }
        }
    }

    let mut health: [[i64; NUM_LANES]; NUM_PLAYERS] =
        next.health.map(|lanes| lanes.map(|h| h as i64));
    let hp = config.unit_hp.to_array().map(|v| v as i64);
    let base_damage = config.base_damage.to_array().map(|v| v as i64);
    let tpc = config.ticks_per_cell.to_array();
    let damage: [[i64; NUM_UNIT_TYPES]; NUM_UNIT_TYPES] =
        config.damage.to_array().map(|row| row.to_array().map(|v| v as i64));
    let mut jitter = Jitter {
        fraction: config.effective_jitter(),
        rng,
    };
    // Damage dealt but not yet converted into kills, per lane/player/unit/cell.
    let mut pools: [Counts; NUM_LANES] = [[[[0; NUM_GRIDS]; NUM_UNIT_TYPES]; NUM_PLAYERS]; NUM_LANES];

    for tick in 1..=config.ticks_per_wave {
        let mut base_hits = [[0i64; NUM_LANES]; NUM_PLAYERS];
        for l in 0..NUM_LANES {
            let c = &counts[l];
            let mut incoming = [[[0i64; NUM_GRIDS]; NUM_UNIT_TYPES]; NUM_PLAYERS];
            for p in 0..NUM_PLAYERS {
                let opp = 1 - p;
                for g in 0..NUM_GRIDS {
                    if !occupied(c, p, g) {
                        continue;
                    }
                    match target_of(c, p, g) {
                        Target::Cell(tc) => {
                            let defenders: i64 = (0..NUM_UNIT_TYPES).map(|t| c[opp][t][tc]).sum();
                            for a in 0..NUM_UNIT_TYPES {
                                let n = c[p][a][g];
                                if n == 0 {
                                    continue;
                                }
                                for t in 0..NUM_UNIT_TYPES {
                                    let d = c[opp][t][tc];
                                    if d == 0 {
                                        continue;
                                    }
                                    let amount = n * damage[a][t] * d / defenders;
                                    incoming[opp][t][tc] += jitter.apply(amount);
                                }
                            }
                        }
                        Target::Base => {
                            for a in 0..NUM_UNIT_TYPES {
                                let n = c[p][a][g];
                                if n > 0 {
                                    base_hits[opp][l] += jitter.apply(n * base_damage[a]);
                                }
                            }
                        }
                        Target::Nothing => {}
                    }
                }
            }
            let c = &mut counts[l];
            let pool = &mut pools[l];
            for p in 0..NUM_PLAYERS {
                for t in 0..NUM_UNIT_TYPES {
                    for g in 0..NUM_GRIDS {
                        if incoming[p][t][g] == 0 {
                            continue;
                        }
                        pool[p][t][g] += incoming[p][t][g];
                        let kills = (pool[p][t][g] / hp[t]).min(c[p][t][g]);
                        c[p][t][g] -= kills;
                        pool[p][t][g] -= kills * hp[t];
                        if c[p][t][g] == 0 {
                            pool[p][t][g] = 0;
                        }
                    }
                }
            }
        }
        let mut destroyed = false;
        for p in 0..NUM_PLAYERS {
            for l in 0..NUM_LANES {
                health[p][l] = (health[p][l] - base_hits[p][l]).max(0);
                destroyed |= health[p][l] == 0;
            }
        }
        if destroyed {
            break;
        }
        for l in 0..NUM_LANES {
            advance(&mut counts[l], &mut pools[l], tick, &tpc);
        }
    }

    for l in 0..NUM_LANES {
        for p in 0..NUM_PLAYERS {
            for u in 0..NUM_UNIT_TYPES {
                for g in 0..NUM_GRIDS {
                    next.units[p][l][u][g] = counts[l][p][u][g] as i32;
                }
            }
            next.health[p][l] = health[p][l] as i32;
        }
    }
    for p in 0..NUM_PLAYERS {
        next.currency[p] += config.income_per_wave;
    }
    next.wave_index += 1;
    let outcome = outcome_of(&next, config);
    Ok((next, outcome))
}

/// Moves unengaged groups one cell toward the opposing base. Decisions use
/// the occupancy before any group moves.
fn advance(counts: &mut Counts, pools: &mut Counts, tick: i32, ticks_per_cell: &[i32; NUM_UNIT_TYPES]) {
    let before = *counts;
    for p in 0..NUM_PLAYERS {
        let opp = 1 - p;
        let cells: Vec<usize> = if p == 0 {
            (0..NUM_GRIDS - 1).rev().collect()
        } else {
            (1..NUM_GRIDS).collect()
        };
        for g in cells {
            let dest = if p == 0 { g + 1 } else { g - 1 };
            if occupied(&before, opp, g) || occupied(&before, opp, dest) {
                continue;
            }
            for u in 0..NUM_UNIT_TYPES {
                if tick % ticks_per_cell[u] != 0 || before[p][u][g] == 0 {
                    continue;
                }
                let n = before[p][u][g];
                counts[p][u][g] -= n;
                counts[p][u][dest] += n;
                pools[p][u][dest] += pools[p][u][g];
                pools[p][u][g] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::state::UnitType;
    use crate::game::symmetry::{flip_lanes, reverse_players};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det() -> GameConfig {
        GameConfig::default().deterministic()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn initial_state_matches_rules() {
        let cfg = GameConfig::default();
        let s = initial_state(&cfg);
        assert!(s.health.iter().flatten().all(|&h| h == 2000));
        assert_eq!(s.currency[0], s.currency[1]);
        assert_eq!(s.wave_index, 0);
        assert_eq!(flip_lanes(&s), s);
        assert_eq!(reverse_players(&s), s);
        assert_eq!(
            legal_actions(&s, Player::Friendly, &cfg),
            legal_actions(&s, Player::Enemy, &cfg)
        );
    }

    #[test]
    fn zero_currency_only_allows_buying_nothing() {
        let cfg = GameConfig::default();
        let mut s = initial_state(&cfg);
        s.currency = [0, 0];
        assert_eq!(legal_actions(&s, Player::Friendly, &cfg), vec![PurchaseAction::empty()]);
    }

    #[test]
    fn one_marine_of_currency_gives_three_actions() {
        let cfg = GameConfig::default();
        let mut s = initial_state(&cfg);
        s.currency = [50, 50];
        let acts = legal_actions(&s, Player::Friendly, &cfg);
        assert_eq!(
            acts,
            vec![
                PurchaseAction::empty(),
                PurchaseAction::new(Lane::Top, [1, 0, 0]),
                PurchaseAction::new(Lane::Bottom, [1, 0, 0]),
            ]
        );
    }

    #[test]
    fn two_marines_of_currency_includes_double_purchases() {
        let cfg = GameConfig::default();
        let mut s = initial_state(&cfg);
        s.currency = [100, 100];
        let acts = legal_actions(&s, Player::Friendly, &cfg);
        // Hand enumeration: {}, 1m, 1b, 2m in each lane.
        assert_eq!(acts.len(), 7);
        assert!(acts.contains(&PurchaseAction::new(Lane::Top, [2, 0, 0])));
        assert!(acts.contains(&PurchaseAction::new(Lane::Bottom, [2, 0, 0])));
        assert!(acts.contains(&PurchaseAction::new(Lane::Bottom, [0, 1, 0])));
        assert_eq!(acts.iter().filter(|a| a.is_empty()).count(), 1);
        let costs: Vec<i64> = acts.iter().map(|a| action_cost(a, &cfg)).collect();
        assert!(costs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn action_cap_truncates_cheapest_first() {
        let cfg = GameConfig {
            action_cap: 5,
            ..GameConfig::default()
        };
        let mut s = initial_state(&cfg);
        s.currency = [5000, 5000];
        let acts = legal_actions(&s, Player::Friendly, &cfg);
        assert_eq!(acts.len(), 5);
        assert!(acts[0].is_empty());
        assert_eq!(acts[1], PurchaseAction::new(Lane::Top, [1, 0, 0]));
    }

    #[test]
    fn terminal_state_has_no_actions() {
        let cfg = GameConfig::default();
        let mut s = initial_state(&cfg);
        s.health[1][0] = 0;
        assert!(legal_actions(&s, Player::Friendly, &cfg).is_empty());
        let empty = PurchaseAction::empty();
        assert_eq!(
            simulate_wave(&s, &empty, &empty, &cfg, &mut rng()),
            Err(SimError::GameOver)
        );
    }

    #[test]
    fn empty_board_only_changes_currency_and_wave() {
        let cfg = GameConfig::default();
        let s = initial_state(&cfg);
        let empty = PurchaseAction::empty();
        let (next, outcome) = simulate_wave(&s, &empty, &empty, &cfg, &mut rng()).unwrap();
        assert!(outcome.is_none());
        let mut expected = s.clone();
        expected.currency = [200, 200];
        expected.wave_index = 1;
        assert_eq!(next, expected);
    }

    #[test]
    fn illegal_purchase_is_named() {
        let cfg = GameConfig::default();
        let s = initial_state(&cfg);
        let greedy = PurchaseAction::new(Lane::Top, [0, 0, 1]);
        let err = simulate_wave(&s, &greedy, &PurchaseAction::empty(), &cfg, &mut rng()).unwrap_err();
        assert!(matches!(err, SimError::Unaffordable { player: Player::Friendly, cost: 200, .. }));
        assert!(err.to_string().contains("1 immortal"));
    }

    #[test]
    fn unopposed_marines_damage_enemy_top_base() {
        // Spawn at grid 1, move at ticks 5/10/15, then hit the base for the
        // remaining 15 ticks at 1 damage each.
        let cfg = det();
        let mut s = initial_state(&cfg);
        s.buildings[0][0][0] = 1;
        let empty = PurchaseAction::empty();
        let (next, _) = simulate_wave(&s, &empty, &empty, &cfg, &mut rng()).unwrap();
        assert_eq!(next.units_at(Player::Friendly, Lane::Top, UnitType::Marine, 4), 1);
        assert_eq!(next.health_of(Player::Enemy, Lane::Top), 2000 - 15);
        let (next2, _) = simulate_wave(&next, &empty, &empty, &cfg, &mut rng()).unwrap();
        // Second wave: the veteran marine hits for all 30 ticks, the recruit for 15.
        assert_eq!(next2.health_of(Player::Enemy, Lane::Top), 2000 - 15 - 30 - 15);
        assert_eq!(next2.health_of(Player::Enemy, Lane::Bottom), 2000);
    }

    #[test]
    fn banelings_beat_marines() {
        let cfg = det();
        let mut s = initial_state(&cfg);
        s.units[0][0][UnitType::Marine.index()][1] = 4;
        s.units[1][0][UnitType::Baneling.index()][2] = 4;
        let empty = PurchaseAction::empty();
        let (next, _) = simulate_wave(&s, &empty, &empty, &cfg, &mut rng()).unwrap();
        let marines: i32 = (1..=4).map(|g| next.units_at(Player::Friendly, Lane::Top, UnitType::Marine, g)).sum();
        let banes: i32 = (1..=4).map(|g| next.units_at(Player::Enemy, Lane::Top, UnitType::Baneling, g)).sum();
        assert_eq!(marines, 0);
        assert!(banes > 0);
    }

    #[test]
    fn base_destruction_ends_the_game() {
        let cfg = det();
        let mut s = initial_state(&cfg);
        s.health[1][1] = 3;
        s.units[0][1][0][3] = 1;
        let empty = PurchaseAction::empty();
        let (next, outcome) = simulate_wave(&s, &empty, &empty, &cfg, &mut rng()).unwrap();
        assert_eq!(next.health_of(Player::Enemy, Lane::Bottom), 0);
        let outcome = outcome.unwrap();
        assert_eq!(outcome.winner, Player::Friendly);
        assert_eq!(outcome.condition, WinCondition::FriendlyDestroysEnemyBottom);
        assert_eq!(outcome.reward_vector, [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn timeout_decided_by_weakest_base() {
        let cfg = det();
        let mut s = initial_state(&cfg);
        s.wave_index = cfg.max_waves - 1;
        s.health[0][1] = 500;
        s.health[1][0] = 600;
        let empty = PurchaseAction::empty();
        let (_, outcome) = simulate_wave(&s, &empty, &empty, &cfg, &mut rng()).unwrap();
        let outcome = outcome.unwrap();
        assert_eq!(outcome.winner, Player::Enemy);
        assert_eq!(outcome.condition, WinCondition::TimeoutLowestHealth);
        assert_eq!(outcome.reward_vector, [0.0; 4]);

        s.health = [[1000, 1000], [1000, 1000]];
        s.wave_index = cfg.max_waves;
        assert_eq!(outcome_of(&s, &cfg).unwrap().winner, Player::Enemy);
    }

    #[test]
    fn jitter_is_seeded() {
        let cfg = GameConfig::default();
        let mut s = initial_state(&cfg);
        s.units[0][0][0][1] = 6;
        s.units[1][0][2][2] = 2;
        let empty = PurchaseAction::empty();
        let run = |seed| {
            simulate_wave(&s, &empty, &empty, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
                .0
        };
        assert_eq!(run(3), run(3));
    }
}
