//! Abstract game state, purchase actions and outcomes.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_PLAYERS: usize = 2;
pub const NUM_LANES: usize = 2;
pub const NUM_UNIT_TYPES: usize = 3;
pub const NUM_GRIDS: usize = 4;

/// Default number of waves after which the game is decided on health.
pub const MAX_WAVES: i32 = 40;
/// Default base hit points per lane.
pub const MAX_HEALTH: i32 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Player {
    Friendly,
    Enemy,
}

impl Player {
    pub const ALL: [Player; NUM_PLAYERS] = [Player::Friendly, Player::Enemy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::Friendly => Player::Enemy,
            Player::Enemy => Player::Friendly,
        }
    }

    /// Prefix used in attribute names (`friendly`, `enemy`).
    pub fn name(self) -> &'static str {
        match self {
            Player::Friendly => "friendly",
            Player::Enemy => "enemy",
        }
    }

    /// Capitalized suffix used in action attribute names (`Friendly`, `Enemy`).
    pub fn title(self) -> &'static str {
        match self {
            Player::Friendly => "Friendly",
            Player::Enemy => "Enemy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Lane {
    Top,
    Bottom,
}

impl Lane {
    pub const ALL: [Lane; NUM_LANES] = [Lane::Top, Lane::Bottom];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Lane {
        match self {
            Lane::Top => Lane::Bottom,
            Lane::Bottom => Lane::Top,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Lane::Top => "Top",
            Lane::Bottom => "Bottom",
        }
    }

    pub fn from_index(idx: usize) -> Option<Lane> {
        match idx {
            0 => Some(Lane::Top),
            1 => Some(Lane::Bottom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum UnitType {
    Marine,
    Baneling,
    Immortal,
}

impl UnitType {
    pub const ALL: [UnitType; NUM_UNIT_TYPES] =
        [UnitType::Marine, UnitType::Baneling, UnitType::Immortal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn title(self) -> &'static str {
        match self {
            UnitType::Marine => "Marine",
            UnitType::Baneling => "Baneling",
            UnitType::Immortal => "Immortal",
        }
    }

    pub fn parse(name: &str) -> Option<UnitType> {
        match name.to_ascii_lowercase().as_str() {
            "marine" => Some(UnitType::Marine),
            "baneling" => Some(UnitType::Baneling),
            "immortal" => Some(UnitType::Immortal),
            _ => None,
        }
    }
}

/// Full interpretable snapshot of a Tug-of-War game between waves.
///
/// Grid index 0 is the cell nearest the friendly base and index 3 the cell
/// nearest the enemy base, in both lanes. Values are stored as `i32` so that
/// model predictions outside the legal ranges stay representable; use
/// [`AbstractState::validate`] to check the game invariants.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AbstractState {
    /// `health[player][lane]`
    pub health: [[i32; NUM_LANES]; NUM_PLAYERS],
    /// `buildings[player][lane][unit]`
    pub buildings: [[[i32; NUM_UNIT_TYPES]; NUM_LANES]; NUM_PLAYERS],
    /// `units[player][lane][unit][grid]`
    pub units: [[[[i32; NUM_GRIDS]; NUM_UNIT_TYPES]; NUM_LANES]; NUM_PLAYERS],
    pub currency: [i32; NUM_PLAYERS],
    pub wave_index: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("{attribute} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        attribute: String,
        value: i32,
        min: i32,
        max: i32,
    },
}

impl AbstractState {
    pub fn empty() -> Self {
        AbstractState {
            health: [[0; NUM_LANES]; NUM_PLAYERS],
            buildings: [[[0; NUM_UNIT_TYPES]; NUM_LANES]; NUM_PLAYERS],
            units: [[[[0; NUM_GRIDS]; NUM_UNIT_TYPES]; NUM_LANES]; NUM_PLAYERS],
            currency: [0; NUM_PLAYERS],
            wave_index: 0,
        }
    }

    pub fn health_of(&self, player: Player, lane: Lane) -> i32 {
        self.health[player.index()][lane.index()]
    }

    pub fn buildings_of(&self, player: Player, lane: Lane, unit: UnitType) -> i32 {
        self.buildings[player.index()][lane.index()][unit.index()]
    }

    /// `grid` is 1-based (1..=4) to match attribute naming.
    pub fn units_at(&self, player: Player, lane: Lane, unit: UnitType, grid: usize) -> i32 {
        self.units[player.index()][lane.index()][unit.index()][grid - 1]
    }

    pub fn set_units(&mut self, player: Player, lane: Lane, unit: UnitType, grid: usize, n: i32) {
        self.units[player.index()][lane.index()][unit.index()][grid - 1] = n;
    }

    pub fn total_health(&self, player: Player) -> i32 {
        self.health[player.index()].iter().sum()
    }

    /// Checks every attribute against the legal game ranges.
    pub fn validate(&self, max_health: i32, max_waves: i32) -> Result<(), StateError> {
        let check = |attribute: &dyn Fn() -> String, value: i32, min: i32, max: i32| {
            if value < min || value > max {
                Err(StateError::OutOfRange {
                    attribute: attribute(),
                    value,
                    min,
                    max,
                })
            } else {
                Ok(())
            }
        };
        for p in Player::ALL {
            for l in Lane::ALL {
                check(
                    &|| format!("{}Health{}", p.name(), l.title()),
                    self.health_of(p, l),
                    0,
                    max_health,
                )?;
                for u in UnitType::ALL {
                    check(
                        &|| format!("{}{}Bldgs{}", p.name(), u.title(), l.title()),
                        self.buildings_of(p, l, u),
                        0,
                        i32::MAX,
                    )?;
                    for g in 1..=NUM_GRIDS {
                        check(
                            &|| format!("{}{}{}Grid{}", p.name(), u.title(), l.title(), g),
                            self.units_at(p, l, u, g),
                            0,
                            i32::MAX,
                        )?;
                    }
                }
            }
            check(
                &|| format!("{}Currency", p.name()),
                self.currency[p.index()],
                0,
                i32::MAX,
            )?;
        }
        check(&|| "waveIndex".to_string(), self.wave_index, 0, max_waves)
    }
}

/// One player's spending decision for the coming wave.
///
/// An action that buys nothing is canonically stored in the top lane so that
/// the empty purchase has a single representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PurchaseAction {
    pub lane: Lane,
    pub purchases: [i32; NUM_UNIT_TYPES],
}

impl PurchaseAction {
    pub fn new(lane: Lane, purchases: [i32; NUM_UNIT_TYPES]) -> Self {
        let lane = if purchases.iter().all(|&n| n == 0) {
            Lane::Top
        } else {
            lane
        };
        PurchaseAction { lane, purchases }
    }

    pub fn empty() -> Self {
        PurchaseAction {
            lane: Lane::Top,
            purchases: [0; NUM_UNIT_TYPES],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.purchases.iter().all(|&n| n == 0)
    }

    pub fn count(&self, unit: UnitType) -> i32 {
        self.purchases[unit.index()]
    }
}

impl fmt::Display for PurchaseAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "nothing");
        }
        let lane = match self.lane {
            Lane::Top => "top",
            Lane::Bottom => "bottom",
        };
        let [m, b, i] = self.purchases;
        write!(f, "{lane}: {m} marine, {b} baneling, {i} immortal")
    }
}

/// The simultaneous action pair applied at one wave boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionPair {
    pub friendly: PurchaseAction,
    pub enemy: PurchaseAction,
}

impl ActionPair {
    pub fn new(friendly: PurchaseAction, enemy: PurchaseAction) -> Self {
        ActionPair { friendly, enemy }
    }

    pub fn of(&self, player: Player) -> &PurchaseAction {
        match player {
            Player::Friendly => &self.friendly,
            Player::Enemy => &self.enemy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum WinCondition {
    FriendlyDestroysEnemyTop,
    FriendlyDestroysEnemyBottom,
    EnemyDestroysFriendlyTop,
    EnemyDestroysFriendlyBottom,
    TimeoutLowestHealth,
}

impl WinCondition {
    /// The destroy condition in which `winner` destroys the base in `lane`.
    pub fn destroys(winner: Player, lane: Lane) -> WinCondition {
        match (winner, lane) {
            (Player::Friendly, Lane::Top) => WinCondition::FriendlyDestroysEnemyTop,
            (Player::Friendly, Lane::Bottom) => WinCondition::FriendlyDestroysEnemyBottom,
            (Player::Enemy, Lane::Top) => WinCondition::EnemyDestroysFriendlyTop,
            (Player::Enemy, Lane::Bottom) => WinCondition::EnemyDestroysFriendlyBottom,
        }
    }

    /// Position in the 4-component reward / win-probability vector.
    pub fn component(self) -> Option<usize> {
        match self {
            WinCondition::FriendlyDestroysEnemyTop => Some(0),
            WinCondition::FriendlyDestroysEnemyBottom => Some(1),
            WinCondition::EnemyDestroysFriendlyTop => Some(2),
            WinCondition::EnemyDestroysFriendlyBottom => Some(3),
            WinCondition::TimeoutLowestHealth => None,
        }
    }
}

/// Index of the `(player, lane)` destroy condition in 4-vectors.
pub fn win_component(winner: Player, lane: Lane) -> usize {
    winner.index() * NUM_LANES + lane.index()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Outcome {
    pub winner: Player,
    pub condition: WinCondition,
    pub reward_vector: [f64; 4],
}

impl Outcome {
    pub fn new(winner: Player, condition: WinCondition) -> Self {
        let mut reward_vector = [0.0; 4];
        if let Some(c) = condition.component() {
            reward_vector[c] = 1.0;
        }
        Outcome {
            winner,
            condition,
            reward_vector,
        }
    }
}
