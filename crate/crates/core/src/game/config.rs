//! Game parameters and their key-value file format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::state::{UnitType, MAX_HEALTH, MAX_WAVES, NUM_UNIT_TYPES};

/// One value per unit type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerUnit<T> {
    pub marine: T,
    pub baneling: T,
    pub immortal: T,
}

impl<T: Copy> PerUnit<T> {
    pub fn get(&self, unit: UnitType) -> T {
        match unit {
            UnitType::Marine => self.marine,
            UnitType::Baneling => self.baneling,
            UnitType::Immortal => self.immortal,
        }
    }

    pub fn to_array(&self) -> [T; NUM_UNIT_TYPES] {
        [self.marine, self.baneling, self.immortal]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub unit_cost: PerUnit<i32>,
    pub unit_hp: PerUnit<i32>,
    /// `damage.<attacker>.<defender>`: damage per tick dealt by one attacker.
    pub damage: PerUnit<PerUnit<i32>>,
    pub base_damage: PerUnit<i32>,
    pub ticks_per_cell: PerUnit<i32>,
    pub income_per_wave: i32,
    pub ticks_per_wave: i32,
    pub starting_currency: i32,
    pub max_health: i32,
    pub max_waves: i32,
    pub damage_jitter_fraction: f64,
    pub rng_seed: u64,
    pub deterministic_mode: bool,
    /// Upper bound on the number of enumerated legal actions.
    pub action_cap: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Default for GameConfig {
    fn default() -> Self {
        let per = |marine, baneling, immortal| PerUnit {
            marine,
            baneling,
            immortal,
        };
        GameConfig {
            unit_cost: per(50, 75, 200),
            unit_hp: per(50, 40, 200),
            damage: PerUnit {
                marine: per(6, 6, 20),
                baneling: per(25, 8, 8),
                immortal: per(8, 25, 8),
            },
            base_damage: per(1, 2, 5),
            ticks_per_cell: per(5, 5, 5),
            income_per_wave: 100,
            ticks_per_wave: 30,
            starting_currency: 100,
            max_health: MAX_HEALTH,
            max_waves: MAX_WAVES,
            damage_jitter_fraction: 0.2,
            rng_seed: 0,
            deterministic_mode: false,
            action_cap: 2000,
        }
    }
}

impl GameConfig {
    /// Small variant used for fast training and evaluation runs: 200 HP bases
    /// and a 10-wave limit.
    pub fn shrunken() -> Self {
        GameConfig {
            max_health: 200,
            max_waves: 10,
            ..GameConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: GameConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        for u in UnitType::ALL {
            let name = u.title();
            if self.unit_cost.get(u) <= 0 {
                return bad(format!("unit_cost.{name} must be positive"));
            }
            if self.unit_hp.get(u) <= 0 {
                return bad(format!("unit_hp.{name} must be positive"));
            }
            if self.base_damage.get(u) <= 0 {
                return bad(format!("base_damage.{name} must be positive"));
            }
            if self.ticks_per_cell.get(u) <= 0 {
                return bad(format!("ticks_per_cell.{name} must be positive"));
            }
            for d in UnitType::ALL {
                if self.damage.get(u).get(d) <= 0 {
                    return bad(format!("damage.{name}.{} must be positive", d.title()));
                }
            }
        }
        if self.income_per_wave <= 0 || self.ticks_per_wave <= 0 {
            return bad("income_per_wave and ticks_per_wave must be positive".into());
        }
        if self.max_health <= 0 || self.max_waves <= 0 || self.starting_currency < 0 {
            return bad("max_health and max_waves must be positive".into());
        }
        if !(0.0..1.0).contains(&self.damage_jitter_fraction) {
            return bad("damage_jitter_fraction must lie in [0, 1)".into());
        }
        if self.action_cap == 0 {
            return bad("action_cap must be at least 1".into());
        }
        Ok(())
    }

    /// Jitter fraction actually applied (zero in deterministic mode).
    pub fn effective_jitter(&self) -> f64 {
        if self.deterministic_mode {
            0.0
        } else {
            self.damage_jitter_fraction
        }
    }

    /// Copy of this config with deterministic combat.
    pub fn deterministic(&self) -> Self {
        GameConfig {
            deterministic_mode: true,
            ..self.clone()
        }
    }

    /// Short content hash identifying the game rules.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = GameConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(GameConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_falls_back_to_defaults() {
        let cfg = GameConfig::from_toml_str("max_health = 200\nmax_waves = 10\n").unwrap();
        assert_eq!(cfg, GameConfig::shrunken());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(GameConfig::from_toml_str("damage_jitter_fraction = 1.0").is_err());
        assert!(GameConfig::from_toml_str("[unit_cost]\nmarine = 0\nbaneling = 1\nimmortal = 1").is_err());
        assert!(GameConfig::from_toml_str("no_such_key = 3").is_err());
    }

    #[test]
    fn rock_paper_scissors_is_strictly_dominant() {
        let cfg = GameConfig::default();
        let dominant = [
            (UnitType::Baneling, UnitType::Marine),
            (UnitType::Marine, UnitType::Immortal),
            (UnitType::Immortal, UnitType::Baneling),
        ];
        for (attacker, victim) in dominant {
            let row = cfg.damage.get(attacker);
            for other in UnitType::ALL.into_iter().filter(|&d| d != victim) {
                assert!(row.get(victim) >= 3 * row.get(other));
            }
        }
        assert!(cfg.unit_cost.baneling < cfg.unit_cost.immortal);
    }

    #[test]
    fn hash_tracks_content() {
        assert_eq!(GameConfig::default().hash(), GameConfig::default().hash());
        assert_ne!(GameConfig::default().hash(), GameConfig::shrunken().hash());
    }
}
