//! Numeric encoding of states and actions for the neural backends.

use crate::game::attributes::{
    state_attribute_kind, state_from_values, state_to_values, AttributeKind, NUM_STATE_ATTRIBUTES,
};
use crate::game::{AbstractState, GameConfig, PurchaseAction};

/// Width of one action feature block: lane one-hot plus three scaled counts.
pub const ACTION_FEATURES: usize = 5;

/// Documented maxima used to scale every attribute into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScales {
    pub health: f32,
    pub buildings: f32,
    pub units: f32,
    pub currency: f32,
    pub wave: f32,
    /// Maximum buildings bought in one action.
    pub purchase: f32,
}

impl FeatureScales {
    pub fn for_config(config: &GameConfig) -> Self {
        FeatureScales {
            health: config.max_health as f32,
            buildings: 64.0,
            units: 128.0,
            currency: 4000.0,
            wave: config.max_waves as f32,
            purchase: 20.0,
        }
    }

    fn max_of(&self, kind: AttributeKind) -> f32 {
        match kind {
            AttributeKind::Health => self.health,
            AttributeKind::Buildings => self.buildings,
            AttributeKind::Units => self.units,
            AttributeKind::Currency => self.currency,
            AttributeKind::Wave => self.wave,
        }
    }

    pub fn attribute_max(&self, index: usize) -> f32 {
        self.max_of(state_attribute_kind(index))
    }

    /// Appends the scaled state attributes to `out`.
    pub fn encode_state_into(&self, s: &AbstractState, out: &mut Vec<f32>) {
        let values = state_to_values(s);
        out.extend(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (v as f32 / self.attribute_max(i)).clamp(0.0, 1.0)),
        );
    }

    pub fn encode_state(&self, s: &AbstractState) -> Vec<f32> {
        let mut out = Vec::with_capacity(NUM_STATE_ATTRIBUTES);
        self.encode_state_into(s, &mut out);
        out
    }

    /// Rounds each component back to an integer count and clamps it to
    /// `[0, max]`.
    pub fn decode_state(&self, features: &[f32]) -> AbstractState {
        let values: Vec<i32> = features[..NUM_STATE_ATTRIBUTES]
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let max = self.attribute_max(i);
                (x * max).round().clamp(0.0, max) as i32
            })
            .collect();
        state_from_values(&values)
    }

    /// The empty purchase has no lane: both lane bits are zero.
    pub fn encode_action_into(&self, a: &PurchaseAction, out: &mut Vec<f32>) {
        if a.is_empty() {
            out.extend([0.0, 0.0]);
        } else {
            let bottom = a.lane.index() as f32;
            out.extend([1.0 - bottom, bottom]);
        }
        out.extend(
            a.purchases
                .iter()
                .map(|&n| (n as f32 / self.purchase).clamp(0.0, 1.0)),
        );
    }
}
