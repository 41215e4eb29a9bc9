//! Rule classes, namespaces and the attribute catalog used to resolve names.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::game::attributes::{action_attribute_names, state_attribute_names};
use crate::store::WIN_PROBABILITY_COLUMNS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RuleClass {
    StaticState,
    Transition,
    SymmetryFlip,
    SymmetryReverse,
}

impl RuleClass {
    pub const ALL: [RuleClass; 4] = [
        RuleClass::StaticState,
        RuleClass::Transition,
        RuleClass::SymmetryFlip,
        RuleClass::SymmetryReverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleClass::StaticState => "staticState",
            RuleClass::Transition => "transition",
            RuleClass::SymmetryFlip => "symmetryFlip",
            RuleClass::SymmetryReverse => "symmetryReverse",
        }
    }

    pub fn parse(text: &str) -> Option<RuleClass> {
        RuleClass::ALL.into_iter().find(|c| c.name() == text)
    }

    pub fn namespaces(self) -> &'static [Namespace] {
        use Namespace::*;
        match self {
            RuleClass::StaticState => &[OutputState, WinProb],
            RuleClass::Transition => &[InputState, OutputState, WinProb, Action],
            RuleClass::SymmetryFlip => &[InputState, OutputState, WinProb, Action, OutputStateForFlippedInputs],
            RuleClass::SymmetryReverse => &[InputState, OutputState, WinProb, Action, OutputStateForReversedInputs],
        }
    }

    pub fn allows(self, ns: Namespace) -> bool {
        self.namespaces().contains(&ns)
    }
}

impl fmt::Display for RuleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Namespace {
    InputState,
    OutputState,
    /// Win probabilities of the output state.
    WinProb,
    Action,
    OutputStateForFlippedInputs,
    OutputStateForReversedInputs,
}

impl Namespace {
    pub const ALL: [Namespace; 6] = [
        Namespace::InputState,
        Namespace::OutputState,
        Namespace::WinProb,
        Namespace::Action,
        Namespace::OutputStateForFlippedInputs,
        Namespace::OutputStateForReversedInputs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Namespace::InputState => "inputState",
            Namespace::OutputState => "outputState",
            Namespace::WinProb => "winProb",
            Namespace::Action => "action",
            Namespace::OutputStateForFlippedInputs => "outputStateForFlippedInputs",
            Namespace::OutputStateForReversedInputs => "outputStateForReversedInputs",
        }
    }

    pub fn parse(text: &str) -> Option<Namespace> {
        Namespace::ALL.into_iter().find(|n| n.name() == text)
    }

    /// Whether the namespace names a state (with its win probabilities).
    pub fn is_state(self) -> bool {
        !matches!(self, Namespace::WinProb | Namespace::Action)
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A resolved column within a namespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "table", content = "index", rename_all = "camelCase")]
pub enum Column {
    State(usize),
    WinProbability(usize),
    Action(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum AttributeType {
    Integer,
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CatalogEntry {
    pub name: String,
    pub column: Column,
    #[serde(rename = "type")]
    pub ty: AttributeType,
}

/// Attribute names available in each namespace, plus aliases.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SchemaCatalog {
    pub state: Vec<CatalogEntry>,
    pub win_probability: Vec<CatalogEntry>,
    pub action: Vec<CatalogEntry>,
    /// `(alias, canonical name)` pairs.
    pub aliases: Vec<(String, String)>,
}

pub const WIN_PROBABILITY_ALIASES: [(&str, &str); 4] = [
    ("probabilityOfDestroyingEnemyTopBase", "probabilityOfWinInTopLane"),
    ("probabilityOfDestroyingEnemyBottomBase", "probabilityOfWinInBottomLane"),
    ("probabilityOfEnemyDestroyingFriendlyTopBase", "probabilityOfEnemyWinInTopLane"),
    ("probabilityOfEnemyDestroyingFriendlyBottomBase", "probabilityOfEnemyWinInBottomLane"),
];

impl Default for SchemaCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

impl SchemaCatalog {
    /// The catalog matching the store's columns.
    pub fn standard() -> Self {
        let entries = |names: &mut dyn Iterator<Item = String>, col: fn(usize) -> Column, ty| {
            names
                .enumerate()
                .map(|(i, name)| CatalogEntry { name, column: col(i), ty })
                .collect()
        };
        SchemaCatalog {
            state: entries(&mut state_attribute_names().iter().cloned(), Column::State, AttributeType::Integer),
            win_probability: entries(
                &mut WIN_PROBABILITY_COLUMNS.iter().map(|s| s.to_string()),
                Column::WinProbability,
                AttributeType::Probability,
            ),
            action: entries(&mut action_attribute_names().iter().cloned(), Column::Action, AttributeType::Integer),
            aliases: WIN_PROBABILITY_ALIASES
                .iter()
                .map(|(a, c)| (a.to_string(), c.to_string()))
                .collect(),
        }
    }

    pub fn entries(&self, ns: Namespace) -> impl Iterator<Item = &CatalogEntry> {
        let (first, second): (&[CatalogEntry], &[CatalogEntry]) = match ns {
            Namespace::WinProb => (&self.win_probability, &[]),
            Namespace::Action => (&self.action, &[]),
            _ => (&self.state, &self.win_probability),
        };
        first.iter().chain(second)
    }

    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases
            .iter()
            .find(|(a, _)| a == name)
            .map_or(name, |(_, c)| c.as_str())
    }

    /// Resolves `name` (or an alias) in `ns` to its canonical entry.
    pub fn resolve(&self, ns: Namespace, name: &str) -> Option<&CatalogEntry> {
        let name = self.canonical(name);
        self.entries(ns).find(|e| e.name == name)
    }

    /// Up to three known names in `ns` closest to `name`.
    pub fn suggestions(&self, ns: Namespace, name: &str) -> Vec<String> {
        let mut scored: Vec<(f64, &str)> = self
            .entries(ns)
            .map(|e| e.name.as_str())
            .chain(
                self.aliases
                    .iter()
                    .filter(|_| ns != Namespace::Action)
                    .map(|(a, _)| a.as_str()),
            )
            .map(|n| (strsim::jaro_winkler(name, n), n))
            .filter(|(s, _)| *s > 0.7)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        scored.into_iter().take(3).map(|(_, n)| n.to_string()).collect()
    }

    /// Drops an attribute; used to model a catalog that has drifted from
    /// older rules.
    pub fn without(mut self, name: &str) -> Self {
        self.state.retain(|e| e.name != name);
        self.win_probability.retain(|e| e.name != name);
        self.action.retain(|e| e.name != name);
        self
    }
}
