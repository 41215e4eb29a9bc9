//! Rule files: TOML with one `[[rule]]` table per rule.
//!
//! ```toml
//! [[rule]]
//! name = "enemy-top-heals"
//! class = "transition"
//! severity = "sound"
//! description = "Base health cannot increase."
//! expr = "outputState.enemyHealthTop - inputState.enemyHealthTop > 5.0"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ast::{QueryRule, Severity};
use super::catalog::{RuleClass, SchemaCatalog};
use super::parser::{parse_expr_with, ParseError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub class: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub severity: Severity,
    pub expr: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFileToml {
    #[serde(default, rename = "rule")]
    rules: Vec<RuleSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum RuleFileError {
    #[error("reading rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("rule file syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("rule '{name}': unknown class '{class}' (expected staticState, transition, symmetryFlip or symmetryReverse)")]
    UnknownClass { name: String, class: String },
    #[error("duplicate rule name '{0}'")]
    Duplicate(String),
    #[error("rule '{name}': {error}")]
    Parse { name: String, error: ParseError },
}

impl QueryRule {
    pub fn parse(name: &str, class: RuleClass, text: &str) -> Result<QueryRule, ParseError> {
        Self::parse_with(&SchemaCatalog::standard(), name, class, text)
    }

    pub fn parse_with(catalog: &SchemaCatalog, name: &str, class: RuleClass, text: &str) -> Result<QueryRule, ParseError> {
        Ok(QueryRule {
            name: name.to_string(),
            description: String::new(),
            class,
            severity: Severity::Sound,
            expr: parse_expr_with(catalog, class, text)?,
            source: text.to_string(),
        })
    }

    pub fn with_severity(mut self, severity: Severity) -> Self {
        self.severity = severity;
        self
    }

    pub fn with_description(mut self, description: &str) -> Self {
        self.description = description.to_string();
        self
    }

    /// The expression in canonical form.
    pub fn canonical_text(&self) -> String {
        self.expr.to_string()
    }

    pub fn to_spec(&self) -> RuleSpec {
        RuleSpec {
            name: self.name.clone(),
            class: self.class.name().to_string(),
            description: self.description.clone(),
            severity: self.severity,
            expr: self.source.clone(),
        }
    }
}

impl RuleSpec {
    pub fn compile(&self, catalog: &SchemaCatalog) -> Result<QueryRule, RuleFileError> {
        let class = RuleClass::parse(&self.class).ok_or_else(|| RuleFileError::UnknownClass {
            name: self.name.clone(),
            class: self.class.clone(),
        })?;
        let rule = QueryRule::parse_with(catalog, &self.name, class, &self.expr).map_err(|error| RuleFileError::Parse {
            name: self.name.clone(),
            error,
        })?;
        Ok(rule.with_severity(self.severity).with_description(&self.description))
    }
}

pub fn parse_rule_specs(text: &str) -> Result<Vec<RuleSpec>, RuleFileError> {
    let file: RuleFileToml = toml::from_str(text)?;
    let mut seen = std::collections::HashSet::new();
    for r in &file.rules {
        if !seen.insert(r.name.as_str()) {
            return Err(RuleFileError::Duplicate(r.name.clone()));
        }
    }
    Ok(file.rules)
}

/// Parses a rule file, failing on the first invalid rule.
pub fn parse_rule_file(text: &str) -> Result<Vec<QueryRule>, RuleFileError> {
    let catalog = SchemaCatalog::standard();
    parse_rule_specs(text)?.iter().map(|s| s.compile(&catalog)).collect()
}

pub fn load_rule_file(path: impl AsRef<Path>) -> Result<Vec<QueryRule>, RuleFileError> {
    parse_rule_file(&std::fs::read_to_string(path)?)
}

pub fn render_rule_file(rules: &[QueryRule]) -> String {
    let file = RuleFileToml {
        rules: rules.iter().map(QueryRule::to_spec).collect(),
    };
    toml::to_string(&file).expect("rule specs serialize")
}
