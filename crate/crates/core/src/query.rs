//! Rule evaluation over a [`TreeStore`].
//!
//! * static rules select `States` rows (with their win probabilities);
//! * transition rules scan every `input ⋈ action ⋈ output` path;
//! * symmetry rules join every path to its counterfactual twin.
//!
//! Reports list matches in row-id order so identical inputs give identical
//! reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dsl::{
    eval_bool, validate_expr, AttrRef, Bindings, Column, Diagnostic, Namespace, QueryRule, RuleClass,
    SchemaCatalog, Severity,
};
use crate::game::{AbstractState, ActionPair, Transform};
use crate::store::{CounterfactualTable, RowId, StoreError, TreeStore};

/// Which rows a query looks at. An empty episode list means every episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scope {
    #[serde(default)]
    pub episodes: Vec<String>,
    /// Skip observed root states (static rules only; every transition output
    /// is a prediction).
    #[serde(default)]
    pub model_predicted_only: bool,
}

impl Scope {
    pub fn all() -> Self {
        Scope::default()
    }

    pub fn episode(id: &str) -> Self {
        Scope {
            episodes: vec![id.to_string()],
            model_predicted_only: false,
        }
    }

    pub fn predicted_only(mut self) -> Self {
        self.model_predicted_only = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Match {
    pub episode_id: String,
    pub decision_idx: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_state_id: Option<RowId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_id: Option<RowId>,
    pub output_state_id: RowId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterfactual_id: Option<RowId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecisionCount {
    pub episode_id: String,
    pub decision_idx: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RowError {
    pub row: Match,
    pub message: String,
}

/// How many evaluation errors a report keeps verbatim.
const ERROR_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ViolationReport {
    pub rule_id: String,
    pub class: RuleClass,
    pub severity: Severity,
    pub expr: String,
    pub episode_ids: Vec<String>,
    /// One entry per decision point in scope, zeros included.
    pub per_decision_counts: Vec<DecisionCount>,
    pub matches: Vec<Match>,
    pub evaluation_errors: usize,
    pub error_samples: Vec<RowError>,
    pub total_rows_scanned: usize,
}

impl ViolationReport {
    pub fn total(&self) -> usize {
        self.matches.len()
    }

    /// Counts per decision point of one episode, indexed by decision.
    pub fn histogram(&self, episode_id: &str) -> Vec<usize> {
        self.per_decision_counts
            .iter()
            .filter(|c| c.episode_id == episode_id)
            .map(|c| c.count)
            .collect()
    }

    pub fn count_at(&self, episode_id: &str, decision: usize) -> Option<usize> {
        self.per_decision_counts
            .iter()
            .find(|c| c.episode_id == episode_id && c.decision_idx == decision)
            .map(|c| c.count)
    }

    pub fn matches_at<'a>(&'a self, episode_id: &'a str, decision: usize) -> impl Iterator<Item = &'a Match> + 'a {
        self.matches
            .iter()
            .filter(move |m| m.episode_id == episode_id && m.decision_idx == decision)
    }

    /// Whether this report should fail a CI run.
    pub fn is_failure(&self) -> bool {
        self.severity == Severity::Sound && !self.matches.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("rule '{rule}' no longer resolves against the store schema: {}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Unresolved { rule: String, diagnostics: Vec<Diagnostic> },
    #[error("{transform} counterfactuals are not materialized for episode {episode_id}; materialize first")]
    MissingCounterfactuals { episode_id: String, transform: &'static str },
    #[error("decision {decision} of episode {episode_id} is not covered by the report")]
    NotInReport { episode_id: String, decision: usize },
}

/// Attribute values of one candidate row.
struct Row<'a> {
    store: &'a TreeStore,
    output: usize,
    input: usize,
    action: usize,
    cf: Option<(&'a CounterfactualTable, usize)>,
}

impl Bindings for Row<'_> {
    fn value(&self, attr: &AttrRef) -> f64 {
        let st = &self.store.states;
        let win = &self.store.win_probability;
        match (attr.namespace, attr.column) {
            (Namespace::OutputState | Namespace::WinProb, Column::State(i)) => st.columns[i][self.output] as f64,
            (Namespace::OutputState | Namespace::WinProb, Column::WinProbability(k)) => win.columns[k][self.output],
            (Namespace::InputState, Column::State(i)) => st.columns[i][self.input] as f64,
            (Namespace::InputState, Column::WinProbability(k)) => win.columns[k][self.input],
            (Namespace::Action, Column::Action(i)) => self.store.actions.columns[i][self.action] as f64,
            (Namespace::OutputStateForFlippedInputs | Namespace::OutputStateForReversedInputs, col) => {
                let (table, r) = self.cf.expect("symmetry rows carry a counterfactual");
                match col {
                    Column::State(i) => table.output[i][r] as f64,
                    Column::WinProbability(k) => table.win[k][r],
                    Column::Action(_) => unreachable!("validated"),
                }
            }
            _ => unreachable!("rule validated against its class"),
        }
    }
}

fn transform_of(class: RuleClass) -> Option<Transform> {
    match class {
        RuleClass::SymmetryFlip => Some(Transform::Flip),
        RuleClass::SymmetryReverse => Some(Transform::Reverse),
        _ => None,
    }
}

fn scoped_episodes(store: &TreeStore, scope: &Scope) -> Result<Vec<usize>, QueryError> {
    if scope.episodes.is_empty() {
        return Ok((0..store.episodes.len()).collect());
    }
    let mut out: Vec<usize> = scope
        .episodes
        .iter()
        .map(|id| store.episode_index(id))
        .collect::<Result<_, _>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

struct Builder<'a> {
    rule: &'a QueryRule,
    counts: BTreeMap<(usize, usize), usize>,
    matches: Vec<Match>,
    errors: usize,
    samples: Vec<RowError>,
    scanned: usize,
}

impl Builder<'_> {
    fn visit(&mut self, row: &Row<'_>, m: impl FnOnce() -> Match, episode: usize, decision: usize) {
        self.scanned += 1;
        match eval_bool(&self.rule.expr, row) {
            Ok(true) => {
                *self.counts.entry((episode, decision)).or_default() += 1;
                self.matches.push(m());
            }
            Ok(false) => {}
            Err(e) => {
                self.errors += 1;
                if self.samples.len() < ERROR_SAMPLES {
                    self.samples.push(RowError {
                        row: m(),
                        message: e.to_string(),
                    });
                }
            }
        }
    }
}

/// Checks that every attribute of `rule` still resolves in the standard
/// catalog.
pub fn check_resolves(rule: &QueryRule) -> Result<(), QueryError> {
    let diagnostics = validate_expr(&rule.expr, rule.class, &SchemaCatalog::standard(), &rule.source);
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(QueryError::Unresolved {
            rule: rule.name.clone(),
            diagnostics,
        })
    }
}

/// Evaluates one rule of any class.
pub fn evaluate(rule: &QueryRule, store: &TreeStore, scope: &Scope) -> Result<ViolationReport, QueryError> {
    check_resolves(rule)?;
    let episodes = scoped_episodes(store, scope)?;
    let transform = transform_of(rule.class);
    let mut cf_ranges = Vec::new();
    if let Some(t) = transform {
        let table = store.counterfactuals(t);
        for &e in &episodes {
            let range = table.range_of(e).ok_or_else(|| QueryError::MissingCounterfactuals {
                episode_id: store.episodes[e].episode_id.clone(),
                transform: t.name(),
            })?;
            cf_ranges.push(range);
        }
    }
    let mut b = Builder {
        rule,
        counts: BTreeMap::new(),
        matches: Vec::new(),
        errors: 0,
        samples: Vec::new(),
        scanned: 0,
    };
    let st = &store.states;
    let acts = &store.actions;
    for (k, &e) in episodes.iter().enumerate() {
        let ep = &store.episodes[e];
        let id = || ep.episode_id.clone();
        match rule.class {
            RuleClass::StaticState => {
                for r in ep.states.0..ep.states.1 {
                    if scope.model_predicted_only && !st.model_predicted[r] {
                        continue;
                    }
                    let row = Row { store, output: r, input: r, action: 0, cf: None };
                    let d = st.decision_idx[r] as usize;
                    b.visit(
                        &row,
                        || Match {
                            episode_id: id(),
                            decision_idx: d,
                            input_state_id: None,
                            action_id: None,
                            output_state_id: r as RowId + 1,
                            counterfactual_id: None,
                        },
                        e,
                        d,
                    );
                }
            }
            RuleClass::Transition => {
                // Visit paths in output-state order, which equals action order.
                for a in ep.actions.0..ep.actions.1 {
                    let input = acts.parent_state_id[a] as usize - 1;
                    let output = acts.child_state_id[a] as usize - 1;
                    let row = Row { store, output, input, action: a, cf: None };
                    let d = st.decision_idx[output] as usize;
                    b.visit(
                        &row,
                        || Match {
                            episode_id: id(),
                            decision_idx: d,
                            input_state_id: Some(input as RowId + 1),
                            action_id: Some(a as RowId + 1),
                            output_state_id: output as RowId + 1,
                            counterfactual_id: None,
                        },
                        e,
                        d,
                    );
                }
            }
            RuleClass::SymmetryFlip | RuleClass::SymmetryReverse => {
                let table = store.counterfactuals(transform.expect("symmetry class"));
                let (c0, c1) = cf_ranges[k];
                for c in c0..c1 {
                    let a = table.origin_action_id[c] as usize - 1;
                    let input = acts.parent_state_id[a] as usize - 1;
                    let output = table.origin_id[c] as usize - 1;
                    let row = Row { store, output, input, action: a, cf: Some((table, c)) };
                    let d = st.decision_idx[output] as usize;
                    b.visit(
                        &row,
                        || Match {
                            episode_id: id(),
                            decision_idx: d,
                            input_state_id: Some(input as RowId + 1),
                            action_id: Some(a as RowId + 1),
                            output_state_id: output as RowId + 1,
                            counterfactual_id: Some(c as RowId + 1),
                        },
                        e,
                        d,
                    );
                }
            }
        }
    }
    let mut per_decision_counts = Vec::new();
    for &e in &episodes {
        let ep = &store.episodes[e];
        for d in 0..ep.decisions.1 - ep.decisions.0 {
            per_decision_counts.push(DecisionCount {
                episode_id: ep.episode_id.clone(),
                decision_idx: d,
                count: b.counts.get(&(e, d)).copied().unwrap_or(0),
            });
        }
    }
    Ok(ViolationReport {
        rule_id: rule.name.clone(),
        class: rule.class,
        severity: rule.severity,
        expr: rule.canonical_text(),
        episode_ids: episodes.iter().map(|&e| store.episodes[e].episode_id.clone()).collect(),
        per_decision_counts,
        matches: b.matches,
        evaluation_errors: b.errors,
        error_samples: b.samples,
        total_rows_scanned: b.scanned,
    })
}

/// Evaluates several rules concurrently; reports come back in rule order.
pub fn evaluate_all(rules: &[QueryRule], store: &TreeStore, scope: &Scope) -> Vec<Result<ViolationReport, QueryError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = rules
            .iter()
            .map(|r| s.spawn(move || evaluate(r, store, scope)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    })
}

/// Re-evaluates the rule on the single row a match refers to.
pub fn recheck(rule: &QueryRule, store: &TreeStore, m: &Match) -> Result<bool, QueryError> {
    let output = store.state_row(m.output_state_id)?;
    let input = m.input_state_id.map(|id| store.state_row(id)).transpose()?.unwrap_or(output);
    let action = m.action_id.map(|id| store.action_row(id)).transpose()?.unwrap_or(0);
    let cf = match (transform_of(rule.class), m.counterfactual_id) {
        (Some(t), Some(c)) => Some((store.counterfactuals(t), c as usize - 1)),
        _ => None,
    };
    let row = Row { store, output, input, action, cf };
    Ok(eval_bool(&rule.expr, &row).unwrap_or(false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SliceNode {
    /// Position in the decision point's tree.
    pub node_id: usize,
    pub state_id: RowId,
    pub depth: u8,
    pub parent: Option<usize>,
    /// Stubs are siblings shown only in compact form.
    pub compact: bool,
    pub highlighted: bool,
    pub actions: Option<ActionPair>,
    pub state: AbstractState,
    pub win_probabilities: [f64; 4],
    pub backed_up_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeSlice {
    pub episode_id: String,
    pub decision_idx: usize,
    pub rule_id: String,
    pub total_nodes: usize,
    pub highlighted: usize,
    pub nodes: Vec<SliceNode>,
}

/// The part of a decision point's tree that explains a report: every path
/// from the root to a matching node, plus the siblings along those paths as
/// compact stubs. Without matches the slice is the root and its children.
pub fn tree_slice(report: &ViolationReport, store: &TreeStore, episode_id: &str, decision: usize) -> Result<TreeSlice, QueryError> {
    if report.count_at(episode_id, decision).is_none() {
        return Err(QueryError::NotInReport {
            episode_id: episode_id.to_string(),
            decision,
        });
    }
    let ids = store.states_of(episode_id, decision)?;
    let base = ids[0];
    let n = ids.len();
    let parent_of = |node: usize| -> Option<usize> {
        store.states.parent_action_id[(base as usize - 1) + node]
            .map(|a| (store.actions.parent_state_id[a as usize - 1] - base) as usize)
    };
    let mut children = vec![Vec::new(); n];
    for node in 1..n {
        if let Some(p) = parent_of(node) {
            children[p].push(node);
        }
    }
    let mut highlighted = vec![false; n];
    for m in report.matches_at(episode_id, decision) {
        highlighted[(m.output_state_id - base) as usize] = true;
    }
    let mut on_path = vec![false; n];
    on_path[0] = true;
    for node in (0..n).filter(|&i| highlighted[i]) {
        let mut cur = Some(node);
        while let Some(c) = cur {
            if on_path[c] && c != node {
                break;
            }
            on_path[c] = true;
            cur = parent_of(c);
        }
    }
    let mut included = on_path.clone();
    if highlighted.iter().any(|&h| h) {
        for node in 1..n {
            if on_path[node] {
                for &s in &children[parent_of(node).expect("non-root")] {
                    included[s] = true;
                }
            }
        }
    } else {
        for &c in &children[0] {
            included[c] = true;
        }
    }
    let nodes = (0..n)
        .filter(|&i| included[i])
        .map(|i| {
            let r = base as usize - 1 + i;
            SliceNode {
                node_id: i,
                state_id: base + i as RowId,
                depth: store.states.depth[r],
                parent: parent_of(i),
                compact: !on_path[i],
                highlighted: highlighted[i],
                actions: store.states.parent_action_id[r].map(|a| store.actions.pair(a as usize - 1)),
                state: store.states.state(r),
                win_probabilities: store.win_probability.vector(r),
                backed_up_value: store.states.backed_up_value[r],
            }
        })
        .collect();
    Ok(TreeSlice {
        episode_id: episode_id.to_string(),
        decision_idx: decision,
        rule_id: report.rule_id.clone(),
        total_nodes: n,
        highlighted: highlighted.iter().filter(|&&h| h).count(),
        nodes,
    })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "camelCase")]
enum ReportLine<'a> {
    #[serde(rename_all = "camelCase")]
    Summary {
        rule_id: &'a str,
        class: RuleClass,
        severity: Severity,
        expr: &'a str,
        total_matches: usize,
        evaluation_errors: usize,
        total_rows_scanned: usize,
        per_decision_counts: &'a [DecisionCount],
    },
    #[serde(rename_all = "camelCase")]
    Match {
        rule_id: &'a str,
        #[serde(flatten)]
        m: &'a Match,
    },
}

/// Writes reports as line-delimited JSON: a summary record per report
/// followed by one record per match.
pub fn write_reports_jsonl(reports: &[ViolationReport], mut w: impl Write) -> std::io::Result<()> {
    for r in reports {
        let summary = ReportLine::Summary {
            rule_id: &r.rule_id,
            class: r.class,
            severity: r.severity,
            expr: &r.expr,
            total_matches: r.total(),
            evaluation_errors: r.evaluation_errors,
            total_rows_scanned: r.total_rows_scanned,
            per_decision_counts: &r.per_decision_counts,
        };
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")?;
        for m in &r.matches {
            serde_json::to_writer(&mut w, &ReportLine::Match { rule_id: &r.rule_id, m })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

/// Plain-text table: rule, class, severity, total and per-decision counts.
pub fn summary_table(reports: &[ViolationReport]) -> String {
    let width = reports.iter().map(|r| r.rule_id.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  {:<15}  {:<9}  {:>7}  histogram\n", "rule", "class", "severity", "matches");
    for r in reports {
        let mut hist = String::new();
        for (k, e) in r.episode_ids.iter().enumerate() {
            if k > 0 {
                hist.push_str(" | ");
            }
            let counts: Vec<String> = r.histogram(e).iter().map(ToString::to_string).collect();
            if r.episode_ids.len() > 1 {
                let _ = write!(hist, "{e}: ");
            }
            hist.push_str(&counts.join(" "));
        }
        let severity = match r.severity {
            Severity::Sound => "sound",
            Severity::Suspicion => "suspicion",
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:<15}  {:<9}  {:>7}  {hist}",
            r.rule_id,
            r.class.name(),
            severity,
            r.total()
        );
    }
    out
}
