//! Shared test helpers: a brute-force rule oracle that walks in-memory search
//! trees, name-based symmetry transforms, a random rule generator and a random
//! tree generator.
//!
//! Nothing here goes through the store, the column layout or the engine's
//! evaluator; attribute values are read from the structs by parsing names.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use towcheck_core::dsl::{ArithOp, AttrRef, BoolExpr, CmpOp, Namespace, NumExpr, QueryRule, RuleClass, SchemaCatalog};
use towcheck_core::episode::{DecisionPoint, Episode, Header, SCHEMA_VERSION};
use towcheck_core::game::{
    AbstractState, ActionPair, GameConfig, Lane, Outcome, Player, PurchaseAction, Transform, WinCondition,
};
use towcheck_core::models::ModelBundle;
use towcheck_core::planner::{Edge, PruneWidths, SearchTree, TreeNode};
use towcheck_core::play::TransitionRecord;
use towcheck_core::store::{RowId, TreeStore};

// ---------------------------------------------------------------------------
// Attribute access by name

const UNITS: [&str; 3] = ["Marine", "Baneling", "Immortal"];
const LANES: [&str; 2] = ["Top", "Bottom"];
const PLAYERS: [&str; 2] = ["friendly", "enemy"];

fn idx(list: &[&str], s: &str) -> Option<usize> {
    list.iter().position(|x| *x == s)
}

/// Reads a state attribute by its catalog name.
pub fn state_value(s: &AbstractState, name: &str) -> Option<i32> {
    if name == "waveIndex" {
        return Some(s.wave_index);
    }
    let (p, rest) = PLAYERS
        .iter()
        .enumerate()
        .find_map(|(i, p)| name.strip_prefix(p).map(|r| (i, r)))?;
    if rest == "Currency" {
        return Some(s.currency[p]);
    }
    if let Some(lane) = rest.strip_prefix("Health") {
        return Some(s.health[p][idx(&LANES, lane)?]);
    }
    let (u, rest) = UNITS
        .iter()
        .enumerate()
        .find_map(|(i, u)| rest.strip_prefix(u).map(|r| (i, r)))?;
    if let Some(lane) = rest.strip_prefix("Bldgs") {
        return Some(s.buildings[p][idx(&LANES, lane)?][u]);
    }
    let (l, rest) = LANES
        .iter()
        .enumerate()
        .find_map(|(i, l)| rest.strip_prefix(l).map(|r| (i, r)))?;
    let g: usize = rest.strip_prefix("Grid")?.parse().ok()?;
    (1..=4).contains(&g).then(|| s.units[p][l][u][g - 1])
}

fn set_state_value(s: &mut AbstractState, name: &str, v: i32) {
    if name == "waveIndex" {
        s.wave_index = v;
        return;
    }
    let p = if name.starts_with("friendly") { 0 } else { 1 };
    let rest = &name[PLAYERS[p].len()..];
    if rest == "Currency" {
        s.currency[p] = v;
    } else if let Some(lane) = rest.strip_prefix("Health") {
        s.health[p][idx(&LANES, lane).unwrap()] = v;
    } else {
        let u = UNITS.iter().position(|u| rest.starts_with(u)).unwrap();
        let rest = &rest[UNITS[u].len()..];
        if let Some(lane) = rest.strip_prefix("Bldgs") {
            s.buildings[p][idx(&LANES, lane).unwrap()][u] = v;
        } else {
            let l = LANES.iter().position(|l| rest.starts_with(l)).unwrap();
            let g: usize = rest[LANES[l].len() + 4..].parse().unwrap();
            s.units[p][l][u][g - 1] = v;
        }
    }
}

/// Every state attribute name, built independently of the catalog.
pub fn all_state_names() -> Vec<String> {
    let mut out = Vec::new();
    for p in PLAYERS {
        for l in LANES {
            out.push(format!("{p}Health{l}"));
        }
    }
    for p in PLAYERS {
        for l in LANES {
            for u in UNITS {
                out.push(format!("{p}{u}Bldgs{l}"));
                for g in 1..=4 {
                    out.push(format!("{p}{u}{l}Grid{g}"));
                }
            }
        }
    }
    for p in PLAYERS {
        out.push(format!("{p}Currency"));
    }
    out.push("waveIndex".into());
    out
}

pub const WIN_NAMES: [&str; 4] = [
    "probabilityOfWinInTopLane",
    "probabilityOfWinInBottomLane",
    "probabilityOfEnemyWinInTopLane",
    "probabilityOfEnemyWinInBottomLane",
];

pub fn win_value(w: &[f64; 4], name: &str) -> Option<f64> {
    WIN_NAMES.iter().position(|n| *n == name).map(|i| w[i])
}

pub fn action_value(pair: &ActionPair, name: &str) -> Option<f64> {
    let (a, rest) = if let Some(r) = name.strip_suffix("Friendly") {
        (&pair.friendly, r)
    } else {
        (&pair.enemy, name.strip_suffix("Enemy")?)
    };
    if rest == "laneOf" {
        return Some(if a.lane == Lane::Top { 0.0 } else { 1.0 });
    }
    let unit = rest.strip_prefix("numOf")?.strip_suffix("BldgsPurchasedBy")?;
    Some(a.purchases[idx(&UNITS, unit)?] as f64)
}

// ---------------------------------------------------------------------------
// Symmetry transforms derived from attribute names

/// Name of the attribute whose value lands in `name` after the transform.
pub fn source_name(t: Transform, name: &str) -> String {
    match t {
        Transform::Flip => name
            .replace("Top", "\u{0}")
            .replace("Bottom", "Top")
            .replace('\u{0}', "Bottom"),
        Transform::Reverse => {
            let swapped = if let Some(r) = name.strip_prefix("friendly") {
                format!("enemy{r}")
            } else if let Some(r) = name.strip_prefix("enemy") {
                format!("friendly{r}")
            } else {
                name.to_string()
            };
            match swapped.rfind("Grid") {
                Some(i) => {
                    let g: usize = swapped[i + 4..].parse().unwrap();
                    format!("{}Grid{}", &swapped[..i], 5 - g)
                }
                None => swapped,
            }
        }
    }
}

pub fn transform_state(t: Transform, s: &AbstractState) -> AbstractState {
    let mut out = s.clone();
    for n in all_state_names() {
        set_state_value(&mut out, &n, state_value(s, &source_name(t, &n)).unwrap());
    }
    out
}

pub fn transform_win(t: Transform, w: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, n) in WIN_NAMES.iter().enumerate() {
        let src = match t {
            Transform::Flip => source_name(t, n),
            Transform::Reverse => {
                if let Some(r) = n.strip_prefix("probabilityOfEnemyWin") {
                    format!("probabilityOfWin{r}")
                } else {
                    n.replace("probabilityOfWin", "probabilityOfEnemyWin")
                }
            }
        };
        out[i] = win_value(w, &src).unwrap();
    }
    out
}

pub fn transform_pair(t: Transform, p: &ActionPair) -> ActionPair {
    match t {
        Transform::Flip => {
            let f = |a: &PurchaseAction| {
                let lane = if a.purchases.iter().all(|&n| n == 0) {
                    Lane::Top
                } else if a.lane == Lane::Top {
                    Lane::Bottom
                } else {
                    Lane::Top
                };
                PurchaseAction { lane, purchases: a.purchases }
            };
            ActionPair { friendly: f(&p.friendly), enemy: f(&p.enemy) }
        }
        Transform::Reverse => ActionPair { friendly: p.enemy, enemy: p.friendly },
    }
}

// ---------------------------------------------------------------------------
// Brute-force rule oracle

#[derive(Debug)]
pub struct OracleError;

struct Row<'a> {
    output: &'a AbstractState,
    output_win: &'a [f64; 4],
    input: Option<(&'a AbstractState, &'a [f64; 4])>,
    action: Option<&'a ActionPair>,
    cf: Option<&'a (AbstractState, [f64; 4])>,
}

fn lookup(row: &Row, a: &AttrRef) -> f64 {
    let state_or_win = |s: &AbstractState, w: &[f64; 4]| {
        state_value(s, &a.name)
            .map(f64::from)
            .or_else(|| win_value(w, &a.name))
            .unwrap_or_else(|| panic!("unknown attribute {}", a.name))
    };
    match a.namespace {
        Namespace::OutputState => state_or_win(row.output, row.output_win),
        Namespace::WinProb => win_value(row.output_win, &a.name).expect("win attribute"),
        Namespace::InputState => {
            let (s, w) = row.input.expect("input");
            state_or_win(s, w)
        }
        Namespace::Action => action_value(row.action.expect("action"), &a.name).expect("action attribute"),
        Namespace::OutputStateForFlippedInputs | Namespace::OutputStateForReversedInputs => {
            let (s, w) = row.cf.expect("counterfactual");
            state_or_win(s, w)
        }
    }
}

fn num(e: &NumExpr, row: &Row) -> Result<f64, OracleError> {
    match e {
        NumExpr::Literal { text, .. } => Ok(text.parse().expect("literal text is a number")),
        NumExpr::Attribute(a) => Ok(lookup(row, a)),
        NumExpr::Neg { operand, .. } => Ok(-num(operand, row)?),
        NumExpr::Binary { op, lhs, rhs, .. } => {
            let (x, y) = (num(lhs, row)?, num(rhs, row)?);
            match op {
                ArithOp::Add => Ok(x + y),
                ArithOp::Sub => Ok(x - y),
                ArithOp::Mul => Ok(x * y),
                ArithOp::Div if y == 0.0 => Err(OracleError),
                ArithOp::Div => Ok(x / y),
            }
        }
    }
}

fn truth(e: &BoolExpr, row: &Row) -> Result<bool, OracleError> {
    match e {
        BoolExpr::Compare { op, lhs, rhs, .. } => {
            let (x, y) = (num(lhs, row)?, num(rhs, row)?);
            Ok(match op {
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Eq => x == y,
                CmpOp::Ne => x != y,
                CmpOp::Gt => x > y,
                CmpOp::Ge => x >= y,
            })
        }
        BoolExpr::And { lhs, rhs } => Ok(truth(lhs, row)? && truth(rhs, row)?),
        BoolExpr::Or { lhs, rhs } => Ok(truth(lhs, row)? || truth(rhs, row)?),
        BoolExpr::Not { operand, .. } => Ok(!truth(operand, row)?),
    }
}

/// A match located by episode, decision and node position within the
/// decision's tree.
pub type Located = (String, usize, usize);

#[derive(Debug, Default, PartialEq)]
pub struct OracleResult {
    pub matches: Vec<Located>,
    pub errors: usize,
    pub per_decision: Vec<(String, usize, usize)>,
}

/// Nodes of one decision point, with the observed root standing in when the
/// agent did not plan.
fn nodes_of(point: &DecisionPoint) -> Vec<TreeNode> {
    match &point.tree {
        Some(t) => t.nodes.clone(),
        None => vec![TreeNode {
            id: 0,
            depth: 0,
            state: point.transition.state.clone(),
            win_probabilities: [0.0; 4],
            edge: None,
            children: Vec::new(),
            backed_up_value: 0.0,
            reward: [0.0; 4],
        }],
    }
}

/// Brute-force evaluation of `rule` over in-memory episodes. Symmetry rules
/// ask `counterfactual` for the model's output on transformed inputs.
pub fn oracle(
    rule: &QueryRule,
    episodes: &[Episode],
    predicted_only: bool,
    counterfactual: &dyn Fn(Transform, &AbstractState, &ActionPair) -> (AbstractState, [f64; 4]),
) -> OracleResult {
    let mut out = OracleResult::default();
    let transform = match rule.class {
        RuleClass::SymmetryFlip => Some(Transform::Flip),
        RuleClass::SymmetryReverse => Some(Transform::Reverse),
        _ => None,
    };
    for e in episodes {
        let id = e.content_id();
        for (d, point) in e.decisions.iter().enumerate() {
            let nodes = nodes_of(point);
            let mut count = 0;
            let mut consider = |pos: usize, row: Row| match truth(&rule.expr, &row) {
                Ok(true) => {
                    count += 1;
                    out.matches.push((id.clone(), d, pos));
                }
                Ok(false) => {}
                Err(_) => out.errors += 1,
            };
            for (pos, n) in nodes.iter().enumerate() {
                match (rule.class, n.edge) {
                    (RuleClass::StaticState, _) => {
                        if predicted_only && n.depth == 0 {
                            continue;
                        }
                        consider(pos, Row { output: &n.state, output_win: &n.win_probabilities, input: None, action: None, cf: None });
                    }
                    (_, None) => {}
                    (_, Some(edge)) => {
                        let parent = &nodes[edge.parent];
                        let cf = transform.map(|t| {
                            counterfactual(t, &transform_state(t, &parent.state), &transform_pair(t, &edge.actions))
                        });
                        consider(
                            pos,
                            Row {
                                output: &n.state,
                                output_win: &n.win_probabilities,
                                input: Some((&parent.state, &parent.win_probabilities)),
                                action: Some(&edge.actions),
                                cf: cf.as_ref(),
                            },
                        );
                    }
                }
            }
            out.per_decision.push((id.clone(), d, count));
        }
    }
    out
}

/// Counterfactual source that runs a bundle.
pub fn bundle_counterfactual(bundle: &ModelBundle) -> impl Fn(Transform, &AbstractState, &ActionPair) -> (AbstractState, [f64; 4]) + '_ {
    move |_, s, a| {
        let (next, _) = bundle.predict_transition(s, a).expect("prediction");
        let w = bundle.win_vector(&next).expect("win vector");
        (next, w.0)
    }
}

/// Locates engine matches the way the oracle does.
pub fn locate(store: &TreeStore, episode_id: &str, decision: usize, output_state_id: RowId) -> usize {
    let ids = store.states_of(episode_id, decision).unwrap();
    ids.iter().position(|&i| i == output_state_id).expect("match inside its decision")
}

// ---------------------------------------------------------------------------
// Random rules

pub struct RuleGen {
    rng: ChaCha8Rng,
    catalog: SchemaCatalog,
    pub class: RuleClass,
    depth: u32,
}

impl RuleGen {
    pub fn new(seed: u64) -> Self {
        RuleGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            catalog: SchemaCatalog::standard(),
            class: RuleClass::StaticState,
            depth: 0,
        }
    }

    /// A rule text of a random class; returns the class with it.
    pub fn rule(&mut self) -> (RuleClass, String) {
        self.class = *RuleClass::ALL.choose(&mut self.rng).unwrap();
        self.depth = 0;
        let text = self.or();
        (self.class, text)
    }

    pub fn rule_of(&mut self, class: RuleClass) -> String {
        self.class = class;
        self.depth = 0;
        self.or()
    }

    fn nested<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> T {
        self.depth += 1;
        let v = f(self);
        self.depth -= 1;
        v
    }

    fn or(&mut self) -> String {
        let n = if self.depth > 2 { 1 } else { self.rng.random_range(1..=2) };
        let parts: Vec<String> = (0..n).map(|_| self.and()).collect();
        parts.join(if self.rng.random_bool(0.1) { "\nOR " } else { " OR " })
    }

    fn and(&mut self) -> String {
        let n = if self.depth > 2 { 1 } else { self.rng.random_range(1..=2) };
        let parts: Vec<String> = (0..n).map(|_| self.unary_bool()).collect();
        parts.join(if self.rng.random_bool(0.1) { " AND\n" } else { " AND " })
    }

    fn unary_bool(&mut self) -> String {
        match self.rng.random_range(0..10) {
            0 if self.depth < 3 => {
                let inner = self.nested(Self::or);
                format!("NOT ({inner})")
            }
            1 if self.depth < 3 => {
                let inner = self.nested(Self::or);
                format!("({inner})")
            }
            _ => self.comparison(),
        }
    }

    fn comparison(&mut self) -> String {
        let symbols = ["<", "<=", "=", "!=", ">", ">=", "<>"];
        let op = *symbols.choose(&mut self.rng).unwrap();
        let lhs = self.sum();
        let rhs = if self.rng.random_bool(0.5) { self.literal() } else { self.sum() };
        format!("{lhs} {op} {rhs}")
    }

    fn sum(&mut self) -> String {
        if self.rng.random_bool(0.08) {
            if let Some(s) = self.series() {
                return s;
            }
        }
        let n = if self.depth > 3 { 1 } else { self.rng.random_range(1..=3) };
        let mut out = self.product();
        for _ in 1..n {
            let op = if self.rng.random_bool(0.5) { " + " } else { " - " };
            out = format!("{out}{op}{}", self.product());
        }
        out
    }

    fn product(&mut self) -> String {
        let mut out = self.factor();
        if self.depth <= 3 && self.rng.random_bool(0.2) {
            let op = ["*", "/", "×", "÷"].choose(&mut self.rng).unwrap();
            out = format!("{out} {op} {}", self.factor());
        }
        out
    }

    fn factor(&mut self) -> String {
        match self.rng.random_range(0..12) {
            0 => format!("-{}", self.attribute()),
            1 if self.depth < 4 => {
                let inner = self.nested(Self::sum);
                format!("({inner})")
            }
            2 | 3 => self.literal(),
            _ => self.attribute(),
        }
    }

    fn literal(&mut self) -> String {
        match self.rng.random_range(0..4) {
            0 => format!("{}.{}", self.rng.random_range(0..4), self.rng.random_range(0..10)),
            1 => "0.5".into(),
            _ => self.rng.random_range(0..6).to_string(),
        }
    }

    fn namespace(&mut self) -> Namespace {
        *self.class.namespaces().choose(&mut self.rng).unwrap()
    }

    pub fn attribute(&mut self) -> String {
        let ns = self.namespace();
        let entries: Vec<_> = self.catalog.entries(ns).collect();
        let mut name = entries.choose(&mut self.rng).unwrap().name.clone();
        if ns != Namespace::Action && self.rng.random_bool(0.05) {
            if let Some((alias, _)) = self.catalog.aliases.iter().find(|(_, c)| *c == name) {
                name = alias.clone();
            }
        }
        format!("{}.{name}", ns.name())
    }

    /// `ns.stemGridA + ... + ns.stemGridB` over a unit series.
    fn series(&mut self) -> Option<String> {
        let ns = *self
            .class
            .namespaces()
            .iter()
            .filter(|n| n.is_state())
            .collect::<Vec<_>>()
            .choose(&mut self.rng)?;
        let stem = format!(
            "{}{}{}Grid",
            PLAYERS.choose(&mut self.rng).unwrap(),
            UNITS.choose(&mut self.rng).unwrap(),
            LANES.choose(&mut self.rng).unwrap()
        );
        let a = self.rng.random_range(1..=2);
        let b = self.rng.random_range(a + 2..=4);
        let ns = ns.name();
        Some(format!("{ns}.{stem}{a} + ... + {ns}.{stem}{b}"))
    }
}

// ---------------------------------------------------------------------------
// Random trees

fn random_state(rng: &mut impl Rng) -> AbstractState {
    let mut s = AbstractState::empty();
    for p in 0..2 {
        for l in 0..2 {
            s.health[p][l] = rng.random_range(1..=6);
            for u in 0..3 {
                s.buildings[p][l][u] = rng.random_range(0..=3);
                for g in 0..4 {
                    s.units[p][l][u][g] = if rng.random_bool(0.5) { 0 } else { rng.random_range(0..=4) };
                }
            }
        }
        s.currency[p] = rng.random_range(600..=606);
    }
    s.wave_index = rng.random_range(0..=5);
    s
}

fn random_action(rng: &mut impl Rng) -> PurchaseAction {
    let purchases = [rng.random_range(0..=2), rng.random_range(0..=1), rng.random_range(0..=1)];
    let lane = if rng.random_bool(0.5) { Lane::Top } else { Lane::Bottom };
    PurchaseAction::new(lane, purchases)
}

fn random_win(rng: &mut impl Rng) -> [f64; 4] {
    let mut w = [0.0; 4];
    for v in &mut w {
        *v = *[0.0, 0.0, 0.25, 0.5, 1.0, rng.random::<f64>()].choose(rng).unwrap();
    }
    w
}

/// A depth-2 tree with random content and the given fan-outs.
pub fn random_tree(rng: &mut impl Rng, root_fanout: usize, inner_fanout: usize) -> SearchTree {
    let mut nodes = Vec::new();
    let push = |nodes: &mut Vec<TreeNode>, depth: u8, parent: Option<usize>, rng: &mut ChaCha8Rng| {
        let id = nodes.len();
        let edge = parent.map(|p| Edge {
            parent: p,
            actions: ActionPair::new(random_action(rng), random_action(rng)),
            friendly_index: rng.random_range(0..4),
            enemy_index: rng.random_range(0..4),
        });
        let mut state = random_state(rng);
        // Only leaves may be terminal, as in planner trees.
        if depth == 2 && rng.random_bool(0.2) {
            state.health[rng.random_range(0..2)][rng.random_range(0..2)] = 0;
        }
        nodes.push(TreeNode {
            id,
            depth,
            state,
            win_probabilities: random_win(rng),
            edge,
            children: Vec::new(),
            backed_up_value: rng.random(),
            reward: [0.0; 4],
        });
        if let Some(p) = parent {
            nodes[p].children.push(id);
        }
        id
    };
    let mut r = ChaCha8Rng::seed_from_u64(rng.random());
    push(&mut nodes, 0, None, &mut r);
    let first: Vec<usize> = (0..root_fanout).map(|_| push(&mut nodes, 1, Some(0), &mut r)).collect();
    for c in first {
        for _ in 0..inner_fanout {
            push(&mut nodes, 2, Some(c), &mut r);
        }
    }
    SearchTree {
        nodes,
        chosen_action: PurchaseAction::empty(),
        widths: PruneWidths { root: (root_fanout, 1), inner: (inner_fanout, 1) },
    }
}

/// An episode of random trees; every other decision point has no tree.
pub fn random_episode(seed: u64, decisions: usize, root_fanout: usize, inner_fanout: usize) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GameConfig::shrunken();
    let points = (0..decisions)
        .map(|d| {
            let tree = (d % 4 != 3).then(|| random_tree(&mut rng, root_fanout, inner_fanout));
            let state = tree.as_ref().map_or_else(|| random_state(&mut rng), |t| t.nodes[0].state.clone());
            DecisionPoint {
                transition: TransitionRecord {
                    state,
                    actions: ActionPair::new(random_action(&mut rng), random_action(&mut rng)),
                    next: random_state(&mut rng),
                    reward_vector: [0.0; 4],
                    wave_seed: rng.random(),
                },
                tree,
            }
        })
        .collect();
    Episode {
        header: Header {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            config: cfg,
            bundle: "random-trees".into(),
            friendly_agent: "planner".into(),
            enemy_agent: "random".into(),
            seed,
        },
        decisions: points,
        outcome: Outcome::new(Player::Friendly, WinCondition::FriendlyDestroysEnemyTop),
    }
}
