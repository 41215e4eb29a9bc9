//! Command-line interface. Every command is deterministic given its seed and
//! inputs; machine-readable output goes to files, a short summary to stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use towcheck_core::dsl::library::{sound_suite, table1};
use towcheck_core::dsl::{parse_rule_specs, render_rule_file, QueryRule, SchemaCatalog};
use towcheck_core::episode::{write_episodes, Episode};
use towcheck_core::game::{GameConfig, Transform};
use towcheck_core::models::{FlawSpec, ModelBundle};
use towcheck_core::nn::Mlp;
use towcheck_core::play::{play_game, Agent};
use towcheck_core::query::{evaluate_all, summary_table, write_reports_jsonl, Scope};
use towcheck_core::store::TreeStore;
use towcheck_core::training::{
    collect_dynamics_dataset, distill_value, train_drdqn, train_dynamics, write_csv, AgentPool, DqnParams,
    FitParams,
};

#[derive(Debug, Parser)]
#[command(name = "towcheck", version, about = "Behavioral testing workbench for a Tug-of-War planning agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play games and write the episodes (with search trees) to a file.
    Play(PlayArgs),
    /// Train Q-nets by pool self-play.
    Train(TrainArgs),
    /// Play games for a dynamics dataset.
    Collect(CollectArgs),
    /// Fit the dynamics network on a dataset.
    Fit(FitArgs),
    /// Add episode files to a store snapshot.
    Ingest(IngestArgs),
    /// Run a bundle on flipped or reversed inputs of stored transitions.
    Counterfactuals(CounterfactualArgs),
    /// Work with rule files.
    #[command(subcommand)]
    Rules(RulesCommand),
    /// Evaluate rules over a store and write violation reports.
    Query(QueryArgs),
    /// Serve the HTTP API over a store snapshot.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Game config (TOML); defaults to the standard game.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the small 200-HP, 10-wave variant.
    #[arg(long, conflicts_with = "config")]
    pub shrunken: bool,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<GameConfig> {
        if let Some(p) = &self.config {
            return GameConfig::load(p).with_context(|| format!("loading {}", p.display()));
        }
        Ok(if self.shrunken { GameConfig::shrunken() } else { GameConfig::default() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BundleKind {
    Exact,
    Flawed,
    Learned,
}

#[derive(Debug, Clone, Args)]
pub struct BundleArgs {
    #[arg(long, value_enum, default_value = "exact")]
    pub bundle: BundleKind,
    /// Flaw spec (TOML `[[flaw]]` tables); applied on top of any bundle.
    #[arg(long)]
    pub flaws: Option<PathBuf>,
    /// Q-net weights for a learned bundle.
    #[arg(long)]
    pub q: Option<PathBuf>,
    /// Dynamics weights for a learned bundle.
    #[arg(long)]
    pub dynamics: Option<PathBuf>,
    /// Optional distilled value net for a learned bundle.
    #[arg(long)]
    pub value: Option<PathBuf>,
}

impl BundleArgs {
    /// The bundle and a label recorded in episode headers.
    pub fn build(&self, cfg: &GameConfig) -> Result<(ModelBundle, String)> {
        let flaws = match &self.flaws {
            Some(p) => FlawSpec::load(p).with_context(|| format!("loading {}", p.display()))?.flaws,
            None => Vec::new(),
        };
        if self.bundle == BundleKind::Flawed && flaws.is_empty() {
            bail!("--bundle flawed needs a non-empty --flaws file");
        }
        let bundle = match self.bundle {
            BundleKind::Exact | BundleKind::Flawed => ModelBundle::exact(cfg),
            BundleKind::Learned => {
                let (Some(q), Some(d)) = (&self.q, &self.dynamics) else {
                    bail!("--bundle learned needs --q and --dynamics");
                };
                let value = self.value.as_ref().map(Mlp::load).transpose()?;
                ModelBundle::learned(cfg, Mlp::load(q)?, Mlp::load(d)?, value)
            }
        };
        let label = match (self.bundle, flaws.is_empty()) {
            (BundleKind::Learned, true) => "learned".to_string(),
            (BundleKind::Learned, false) => "learned+flawed".to_string(),
            (_, true) => "exact".to_string(),
            (_, false) => format!(
                "flawed:{}",
                flaws.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
            ),
        };
        Ok((bundle.with_flaws(flaws), label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentKind {
    Planner,
    Greedy,
    Random,
}

fn agent(kind: AgentKind, bundle: &ModelBundle) -> Agent {
    match kind {
        AgentKind::Planner => Agent::planner(bundle.clone()),
        AgentKind::Greedy => Agent::Greedy {
            bundle: bundle.clone(),
            epsilon: 0.0,
        },
        AgentKind::Random => Agent::Random,
    }
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    #[arg(long, default_value_t = 1)]
    pub games: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "planner")]
    pub friendly: AgentKind,
    #[arg(long, value_enum, default_value = "random")]
    pub enemy: AgentKind,
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output episode file (line-delimited JSON).
    #[arg(long, short, default_value = "episodes.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Episode budget per generation.
    #[arg(long, default_value_t = 2000)]
    pub episodes: usize,
    /// Each generation trains a fresh net and adds it to the pool.
    #[arg(long, default_value_t = 1)]
    pub generations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pool directory; loaded when present, written after every generation.
    #[arg(long, default_value = "pool")]
    pub pool: PathBuf,
    /// Hyperparameters (TOML, any subset of the fields).
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long, default_value = "pool")]
    pub pool: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub random_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, short, default_value = "dataset.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset episode file(s).
    #[arg(required = true)]
    pub dataset: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hyperparameters (TOML, any subset of the fields).
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, short, default_value = "dynamics.weights")]
    pub out: PathBuf,
    /// Validation report (JSON).
    #[arg(long, default_value = "dynamics-report.json")]
    pub report: PathBuf,
    /// Also distil a value net from this Q-net.
    #[arg(long, requires = "value_out")]
    pub distill_q: Option<PathBuf>,
    #[arg(long)]
    pub value_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Store snapshot; created when missing.
    #[arg(long, default_value = "store.json")]
    pub store: PathBuf,
    #[arg(required = true)]
    pub episodes: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Flip,
    Reverse,
    Both,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[arg(long, default_value = "store.json")]
    pub store: PathBuf,
    /// Episodes to materialize; all when omitted.
    #[arg(long)]
    pub episode: Vec<String>,
    #[arg(long, value_enum, default_value = "both")]
    pub transform: TransformArg,
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Subcommand)]
pub enum RulesCommand {
    /// Parse and validate a rule file.
    Check { file: PathBuf },
    /// Print a built-in rule set as a rule file.
    Builtin {
        #[arg(value_enum)]
        set: BuiltinSet,
        /// Base health cap used by range rules.
        #[arg(long, default_value_t = 2000)]
        max_health: i32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BuiltinSet {
    /// The six worked examples.
    Table1,
    /// Everything the exact simulator guarantees.
    Sound,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, default_value = "store.json")]
    pub store: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    /// Episodes to scan; all when omitted.
    #[arg(long)]
    pub episode: Vec<String>,
    /// Skip observed root states.
    #[arg(long)]
    pub predicted_only: bool,
    /// Report file (line-delimited JSON).
    #[arg(long, short, default_value = "report.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long, env = "TOWCHECK_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Rules to register at start-up.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

/// Exit status of a successful command run; `query` returns 1 when a
/// sound-severity rule matched.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Play(a) => play(a),
        Command::Train(a) => train(a),
        Command::Collect(a) => collect(a),
        Command::Fit(a) => fit(a),
        Command::Ingest(a) => ingest(a),
        Command::Counterfactuals(a) => counterfactuals(a),
        Command::Rules(RulesCommand::Check { file }) => rules_check(&file),
        Command::Rules(RulesCommand::Builtin { set, max_health }) => {
            let rules = match set {
                BuiltinSet::Table1 => table1(),
                BuiltinSet::Sound => sound_suite(max_health),
            };
            print!("{}", render_rule_file(&rules));
            Ok(0)
        }
        Command::Query(a) => query(a),
        Command::Serve(a) => serve(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

pub fn play(a: PlayArgs) -> Result<i32> {
    let cfg = a.config.load()?;
    let (bundle, label) = a.bundle.build(&cfg)?;
    let friendly = agent(a.friendly, &bundle);
    let enemy = agent(a.enemy, &bundle);
    let mut episodes = Vec::new();
    let mut wins = 0;
    for g in 0..a.games {
        let record = play_game(&friendly, &enemy, &cfg, a.seed.wrapping_add(g))?;
        let e = Episode::from_game(record, &cfg, &label, friendly.name(), enemy.name());
        if e.outcome.winner == towcheck_core::game::Player::Friendly {
            wins += 1;
        }
        println!("{}  waves {:>2}  winner {:?}", e.content_id(), e.waves(), e.outcome.winner);
        episodes.push(e);
    }
    let mut w = create(&a.out)?;
    write_episodes(&episodes, &mut w)?;
    w.flush()?;
    println!("{} games, friendly won {wins}; wrote {}", a.games, a.out.display());
    Ok(0)
}

pub fn train(a: TrainArgs) -> Result<i32> {
    let cfg = a.config.load()?;
    let params: DqnParams = load_toml(a.params.as_ref())?;
    let mut pool = if a.pool.join("pool.json").exists() {
        AgentPool::load(&a.pool)?
    } else {
        AgentPool::seeded()
    };
    for g in 0..a.generations {
        let seed = a.seed.wrapping_add(pool.len() as u64);
        let out = train_drdqn(&pool, a.episodes, &params, &cfg, seed)?;
        println!(
            "generation {g}: {} episodes, {} updates, win rate vs pool {}",
            out.episodes,
            out.updates,
            out.last_win_rate.map_or("n/a".to_string(), |w| format!("{w:.2}"))
        );
        std::fs::create_dir_all(&a.pool)?;
        write_csv(&out.log, create(&a.pool.join(format!("train-log-{}.csv", pool.len())))?)?;
        pool.push(out.net, out.last_win_rate);
        pool.save(&a.pool)?;
    }
    println!("pool of {} members in {}", pool.len(), a.pool.display());
    Ok(0)
}

pub fn collect(a: CollectArgs) -> Result<i32> {
    let cfg = a.config.load()?;
    if !(0.0..=1.0).contains(&a.random_fraction) {
        bail!("--random-fraction must be within [0, 1]");
    }
    let pool = if a.pool.join("pool.json").exists() {
        AgentPool::load(&a.pool)?
    } else {
        AgentPool::seeded()
    };
    let episodes = collect_dynamics_dataset(&pool, a.episodes, a.random_fraction, &cfg, a.seed)?;
    let records: usize = episodes.iter().map(Episode::waves).sum();
    let mut w = create(&a.out)?;
    write_episodes(&episodes, &mut w)?;
    w.flush()?;
    println!("{} episodes, {records} transitions; wrote {}", episodes.len(), a.out.display());
    Ok(0)
}

pub fn fit(a: FitArgs) -> Result<i32> {
    let cfg = a.config.load()?;
    let params: FitParams = load_toml(a.params.as_ref())?;
    let mut episodes = Vec::new();
    for p in &a.dataset {
        episodes.extend(Episode::load_all(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let records: Vec<_> = episodes.iter().flat_map(|e| e.transitions().cloned()).collect();
    let out = train_dynamics(&records, &params, &cfg, a.seed)?;
    out.net.save(&a.out)?;
    serde_json::to_writer_pretty(create(&a.report)?, &out.report)?;
    let r = &out.report;
    println!(
        "{} train / {} held-out records; health MAE {:.2} (no-change baseline {:.2}); reward MAE {:.4}",
        r.train_records, r.validation_records, r.health_mae, r.baseline_health_mae, r.reward_mae
    );
    if let (Some(q), Some(out_path)) = (&a.distill_q, &a.value_out) {
        let states: Vec<_> = records.iter().map(|r| r.state.clone()).collect();
        let v = distill_value(&Mlp::load(q)?, &states, &params, &cfg, a.seed)?;
        v.save(out_path)?;
        println!("value net written to {}", out_path.display());
    }
    Ok(0)
}

fn load_or_new(path: &Path) -> Result<TreeStore> {
    if path.exists() {
        Ok(TreeStore::load(path).with_context(|| format!("loading {}", path.display()))?)
    } else {
        Ok(TreeStore::new())
    }
}

pub fn ingest(a: IngestArgs) -> Result<i32> {
    let mut store = load_or_new(&a.store)?;
    for p in &a.episodes {
        for e in Episode::load_all(p).with_context(|| format!("reading {}", p.display()))? {
            let s = store.ingest(&e);
            println!(
                "{}  {}  states {}  transitions {}",
                s.episode_id,
                if s.inserted { "added" } else { "present" },
                s.states,
                s.actions
            );
        }
    }
    store.save(&a.store)?;
    Ok(0)
}

pub fn counterfactuals(a: CounterfactualArgs) -> Result<i32> {
    let cfg = a.config.load()?;
    let (bundle, _) = a.bundle.build(&cfg)?;
    let mut store = TreeStore::load(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    let ids: Vec<String> = if a.episode.is_empty() {
        store.episode_ids().into_iter().map(String::from).collect()
    } else {
        a.episode.clone()
    };
    let transforms: &[Transform] = match a.transform {
        TransformArg::Flip => &[Transform::Flip],
        TransformArg::Reverse => &[Transform::Reverse],
        TransformArg::Both => &[Transform::Flip, Transform::Reverse],
    };
    for id in &ids {
        for &t in transforms {
            let n = store.materialize_counterfactuals(id, &bundle, t)?;
            println!("{id}  {}  {n} rows", t.name());
        }
    }
    store.save(&a.store)?;
    Ok(0)
}

pub fn rules_check(file: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let specs = parse_rule_specs(&text)?;
    let catalog = SchemaCatalog::standard();
    let mut bad = 0;
    for s in &specs {
        match s.compile(&catalog) {
            Ok(r) => println!("ok     {}  [{}]  {}", r.name, r.class.name(), r.canonical_text()),
            Err(e) => {
                bad += 1;
                println!("error  {e}");
            }
        }
    }
    println!("{} rules, {bad} invalid", specs.len());
    Ok(if bad > 0 { 2 } else { 0 })
}

pub fn load_rules(path: &Path) -> Result<Vec<QueryRule>> {
    Ok(towcheck_core::dsl::load_rule_file(path).with_context(|| format!("loading {}", path.display()))?)
}

pub fn query(a: QueryArgs) -> Result<i32> {
    let store = TreeStore::load(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    let rules = load_rules(&a.rules)?;
    let scope = Scope {
        episodes: a.episode.clone(),
        model_predicted_only: a.predicted_only,
    };
    let reports = evaluate_all(&rules, &store, &scope)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = create(&a.out)?;
    write_reports_jsonl(&reports, &mut w)?;
    print!("{}", summary_table(&reports));
    let failed = reports.iter().filter(|r| r.is_failure()).count();
    if failed > 0 {
        println!("{failed} sound rule(s) matched");
        return Ok(1);
    }
    Ok(0)
}

pub fn serve(a: ServeArgs) -> Result<i32> {
    let store = TreeStore::load(&a.snapshot).with_context(|| format!("loading {}", a.snapshot.display()))?;
    let rules = match &a.rules {
        Some(p) => load_rules(p)?,
        None => Vec::new(),
    };
    let state = crate::api::AppState::new(store, rules);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        println!("serving {} on http://{}", a.snapshot.display(), listener.local_addr()?);
        axum::serve(listener, crate::api::router(state)).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(0)
}
