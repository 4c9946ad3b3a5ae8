use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use typeahead_client::TypeaheadClient;
use typeahead_core::api::{FeedbackAction, FeedbackEvent, HealthStatus, SuggestRequest, Trigger};
use typeahead_core::charlm::CharModel;
use typeahead_core::config::Config;
use typeahead_core::corpus::{read_corpus, RawNote};
use typeahead_core::decoder::Source;
use typeahead_core::ensemble::{Ensemble, UserProfile};
use typeahead_core::markov::WordModel;
use typeahead_core::metrics::{
    alpha_grid_search, render_table, simulate, CascadeMode, EvalSetup, HeldOutNote, SimulationSummary, SlicePolicy,
};
use typeahead_core::store::{context_hash, ModelKey, ModelStore};
use typeahead_core::training::{train_all, TrainOptions};
use typeahead_service::AppState;

#[derive(Parser)]
#[command(
    name = "typeahead",
    version,
    about = "Personalized text completion: train, evaluate, serve"
)]
struct Cli {
    /// TOML config file shared with the service.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the global, character and per-user models into a store.
    Train(TrainArgs),
    /// Calibrate and compare ensemble weights on held-out notes.
    Eval(EvalArgs),
    /// Replay held-out notes keystroke by keystroke.
    Simulate(SimulateArgs),
    /// Run the HTTP service until SIGINT/SIGTERM.
    Serve(ServeArgs),
    /// Ask a running service for a suggestion.
    Suggest(SuggestArgs),
    /// Send one feedback event to a running service.
    Feedback(FeedbackArgs),
    /// Retrain one user's model on a running service.
    TrainUser(TrainUserArgs),
    /// Print a running service's health; exits 1 when degraded.
    Health(ServerArg),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Store root to write to.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    char_order: Option<usize>,
    #[arg(long)]
    window_days: Option<i64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Held-out notes.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    alpha_grid: Vec<f64>,
    /// Percent of held-out characters that should receive a suggestion.
    #[arg(long, default_value_t = 5.0)]
    target_coverage: f64,
    #[arg(long, default_value_t = 0.1)]
    tolerance: f64,
    /// Write the per-alpha reports as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    WordOnly,
    Full,
}

#[derive(Args)]
struct SimulateArgs {
    /// Held-out notes.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Replay only the first N notes.
    #[arg(long)]
    notes: Option<usize>,
    /// Write the NDJSON transcript of `--mode` here.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Corpus used by the per-user train endpoint.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct ServerArg {
    /// Service base URL; defaults to http://<bind> from the config.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TriggerArg {
    WordBoundary,
    Char,
}

#[derive(Args)]
struct SuggestArgs {
    #[command(flatten)]
    server: ServerArg,
    #[arg(long)]
    user: String,
    #[arg(long)]
    text: String,
    #[arg(long, value_enum, default_value = "word-boundary")]
    trigger: TriggerArg,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActionArg {
    Accepted,
    Rejected,
    Ignored,
}

#[derive(Args)]
struct FeedbackArgs {
    #[command(flatten)]
    server: ServerArg,
    #[arg(long)]
    user: String,
    /// Text before the suggestion.
    #[arg(long)]
    context: String,
    #[arg(long)]
    suggestion: String,
    #[arg(long, value_enum)]
    action: ActionArg,
    #[arg(long)]
    request_id: Option<String>,
    #[arg(long)]
    session_id: Option<String>,
}

#[derive(Args)]
struct TrainUserArgs {
    #[command(flatten)]
    server: ServerArg,
    #[arg(long)]
    user: String,
}

/// Failure classes with distinct exit codes.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("TYPEAHEAD_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(p) = &cli.config {
        require_file(p)?;
    }
    let config = Config::from_env(cli.config.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    match cli.command {
        Command::Train(a) => train(config, a),
        Command::Eval(a) => eval(config, a),
        Command::Simulate(a) => simulate_cmd(config, a),
        Command::Serve(a) => serve(config, a),
        Command::Suggest(a) => remote(&config, &a.server, |c| async move {
            let resp = c
                .suggest(&SuggestRequest {
                    user_id: a.user,
                    text: a.text,
                    trigger: match a.trigger {
                        TriggerArg::WordBoundary => Trigger::WordBoundary,
                        TriggerArg::Char => Trigger::Char,
                    },
                    n: a.n,
                })
                .await?;
            println!("{}", serde_json::to_string_pretty(&resp)?);
            Ok(ExitCode::SUCCESS)
        }),
        Command::Feedback(a) => remote(&config, &a.server, |c| async move {
            let event = FeedbackEvent {
                user_id: a.user,
                timestamp: chrono::Utc::now(),
                context_hash: context_hash(&a.context),
                suggestion: a.suggestion,
                action: match a.action {
                    ActionArg::Accepted => FeedbackAction::Accepted,
                    ActionArg::Rejected => FeedbackAction::Rejected,
                    ActionArg::Ignored => FeedbackAction::Ignored,
                },
                source: Source::Ensemble,
                request_id: a.request_id,
                session_id: a.session_id,
                context: Some(a.context),
                flagged: false,
            };
            let receipt = c.feedback(&event).await?;
            match receipt.flag {
                Some(flag) => println!("recorded (flagged: {flag})"),
                None => println!("recorded"),
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::TrainUser(a) => remote(&config, &a.server, |c| async move {
            let summary = c.train_user(&a.user).await?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.notes == 0 {
                eprintln!("warning: no notes for {} in the training window", summary.user_id);
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::Health(server) => remote(&config, &server, |c| async move {
            let health = c.health().await?;
            println!("{}", serde_json::to_string_pretty(&health)?);
            Ok(match health.status {
                HealthStatus::Ok => ExitCode::SUCCESS,
                HealthStatus::Degraded => ExitCode::from(1),
            })
        }),
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{}: no such file", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{}: no such directory", path.display())))
    }
}

fn read_notes(path: &Path) -> Result<Vec<RawNote>, Failure> {
    require_file(path)?;
    Ok(read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))?)
}

fn train(mut config: Config, a: TrainArgs) -> Outcome {
    if let Some(v) = a.corpus {
        config.corpus = Some(v);
    }
    if let Some(v) = a.out {
        config.store_root = v;
    }
    if let Some(v) = a.order {
        config.markov_order = v;
    }
    if let Some(v) = a.char_order {
        config.char_order = v;
    }
    if let Some(v) = a.window_days {
        config.window_days = v;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let corpus = config
        .corpus
        .clone()
        .ok_or_else(|| Failure::Usage("--corpus is required (or set `corpus` in the config)".into()))?;
    let notes = read_notes(&corpus)?;
    if notes.is_empty() {
        tracing::warn!(corpus = %corpus.display(), "corpus is empty; writing empty models");
    }
    let opts = TrainOptions {
        markov_order: config.markov_order,
        char_order: config.char_order,
        window_days: config.window_days,
        now: None,
    };
    let models = train_all(&notes, &opts).context("training")?;
    let store = ModelStore::open(&config.store_root).context("opening store")?;
    let gv = store
        .save_model(&ModelKey::Global, &models.global)
        .context("saving global model")?;
    let cv = store
        .save_model(&ModelKey::Char, models.char.markov())
        .context("saving char model")?;
    for (id, profile) in &models.users {
        store
            .save_model(&ModelKey::user(id).context("user id")?, &profile.local)
            .with_context(|| format!("saving model for {id}"))?;
    }
    println!("store         {}", config.store_root.display());
    println!("notes         {}", notes.len());
    println!(
        "global        v{gv}  tokens {}  contexts {}",
        models.global.token_count(),
        models.global.full_context_count()
    );
    println!(
        "char          v{cv}  order {}  contexts {}",
        models.char.order(),
        models.char.markov().full_context_count()
    );
    println!("users         {}", models.users.len());
    Ok(ExitCode::SUCCESS)
}

/// Loads trained models from the store and pairs them with held-out notes.
fn load_setup(config: &Config, store_root: &Path, notes: &[RawNote]) -> Result<(EvalSetup, CharModel), Failure> {
    require_dir(store_root)?;
    let store = ModelStore::open(store_root).context("opening store")?;
    if !store.has_model(&ModelKey::Global) || !store.has_model(&ModelKey::Char) {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "no trained models in {}; run `typeahead train --out {}` first",
            store_root.display(),
            store_root.display()
        )));
    }
    let global: WordModel = store.load_model(&ModelKey::Global).context("loading global model")?;
    let char = CharModel::from_markov(
        store.load_model(&ModelKey::Char).context("loading char model")?,
        config.char_params(),
    )
    .context("char model")?;
    let mut users = HashMap::new();
    for id in store.user_ids().context("listing users")? {
        let local: WordModel = store
            .load_model(&ModelKey::user(&id).context("user id")?)
            .with_context(|| format!("loading model for {id}"))?;
        users.insert(id.clone(), UserProfile::new(id, local));
    }
    let ensemble = Ensemble::new(Arc::new(global), config.ensemble()).context("ensemble")?;
    let setup = EvalSetup {
        ensemble,
        users,
        notes: notes.iter().map(HeldOutNote::from_raw).collect(),
        policy: SlicePolicy::default(),
    };
    Ok((setup, char))
}

fn eval(config: Config, a: EvalArgs) -> Outcome {
    let notes = read_notes(&a.corpus)?;
    let store_root = a.store.unwrap_or_else(|| config.store_root.clone());
    let (setup, _) = load_setup(&config, &store_root, &notes)?;
    let grid = alpha_grid_search(&setup, &a.alpha_grid, a.target_coverage, a.tolerance).context("alpha grid search")?;
    print!("{}", render_table(&grid.reports));
    println!("best alpha: {}", grid.best_alpha);
    if let Some(path) = a.report {
        let json = serde_json::to_string_pretty(&grid).context("serializing report")?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate_cmd(config: Config, a: SimulateArgs) -> Outcome {
    let mut notes = read_notes(&a.corpus)?;
    if let Some(n) = a.notes {
        notes.truncate(n);
    }
    let store_root = a.store.unwrap_or_else(|| config.store_root.clone());
    let (setup, char) = load_setup(&config, &store_root, &notes)?;
    let word_only = simulate(&setup, &char, CascadeMode::WordOnly);
    let full = simulate(&setup, &char, CascadeMode::Full);
    println!(
        "{:<10} {:>6} {:>8} {:>7} {:>9} {:>10} {:>13}",
        "mode", "notes", "chars", "shown", "accepted", "keystrokes", "effort_saved"
    );
    for s in [&word_only.summary, &full.summary] {
        print_summary(s);
    }
    if let Some(path) = a.transcript {
        let chosen = match a.mode {
            ModeArg::WordOnly => &word_only,
            ModeArg::Full => &full,
        };
        std::fs::write(&path, chosen.transcript_ndjson()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(s: &SimulationSummary) {
    let mode = match s.mode {
        CascadeMode::WordOnly => "word-only",
        CascadeMode::Full => "full",
    };
    println!(
        "{:<10} {:>6} {:>8} {:>7} {:>9} {:>10} {:>13.2}",
        mode, s.notes, s.total_chars, s.shown, s.accepted, s.keystrokes, s.effort_saved
    );
}

fn serve(mut config: Config, a: ServeArgs) -> Outcome {
    if let Some(v) = a.bind {
        config.bind = v;
    }
    if let Some(v) = a.store {
        config.store_root = v;
    }
    if let Some(v) = a.corpus {
        config.corpus = Some(v);
    }
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let state = AppState::new(config.clone()).context("opening store")?;
        if !state.models_present() {
            return Err(Failure::Runtime(anyhow::anyhow!(
                "no trained models in {}; run `typeahead train --corpus <notes> --out {}` first",
                config.store_root.display(),
                config.store_root.display()
            )));
        }
        state.load_models().context("loading models")?;
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .with_context(|| format!("binding {}", config.bind))?;
        let addr = listener.local_addr().context("local address")?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, store = %config.store_root.display(), "serving");
        typeahead_service::serve(listener, state, shutdown_signal())
            .await
            .context("server")?;
        tracing::info!("drained, exiting");
        Ok(ExitCode::SUCCESS)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        tokio::signal::ctrl_c().await.ok();
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown signal received");
}

fn remote<F, Fut>(config: &Config, server: &ServerArg, f: F) -> Outcome
where
    F: FnOnce(TypeaheadClient) -> Fut,
    Fut: std::future::Future<Output = anyhow::Result<ExitCode>>,
{
    let base = server
        .server
        .clone()
        .unwrap_or_else(|| format!("http://{}", config.bind));
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    Ok(runtime.block_on(f(TypeaheadClient::new(base)))?)
}
