//! The `optin` command line. Every subcommand mirrors an HTTP endpoint and
//! prints the same JSON body; `--at` pins the clock for replays.
//!
//! Exit codes: 0 success, 1 scenario deviation or infrastructure failure,
//! 2 usage or input error.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use optin_core::canonical::Digest;
use optin_core::consent::DenyReason;
use optin_core::engine::scenario::{run_scenario, ScenarioError};
use optin_core::engine::{OptInEngine, VerifyInput};
use optin_core::ingest::{self, SourceFormat};
use optin_core::intent::{parse_structured_intent, Aspect, Attachment, EntityType};
use optin_core::registry::{ConsentDraft, EntityRecord};
use optin_core::time::{TimeRange, Timestamp};

use crate::api::{router, AppState};
use crate::config::Config;
use crate::error::ApiError;

#[derive(Debug, Parser)]
#[command(name = "optin", version, about = "Consent registry and opt-in verification")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Registry event log (in memory when absent).
    #[arg(long, global = true)]
    pub registry: Option<PathBuf>,
    /// Ledger file (defaults to `<registry>.ledger`).
    #[arg(long, global = true)]
    pub ledger: Option<PathBuf>,
    /// Act as this rights holder.
    #[arg(long = "as", global = true, value_name = "RIGHTS_HOLDER")]
    pub as_holder: Option<String>,
    /// Bearer secret of the acting rights holder.
    #[arg(long, global = true, env = "OPTIN_CREDENTIAL", hide_env_values = true)]
    pub credential: Option<String>,
    /// Evaluation / mutation time in UTC seconds (defaults to now).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub at: Option<i64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Verify a prompt or an intent document.
    Verify {
        prompt: Option<String>,
        /// Canonical intent document (JSON) instead of a prompt.
        #[arg(long, conflicts_with = "prompt")]
        intent: Option<PathBuf>,
        /// File to digest and bind to `this <medium>`; repeatable.
        #[arg(long = "attach")]
        attach: Vec<PathBuf>,
        /// Pre-computed digest of an upload; repeatable, after `--attach` files.
        #[arg(long = "attach-digest")]
        attach_digest: Vec<Digest>,
        /// Also record the generation event when granted.
        #[arg(long)]
        unlock: bool,
    },
    /// Manage consent records.
    Consent {
        #[command(subcommand)]
        action: ConsentCommand,
    },
    /// Register entities.
    Entity {
        #[command(subcommand)]
        action: EntityCommand,
    },
    /// Register rights holders.
    Holder {
        #[command(subcommand)]
        action: HolderCommand,
    },
    /// Transparency report for a rights holder (defaults to `--as`).
    Report {
        holder: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        from: Option<i64>,
        #[arg(long, allow_hyphen_values = true)]
        until: Option<i64>,
    },
    /// Run a named walkthrough against a fresh registry.
    Scenario {
        name: String,
        /// Print the transcript as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Ledger maintenance.
    Ledger {
        #[command(subcommand)]
        action: LedgerCommand,
    },
    /// Import a preference file (`tdm_doc` or `ai_prefs_text`).
    Ingest {
        format: String,
        file: PathBuf,
        /// Store the result as a new consent version for this entity.
        #[arg(long)]
        entity: Option<String>,
    },
    /// Grant operations.
    Grant {
        #[command(subcommand)]
        action: GrantCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConsentCommand {
    /// Store a new version from a JSON draft `{rules, validity?, expected_version?}`.
    Set {
        entity: String,
        #[arg(long)]
        rules: PathBuf,
    },
    Revoke {
        entity: String,
    },
    Show {
        entity: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum EntityCommand {
    Add {
        id: String,
        #[arg(long = "type", value_parser = parse_entity_type)]
        entity_type: EntityType,
        #[arg(long)]
        name: String,
        #[arg(long = "alias")]
        aliases: Vec<String>,
        /// Parent work, for work parts.
        #[arg(long)]
        parent: Option<String>,
        #[arg(long = "part-aspect")]
        part_aspects: Vec<Aspect>,
        /// Rights holders (defaults to `--as`); repeatable.
        #[arg(long = "holder")]
        holders: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum HolderCommand {
    /// Prints the bearer secret; a random one is generated unless given.
    Add {
        id: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        secret: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LedgerCommand {
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum GrantCommand {
    Disseminate {
        grant_id: String,
        #[arg(long)]
        platform: String,
        #[arg(long)]
        purpose: String,
    },
}

fn parse_entity_type(s: &str) -> Result<EntityType, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected person, group, work or work_part, got `{s}`"))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
    #[error("{0}")]
    Api(ApiError),
}

impl<E: Into<ApiError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Api(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
            CliError::Api(e) if e.status >= 500 => 1,
            CliError::Api(_) => 2,
        }
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Failure(e.to_string()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

impl Cli {
    fn now(&self) -> Timestamp {
        self.at.map(Timestamp).unwrap_or_else(Timestamp::now)
    }

    fn credential(&self) -> Result<&str, CliError> {
        self.credential.as_deref().ok_or_else(|| CliError::Usage("--credential is required".into()))
    }

    fn config(&self) -> Result<Config, CliError> {
        let mut config = Config::load(self.config.as_deref()).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(r) = &self.registry {
            config.registry_path = Some(r.clone());
        }
        if let Some(l) = &self.ledger {
            config.ledger_path = Some(l.clone());
        }
        Ok(config)
    }

    /// Checks `--as` against the credential when both are given.
    fn acting(&self, engine: &OptInEngine) -> Result<(), CliError> {
        if let Some(holder) = &self.as_holder {
            engine.registry().authenticate(holder, self.credential()?)?;
        }
        Ok(())
    }
}

/// Parses `args` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    if let Command::Scenario { name, json } = &cli.command {
        return scenario(name, *json, out);
    }
    let config = cli.config()?;
    let engine = config.open_engine().map_err(|e| CliError::Failure(e.to_string()))?;
    let at = cli.now();

    match &cli.command {
        Command::Scenario { .. } => unreachable!("handled above"),
        Command::Serve { listen } => {
            let listen = listen.clone().unwrap_or_else(|| config.listen().to_string());
            let state = AppState { engine: Arc::new(engine), admin_token: config.admin_token.clone() };
            serve(state, &listen).map_err(|e| CliError::Failure(e.to_string()))?;
        }
        Command::Verify { prompt, intent, attach, attach_digest, unlock } => {
            let input = match (prompt, intent) {
                (_, Some(path)) => {
                    let value: serde_json::Value = serde_json::from_slice(&read_file(path)?)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                    VerifyInput::Intent(parse_structured_intent(&value)?)
                }
                (Some(text), None) => {
                    let mut attachments = Vec::new();
                    for path in attach {
                        attachments.push(Attachment::from_bytes(&read_file(path)?));
                    }
                    attachments.extend(attach_digest.iter().copied().map(Attachment::from_digest));
                    VerifyInput::prompt_with(text.clone(), attachments)
                }
                (None, None) => return Err(CliError::Usage("give a prompt or --intent <file>".into())),
            };
            let outcome = engine.verify(input, at)?;
            if *unlock && outcome.verdict.is_granted() {
                engine.unlock_generation(&outcome, at)?;
            }
            print_json(out, &outcome)?;
        }
        Command::Consent { action } => {
            cli.acting(&engine)?;
            let registry = engine.registry();
            match action {
                ConsentCommand::Set { entity, rules } => {
                    let draft: ConsentDraft = serde_json::from_slice(&read_file(rules)?)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", rules.display())))?;
                    print_json(out, &registry.upsert_consent(entity, draft, cli.credential()?, at)?)?;
                }
                ConsentCommand::Revoke { entity } => {
                    print_json(out, &registry.revoke_consent(entity, cli.credential()?, at)?)?;
                }
                ConsentCommand::Show { entity } => {
                    registry.authorize_entity(entity, cli.credential()?)?;
                    print_json(
                        out,
                        &json!({
                            "entity": registry.entity(entity),
                            "current": registry.lookup_consent(entity, at),
                            "history": registry.consent_history(entity),
                        }),
                    )?;
                }
            }
        }
        Command::Entity { action: EntityCommand::Add { id, entity_type, name, aliases, parent, part_aspects, holders } } => {
            cli.acting(&engine)?;
            let mut rights_holder_ids: BTreeSet<String> = holders.iter().cloned().collect();
            if rights_holder_ids.is_empty() {
                let holder = cli.as_holder.clone().ok_or_else(|| CliError::Usage("give --holder or --as".into()))?;
                rights_holder_ids.insert(holder);
            }
            let record = EntityRecord {
                entity_id: id.clone(),
                entity_type: *entity_type,
                display_name: name.clone(),
                aliases: aliases.iter().cloned().collect(),
                parent_entity: parent.clone(),
                rights_holder_ids,
                part_aspects: part_aspects.clone(),
            };
            let id = engine.registry().register_entity(record, cli.credential()?, at)?;
            print_json(out, &json!({ "entity_id": id, "entity": engine.registry().entity(&id) }))?;
        }
        Command::Holder { action: HolderCommand::Add { id, name, secret } } => {
            let registry = engine.registry();
            let secret = match secret {
                Some(s) => {
                    registry.register_rights_holder(id, name, s, at)?;
                    s.clone()
                }
                None => registry.create_rights_holder(id, name, at)?.1,
            };
            print_json(out, &json!({ "rights_holder_id": id, "secret": secret }))?;
        }
        Command::Report { holder, from, until } => {
            let holder = holder
                .clone()
                .or_else(|| cli.as_holder.clone())
                .ok_or_else(|| CliError::Usage("give a rights holder or --as".into()))?;
            let range = TimeRange::new(from.map(Timestamp), until.map(Timestamp)).map_err(|e| CliError::Usage(e.to_string()))?;
            print_json(out, &engine.transparency_report(&holder, cli.credential()?, range)?)?;
        }
        Command::Ledger { action: LedgerCommand::Verify } => {
            let report = engine.ledger().verify_chain().map_err(|e| CliError::Failure(e.to_string()))?;
            print_json(out, &report)?;
            if !report.valid {
                return Ok(1);
            }
        }
        Command::Ingest { format, file, entity } => {
            let format: SourceFormat = format.parse().map_err(CliError::Usage)?;
            let text = String::from_utf8(read_file(file)?).map_err(|_| CliError::Usage("file is not UTF-8".into()))?;
            let declarations = ingest::import(format, &text)?;
            let record = match entity {
                Some(entity) => {
                    cli.acting(&engine)?;
                    Some(ingest::declarations_to_consent(engine.registry(), &declarations, entity, cli.credential()?, at)?)
                }
                None => None,
            };
            print_json(out, &json!({ "declarations": declarations, "record": record }))?;
        }
        Command::Grant { action: GrantCommand::Disseminate { grant_id, platform, purpose } } => {
            print_json(out, &engine.register_dissemination(grant_id, platform, purpose, at)?)?;
        }
    }
    Ok(0)
}

fn scenario(name: &str, as_json: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let transcript = match run_scenario(name) {
        Ok(t) => t,
        Err(ScenarioError::UnknownScenario(_)) => {
            return Err(CliError::Usage(ScenarioError::UnknownScenario(name.to_string()).to_string()))
        }
        Err(ScenarioError::Engine(e)) => return Err(e.into()),
        Err(ScenarioError::Registry(e)) => return Err(e.into()),
    };
    if as_json {
        print_json(out, &transcript)?;
    } else {
        let io = |e: std::io::Error| CliError::Failure(e.to_string());
        writeln!(out, "scenario {}: {}", transcript.scenario, transcript.prompt).map_err(io)?;
        for step in &transcript.steps {
            writeln!(out, "[{}] {}", step.stage, step.detail).map_err(io)?;
        }
        let verdict = &transcript.outcome.verdict;
        writeln!(out, "overall={}", json!(verdict.overall).as_str().unwrap_or_default()).map_err(io)?;
        for v in &verdict.entity_verdicts {
            let reason = v.decision.reason.map(|r: DenyReason| format!(" ({r})")).unwrap_or_default();
            let outcome = json!(v.decision.outcome);
            writeln!(out, "  {} [{}]: {}{reason}", v.name, v.aspect, outcome.as_str().unwrap_or_default()).map_err(io)?;
        }
        if let Some(grant) = &transcript.outcome.grant {
            writeln!(
                out,
                "grant {} entities={:?} compensation_eligible={:?}",
                grant.grant_id, grant.entity_ids, grant.compensation_eligible
            )
            .map_err(io)?;
        }
        for d in &transcript.deviations {
            writeln!(out, "DEVIATION: {d}").map_err(io)?;
        }
        writeln!(out, "{} {}", if transcript.passed() { "PASS" } else { "FAIL" }, transcript.scenario).map_err(io)?;
    }
    Ok(if transcript.passed() { 0 } else { 1 })
}

fn serve(state: AppState, listen: &str) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        eprintln!("optin listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}
