use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use cagecoach_cli::{
    cmd_inspect, cmd_policy_add, cmd_publish, cmd_register_requester, cmd_request, cmd_request_via_metafile,
    format_summary, CliError, CredentialBundle, OwnerWorkspace, PolicyAddArgs, PublishArgs,
};
use cagecoach_server::{serve_dcs, serve_static, Dcs, FetchLimits, HostConfig, HttpFetcher};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cagecoach",
    version,
    about = "Publish owner-controlled data and request redacted views of it"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a file into the workspace outbox and register its profile.
    Publish {
        #[arg(long, default_value = ".")]
        workspace: PathBuf,
        input: PathBuf,
        /// Base URL of the DCS that answers for this data.
        #[arg(long)]
        owner_url: String,
        /// Where the encrypted file will be hosted.
        #[arg(long)]
        data_url: String,
        #[arg(long = "tag", value_parser = parse_pair)]
        tags: Vec<(String, String)>,
        #[arg(long)]
        description: Option<String>,
        #[arg(long)]
        key_id: Option<String>,
    },
    /// Create requester credentials and write the bundle to hand over.
    RegisterRequester {
        #[arg(long, default_value = ".")]
        workspace: PathBuf,
        id: String,
        #[arg(long)]
        bundle_out: PathBuf,
    },
    /// Append a redaction op to the workspace policy.
    PolicyAdd {
        #[arg(long, default_value = ".")]
        workspace: PathBuf,
        /// datatype, item or requester
        #[arg(long)]
        scope_kind: String,
        #[arg(long)]
        scope_key: String,
        #[arg(long)]
        action: String,
        #[arg(long, default_value = "")]
        target: String,
        #[arg(long = "param", value_parser = parse_pair)]
        params: Vec<(String, String)>,
    },
    /// Fetch and print a metafile.
    Inspect { metafile_url: String },
    /// Ask a DCS for a redacted view of some data.
    Request {
        /// DCS base URL. Taken from the metafile when --metafile-url is given.
        #[arg(long, required_unless_present = "metafile_url")]
        dcs_url: Option<String>,
        #[arg(long, required_unless_present = "metafile_url", conflicts_with = "metafile_url")]
        data_url: Option<String>,
        #[arg(long)]
        metafile_url: Option<String>,
        /// Credential bundle from the owner. Omit for an anonymous request.
        #[arg(long)]
        credentials: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run the Data Control Server. SIGHUP reloads the config directory.
    ServeDcs {
        #[arg(long, alias = "workspace", default_value = ".")]
        config_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8700")]
        listen_addr: String,
        #[arg(long, default_value_t = FetchLimits::default().max_bytes)]
        max_fetch_bytes: u64,
        #[arg(long, default_value_t = FetchLimits::default().timeout.as_secs())]
        fetch_timeout_secs: u64,
    },
    /// Serve a directory of encrypted files read-only.
    ServeHost {
        #[arg(long)]
        root_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8701")]
        listen_addr: String,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

async fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Publish {
            workspace,
            input,
            owner_url,
            data_url,
            tags,
            description,
            key_id,
        } => {
            let ws = OwnerWorkspace::open(workspace)?;
            let out = cmd_publish(
                &ws,
                PublishArgs {
                    input: &input,
                    owner_url: &owner_url,
                    data_url: &data_url,
                    tags: tags.into_iter().collect(),
                    description,
                    key_id: key_id.as_deref(),
                },
            )?;
            println!("{}", out.envelope_path.display());
            println!("{}", out.metafile_path.display());
        }
        Command::RegisterRequester {
            workspace,
            id,
            bundle_out,
        } => {
            let ws = OwnerWorkspace::open(workspace)?;
            cmd_register_requester(&ws, &id, &bundle_out)?;
            println!("{}", bundle_out.display());
        }
        Command::PolicyAdd {
            workspace,
            scope_kind,
            scope_key,
            action,
            target,
            params,
        } => {
            let ws = OwnerWorkspace::open(workspace)?;
            cmd_policy_add(
                &ws,
                PolicyAddArgs {
                    scope_kind: &scope_kind,
                    scope_key: &scope_key,
                    action: &action,
                    target: &target,
                    params: params.into_iter().collect::<BTreeMap<_, _>>(),
                },
            )?;
        }
        Command::Inspect { metafile_url } => {
            let m = cmd_inspect(&reqwest::Client::new(), &metafile_url).await?;
            print!("{}", format_summary(&m));
        }
        Command::Request {
            dcs_url,
            data_url,
            metafile_url,
            credentials,
            output,
        } => {
            let creds = credentials.as_deref().map(CredentialBundle::load).transpose()?;
            let client = reqwest::Client::new();
            match (metafile_url, dcs_url, data_url) {
                (Some(m), _, _) => cmd_request_via_metafile(&client, &m, creds.as_ref(), &output).await?,
                (None, Some(dcs), Some(data)) => cmd_request(&client, &dcs, &data, creds.as_ref(), &output).await?,
                _ => {
                    return Err(CliError::Validation(
                        "need --dcs-url and --data-url, or --metafile-url".into(),
                    ))
                }
            };
            eprintln!("ok: wrote {}", output.display());
        }
        Command::ServeDcs {
            config_dir,
            listen_addr,
            max_fetch_bytes,
            fetch_timeout_secs,
        } => {
            let limits = FetchLimits {
                max_bytes: max_fetch_bytes,
                timeout: Duration::from_secs(fetch_timeout_secs),
            };
            let dcs = Dcs::from_config_dir(&config_dir)
                .map_err(|e| CliError::Validation(e.to_string()))?
                .with_fetcher(Arc::new(HttpFetcher::new(limits)));
            let dcs = Arc::new(dcs);
            let handle = serve_dcs(dcs.clone(), &listen_addr).await?;
            tracing::info!("DCS listening on {}", handle.url());
            watch_reload(dcs);
            handle.wait().await?;
        }
        Command::ServeHost { root_dir, listen_addr } => {
            let handle = serve_static(&HostConfig { root_dir, listen_addr }).await?;
            tracing::info!("data host listening on {}", handle.url());
            handle.wait().await?;
        }
    }
    Ok(())
}

#[cfg(unix)]
fn watch_reload(dcs: Arc<Dcs>) {
    use tokio::signal::unix::{signal, SignalKind};
    let Ok(mut hup) = signal(SignalKind::hangup()) else {
        tracing::warn!("SIGHUP unavailable; reload disabled");
        return;
    };
    tokio::spawn(async move {
        while hup.recv().await.is_some() {
            let dcs = dcs.clone();
            let result = tokio::task::spawn_blocking(move || dcs.reload()).await;
            match result {
                Ok(Ok(())) => tracing::info!("configuration reloaded"),
                Ok(Err(e)) => tracing::error!("reload failed, keeping previous configuration: {e}"),
                Err(e) => tracing::error!("reload task failed: {e}"),
            }
        }
    });
}

#[cfg(not(unix))]
fn watch_reload(_dcs: Arc<Dcs>) {}
