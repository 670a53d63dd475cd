//! CageCoach network services: the Data Control Server (DCS) that answers
//! access requests, and a minimal read-only host for encrypted blobs.

pub mod dcs;
pub mod fetch;
pub mod host;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use dcs::{AccessRequest, AccessResponse, AccessStatus, Dcs, PipelineHooks, Stage};
pub use fetch::{FetchError, FetchLimits, Fetcher, HttpFetcher};
pub use host::HostConfig;
pub use state::{load_server_state, DataProfile, RequesterRecord, ServerState, StateError, Verification};

/// A server running on a background task.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.unwrap_or(Ok(()))
    }

    /// Runs until the server stops on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        self.task.await.unwrap_or(Ok(()))
    }
}

async fn spawn(listen_addr: &str, app: Router) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(listen_addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

/// Binds `listen_addr` and serves the DCS API.
pub async fn serve_dcs(dcs: Arc<Dcs>, listen_addr: &str) -> std::io::Result<ServerHandle> {
    spawn(listen_addr, dcs::router(dcs)).await
}

/// Binds `config.listen_addr` and serves `config.root_dir` read-only.
pub async fn serve_static(config: &HostConfig) -> std::io::Result<ServerHandle> {
    let app = host::host_router(&config.root_dir)?;
    spawn(&config.listen_addr, app).await
}
