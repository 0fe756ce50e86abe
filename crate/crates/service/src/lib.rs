//! HTTP JSON API over the twin store, the risk model and the rule table.
//!
//! Reads run concurrently. Twin writes go through the store's write lock and
//! rule changes through the revision book, so each store has one writer at a
//! time.

pub mod error;
pub mod routes;
pub mod state;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

pub use error::{ApiError, ErrorBody};
pub use routes::{assess_features, router, AssessmentResponse};
pub use state::{
    model_version, patient_seed, rules_version, AppState, Parts, RulesSnapshot, ServiceConfig, StartupError, Verdict,
};

/// Binds `addr` and serves until `shutdown` resolves. Observations are
/// synced before they are acknowledged, so in-flight requests are the only
/// thing graceful shutdown waits for.
pub async fn serve<F>(state: Arc<AppState>, addr: SocketAddr, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
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
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}
