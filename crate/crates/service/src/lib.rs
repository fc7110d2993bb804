//! HTTP service for correcting extracted lane graphs with a human in the
//! loop: load scenes, auto-extract, trace from a clicked bin, delete lanes,
//! and score the result against ground truth.

pub mod annotator;
pub mod api;
pub mod session;
pub mod store;

use std::future::Future;
use std::sync::Arc;

pub use api::{router, ApiError, AppState};
pub use session::{Action, EditEntry, Session, SessionError, Workspace};
pub use store::{SceneCatalog, SessionLog};

/// Serves until `shutdown` resolves, then drains in-flight requests.
/// Session logs are flushed per record, so nothing is pending afterwards.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
