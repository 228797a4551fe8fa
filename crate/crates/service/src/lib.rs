//! JSON-over-HTTP front end for searches and launch-file generation.
//!
//! Databases, models and backend profiles are loaded once at startup into
//! a [`Catalog`]; requests only read it.

mod api;
mod catalog;

pub use api::{router, ApiError, GenerateRequest, ModelRef, SearchRequest, API_PREFIX};
pub use catalog::{Catalog, DbEntry, ServiceConfig};

use std::net::SocketAddr;
use std::sync::Arc;

/// Serves `catalog` on `addr` until Ctrl-C.
pub async fn serve(catalog: Arc<Catalog>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(catalog))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
