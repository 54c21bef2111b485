//! HTTP facade over rendering, fiducial review, calibration and
//! reconstruction. Images are base64 PGM inside JSON; reconstructions run
//! as polled jobs on a bounded worker pool.

pub mod api;
pub mod error;
pub mod state;

use std::net::SocketAddr;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;

pub use error::{ApiError, ApiResult, ErrorBody};
pub use state::{demo_volumes, AppState, Config, SESSION_HEADER};

pub const DEFAULT_PORT: u16 = 8423;
/// Uploads carry whole CT volumes.
pub const MAX_BODY_BYTES: usize = 1 << 30;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/volumes", get(api::list_volumes).post(api::upload_volume))
        .route("/api/render", post(api::render))
        .route("/api/images", post(api::upload_image))
        .route("/api/fiducials/detect", post(api::detect))
        .route("/api/fiducials/edit", post(api::edit))
        .route("/api/calibrate/solve", post(api::solve))
        .route("/api/reconstruct", post(api::reconstruct))
        .route("/api/jobs/{id}", get(api::job))
        .route("/api/grids/{id}", get(api::grid))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
