use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::Json;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use frk_core::calibration::{
    calibrate_detections, detect_fiducials, DetectOptions, FiducialSet, Polarity, DEFAULT_GATE_PX,
};
use frk_core::carve::{CarveMode, GridSpec, OriginMode};
use frk_core::geometry::{CameraFile, CameraMatrix, DEFAULT_PIXEL_PITCH_MM};
use frk_core::hash::{content_hash, volume_hash};
use frk_core::image::decode_pgm;
use frk_core::metrics::DEFAULT_TAU_MM;
use frk_core::pipeline::{reconstruct_images, CarveSource, ReconstructOptions, RenderSpec, Scene, Scorer};
use frk_core::volume::io::encode_raw;
use frk_core::volume::{Dtype, VolumeHeader};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::state::{
    AppState, EditOp, Job, ReconstructResult, Review, SolveResult, StoredGrid, StoredImage, VolumeDescriptor,
    DEFAULT_SESSION, SESSION_HEADER,
};

/// Largest accepted render side.
pub const MAX_RENDER_PX: usize = 4096;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "json", e.to_string(), None))
}

fn session_id(headers: &HeaderMap) -> String {
    headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .unwrap_or(DEFAULT_SESSION)
        .to_string()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn camera_from(p: &[[f64; 4]; 3]) -> frk_core::Result<CameraMatrix<f64>> {
    CameraFile {
        p: *p,
        k: None,
        r: None,
        x_o: None,
    }
    .to_camera()
}

fn camera_rows(cam: &CameraMatrix<f64>) -> [[f64; 4]; 3] {
    CameraFile::from_camera(cam).p
}

pub async fn list_volumes(State(state): State<AppState>) -> Json<Vec<VolumeDescriptor>> {
    Json(state.volumes())
}

/// Multipart upload with a `header` part (`.vjson` text) and a `raw` part.
pub async fn upload_volume(
    State(state): State<AppState>,
    headers: HeaderMap,
    mut form: Multipart,
) -> ApiResult<Json<VolumeDescriptor>> {
    let (mut header, mut raw, mut name) = (None, None, None);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::invalid("multipart", e.to_string()))?
    {
        let part = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::invalid(&part, e.to_string()))?;
        match part.as_str() {
            "header" => header = Some(bytes),
            "raw" => raw = Some(bytes),
            "name" => name = Some(String::from_utf8_lossy(&bytes).into_owned()),
            _ => {}
        }
    }
    let header = header.ok_or_else(|| ApiError::invalid("header", "missing `header` part"))?;
    let raw = raw.ok_or_else(|| ApiError::invalid("raw", "missing `raw` part"))?;
    let header: VolumeHeader = serde_json::from_slice(&header)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "json", e.to_string(), Some("header")))?;
    let desc = blocking(move || -> frk_core::Result<_> {
        let v = header.decode(&raw)?;
        state.add_volume(name, v).map(|d| (state, d))
    })
    .await??;
    let (state, desc) = desc;
    let session = state.session(&session_id(&headers));
    session.lock().await.volumes.insert(desc.id.clone());
    Ok(Json(desc))
}

#[derive(Debug, Clone, Deserialize)]
pub struct RenderRequest {
    pub volume_id: String,
    #[serde(flatten)]
    pub spec: RenderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub image_id: String,
    pub pgm_base64: String,
    pub raw_min: f64,
    pub raw_max: f64,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "P")]
    pub p: [[f64; 4]; 3],
}

pub async fn render(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<RenderResponse>> {
    let req: RenderRequest = parse(&body)?;
    if req.spec.width() > MAX_RENDER_PX {
        return Err(ApiError::invalid("width", format!("at most {MAX_RENDER_PX}")));
    }
    if req.spec.height() > MAX_RENDER_PX {
        return Err(ApiError::invalid("height", format!("at most {MAX_RENDER_PX}")));
    }
    let vol = state.volume(&req.volume_id)?.volume.clone();
    let spec = req.spec;
    let (cam, img) = blocking(move || spec.render(&vol)).await??;
    let image_id = content_hash(&img.pgm);
    state.persist(&format!("images/{image_id}.pgm"), &img.pgm)?;
    let decoded = decode_pgm(&img.pgm)?;
    let p = camera_rows(&cam);
    let stored = StoredImage {
        pgm: Arc::new(img.pgm),
        image: Arc::new(decoded.image),
        camera: Some(p),
        pixel_pitch_mm: Some(spec.pixel_pitch_mm()),
    };
    let response = RenderResponse {
        image_id: image_id.clone(),
        pgm_base64: B64.encode(stored.pgm.as_slice()),
        raw_min: img.raw_min,
        raw_max: img.raw_max,
        width: img.width,
        height: img.height,
        p,
    };
    state
        .session(&session_id(&headers))
        .lock()
        .await
        .images
        .insert(image_id, stored);
    Ok(Json(response))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ImageUpload {
    pub pgm_base64: String,
    #[serde(default, rename = "P")]
    pub p: Option<[[f64; 4]; 3]>,
    #[serde(default)]
    pub pixel_pitch_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
}

pub async fn upload_image(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ImageDescriptor>> {
    let req: ImageUpload = parse(&body)?;
    let bytes = B64
        .decode(req.pgm_base64.as_bytes())
        .map_err(|e| ApiError::invalid("pgm_base64", e.to_string()))?;
    let pgm = decode_pgm(&bytes)?;
    if let Some(p) = &req.p {
        camera_from(p)?;
    }
    let image_id = content_hash(&bytes);
    state.persist(&format!("images/{image_id}.pgm"), &bytes)?;
    let desc = ImageDescriptor {
        image_id: image_id.clone(),
        width: pgm.image.width(),
        height: pgm.image.height(),
        maxval: pgm.maxval,
    };
    let stored = StoredImage {
        pgm: Arc::new(bytes),
        image: Arc::new(pgm.image),
        camera: req.p,
        pixel_pitch_mm: req.pixel_pitch_mm,
    };
    state
        .session(&session_id(&headers))
        .lock()
        .await
        .images
        .insert(image_id, stored);
    Ok(Json(desc))
}

#[derive(Debug, Clone, Deserialize)]
pub struct DetectRequest {
    pub image_id: String,
    /// `[min, max]` bead radius; defaults follow the image's pixel pitch.
    #[serde(default)]
    pub radii_px: Option<[f64; 2]>,
    #[serde(default)]
    pub polarity: Option<Polarity>,
    #[serde(default)]
    pub class_threshold_px: Option<f64>,
}

pub async fn detect(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Review>> {
    let req: DetectRequest = parse(&body)?;
    let session = state.session(&session_id(&headers));
    let stored = session.lock().await.image(&req.image_id)?.clone();
    let mut opts = match req.radii_px {
        Some([lo, hi]) => {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(ApiError::invalid("radii_px", "need 0 < min ≤ max"));
            }
            DetectOptions::new(lo, hi)
        }
        None => DetectOptions::for_geometry(
            stored.pixel_pitch_mm.unwrap_or(DEFAULT_PIXEL_PITCH_MM),
            frk_core::calibration::NOMINAL_MAGNIFICATION,
        ),
    };
    if let Some(p) = req.polarity {
        opts = opts.with_polarity(p);
    }
    if let Some(t) = req.class_threshold_px {
        opts.class_threshold_px = t;
    }
    let image = stored.image.clone();
    let detections = blocking(move || detect_fiducials(image.as_ref(), &opts)).await?;
    let review = Review::new(&req.image_id, &detections);
    session.lock().await.reviews.insert(req.image_id, review.clone());
    Ok(Json(review))
}

#[derive(Debug, Clone, Deserialize)]
pub struct EditRequest {
    pub image_id: String,
    pub ops: Vec<EditOp>,
}

pub async fn edit(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Review>> {
    let req: EditRequest = parse(&body)?;
    let session = state.session(&session_id(&headers));
    let mut guard = session.lock().await;
    let review = guard
        .reviews
        .get_mut(&req.image_id)
        .ok_or_else(|| ApiError::not_found("image_id", &req.image_id))?;
    review.apply(&req.ops)?;
    Ok(Json(review.clone()))
}

#[derive(Debug, Clone, Deserialize)]
pub struct SolveRequest {
    pub image_id: String,
    pub fiducials3d: FiducialSet,
    #[serde(default)]
    pub pixel_pitch_mm: Option<f64>,
    #[serde(default)]
    pub gate_px: Option<f64>,
}

pub async fn solve(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<SolveResult>> {
    let req: SolveRequest = parse(&body)?;
    let session = state.session(&session_id(&headers));
    let (review, pitch) = {
        let guard = session.lock().await;
        let pitch = req
            .pixel_pitch_mm
            .or(guard.image(&req.image_id)?.pixel_pitch_mm)
            .unwrap_or(DEFAULT_PIXEL_PITCH_MM);
        let review = guard
            .reviews
            .get(&req.image_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("image_id", &req.image_id))?;
        (review, pitch)
    };
    let gate = req.gate_px.unwrap_or(DEFAULT_GATE_PX);
    let detections = review.detections();
    let fiducials = req.fiducials3d;
    let res = blocking(move || calibrate_detections(&detections, &fiducials, pitch, gate)).await??;
    let result = SolveResult {
        report: frk_core::calibration::CalibrationReport::from_result(&res),
        point_ids: review.points.iter().map(|p| p.id).collect(),
    };
    let mut guard = session.lock().await;
    if let Some(current) = guard.reviews.get_mut(&req.image_id) {
        // Edits that arrived during the solve make it stale.
        if current.applied_ops == review.applied_ops && current.points == review.points {
            current.solve = Some(result.clone());
        }
    }
    Ok(Json(result))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ViewRef {
    pub image_id: String,
    #[serde(default, rename = "P")]
    pub p: Option<[[f64; 4]; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GroundTruthRef {
    pub labels_volume_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReconstructRequest {
    pub views: Vec<ViewRef>,
    #[serde(default)]
    pub mode: CarveMode,
    #[serde(default)]
    pub source: CarveSource,
    #[serde(default = "default_origin")]
    pub origin: OriginMode,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub tau_mm: Option<f64>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruthRef>,
}

fn default_origin() -> OriginMode {
    OriginMode::Triangulated
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: u64,
}

pub async fn reconstruct(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    let req: ReconstructRequest = parse(&body)?;
    let mut images = Vec::with_capacity(req.views.len());
    let mut cams = Vec::with_capacity(req.views.len());
    {
        let session = state.session(&session_id(&headers));
        let guard = session.lock().await;
        for (i, v) in req.views.iter().enumerate() {
            let stored = guard.image(&v.image_id)?;
            let p =
                v.p.or(stored.camera)
                    .ok_or_else(|| ApiError::invalid("P", format!("view {i} has no camera")))?;
            cams.push(camera_from(&p)?);
            images.push(stored.image.clone());
        }
    }
    let labels = req
        .ground_truth
        .as_ref()
        .map(|gt| state.volume(&gt.labels_volume_id).map(|v| (v.volume.clone(), gt.label)))
        .transpose()?;
    if let Some((v, _)) = &labels {
        if v.dtype() != Dtype::Uint8 {
            return Err(ApiError::invalid(
                "labels_volume_id",
                "ground truth needs a uint8 label volume",
            ));
        }
    }
    let opts = ReconstructOptions {
        mode: req.mode,
        source: req.source,
        origin: req.origin,
        grid: req.grid.unwrap_or_default(),
        tau_mm: req.tau_mm.unwrap_or(DEFAULT_TAU_MM),
    };
    let job_id = state.new_job();
    let st = state.clone();
    tokio::spawn(async move {
        let permit = st.0.workers.clone().acquire_owned().await;
        st.update_job(job_id, |j| j.status = crate::state::JobState::Running);
        let worker_state = st.clone();
        let outcome = tokio::task::spawn_blocking(move || -> frk_core::Result<ReconstructResult> {
            let images: Vec<_> = images.iter().map(|i| i.map(f64::from)).collect();
            let scorer = labels
                .map(|(v, label)| -> frk_core::Result<Scorer> {
                    let scene = Scene::new(None, (*v).clone())?;
                    Scorer::new(&scene, label, opts.grid)
                })
                .transpose()?;
            let (rec, metrics) = reconstruct_images(&images, &cams, &opts, scorer.as_ref())?;
            let vol = rec.grid.to_volume()?;
            let grid_id = volume_hash(&vol);
            worker_state.persist_volume(&format!("grids/{grid_id}.vjson"), &vol)?;
            worker_state.0.grids.write().expect("grid store").insert(
                grid_id.clone(),
                Arc::new(StoredGrid {
                    volume: vol,
                    center_mm: rec.center_mm,
                }),
            );
            Ok(ReconstructResult {
                grid_id,
                center_mm: rec.center_mm,
                occupied_fraction: rec.grid.occupied_fraction(),
                views: cams.len(),
                metrics,
                timing: rec.timing,
            })
        })
        .await;
        drop(permit);
        st.update_job(job_id, |j| match outcome {
            Ok(Ok(r)) => {
                j.status = crate::state::JobState::Done;
                j.result = Some(r);
            }
            Ok(Err(e)) => {
                log::info!("job {job_id} failed: {e}");
                j.status = crate::state::JobState::Failed;
                j.error = Some(e.into());
            }
            Err(e) => {
                j.status = crate::state::JobState::Failed;
                j.error = Some(ApiError::internal(format!("worker failed: {e}")).body);
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id })))
}

pub async fn job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    id.parse::<u64>()
        .ok()
        .and_then(|n| state.job(n))
        .map(Json)
        .ok_or_else(|| ApiError::not_found("job_id", &id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDownload {
    pub id: String,
    pub header: VolumeHeader,
    pub raw_base64: String,
    pub center_mm: [f64; 3],
}

pub async fn grid(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<GridDownload>> {
    let g = state.grid(&id)?;
    Ok(Json(GridDownload {
        header: VolumeHeader::of(&g.volume),
        raw_base64: B64.encode(encode_raw(&g.volume)),
        center_mm: g.center_mm,
        id,
    }))
}
