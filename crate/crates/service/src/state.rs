use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use frk_core::calibration::{BeadClass, CalibrationReport, Detection};
use frk_core::image::Gray16;
use frk_core::metrics::MetricsReport;
use frk_core::pipeline::Timing;
use frk_core::volume::{save_volume, Dtype, Volume};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::error::{ApiError, ApiResult, ErrorBody};

pub const SESSION_HEADER: &str = "x-frk-session";
pub const DEFAULT_SESSION: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeDescriptor {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    /// Label ids present in a uint8 volume.
    pub labels: Vec<u8>,
}

impl VolumeDescriptor {
    pub fn of(id: &str, name: Option<String>, v: &Volume) -> Self {
        VolumeDescriptor {
            id: id.to_string(),
            name,
            dims: v.dims(),
            spacing_mm: v.spacing_mm(),
            origin_mm: v.origin_mm(),
            dtype: frk_core::volume::VolumeHeader::of(v).dtype,
            labels: match v.dtype() {
                Dtype::Uint8 => v.label_ids(),
                Dtype::Int16 => Vec::new(),
            },
        }
    }
}

pub struct StoredVolume {
    pub descriptor: VolumeDescriptor,
    pub volume: Arc<Volume>,
}

/// An uploaded or rendered image, addressed by the hash of its PGM bytes.
#[derive(Debug, Clone)]
pub struct StoredImage {
    pub pgm: Arc<Vec<u8>>,
    pub image: Arc<Gray16>,
    pub camera: Option<[[f64; 4]; 3]>,
    pub pixel_pitch_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewPoint {
    pub id: u64,
    pub u: f64,
    pub v: f64,
    pub radius_px: f64,
    pub class: BeadClass,
    /// Hough score; zero for points added by the user.
    pub score: f64,
    pub user_edited: bool,
}

impl ReviewPoint {
    pub fn detection(&self) -> Detection {
        Detection {
            center: [self.u, self.v],
            radius_px: self.radius_px,
            score: self.score,
            class: self.class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(flatten)]
    pub report: CalibrationReport,
    /// Review point id of every detection index the report refers to.
    pub point_ids: Vec<u64>,
}

/// Fiducial review of one image: suggestions, user edits and the latest solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub image_id: String,
    pub points: Vec<ReviewPoint>,
    pub applied_ops: Vec<String>,
    pub next_point_id: u64,
    pub solve: Option<SolveResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditKind {
    Add { u: f64, v: f64, class: BeadClass },
    Move { point_id: u64, u: f64, v: f64 },
    Delete { point_id: u64 },
    Reclass { point_id: u64, class: BeadClass },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOp {
    pub op_id: String,
    #[serde(flatten)]
    pub kind: EditKind,
}

impl Review {
    pub fn new(image_id: &str, detections: &[Detection]) -> Self {
        let points = detections
            .iter()
            .enumerate()
            .map(|(i, d)| ReviewPoint {
                id: i as u64,
                u: d.center[0],
                v: d.center[1],
                radius_px: d.radius_px,
                class: d.class,
                score: d.score,
                user_edited: false,
            })
            .collect();
        Review {
            image_id: image_id.to_string(),
            points,
            applied_ops: Vec::new(),
            next_point_id: detections.len() as u64,
            solve: None,
        }
    }

    fn point_mut(&mut self, id: u64) -> ApiResult<&mut ReviewPoint> {
        self.points
            .iter_mut()
            .find(|p| p.id == id)
            .ok_or_else(|| ApiError::not_found("point_id", &id.to_string()))
    }

    /// Applies a batch atomically; ops whose id was already applied are skipped.
    pub fn apply(&mut self, ops: &[EditOp]) -> ApiResult<()> {
        let mut next = self.clone();
        for op in ops {
            if next.applied_ops.contains(&op.op_id) {
                continue;
            }
            let finite = |u: f64, v: f64| {
                if u.is_finite() && v.is_finite() {
                    Ok(())
                } else {
                    Err(ApiError::invalid("u", "coordinates must be finite"))
                }
            };
            match op.kind {
                EditKind::Add { u, v, class } => {
                    finite(u, v)?;
                    let id = next.next_point_id;
                    next.next_point_id += 1;
                    next.points.push(ReviewPoint {
                        id,
                        u,
                        v,
                        radius_px: 0.0,
                        class,
                        score: 0.0,
                        user_edited: true,
                    });
                }
                EditKind::Move { point_id, u, v } => {
                    finite(u, v)?;
                    let p = next.point_mut(point_id)?;
                    p.u = u;
                    p.v = v;
                    p.user_edited = true;
                }
                EditKind::Delete { point_id } => {
                    next.point_mut(point_id)?;
                    next.points.retain(|p| p.id != point_id);
                }
                EditKind::Reclass { point_id, class } => {
                    let p = next.point_mut(point_id)?;
                    p.class = class;
                    p.user_edited = true;
                }
            }
            next.applied_ops.push(op.op_id.clone());
            next.solve = None;
        }
        *self = next;
        Ok(())
    }

    pub fn detections(&self) -> Vec<Detection> {
        self.points.iter().map(ReviewPoint::detection).collect()
    }
}

#[derive(Debug, Default)]
pub struct Session {
    pub volumes: BTreeSet<String>,
    pub images: HashMap<String, StoredImage>,
    pub reviews: HashMap<String, Review>,
}

impl Session {
    pub fn image(&self, id: &str) -> ApiResult<&StoredImage> {
        self.images.get(id).ok_or_else(|| ApiError::not_found("image_id", id))
    }
}

pub struct StoredGrid {
    pub volume: Volume,
    pub center_mm: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructResult {
    pub grid_id: String,
    pub center_mm: [f64; 3],
    pub occupied_fraction: f64,
    pub views: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub status: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ReconstructResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    /// Artifacts are written through to this directory when set.
    pub data_dir: Option<PathBuf>,
    /// Concurrent reconstruction jobs; defaults to the available cores.
    pub workers: Option<usize>,
}

pub struct Inner {
    pub volumes: RwLock<BTreeMap<String, Arc<StoredVolume>>>,
    pub sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    pub grids: RwLock<HashMap<String, Arc<StoredGrid>>>,
    pub jobs: Mutex<BTreeMap<u64, Job>>,
    pub next_job: AtomicU64,
    pub workers: Arc<Semaphore>,
    pub data_dir: Option<PathBuf>,
}

/// Shared service state; cloning shares the stores.
#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl AppState {
    pub fn new(cfg: Config) -> Self {
        let workers = cfg
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        AppState(Arc::new(Inner {
            volumes: RwLock::default(),
            sessions: Mutex::default(),
            grids: RwLock::default(),
            jobs: Mutex::default(),
            next_job: AtomicU64::new(1),
            workers: Arc::new(Semaphore::new(workers)),
            data_dir: cfg.data_dir,
        }))
    }

    /// State preloaded with the five-level lumbar phantom as `demo-hu`
    /// (int16) and `demo-labels` (uint8).
    pub fn with_demo(cfg: Config) -> frk_core::Result<Self> {
        let state = AppState::new(cfg);
        let (hu, labels) = demo_volumes()?;
        state.add_volume(Some("demo-hu".into()), hu)?;
        state.add_volume(Some("demo-labels".into()), labels)?;
        Ok(state)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.0.data_dir.as_deref()
    }

    pub fn persist(&self, rel: &str, bytes: &[u8]) -> frk_core::Result<()> {
        if let Some(dir) = self.data_dir() {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| frk_core::Error::io(format!("creating {}", parent.display()), e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| frk_core::Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    pub fn persist_volume(&self, rel: &str, v: &Volume) -> frk_core::Result<()> {
        if let Some(dir) = self.data_dir() {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| frk_core::Error::io(format!("creating {}", parent.display()), e))?;
            }
            save_volume(v, &path)?;
        }
        Ok(())
    }

    /// Stores a volume under its content hash and returns its descriptor.
    pub fn add_volume(&self, name: Option<String>, v: Volume) -> frk_core::Result<VolumeDescriptor> {
        let id = frk_core::hash::volume_hash(&v);
        if let Some(existing) = self.0.volumes.read().expect("volume store").get(&id) {
            return Ok(existing.descriptor.clone());
        }
        self.persist_volume(&format!("volumes/{id}.vjson"), &v)?;
        let descriptor = VolumeDescriptor::of(&id, name, &v);
        self.0.volumes.write().expect("volume store").insert(
            id,
            Arc::new(StoredVolume {
                descriptor: descriptor.clone(),
                volume: Arc::new(v),
            }),
        );
        Ok(descriptor)
    }

    pub fn volume(&self, id: &str) -> ApiResult<Arc<StoredVolume>> {
        self.0
            .volumes
            .read()
            .expect("volume store")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("volume_id", id))
    }

    pub fn volumes(&self) -> Vec<VolumeDescriptor> {
        self.0
            .volumes
            .read()
            .expect("volume store")
            .values()
            .map(|v| v.descriptor.clone())
            .collect()
    }

    pub fn session(&self, id: &str) -> Arc<tokio::sync::Mutex<Session>> {
        self.0
            .sessions
            .lock()
            .expect("session table")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    pub fn grid(&self, id: &str) -> ApiResult<Arc<StoredGrid>> {
        self.0
            .grids
            .read()
            .expect("grid store")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("grid_id", id))
    }

    pub fn job(&self, id: u64) -> Option<Job> {
        self.0.jobs.lock().expect("job table").get(&id).cloned()
    }

    pub fn new_job(&self) -> u64 {
        let id = self.0.next_job.fetch_add(1, Ordering::Relaxed);
        self.0.jobs.lock().expect("job table").insert(
            id,
            Job {
                id,
                status: JobState::Pending,
                result: None,
                error: None,
            },
        );
        id
    }

    pub fn update_job(&self, id: u64, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.0.jobs.lock().expect("job table").get_mut(&id) {
            f(job);
        }
    }
}

/// HU and label volumes of the five-level lumbar phantom at 0.5 mm.
pub fn demo_volumes() -> frk_core::Result<(Volume, Volume)> {
    use frk_core::pipeline::DEFAULT_PHANTOM_SPACING_MM;
    use frk_core::volume::{rasterize_phantom, Phantom};
    let ph = Phantom::lumbar(5);
    let lattice = ph.fitted_lattice(DEFAULT_PHANTOM_SPACING_MM, 2.0 * DEFAULT_PHANTOM_SPACING_MM);
    rasterize_phantom(&ph, &lattice)
}
