//! End-to-end reconstruction of one labelled vertebra: render or accept
//! views, localize, estimate the cube origin, carve and score.

use std::time::Instant;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carve::{
    carve, estimate_origin, label_occupancy, CarveMode, CarveView, GridSpec, OccupancyGrid, OriginMode,
};
use crate::drr::{render_drr, render_masks, LabelGrid, PreparedVolume, RenderParams};
use crate::error::{Error, Result};
use crate::geometry::{
    sample_pose_protocol, CameraFile, CameraMatrix, Pose, ViewClass, DEFAULT_DETECTOR_PX, DEFAULT_PIXEL_PITCH_MM,
    DEFAULT_SPHERE_DIAMETER_MM,
};
use crate::image::{encode_mask_pgm, encode_pgm16, Image, Mask};
use crate::localize::{binarize, crop_transform, localize_mask, CropWindow, PixelBox, CROP_SIZE};
use crate::metrics::{evaluate_with_surface, extract_surface, MetricsReport};
use crate::volume::{rasterize_phantom, Dtype, Phantom, Volume};

pub const DEFAULT_PHANTOM_SPACING_MM: f64 = 0.5;
pub const DEFAULT_HU_THRESHOLD: f64 = 0.0;

/// Label volume (and optionally attenuation) prepared for rendering.
pub struct Scene {
    pub labels: Volume,
    pub label_grid: LabelGrid<f64>,
    pub attenuation: Option<PreparedVolume<f64>>,
}

impl Scene {
    pub fn new(hu: Option<&Volume>, labels: Volume) -> Result<Self> {
        let attenuation = hu
            .map(|v| PreparedVolume::from_hu(v, DEFAULT_HU_THRESHOLD))
            .transpose()?;
        Ok(Scene {
            label_grid: LabelGrid::new(&labels)?,
            labels,
            attenuation,
        })
    }

    /// Rasterizes a phantom with a small margin around it.
    pub fn from_phantom(ph: &Phantom, spacing_mm: f64, with_attenuation: bool) -> Result<Self> {
        let lattice = ph.fitted_lattice(spacing_mm, 2.0 * spacing_mm);
        let (hu, labels) = rasterize_phantom(ph, &lattice)?;
        Scene::new(with_attenuation.then_some(&hu), labels)
    }

    pub fn label_ids(&self) -> Vec<u8> {
        self.label_grid.label_ids()
    }

    /// Bounding-box centre of a label: the ground-truth cube centre.
    pub fn label_center(&self, label: u8) -> Result<Point3<f64>> {
        self.labels
            .label_bbox_center(label)
            .ok_or_else(|| Error::invalid("label", format!("label {label} is absent")))
    }

    /// Protocol poses aimed at a label's centre.
    pub fn protocol(&self, label: u8) -> Result<Vec<Pose>> {
        let c = self.label_center(label)?;
        sample_pose_protocol([c.x, c.y, c.z], DEFAULT_SPHERE_DIAMETER_MM)
    }

    /// Ground-truth occupancy on the lattice centred at the label's centre.
    pub fn ground_truth(&self, label: u8, spec: GridSpec) -> Result<OccupancyGrid> {
        let c = self.label_center(label)?;
        Ok(label_occupancy(
            &self.labels,
            label,
            spec,
            [c.x, c.y, c.z],
            OriginMode::GroundTruth,
        ))
    }
}

/// What the carver samples in each crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarveSource {
    /// Projected label silhouette.
    #[default]
    Mask,
    /// DRR intensities normalized by the crop maximum.
    Drr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructOptions {
    pub mode: CarveMode,
    pub source: CarveSource,
    pub origin: OriginMode,
    pub grid: GridSpec,
    pub tau_mm: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            mode: CarveMode::Hull,
            source: CarveSource::Mask,
            origin: OriginMode::Triangulated,
            grid: GridSpec::default(),
            tau_mm: crate::metrics::DEFAULT_TAU_MM,
        }
    }
}

/// A localized view of one label.
#[derive(Debug, Clone)]
pub struct ViewSample {
    pub pose: Pose,
    pub camera: CameraMatrix<f64>,
    pub window: CropWindow<f64>,
}

/// Renders the label silhouette (and DRR when asked) for one pose and
/// localizes it; `None` when the label is not fully visible.
pub fn acquire_view(scene: &Scene, label: u8, pose: &Pose, source: CarveSource) -> Result<Option<ViewSample>> {
    let camera = pose.camera::<f64>()?;
    let params = RenderParams::new(pose.detector_px[0], pose.detector_px[1], pose.pixel_pitch_mm);
    let mask = render_masks(&scene.label_grid, &[label], &camera, &params)?
        .remove(&label)
        .expect("requested label rendered");
    let window = match source {
        CarveSource::Mask => localize_mask(&mask, &mask, &camera, label)?,
        CarveSource::Drr => {
            let vol = scene
                .attenuation
                .as_ref()
                .ok_or_else(|| Error::invalid("source", "scene has no attenuation volume"))?;
            let drr = render_drr(vol, &camera, &params)?;
            localize_mask(&drr.raw, &mask, &camera, label)?
        }
    };
    Ok(window.map(|window| ViewSample {
        pose: *pose,
        camera,
        window,
    }))
}

/// Localizes every pose in parallel, keeping input order.
pub fn acquire_views(scene: &Scene, label: u8, poses: &[Pose], source: CarveSource) -> Result<Vec<Option<ViewSample>>> {
    poses
        .par_iter()
        .map(|p| acquire_view(scene, label, p, source))
        .collect()
}

/// Crop image the carver samples for a window.
pub fn carve_image(window: &CropWindow<f64>, source: CarveSource) -> Image<f64> {
    match source {
        CarveSource::Mask => window.mask.map(f64::from),
        CarveSource::Drr => {
            let max = window.image.max_value();
            if max > 0.0 {
                window.image.map(|v| v / max)
            } else {
                window.image.clone()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub localize_ms: f64,
    pub reconstruct_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub grid: OccupancyGrid,
    /// Cube centre used for carving.
    pub center_mm: [f64; 3],
    pub timing: Timing,
}

/// Origin estimation and carving from already localized windows.
/// `gt_center` is required for the ground-truth origin mode.
pub fn reconstruct_windows(
    windows: &[&CropWindow<f64>],
    opts: &ReconstructOptions,
    gt_center: Option<Point3<f64>>,
) -> Result<Reconstruction> {
    if windows.len() < 2 {
        return Err(Error::InsufficientViews {
            got: windows.len(),
            need: 2,
        });
    }
    let start = Instant::now();
    let cams: Vec<_> = windows.iter().map(|w| w.camera).collect();
    let center = match opts.origin {
        OriginMode::Triangulated => estimate_origin(&cams)?,
        OriginMode::GroundTruth => {
            gt_center.ok_or_else(|| Error::invalid("origin", "ground-truth origin requires a known centre"))?
        }
    };
    let images: Vec<_> = windows.iter().map(|w| carve_image(w, opts.source)).collect();
    let views: Vec<_> = images
        .iter()
        .zip(&cams)
        .map(|(image, camera)| CarveView { image, camera })
        .collect();
    let grid = carve(&views, center, opts.mode, opts.grid, opts.origin)?;
    Ok(Reconstruction {
        grid,
        center_mm: [center.x, center.y, center.z],
        timing: Timing {
            localize_ms: 0.0,
            reconstruct_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Render, localize, triangulate and carve one label from the given poses.
pub fn reconstruct(scene: &Scene, label: u8, poses: &[Pose], opts: &ReconstructOptions) -> Result<Reconstruction> {
    let start = Instant::now();
    let views = acquire_views(scene, label, poses, opts.source)?;
    let windows: Vec<_> = views.iter().flatten().map(|v| &v.window).collect();
    let localize_ms = start.elapsed().as_secs_f64() * 1e3;
    let gt = match opts.origin {
        OriginMode::GroundTruth => Some(scene.label_center(label)?),
        OriginMode::Triangulated => None,
    };
    let mut r = reconstruct_windows(&windows, opts, gt)?;
    r.timing.localize_ms = localize_ms;
    Ok(r)
}

/// Nearest-neighbour transfer of a grid onto another lattice; voxels
/// outside the source cube are empty.
pub fn resample_grid(src: &OccupancyGrid, target: &OccupancyGrid) -> OccupancyGrid {
    if src.same_lattice(target) {
        return src.clone();
    }
    let mut out = target.clone();
    out.provenance = src.provenance;
    let [nx, ny, nz] = target.dims;
    let s = src.voxel_size_mm;
    out.data = (0..nx * ny * nz)
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
            let p = target.voxel_center(i, j, k);
            let mut c = [0usize; 3];
            for a in 0..3 {
                let g = ((p[a] - src.origin_mm[a]) / s).floor();
                if g < 0.0 || g >= src.dims[a] as f64 {
                    return 0;
                }
                c[a] = g as usize;
            }
            src.data[src.index(c[0], c[1], c[2])]
        })
        .collect();
    out
}

/// Scores a reconstruction against the label's ground truth on the
/// ground-truth-centred lattice.
pub fn score(scene: &Scene, label: u8, grid: &OccupancyGrid, tau_mm: f64) -> Result<MetricsReport> {
    let spec = GridSpec {
        dim: grid.dims[0],
        voxel_size_mm: grid.voxel_size_mm,
    };
    Scorer::new(scene, label, spec)?.score(grid, tau_mm)
}

/// Ground truth of one label prepared for repeated scoring.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub label: u8,
    pub center: Point3<f64>,
    pub gt: OccupancyGrid,
    surface: Vec<Point3<f64>>,
}

impl Scorer {
    pub fn new(scene: &Scene, label: u8, spec: GridSpec) -> Result<Self> {
        let gt = scene.ground_truth(label, spec)?;
        Ok(Scorer {
            label,
            center: scene.label_center(label)?,
            surface: extract_surface(&gt),
            gt,
        })
    }

    pub fn score(&self, grid: &OccupancyGrid, tau_mm: f64) -> Result<MetricsReport> {
        evaluate_with_surface(&resample_grid(grid, &self.gt), &self.gt, &self.surface, tau_mm)
    }
}

/// Windows for externally supplied views: each image is thresholded at
/// zero to find the object, then cropped like a rendered mask. A crop-sized
/// image whose object touches the border is used as is.
pub fn windows_from_images(images: &[Image<f64>], cams: &[CameraMatrix<f64>]) -> Result<Vec<CropWindow<f64>>> {
    if images.len() != cams.len() {
        return Err(Error::invalid(
            "cams",
            format!("{} views but {} cameras", images.len(), cams.len()),
        ));
    }
    let mut out = Vec::with_capacity(images.len());
    for (idx, (img, cam)) in images.iter().zip(cams).enumerate() {
        let mask: Mask = img.map(|v| u8::from(v > 0.0));
        if let Some(w) = localize_mask(img, &mask, cam, 0)? {
            out.push(w);
        } else if img.width() == CROP_SIZE && img.height() == CROP_SIZE {
            let whole = PixelBox {
                u_min: 0.0,
                v_min: 0.0,
                w: CROP_SIZE as f64,
                h: CROP_SIZE as f64,
            };
            out.push(CropWindow {
                label: 0,
                tight: whole,
                bbox: whole,
                square_side: CROP_SIZE as f64,
                crop: crop_transform(&whole)?,
                camera: *cam,
                image: img.clone(),
                mask: binarize(&img.map(|v| if v > 0.0 { 1.0 } else { 0.0 })),
            });
        } else {
            return Err(Error::invalid(
                "views",
                format!("view {idx} has no object fully inside the image"),
            ));
        }
    }
    Ok(out)
}

/// What a render produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderKind {
    /// Normalized 16-bit DRR.
    #[default]
    Drr,
    /// 8-bit silhouette of one label.
    Mask,
}

/// Encoded image plus the range of the raw line integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub pgm: Vec<u8>,
    pub width: usize,
    pub height: usize,
    pub raw_min: f64,
    pub raw_max: f64,
}

/// The single render path shared by the CLI and the service. DRRs of int16
/// volumes use `max(HU - threshold, 0)`; other volumes use stored values.
/// Masks need a uint8 label volume and a label.
pub fn render_image(
    vol: &Volume,
    kind: RenderKind,
    label: Option<u8>,
    cam: &CameraMatrix<f64>,
    params: &RenderParams,
    hu_threshold: f64,
) -> Result<RenderedImage> {
    match kind {
        RenderKind::Drr => {
            let prepared = match vol.dtype() {
                Dtype::Int16 => PreparedVolume::<f64>::from_hu(vol, hu_threshold)?,
                Dtype::Uint8 => PreparedVolume::<f64>::from_volume(vol)?,
            };
            let drr = render_drr(&prepared, cam, params)?;
            Ok(RenderedImage {
                pgm: encode_pgm16(&drr.normalized()),
                width: drr.width(),
                height: drr.height(),
                raw_min: drr.raw_min(),
                raw_max: drr.raw_max(),
            })
        }
        RenderKind::Mask => {
            if vol.dtype() != Dtype::Uint8 {
                return Err(Error::invalid("volume_id", "masks need a uint8 label volume"));
            }
            let label = label.ok_or_else(|| Error::invalid("label", "required for mask renders"))?;
            let grid = LabelGrid::<f64>::new(vol)?;
            let mask = render_masks(&grid, &[label], cam, params)?
                .remove(&label)
                .expect("requested label rendered");
            let any = mask.pixels().iter().any(|&p| p > 0);
            Ok(RenderedImage {
                pgm: encode_mask_pgm(&mask),
                width: mask.width(),
                height: mask.height(),
                raw_min: if any && mask.pixels().iter().all(|&p| p > 0) {
                    1.0
                } else {
                    0.0
                },
                raw_max: if any { 1.0 } else { 0.0 },
            })
        }
    }
}

/// Pose fields a caller may override; the rest take the detector defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSpec {
    pub orbit_deg: f64,
    pub tilt_deg: f64,
    pub focal_len_mm: f64,
    pub source_to_center_mm: f64,
    pub view_class: ViewClass,
    pub center_mm: [f64; 3],
}

impl Default for PoseSpec {
    fn default() -> Self {
        let p = Pose::new(0.0, 0.0, ViewClass::Ap, [0.0; 3]);
        PoseSpec {
            orbit_deg: p.orbit_deg,
            tilt_deg: p.tilt_deg,
            focal_len_mm: p.focal_len_mm,
            source_to_center_mm: p.source_to_center_mm,
            view_class: p.view_class,
            center_mm: p.center_mm,
        }
    }
}

/// A render request: either a pose or an explicit camera matrix, plus the
/// detector raster. Shared by `frk render` and `POST /api/render`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSpec {
    pub pose: Option<PoseSpec>,
    #[serde(rename = "P")]
    pub p: Option<[[f64; 4]; 3]>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub step_mm: Option<f64>,
    pub pixel_pitch_mm: Option<f64>,
    pub kind: RenderKind,
    pub label: Option<u8>,
    pub hu_threshold: Option<f64>,
}

impl RenderSpec {
    pub fn width(&self) -> usize {
        self.width.unwrap_or(DEFAULT_DETECTOR_PX)
    }

    pub fn height(&self) -> usize {
        self.height.unwrap_or(DEFAULT_DETECTOR_PX)
    }

    pub fn pixel_pitch_mm(&self) -> f64 {
        self.pixel_pitch_mm.unwrap_or(DEFAULT_PIXEL_PITCH_MM)
    }

    pub fn camera(&self) -> Result<CameraMatrix<f64>> {
        match (self.p, self.pose) {
            (Some(_), Some(_)) => Err(Error::invalid("P", "give either a pose or P, not both")),
            (Some(p), None) => CameraFile {
                p,
                k: None,
                r: None,
                x_o: None,
            }
            .to_camera(),
            (None, pose) => {
                let s = pose.unwrap_or_default();
                let mut pose = Pose::new(s.orbit_deg, s.tilt_deg, s.view_class, s.center_mm);
                pose.focal_len_mm = s.focal_len_mm;
                pose.source_to_center_mm = s.source_to_center_mm;
                pose.detector_px = [self.width(), self.height()];
                pose.pixel_pitch_mm = self.pixel_pitch_mm();
                pose.camera()
            }
        }
    }

    pub fn params(&self) -> RenderParams {
        let p = RenderParams::new(self.width(), self.height(), self.pixel_pitch_mm());
        match self.step_mm {
            Some(s) => p.with_step(s),
            None => p,
        }
    }

    pub fn render(&self, vol: &Volume) -> Result<(CameraMatrix<f64>, RenderedImage)> {
        let cam = self.camera()?;
        let img = render_image(
            vol,
            self.kind,
            self.label,
            &cam,
            &self.params(),
            self.hu_threshold.unwrap_or(DEFAULT_HU_THRESHOLD),
        )?;
        Ok((cam, img))
    }
}

/// Reconstruction from externally supplied images and cameras, scored
/// when a ground truth is given. The ground-truth origin mode takes its
/// centre from the scorer.
pub fn reconstruct_images(
    images: &[Image<f64>],
    cams: &[CameraMatrix<f64>],
    opts: &ReconstructOptions,
    scorer: Option<&Scorer>,
) -> Result<(Reconstruction, Option<MetricsReport>)> {
    let start = Instant::now();
    let windows = windows_from_images(images, cams)?;
    let localize_ms = start.elapsed().as_secs_f64() * 1e3;
    let refs: Vec<_> = windows.iter().collect();
    let mut rec = reconstruct_windows(&refs, opts, scorer.map(|s| s.center))?;
    rec.timing.localize_ms = localize_ms;
    let metrics = scorer.map(|s| s.score(&rec.grid, opts.tau_mm)).transpose()?;
    Ok((rec, metrics))
}
