//! Paired DRR/mask/camera datasets rendered over the pose protocol, and
//! the manifest that addresses every artifact by content hash.

use std::path::{Path, PathBuf};

use frk_core::drr::{render_drr, render_masks, LabelGrid, PreparedVolume, RenderParams};
use frk_core::geometry::{sample_pose_protocol, CameraFile, Pose, ViewClass};
use frk_core::hash::{content_hash, verify_file, volume_hash};
use frk_core::image::{encode_mask_pgm, encode_pgm16};
use frk_core::pipeline::Scene;
use frk_core::volume::{load_volume, save_volume, Volume};
use frk_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FORMAT: &str = "frk-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POSES_PER_LABEL: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOptions {
    pub seed: u64,
    pub detector_px: [usize; 2],
    pub pixel_pitch_mm: f64,
    pub focal_len_mm: f64,
    pub sphere_diameter_mm: f64,
    pub step_mm: Option<f64>,
    pub hu_threshold: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            seed: 42,
            detector_px: [frk_core::geometry::DEFAULT_DETECTOR_PX; 2],
            pixel_pitch_mm: frk_core::geometry::DEFAULT_PIXEL_PITCH_MM,
            focal_len_mm: frk_core::geometry::DEFAULT_FOCAL_LEN_MM,
            sphere_diameter_mm: frk_core::geometry::DEFAULT_SPHERE_DIAMETER_MM,
            step_mm: None,
            hu_threshold: 0.0,
        }
    }
}

impl DatasetOptions {
    /// Protocol poses around `center` with this detector geometry.
    pub fn poses(&self, center: [f64; 3]) -> Result<Vec<Pose>> {
        let mut poses = sample_pose_protocol(center, self.sphere_diameter_mm)?;
        for p in &mut poses {
            p.detector_px = self.detector_px;
            p.pixel_pitch_mm = self.pixel_pitch_mm;
            p.focal_len_mm = self.focal_len_mm;
        }
        Ok(poses)
    }

    pub fn render_params(&self) -> RenderParams {
        let p = RenderParams::new(self.detector_px[0], self.detector_px[1], self.pixel_pitch_mm);
        match self.step_mm {
            Some(s) => p.with_step(s),
            None => p,
        }
    }
}

/// Relative path plus SHA-256 of a written artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub label: u8,
    pub pose_index: usize,
    pub view_class: ViewClass,
    pub pose: Pose,
    pub drr: FileRef,
    pub mask: FileRef,
    pub camera: FileRef,
    pub raw_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub options: DatasetOptions,
    /// Volume references hash the header text followed by the raw blob.
    pub hu_volume: FileRef,
    pub labels_volume: FileRef,
    pub items: Vec<ManifestItem>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::format("format", format!("unsupported manifest `{}`", m.format)));
        }
        Ok(m)
    }

    pub fn labels(&self) -> Vec<u8> {
        let mut l: Vec<u8> = self.items.iter().map(|i| i.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Loads a volume and checks it against its recorded hash.
    pub fn load_volume(&self, dir: &Path, r: &FileRef) -> Result<Volume> {
        let path = dir.join(&r.path);
        let v = load_volume(&path)?;
        let found = volume_hash(&v);
        if found != r.sha256 {
            return Err(Error::HashMismatch {
                path: path.display().to_string(),
                expected: r.sha256.clone(),
                found,
            });
        }
        Ok(v)
    }

    /// Hash-checked volumes of the dataset as a scene.
    pub fn scene(&self, dir: &Path) -> Result<Scene> {
        let hu = self.load_volume(dir, &self.hu_volume)?;
        let labels = self.load_volume(dir, &self.labels_volume)?;
        Scene::new(Some(&hu), labels)
    }

    /// Reads an item artifact, failing if its bytes changed.
    pub fn read_verified(&self, dir: &Path, r: &FileRef) -> Result<Vec<u8>> {
        verify_file(&dir.join(&r.path), &r.sha256)
    }
}

fn write(dir: &Path, rel: &str, bytes: &[u8]) -> Result<FileRef> {
    let path: PathBuf = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(FileRef {
        path: rel.to_string(),
        sha256: content_hash(bytes),
    })
}

fn save_ref(dir: &Path, rel: &str, v: &Volume) -> Result<FileRef> {
    let path = dir.join(rel);
    save_volume(v, &path)?;
    Ok(FileRef {
        path: rel.to_string(),
        sha256: volume_hash(v),
    })
}

/// Item id of a label/pose pair.
pub fn item_id(label: u8, pose_index: usize) -> String {
    format!("L{label}_p{pose_index:02}")
}

/// Renders the pose protocol around every labelled vertebra and writes
/// DRRs (16-bit PGM), silhouettes (8-bit PGM), camera sidecars, both
/// volumes and `manifest.json` into `out_dir`.
pub fn gen_dataset(hu: &Volume, labels: &Volume, out_dir: &Path, opts: &DatasetOptions) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let attenuation = PreparedVolume::<f64>::from_hu(hu, opts.hu_threshold)?;
    let grid = LabelGrid::<f64>::new(labels)?;
    let ids = grid.label_ids();
    let mut warnings = Vec::new();
    if ids.is_empty() {
        let w = "label volume has no labelled vertebrae; manifest is empty".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let hu_ref = save_ref(out_dir, "hu.vjson", hu)?;
    let labels_ref = save_ref(out_dir, "labels.vjson", labels)?;
    let params = opts.render_params();
    let mut jobs = Vec::new();
    for &label in &ids {
        let c = labels.label_bbox_center(label).expect("label ids come from the volume");
        for (i, pose) in opts.poses([c.x, c.y, c.z])?.into_iter().enumerate() {
            jobs.push((label, i, pose));
        }
    }
    let items = jobs
        .par_iter()
        .map(|&(label, pose_index, pose)| -> Result<ManifestItem> {
            let id = item_id(label, pose_index);
            let cam = pose.camera::<f64>()?;
            let drr = render_drr(&attenuation, &cam, &params)?;
            let mask = render_masks(&grid, &[label], &cam, &params)?
                .remove(&label)
                .expect("requested label rendered");
            Ok(ManifestItem {
                drr: write(out_dir, &format!("drr/{id}.pgm"), &encode_pgm16(&drr.normalized()))?,
                mask: write(out_dir, &format!("mask/{id}.pgm"), &encode_mask_pgm(&mask))?,
                camera: write(
                    out_dir,
                    &format!("cam/{id}.json"),
                    CameraFile::from_camera(&cam).to_json().as_bytes(),
                )?,
                raw_max: drr.raw_max(),
                id,
                label,
                pose_index,
                view_class: pose.view_class,
                pose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        seed: opts.seed,
        options: *opts,
        hu_volume: hu_ref,
        labels_volume: labels_ref,
        items,
        warnings,
    };
    write(out_dir, MANIFEST_FILE, manifest.to_json().as_bytes())?;
    Ok(manifest)
}
