//! Localized views of every labelled vertebra, ready for trials.

use std::collections::BTreeMap;
use std::path::Path;

use frk_core::drr::{render_masks, RenderParams};
use frk_core::geometry::{CameraFile, CameraMatrix, Pose, ViewClass};
use frk_core::hash::content_hash;
use frk_core::image::{decode_pgm, encode_mask_pgm, Mask};
use frk_core::localize::{localize_mask, CropWindow};
use frk_core::pipeline::Scene;
use frk_core::{Error, Result};
use rayon::prelude::*;

use crate::dataset::{item_id, DatasetOptions, Manifest};

#[derive(Debug, Clone)]
pub struct BankView {
    pub id: String,
    /// Hash of the silhouette PGM the view was localized from.
    pub mask_sha256: String,
    pub camera_sha256: String,
    pub label: u8,
    pub pose: Pose,
    pub window: CropWindow<f64>,
}

/// Fully visible views per label, in protocol order.
#[derive(Debug, Clone, Default)]
pub struct ViewBank {
    pub views: BTreeMap<u8, Vec<BankView>>,
}

fn localize(
    id: String,
    label: u8,
    pose: Pose,
    mask: &Mask,
    cam_json: &str,
    mask_sha256: String,
) -> Result<Option<BankView>> {
    let camera: CameraMatrix<f64> = CameraFile::from_json(cam_json)?.to_camera()?;
    Ok(localize_mask(mask, mask, &camera, label)?.map(|window| BankView {
        camera_sha256: content_hash(cam_json.as_bytes()),
        id,
        mask_sha256,
        label,
        pose,
        window,
    }))
}

impl ViewBank {
    /// Renders silhouettes in memory. Views go through the same encoded
    /// mask and camera bytes a dataset stores, so hashes and results agree
    /// with [`ViewBank::from_manifest`].
    pub fn from_scene(scene: &Scene, labels: &[u8], opts: &DatasetOptions) -> Result<Self> {
        let params = RenderParams::new(opts.detector_px[0], opts.detector_px[1], opts.pixel_pitch_mm);
        let mut jobs = Vec::new();
        for &label in labels {
            let c = scene.label_center(label)?;
            for (i, pose) in opts.poses([c.x, c.y, c.z])?.into_iter().enumerate() {
                jobs.push((label, i, pose));
            }
        }
        let views = jobs
            .par_iter()
            .map(|&(label, i, pose)| -> Result<Option<BankView>> {
                let cam = pose.camera::<f64>()?;
                let mask = render_masks(&scene.label_grid, &[label], &cam, &params)?
                    .remove(&label)
                    .expect("requested label rendered");
                let bytes = encode_mask_pgm(&mask);
                let cam_json = CameraFile::from_camera(&cam).to_json();
                localize(item_id(label, i), label, pose, &mask, &cam_json, content_hash(&bytes))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::group(views))
    }

    /// Loads and localizes every manifest item, verifying content hashes.
    pub fn from_manifest(manifest: &Manifest, dir: &Path) -> Result<Self> {
        let views = manifest
            .items
            .par_iter()
            .map(|item| -> Result<Option<BankView>> {
                let mask = decode_pgm(&manifest.read_verified(dir, &item.mask)?)?.to_mask();
                let cam_bytes = manifest.read_verified(dir, &item.camera)?;
                let cam_json = String::from_utf8(cam_bytes)
                    .map_err(|_| Error::format("camera", format!("{} is not UTF-8", item.camera.path)))?;
                localize(
                    item.id.clone(),
                    item.label,
                    item.pose,
                    &mask,
                    &cam_json,
                    item.mask.sha256.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::group(views))
    }

    fn group(views: Vec<Option<BankView>>) -> Self {
        let mut out: BTreeMap<u8, Vec<BankView>> = BTreeMap::new();
        for v in views.into_iter().flatten() {
            out.entry(v.label).or_default().push(v);
        }
        ViewBank { views: out }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.views.keys().copied().collect()
    }

    pub fn label(&self, label: u8) -> Result<&[BankView]> {
        self.views
            .get(&label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid("label", format!("no views of label {label}")))
    }

    pub fn classes(&self, label: u8) -> Result<Vec<ViewClass>> {
        Ok(self.label(label)?.iter().map(|v| v.pose.view_class).collect())
    }
}
