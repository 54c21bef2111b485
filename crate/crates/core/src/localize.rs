//! Per-vertebra localization from projected label masks: bounding boxes
//! with a margin, square crops resampled to the network input size, and
//! the matching crop-adjusted cameras.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::drr::{render_masks, LabelGrid, RenderParams};
use crate::error::{Error, Result};
use crate::geometry::{adjust_for_crop, CameraFile, CameraMatrix, CropTransform};
use crate::image::{Image, Mask};
use crate::scalar::Real;

pub const CROP_SIZE: usize = 224;
/// Total margin added to the long side, as a fraction of it (half per edge).
pub const MARGIN_FRACTION: f64 = 0.10;
pub const MIN_WINDOW_PX: f64 = 8.0;

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub u_min: f64,
    pub v_min: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.u_min + 0.5 * self.w, self.v_min + 0.5 * self.h)
    }

    pub fn u_max(&self) -> f64 {
        self.u_min + self.w
    }

    pub fn v_max(&self) -> f64 {
        self.v_min + self.h
    }
}

/// Tight box around the nonzero pixels, covering whole pixels.
pub fn tight_box(mask: &Mask) -> Option<PixelBox> {
    let (w, h) = (mask.width(), mask.height());
    let (mut i0, mut j0, mut i1, mut j1) = (usize::MAX, usize::MAX, 0, 0);
    for j in 0..h {
        for i in 0..w {
            if mask.get(i, j) != 0 {
                i0 = i0.min(i);
                j0 = j0.min(j);
                i1 = i1.max(i);
                j1 = j1.max(j);
            }
        }
    }
    (i0 != usize::MAX).then(|| PixelBox {
        u_min: i0 as f64,
        v_min: j0 as f64,
        w: (i1 - i0 + 1) as f64,
        h: (j1 - j0 + 1) as f64,
    })
}

/// True when the box touches no image edge.
pub fn is_fully_visible(b: &PixelBox, width: usize, height: usize) -> bool {
    b.u_min > 0.0 && b.v_min > 0.0 && b.u_max() < width as f64 && b.v_max() < height as f64
}

/// Grows every edge by half the margin fraction of the longer side and
/// clamps the result to the image.
pub fn apply_margin(b: &PixelBox, width: usize, height: usize) -> PixelBox {
    let pad = 0.5 * MARGIN_FRACTION * b.w.max(b.h);
    let u0 = (b.u_min - pad).max(0.0);
    let v0 = (b.v_min - pad).max(0.0);
    let u1 = (b.u_max() + pad).min(width as f64);
    let v1 = (b.v_max() + pad).min(height as f64);
    PixelBox {
        u_min: u0,
        v_min: v0,
        w: u1 - u0,
        h: v1 - v0,
    }
}

/// Tight box plus margin, or `None` for an empty mask.
pub fn boxes_from_mask(mask: &Mask) -> Option<PixelBox> {
    tight_box(mask).map(|b| apply_margin(&b, mask.width(), mask.height()))
}

/// Square window of side `max(w, h)` centred on the box, mapped onto a
/// `CROP_SIZE²` crop.
pub fn crop_transform<T: Real>(b: &PixelBox) -> Result<CropTransform<T>> {
    let side = b.w.max(b.h);
    if !(side >= MIN_WINDOW_PX) {
        return Err(Error::TooSmall {
            side,
            min: MIN_WINDOW_PX,
        });
    }
    let c = b.center();
    Ok(CropTransform::new(
        T::lit(c.x - 0.5 * side),
        T::lit(c.y - 0.5 * side),
        T::lit(CROP_SIZE as f64 / side),
    ))
}

/// Bilinear resampling of the crop window; pixels outside the source read 0.
pub fn resample<P: Copy + Into<f64>, T: Real>(img: &Image<P>, crop: &CropTransform<T>) -> Image<f64> {
    let (tx, ty, s) = (crop.t_x.as_f64(), crop.t_y.as_f64(), crop.scale.as_f64());
    Image::from_fn(CROP_SIZE, CROP_SIZE, |x, y| {
        img.sample_bilinear(tx + (x as f64 + 0.5) / s, ty + (y as f64 + 0.5) / s)
    })
}

/// Crop image and crop-adjusted camera for one box.
pub fn crop_vertebra<P: Copy + Into<f64>, T: Real>(
    img: &Image<P>,
    cam: &CameraMatrix<T>,
    b: &PixelBox,
) -> Result<(Image<f64>, CameraMatrix<T>, CropTransform<T>)> {
    let crop = crop_transform(b)?;
    Ok((resample(img, &crop), adjust_for_crop(cam, &crop), crop))
}

/// Binarizes a resampled mask at one half.
pub fn binarize(img: &Image<f64>) -> Mask {
    img.map(|v| u8::from(v >= 0.5))
}

/// One localized vertebra.
#[derive(Debug, Clone)]
pub struct CropWindow<T: Real> {
    pub label: u8,
    /// Tight box before the margin.
    pub tight: PixelBox,
    /// Box after the margin, clamped to the image.
    pub bbox: PixelBox,
    pub square_side: f64,
    pub crop: CropTransform<T>,
    pub camera: CameraMatrix<T>,
    pub image: Image<f64>,
    pub mask: Mask,
}

/// Crops every label that is fully visible in the image.
pub fn localize_all<P: Copy + Into<f64>, T: Real>(
    img: &Image<P>,
    cam: &CameraMatrix<T>,
    labels: &LabelGrid<T>,
    ids: &[u8],
    pixel_pitch_mm: f64,
) -> Result<Vec<CropWindow<T>>> {
    let params = RenderParams::new(img.width(), img.height(), pixel_pitch_mm);
    let masks = render_masks(labels, ids, cam, &params)?;
    let mut out = Vec::new();
    for (&label, mask) in &masks {
        if let Some(w) = localize_mask(img, mask, cam, label)? {
            out.push(w);
        }
    }
    Ok(out)
}

/// Crop for a single projected mask, or `None` when the label is empty or
/// touches the image border.
pub fn localize_mask<P: Copy + Into<f64>, T: Real>(
    img: &Image<P>,
    mask: &Mask,
    cam: &CameraMatrix<T>,
    label: u8,
) -> Result<Option<CropWindow<T>>> {
    let Some(tight) = tight_box(mask) else {
        return Ok(None);
    };
    if !is_fully_visible(&tight, mask.width(), mask.height()) {
        return Ok(None);
    }
    let bbox = apply_margin(&tight, mask.width(), mask.height());
    let (image, camera, crop) = crop_vertebra(img, cam, &bbox)?;
    let mask_crop = binarize(&resample(mask, &crop));
    Ok(Some(CropWindow {
        label,
        tight,
        bbox,
        square_side: bbox.w.max(bbox.h),
        crop,
        camera,
        image,
        mask: mask_crop,
    }))
}

/// One entry of the crop manifest written per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub label: u8,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub square_side: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub scale: f64,
    #[serde(rename = "adjusted_P")]
    pub adjusted_p: [[f64; 4]; 3],
}

impl<T: Real> CropWindow<T> {
    pub fn record(&self) -> CropRecord {
        let file = CameraFile::from_camera(&self.camera);
        CropRecord {
            label: self.label,
            bbox: [self.bbox.u_min, self.bbox.v_min, self.bbox.w, self.bbox.h],
            square_side: self.square_side,
            t_x: self.crop.t_x.as_f64(),
            t_y: self.crop.t_y.as_f64(),
            scale: self.crop.scale.as_f64(),
            adjusted_p: file.p,
        }
    }
}
