use frk_core::calibration::synthetic::{random_scene, SceneSpec};
use frk_core::drr::{render_drr, render_mask, render_paired, LabelGrid, PreparedVolume, RenderParams};
use frk_core::geometry::{CameraMatrix, Pose, ViewClass};
use frk_core::volume::{rasterize_phantom, Phantom};
use nalgebra::{Matrix4, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_pose(orbit: f64, tilt: f64, center: [f64; 3]) -> Pose {
    let mut p = Pose::new(orbit, tilt, ViewClass::Misc, center);
    p.detector_px = [96, 96];
    p.pixel_pitch_mm = 0.66 * 448.0 / 96.0;
    p
}

fn params(p: &Pose) -> RenderParams {
    RenderParams::new(p.detector_px[0], p.detector_px[1], p.pixel_pitch_mm)
}

#[test]
fn sphere_mask_radius_matches_cone_tangent() {
    let r = 20.0;
    let ph = Phantom::sphere(r, 800);
    let (_, labels) = rasterize_phantom(&ph, &ph.fitted_lattice(0.5, 1.0)).unwrap();
    let grid = LabelGrid::<f64>::new(&labels).unwrap();
    let pose = Pose::new(0.0, 0.0, ViewClass::Ap, [0.0; 3]);
    let mask = render_mask(&grid, 1, &pose.camera::<f64>().unwrap(), &params(&pose)).unwrap();
    let area = mask.count_nonzero() as f64;
    let measured = (area / std::f64::consts::PI).sqrt();
    // Source at 500 mm: the silhouette is the tangent cone cut by the detector.
    let d = pose.focal_len_mm / 2.0;
    let f_px = pose.focal_len_mm / pose.pixel_pitch_mm;
    let expected = f_px * r / (d * d - r * r).sqrt();
    assert!((measured - expected).abs() < 1.0, "{measured} vs {expected}");
}

#[test]
fn drr_is_additive_in_attenuation() {
    let ph = Phantom::lumbar(1);
    let (hu, _) = rasterize_phantom(&ph, &ph.fitted_lattice(1.0, 2.0)).unwrap();
    let a = PreparedVolume::<f64>::from_hu(&hu, 0.0).unwrap();
    let b = PreparedVolume::<f64>::from_hu(&hu, 300.0).unwrap();
    let sum = PreparedVolume::from_values(
        a.dims(),
        hu.spacing_mm(),
        hu.origin_mm(),
        a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect(),
    )
    .unwrap();
    let pose = small_pose(20.0, 5.0, [0.0; 3]);
    let cam = pose.camera::<f64>().unwrap();
    let p = params(&pose);
    let (ra, rb, rs) = (
        render_drr(&a, &cam, &p).unwrap(),
        render_drr(&b, &cam, &p).unwrap(),
        render_drr(&sum, &cam, &p).unwrap(),
    );
    let scale = rs.raw_max();
    for ((x, y), s) in ra.raw.pixels().iter().zip(rb.raw.pixels()).zip(rs.raw.pixels()) {
        assert!((x + y - s).abs() <= 1e-9 * scale);
    }
}

#[test]
fn moving_phantom_and_camera_together_leaves_the_drr_unchanged() {
    let ph = Phantom::lumbar(1);
    let r = *Rotation3::from_euler_angles(0.3, -0.2, 0.5).matrix();
    let t = Vector3::new(12.0, -7.0, 5.0);
    let moved = ph.transformed(&r, &t);
    let render = |ph: &Phantom, cam: &CameraMatrix<f64>, p: &RenderParams| {
        let (hu, _) = rasterize_phantom(ph, &ph.fitted_lattice(0.5, 1.0)).unwrap();
        render_drr(&PreparedVolume::<f64>::from_hu(&hu, 0.0).unwrap(), cam, p).unwrap()
    };
    let pose = small_pose(30.0, 10.0, [0.0; 3]);
    let cam = pose.camera::<f64>().unwrap();
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.transpose());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(r.transpose() * t)));
    let moved_cam = CameraMatrix::new(cam.matrix() * m).unwrap();
    let a = render(&ph, &cam, &params(&pose));
    let b = render(&moved, &moved_cam, &params(&pose));
    let n = a.raw.pixels().len() as f64;
    let rms = (a
        .raw
        .pixels()
        .iter()
        .zip(b.raw.pixels())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let rel = rms / a.raw_max();
    assert!(rel < 0.01, "relative RMS {rel}");
}

#[test]
fn paired_render_projects_all_beads_in_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scene = random_scene(&mut rng, &SceneSpec::default()).unwrap();
    let ph = Phantom::lumbar(1);
    let (hu, labels) = rasterize_phantom(&ph, &ph.fitted_lattice(1.0, 2.0)).unwrap();
    let vol = PreparedVolume::<f64>::from_hu(&hu, 0.0).unwrap();
    let grid = LabelGrid::<f64>::new(&labels).unwrap();
    let beads = scene.fiducials.points::<f64>();
    let p = RenderParams::new(448, 448, 0.66).with_step(2.0);
    let out = render_paired(&vol, Some(&grid), &[1], &beads, &scene.camera, &p).unwrap();
    assert_eq!(out.beads.len(), 14);
    for (b, truth) in out.beads.iter().zip(&scene.projections) {
        assert!((b - truth).norm() < 1e-6);
        assert!(b.x > 0.0 && b.y > 0.0 && b.x < 448.0 && b.y < 448.0);
    }
    assert_eq!(out.masks.len(), 1);
    assert_eq!(out.drr.width(), 448);
}
