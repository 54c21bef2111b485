//! One PASS/FAIL line per acceptance criterion with the measured values.
//! Exits nonzero only when a criterion outside `KNOWN_FAILING` fails.
//! `FRK_BLESS_GOLDEN=1` rewrites the golden fixtures.

use std::path::{Path, PathBuf};
use std::time::Instant;

use frk_core::calibration::synthetic::{random_scene, BeadScene, SceneSpec};
use frk_core::calibration::{
    calibrate_detections, calibrate_image, detect_fiducials, resolve_correspondence, BeadClass, CalibrationReport,
    DetectOptions, DEFAULT_GATE_PX,
};
use frk_core::carve::{carve, CarveMode, CarveView, GridSpec, OccupancyGrid, OriginMode};
use frk_core::drr::{render_drr, PreparedVolume, RenderParams};
use frk_core::geometry::{
    adjust_for_crop, compose_camera, decompose_camera, triangulate_origin, CameraFile, CameraMatrix, CropTransform,
    Pose, ViewClass,
};
use frk_core::metrics::{evaluate, overlap_counts, surface_distances, voxel_overlap};
use frk_core::pipeline::{
    acquire_view, carve_image, reconstruct, score, CarveSource, PoseSpec, ReconstructOptions, RenderKind, RenderSpec,
    Scene, ViewSample,
};
use frk_core::volume::io::encode_raw;
use frk_core::volume::{rasterize_phantom, Phantom, Primitive, Shape, VolumeHeader};
use frk_harness::experiments::{mean_surface, summarize, ExperimentConfig, Harness};
use frk_harness::heatmap::{sensitivity_heatmap, HeatmapSpec};
use frk_harness::{DatasetOptions, ViewBank, ViewPlan};
use nalgebra::{Matrix3, Matrix4, Point2, Point3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Criteria that fail on this implementation, with the reason in the README.
const KNOWN_FAILING: &[&str] = &["sensitivity heatmap"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, checks: &[(bool, String)]) -> Outcome {
    Outcome {
        name,
        pass: checks.iter().all(|c| c.0),
        detail: checks
            .iter()
            .map(|(ok, s)| if *ok { s.clone() } else { format!("{s} [x]") })
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn bead_scenes(n: usize) -> Vec<BeadScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..n)
        .map(|_| random_scene(&mut rng, &SceneSpec::default()).unwrap())
        .collect()
}

fn calibration(scenes: &[BeadScene]) -> Outcome {
    let start = Instant::now();
    let opts = DetectOptions::for_geometry(0.66, 2.0);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut reproj, mut x0_err, mut noisy) = (Vec::new(), Vec::new(), Vec::new());
    for scene in scenes {
        let res = calibrate_image(&scene.image, &scene.fiducials, &opts, 0.66).unwrap();
        let mean = scene
            .fiducials
            .points::<f64>()
            .iter()
            .zip(&scene.projections)
            .map(|(x, p)| (res.camera.project(x).unwrap() - p).norm())
            .sum::<f64>()
            / scene.projections.len() as f64;
        reproj.push(mean);
        x0_err.push((res.decomposition.x_o - scene.camera.center().unwrap()).norm());
        let mut det = detect_fiducials(&scene.image, &opts);
        for d in &mut det {
            d.center[0] += noise.sample(&mut rng);
            d.center[1] += noise.sample(&mut rng);
        }
        noisy.push(
            calibrate_detections(&det, &scene.fiducials, 0.66, DEFAULT_GATE_PX)
                .unwrap()
                .mean_px,
        );
    }
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let noisy_mean = noisy.iter().sum::<f64>() / noisy.len() as f64;
    let t = secs(start);
    outcome(
        "calibration round-trip",
        &[
            (
                max(&reproj) < 0.1,
                format!(
                    "{} scenes, worst noiseless reprojection {:.4} px < 0.1",
                    scenes.len(),
                    max(&reproj)
                ),
            ),
            (
                max(&x0_err) < 1.0,
                format!("worst X_o error {:.3} mm < 1", max(&x0_err)),
            ),
            (
                (0.1..=1.5).contains(&noisy_mean),
                format!(
                    "0.5 px noise mean {noisy_mean:.3} px in [0.1, 1.5] (per scene {:.3}..{:.3})",
                    min(&noisy),
                    max(&noisy)
                ),
            ),
            (t < 60.0, format!("{t:.1} s < 60")),
        ],
    )
}

fn correspondence(scenes: &[BeadScene]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (mut clean, mut noisy) = (0, 0);
    for scene in scenes {
        let refs = scene.fiducials.indices_of(BeadClass::Reference);
        let p3: Vec<Point3<f64>> = refs.iter().map(|&i| scene.fiducials.point(i)).collect();
        let mut order: Vec<usize> = (0..refs.len()).collect();
        for k in (1..order.len()).rev() {
            order.swap(k, rng.random_range(0..=k));
        }
        let shuffled: Vec<Point2<f64>> = order.iter().map(|&j| scene.projections[refs[j]]).collect();
        let jittered: Vec<Point2<f64>> = shuffled
            .iter()
            .map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        clean += (resolve_correspondence(&p3, &shuffled).unwrap().assignment == order) as usize;
        noisy += (resolve_correspondence(&p3, &jittered).unwrap().assignment == order) as usize;
    }
    let n = scenes.len();
    outcome(
        "correspondence search",
        &[
            (clean == n, format!("noiseless {clean}/{n}")),
            (noisy * 100 >= 99 * n, format!("0.5 px noise {noisy}/{n} (>= 99%)")),
        ],
    )
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 {
        Vector3::z()
    } else {
        axis.normalize()
    };
    *Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), rng.random_range(-3.1..3.1)).matrix()
}

/// Relative difference after removing the best positive scale; infinite if
/// the scale is not positive.
fn scale_residual(a: &CameraMatrix<f64>, b: &CameraMatrix<f64>) -> f64 {
    let (a, b) = (a.matrix(), b.matrix());
    let s = a.dot(b) / b.dot(b);
    if s <= 0.0 {
        return f64::INFINITY;
    }
    (a - b * s).abs().max() / a.abs().max()
}

fn decomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut round, mut scaled) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let f = rng.random_range(500.0..4000.0);
        let k = Matrix3::new(
            f,
            rng.random_range(-5.0..5.0),
            rng.random_range(100.0..400.0),
            0.0,
            f * rng.random_range(0.9..1.1),
            rng.random_range(100.0..400.0),
            0.0,
            0.0,
            1.0,
        );
        let x = Point3::new(
            rng.random_range(-900.0..900.0),
            rng.random_range(-900.0..900.0),
            rng.random_range(-900.0..900.0),
        );
        let cam = compose_camera(&k, &random_rotation(&mut rng), &x).unwrap();
        let d = decompose_camera(&cam).unwrap();
        round = round.max(scale_residual(&cam, &d.compose().unwrap()));
        let e = decompose_camera(&cam.scaled(7.3).unwrap()).unwrap();
        let diff = ((e.k - d.k).abs().max() / d.k.abs().max())
            .max((e.r - d.r).abs().max())
            .max((e.x_o - d.x_o).norm() / x.coords.norm().max(1.0));
        scaled = scaled.max(diff);
    }
    outcome(
        "decomposition identities",
        &[
            (
                round < 1e-9,
                format!("1000 cameras, compose(decompose(P)) residual {round:.1e} < 1e-9"),
            ),
            (
                scaled < 1e-9,
                format!("7.3 P decomposes to the same K, R, X_o within {scaled:.1e}"),
            ),
        ],
    )
}

fn commutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pose = Pose::new(
            rng.random_range(-180.0..180.0),
            rng.random_range(-30.0..30.0),
            ViewClass::Misc,
            [0.0; 3],
        );
        let cam = pose.camera::<f64>().unwrap();
        let crop = CropTransform::new(
            rng.random_range(0.0..300.0),
            rng.random_range(0.0..300.0),
            rng.random_range(0.2..4.0),
        );
        let x = Point3::new(
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
        );
        let p = cam.project(&x).unwrap();
        let (a, b) = crop.apply(p.x, p.y);
        let q = adjust_for_crop(&cam, &crop).project(&x).unwrap();
        worst = worst.max((q.x - a).abs()).max((q.y - b).abs());
    }
    outcome(
        "crop commutation",
        &[(worst < 1e-9, format!("1000 pairs, worst {worst:.1e} px < 1e-9"))],
    )
}

fn ring(center: Point3<f64>, n: usize, rng: &mut impl Rng) -> Vec<CameraMatrix<f64>> {
    (0..n)
        .map(|i| {
            let orbit = i as f64 * 360.0 / n as f64 + rng.random_range(-10.0..10.0);
            Pose::new(
                orbit,
                rng.random_range(-20.0..20.0),
                ViewClass::Misc,
                [center.x, center.y, center.z],
            )
            .camera()
            .unwrap()
        })
        .collect()
}

fn triangulation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = 0.0f64;
    for n in [2, 3, 4, 8] {
        for _ in 0..50 {
            let c = Point3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
            );
            let cams = ring(c, n, &mut rng);
            let x = c + Vector3::new(
                rng.random_range(-15.0..15.0),
                rng.random_range(-15.0..15.0),
                rng.random_range(-15.0..15.0),
            );
            let px: Vec<_> = cams.iter().map(|cam| cam.project(&x).unwrap()).collect();
            exact = exact.max((triangulate_origin(&cams, &px).unwrap() - x).norm());
        }
    }
    // Brute force over a 1 mm lattice minimising the same linear residual.
    let residual = |cams: &[CameraMatrix<f64>], px: &[Point2<f64>], x: &Point3<f64>| -> f64 {
        cams.iter()
            .zip(px)
            .map(|(c, p)| {
                let h = c.project_homogeneous(x);
                (p.x * h.z - h.x).powi(2) + (p.y * h.z - h.y).powi(2)
            })
            .sum()
    };
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut worst_step = 0.0f64;
    for _ in 0..20 {
        let truth = Point3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let cams: Vec<_> = ring(Point3::origin(), 4, &mut rng)
            .into_iter()
            .map(|c| c.normalized())
            .collect();
        let px: Vec<_> = cams
            .iter()
            .map(|c| c.project(&truth).unwrap() + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let got = triangulate_origin(&cams, &px).unwrap();
        let mut best = (f64::INFINITY, Point3::origin());
        for i in -10..=10 {
            for j in -10..=10 {
                for k in -10..=10 {
                    let x = Point3::new(i as f64, j as f64, k as f64);
                    let r = residual(&cams, &px, &x);
                    if r < best.0 {
                        best = (r, x);
                    }
                }
            }
        }
        worst_step = worst_step.max((got - best.1).amax());
    }
    outcome(
        "triangulation",
        &[
            (exact < 1e-6, format!("consistent rays, worst {exact:.1e} mm < 1e-6")),
            (
                worst_step <= 1.0,
                format!("0.5 px noise vs 1 mm lattice oracle, worst {worst_step:.3} mm <= 1 step"),
            ),
        ],
    )
}

fn drr_physics() -> Outcome {
    // Unit attenuation box of 1 mm cells spanning x, z in [-30, 30] and
    // y in [-50, 50], seen along y by the default AP camera.
    let dims = [60, 100, 60];
    let vol = PreparedVolume::from_values(dims, [1.0; 3], [-29.5, -49.5, -29.5], vec![1.0f64; 60 * 100 * 60]).unwrap();
    let pose = Pose::new(0.0, 0.0, ViewClass::Ap, [0.0; 3]);
    let cam = pose.camera::<f64>().unwrap();
    let step = 0.5;
    let params = RenderParams::new(448, 448, 0.66).with_step(step);
    let img = render_drr(&vol, &cam, &params).unwrap();
    let (lo, hi) = ([-30.0, -50.0, -30.0], [30.0, 50.0, 30.0]);
    let m_inv = cam.m().try_inverse().unwrap();
    let c = cam.center().unwrap();
    let (mut worst, mut checked) = (0.0f64, 0);
    for j in (0..448).step_by(7) {
        for i in (0..448).step_by(7) {
            let d = m_inv * Vector3::new(i as f64 + 0.5, j as f64 + 0.5, 1.0);
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            for a in 0..3 {
                let (u, v) = ((lo[a] - c[a]) / d[a], (hi[a] - c[a]) / d[a]);
                t0 = t0.max(u.min(v));
                t1 = t1.min(u.max(v));
            }
            if t1 <= t0 {
                continue;
            }
            // Only rays entering and leaving through the y faces, clear of
            // the lateral faces where interpolation blurs the edge.
            let (p0, p1) = (c + d * t0, c + d * t1);
            let clear = |p: &Point3<f64>| p.x.abs() < 28.0 && p.z.abs() < 28.0;
            if !(clear(&p0) && clear(&p1)) {
                continue;
            }
            let length = (t1 - t0) * d.norm();
            worst = worst.max((img.raw.get(i, j) - length).abs());
            checked += 1;
        }
    }

    let ph = Phantom::lumbar(1);
    let (hu, _) = rasterize_phantom(&ph, &ph.fitted_lattice(1.0, 2.0)).unwrap();
    let a = PreparedVolume::<f64>::from_hu(&hu, 0.0).unwrap();
    let b = PreparedVolume::<f64>::from_hu(&hu, 300.0).unwrap();
    let sum_vals = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    let sum = PreparedVolume::from_values(a.dims(), hu.spacing_mm(), hu.origin_mm(), sum_vals).unwrap();
    let mut small = Pose::new(20.0, 5.0, ViewClass::Misc, [0.0; 3]);
    small.detector_px = [96, 96];
    small.pixel_pitch_mm = 0.66 * 448.0 / 96.0;
    let sp = RenderParams::new(96, 96, small.pixel_pitch_mm);
    let scam = small.camera::<f64>().unwrap();
    let (ra, rb, rs) = (
        render_drr(&a, &scam, &sp).unwrap(),
        render_drr(&b, &scam, &sp).unwrap(),
        render_drr(&sum, &scam, &sp).unwrap(),
    );
    let additive = ra
        .raw
        .pixels()
        .iter()
        .zip(rb.raw.pixels())
        .zip(rs.raw.pixels())
        .map(|((x, y), s)| (x + y - s).abs())
        .fold(0.0, f64::max)
        / rs.raw_max();
    let doubled = render_drr(&a.scaled(2.0).unwrap(), &scam, &sp).unwrap();
    let homogeneous = ra
        .raw
        .pixels()
        .iter()
        .zip(doubled.raw.pixels())
        .all(|(x, y)| 2.0 * x == *y);

    let r = *Rotation3::from_euler_angles(0.3, -0.2, 0.5).matrix();
    let t = Vector3::new(12.0, -7.0, 5.0);
    let moved = ph.transformed(&r, &t);
    let render = |ph: &Phantom, cam: &CameraMatrix<f64>| {
        let (hu, _) = rasterize_phantom(ph, &ph.fitted_lattice(0.5, 1.0)).unwrap();
        render_drr(&PreparedVolume::<f64>::from_hu(&hu, 0.0).unwrap(), cam, &sp).unwrap()
    };
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.transpose());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(r.transpose() * t)));
    let moved_cam = CameraMatrix::new(scam.matrix() * m).unwrap();
    let (x, y) = (render(&ph, &scam), render(&moved, &moved_cam));
    let n = x.raw.pixels().len() as f64;
    let rms = (x
        .raw
        .pixels()
        .iter()
        .zip(y.raw.pixels())
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / x.raw_max();
    outcome(
        "DRR physics",
        &[
            (
                checked > 100 && worst <= step,
                format!("box path length over {checked} rays, worst {worst:.3} mm <= step {step}"),
            ),
            (additive < 1e-12, format!("additivity {additive:.1e}")),
            (
                homogeneous,
                format!("doubling attenuation doubles raw exactly: {homogeneous}"),
            ),
            (rms < 0.01, format!("rigid equivariance RMS {:.3}% < 1%", 100.0 * rms)),
        ],
    )
}

fn hull(views: &[ViewSample], center: Point3<f64>) -> OccupancyGrid {
    let images: Vec<_> = views
        .iter()
        .map(|s| carve_image(&s.window, CarveSource::Mask))
        .collect();
    let cv: Vec<_> = views
        .iter()
        .zip(&images)
        .map(|(s, image)| CarveView {
            image,
            camera: &s.window.camera,
        })
        .collect();
    carve(
        &cv,
        center,
        CarveMode::Hull,
        GridSpec::default(),
        OriginMode::GroundTruth,
    )
    .unwrap()
}

fn views(scene: &Scene, angles: &[(f64, f64)]) -> Vec<ViewSample> {
    let c = scene.label_center(1).unwrap();
    angles
        .iter()
        .map(|&(o, t)| {
            let pose = Pose::new(o, t, ViewClass::Misc, [c.x, c.y, c.z]);
            acquire_view(scene, 1, &pose, CarveSource::Mask).unwrap().unwrap()
        })
        .collect()
}

/// Ground-truth voxels whose 26 neighbours are occupied too.
fn interior(g: &OccupancyGrid) -> Vec<usize> {
    let n = g.dims[0];
    let mut out = Vec::new();
    for k in 1..n - 1 {
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                if (0..27).all(|d| g.get(i + d % 3 - 1, j + (d / 3) % 3 - 1, k + d / 9 - 1)) {
                    out.push(g.index(i, j, k));
                }
            }
        }
    }
    out
}

const EIGHT: [(f64, f64); 8] = [
    (0.0, 25.0),
    (45.0, -25.0),
    (90.0, 25.0),
    (135.0, -25.0),
    (180.0, 25.0),
    (225.0, -25.0),
    (270.0, 25.0),
    (315.0, -25.0),
];

fn carving() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut missing = 0;
    for _ in 0..20 {
        let prims = (0..rng.random_range(1..4))
            .map(|_| {
                let shape = match rng.random_range(0..3) {
                    0 => Shape::Sphere {
                        radius: rng.random_range(5.0..15.0),
                    },
                    1 => Shape::Box {
                        half_extents: [
                            rng.random_range(3.0..12.0),
                            rng.random_range(3.0..12.0),
                            rng.random_range(3.0..12.0),
                        ],
                    },
                    _ => Shape::EllipticCylinder {
                        radii: [rng.random_range(3.0..10.0), rng.random_range(3.0..10.0)],
                        half_height: rng.random_range(3.0..12.0),
                    },
                };
                let c = [
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                ];
                let r = Rotation3::from_euler_angles(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                );
                Primitive::new(shape, c, 500, 1).rotated(r.matrix())
            })
            .collect();
        let scene = Scene::from_phantom(&Phantom::new(prims), 0.5, false).unwrap();
        let angles: Vec<_> = (0..rng.random_range(2..6))
            .map(|_| (rng.random_range(-180.0..180.0), rng.random_range(-30.0..30.0)))
            .collect();
        let g = hull(&views(&scene, &angles), scene.label_center(1).unwrap());
        let gt = scene.ground_truth(1, GridSpec::default()).unwrap();
        missing += interior(&gt).iter().filter(|&&i| g.data[i] == 0).count();
    }

    let lumbar = Scene::from_phantom(&Phantom::lumbar(1), 0.5, false).unwrap();
    let c = lumbar.label_center(1).unwrap();
    let mut angles = EIGHT.to_vec();
    let eight = hull(&views(&lumbar, &angles), c);
    angles.push((20.0, 0.0));
    let nine = hull(&views(&lumbar, &angles), c);
    let monotone = nine.data.iter().zip(&eight.data).all(|(n, e)| n <= e);

    let sphere = Scene::from_phantom(&Phantom::sphere(20.0, 800), 0.5, false).unwrap();
    let sc = sphere.label_center(1).unwrap();
    let poses: Vec<_> = EIGHT
        .iter()
        .map(|&(o, t)| Pose::new(o, t, ViewClass::Misc, [sc.x, sc.y, sc.z]))
        .collect();
    let rec = reconstruct(&sphere, 1, &poses, &ReconstructOptions::default()).unwrap();
    let f1 = score(&sphere, 1, &rec.grid, 1.0).unwrap().f1;

    let four = views(&lumbar, &[(0.0, 0.0), (90.0, 0.0), (20.0, 0.0), (-60.0, 20.0)]);
    let start = Instant::now();
    let g = hull(&four, c);
    let t = secs(start);
    outcome(
        "carving",
        &[
            (
                missing == 0,
                format!("20 random phantoms, {missing} interior voxels carved"),
            ),
            (
                monotone,
                format!(
                    "ninth view only removes voxels: {monotone} ({} -> {})",
                    eight.count(),
                    nine.count()
                ),
            ),
            (f1 >= 0.95, format!("sphere 8-view F1 {f1:.4} >= 0.95")),
            (
                t < 2.0 && g.dims == [128; 3],
                format!(
                    "4-view 128^3 carve {t:.3} s < 2 on {} threads",
                    rayon::current_num_threads()
                ),
            ),
        ],
    )
}

fn cube_grid(dim: usize, lo: [usize; 3], hi: [usize; 3]) -> OccupancyGrid {
    let mut g = OccupancyGrid::empty(
        GridSpec {
            dim,
            voxel_size_mm: 1.0,
        },
        [0.0; 3],
        OriginMode::GroundTruth,
    );
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                let idx = g.index(i, j, k);
                g.data[idx] = 1;
            }
        }
    }
    g
}

fn metrics() -> Outcome {
    let (a, b) = (
        cube_grid(16, [2, 2, 2], [12, 12, 12]),
        cube_grid(16, [3, 2, 2], [13, 12, 12]),
    );
    let o = overlap_counts(&a, &b).unwrap();
    let (f1, iou) = voxel_overlap(&a, &b).unwrap();
    let counts = (o.tp, o.fp, o.fn_) == (900, 100, 100);
    let shifted = counts && f1 == 2.0 * 900.0 / 2000.0 && iou == 900.0 / 1100.0;

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut exact = true;
    for _ in 0..20 {
        let mut pts = || -> Vec<Point3<f64>> {
            (0..200)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-20.0..20.0),
                    )
                })
                .collect()
        };
        let (p, q) = (pts(), pts());
        let brute = |a: &[Point3<f64>], b: &[Point3<f64>]| -> Vec<f64> {
            a.iter()
                .map(|x| {
                    b.iter()
                        .map(|y| (x - y).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                        .sqrt()
                })
                .collect()
        };
        let d = surface_distances(&p, &q).unwrap();
        exact &= d.a_to_b == brute(&p, &q) && d.b_to_a == brute(&q, &p);
    }

    let random_grid = |rng: &mut ChaCha8Rng| {
        let mut g = OccupancyGrid::empty(
            GridSpec {
                dim: 8,
                voxel_size_mm: 1.0,
            },
            [0.0; 3],
            OriginMode::GroundTruth,
        );
        let p = rng.random_range(0.05..0.95);
        for v in g.data.iter_mut() {
            *v = rng.random_bool(p) as u8;
        }
        g
    };
    let mut identities = true;
    for _ in 0..20 {
        let g = random_grid(&mut rng);
        let m = evaluate(&g, &g, 1.0).unwrap();
        identities &= (m.f1, m.iou, m.surface_score, m.asd_mm, m.hd95_mm) == (1.0, 1.0, 1.0, 0.0, 0.0);
    }
    let mut dominated = 0;
    for _ in 0..1000 {
        let (x, y) = (random_grid(&mut rng), random_grid(&mut rng));
        let (f1, iou) = voxel_overlap(&x, &y).unwrap();
        dominated += (f1 >= iou) as usize;
    }
    outcome(
        "metrics",
        &[
            (
                shifted,
                format!(
                    "shifted cube f1 {f1:.4}, iou {iou:.4} from counts {}/{}/{}",
                    o.tp, o.fp, o.fn_
                ),
            ),
            (
                exact,
                format!("surface distances equal the O(n^2) oracle on 20 pairs of 200-point sets: {exact}"),
            ),
            (identities, format!("identical-grid identities: {identities}")),
            (dominated == 1000, format!("f1 >= iou on {dominated}/1000 random pairs")),
        ],
    )
}

fn lumbar_scene() -> Scene {
    Scene::from_phantom(&Phantom::lumbar(5), 0.5, false).unwrap()
}

fn ablation(scene: &Scene) -> Outcome {
    let start = Instant::now();
    let bank = ViewBank::from_scene(scene, &scene.label_ids(), &DatasetOptions::default()).unwrap();
    let cfg = ExperimentConfig {
        trials: 20,
        seed: 42,
        ..ExperimentConfig::default()
    };
    let h = Harness::new(&bank, scene, cfg.recon.grid).unwrap();
    let views = summarize(&h.ablate_num_views(&cfg).unwrap());
    let combos = summarize(&h.ablate_combinations(&cfg).unwrap());
    let origin = h.origin_comparison(&ViewPlan::parse("1/1/1/1").unwrap(), &cfg).unwrap();
    let t = secs(start);
    let s = |sum: &[_], plan: &str| mean_surface(sum, plan).unwrap();
    let (two, four) = (s(&views, "2"), s(&views, "4"));
    let ranked = {
        let mut c: Vec<_> = combos.iter().map(|p| (p.surface.mean, p.plan.clone())).collect();
        c.sort_by(|a, b| b.0.total_cmp(&a.0));
        c
    };
    let (ap3, lat3) = (s(&combos, "3AP+1LAT"), s(&combos, "1AP+3LAT"));
    let n = origin.len() / 2;
    let (tri, gt) = origin.split_at(n);
    let mean = |d: &[frk_harness::experiments::TrialDetail]| d.iter().map(|x| x.record.surface).sum::<f64>() / n as f64;
    let (m_tri, m_gt) = (mean(tri), mean(gt));
    let wins = tri
        .iter()
        .zip(gt)
        .filter(|(a, b)| b.record.surface >= a.record.surface)
        .count();
    outcome(
        "ablation trends",
        &[
            (four > two, format!("surface 4 views {four:.3} > 2 views {two:.3}")),
            (
                ranked[0].1 == "1AP+1LAT+1OB+1MISC",
                format!("top combo {} ({:.3})", ranked[0].1, ranked[0].0),
            ),
            (ap3 > lat3, format!("3AP+1LAT {ap3:.3} > 1AP+3LAT {lat3:.3}")),
            (
                m_gt >= m_tri,
                format!("ground-truth origin {m_gt:.4} >= triangulated {m_tri:.4} (ahead on {wins}/{n} pairs)"),
            ),
            (t < 600.0, format!("{t:.0} s < 600")),
        ],
    )
}

fn heatmap(scene: &Scene) -> Outcome {
    let start = Instant::now();
    let spec = HeatmapSpec::default();
    let asym = sensitivity_heatmap(scene, &spec).unwrap();
    let sphere = Scene::from_phantom(&Phantom::sphere(15.0, 800), 0.5, false).unwrap();
    let flat = sensitivity_heatmap(&sphere, &spec).unwrap();
    let t = secs(start);
    let peak = asym.peak();
    outcome(
        "sensitivity heatmap",
        &[
            (asym.nodes.len() == 441, format!("{} nodes", asym.nodes.len())),
            (
                asym.peak_distance() <= 1,
                format!(
                    "peak at ({:+.0}, {:+.0}) deg, {} nodes from centre (<= 1)",
                    peak.d_orbit_deg,
                    peak.d_tilt_deg,
                    asym.peak_distance()
                ),
            ),
            (flat.range() < 0.05, format!("sphere range {:.3} < 0.05", flat.range())),
            (t < 900.0, format!("{t:.0} s < 900")),
        ],
    )
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn golden_files() -> Vec<(&'static str, Vec<u8>)> {
    let ph = Phantom::lumbar(1);
    let (hu, labels) = rasterize_phantom(&ph, &ph.fitted_lattice(2.0, 4.0)).unwrap();
    let small = RenderSpec {
        width: Some(64),
        height: Some(64),
        pixel_pitch_mm: Some(0.66 * 7.0),
        ..RenderSpec::default()
    };
    let (cam, drr) = small.render(&hu).unwrap();
    let lateral = RenderSpec {
        pose: Some(PoseSpec {
            orbit_deg: 90.0,
            ..PoseSpec::default()
        }),
        kind: RenderKind::Mask,
        label: Some(1),
        ..small.clone()
    };
    let (_, mask) = lateral.render(&labels).unwrap();
    let (a, b) = (
        cube_grid(16, [2, 2, 2], [12, 12, 12]),
        cube_grid(16, [3, 2, 2], [13, 12, 12]),
    );
    let scene = random_scene(&mut ChaCha8Rng::seed_from_u64(1), &SceneSpec::default()).unwrap();
    let res = calibrate_image(
        &scene.image,
        &scene.fiducials,
        &DetectOptions::for_geometry(0.66, 2.0),
        0.66,
    )
    .unwrap();
    vec![
        ("drr_ap.pgm", drr.pgm),
        ("drr_ap.json", CameraFile::from_camera(&cam).to_json().into_bytes()),
        ("mask_lat.pgm", mask.pgm),
        ("labels.vjson", VolumeHeader::of(&labels).to_json().into_bytes()),
        ("labels.raw", encode_raw(&labels)),
        ("metrics.json", evaluate(&a, &b, 1.0).unwrap().to_json().into_bytes()),
        (
            "calibration.json",
            CalibrationReport::from_result(&res).to_json().into_bytes(),
        ),
    ]
}

fn golden() -> Outcome {
    let dir = golden_dir();
    let first = golden_files();
    if std::env::var_os("FRK_BLESS_GOLDEN").is_some() {
        std::fs::create_dir_all(&dir).unwrap();
        for (name, bytes) in &first {
            std::fs::write(dir.join(name), bytes).unwrap();
        }
    }
    let repeat = first == golden_files();
    let mut differ = Vec::new();
    for (name, bytes) in &first {
        if std::fs::read(dir.join(name)).ok().as_ref() != Some(bytes) {
            differ.push(*name);
        }
    }
    outcome(
        "file-format stability",
        &[
            (repeat, format!("two runs byte-identical: {repeat}")),
            (
                differ.is_empty(),
                format!("{} golden files, differing: {:?}", first.len(), differ),
            ),
        ],
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--list` or a filter.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }
    let scenes = bead_scenes(100);
    let lumbar = lumbar_scene();
    let mut outcomes = Vec::new();
    let mut run = |f: &dyn Fn() -> Outcome| {
        let o = f();
        let tag = match (o.pass, KNOWN_FAILING.contains(&o.name)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag:<12} {}: {}", o.name, o.detail);
        outcomes.push(o);
    };
    run(&|| calibration(&scenes));
    run(&|| correspondence(&scenes));
    run(&decomposition);
    run(&commutation);
    run(&triangulation);
    run(&drr_physics);
    run(&carving);
    run(&metrics);
    run(&|| ablation(&lumbar));
    run(&|| heatmap(&lumbar));
    run(&golden);
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass", outcomes.len());
    let unexpected: Vec<_> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_FAILING.contains(&o.name))
        .map(|o| o.name)
        .collect();
    let fixed: Vec<_> = outcomes
        .iter()
        .filter(|o| o.pass && KNOWN_FAILING.contains(&o.name))
        .map(|o| o.name)
        .collect();
    if !fixed.is_empty() {
        println!("now passing, remove from KNOWN_FAILING: {fixed:?}");
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
