use frk_core::pipeline::Scene;
use frk_core::volume::Phantom;
use frk_harness::heatmap::{sensitivity_heatmap, HeatmapNode, HeatmapResult, HeatmapSpec};

fn synthetic(f: impl Fn(f64, f64) -> f64) -> HeatmapResult {
    let spec = HeatmapSpec::default();
    let nodes = (0..441)
        .map(|k| {
            let (i, j) = (k % 21, k / 21);
            let (a, b) = (spec.offset_deg(i), spec.offset_deg(j));
            HeatmapNode {
                i,
                j,
                d_orbit_deg: a,
                d_tilt_deg: b,
                surface: f(a, b),
                f1: 0.0,
                iou: 0.0,
            }
        })
        .collect();
    HeatmapResult {
        label: 1,
        nodes_per_axis: 21,
        max_deg: 20.0,
        nodes,
    }
}

#[test]
fn grid_spans_twenty_degrees_in_two_degree_steps() {
    let spec = HeatmapSpec::default();
    assert_eq!(spec.offset_deg(0), -20.0);
    assert_eq!(spec.offset_deg(10), 0.0);
    assert_eq!(spec.offset_deg(20), 20.0);
    assert!(HeatmapSpec {
        nodes: 11,
        ..HeatmapSpec::default()
    }
    .validate()
    .is_err());
    assert!(HeatmapSpec {
        varied: 2,
        ..HeatmapSpec::default()
    }
    .validate()
    .is_err());
}

#[test]
fn peak_range_and_ray_checks_on_a_cone() {
    let r = synthetic(|a, b| 1.0 - (a * a + b * b).sqrt() / 100.0);
    assert_eq!((r.peak().i, r.peak().j), (10, 10));
    assert_eq!(r.peak_distance(), 0);
    assert!((r.range() - 800f64.sqrt() / 100.0).abs() < 1e-12);
    assert_eq!(r.ray_monotone_fraction(), 1.0);
    let shifted = synthetic(|a, b| 1.0 - ((a - 4.0).powi(2) + b * b).sqrt() / 100.0);
    assert_eq!(shifted.peak_distance(), 2);
}

#[test]
fn display_image_interpolates_between_nodes() {
    let r = synthetic(|a, _| (a + 20.0) / 40.0);
    let img = r.display_image(4);
    assert_eq!(img.dims(), [81, 81]);
    assert_eq!(img.get(0, 0), 0);
    assert_eq!(img.get(80, 40), 65535);
    // Halfway between nodes 0 and 1: score 0.025.
    assert_eq!(img.get(2, 7), (0.025f64 * 65535.0).round() as u16);
    let pgm = r.display_pgm(4);
    assert!(pgm.starts_with(b"P5\n81 81\n65535\n"));
    let csv = r.to_csv().unwrap();
    assert_eq!(csv.lines().next().unwrap(), "i,j,d_orbit_deg,d_tilt_deg,surface,f1,iou");
    assert_eq!(csv.lines().count(), 442);
}

/// The sphere score depends only on the angle between the swept view and
/// the fixed lateral view, so the map is mirror symmetric and peaks where
/// the pair is orthogonal.
#[test]
fn sphere_heatmap_is_symmetric_with_central_peak() {
    let scene = Scene::from_phantom(&Phantom::sphere(15.0, 800), 1.0, false).unwrap();
    let r = sensitivity_heatmap(&scene, &HeatmapSpec::default()).unwrap();
    assert_eq!(r.nodes.len(), 441);
    assert!(r.peak_distance() <= 1, "peak {:?}", r.peak());
    for j in 0..21 {
        for i in 0..21 {
            let s = r.at(i, j).surface;
            assert!((s - r.at(20 - i, j).surface).abs() < 0.02, "orbit mirror at ({i},{j})");
            assert!((s - r.at(i, 20 - j).surface).abs() < 0.02, "tilt mirror at ({i},{j})");
        }
    }
}
