use frk_core::carve::{GridSpec, OccupancyGrid, OriginMode};
use frk_core::metrics::{
    distance_map, evaluate, extract_surface, overlap_counts, surface_distances, surface_score, voxel_overlap,
};
use nalgebra::Point3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(dim: usize, voxel: f64) -> OccupancyGrid {
    OccupancyGrid::empty(
        GridSpec {
            dim,
            voxel_size_mm: voxel,
        },
        [0.0; 3],
        OriginMode::GroundTruth,
    )
}

fn fill(g: &mut OccupancyGrid, lo: [usize; 3], hi: [usize; 3]) {
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                let idx = g.index(i, j, k);
                g.data[idx] = 1;
            }
        }
    }
}

fn brute_directed(a: &[Point3<f64>], b: &[Point3<f64>]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn brute_percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let r = p / 100.0 * (s.len() - 1) as f64;
    let (lo, hi) = (r.floor() as usize, r.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (r - lo as f64)
}

#[test]
fn shifted_cube_counts() {
    let (mut a, mut b) = (grid(16, 1.0), grid(16, 1.0));
    fill(&mut a, [2, 2, 2], [12, 12, 12]);
    fill(&mut b, [3, 2, 2], [13, 12, 12]);
    let o = overlap_counts(&a, &b).unwrap();
    assert_eq!((o.tp, o.fp, o.fn_), (900, 100, 100));
    let (f1, iou) = voxel_overlap(&a, &b).unwrap();
    assert_eq!(f1, 0.9);
    assert!((iou - 900.0 / 1100.0).abs() < 1e-15);
    assert_eq!(format!("{iou:.4}"), "0.8182");
}

#[test]
fn distances_match_quadratic_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let pts = |rng: &mut ChaCha8Rng| -> Vec<Point3<f64>> {
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
        let (a, b) = (pts(&mut rng), pts(&mut rng));
        let d = surface_distances(&a, &b).unwrap();
        let (ab, ba) = (brute_directed(&a, &b), brute_directed(&b, &a));
        assert_eq!(d.a_to_b, ab);
        assert_eq!(d.b_to_a, ba);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert_eq!(d.asd_mm, 0.5 * (mean(&ab) + mean(&ba)));
        assert_eq!(d.hd95_mm, brute_percentile(&ab, 95.0).max(brute_percentile(&ba, 95.0)));
        let rev = surface_distances(&b, &a).unwrap();
        assert!((rev.asd_mm - d.asd_mm).abs() < 1e-12);
        assert_eq!(rev.hd95_mm, d.hd95_mm);
    }
}

#[test]
fn half_precision_full_recall_scores_two_thirds() {
    let gt: Vec<_> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
    let mut pred = gt.clone();
    pred.extend((0..10).map(|i| Point3::new(i as f64, 50.0, 0.0)));
    assert!((surface_score(&pred, &gt, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    let far: Vec<_> = gt.iter().map(|p| p + nalgebra::Vector3::new(0.0, 0.0, 5.0)).collect();
    assert_eq!(surface_score(&far, &gt, 1.0).unwrap(), 0.0);
}

#[test]
fn thick_shell_has_both_boundaries() {
    let mut g = grid(21, 1.0);
    let c = 10.0;
    for k in 0..21 {
        for j in 0..21 {
            for i in 0..21 {
                let r = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2)).sqrt();
                if (4.0..=8.0).contains(&r) {
                    let idx = g.index(i, j, k);
                    g.data[idx] = 1;
                }
            }
        }
    }
    let s = extract_surface(&g);
    let centre = g.voxel_center(10, 10, 10);
    let radii: Vec<f64> = s.iter().map(|p| (p - centre).norm()).collect();
    assert!(radii.iter().any(|&r| r < 5.0));
    assert!(radii.iter().any(|&r| r > 7.0));
}

#[test]
fn doubling_voxel_size_doubles_distances() {
    let build = |v: f64| {
        let (mut a, mut b) = (grid(24, v), grid(24, v));
        fill(&mut a, [4, 4, 4], [14, 14, 14]);
        fill(&mut b, [6, 5, 4], [18, 14, 15]);
        evaluate(&a, &b, 1.0).unwrap()
    };
    let (one, two) = (build(1.0), build(2.0));
    assert!((two.asd_mm - 2.0 * one.asd_mm).abs() < 1e-12);
    assert!((two.hd95_mm - 2.0 * one.hd95_mm).abs() < 1e-12);
}

#[test]
fn distance_map_of_a_protrusion() {
    let (mut gt, mut pred) = (grid(16, 0.5), grid(16, 0.5));
    fill(&mut gt, [4, 4, 4], [10, 10, 10]);
    fill(&mut pred, [4, 4, 4], [10, 10, 10]);
    fill(&mut pred, [10, 7, 7], [11, 8, 8]);
    let m = distance_map(&pred, &gt, 9.0).unwrap();
    let bump = pred.voxel_center(10, 7, 7);
    for (p, &d) in m.points.iter().zip(&m.dist_mm) {
        if (p - bump).norm() < 1e-9 {
            assert!((d - 0.5).abs() < 1e-12);
        } else {
            assert_eq!(d, 0.0);
        }
    }
    let csv = m.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "x_mm,y_mm,z_mm,dist_mm");
    assert_eq!(csv.lines().count(), m.points.len() + 1);
}

fn arb_grid() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..2, 512)
}

fn from_bits(bits: &[u8]) -> OccupancyGrid {
    let mut g = grid(8, 1.0);
    g.data.copy_from_slice(bits);
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn f1_dominates_iou(a in arb_grid(), b in arb_grid()) {
        let (f1, iou) = voxel_overlap(&from_bits(&a), &from_bits(&b)).unwrap();
        prop_assert!(f1 >= iou);
        prop_assert!((0.0..=1.0).contains(&iou) && f1 <= 1.0);
        if f1 == iou {
            prop_assert!(iou == 0.0 || iou == 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_grids_are_perfect(a in arb_grid()) {
        let g = from_bits(&a);
        prop_assume!(g.count() > 0);
        let m = evaluate(&g, &g, 1.0).unwrap();
        prop_assert_eq!((m.f1, m.iou, m.surface_score, m.asd_mm, m.hd95_mm), (1.0, 1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn surface_score_grows_with_tau(a in arb_grid(), b in arb_grid(), t in 0.1f64..3.0) {
        let (pa, pb) = (extract_surface(&from_bits(&a)), extract_surface(&from_bits(&b)));
        prop_assume!(!pa.is_empty() && !pb.is_empty());
        prop_assert!(surface_score(&pa, &pb, t).unwrap() <= surface_score(&pa, &pb, t + 0.5).unwrap());
    }
}
