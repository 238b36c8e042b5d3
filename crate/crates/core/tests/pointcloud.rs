mod common;

use common::*;
use proptest::prelude::*;
use ribpoint::pointcloud::*;
use ribpoint::volume::{connected_components, Connectivity};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_point_per_foreground_voxel(dims in small_dims(), seed in any::<u64>(), density in 0.0f64..1.0) {
        let m = random_mask(dims, density, seed);
        let labels = connected_components(&m, Connectivity::TwentySix);
        let p = voxels_to_points(&m, Some(&labels)).unwrap();
        prop_assert_eq!(p.len(), m.count());
        let vi = p.voxel_index.as_ref().unwrap();
        let lab = p.labels.as_ref().unwrap();
        for i in 0..p.len() {
            prop_assert!(m.data()[vi[i]]);
            prop_assert_eq!(lab[i], LABEL_RIB);
            let c = m.voxel_center(vi[i]);
            prop_assert!((0..3).all(|k| (p.coords[i][k] as f64 - c[k]).abs() < 1e-4));
        }
    }

    #[test]
    fn downsample_then_normalize_round_trips(dims in small_dims(), seed in any::<u64>(), n in 1usize..200) {
        let m = random_mask(dims, 0.5, seed);
        prop_assume!(m.count() > 0);
        let p = voxels_to_points(&m, None).unwrap();
        let d = random_downsample(&p, n, seed).unwrap();
        prop_assert_eq!(d.len(), n);
        let vi = d.voxel_index.as_ref().unwrap();
        if n <= p.len() {
            let mut seen = vi.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n, "repeated index without need");
        }
        let (normed, t) = normalize(&d).unwrap();
        for (a, b) in d.coords.iter().zip(&normed.coords) {
            let back = t.invert(*b);
            prop_assert!((0..3).all(|k| (back[k] - a[k]).abs() <= 1e-6 * a[k].abs().max(t.scale as f32) * 4.0));
        }
        prop_assert!(normed.coords.iter().all(|c| c.iter().map(|v| v * v).sum::<f32>() <= 1.0 + 1e-5));
    }

    #[test]
    fn points_file_round_trips_sampled_voxels(dims in small_dims(), seed in any::<u64>()) {
        let m = random_mask(dims, 0.3, seed);
        let labels = connected_components(&m, Connectivity::Six);
        let p = voxels_to_points(&m, Some(&labels)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_points(dir.path().join("p.rpts"), &p).unwrap();
        let back = read_points(dir.path().join("p.rpts")).unwrap();
        prop_assert_eq!(&back.coords, &p.coords);
        prop_assert_eq!(&back.labels, &p.labels);
        prop_assert!(back.voxel_index.is_none());
    }
}
