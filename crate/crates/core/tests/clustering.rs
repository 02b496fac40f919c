mod support;

use proptest::prelude::*;
use support::{brute_dbscan, random_instance, rng};
use voxcurate_core::clustering::*;
use voxcurate_core::model::{Embedding, SpeakerId};
use voxcurate_core::synth::gen_face_photos;

#[test]
fn matches_reference_on_random_instances() {
    let mut r = rng(11);
    for case in 0..1500 {
        let (d, eps, min_pts) = random_instance(&mut r, 50);
        let got = dbscan(&d, eps, min_pts).unwrap();
        assert_eq!(got, brute_dbscan(&d, eps, min_pts), "case {case}");
    }
}

#[test]
fn two_tight_groups() {
    let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { 0.0 } else { 100.0 }, 0.01 * i as f64]).collect();
    let d = DistanceMatrix::euclidean(&pts).unwrap();
    let a = dbscan(&d, 1.0, 3).unwrap();
    assert_eq!(a.n_clusters(), 2);
    assert_eq!(a.n_noise(), 0);
    assert_eq!(a, brute_dbscan(&d, 1.0, 3));
}

#[test]
fn eps_below_min_distance_is_all_noise() {
    let mut r = rng(5);
    let pts: Vec<Vec<f64>> =
        (0..50).map(|_| (0..2).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect()).collect();
    let d = DistanceMatrix::euclidean(&pts).unwrap();
    let eps = d.min_off_diagonal().unwrap() * 0.5;
    let a = dbscan(&d, eps, 2).unwrap();
    assert_eq!(a.n_noise(), 50);
    assert!(largest_cluster(&a).is_none());
}

#[test]
fn largest_cluster_tie_goes_to_lowest_member() {
    // A = {2,3,4,5,6}, B = {0,1,7,8,9}.
    let a = ClusterAssignment { labels: vec![1, 1, 0, 0, 0, 0, 0, 1, 1, 1], core: vec![true; 10] };
    let c = largest_cluster(&a).unwrap();
    assert_eq!(c.label, 1);
    assert_eq!(c.members, vec![0, 1, 7, 8, 9]);
    let a = ClusterAssignment { labels: vec![0, 0, 1], core: vec![true; 3] };
    assert_eq!(largest_cluster(&a).unwrap().members, vec![0, 1]);
}

fn speaker() -> SpeakerId {
    SpeakerId::new("poi").unwrap()
}

#[test]
fn template_is_mean_of_genuine_photos() {
    let face = vec![0.5, -0.2, 0.8, 0.1, 0.0, 0.3];
    let photos = gen_face_photos(&face, 12, 5, 3).unwrap();
    let t = build_template(speaker(), &photos, &TemplateParams::default()).unwrap();
    let t = t.accepted().expect("accepted");
    assert_eq!(t.support, 12);
    for k in 0..face.len() {
        let mean = photos[..12].iter().map(|p| f64::from(p.values[k])).sum::<f64>() / 12.0;
        assert!((f64::from(t.vector.values[k]) - mean).abs() <= f64::from(f32::EPSILON), "dim {k}");
    }
}

#[test]
fn support_of_nine_is_rejected() {
    let photos = gen_face_photos(&[1.0, 0.0, 0.0, 0.0], 9, 6, 4).unwrap();
    let out = build_template(speaker(), &photos, &TemplateParams::default()).unwrap();
    assert_eq!(out, TemplateOutcome::Rejected { speaker: speaker(), largest: 9 });
    let photos = gen_face_photos(&[1.0, 0.0, 0.0, 0.0], 10, 6, 4).unwrap();
    let out = build_template(speaker(), &photos, &TemplateParams::default()).unwrap();
    assert_eq!(out.accepted().unwrap().support, 10);
}

#[test]
fn identical_photos_give_that_vector() {
    let v = vec![0.25f32, -0.5, 0.75, 0.125];
    let photos: Vec<Embedding> = (0..20).map(|i| Embedding::new(format!("p{i}"), v.clone()).unwrap()).collect();
    let out = build_template(speaker(), &photos, &TemplateParams::default()).unwrap();
    let t = out.accepted().unwrap();
    assert_eq!(t.vector.values, v);
    assert_eq!(t.support, 20);
}

#[test]
fn mixed_dimensions_are_rejected() {
    let photos = vec![Embedding::new("a", vec![1.0, 0.0]).unwrap(), Embedding::new("b", vec![1.0]).unwrap()];
    assert!(build_template(speaker(), &photos, &TemplateParams::default()).is_err());
}

/// Cluster structure as a set of (core member sets), independent of labels.
fn core_partition(a: &ClusterAssignment, order: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
    for (pos, (&l, &c)) in a.labels.iter().zip(&a.core).enumerate() {
        if c && l >= 0 {
            groups.entry(l).or_default().push(order[pos]);
        }
    }
    let mut out: Vec<Vec<usize>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn core_partition_is_permutation_invariant(
        pts in prop::collection::vec((0u8..10, 0u8..10), 1..40),
        eps in 0u8..5,
        min_pts in 1usize..5,
        seed in any::<u64>(),
    ) {
        let n = pts.len();
        let dist = |a: (u8, u8), b: (u8, u8)| f64::from(a.0.abs_diff(b.0)) + f64::from(a.1.abs_diff(b.1));
        let d = DistanceMatrix::from_fn(n, |i, j| dist(pts[i], pts[j])).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng(seed));
        let dp = DistanceMatrix::from_fn(n, |i, j| dist(pts[perm[i]], pts[perm[j]])).unwrap();
        let identity: Vec<usize> = (0..n).collect();
        let a = dbscan(&d, f64::from(eps), min_pts).unwrap();
        let b = dbscan(&dp, f64::from(eps), min_pts).unwrap();
        prop_assert_eq!(core_partition(&a, &identity), core_partition(&b, &perm));
        prop_assert_eq!(a.n_noise(), b.n_noise());
    }

    #[test]
    fn largest_cluster_grows_with_eps_for_min_pts_two(
        pts in prop::collection::vec(0.0f64..20.0, 1..40),
    ) {
        let d = DistanceMatrix::from_fn(pts.len(), |i, j| (pts[i] - pts[j]).abs()).unwrap();
        let mut last = 0;
        for k in 0..30 {
            let eps = 0.25 * f64::from(k);
            let size = largest_cluster(&dbscan(&d, eps, 2).unwrap()).map_or(0, |c| c.members.len());
            prop_assert!(size >= last, "eps {} size {} < {}", eps, size, last);
            last = size;
        }
    }
}

/// For larger min_pts, border reassignment can in principle shrink the
/// largest cluster. Count how often it happens on random instances.
#[test]
fn largest_cluster_monotone_in_eps_on_random_grids() {
    let mut r = rng(21);
    let mut violations = 0;
    for _ in 0..300 {
        let (d, _, min_pts) = random_instance(&mut r, 40);
        let mut last = 0;
        for k in 0..16 {
            let size = largest_cluster(&dbscan(&d, 0.5 * f64::from(k), min_pts).unwrap()).map_or(0, |c| c.members.len());
            if size < last {
                violations += 1;
            }
            last = size;
        }
    }
    assert_eq!(violations, 0);
}
