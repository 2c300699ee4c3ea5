//! Invariants checked on generated inputs.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use segqual::classifier::{fit_gbdt, train_logistic, Dataset, GbdtConfig, GbdtParams, LogisticConfig};
use segqual::correction::{correct_mask, correct_mask_in_order, ActionKind};
use segqual::eval::{auroc, delta_miou_report, precision_recall};
use segqual::features::{aggregate_segment_features, uncertainty_grids};
use segqual::quality::segment_qualities;
use segqual::uncertainty::{normalized_entropy, one_minus_max_prob, top2_margin};
use segqual::{
    argmax_mask, decompose, image_miou, FeatureSetKind, FeatureSetSpec, Neighbor, ProbabilityMap, SegmentId,
    SegmentationMask, UncertaintyHeatmaps,
};

fn mask_strategy(max_side: usize, classes: u16) -> impl Strategy<Value = SegmentationMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        prop::collection::vec(0..classes, h * w).prop_map(move |l| SegmentationMask::new(h, w, l).unwrap())
    })
}

fn mask_pair(max_side: usize, classes: u16) -> impl Strategy<Value = (SegmentationMask, SegmentationMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        (
            prop::collection::vec(0..classes, h * w),
            prop::collection::vec(0..classes, h * w),
        )
            .prop_map(move |(a, b)| (SegmentationMask::new(h, w, a).unwrap(), SegmentationMask::new(h, w, b).unwrap()))
    })
}

fn probs_strategy(max_side: usize, max_classes: usize) -> impl Strategy<Value = ProbabilityMap> {
    (1..=max_side, 1..=max_side, 2..=max_classes).prop_flat_map(|(h, w, n)| {
        prop::collection::vec(0.001f64..1.0, h * w * n).prop_map(move |raw| {
            let mut values = Vec::with_capacity(raw.len());
            for px in raw.chunks(n) {
                let t: f64 = px.iter().sum();
                values.extend(px.iter().map(|v| (v / t) as f32));
            }
            ProbabilityMap::new(h, w, n, values).unwrap()
        })
    })
}

fn permuted(m: &SegmentationMask, perm: &[u16]) -> SegmentationMask {
    SegmentationMask::new(m.height(), m.width(), m.labels().iter().map(|&c| perm[c as usize]).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decomposition_partitions_foreground(m in mask_strategy(12, 4)) {
        let d = decompose(&m, 0);
        let total: usize = d.segments.iter().map(|s| s.len()).sum();
        prop_assert_eq!(total, m.labels().iter().filter(|&&c| c != 0).count());
        for (i, &c) in m.labels().iter().enumerate() {
            let id = d.id_map.data[i];
            prop_assert_eq!(id == 0, c == 0);
            if id != 0 {
                prop_assert!(d.get(id).unwrap().pixels.binary_search(&i).is_ok());
            }
        }
        // ids follow raster order of first pixel
        let firsts: Vec<usize> = d.segments.iter().map(|s| s.pixels[0]).collect();
        prop_assert!(firsts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn decomposition_commutes_with_relabeling(m in mask_strategy(10, 4)) {
        // permutation fixing background
        let perm = [0u16, 3, 1, 2];
        let a = decompose(&m, 0);
        let b = decompose(&permuted(&m, &perm), 0);
        prop_assert_eq!(a.segments.len(), b.segments.len());
        for (x, y) in a.segments.iter().zip(&b.segments) {
            prop_assert_eq!(&x.pixels, &y.pixels);
            prop_assert_eq!(perm[x.class as usize], y.class);
        }
    }

    #[test]
    fn boundary_and_inner_are_consistent(m in mask_strategy(12, 3)) {
        let d = decompose(&m, 0);
        let w = m.width() as isize;
        let h = m.height() as isize;
        for s in &d.segments {
            prop_assert!(!s.boundary.is_empty());
            prop_assert_eq!(s.boundary.len() + s.inner.len(), s.len());
            let own: BTreeSet<usize> = s.pixels.iter().copied().collect();
            for &i in &s.inner {
                let (r, c) = (i as isize / w, i as isize % w);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        prop_assert!(rr >= 0 && cc >= 0 && rr < h && cc < w);
                        prop_assert!(own.contains(&((rr * w + cc) as usize)));
                    }
                }
            }
        }
    }

    #[test]
    fn neighbour_relation_is_symmetric(m in mask_strategy(12, 4)) {
        let d = decompose(&m, 0);
        for s in &d.segments {
            for n in &s.neighbors {
                if let Neighbor::Segment(o) = n {
                    prop_assert!(d.get(*o).unwrap().neighbors.contains(&Neighbor::Segment(s.id)));
                }
            }
        }
    }

    #[test]
    fn quality_ordering_and_range((pred, gt) in mask_pair(10, 4)) {
        let q = segment_qualities(&pred, &decompose(&pred, 0), &gt, &decompose(&gt, 0));
        for s in q {
            for v in [s.precision_p, s.iou, s.iou_adj] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(s.precision_p >= s.iou_adj && s.iou_adj >= s.iou);
        }
    }

    #[test]
    fn miou_invariant_under_class_permutation((pred, gt) in mask_pair(10, 4)) {
        let perm = [2u16, 0, 3, 1];
        let a = image_miou(&pred, &gt).unwrap();
        let b = image_miou(&permuted(&pred, &perm), &permuted(&gt, &perm)).unwrap();
        prop_assert!((a.miou - b.miou).abs() < 1e-12);
        prop_assert_eq!(a.num_wrong_classes, b.num_wrong_classes);
    }

    #[test]
    fn removing_absent_class_segment_never_hurts((pred, gt) in mask_pair(10, 5)) {
        let gt_classes: BTreeSet<u16> = gt.labels().iter().copied().collect();
        let d = decompose(&pred, 0);
        let before = image_miou(&pred, &gt).unwrap().miou;
        // holds when the removed pixels are background in the ground truth;
        // see `removal_onto_foreground_can_lower_miou` for the general case
        let on_background = |s: &segqual::Segment| s.pixels.iter().all(|&i| gt.labels()[i] == 0);
        for s in d.segments.iter().filter(|s| !gt_classes.contains(&s.class) && on_background(s)) {
            let mut m = pred.clone();
            for &i in &s.pixels {
                m.labels_mut()[i] = 0;
            }
            prop_assert!(image_miou(&m, &gt).unwrap().miou >= before - 1e-12);
        }
    }

    #[test]
    fn heatmaps_in_unit_range_and_permutation_covariant(p in probs_strategy(6, 6)) {
        let n = p.num_classes();
        let maps = [one_minus_max_prob(&p), normalized_entropy(&p), top2_margin(&p)];
        for g in &maps {
            prop_assert!(g.data.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
        // reverse the class channels
        let rev: Vec<f32> = p.pixels().flat_map(|px| px.iter().rev().copied().collect::<Vec<_>>()).collect();
        let q = ProbabilityMap::new(p.height(), p.width(), n, rev).unwrap();
        let maps_q = [one_minus_max_prob(&q), normalized_entropy(&q), top2_margin(&q)];
        for (a, b) in maps.iter().zip(&maps_q) {
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entropy_base_independent(p in probs_strategy(5, 8)) {
        let n = p.num_classes() as f64;
        let e = normalized_entropy(&p);
        for (i, px) in p.pixels().enumerate() {
            let h2: f64 = -px.iter().map(|&v| {
                let v = (v as f64).max(1e-12);
                v * v.log2()
            }).sum::<f64>() / n.log2();
            prop_assert!((e.data[i] - h2).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ignores_positive_rescaling(p in probs_strategy(5, 5), k in 0.1f32..10.0) {
        let n = p.num_classes();
        let scaled: Vec<f32> = p.pixels().flat_map(|px| {
            let s: f32 = px.iter().map(|v| v * k).sum();
            px.iter().map(move |v| v * k / s).collect::<Vec<_>>()
        }).collect();
        // only when renormalization keeps the ordering exact
        let q = ProbabilityMap::new(p.height(), p.width(), n, scaled).unwrap();
        let a = argmax_mask(&p);
        let b = argmax_mask(&q);
        for i in 0..p.num_pixels() {
            let px = p.pixel_at(i);
            let top = px[a.labels()[i] as usize];
            let close = px.iter().enumerate().any(|(c, &v)| c != a.labels()[i] as usize && (top - v).abs() < 1e-5);
            if !close {
                prop_assert_eq!(a.labels()[i], b.labels()[i]);
            }
        }
    }

    #[test]
    fn full_mean_is_weighted_region_mean(p in probs_strategy(10, 4)) {
        let mask = argmax_mask(&p);
        let heat = UncertaintyHeatmaps::compute(&p, None).unwrap();
        let grids = uncertainty_grids(&heat);
        let spec = FeatureSetSpec::new(FeatureSetKind::All, p.num_classes(), false);
        for s in &decompose(&mask, 0).segments {
            let f = aggregate_segment_features(&grids, s, &spec).unwrap();
            let again = aggregate_segment_features(&grids, s, &spec).unwrap();
            prop_assert_eq!(&f, &again);
            prop_assert_eq!(f.len(), spec.len());
            if s.inner.is_empty() {
                continue;
            }
            for (m, _) in &grids {
                let full = f[&format!("mean_{m}")] * s.len() as f64;
                let parts = f[&format!("mean_bnd_{m}")] * s.boundary.len() as f64
                    + f[&format!("mean_inn_{m}")] * s.inner.len() as f64;
                prop_assert!((full - parts).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn correction_contracts(m in mask_strategy(10, 4), seed in any::<u64>(), tau in 0.0f64..1.0) {
        let d = decompose(&m, 0);
        let mut s = seed;
        let scores: BTreeMap<SegmentId, f64> = d.segments.iter().map(|seg| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seg.id, (s >> 11) as f64 / (1u64 << 53) as f64)
        }).collect();
        let fwd = correct_mask(&m, &d, &scores, tau, 0).unwrap();
        let rev: Vec<SegmentId> = d.segments.iter().rev().map(|x| x.id).collect();
        let bwd = correct_mask_in_order(&m, &d, &scores, tau, 0, &rev).unwrap();
        prop_assert_eq!(&fwd, &bwd);
        for seg in &d.segments {
            let changed = seg.pixels.iter().any(|&i| fwd.corrected_mask.labels()[i] != m.labels()[i]);
            if scores[&seg.id] <= tau {
                prop_assert!(!changed);
            }
        }
        for a in &fwd.actions {
            let seg = d.get(a.segment_id).unwrap();
            prop_assert!(a.score > tau);
            if a.action == ActionKind::ReplacedByClass {
                prop_assert_eq!(seg.neighbors.len(), 1);
                let Neighbor::Segment(n) = *seg.neighbors.iter().next().unwrap() else {
                    return Err(TestCaseError::fail("replaced segment touches background"));
                };
                prop_assert_eq!(a.new_class, d.get(n).unwrap().class);
            } else {
                prop_assert_eq!(a.new_class, 0);
            }
        }
        let none = correct_mask(&m, &d, &scores, 1.0, 0).unwrap();
        prop_assert_eq!(&none.corrected_mask, &m);
    }

    #[test]
    fn auroc_complement_and_monotone_invariance(
        pts in prop::collection::vec((0u8..20, any::<bool>()), 2..80)
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0 as f64 / 20.0).collect();
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = auroc(&scores, &labels).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((a + auroc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(a, auroc(&warped, &labels).unwrap());
    }

    #[test]
    fn perfect_ranking_gives_unit_ap(
        pts in prop::collection::vec((0u8..50, any::<bool>()), 2..60)
    ) {
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let separated: Vec<f64> = pts.iter().map(|p| p.0 as f64 + if p.1 { 100.0 } else { 0.0 }).collect();
        prop_assert_eq!(precision_recall(&separated, &labels).unwrap().average_precision, 1.0);
        let mixed: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
        let ap = precision_recall(&mixed, &labels).unwrap().average_precision;
        let perfect = auroc(&mixed, &labels).unwrap() == 1.0;
        prop_assert_eq!(ap == 1.0, perfect);
    }

    #[test]
    fn delta_mean_is_difference_of_means(
        pairs in prop::collection::vec((mask_pair(6, 3), mask_pair(6, 3)), 1..8)
    ) {
        let mut before = Vec::new();
        let mut after = Vec::new();
        for ((p, g), _) in &pairs {
            before.push(image_miou(p, g).unwrap());
            let mut q = p.clone();
            q.labels_mut()[0] = g.labels()[0];
            after.push(image_miou(&q, g).unwrap());
        }
        let r = delta_miou_report(&before, &after, None).unwrap();
        let n = pairs.len() as f64;
        let mb = before.iter().map(|q| q.miou).sum::<f64>() / n;
        let ma = after.iter().map(|q| q.miou).sum::<f64>() / n;
        prop_assert_eq!(r.delta_miou.mean, ma - mb);
    }
}

#[test]
fn removal_onto_foreground_can_lower_miou() {
    // class 2 is absent from the ground truth, yet removing it to background
    // adds a background false positive: 1/3 -> 1/4
    let pred = SegmentationMask::new(1, 2, vec![0, 2]).unwrap();
    let gt = SegmentationMask::new(1, 2, vec![0, 1]).unwrap();
    let fixed = SegmentationMask::new(1, 2, vec![0, 0]).unwrap();
    assert_eq!(image_miou(&pred, &gt).unwrap().miou, 1.0 / 3.0);
    assert_eq!(image_miou(&fixed, &gt).unwrap().miou, 0.25);
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 30..80).prop_map(|rows| {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (x, y, noise) in rows {
            values.extend([x, y]);
            labels.push((x + 0.5 * y > 0.0) != (noise && x.abs() < 1.0));
        }
        Dataset::new(2, values, labels).unwrap()
    })
    .prop_filter("needs both classes", |d| {
        let (p, n) = d.class_counts();
        p > 0 && n > 0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gbdt_invariant_under_monotone_feature_transform(data in dataset_strategy()) {
        let params = GbdtParams { num_trees: 20, max_depth: 3, ..Default::default() };
        let (a, _) = fit_gbdt(&data, &params, &GbdtConfig::default(), 3).unwrap();
        let warp = |v: f64| v.powi(3) + 2.0 * v;
        let values: Vec<f64> = data.values.chunks(2).flat_map(|r| [warp(r[0]), r[1]]).collect();
        let warped = Dataset::new(2, values, data.labels.clone()).unwrap();
        let (b, _) = fit_gbdt(&warped, &params, &GbdtConfig::default(), 3).unwrap();
        for i in 0..data.len() {
            prop_assert_eq!(a.margin(data.row(i)), b.margin(warped.row(i)));
        }
    }

    #[test]
    fn gbdt_ignores_duplicated_column(data in dataset_strategy()) {
        let params = GbdtParams { num_trees: 20, max_depth: 3, ..Default::default() };
        let (a, _) = fit_gbdt(&data, &params, &GbdtConfig::default(), 3).unwrap();
        let values: Vec<f64> = data.values.chunks(2).flat_map(|r| [r[0], r[1], r[1]]).collect();
        let dup = Dataset::new(3, values, data.labels.clone()).unwrap();
        let (b, _) = fit_gbdt(&dup, &params, &GbdtConfig::default(), 3).unwrap();
        for i in 0..data.len() {
            prop_assert_eq!(a.margin(data.row(i)), b.margin(dup.row(i)));
        }
    }

    #[test]
    fn logistic_invariant_under_affine_rescaling(data in dataset_strategy(), scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let (a, _) = train_logistic(&data, &LogisticConfig::default()).unwrap();
        let values: Vec<f64> = data.values.chunks(2).flat_map(|r| [r[0] * scale + shift, r[1]]).collect();
        let moved = Dataset::new(2, values, data.labels.clone()).unwrap();
        let (b, _) = train_logistic(&moved, &LogisticConfig::default()).unwrap();
        for i in 0..data.len() {
            prop_assert!((a.margin(data.row(i)) - b.margin(moved.row(i))).abs() < 1e-9);
        }
    }
}
