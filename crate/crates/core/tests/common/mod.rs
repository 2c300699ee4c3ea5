//! Independent brute-force reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::Rng;
use segqual::classifier::Dataset;
use segqual::{ClassId, SegmentationMask};

/// 4-connected same-class components by breadth-first flood fill, in raster
/// order of their first pixel; background is skipped.
pub fn flood_fill(mask: &SegmentationMask, bg: ClassId) -> Vec<(ClassId, Vec<usize>)> {
    let (h, w) = (mask.height(), mask.width());
    let l = mask.labels();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || l[start] == bg {
            continue;
        }
        let class = l[start];
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (r, c) = (i / w, i % w);
            let mut nb = Vec::new();
            if r > 0 {
                nb.push(i - w);
            }
            if r + 1 < h {
                nb.push(i + w);
            }
            if c > 0 {
                nb.push(i - 1);
            }
            if c + 1 < w {
                nb.push(i + 1);
            }
            for j in nb {
                if !seen[j] && l[j] == class {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        comp.sort_unstable();
        out.push((class, comp));
    }
    out
}

/// `(p, IoU, IoU_adj)` of every predicted component by explicit set algebra.
pub fn segment_quality_oracle(pred: &SegmentationMask, gt: &SegmentationMask, bg: ClassId) -> Vec<(f64, f64, f64)> {
    let pcomps = flood_fill(pred, bg);
    let gcomps = flood_fill(gt, bg);
    pcomps
        .iter()
        .enumerate()
        .map(|(si, (class, pixels))| {
            let s: HashSet<usize> = pixels.iter().copied().collect();
            let mut k: HashSet<usize> = HashSet::new();
            for (gc, gp) in &gcomps {
                if gc == class && gp.iter().any(|i| s.contains(i)) {
                    k.extend(gp.iter().copied());
                }
            }
            let mut o: HashSet<usize> = HashSet::new();
            for (oi, (oc, op)) in pcomps.iter().enumerate() {
                if oi != si && oc == class {
                    o.extend(op.iter().filter(|i| k.contains(i)).copied());
                }
            }
            let inter = s.intersection(&k).count();
            let union = s.union(&k).count();
            let k_minus_o: HashSet<usize> = k.difference(&o).copied().collect();
            let union_adj = s.union(&k_minus_o).count();
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            (ratio(inter, s.len()), ratio(inter, union), ratio(inter, union_adj))
        })
        .collect()
}

/// Mean IoU over classes present in either mask, by per-class pixel sets.
pub fn miou_oracle(pred: &SegmentationMask, gt: &SegmentationMask) -> f64 {
    let classes: BTreeSet<ClassId> = pred.labels().iter().chain(gt.labels()).copied().collect();
    let mut total = 0.0;
    for &c in &classes {
        let p: HashSet<usize> = (0..pred.num_pixels()).filter(|&i| pred.labels()[i] == c).collect();
        let g: HashSet<usize> = (0..gt.num_pixels()).filter(|&i| gt.labels()[i] == c).collect();
        total += p.intersection(&g).count() as f64 / p.union(&g).count() as f64;
    }
    total / classes.len() as f64
}

/// Ground truth from random rectangles; the prediction perturbs it with
/// rectangles and isolated pixels of random classes.
pub fn random_mask_pair(rng: &mut impl Rng, h: usize, w: usize, classes: u16) -> (SegmentationMask, SegmentationMask) {
    let paint = |m: &mut Vec<u16>, rng: &mut dyn rand::RngCore, rects: usize| {
        for _ in 0..rects {
            let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
            let (r1, c1) = (rng.random_range(r0..h), rng.random_range(c0..w));
            let class = rng.random_range(0..classes);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    m[r * w + c] = class;
                }
            }
        }
    };
    let mut gt = vec![0u16; h * w];
    let n = rng.random_range(1..8);
    paint(&mut gt, rng, n);
    let mut pred = gt.clone();
    let n = rng.random_range(0..5);
    paint(&mut pred, rng, n);
    for _ in 0..rng.random_range(0..12) {
        let i = rng.random_range(0..h * w);
        pred[i] = rng.random_range(0..classes);
    }
    (
        SegmentationMask::new(h, w, pred).unwrap(),
        SegmentationMask::new(h, w, gt).unwrap(),
    )
}

/// AUROC by counting every positive/negative pair, ties as one half.
pub fn pair_count_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// AP by recounting precision and recall from scratch at every distinct
/// threshold.
pub fn threshold_ap(scores: &[f64], labels: &[bool]) -> (f64, Vec<(f64, f64, f64)>) {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev = 0.0;
    let mut curve = Vec::new();
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / positives;
        let precision = tp / selected.len() as f64;
        ap += (recall - prev) * precision;
        prev = recall;
        curve.push((t, recall, precision));
    }
    (ap, curve)
}

/// Pearson correlation from means first, then centred sums.
pub fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Frobenius norm of the explicit `N x C` gradient matrix with entries
/// `p_k (1 - [k == argmax]) psi_c`.
pub fn gradient_oracle(p: &[f32], psi: &[f32]) -> f64 {
    let mut argmax = 0;
    for k in 1..p.len() {
        if p[k] > p[argmax] {
            argmax = k;
        }
    }
    let mut sum = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        let coef = if k == argmax { 0.0 } else { pk as f64 };
        for &c in psi {
            let m = coef * c as f64;
            sum += m * m;
        }
    }
    sum.sqrt()
}

/// Owners of pixels in the 4-dilation of `pixels` that lie outside it:
/// `None` for background, `Some(component index)` otherwise.
pub fn dilation_neighbors(mask: &SegmentationMask, comps: &[(ClassId, Vec<usize>)], which: usize) -> BTreeSet<Option<usize>> {
    let (h, w) = (mask.height(), mask.width());
    let mut owner = vec![None; h * w];
    for (k, (_, px)) in comps.iter().enumerate() {
        for &i in px {
            owner[i] = Some(k);
        }
    }
    let own: HashSet<usize> = comps[which].1.iter().copied().collect();
    let mut dilated = HashSet::new();
    for &i in &comps[which].1 {
        let (r, c) = (i as isize / w as isize, i as isize % w as isize);
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (rr, cc) = (r + dr, c + dc);
            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                dilated.insert(rr as usize * w + cc as usize);
            }
        }
    }
    dilated.difference(&own).map(|&j| owner[j]).collect()
}

/// XOR of two off-centre thresholds on a 40 x 40 grid in [-1, 1]^2.
pub fn xor_dataset() -> Dataset {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        for j in 0..40 {
            let (x, y) = (i as f64 / 39.0 * 2.0 - 1.0, j as f64 / 39.0 * 2.0 - 1.0);
            values.extend([x, y]);
            labels.push((x > 0.3) != (y > -0.2));
        }
    }
    Dataset::new(2, values, labels).unwrap()
}

/// Whether some depth-2 axis-aligned tree separates the dataset, by trying
/// every root split and every split in each child.
pub fn depth2_separable(data: &Dataset) -> bool {
    let thresholds = |rows: &[usize], f: usize| -> Vec<f64> {
        let v: BTreeSet<u64> = rows.iter().map(|&i| data.row(i)[f].to_bits()).collect();
        v.into_iter().map(f64::from_bits).collect()
    };
    let pure = |rows: &[usize]| rows.iter().all(|&i| data.labels[i]) || rows.iter().all(|&i| !data.labels[i]);
    let child_ok = |rows: &[usize]| -> bool {
        if pure(rows) {
            return true;
        }
        (0..data.num_features).any(|f| {
            thresholds(rows, f).into_iter().any(|t| {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| data.row(i)[f] <= t);
                pure(&l) && pure(&r)
            })
        })
    };
    let all: Vec<usize> = (0..data.len()).collect();
    (0..data.num_features).any(|f| {
        thresholds(&all, f).into_iter().any(|t| {
            let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| data.row(i)[f] <= t);
            child_ok(&l) && child_ok(&r)
        })
    })
}

/// Class histogram of a mask.
pub fn class_set(mask: &SegmentationMask) -> BTreeMap<ClassId, usize> {
    let mut m = BTreeMap::new();
    for &c in mask.labels() {
        *m.entry(c).or_insert(0) += 1;
    }
    m
}
