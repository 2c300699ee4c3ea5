//! Decomposition of a class mask into connected segments.
//!
//! Segments are 4-connected components of a single non-background class.
//! Ids are 1-based and assigned in raster order of each component's first
//! pixel; id 0 in the id map marks background. Pixels are stored as linear
//! row-major indices.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::maps::{ClassId, Grid, SegmentationMask};

pub type SegmentId = u32;

/// Something adjacent to a segment: another segment or background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Neighbor {
    Background,
    Segment(SegmentId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: SegmentId,
    pub class: ClassId,
    /// Linear pixel indices in raster order.
    pub pixels: Vec<usize>,
    pub boundary: Vec<usize>,
    pub inner: Vec<usize>,
    pub neighbors: BTreeSet<Neighbor>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDecomposition {
    pub segments: Vec<Segment>,
    pub id_map: Grid<SegmentId>,
}

impl SegmentDecomposition {
    /// Segment with the given id. Ids are dense, so this is an index lookup.
    pub fn get(&self, id: SegmentId) -> Option<&Segment> {
        id.checked_sub(1)
            .and_then(|i| self.segments.get(i as usize))
    }

    pub fn height(&self) -> usize {
        self.id_map.height
    }

    pub fn width(&self) -> usize {
        self.id_map.width
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels 4-connected same-class components, skipping `background_class`.
pub fn decompose(mask: &SegmentationMask, background_class: ClassId) -> SegmentDecomposition {
    let (h, w) = (mask.height(), mask.width());
    let labels = mask.labels();

    // Two-pass labeling: provisional labels joined through a disjoint set.
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSet { parent: vec![0] };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let class = labels[i];
            if class == background_class {
                continue;
            }
            let up = (r > 0 && labels[i - w] == class).then(|| provisional[i - w]);
            let left = (c > 0 && labels[i - 1] == class).then(|| provisional[i - 1]);
            provisional[i] = match (up, left) {
                (Some(a), Some(b)) => {
                    sets.union(a, b);
                    a.min(b)
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => {
                    let next = sets.parent.len() as u32;
                    sets.parent.push(next);
                    next
                }
            };
        }
    }

    // Final ids in raster order of first pixel.
    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut id_map = Grid::filled(h, w, 0u32);
    let mut segments: Vec<Segment> = Vec::new();
    for i in 0..h * w {
        if provisional[i] == 0 {
            continue;
        }
        let root = sets.find(provisional[i]) as usize;
        if final_of_root[root] == 0 {
            segments.push(Segment {
                id: segments.len() as SegmentId + 1,
                class: labels[i],
                pixels: Vec::new(),
                boundary: Vec::new(),
                inner: Vec::new(),
                neighbors: BTreeSet::new(),
            });
            final_of_root[root] = segments.len() as u32;
        }
        let id = final_of_root[root];
        id_map.data[i] = id;
        segments[id as usize - 1].pixels.push(i);
    }

    for seg in &mut segments {
        let (boundary, inner) = split_boundary_inner(seg, &id_map);
        seg.boundary = boundary;
        seg.inner = inner;
        seg.neighbors = neighbor_segments(seg, &id_map);
    }
    SegmentDecomposition { segments, id_map }
}

/// Splits a segment's pixels into `(boundary, inner)`. A pixel is inner when
/// all eight neighbors lie in the image and belong to the same segment.
pub fn split_boundary_inner(seg: &Segment, id_map: &Grid<SegmentId>) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = (id_map.height, id_map.width);
    seg.pixels.iter().partition(|&&i| {
        let (r, c) = (i / w, i % w);
        if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
            return true;
        }
        let ids = &id_map.data;
        ![
            i - w - 1,
            i - w,
            i - w + 1,
            i - 1,
            i + 1,
            i + w - 1,
            i + w,
            i + w + 1,
        ]
        .iter()
        .all(|&j| ids[j] == seg.id)
    })
}

/// Segments (or background) owning a pixel 4-adjacent to `seg` but outside
/// it: the one-step cross dilation of the segment minus the segment itself.
pub fn neighbor_segments(seg: &Segment, id_map: &Grid<SegmentId>) -> BTreeSet<Neighbor> {
    let (h, w) = (id_map.height, id_map.width);
    let mut out = BTreeSet::new();
    let mut visit = |j: usize| match id_map.data[j] {
        id if id == seg.id => {}
        0 => {
            out.insert(Neighbor::Background);
        }
        id => {
            out.insert(Neighbor::Segment(id));
        }
    };
    // Inner pixels have no outside 4-neighbors.
    for &i in &seg.boundary {
        let (r, c) = (i / w, i % w);
        if r > 0 {
            visit(i - w);
        }
        if r + 1 < h {
            visit(i + w);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < w {
            visit(i + 1);
        }
    }
    out
}
