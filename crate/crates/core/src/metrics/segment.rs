// Graph-based greedy region merging on a 4-neighbour pixel grid.

use image::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmenterParams {
    /// Scale of the merge threshold; larger values give larger regions.
    pub k: f64,
    /// Regions below this many pixels are absorbed by a neighbour.
    pub min_size: usize,
}

impl Default for SegmenterParams {
    fn default() -> Self {
        Self { k: 300.0, min_size: 20 }
    }
}

/// Segment ids in raster order of first appearance, plus the boundary map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    boundary: Vec<bool>,
    num_segments: usize,
}

impl SegmentMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    /// Builds a map from arbitrary labels, renumbering them and deriving the boundary.
    pub fn from_labels(height: usize, width: usize, raw: &[u32]) -> Self {
        assert_eq!(raw.len(), height * width, "label count must match dimensions");
        let mut remap = std::collections::HashMap::new();
        let labels: Vec<u32> = raw
            .iter()
            .map(|r| {
                let next = remap.len() as u32;
                *remap.entry(*r).or_insert(next)
            })
            .collect();
        let boundary = boundary_of(height, width, &labels);
        Self {
            height,
            width,
            labels,
            boundary,
            num_segments: remap.len(),
        }
    }
}

fn boundary_of(h: usize, w: usize, labels: &[u32]) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i];
            out[i] = (x > 0 && labels[i - 1] != l)
                || (x + 1 < w && labels[i + 1] != l)
                || (y > 0 && labels[i - w] != l)
                || (y + 1 < h && labels[i + w] != l);
        }
    }
    out
}

struct Forest {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize, w: f64) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = w;
    }
}

pub fn segment_detect(image: &RgbImage, params: &SegmenterParams) -> SegmentMap {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let raw = image.as_raw();
    let dist = |a: usize, b: usize| {
        (0..3)
            .map(|c| {
                let d = raw[3 * a + c] as f64 - raw[3 * b + c] as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };

    let mut edges = Vec::with_capacity(2 * h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                edges.push((dist(i, i + 1), i, i + 1));
            }
            if y + 1 < h {
                edges.push((dist(i, i + w), i, i + w));
            }
        }
    }
    // stable, so equal weights keep raster order
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut forest = Forest::new(h * w);
    for &(wt, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra == rb {
            continue;
        }
        let ta = forest.internal[ra] + params.k / forest.size[ra] as f64;
        let tb = forest.internal[rb] + params.k / forest.size[rb] as f64;
        if wt <= ta.min(tb) {
            // edges arrive in ascending order, so wt is the new internal maximum
            forest.union(ra, rb, wt);
        }
    }
    for &(_, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra != rb && (forest.size[ra] < params.min_size || forest.size[rb] < params.min_size) {
            let keep = forest.internal[ra].max(forest.internal[rb]);
            forest.union(ra, rb, keep);
        }
    }

    let raw: Vec<u32> = (0..h * w).map(|i| forest.find(i) as u32).collect();
    SegmentMap::from_labels(h, w, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn constant_image_is_one_segment() {
        let img = RgbImage::from_pixel(12, 9, Rgb([40, 80, 120]));
        let s = segment_detect(&img, &SegmenterParams::default());
        assert_eq!(s.num_segments(), 1);
        assert!(s.boundary().iter().all(|b| !b));
    }

    #[test]
    fn two_half_planes() {
        let img = RgbImage::from_fn(16, 16, |x, _| if x < 8 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let s = segment_detect(&img, &SegmenterParams::default());
        assert_eq!(s.num_segments(), 2);
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(s.boundary()[y * 16 + x], x == 7 || x == 8, "({x},{y})");
            }
        }
    }

    #[test]
    fn infinite_scale_merges_everything() {
        let img = RgbImage::from_fn(10, 10, |x, y| Rgb([(x * 25) as u8, (y * 25) as u8, ((x * y) % 256) as u8]));
        let s = segment_detect(&img, &SegmenterParams { k: f64::INFINITY, min_size: 1 });
        assert_eq!(s.num_segments(), 1);
    }

    #[test]
    fn ids_are_contiguous_in_raster_order() {
        let s = SegmentMap::from_labels(1, 4, &[9, 3, 9, 7]);
        assert_eq!(s.labels(), &[0, 1, 0, 2]);
        assert_eq!(s.num_segments(), 3);
    }
}
