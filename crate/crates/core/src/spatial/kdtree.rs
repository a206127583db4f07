use nalgebra::Vector3;

/// One k-NN result. `index` is the position of the point in the slice the
/// index was built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KnnError {
    #[error("k-NN query against an empty index")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
}

#[inline]
pub(crate) fn squared_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Implicit balanced 3-d tree. Node `i` of the subtree over `perm[lo..hi]` is
/// the median `mid = (lo + hi) / 2`, split along `axis[mid]`.
#[derive(Debug, Clone)]
pub struct KdIndex {
    points: Vec<Vector3<f64>>,
    perm: Vec<u32>,
    axis: Vec<u8>,
}

impl KdIndex {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut axis = vec![0u8; points.len()];
        build_rec(&points, &mut perm, &mut axis, 0);
        Self { points, perm, axis }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }

    /// The `k` nearest points to `query`, ascending by distance; equal
    /// distances are ordered by lower index.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Result<Vec<Neighbor>, KnnError> {
        if self.points.is_empty() {
            return Err(KnnError::Empty);
        }
        if k == 0 {
            return Err(KnnError::ZeroK);
        }
        let k = k.min(self.points.len());
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(query, k, 0, self.perm.len(), &mut best);
        Ok(best.into_iter().map(|(d2, i)| Neighbor { index: i as usize, distance: d2.sqrt() }).collect())
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Result<Neighbor, KnnError> {
        Ok(self.knn(query, 1)?[0])
    }

    fn search(&self, q: &Vector3<f64>, k: usize, lo: usize, hi: usize, best: &mut Vec<(f64, u32)>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.perm[mid];
        let p = &self.points[idx as usize];
        insert(best, k, (squared_distance(q, p), idx));

        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, k, near.0, near.1, best);
        // `<=` so that tied points with lower indices on the far side are still found.
        if best.len() < k || diff * diff <= best.last().unwrap().0 {
            self.search(q, k, far.0, far.1, best);
        }
    }
}

fn insert(best: &mut Vec<(f64, u32)>, k: usize, cand: (f64, u32)) {
    let less = |a: &(f64, u32), b: &(f64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if best.len() == k && !less(&cand, best.last().unwrap()) {
        return;
    }
    let pos = best.iter().position(|b| less(&cand, b)).unwrap_or(best.len());
    best.insert(pos, cand);
    best.truncate(k);
}

fn build_rec(points: &[Vector3<f64>], perm: &mut [u32], axis: &mut [u8], offset: usize) {
    if perm.is_empty() {
        return;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in perm.iter() {
        lo = lo.inf(&points[i as usize]);
        hi = hi.sup(&points[i as usize]);
    }
    let ax = (hi - lo).imax();
    let mid = perm.len() / 2;
    perm.select_nth_unstable_by(mid, |&a, &b| points[a as usize][ax].total_cmp(&points[b as usize][ax]));
    axis[offset + mid] = ax as u8;
    let (left, right) = perm.split_at_mut(mid);
    build_rec(points, left, axis, offset);
    build_rec(points, &mut right[1..], axis, offset + mid + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = p - q;
                (i, d.x * d.x + d.y * d.y + d.z * d.z)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn single_point() {
        let idx = KdIndex::build(vec![Vector3::new(1.0, 2.0, 3.0)]);
        let r = idx.knn(&Vector3::new(-5.0, 0.0, 9.0), 4).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].index, 0);
    }

    #[test]
    fn lattice_axis_neighbors() {
        let mut pts = Vec::new();
        for x in -1..=1 {
            for y in -1..=1 {
                for z in -1..=1 {
                    pts.push(Vector3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let idx = KdIndex::build(pts.clone());
        let r = idx.knn(&Vector3::zeros(), 7).unwrap();
        assert_eq!(r[0].distance, 0.0);
        let axis: Vec<_> = r[1..].iter().collect();
        assert!(axis.iter().all(|n| n.distance == 1.0));
        let mut got: Vec<usize> = axis.iter().map(|n| n.index).collect();
        got.sort();
        let mut expect: Vec<usize> =
            pts.iter().enumerate().filter(|(_, p)| p.norm() == 1.0).map(|(i, _)| i).collect();
        expect.sort();
        assert_eq!(got, expect);
        // ties resolved by index order
        assert!(r[1..].windows(2).all(|w| w[0].index < w[1].index));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<Vector3<f64>> =
            (0..1000).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        let idx = KdIndex::build(pts.clone());
        for _ in 0..100 {
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            let got = idx.knn(&q, 8).unwrap();
            let expect = brute(&pts, &q, 8);
            for (g, e) in got.iter().zip(&expect) {
                assert_eq!(g.index, e.0);
                assert_eq!(g.distance, e.1.sqrt());
            }
        }
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let pts = vec![Vector3::new(1.0, 0.0, 0.0); 10];
        let idx = KdIndex::build(pts);
        let r = idx.knn(&Vector3::zeros(), 3).unwrap();
        assert_eq!(r.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn errors() {
        assert_eq!(KdIndex::build(vec![]).knn(&Vector3::zeros(), 1), Err(KnnError::Empty));
        assert_eq!(KdIndex::build(vec![Vector3::zeros()]).knn(&Vector3::zeros(), 0), Err(KnnError::ZeroK));
    }
}
