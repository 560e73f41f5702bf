//! Oct-tree over a point set with per-node summary statistics.
//!
//! Points are inserted one at a time from the root. A point passed to a
//! node updates that node's count, centroid, total momentum and tight
//! ("actual") bounds on the way down. Leaves hold a single point except at
//! [`MAX_DEPTH`], where coincident points share a bucket.
//!
//! Node children are stored in an arena and addressed by `u32`; octant `o`
//! has bit 0 set for the high-x half, bit 1 for high-y and bit 2 for high-z.
//! A coordinate exactly on a splitting plane goes to the high half.

use crate::types::check_len;
use crate::{Error, MomentumSet, PointSet, Real, Result, Vec3};

pub const MAX_DEPTH: u32 = 32;
/// Largest number of points a max-depth leaf may hold.
pub const MAX_BUCKET: usize = 64;

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Payload {
    Empty,
    Single(u32),
    Bucket(Vec<u32>),
}

#[derive(Clone, Debug)]
pub struct OctreeNode<T> {
    pub cell_min: Vec3<T>,
    pub cell_max: Vec3<T>,
    pub actual_min: Vec3<T>,
    pub actual_max: Vec3<T>,
    pub count: usize,
    pub centroid: Vec3<T>,
    pub total_momentum: Vec3<T>,
    pub adjoint_pos_sum: Vec3<T>,
    pub adjoint_mom_sum: Vec3<T>,
    position_sum: Vec3<T>,
    pub(crate) children: [u32; 8],
    parent: u32,
    depth: u32,
    pub(crate) payload: Payload,
}

impl<T: Real> OctreeNode<T> {
    fn new(cell_min: Vec3<T>, cell_max: Vec3<T>, parent: u32, depth: u32) -> Self {
        OctreeNode {
            cell_min,
            cell_max,
            actual_min: Vec3::splat(T::infinity()),
            actual_max: Vec3::splat(T::neg_infinity()),
            count: 0,
            centroid: Vec3::zero(),
            total_momentum: Vec3::zero(),
            adjoint_pos_sum: Vec3::zero(),
            adjoint_mom_sum: Vec3::zero(),
            position_sum: Vec3::zero(),
            children: [NONE; 8],
            parent,
            depth,
            payload: Payload::Empty,
        }
    }

    fn absorb(&mut self, q: Vec3<T>, p: Vec3<T>) {
        self.count += 1;
        self.position_sum += q;
        self.centroid = self.position_sum / T::from_count(self.count);
        self.total_momentum += p;
        self.actual_min = self.actual_min.min(&q);
        self.actual_max = self.actual_max.max(&q);
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(|&c| c == NONE)
    }

    #[inline]
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Child node ids in octant order.
    pub fn children(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.children
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != NONE)
            .map(|(o, &c)| (o, c as usize))
    }

    /// Point indices held by a leaf (empty for internal nodes).
    pub fn points(&self) -> &[u32] {
        match &self.payload {
            Payload::Empty => &[],
            Payload::Single(i) => std::slice::from_ref(i),
            Payload::Bucket(v) => v,
        }
    }

    pub fn center(&self) -> Vec3<T> {
        (self.cell_min + self.cell_max) / T::two()
    }

    /// Distance from `x` to the tight bounding box of the contained points;
    /// a lower bound on the distance to any of them.
    #[inline]
    pub fn min_distance(&self, x: &Vec3<T>) -> T {
        let mut d2 = T::zero();
        for c in 0..3 {
            let lo = self.actual_min[c] - x[c];
            let hi = x[c] - self.actual_max[c];
            let gap = lo.max(hi).max(T::zero());
            d2 += gap * gap;
        }
        d2.sqrt()
    }
}

#[inline]
fn octant<T: Real>(center: &Vec3<T>, q: &Vec3<T>) -> usize {
    (q[0] >= center[0]) as usize | ((q[1] >= center[1]) as usize) << 1 | ((q[2] >= center[2]) as usize) << 2
}

fn child_cell<T: Real>(min: &Vec3<T>, max: &Vec3<T>, o: usize) -> (Vec3<T>, Vec3<T>) {
    let mid = (*min + *max) / T::two();
    let mut lo = *min;
    let mut hi = *max;
    for c in 0..3 {
        if o >> c & 1 == 1 {
            lo[c] = mid[c];
        } else {
            hi[c] = mid[c];
        }
    }
    (lo, hi)
}

/// Oct-tree built over one `(q, p)` snapshot.
#[derive(Clone, Debug)]
pub struct Octree<T> {
    nodes: Vec<OctreeNode<T>>,
    positions: Vec<Vec3<T>>,
    momenta: Vec<Vec3<T>>,
    alpha: Vec<Vec3<T>>,
    beta: Vec<Vec3<T>>,
    leaf_of: Vec<u32>,
}

impl<T: Real> Octree<T> {
    /// Root cell is the global bounding box of `q`, padded by a relative
    /// 1e-9; points are inserted in index order.
    pub fn build(q: &PointSet<T>, p: &MomentumSet<T>) -> Result<Self> {
        check_len(q.len(), p.len())?;
        Self::build_raw(q.as_slice(), p.as_slice())
    }

    pub(crate) fn build_raw(q: &[Vec3<T>], p: &[Vec3<T>]) -> Result<Self> {
        let (lo, hi) = q
            .iter()
            .fold((Vec3::splat(T::infinity()), Vec3::splat(T::neg_infinity())), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
        let extent = (hi - lo).max_abs().max(lo.max_abs()).max(hi.max_abs()).max(T::one());
        let pad = extent * T::lit(1e-9).max(T::epsilon() * T::lit(4.0));
        let root = OctreeNode::new(lo - Vec3::splat(pad), hi + Vec3::splat(pad), NONE, 0);
        let n = q.len();
        let mut tree = Octree {
            nodes: Vec::with_capacity(2 * n + 1),
            positions: q.to_vec(),
            momenta: p.to_vec(),
            alpha: vec![Vec3::zero(); n],
            beta: vec![Vec3::zero(); n],
            leaf_of: vec![NONE; n],
        };
        tree.nodes.push(root);
        for i in 0..n {
            tree.insert(i)?;
        }
        Ok(tree)
    }

    fn child_for(&mut self, node: usize, q: &Vec3<T>) -> usize {
        let n = &self.nodes[node];
        let o = octant(&n.center(), q);
        if n.children[o] != NONE {
            return n.children[o] as usize;
        }
        let (lo, hi) = child_cell(&n.cell_min, &n.cell_max, o);
        let depth = n.depth + 1;
        let id = self.nodes.len();
        self.nodes.push(OctreeNode::new(lo, hi, node as u32, depth));
        self.nodes[node].children[o] = id as u32;
        id
    }

    /// Inserts point `index` (already stored in the tree's arrays).
    ///
    /// Internal node: pass down to the octant. Empty leaf: store. Occupied
    /// leaf: subdivide, push the occupant down, keep descending with the
    /// new point.
    fn insert(&mut self, index: usize) -> Result<()> {
        let q = self.positions[index];
        let p = self.momenta[index];
        let root = &self.nodes[0];
        for c in 0..3 {
            if !(q[c] >= root.cell_min[c] && q[c] <= root.cell_max[c]) {
                return Err(Error::OutOfBounds { index });
            }
        }
        let mut node = 0;
        loop {
            self.nodes[node].absorb(q, p);
            if !self.nodes[node].is_leaf() {
                node = self.child_for(node, &q);
                continue;
            }
            let depth = self.nodes[node].depth;
            match std::mem::replace(&mut self.nodes[node].payload, Payload::Empty) {
                Payload::Empty => {
                    self.nodes[node].payload = Payload::Single(index as u32);
                    self.leaf_of[index] = node as u32;
                    return Ok(());
                }
                Payload::Single(j) if depth < MAX_DEPTH => {
                    let (qj, pj) = (self.positions[j as usize], self.momenta[j as usize]);
                    let cj = self.child_for(node, &qj);
                    self.nodes[cj].absorb(qj, pj);
                    self.nodes[cj].payload = Payload::Single(j);
                    self.leaf_of[j as usize] = cj as u32;
                    node = self.child_for(node, &q);
                }
                Payload::Single(j) => {
                    self.nodes[node].payload = Payload::Bucket(vec![j, index as u32]);
                    self.leaf_of[index] = node as u32;
                    return Ok(());
                }
                Payload::Bucket(mut v) => {
                    if v.len() >= MAX_BUCKET {
                        self.nodes[node].payload = Payload::Bucket(v);
                        return Err(Error::DuplicatePointOverflow { limit: MAX_BUCKET });
                    }
                    v.push(index as u32);
                    self.nodes[node].payload = Payload::Bucket(v);
                    self.leaf_of[index] = node as u32;
                    return Ok(());
                }
            }
        }
    }

    /// Replaces every node's adjoint sums with `Σ α_i`, `Σ β_i` over its
    /// points. Each point's values are added along its leaf-to-root path,
    /// in index order.
    pub fn accumulate_adjoints(&mut self, alpha: &[Vec3<T>], beta: &[Vec3<T>]) -> Result<()> {
        check_len(self.positions.len(), alpha.len())?;
        check_len(self.positions.len(), beta.len())?;
        for n in &mut self.nodes {
            n.adjoint_pos_sum = Vec3::zero();
            n.adjoint_mom_sum = Vec3::zero();
        }
        for i in 0..alpha.len() {
            let mut node = self.leaf_of[i];
            while node != NONE {
                let n = &mut self.nodes[node as usize];
                n.adjoint_pos_sum += alpha[i];
                n.adjoint_mom_sum += beta[i];
                node = n.parent;
            }
        }
        self.alpha.copy_from_slice(alpha);
        self.beta.copy_from_slice(beta);
        Ok(())
    }

    pub fn root(&self) -> &OctreeNode<T> {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &OctreeNode<T> {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[OctreeNode<T>] {
        &self.nodes
    }

    pub fn num_points(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3<T>] {
        &self.positions
    }

    pub fn momenta(&self) -> &[Vec3<T>] {
        &self.momenta
    }

    pub fn alpha(&self) -> &[Vec3<T>] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Vec3<T>] {
        &self.beta
    }

    /// Node id of the leaf holding point `i`.
    pub fn leaf_of(&self, i: usize) -> usize {
        self.leaf_of[i] as usize
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> (PointSet<f64>, MomentumSet<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let q: Vec<_> = (0..n).map(|_| v()).collect();
        let p: Vec<_> = (0..n).map(|_| v()).collect();
        (PointSet::new(q).unwrap(), MomentumSet::new(p).unwrap())
    }

    /// Geometric membership: half-open cells, closed at the root's max face.
    fn in_cell(tree: &Octree<f64>, node: &OctreeNode<f64>, q: &Vec3<f64>) -> bool {
        let root = tree.root();
        (0..3).all(|c| {
            q[c] >= node.cell_min[c]
                && (q[c] < node.cell_max[c] || (node.cell_max[c] == root.cell_max[c] && q[c] <= root.cell_max[c]))
        })
    }

    fn check_against_membership(tree: &Octree<f64>, q: &PointSet<f64>, p: &MomentumSet<f64>) {
        let mut seen = vec![0usize; q.len()];
        for node in tree.nodes() {
            let members: Vec<usize> = (0..q.len()).filter(|&i| in_cell(tree, node, &q[i])).collect();
            assert_eq!(node.count, members.len());
            assert!(node.count >= 1);
            let mut sum = Vec3::zero();
            let mut mom = Vec3::zero();
            let mut lo = Vec3::splat(f64::INFINITY);
            let mut hi = Vec3::splat(f64::NEG_INFINITY);
            for &i in &members {
                sum += q[i];
                mom += p[i];
                lo = lo.min(&q[i]);
                hi = hi.max(&q[i]);
            }
            assert_eq!(node.centroid, sum / members.len() as f64);
            assert_eq!(node.total_momentum, mom);
            assert_eq!(node.actual_min, lo);
            assert_eq!(node.actual_max, hi);
            for c in 0..3 {
                assert!(lo[c] <= node.centroid[c] && node.centroid[c] <= hi[c]);
                assert!(node.cell_min[c] <= lo[c] && hi[c] <= node.cell_max[c]);
            }
            if node.is_leaf() {
                assert_eq!(node.points().len(), node.count);
                assert_eq!(node.count, 1, "distinct points must end in singleton leaves");
                for &i in node.points() {
                    seen[i as usize] += 1;
                }
            } else {
                assert!(node.points().is_empty());
                let child_sum: usize = node.children().map(|(_, c)| tree.node(c).count).sum();
                assert_eq!(child_sum, node.count);
            }
        }
        assert!(seen.iter().all(|&s| s == 1), "every point in exactly one leaf");
    }

    #[test]
    fn single_point_root_is_leaf() {
        let q = PointSet::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let p = MomentumSet::from_rows(&[[0.5, 0.0, -1.0]]).unwrap();
        let t = Octree::build(&q, &p).unwrap();
        assert_eq!(t.nodes().len(), 1);
        let r = t.root();
        assert!(r.is_leaf());
        assert_eq!(r.count, 1);
        assert_eq!(r.centroid, q[0]);
        assert_eq!(r.total_momentum, p[0]);
    }

    #[test]
    fn eight_corners_split_once() {
        let mut rows = Vec::new();
        for o in 0..8 {
            rows.push([(o & 1) as f64, (o >> 1 & 1) as f64, (o >> 2 & 1) as f64]);
        }
        let q = PointSet::from_rows(&rows).unwrap();
        let t = Octree::build(&q, &MomentumSet::zeros(8)).unwrap();
        assert_eq!(t.root().count, 8);
        let kids: Vec<_> = t.root().children().collect();
        assert_eq!(kids.len(), 8);
        for (o, c) in kids {
            let node = t.node(c);
            assert!(node.is_leaf());
            assert_eq!(node.points(), &[o as u32]);
        }
    }

    #[test]
    fn insert_into_occupied_leaf_splits() {
        let q = PointSet::from_rows(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).unwrap();
        let p = MomentumSet::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let t = Octree::build(&q, &p).unwrap();
        assert!(!t.root().is_leaf());
        assert_eq!(t.root().children().count(), 2);
        assert_eq!(t.root().total_momentum, Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(t.root().centroid, Vec3::splat(0.5));
    }

    #[test]
    fn hundred_points_match_membership() {
        let (q, p) = random(100, 5);
        let t = Octree::build(&q, &p).unwrap();
        check_against_membership(&t, &q, &p);
    }

    #[test]
    fn ten_points_match_membership() {
        let (q, p) = random(10, 77);
        let t = Octree::build(&q, &p).unwrap();
        check_against_membership(&t, &q, &p);
    }

    #[test]
    fn planar_input_builds() {
        let rows: Vec<_> = (0..40).map(|i| [i as f64 * 0.5, (i % 4) as f64, 0.0]).collect();
        let q = PointSet::from_rows(&rows).unwrap();
        let t = Octree::build(&q, &MomentumSet::zeros(40)).unwrap();
        check_against_membership(&t, &q, &MomentumSet::zeros(40));
    }

    #[test]
    fn coincident_points_share_a_bucket() {
        let q = PointSet::from_rows(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        let p = MomentumSet::from_rows(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let t = Octree::build(&q, &p).unwrap();
        let leaf = t.node(t.leaf_of(0));
        assert_eq!(leaf.depth(), MAX_DEPTH);
        assert_eq!(leaf.points(), &[0, 1, 2]);
        assert_eq!(leaf.total_momentum, Vec3::new(6.0, 0.0, 0.0));
        assert_eq!(t.root().count, 4);
    }

    #[test]
    fn too_many_coincident_points_is_an_error() {
        let rows = vec![[0.5, 0.5, 0.5]; MAX_BUCKET + 1];
        let q = PointSet::from_rows(&rows).unwrap();
        let r = Octree::build(&q, &MomentumSet::zeros(rows.len()));
        assert!(matches!(r, Err(Error::DuplicatePointOverflow { .. })));
    }

    #[test]
    fn mismatched_lengths() {
        let (q, _) = random(4, 1);
        assert!(Octree::build(&q, &MomentumSet::zeros(3)).is_err());
        let mut t = Octree::build(&q, &MomentumSet::zeros(4)).unwrap();
        assert!(t.accumulate_adjoints(&[Vec3::zero(); 3], &[Vec3::zero(); 4]).is_err());
    }

    #[test]
    fn adjoints_zero_and_single() {
        let (q, p) = random(20, 9);
        let mut t = Octree::build(&q, &p).unwrap();
        t.accumulate_adjoints(&vec![Vec3::zero(); 20], &vec![Vec3::zero(); 20]).unwrap();
        assert!(t.nodes().iter().all(|n| n.adjoint_pos_sum == Vec3::zero() && n.adjoint_mom_sum == Vec3::zero()));

        let q1 = PointSet::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let mut t1 = Octree::build(&q1, &MomentumSet::zeros(1)).unwrap();
        let a = Vec3::new(1.0, 2.0, 3.0);
        let b = Vec3::new(-1.0, 0.5, 0.0);
        t1.accumulate_adjoints(&[a], &[b]).unwrap();
        assert_eq!(t1.root().adjoint_pos_sum, a);
        assert_eq!(t1.root().adjoint_mom_sum, b);
    }

    #[test]
    fn adjoints_match_membership() {
        let (q, p) = random(50, 31);
        let (alpha, beta) = random(50, 32);
        let mut t = Octree::build(&q, &p).unwrap();
        let before: Vec<_> = t.nodes().iter().map(|n| (n.count, n.centroid, n.total_momentum)).collect();
        t.accumulate_adjoints(alpha.as_slice(), beta.as_slice()).unwrap();
        for (node, b) in t.nodes().iter().zip(&before) {
            assert_eq!((node.count, node.centroid, node.total_momentum), *b);
            let mut sa = Vec3::zero();
            let mut sb = Vec3::zero();
            for i in (0..50).filter(|&i| in_cell(&t, node, &q[i])) {
                sa += alpha[i];
                sb += beta[i];
            }
            assert_eq!(node.adjoint_pos_sum, sa);
            assert_eq!(node.adjoint_mom_sum, sb);
        }
    }

    #[test]
    fn min_distance_examples() {
        let q = PointSet::from_rows(&[[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]).unwrap();
        let t = Octree::build(&q, &MomentumSet::zeros(2)).unwrap();
        assert_eq!(t.root().min_distance(&Vec3::new(5.0, 0.0, 0.0)), 4.0);
        assert_eq!(t.root().min_distance(&Vec3::new(0.2, -0.3, 0.9)), 0.0);
    }

    #[test]
    fn min_distance_is_a_lower_bound() {
        let (q, p) = random(30, 4);
        let t = Octree::build(&q, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let x = Vec3::new(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0));
            for node in t.nodes() {
                let members = (0..30).filter(|&i| in_cell(&t, node, &q[i]));
                let closest = members.map(|i| (x - q[i]).norm()).fold(f64::INFINITY, f64::min);
                assert!(node.min_distance(&x) <= closest);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn statistics_do_not_depend_on_insertion_order(seed in 0u64..1000, n in 2usize..120, shift in 1usize..119) {
            let (q, p) = random(n, seed);
            let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
            if perm.iter().collect::<std::collections::HashSet<_>>().len() != n { return Ok(()); }
            let qp = PointSet::new(perm.iter().map(|&i| q[i]).collect()).unwrap();
            let pp = MomentumSet::new(perm.iter().map(|&i| p[i]).collect()).unwrap();
            let a = Octree::build(&q, &p).unwrap();
            let b = Octree::build(&qp, &pp).unwrap();
            prop_assert_eq!(a.nodes().len(), b.nodes().len());
            for na in a.nodes() {
                let nb = b.nodes().iter().find(|nb| nb.cell_min == na.cell_min && nb.cell_max == na.cell_max);
                let nb = nb.expect("same cell exists in both trees");
                prop_assert_eq!(na.count, nb.count);
                prop_assert!((na.centroid - nb.centroid).max_abs() <= 1e-12 * na.centroid.max_abs().max(1.0));
                prop_assert!((na.total_momentum - nb.total_momentum).max_abs() <= 1e-12 * (na.count as f64));
            }
        }

        #[test]
        fn depth_bounded_for_separated_points(seed in 0u64..1000, n in 1usize..200) {
            let (q, p) = random(n, seed);
            let t = Octree::build(&q, &p).unwrap();
            prop_assert!(t.max_depth() <= MAX_DEPTH);
        }
    }
}
