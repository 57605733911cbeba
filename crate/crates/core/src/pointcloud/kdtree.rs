//! Static 3-d tree for k-nearest-neighbor queries.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Inner { axis: usize, split: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Original index of each reordered point.
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(positions: &[Vector3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..positions.len() as u32).collect();
        let mut nodes = Vec::new();
        if !positions.is_empty() {
            build_node(positions, &mut order, 0, &mut nodes);
        }
        let points = order
            .iter()
            .map(|&i| {
                let p = positions[i as usize];
                [p.x, p.y, p.z]
            })
            .collect();
        Self {
            points,
            ids: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest neighbors of `query` as `(original index, squared
    /// distance)`, nearest first. Ties are broken by original index. The
    /// point with index `exclude`, if any, is skipped.
    pub fn nearest(&self, query: &Vector3<f64>, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let q = [query.x, query.y, query.z];
        let ex = exclude.map(|e| e as u32);
        self.search(0, &q, k, ex, &mut best);
        best.into_iter().map(|(d, i)| (i as usize, d)).collect()
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, ex: Option<u32>, best: &mut Vec<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for j in start..end {
                    let id = self.ids[j];
                    if Some(id) == ex {
                        continue;
                    }
                    let p = &self.points[j];
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if best.len() == k {
                        let (wd, wi) = best[k - 1];
                        if (d, id) >= (wd, wi) {
                            continue;
                        }
                        best.pop();
                    }
                    let pos = best.partition_point(|&(bd, bi)| (bd, bi) < (d, id));
                    best.insert(pos, (d, id));
                }
            }
            Node::Inner { axis, split, left, right } => {
                let diff = q[axis] - split;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, ex, best);
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, ex, best);
                }
            }
        }
    }
}

fn build_node(positions: &[Vector3<f64>], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = positions[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        positions[a as usize][axis]
            .total_cmp(&positions[b as usize][axis])
            .then(a.cmp(&b))
    });
    let split = positions[order[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build_node(positions, l, offset, nodes);
    let right = build_node(positions, r, offset + mid, nodes);
    nodes[id] = Node::Inner { axis, split, left, right };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize, ex: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != ex)
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(d, i)| (i, d)).collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..300),
            k in 1usize..25,
            qi in 0usize..300,
        ) {
            let points: Vec<Vector3<f64>> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
            let tree = KdTree::build(&points);
            let qi = qi % points.len();
            let q = points[qi];
            prop_assert_eq!(tree.nearest(&q, k, Some(qi)), brute(&points, &q, k, Some(qi)));
            let off = q + Vector3::new(0.013, -0.2, 0.05);
            prop_assert_eq!(tree.nearest(&off, k, None), brute(&points, &off, k, None));
        }
    }

    #[test]
    fn duplicates_tie_break_by_index() {
        let points = vec![Vector3::zeros(); 40];
        let tree = KdTree::build(&points);
        let got: Vec<usize> = tree.nearest(&Vector3::zeros(), 3, Some(0)).iter().map(|x| x.0).collect();
        assert_eq!(got, vec![1, 2, 3]);
    }
}
