//! Disjoint-set forests over face indices.

/// Union by size with path halving.
#[derive(Clone, Debug)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        a
    }

    pub fn set_size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r]
    }
}

/// Union-find that also tracks the unwrapped displacement of every element
/// relative to its root. Joining two elements that are already connected
/// with a displacement different from the stored one means the set closes a
/// non-contractible cycle.
#[derive(Clone, Debug)]
pub struct DisplacementSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Position of the element minus position of its parent.
    offset: Vec<[i32; 2]>,
    wraps: Vec<bool>,
}

impl DisplacementSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            offset: vec![[0, 0]; n],
            wraps: vec![false; n],
        }
    }

    /// Root of `x` and the displacement of `x` relative to it.
    pub fn find(&mut self, x: usize) -> (usize, [i32; 2]) {
        let mut path = Vec::new();
        let mut cur = x;
        while self.parent[cur] != cur {
            path.push(cur);
            cur = self.parent[cur];
        }
        let root = cur;
        // Compress from the top down so each offset becomes root-relative.
        for &node in path.iter().rev() {
            let p = self.parent[node];
            if p != root {
                let po = self.offset[p];
                let o = &mut self.offset[node];
                o[0] += po[0];
                o[1] += po[1];
            }
            self.parent[node] = root;
        }
        (root, if x == root { [0, 0] } else { self.offset[x] })
    }

    /// Records that `pos(b) - pos(a) = delta`. Returns true when this closes
    /// a winding cycle.
    pub fn union(&mut self, a: usize, b: usize, delta: [i32; 2]) -> bool {
        let (ra, oa) = self.find(a);
        let (rb, ob) = self.find(b);
        if ra == rb {
            let closes = [ob[0] - oa[0], ob[1] - oa[1]] != delta;
            if closes {
                self.wraps[ra] = true;
            }
            return closes;
        }
        // pos(rb) - pos(ra) = oa + delta - ob
        let d = [oa[0] + delta[0] - ob[0], oa[1] + delta[1] - ob[1]];
        let (big, small, d) = if self.size[ra] >= self.size[rb] {
            (ra, rb, d)
        } else {
            (rb, ra, [-d[0], -d[1]])
        };
        self.parent[small] = big;
        self.offset[small] = d;
        self.size[big] += self.size[small];
        self.wraps[big] |= self.wraps[small];
        false
    }

    pub fn wraps(&mut self, x: usize) -> bool {
        let (r, _) = self.find(x);
        self.wraps[r]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_sizes() {
        let mut ds = DisjointSet::new(6);
        ds.union(0, 1);
        ds.union(2, 3);
        ds.union(1, 3);
        assert_eq!(ds.set_size(0), 4);
        assert_eq!(ds.set_size(5), 1);
        assert_eq!(ds.find(2), ds.find(0));
    }

    #[test]
    fn ring_of_four_winds_once_closed() {
        // Four sites on a ring of period 4 in x: 0-1-2-3-0.
        let mut ds = DisplacementSet::new(4);
        assert!(!ds.union(0, 1, [1, 0]));
        assert!(!ds.union(1, 2, [1, 0]));
        assert!(!ds.union(2, 3, [1, 0]));
        assert!(!ds.wraps(0));
        assert!(ds.union(3, 0, [1, 0]));
        assert!(ds.wraps(2));
    }

    #[test]
    fn contractible_cycle_does_not_wind() {
        let mut ds = DisplacementSet::new(4);
        ds.union(0, 1, [1, 0]);
        ds.union(1, 2, [0, 1]);
        ds.union(2, 3, [-1, 0]);
        assert!(!ds.union(3, 0, [0, -1]));
        assert!(!ds.wraps(1));
    }
}
