//! Undirected-graph helpers shared by the physical network and the
//! communication layer: connectivity, oriented incidence, Laplacian.

use nalgebra::DMatrix;

/// Connected components of an undirected graph on `n` nodes, each sorted,
/// ordered by their smallest node.
pub fn connected_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for &(a, b) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for node in 0..n {
        let root = find(&mut parent, node);
        if root_slot[root] == usize::MAX {
            root_slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[root]].push(node);
    }
    groups
}

/// Oriented incidence matrix: column `k` has +1 at the first endpoint of
/// edge `k` and -1 at the second.
pub fn incidence(n: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, edges.len());
    for (k, &(pos, neg)) in edges.iter().enumerate() {
        out[(pos, k)] = 1.0;
        out[(neg, k)] = -1.0;
    }
    out
}

/// Unweighted Laplacian `D - A` of an undirected graph.
pub fn laplacian(n: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let b = incidence(n, edges);
    &b * b.transpose()
}

/// Numerical rank by Gaussian elimination with partial pivoting.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let (pivot, best) = (rank..rows)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            continue;
        }
        a.swap_rows(rank, pivot);
        for r in (rank + 1)..rows {
            let factor = a[(r, col)] / a[(rank, col)];
            if factor != 0.0 {
                for c in col..cols {
                    let v = a[(rank, c)];
                    a[(r, c)] -= factor * v;
                }
            }
        }
        rank += 1;
    }
    rank
}
