use std::collections::BTreeSet;

/// Minimum-degree fill-reducing ordering on the explicit elimination graph.
///
/// `adjacency[i]` lists the neighbours of node `i` (self loops ignored).
/// Returns `perm` with `perm[k]` = original index eliminated k-th. Ties are
/// broken by node index, so the ordering is deterministic.
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut adj: Vec<Vec<u32>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut v: Vec<u32> = nb.iter().filter(|&&j| j != i).map(|&j| j as u32).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let mut queue: BTreeSet<(usize, u32)> = (0..n).map(|i| (adj[i].len(), i as u32)).collect();
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut merged: Vec<u32> = Vec::new();
    while let Some((_, v)) = queue.pop_first() {
        let v = v as usize;
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            let u = u as usize;
            let old = adj[u].len();
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut p, mut q) = (0, 0);
            while p < a.len() || q < b.len() {
                let next = if q >= b.len() || (p < a.len() && a[p] <= b[q]) {
                    let x = a[p];
                    if q < b.len() && b[q] == x {
                        q += 1;
                    }
                    p += 1;
                    x
                } else {
                    q += 1;
                    b[q - 1]
                };
                if next as usize != u && next as usize != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            queue.remove(&(old, u as u32));
            queue.insert((adj[u].len(), u as u32));
        }
    }
    debug_assert!(eliminated.iter().all(|&e| e));
    perm
}
