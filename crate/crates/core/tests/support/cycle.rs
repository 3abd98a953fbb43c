use randwire_core::StageDag;

/// Three-colour DFS over the full edge set, pseudo-nodes included.
pub fn has_cycle(d: &StageDag) -> bool {
    let total = d.n_internal + 2;
    let mut adj = vec![Vec::new(); total];
    for (a, b) in d.full_edges() {
        adj[a].push(b);
    }
    let mut colour = vec![0u8; total];
    for root in 0..total {
        if colour[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        colour[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&u) = adj[v].get(*next) {
                *next += 1;
                match colour[u] {
                    0 => {
                        colour[u] = 1;
                        stack.push((u, 0));
                    }
                    1 => return true,
                    _ => {}
                }
            } else {
                colour[v] = 2;
                stack.pop();
            }
        }
    }
    false
}
