use super::{contract, DiagnosticsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    Euclidean,
    /// Half the L1 distance.
    TotalVariation,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::TotalVariation => 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicMatching {
    /// Row i of A is matched with row `permutation[i]` of B.
    pub permutation: Vec<usize>,
    pub distances: Vec<f64>,
    pub total: f64,
}

/// Minimum-cost assignment on a square cost matrix (Hungarian method with
/// potentials, O(n³)). Returns `assign[row] = column`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based arrays; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[owner[j] - 1] = j - 1;
    }
    assign
}

fn assignment_cost(cost: &[Vec<f64>], assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Optimal cost of the assignment restricted to the given rows and columns.
fn restricted_optimum(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let sub: Vec<Vec<f64>> = rows.iter().map(|&r| cols.iter().map(|&c| cost[r][c]).collect()).collect();
    assignment_cost(&sub, &hungarian(&sub))
}

/// Permutation minimizing the total distance between matched rows. Among
/// optimal permutations (within 1e-12 relative), the lexicographically
/// smallest is returned: each row takes the lowest-index column that still
/// admits an optimal completion.
pub fn match_topics(a: &[Vec<f64>], b: &[Vec<f64>], distance: Distance) -> Result<TopicMatching, DiagnosticsError> {
    if a.len() != b.len() {
        return Err(contract("match_topics", format!("{} topics vs {}", a.len(), b.len())));
    }
    let v = a.first().map(Vec::len).unwrap_or(0);
    if a.iter().chain(b).any(|r| r.len() != v) {
        return Err(contract("match_topics", "rows differ in length"));
    }
    let k = a.len();
    let cost: Vec<Vec<f64>> = a.iter().map(|ra| b.iter().map(|rb| distance.between(ra, rb)).collect()).collect();
    let best = hungarian(&cost);
    let optimum = assignment_cost(&cost, &best);
    let tol = 1e-12 * optimum.abs().max(1.0);

    let mut permutation = Vec::with_capacity(k);
    let mut spent = 0.0;
    let mut free: Vec<usize> = (0..k).collect();
    for i in 0..k {
        let rest_rows: Vec<usize> = (i + 1..k).collect();
        let mut chosen = None;
        for (pos, &j) in free.iter().enumerate() {
            let rest_cols: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
            let total = spent + cost[i][j] + restricted_optimum(&cost, &rest_rows, &rest_cols);
            if total <= optimum + tol {
                chosen = Some(pos);
                break;
            }
        }
        // the Hungarian solution always completes, so a choice exists
        let pos = chosen.unwrap_or_else(|| free.iter().position(|&c| c == best[i]).unwrap());
        let j = free.remove(pos);
        spent += cost[i][j];
        permutation.push(j);
    }
    let distances: Vec<f64> = permutation.iter().enumerate().map(|(i, &j)| cost[i][j]).collect();
    let total = distances.iter().sum();
    Ok(TopicMatching { permutation, distances, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn recovers_row_permutation() {
        let a = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.2, 0.2, 0.6]];
        let perm = [2, 0, 1];
        let mut b = vec![vec![]; 3];
        for (i, &j) in perm.iter().enumerate() {
            b[j] = a[i].clone();
        }
        let m = match_topics(&a, &b, Distance::Euclidean).unwrap();
        assert_eq!(m.permutation, perm);
        assert_eq!(m.total, 0.0);
    }

    #[test]
    fn small_noise_keeps_identity() {
        let a: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let b: Vec<Vec<f64>> = a.iter().enumerate().map(|(i, r)| r.iter().map(|x| x + 0.01 * (i as f64 - 1.5)).collect()).collect();
        assert_eq!(match_topics(&a, &b, Distance::Euclidean).unwrap().permutation, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_take_lowest_index() {
        // every row of B equidistant from every row of A
        let a = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let b = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(match_topics(&a, &b, Distance::Euclidean).unwrap().permutation, vec![0, 1]);
        let a = vec![vec![0.0, 0.0]; 3];
        assert_eq!(match_topics(&a, &a, Distance::TotalVariation).unwrap().permutation, vec![0, 1, 2]);
    }

    #[test]
    fn mismatched_k_is_an_error() {
        assert!(match_topics(&[vec![1.0]], &[vec![1.0], vec![0.0]], Distance::Euclidean).is_err());
    }

    proptest! {
        #[test]
        fn optimal_against_brute_force(k in 1usize..=5, seed in proptest::collection::vec(0.0f64..1.0, 50)) {
            let a: Vec<Vec<f64>> = (0..k).map(|i| seed[i * 2..i * 2 + 2].to_vec()).collect();
            let b: Vec<Vec<f64>> = (0..k).map(|i| seed[20 + i * 3..20 + i * 3 + 2].to_vec()).collect();
            let m = match_topics(&a, &b, Distance::Euclidean).unwrap();
            let mut sorted = m.permutation.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..k).collect::<Vec<_>>());
            for p in permutations(k) {
                let t: f64 = p.iter().enumerate().map(|(i, &j)| Distance::Euclidean.between(&a[i], &b[j])).sum();
                prop_assert!(m.total <= t + 1e-12);
            }
        }
    }
}
