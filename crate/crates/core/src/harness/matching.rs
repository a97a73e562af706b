//! Assignment of estimated angles to true angles.

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Reorders `estimate` so that entry `k` is matched to `truth[k]`, choosing
/// the assignment with the smallest total squared error over all `K!`
/// permutations. Returns the reordered estimate and per-angle squared errors.
pub fn match_angles(truth: &[f64], estimate: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(truth.len(), estimate.len(), "angle counts differ");
    let total = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(k, &j)| (estimate[j] - truth[k]).powi(2)).sum() };
    let best = permutations(truth.len())
        .into_iter()
        .min_by(|a, b| total(a).total_cmp(&total(b)))
        .unwrap_or_default();
    let matched: Vec<f64> = best.iter().map(|&j| estimate[j]).collect();
    let errors = matched.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).collect();
    (matched, errors)
}

/// Greedy nearest-neighbour assignment, true angles taken in order.
pub fn greedy_match(truth: &[f64], estimate: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut free: Vec<usize> = (0..estimate.len()).collect();
    let mut matched = Vec::with_capacity(truth.len());
    for &t in truth {
        let (pos, _) = free
            .iter()
            .enumerate()
            .min_by(|a, b| (estimate[*a.1] - t).abs().total_cmp(&(estimate[*b.1] - t).abs()))
            .expect("angle counts differ");
        matched.push(estimate[free.remove(pos)]);
    }
    let errors = matched.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).collect();
    (matched, errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(0).len(), 1);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(5).len(), 120);
    }

    #[test]
    fn undoes_shuffle() {
        let (m, e) = match_angles(&[-0.3, 0.1, 0.9], &[0.9, -0.3, 0.1]);
        assert_eq!(m, vec![-0.3, 0.1, 0.9]);
        assert!(e.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn beats_greedy_when_greedy_is_suboptimal() {
        let truth = [0.3, 0.5];
        let est = [0.45, 0.0];
        let (_, ge) = greedy_match(&truth, &est);
        let (_, ee) = match_angles(&truth, &est);
        assert!(ee.iter().sum::<f64>() < ge.iter().sum::<f64>());
    }
}
