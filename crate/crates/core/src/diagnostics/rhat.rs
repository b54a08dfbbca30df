use super::{check_chains, mean, variance, DiagnosticsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhatResult {
    pub value: f64,
    /// Set when the within-half variance is zero; the value is then +∞.
    pub degenerate: bool,
}

/// Split-R̂: each chain is halved (dropping the middle draw of odd lengths)
/// and R̂ = √(var⁺ / W) is computed over the halves.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<RhatResult, DiagnosticsError> {
    let n = check_chains("rhat", chains, 4)?;
    let half = n / 2;
    let halves: Vec<&[f64]> =
        chains.iter().flat_map(|c| [&c[..half], &c[n - half..]]).collect();
    let w = halves.iter().map(|h| variance(h)).sum::<f64>() / halves.len() as f64;
    if !(w > 0.0) {
        return Ok(RhatResult { value: f64::INFINITY, degenerate: true });
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let b_over_n = variance(&means);
    let nf = half as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    Ok(RhatResult { value: (var_plus / w).sqrt(), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn normal_chain(mean: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn converged_chains() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| normal_chain(0.0, 2000, s)).collect();
        let r = split_rhat(&chains).unwrap().value;
        assert!(r < 1.01 && r > 0.99, "{r}");
    }

    #[test]
    fn separated_chains_match_formula() {
        let chains = vec![normal_chain(0.0, 2000, 1), normal_chain(10.0, 2000, 2)];
        let r = split_rhat(&chains).unwrap().value;
        // hand formula on the four halves
        let halves: Vec<Vec<f64>> =
            chains.iter().flat_map(|c| [c[..1000].to_vec(), c[1000..].to_vec()]).collect();
        let w = halves.iter().map(|h| variance(h)).sum::<f64>() / 4.0;
        let ms: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
        let gm = mean(&ms);
        let b = 1000.0 * ms.iter().map(|m| (m - gm).powi(2)).sum::<f64>() / 3.0;
        let want = ((999.0 / 1000.0 * w + b / 1000.0) / w).sqrt();
        assert!((r - want).abs() < 1e-12);
        assert!(r > 3.0);
    }

    #[test]
    fn constant_chain_flagged() {
        let r = split_rhat(&[vec![1.0; 10]]).unwrap();
        assert!(r.degenerate && r.value.is_infinite());
    }

    #[test]
    fn monotone_in_separation() {
        let base = [normal_chain(0.0, 500, 3), normal_chain(0.0, 500, 4)];
        let mut last = 0.0;
        for shift in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let chains = vec![base[0].clone(), base[1].iter().map(|v| v + shift).collect()];
            let r = split_rhat(&chains).unwrap().value;
            assert!(r >= last);
            last = r;
        }
    }

    proptest! {
        #[test]
        fn affine_invariant(a in -5.0f64..5.0, b in 0.1f64..10.0, seed in 0u64..100) {
            let chains = vec![normal_chain(0.0, 100, seed), normal_chain(0.3, 100, seed + 1000)];
            let t: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| a + b * v).collect()).collect();
            let r1 = split_rhat(&chains).unwrap().value;
            let r2 = split_rhat(&t).unwrap().value;
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }
}
