use super::{contract, DistributionError};
use crate::special::{log_sigmoid, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// K−1 reals to a K-simplex, with centering offsets so zero maps to uniform.
    StickBreaking,
    /// Elementwise exp onto (0, ∞).
    LogPositive,
    /// K−1 logits plus a fixed zero at `anchor`, mapped through softmax.
    AnchoredSoftmax,
}

/// A constrained↔unconstrained map. `dimension` is the constrained size: K for
/// the simplex transforms, the element count for log-positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub dimension: usize,
    pub anchor: usize,
}

impl TransformSpec {
    pub fn stick_breaking(k: usize) -> Self {
        Self { kind: TransformKind::StickBreaking, dimension: k, anchor: 0 }
    }

    pub fn log_positive(n: usize) -> Self {
        Self { kind: TransformKind::LogPositive, dimension: n, anchor: 0 }
    }

    pub fn anchored_softmax(k: usize, anchor: usize) -> Self {
        Self { kind: TransformKind::AnchoredSoftmax, dimension: k, anchor }
    }

    /// Length of the unconstrained vector.
    pub fn unconstrained_len(&self) -> usize {
        match self.kind {
            TransformKind::LogPositive => self.dimension,
            TransformKind::StickBreaking | TransformKind::AnchoredSoftmax => {
                self.dimension.saturating_sub(1)
            }
        }
    }

    fn check(&self, len: usize, expected: usize) -> Result<(), DistributionError> {
        if len != expected {
            return Err(contract(
                "transform",
                format!("{:?} of dimension {} given {len} values, expected {expected}", self.kind, self.dimension),
            ));
        }
        if self.kind == TransformKind::AnchoredSoftmax && self.anchor >= self.dimension {
            return Err(contract("transform", format!("anchor {} out of range", self.anchor)));
        }
        Ok(())
    }

    /// Maps unconstrained values to the constrained set, returning the log
    /// absolute Jacobian determinant (0 for the anchored softmax).
    pub fn forward(&self, unconstrained: &[f64]) -> Result<(Vec<f64>, f64), DistributionError> {
        self.check(unconstrained.len(), self.unconstrained_len())?;
        match self.kind {
            TransformKind::LogPositive => {
                let value = unconstrained.iter().map(|u| u.exp()).collect();
                Ok((value, unconstrained.iter().sum()))
            }
            TransformKind::StickBreaking => {
                let (log_x, log_jac) = stick_breaking_log(unconstrained);
                Ok((log_x.into_iter().map(f64::exp).collect(), log_jac))
            }
            TransformKind::AnchoredSoftmax => {
                let logits = insert_anchor(unconstrained, self.anchor);
                let lse = log_sum_exp(&logits);
                Ok((logits.iter().map(|l| (l - lse).exp()).collect(), 0.0))
            }
        }
    }

    pub fn inverse(&self, constrained: &[f64]) -> Result<Vec<f64>, DistributionError> {
        self.check(constrained.len(), self.dimension)?;
        match self.kind {
            TransformKind::LogPositive => {
                if constrained.iter().any(|&x| !(x > 0.0)) {
                    return Err(contract("transform", "log-positive inverse needs positive values"));
                }
                Ok(constrained.iter().map(|x| x.ln()).collect())
            }
            TransformKind::StickBreaking => {
                let k = self.dimension;
                // suffix sums are the remaining stick lengths
                let mut tail = vec![0.0; k + 1];
                for i in (0..k).rev() {
                    tail[i] = tail[i + 1] + constrained[i];
                }
                Ok((0..k - 1)
                    .map(|i| {
                        let logit = constrained[i].ln() - tail[i + 1].ln();
                        logit + ((k - 1 - i) as f64).ln()
                    })
                    .collect())
            }
            TransformKind::AnchoredSoftmax => {
                let base = constrained[self.anchor].ln();
                Ok(constrained
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != self.anchor)
                    .map(|(_, x)| x.ln() - base)
                    .collect())
            }
        }
    }
}

/// Centering offset for stick `i` of a K-simplex: −log(K − 1 − i).
pub(crate) fn stick_offset(k: usize, i: usize) -> f64 {
    -((k - 1 - i) as f64).ln()
}

/// Stick-breaking in log space: returns (log x, log |J|) for K−1 inputs.
pub(crate) fn stick_breaking_log(u: &[f64]) -> (Vec<f64>, f64) {
    let k = u.len() + 1;
    let mut log_x = Vec::with_capacity(k);
    let mut log_rest = 0.0;
    let mut log_jac = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        let a = ui + stick_offset(k, i);
        let log_z = log_sigmoid(a);
        let log_1mz = log_sigmoid(-a);
        log_x.push(log_z + log_rest);
        log_jac += log_z + log_1mz + log_rest;
        log_rest += log_1mz;
    }
    log_x.push(log_rest);
    (log_x, log_jac)
}

pub(crate) fn insert_anchor(logits: &[f64], anchor: usize) -> Vec<f64> {
    let mut full = Vec::with_capacity(logits.len() + 1);
    full.extend_from_slice(&logits[..anchor]);
    full.push(0.0);
    full.extend_from_slice(&logits[anchor..]);
    full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference;
    use proptest::prelude::*;

    #[test]
    fn forward_examples() {
        let (x, j) = TransformSpec::anchored_softmax(3, 2).forward(&[0.0, 0.0]).unwrap();
        assert!(x.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(j, 0.0);

        let (x, j) = TransformSpec::log_positive(1).forward(&[0.0]).unwrap();
        assert_eq!((x[0], j), (1.0, 0.0));

        let (x, _) = TransformSpec::stick_breaking(4).forward(&[0.0; 3]).unwrap();
        for p in x {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn stick_breaking_by_hand_recursion() {
        // K = 4: z_i = σ(u_i − log(3 − i)), x_i = z_i (1 − Σ_{j<i} x_j)
        let u = [0.4, -1.1, 2.0];
        let sigma = |a: f64| 1.0 / (1.0 + (-a).exp());
        let mut rest = 1.0;
        let mut want = Vec::new();
        for (i, ui) in u.iter().enumerate() {
            let z = sigma(ui - ((3 - i) as f64).ln());
            want.push(z * rest);
            rest -= z * rest;
        }
        want.push(rest);
        let (x, _) = TransformSpec::stick_breaking(4).forward(&u).unwrap();
        for (a, b) in x.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stick_breaking_log_jacobian_matches_determinant() {
        // Jacobian of the first K−1 outputs w.r.t. the inputs, by finite differences.
        let u = [0.3, -0.7, 1.2];
        let spec = TransformSpec::stick_breaking(4);
        let (_, log_jac) = spec.forward(&u).unwrap();
        let mut jac = [[0.0; 3]; 3];
        for r in 0..3 {
            let col = finite_difference(|p| spec.forward(p).unwrap().0[r], &u, 1e-6);
            jac[r].copy_from_slice(&col);
        }
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        assert!((det.abs().ln() - log_jac).abs() < 1e-6);
    }

    #[test]
    fn shape_errors() {
        assert!(TransformSpec::stick_breaking(3).forward(&[0.0]).is_err());
        assert!(TransformSpec::anchored_softmax(3, 3).forward(&[0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn stick_breaking_round_trip(u in proptest::collection::vec(-6.0f64..6.0, 1..12)) {
            let spec = TransformSpec::stick_breaking(u.len() + 1);
            let (x, _) = spec.forward(&u).unwrap();
            let total: f64 = x.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let back = spec.inverse(&x).unwrap();
            for (a, b) in back.iter().zip(&u) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn log_positive_round_trip(u in proptest::collection::vec(-20.0f64..20.0, 1..8)) {
            let spec = TransformSpec::log_positive(u.len());
            let (x, _) = spec.forward(&u).unwrap();
            let back = spec.inverse(&x).unwrap();
            for (a, b) in back.iter().zip(&u) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn anchored_softmax_round_trip(u in proptest::collection::vec(-5.0f64..5.0, 1..6), anchor in 0usize..6) {
            let k = u.len() + 1;
            let spec = TransformSpec::anchored_softmax(k, anchor % k);
            let (x, _) = spec.forward(&u).unwrap();
            let back = spec.inverse(&x).unwrap();
            for (a, b) in back.iter().zip(&u) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
