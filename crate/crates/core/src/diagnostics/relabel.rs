use super::matching::{match_topics, Distance, TopicMatching};
use super::{contract, DiagnosticsError};
use crate::samples::SampleSet;

/// How a parameter's values move when topic labels are permuted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelAxis {
    /// Leading axis has one row per topic (`beta`, `beta_j`).
    Rows,
    /// Trailing axis has one entry per topic (`theta`, `chi`, `sigma_sq`).
    Columns,
    /// Trailing axis holds the K−1 logits of the non-anchor topics.
    AnchoredColumns,
}

/// Role of a model parameter under relabeling, by name. Unlisted parameters
/// (including the standardized walk `theta_tilde_z`) are left unchanged.
pub fn label_axis(name: &str) -> Option<LabelAxis> {
    match name {
        "theta" | "chi" | "sigma_sq" => Some(LabelAxis::Columns),
        "beta" => Some(LabelAxis::Rows),
        n if n.starts_with("beta_") => Some(LabelAxis::Rows),
        "gamma" | "gamma0" | "eps" | "theta_tilde0" | "theta_tilde" => Some(LabelAxis::AnchoredColumns),
        _ => None,
    }
}

/// Moves old label `perm[i]` to new label `i` in every draw of one chain.
/// Anchored logits are re-expressed relative to the anchor's new occupant.
fn permute_values(
    values: &mut [f64],
    axis: LabelAxis,
    shape: &[usize],
    perm: &[usize],
    anchor: usize,
) -> Result<(), DiagnosticsError> {
    let k = perm.len();
    let old = values.to_vec();
    match axis {
        LabelAxis::Rows => {
            if shape.first() != Some(&k) {
                return Err(contract("relabel", format!("shape {shape:?} has no leading axis of {k}")));
            }
            let w = old.len() / k;
            for (i, &p) in perm.iter().enumerate() {
                values[i * w..(i + 1) * w].copy_from_slice(&old[p * w..(p + 1) * w]);
            }
        }
        LabelAxis::Columns => {
            if shape.last() != Some(&k) {
                return Err(contract("relabel", format!("shape {shape:?} has no trailing axis of {k}")));
            }
            for (row, src) in values.chunks_mut(k).zip(old.chunks(k)) {
                for (i, &p) in perm.iter().enumerate() {
                    row[i] = src[p];
                }
            }
        }
        LabelAxis::AnchoredColumns => {
            if shape.last() != Some(&(k - 1)) {
                return Err(contract("relabel", format!("shape {shape:?} has no trailing axis of {}", k - 1)));
            }
            let mut full = vec![0.0; k];
            for (row, src) in values.chunks_mut(k - 1).zip(old.chunks(k - 1)) {
                for (j, f) in full.iter_mut().enumerate() {
                    *f = match j.cmp(&anchor) {
                        std::cmp::Ordering::Less => src[j],
                        std::cmp::Ordering::Equal => 0.0,
                        std::cmp::Ordering::Greater => src[j - 1],
                    };
                }
                let base = full[perm[anchor]];
                let mut out = row.iter_mut();
                for (i, &p) in perm.iter().enumerate() {
                    if i != anchor {
                        *out.next().expect("K−1 slots") = full[p] - base;
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_perm(perm: &[usize]) -> Result<(), DiagnosticsError> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(contract("relabel", format!("{perm:?} is not a permutation")));
        }
    }
    Ok(())
}

/// Applies one label permutation per chain. `perms[c][i]` is the old label
/// that becomes label `i` in chain `c`.
pub fn relabel(set: &SampleSet, perms: &[Vec<usize>], anchor: usize) -> Result<SampleSet, DiagnosticsError> {
    if perms.len() != set.chains() {
        return Err(contract("relabel", format!("{} permutations for {} chains", perms.len(), set.chains())));
    }
    let k = perms.first().map(Vec::len).unwrap_or(0);
    if k < 2 || anchor >= k || perms.iter().any(|p| p.len() != k) {
        return Err(contract("relabel", "permutations need a common length of at least 2 covering the anchor"));
    }
    for p in perms {
        check_perm(p)?;
    }
    let mut out = set.clone();
    for (c, perm) in perms.iter().enumerate() {
        for d in 0..set.draws() {
            let mut draw = set.draw(c, d).to_vec();
            let mut offset = 0;
            for info in set.params() {
                let n = info.len();
                if let Some(axis) = label_axis(&info.name) {
                    permute_values(&mut draw[offset..offset + n], axis, &info.shape, perm, anchor)?;
                }
                offset += n;
            }
            for (col, v) in draw.into_iter().enumerate() {
                out.set_value(c, d, col, v);
            }
        }
    }
    Ok(out)
}

/// Per-topic profile: the named row-per-topic blocks' means concatenated,
/// over one chain or (with `None`) all chains.
pub fn topic_profiles(set: &SampleSet, names: &[String], chain: Option<usize>) -> Result<Vec<Vec<f64>>, DiagnosticsError> {
    let mut profiles: Vec<Vec<f64>> = Vec::new();
    for name in names {
        let (info, start) = set.param(name).ok_or_else(|| contract("topic_profiles", format!("no parameter '{name}'")))?;
        let k = *info.shape.first().ok_or_else(|| contract("topic_profiles", format!("'{name}' is scalar")))?;
        if profiles.is_empty() {
            profiles = vec![Vec::new(); k];
        } else if profiles.len() != k {
            return Err(contract("topic_profiles", format!("'{name}' has {k} rows, expected {}", profiles.len())));
        }
        let w = info.len() / k;
        for col in 0..info.len() {
            let v = match chain {
                Some(c) => set.by_chain(start + col).swap_remove(c),
                None => set.pooled(start + col),
            };
            profiles[col / w].push(v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    Ok(profiles)
}

/// Relabels every chain to its minimum-distance match with `reference` (one
/// profile per topic, laid out as [`topic_profiles`] builds them).
pub fn align_chains(
    set: &SampleSet,
    reference: &[Vec<f64>],
    names: &[String],
    anchor: usize,
) -> Result<(SampleSet, Vec<TopicMatching>), DiagnosticsError> {
    let mut matchings = Vec::with_capacity(set.chains());
    for c in 0..set.chains() {
        let profiles = topic_profiles(set, names, Some(c))?;
        matchings.push(match_topics(reference, &profiles, Distance::Euclidean)?);
    }
    let perms: Vec<Vec<usize>> = matchings.iter().map(|m| m.permutation.clone()).collect();
    Ok((relabel(set, &perms, anchor)?, matchings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::ParamInfo;
    use crate::special::log_sum_exp;
    use proptest::prelude::*;

    fn softmax_with_anchor(logits: &[f64], anchor: usize) -> Vec<f64> {
        let mut full = logits.to_vec();
        full.insert(anchor, 0.0);
        let z = log_sum_exp(&full);
        full.iter().map(|f| (f - z).exp()).collect()
    }

    fn stm_like(k: usize, anchor: usize, logits: &[f64]) -> SampleSet {
        let params = vec![
            ParamInfo::new("gamma", &[1, k - 1]),
            ParamInfo::new("beta", &[k, 2]),
            ParamInfo::new("theta", &[1, k]),
            ParamInfo::new("other", &[]),
        ];
        let mut set = SampleSet::new(params, 1, 1);
        let mut draw = logits.to_vec();
        for t in 0..k {
            draw.extend([t as f64, 10.0 + t as f64]);
        }
        draw.extend(softmax_with_anchor(logits, anchor));
        draw.push(42.0);
        for (i, v) in draw.into_iter().enumerate() {
            set.set_value(0, 0, i, v);
        }
        set
    }

    #[test]
    fn two_topic_swap_flips_the_logit() {
        let set = stm_like(2, 1, &[0.7]);
        let out = relabel(&set, &[vec![1, 0]], 1).unwrap();
        assert_eq!(out.draw(0, 0)[0], -0.7);
        assert_eq!(&out.draw(0, 0)[1..5], &[1.0, 11.0, 0.0, 10.0]);
        assert_eq!(out.draw(0, 0)[7], 42.0);
    }

    proptest! {
        #[test]
        fn relabeled_logits_stay_consistent_with_shares(
            logits in proptest::collection::vec(-3.0..3.0f64, 3),
            perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
            anchor in 0..4usize,
        ) {
            let set = stm_like(4, anchor, &logits);
            let out = relabel(&set, &[perm.clone()], anchor).unwrap();
            let d = out.draw(0, 0);
            let shares = softmax_with_anchor(&d[0..3], anchor);
            for i in 0..4 {
                prop_assert!((shares[i] - d[3 + 8 + i]).abs() < 1e-12);
                prop_assert_eq!(d[3 + 2 * i], perm[i] as f64);
            }
            let mut inverse = vec![0; 4];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let back = relabel(&out, &[inverse], anchor).unwrap();
            for (a, b) in back.draw(0, 0).iter().zip(set.draw(0, 0)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chains_align_to_reference_independently() {
        let params = vec![ParamInfo::new("beta", &[2, 2]), ParamInfo::new("theta", &[1, 2])];
        let mut set = SampleSet::new(params, 2, 3);
        for d in 0..3 {
            for (i, v) in [0.9, 0.1, 0.2, 0.8, 0.3, 0.7].into_iter().enumerate() {
                set.set_value(0, d, i, v);
            }
            for (i, v) in [0.2, 0.8, 0.9, 0.1, 0.7, 0.3].into_iter().enumerate() {
                set.set_value(1, d, i, v);
            }
        }
        let reference = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (aligned, m) = align_chains(&set, &reference, &["beta".to_string()], 1).unwrap();
        assert_eq!(m[0].permutation, vec![0, 1]);
        assert_eq!(m[1].permutation, vec![1, 0]);
        assert_eq!(aligned.draw(1, 2), aligned.draw(0, 2));
        let pooled = topic_profiles(&aligned, &["beta".to_string()], None).unwrap();
        assert!((pooled[0][0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn contract_violations() {
        let set = stm_like(3, 2, &[0.1, 0.2]);
        assert!(relabel(&set, &[vec![0, 0, 1]], 2).is_err());
        assert!(relabel(&set, &[vec![0, 1]], 0).is_err());
        assert!(relabel(&set, &[vec![0, 1, 2], vec![0, 1, 2]], 0).is_err());
        assert!(topic_profiles(&set, &["missing".to_string()], None).is_err());
        assert!(topic_profiles(&set, &["other".to_string()], None).is_err());
    }
}
