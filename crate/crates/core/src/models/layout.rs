use std::collections::BTreeMap;

use super::{contract, ModelError};
use crate::distributions::TransformSpec;
use crate::samples::ParamInfo;

/// Named constrained parameter values, flattened row-major.
pub type NamedParams = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    LogPositive,
    /// Each row along the last axis is a simplex.
    StickBreaking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEntry {
    pub name: String,
    /// Constrained shape.
    pub shape: Vec<usize>,
    pub transform: Transform,
    /// Start of this block in Φ.
    pub offset: usize,
    /// Unconstrained length.
    pub len: usize,
}

impl LayoutEntry {
    pub fn constrained_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Unconstrained block shape: the last axis loses one entry for simplexes.
    pub fn unconstrained_shape(&self) -> Vec<usize> {
        let mut s = self.shape.clone();
        if self.transform == Transform::StickBreaking {
            if let Some(last) = s.last_mut() {
                *last -= 1;
            }
        }
        s
    }

    fn simplex_width(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }
}

/// Ordered packing of named parameters into the unconstrained vector Φ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterLayout {
    entries: Vec<LayoutEntry>,
    dim: usize,
}

impl ParameterLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, shape: &[usize], transform: Transform) -> &LayoutEntry {
        let mut entry = LayoutEntry { name: name.to_string(), shape: shape.to_vec(), transform, offset: self.dim, len: 0 };
        entry.len = entry.unconstrained_shape().iter().product();
        self.dim += entry.len;
        self.entries.push(entry);
        self.entries.last().expect("just pushed")
    }

    /// Total unconstrained dimension M.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn params(&self) -> Vec<ParamInfo> {
        self.entries.iter().map(|e| ParamInfo::new(e.name.clone(), &e.shape)).collect()
    }

    fn check_dim(&self, n: usize) -> Result<(), ModelError> {
        if n != self.dim {
            return Err(contract(format!("Φ has {n} values, layout expects {}", self.dim)));
        }
        Ok(())
    }

    /// Constrained values of one entry, appended to `out`.
    pub fn unpack_entry(&self, entry: &LayoutEntry, phi: &[f64], out: &mut Vec<f64>) {
        let block = &phi[entry.offset..entry.offset + entry.len];
        match entry.transform {
            Transform::Identity => out.extend_from_slice(block),
            Transform::LogPositive => out.extend(block.iter().map(|u| u.exp())),
            Transform::StickBreaking => {
                let k = entry.simplex_width();
                if k == 1 {
                    out.extend(std::iter::repeat(1.0).take(entry.constrained_len()));
                    return;
                }
                let t = TransformSpec::stick_breaking(k);
                for row in block.chunks(k - 1) {
                    out.extend(t.forward(row).expect("row length fixed by layout").0);
                }
            }
        }
    }

    pub fn unpack(&self, phi: &[f64]) -> Result<NamedParams, ModelError> {
        self.check_dim(phi.len())?;
        let mut named = NamedParams::new();
        for e in &self.entries {
            let mut v = Vec::with_capacity(e.constrained_len());
            self.unpack_entry(e, phi, &mut v);
            named.insert(e.name.clone(), v);
        }
        Ok(named)
    }

    pub fn pack(&self, named: &NamedParams) -> Result<Vec<f64>, ModelError> {
        let mut phi = Vec::with_capacity(self.dim);
        for e in &self.entries {
            let v = named.get(&e.name).ok_or_else(|| contract(format!("missing parameter '{}'", e.name)))?;
            if v.len() != e.constrained_len() {
                return Err(contract(format!("'{}' has {} values, expected {}", e.name, v.len(), e.constrained_len())));
            }
            match e.transform {
                Transform::Identity => phi.extend_from_slice(v),
                Transform::LogPositive => {
                    if v.iter().any(|&x| !(x > 0.0)) {
                        return Err(contract(format!("'{}' must be positive", e.name)));
                    }
                    phi.extend(v.iter().map(|x| x.ln()));
                }
                Transform::StickBreaking => {
                    let k = e.simplex_width();
                    let t = TransformSpec::stick_breaking(k);
                    for row in v.chunks(k) {
                        let sum: f64 = row.iter().sum();
                        if row.iter().any(|&x| !(x > 0.0)) || (sum - 1.0).abs() > 1e-8 {
                            return Err(contract(format!("'{}' rows must be strictly positive simplexes", e.name)));
                        }
                        phi.extend(t.inverse(row).map_err(|err| contract(err.to_string()))?);
                    }
                }
            }
        }
        self.check_dim(phi.len())?;
        Ok(phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> ParameterLayout {
        let mut l = ParameterLayout::new();
        l.push("a", &[2, 3], Transform::Identity);
        l.push("s", &[3], Transform::LogPositive);
        l.push("b", &[2, 4], Transform::StickBreaking);
        l.push("c", &[5], Transform::StickBreaking);
        l
    }

    #[test]
    fn offsets_and_dimension() {
        let l = layout();
        assert_eq!(l.dim(), 6 + 3 + 6 + 4);
        assert_eq!(l.entry("b").unwrap().offset, 9);
        assert_eq!(l.entry("c").unwrap().unconstrained_shape(), vec![4]);
    }

    #[test]
    fn pack_rejects_bad_input() {
        let l = layout();
        let mut named = l.unpack(&vec![0.1; l.dim()]).unwrap();
        named.get_mut("s").unwrap()[0] = -1.0;
        assert!(l.pack(&named).is_err());
        named.remove("s");
        assert!(l.pack(&named).is_err());
        assert!(l.unpack(&[0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn unpack_then_pack_is_identity(phi in proptest::collection::vec(-4.0f64..4.0, 19)) {
            let l = layout();
            let named = l.unpack(&phi).unwrap();
            for row in named["b"].chunks(4).chain(named["c"].chunks(5)) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&x| x > 0.0 && x <= 1.0));
            }
            let back = l.pack(&named).unwrap();
            for (a, b) in phi.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}
