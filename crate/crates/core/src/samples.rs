//! Posterior draws organized as chains × draws × scalar columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A named parameter and its shape. Scalars have an empty shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self { name: name.into(), shape: shape.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-iteration sampler statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawStats {
    pub accept_stat: f64,
    pub step_size: f64,
    pub tree_depth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    params: Vec<ParamInfo>,
    offsets: Vec<usize>,
    width: usize,
    chains: usize,
    draws: usize,
    /// `[chain][draw][column]`, row-major.
    values: Vec<f64>,
    /// Per-chain statistics; empty when the producer records none.
    pub stats: Vec<Vec<DrawStats>>,
    pub metadata: BTreeMap<String, String>,
}

impl SampleSet {
    pub fn new(params: Vec<ParamInfo>, chains: usize, draws: usize) -> Self {
        let mut offsets = Vec::with_capacity(params.len());
        let mut width = 0;
        for p in &params {
            offsets.push(width);
            width += p.len();
        }
        Self {
            params,
            offsets,
            width,
            chains,
            draws,
            values: vec![0.0; chains * draws * width],
            stats: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    /// Assembles a set from per-chain blocks of `draws × width` values.
    pub fn from_chains(params: Vec<ParamInfo>, draws: usize, chain_values: Vec<Vec<f64>>) -> Self {
        let chains = chain_values.len();
        let mut set = Self::new(params, 0, draws);
        set.chains = chains;
        set.values = Vec::with_capacity(chains * draws * set.width);
        for block in chain_values {
            assert_eq!(block.len(), draws * set.width, "chain block size");
            set.values.extend(block);
        }
        set
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<(&ParamInfo, usize)> {
        self.params.iter().position(|p| p.name == name).map(|i| (&self.params[i], self.offsets[i]))
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Number of scalar columns.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn column(&self, name: &str, index: usize) -> Option<usize> {
        self.param(name).filter(|(p, _)| index < p.len()).map(|(_, off)| off + index)
    }

    /// (name, flat index) of a column.
    pub fn column_label(&self, column: usize) -> (&str, usize) {
        let i = self.offsets.partition_point(|&o| o <= column) - 1;
        // zero-size parameters share an offset with their successor
        let i = (i..self.params.len()).find(|&j| column < self.offsets[j] + self.params[j].len()).unwrap_or(i);
        (&self.params[i].name, column - self.offsets[i])
    }

    pub fn value(&self, chain: usize, draw: usize, column: usize) -> f64 {
        self.values[(chain * self.draws + draw) * self.width + column]
    }

    pub fn set_value(&mut self, chain: usize, draw: usize, column: usize, value: f64) {
        self.values[(chain * self.draws + draw) * self.width + column] = value;
    }

    pub fn draw(&self, chain: usize, draw: usize) -> &[f64] {
        let start = (chain * self.draws + draw) * self.width;
        &self.values[start..start + self.width]
    }

    /// One column split by chain.
    pub fn by_chain(&self, column: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.draws).map(|d| self.value(c, d, column)).collect())
            .collect()
    }

    /// One column with all chains concatenated.
    pub fn pooled(&self, column: usize) -> Vec<f64> {
        self.by_chain(column).concat()
    }

    /// Mean over all draws of every column of a parameter, in flat order.
    pub fn param_mean(&self, name: &str) -> Option<Vec<f64>> {
        let (p, off) = self.param(name)?;
        let n = (self.chains * self.draws) as f64;
        let mut mean = vec![0.0; p.len()];
        for c in 0..self.chains {
            for d in 0..self.draws {
                let row = self.draw(c, d);
                for (m, v) in mean.iter_mut().zip(&row[off..off + p.len()]) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        Some(mean)
    }

    /// Keeps only the named parameters, in their original order.
    pub fn select(&self, names: &[&str]) -> SampleSet {
        let keep: Vec<usize> =
            (0..self.params.len()).filter(|&i| names.contains(&self.params[i].name.as_str())).collect();
        let params: Vec<ParamInfo> = keep.iter().map(|&i| self.params[i].clone()).collect();
        let mut out = SampleSet::new(params, self.chains, self.draws);
        for c in 0..self.chains {
            for d in 0..self.draws {
                let row = self.draw(c, d);
                let mut col = 0;
                for &i in &keep {
                    let (off, len) = (self.offsets[i], self.params[i].len());
                    for v in &row[off..off + len] {
                        out.set_value(c, d, col, *v);
                        col += 1;
                    }
                }
            }
        }
        out.stats = self.stats.clone();
        out.metadata = self.metadata.clone();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_lookup() {
        let params = vec![ParamInfo::new("a", &[]), ParamInfo::new("b", &[2, 3]), ParamInfo::new("c", &[2])];
        let mut s = SampleSet::new(params, 2, 3);
        assert_eq!(s.width(), 9);
        assert_eq!(s.column("b", 4), Some(5));
        assert_eq!(s.column("b", 6), None);
        assert_eq!(s.column_label(5), ("b", 4));
        assert_eq!(s.column_label(0), ("a", 0));
        assert_eq!(s.column_label(8), ("c", 1));
        s.set_value(1, 2, 8, 4.5);
        assert_eq!(s.by_chain(8)[1][2], 4.5);
        let sel = s.select(&["c"]);
        assert_eq!(sel.width(), 2);
        assert_eq!(sel.value(1, 2, 1), 4.5);
    }
}
