use super::{contract, ModelError};

/// Sparse document-term counts. Entries are kept sorted by (doc, term).
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTermMatrix {
    docs: usize,
    terms: usize,
    entries: Vec<(usize, usize, u64)>,
    totals: Vec<u64>,
}

impl DocumentTermMatrix {
    pub fn new(docs: usize, terms: usize, mut entries: Vec<(usize, usize, u64)>) -> Result<Self, ModelError> {
        if docs == 0 || terms == 0 {
            return Err(contract("document-term matrix needs at least one document and one term"));
        }
        entries.sort_unstable_by_key(|&(d, v, _)| (d, v));
        let mut totals = vec![0u64; docs];
        for (i, &(d, v, c)) in entries.iter().enumerate() {
            if d >= docs || v >= terms {
                return Err(contract(format!("entry ({d}, {v}) outside {docs}×{terms}")));
            }
            if c == 0 {
                return Err(contract(format!("entry ({d}, {v}) has zero count")));
            }
            if i > 0 && entries[i - 1].0 == d && entries[i - 1].1 == v {
                return Err(contract(format!("duplicate entry ({d}, {v})")));
            }
            totals[d] += c;
        }
        Ok(Self { docs, terms, entries, totals })
    }

    pub fn from_dense(rows: &[Vec<u64>]) -> Result<Self, ModelError> {
        let terms = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != terms) {
            return Err(contract("dense rows differ in length"));
        }
        let entries = rows
            .iter()
            .enumerate()
            .flat_map(|(d, r)| r.iter().enumerate().filter(|(_, &c)| c > 0).map(move |(v, &c)| (d, v, c)))
            .collect();
        Self::new(rows.len(), terms, entries)
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    /// Nonzero cells as (doc, term, count), sorted.
    pub fn entries(&self) -> &[(usize, usize, u64)] {
        &self.entries
    }

    /// N_d for every document.
    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn dense_row(&self, doc: usize) -> Vec<u64> {
        let mut row = vec![0; self.terms];
        for &(d, v, c) in &self.entries {
            if d == doc {
                row[v] = c;
            }
        }
        row
    }

    /// Drops terms that never occur. Returns the compacted matrix and, for
    /// each new term id, its original id.
    pub fn compact_terms(&self) -> (DocumentTermMatrix, Vec<usize>) {
        let mut used = vec![false; self.terms];
        for &(_, v, _) in &self.entries {
            used[v] = true;
        }
        let kept: Vec<usize> = (0..self.terms).filter(|&v| used[v]).collect();
        let mut new_id = vec![usize::MAX; self.terms];
        for (i, &v) in kept.iter().enumerate() {
            new_id[v] = i;
        }
        let entries = self.entries.iter().map(|&(d, v, c)| (d, new_id[v], c)).collect();
        let terms = kept.len().max(1);
        let dtm = DocumentTermMatrix { docs: self.docs, terms, entries, totals: self.totals.clone() };
        (dtm, kept)
    }
}

/// Document-level covariates: `g` enters topic prevalence, `q` enters the
/// outcome regression, `y` is the outcome.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateSet {
    pub g_names: Vec<String>,
    pub g: Vec<Vec<f64>>,
    pub q_names: Vec<String>,
    pub q: Vec<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

impl CovariateSet {
    /// A set with `docs` rows and no columns.
    pub fn empty(docs: usize) -> Self {
        Self { g: vec![Vec::new(); docs], q: vec![Vec::new(); docs], ..Self::default() }
    }

    pub fn docs(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self, docs: usize) -> Result<(), ModelError> {
        if self.g.len() != docs || self.q.len() != docs {
            return Err(contract(format!(
                "covariates have {} / {} rows for {docs} documents",
                self.g.len(),
                self.q.len()
            )));
        }
        if self.g.iter().any(|r| r.len() != self.g_names.len()) || self.q.iter().any(|r| r.len() != self.q_names.len()) {
            return Err(contract("covariate rows do not match their column names"));
        }
        if let Some(y) = &self.y {
            if y.len() != docs {
                return Err(contract(format!("{} outcomes for {docs} documents", y.len())));
            }
        }
        let all = self.g.iter().chain(&self.q).flatten().chain(self.y.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(contract("covariates must be finite"));
        }
        Ok(())
    }

    /// Topic design rows with a leading intercept.
    pub fn topic_design(&self) -> Vec<Vec<f64>> {
        self.g.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub respondent: u64,
    pub period: usize,
    pub answers: Vec<usize>,
}

/// Survey answers grouped by period. Every respondent answers all questions.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyPanel {
    periods: usize,
    categories: Vec<usize>,
    responses: Vec<Response>,
}

impl SurveyPanel {
    pub fn new(periods: usize, categories: Vec<usize>, responses: Vec<Response>) -> Result<Self, ModelError> {
        if categories.is_empty() || categories.iter().any(|&l| l < 2) {
            return Err(contract("every question needs at least two categories"));
        }
        let mut seen = vec![false; periods];
        for (row, r) in responses.iter().enumerate() {
            if r.period >= periods {
                return Err(contract(format!("response {row}: period {} outside 0..{periods}", r.period)));
            }
            if r.answers.len() != categories.len() {
                return Err(contract(format!(
                    "response {row}: {} answers for {} questions",
                    r.answers.len(),
                    categories.len()
                )));
            }
            if let Some((j, &x)) = r.answers.iter().enumerate().find(|(j, &x)| x >= categories[*j]) {
                return Err(contract(format!("response {row}: answer {x} to q{j} outside 0..{}", categories[j])));
            }
            seen[r.period] = true;
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(contract(format!("period {t} has no responses")));
        }
        Ok(Self { periods, categories, responses })
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn questions(&self) -> usize {
        self.categories.len()
    }

    /// L_j for every question.
    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    /// Respondents per period.
    pub fn period_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.periods];
        for r in &self.responses {
            n[r.period] += 1;
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtm_validates_and_totals() {
        let m = DocumentTermMatrix::new(2, 4, vec![(1, 0, 2), (0, 3, 2), (0, 1, 1)]).unwrap();
        assert_eq!(m.totals(), &[3, 2]);
        assert_eq!(m.entries()[0], (0, 1, 1));
        assert_eq!(m.dense_row(0), vec![0, 1, 0, 2]);
        assert!(DocumentTermMatrix::new(1, 2, vec![(0, 2, 1)]).is_err());
        assert!(DocumentTermMatrix::new(1, 2, vec![(0, 1, 0)]).is_err());
        assert!(DocumentTermMatrix::new(1, 2, vec![(0, 1, 1), (0, 1, 3)]).is_err());
    }

    #[test]
    fn compact_drops_unused_terms() {
        let m = DocumentTermMatrix::from_dense(&[vec![0, 2, 0, 1], vec![3, 0, 0, 0]]).unwrap();
        let (c, kept) = m.compact_terms();
        assert_eq!(kept, vec![0, 1, 3]);
        assert_eq!(c.terms(), 3);
        assert_eq!(c.dense_row(0), vec![0, 2, 1]);
        assert_eq!(c.totals(), m.totals());
    }

    #[test]
    fn panel_rejects_bad_codes_and_empty_periods() {
        let r = |p, a: Vec<usize>| Response { respondent: 0, period: p, answers: a };
        assert!(SurveyPanel::new(2, vec![2, 3], vec![r(0, vec![1, 2]), r(1, vec![0, 0])]).is_ok());
        assert!(SurveyPanel::new(2, vec![2, 3], vec![r(0, vec![1, 3]), r(1, vec![0, 0])]).is_err());
        assert!(SurveyPanel::new(2, vec![2, 3], vec![r(0, vec![1, 2])]).is_err());
        assert!(SurveyPanel::new(1, vec![2], vec![r(0, vec![1, 0])]).is_err());
    }

    #[test]
    fn covariate_rows_must_match() {
        let mut c = CovariateSet::empty(3);
        assert!(c.validate(3).is_ok());
        assert!(c.validate(4).is_err());
        c.y = Some(vec![1.0, 2.0]);
        assert!(c.validate(3).is_err());
        c.y = Some(vec![1.0, 2.0, f64::NAN]);
        assert!(c.validate(3).is_err());
    }
}
