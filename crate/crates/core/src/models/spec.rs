use serde::{Deserialize, Serialize};

use super::{contract, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lda,
    Stm,
    Dsr,
    Slda,
    Sslda,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Lda, Family::Stm, Family::Dsr, Family::Slda, Family::Sslda];

    pub fn name(self) -> &'static str {
        match self {
            Family::Lda => "lda",
            Family::Stm => "stm",
            Family::Dsr => "dsr",
            Family::Slda => "slda",
            Family::Sslda => "sslda",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Whether the family reads a corpus (otherwise a survey panel).
    pub fn uses_corpus(self) -> bool {
        self != Family::Dsr
    }
}

/// Model family plus every hyperparameter. Fields that a family does not use
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub k: usize,
    /// Dirichlet concentration on θ (lda).
    pub alpha: f64,
    /// Dirichlet concentration on β rows.
    pub eta: f64,
    /// Topic or type whose logit is pinned at zero.
    pub anchor: usize,
    /// Logistic-normal noise scale (σ for stm, σ^θ for slda/sslda).
    pub sigma: f64,
    /// Prior sd of prevalence coefficients.
    pub sigma_gamma: f64,
    pub sigma_chi: f64,
    pub sigma_zeta: f64,
    /// InverseGamma(shape, scale) prior on the dsr random-walk variances.
    pub ig_shape: f64,
    pub ig_scale: f64,
    /// Gamma(shape, rate) prior on σ_y.
    pub sigma_y_shape: f64,
    pub sigma_y_rate: f64,
    /// The dsr initial state is N(0, init_scale · σ̃).
    pub init_scale: f64,
    /// Sample dsr random-walk increments in standardized form.
    pub noncentered_walk: bool,
}

impl ModelSpec {
    /// Family defaults for `k` topics or types.
    pub fn new(family: Family, k: usize) -> ModelSpec {
        let base = ModelSpec {
            family,
            k,
            alpha: 1.0,
            eta: 1.0,
            anchor: k.saturating_sub(1),
            sigma: 1.0,
            sigma_gamma: 5.0,
            sigma_chi: 2.0,
            sigma_zeta: 2.0,
            ig_shape: 10.0,
            ig_scale: 1.0,
            sigma_y_shape: 20.0,
            sigma_y_rate: 0.5,
            init_scale: 5.0,
            noncentered_walk: false,
        };
        match family {
            Family::Lda => ModelSpec { eta: 0.3, ..base },
            Family::Stm => ModelSpec { eta: 0.2, ..base },
            Family::Dsr => ModelSpec { eta: 0.1, anchor: 0, ..base },
            Family::Slda | Family::Sslda => ModelSpec { sigma: 2.0, sigma_gamma: 2.0, ..base },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k < 2 {
            return Err(contract(format!("{} needs K ≥ 2, got {}", self.family.name(), self.k)));
        }
        if self.anchor >= self.k {
            return Err(contract(format!("anchor {} outside 0..{}", self.anchor, self.k)));
        }
        let positive = [
            ("alpha", self.alpha),
            ("eta", self.eta),
            ("sigma", self.sigma),
            ("sigma_gamma", self.sigma_gamma),
            ("sigma_chi", self.sigma_chi),
            ("sigma_zeta", self.sigma_zeta),
            ("ig_shape", self.ig_shape),
            ("ig_scale", self.ig_scale),
            ("sigma_y_shape", self.sigma_y_shape),
            ("sigma_y_rate", self.sigma_y_rate),
            ("init_scale", self.init_scale),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(contract(format!("{name} must be positive and finite, got {v}")));
        }
        Ok(())
    }

    /// Sets a hyperparameter by name from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let real = || value.parse::<f64>().map_err(|_| contract(format!("{key}: '{value}' is not a number")));
        let int = || value.parse::<usize>().map_err(|_| contract(format!("{key}: '{value}' is not an integer")));
        match key {
            "k" => self.k = int()?,
            "anchor" => self.anchor = int()?,
            "alpha" => self.alpha = real()?,
            "eta" => self.eta = real()?,
            "sigma" => self.sigma = real()?,
            "sigma_gamma" => self.sigma_gamma = real()?,
            "sigma_chi" => self.sigma_chi = real()?,
            "sigma_zeta" => self.sigma_zeta = real()?,
            "ig_shape" => self.ig_shape = real()?,
            "ig_scale" => self.ig_scale = real()?,
            "sigma_y_shape" => self.sigma_y_shape = real()?,
            "sigma_y_rate" => self.sigma_y_rate = real()?,
            "init_scale" => self.init_scale = real()?,
            "noncentered_walk" => {
                self.noncentered_walk =
                    value.parse().map_err(|_| contract(format!("{key}: '{value}' is not true/false")))?
            }
            _ => return Err(contract(format!("unknown hyperparameter '{key}'"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_family() {
        assert_eq!(ModelSpec::new(Family::Lda, 5).alpha, 1.0);
        assert_eq!(ModelSpec::new(Family::Lda, 5).eta, 0.3);
        let stm = ModelSpec::new(Family::Stm, 2);
        assert_eq!((stm.eta, stm.sigma_gamma, stm.sigma, stm.anchor), (0.2, 5.0, 1.0, 1));
        let dsr = ModelSpec::new(Family::Dsr, 4);
        assert_eq!((dsr.eta, dsr.ig_shape, dsr.ig_scale, dsr.anchor), (0.1, 10.0, 1.0, 0));
        let slda = ModelSpec::new(Family::Slda, 2);
        assert_eq!((slda.eta, slda.sigma, slda.sigma_gamma, slda.sigma_chi, slda.sigma_zeta), (1.0, 2.0, 2.0, 2.0, 2.0));
        assert_eq!((slda.sigma_y_shape, slda.sigma_y_rate), (20.0, 0.5));
        for f in Family::ALL {
            ModelSpec::new(f, 3).validate().unwrap();
            assert_eq!(Family::parse(f.name()), Some(f));
        }
    }

    #[test]
    fn validation_and_overrides() {
        let mut s = ModelSpec::new(Family::Stm, 3);
        s.set("eta", "0.5").unwrap();
        assert_eq!(s.eta, 0.5);
        assert!(s.set("eta", "x").is_err());
        assert!(s.set("bogus", "1").is_err());
        s.anchor = 3;
        assert!(s.validate().is_err());
        s.anchor = 0;
        s.sigma = 0.0;
        assert!(s.validate().is_err());
        assert!(ModelSpec::new(Family::Stm, 1).validate().is_err());
    }
}
