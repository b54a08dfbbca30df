use rand::Rng;

use super::hmc::{hamiltonian, leapfrog, PhasePoint};
use super::nuts::NutsSettings;
use super::{SamplerError, Target};

/// Nesterov dual averaging of log ε toward a target acceptance statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    delta: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(step_size: f64, settings: &NutsSettings) -> Self {
        Self {
            delta: settings.target_accept,
            gamma: settings.gamma,
            t0: settings.t0,
            kappa: settings.kappa,
            mu: (10.0 * step_size).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Clears the accumulators and recentres on 10·ε.
    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = if accept_stat.is_nan() { 0.0 } else { accept_stat.min(1.0) };
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Averaged step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Windowed diagonal-metric adaptation: a fast initial buffer, doubling slow
/// windows that estimate variances, and a terminal fast buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
    estimator: Welford,
}

pub const INIT_BUFFER: usize = 75;
pub const TERM_BUFFER: usize = 50;
pub const BASE_WINDOW: usize = 25;

impl WindowSchedule {
    pub fn new(warmup: usize, dim: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut window) = (INIT_BUFFER, TERM_BUFFER, BASE_WINDOW);
        let enabled = warmup >= 20;
        if enabled && init_buffer + window + term_buffer > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            window = warmup - (init_buffer + term_buffer);
        }
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size: window,
            next_window: init_buffer + window - 1,
            counter: 0,
            enabled,
            estimator: Welford::new(dim),
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn end_of_window(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }

    /// Records one warmup position. Returns true when a window closes and
    /// `inv_mass` has been replaced by the regularized variance estimate.
    pub fn observe(&mut self, q: &[f64], inv_mass: &mut [f64]) -> bool {
        if !self.enabled {
            return false;
        }
        if self.in_window() {
            self.estimator.add(q);
        }
        let updated = if self.end_of_window() {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            for (m, v) in inv_mass.iter_mut().zip(self.estimator.variance()) {
                *m = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
            }
            self.estimator.restart();
            true
        } else {
            false
        };
        self.counter += 1;
        updated
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|x| *x = 0.0);
        self.m2.iter_mut().for_each(|x| *x = 0.0);
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(q) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let denom = (self.n as f64 - 1.0).max(1.0);
        self.m2.iter().map(|s| s / denom).collect()
    }
}

/// Doubles or halves ε until the one-step acceptance crosses 0.8.
pub fn init_step_size<T: Target + ?Sized, R: Rng>(
    target: &T,
    start: &PhasePoint,
    step_size: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> Result<f64, SamplerError> {
    let threshold = 0.8f64.ln();
    let mut eps = step_size;
    let trial = |eps: f64, rng: &mut R| {
        let mut z = start.clone();
        z.sample_momentum(inv_mass, rng);
        let h0 = hamiltonian(&z, inv_mass);
        leapfrog(target, &mut z, eps, inv_mass);
        h0 - hamiltonian(&z, inv_mass)
    };
    let direction = if trial(eps, rng) > threshold { 1 } else { -1 };
    loop {
        let delta_h = trial(eps, rng);
        if direction == 1 && !(delta_h > threshold) || direction == -1 && !(delta_h < threshold) {
            return Ok(eps);
        }
        eps = if direction == 1 { eps * 2.0 } else { eps * 0.5 };
        if eps > 1e7 {
            return Err(SamplerError::StepSize("posterior may be improper (step size above 1e7)".into()));
        }
        if eps == 0.0 {
            return Err(SamplerError::StepSize("step size underflow; density or gradient is not finite".into()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_boundaries_for_default_warmup() {
        // 1000 warmup: windows close after iterations 99, 149, 249, 449, 949
        let mut w = WindowSchedule::new(1000, 1);
        let mut m = [1.0];
        let closes: Vec<usize> = (0..1000).filter(|&i| w.observe(&[i as f64], &mut m)).collect();
        assert_eq!(closes, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn short_warmup_uses_proportional_buffers() {
        let mut w = WindowSchedule::new(100, 1);
        let mut m = [1.0];
        let closes: Vec<usize> = (0..100).filter(|&i| w.observe(&[i as f64], &mut m)).collect();
        assert_eq!(closes, vec![89]);
        let mut w = WindowSchedule::new(10, 1);
        assert!((0..10).all(|i| !w.observe(&[i as f64], &mut m)));
    }

    #[test]
    fn regularized_variance() {
        // window of 25 draws 0..24 after a 75-draw buffer
        let mut w = WindowSchedule::new(1000, 1);
        let mut m = [1.0];
        for i in 0..100 {
            w.observe(&[(i as f64 - 75.0).max(0.0)], &mut m);
        }
        let xs: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let mean = 12.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 24.0;
        let want = 25.0 / 30.0 * var + 1e-3 * 5.0 / 30.0;
        assert!((m[0] - want).abs() < 1e-12);
    }

    #[test]
    fn dual_averaging_moves_toward_target() {
        let settings = NutsSettings::default();
        let mut da = DualAveraging::new(1.0, &settings);
        let e_low = da.learn(0.2);
        assert!(e_low < 10.0);
        let mut da = DualAveraging::new(1.0, &settings);
        let mut last = 0.0;
        for _ in 0..50 {
            last = da.learn(1.0);
        }
        assert!(last > 1.0 && da.final_step_size() > 1.0);
    }
}
