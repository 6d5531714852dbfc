//! Adaptive-moment gradient descent over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl OptimConfig {
    pub fn new(iterations: usize, step_size: f64) -> Self {
        OptimConfig { iterations, step_size, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0 }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(crate::Error::Config(format!("step size {} must be positive", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(crate::Error::Config("moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: OptimConfig, len: usize) -> Self {
        Adam { config, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let c = &self.config;
        self.t += 1;
        let b1 = 1.0 - c.beta1.powi(self.t);
        let b2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1;
            let vh = self.v[i] / b2;
            params[i] -= c.step_size * mh / (vh.sqrt() + c.epsilon);
        }
    }
}

/// Per-iteration loss record for CSV dumps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub terms: Vec<&'static str>,
    pub rows: Vec<(usize, f64, Vec<f64>)>,
}

impl LossLog {
    pub fn new(terms: &[&'static str]) -> Self {
        LossLog { terms: terms.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, iteration: usize, total: f64, terms: Vec<f64>) {
        self.rows.push((iteration, total, terms));
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.rows.iter().map(|r| (r.0, r.1)).fold(None, |acc, (i, l)| match acc {
            Some((_, b)) if b <= l => acc,
            _ => Some((i, l)),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,total");
        for t in &self.terms {
            s.push(',');
            s.push_str(t);
        }
        s.push('\n');
        for (i, total, terms) in &self.rows {
            s.push_str(&format!("{i},{total:e}"));
            for t in terms {
                s.push_str(&format!(",{t:e}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(OptimConfig::new(0, 0.1), 2);
        for _ in 0..500 {
            let g = vec![2.0 * x[0], 8.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn first_step_has_step_size_length() {
        let mut x = vec![0.0];
        Adam::new(OptimConfig::new(0, 0.01), 1).step(&mut x, &[123.0]);
        assert!((x[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn csv_and_best() {
        let mut log = LossLog::new(&["a"]);
        log.push(0, 2.0, vec![2.0]);
        log.push(1, 1.0, vec![1.0]);
        log.push(2, 1.5, vec![1.5]);
        assert_eq!(log.best(), Some((1, 1.0)));
        assert!(log.to_csv().starts_with("iteration,total,a\n0,2e0,2e0\n"));
    }
}
