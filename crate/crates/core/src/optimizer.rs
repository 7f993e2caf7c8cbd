//! Adaptive step-size random search (Schumer–Steiglitz) on a bounded box.
//!
//! The search works in box-normalized coordinates. Each iteration draws a
//! direction uniformly on the unit sphere, tries `x + s·dir` and then
//! `x − s·dir`; an improvement is accepted and the step grows, otherwise the
//! step shrinks. After `stall_limit` consecutive failures at the step floor
//! the step is reset to its initial value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{RamanError, Result};

/// Point in a bounded box with a per-component resolution (smallest useful step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<f64>,
}

impl DesignVector {
    pub fn new(values: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if lower.len() != n || upper.len() != n || resolution.len() != n {
            return Err(RamanError::ShapeMismatch("design vector component counts differ".into()));
        }
        for i in 0..n {
            if !(lower[i] < upper[i]) || !(resolution[i] > 0.0) {
                return Err(RamanError::Config(format!("bad bounds for component {i}")));
            }
        }
        let mut v = DesignVector { values, lower, upper, resolution };
        v.clamp();
        Ok(v)
    }

    /// Box [lower, upper] with uniform resolution, starting at `values`.
    pub fn uniform(values: Vec<f64>, lower: f64, upper: f64, resolution: f64) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![lower; n], vec![upper; n], vec![resolution; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn clamp(&mut self) {
        for i in 0..self.values.len() {
            self.values[i] = self.values[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    fn moved(&self, dir: &[f64], step: f64) -> DesignVector {
        let mut v = self.clone();
        for (i, d) in dir.iter().enumerate() {
            v.values[i] += step * d * self.width(i);
        }
        v.clamp();
        v
    }

    fn step_floor(&self) -> f64 {
        (0..self.len())
            .map(|i| self.resolution[i] / self.width(i))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Initial step as a fraction of the box width.
    pub initial_step: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub max_evaluations: usize,
    /// Stop once the objective reaches this value.
    pub target_value: Option<f64>,
    pub stall_limit: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            initial_step: 0.1,
            expansion: 1.5,
            contraction: 0.7,
            max_evaluations: 2000,
            target_value: None,
            stall_limit: 30,
            seed: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.expansion > 1.0 && self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(RamanError::Config(
                "need expansion > 1 > contraction > 0".into(),
            ));
        }
        if self.max_evaluations == 0 || !(self.initial_step > 0.0) {
            return Err(RamanError::Config(
                "need max_evaluations >= 1 and a positive initial step".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub best: DesignVector,
    pub best_value: f64,
    pub evaluations: usize,
    /// (evaluation, best-so-far) after every evaluation.
    pub trace: Vec<(usize, f64)>,
    pub final_step: f64,
}

impl ObjectiveReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("evaluation,best_value\n");
        for (k, v) in &self.trace {
            s.push_str(&format!("{k},{v:.12e}\n"));
        }
        s
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Maximizes `objective` starting from `x0`. Non-finite objective values
/// count as failures.
pub fn random_search(
    mut objective: impl FnMut(&DesignVector) -> f64,
    x0: &DesignVector,
    cfg: &SearchConfig,
) -> Result<ObjectiveReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let floor = x0.step_floor();
    let mut x = x0.clone();
    let mut fx = objective(&x);
    if !fx.is_finite() {
        fx = f64::NEG_INFINITY;
    }
    let mut evals = 1;
    let mut trace = vec![(evals, fx)];
    let mut step = cfg.initial_step;
    let mut stall = 0;
    let done = |f: f64| cfg.target_value.is_some_and(|t| f >= t);
    while evals < cfg.max_evaluations && !done(fx) && !x.is_empty() {
        let dir = unit_direction(&mut rng, x.len());
        let mut improved = false;
        for sign in [1.0, -1.0] {
            if evals >= cfg.max_evaluations {
                break;
            }
            let cand = x.moved(&dir, sign * step);
            let fc = objective(&cand);
            evals += 1;
            if fc.is_finite() && fc > fx {
                x = cand;
                fx = fc;
                improved = true;
            }
            trace.push((evals, fx));
            if improved {
                break;
            }
        }
        if improved {
            step = (step * cfg.expansion).min(1.0);
            stall = 0;
        } else {
            step = (step * cfg.contraction).max(floor);
            if step <= floor {
                stall += 1;
                if stall >= cfg.stall_limit {
                    step = cfg.initial_step;
                    stall = 0;
                }
            }
        }
    }
    Ok(ObjectiveReport {
        best: x,
        best_value: fx,
        evaluations: evals,
        trace,
        final_step: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &DesignVector) -> f64 {
        -x.values.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let x0 = DesignVector::uniform(vec![0.1; 4], 0.0, 1.0, 1e-9).unwrap();
        let cfg = SearchConfig { max_evaluations: 300, ..Default::default() };
        let a = random_search(sphere, &x0, &cfg).unwrap();
        let b = random_search(sphere, &x0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_is_monotone() {
        let x0 = DesignVector::uniform(vec![0.9; 6], 0.0, 1.0, 1e-9).unwrap();
        let r = random_search(sphere, &x0, &SearchConfig::default()).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(r.trace.last().unwrap().1, r.best_value);
    }

    #[test]
    fn step_contracts_at_optimum() {
        let x0 = DesignVector::uniform(vec![0.5], 0.0, 1.0, 1e-6).unwrap();
        let cfg = SearchConfig { max_evaluations: 201, stall_limit: 1000, ..Default::default() };
        let r = random_search(sphere, &x0, &cfg).unwrap();
        assert_eq!(r.best_value, 0.0);
        assert_eq!(r.best.values, vec![0.5]);
        assert!((r.final_step - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_factors() {
        let x0 = DesignVector::uniform(vec![0.5], 0.0, 1.0, 1e-6).unwrap();
        let cfg = SearchConfig { contraction: 1.2, ..Default::default() };
        assert!(random_search(sphere, &x0, &cfg).is_err());
    }

    #[test]
    fn relabeled_problem_finds_relabeled_optimum() {
        let centre = [0.2, 0.7, 0.45, 0.9, 0.05];
        let perm = [3, 0, 4, 1, 2];
        let weights = [1.0, 2.0, 0.5, 3.0, 1.5];
        let f = |x: &DesignVector, map: &dyn Fn(usize) -> usize| {
            -(0..5).map(|i| weights[map(i)] * (x.values[i] - centre[map(i)]).powi(2)).sum::<f64>()
        };
        let cfg = SearchConfig { max_evaluations: 20_000, ..Default::default() };
        let x0 = DesignVector::uniform(vec![0.5; 5], 0.0, 1.0, 1e-9).unwrap();
        let a = random_search(|x| f(x, &|i| i), &x0, &cfg).unwrap();
        let b = random_search(|x| f(x, &|i| perm[i]), &x0, &cfg).unwrap();
        for i in 0..5 {
            assert!((b.best.values[i] - a.best.values[perm[i]]).abs() < 1e-3);
        }
    }
}
