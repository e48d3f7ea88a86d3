//! SGD with momentum and Adam, optionally boosted through a [`GradQueue`].
//!
//! Both optimizers boost the incoming gradient before it reaches the moment
//! estimates and push the raw gradient onto the queue after the update.

use crate::error::{Error, Result};
use crate::queue::{BoostConfig, GradQueue};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Momentum coefficient; Adam's first-moment decay.
    pub beta: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub boost: BoostConfig,
    pub boost_enabled: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            boost: BoostConfig::default(),
            boost_enabled: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must be in [0, 1), got {}",
                self.beta
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig(format!(
                "adam_beta2 must be in [0, 1), got {}",
                self.adam_beta2
            )));
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(Error::InvalidConfig("adam_epsilon must be positive".into()));
        }
        BoostConfig::new(self.boost.rho, self.boost.sigma_floor).map(|_| ())
    }

    /// The gradient that enters the moment estimates.
    pub fn effective_gradient(&self, queue: &GradQueue, g: &[f64]) -> Result<Vec<f64>> {
        if self.boost_enabled {
            queue.boost(g, &self.boost)
        } else {
            Ok(g.to_vec())
        }
    }
}

fn check_dim(expected: usize, g: &[f64]) -> Result<()> {
    if g.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: g.len(),
        });
    }
    Ok(())
}

/// `m <- beta * m + b; theta <- theta - alpha * m` with `b` the (boosted)
/// gradient. There is no `(1 - beta)` factor on the gradient term.
#[derive(Debug, Clone)]
pub struct SgdmState {
    pub params: Vec<f64>,
    pub momentum: Vec<f64>,
    pub queue: GradQueue,
    pub step_count: usize,
}

impl SgdmState {
    pub fn new(params: Vec<f64>, queue_capacity: usize) -> Result<Self> {
        let d = params.len();
        Ok(Self {
            params,
            momentum: vec![0.0; d],
            queue: GradQueue::new(queue_capacity)?,
            step_count: 0,
        })
    }

    pub fn step(&mut self, g: &[f64], cfg: &OptimizerConfig) -> Result<()> {
        check_dim(self.params.len(), g)?;
        let b = cfg.effective_gradient(&self.queue, g)?;
        self.apply(&b, cfg);
        self.queue.push(g)
    }

    /// Momentum update with a gradient that has already been boosted, for
    /// callers (such as clustered aggregation) that boost on their own.
    /// `raw` is what gets queued.
    pub fn step_preboosted(
        &mut self,
        boosted: &[f64],
        raw: &[f64],
        cfg: &OptimizerConfig,
    ) -> Result<()> {
        check_dim(self.params.len(), boosted)?;
        check_dim(self.params.len(), raw)?;
        self.apply(boosted, cfg);
        self.queue.push(raw)
    }

    fn apply(&mut self, b: &[f64], cfg: &OptimizerConfig) {
        for ((theta, m), &bi) in self.params.iter_mut().zip(&mut self.momentum).zip(b) {
            *m = cfg.beta * *m + bi;
            *theta -= cfg.learning_rate * *m;
        }
        self.step_count += 1;
    }
}

/// Bias-corrected Adam applied to the (boosted) gradient.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub params: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub queue: GradQueue,
    pub step_count: usize,
}

impl AdamState {
    pub fn new(params: Vec<f64>, queue_capacity: usize) -> Result<Self> {
        let d = params.len();
        Ok(Self {
            params,
            first_moment: vec![0.0; d],
            second_moment: vec![0.0; d],
            queue: GradQueue::new(queue_capacity)?,
            step_count: 0,
        })
    }

    pub fn step(&mut self, g: &[f64], cfg: &OptimizerConfig) -> Result<()> {
        check_dim(self.params.len(), g)?;
        let b = cfg.effective_gradient(&self.queue, g)?;
        self.apply(&b, cfg);
        self.queue.push(g)
    }

    /// See [`SgdmState::step_preboosted`].
    pub fn step_preboosted(
        &mut self,
        boosted: &[f64],
        raw: &[f64],
        cfg: &OptimizerConfig,
    ) -> Result<()> {
        check_dim(self.params.len(), boosted)?;
        check_dim(self.params.len(), raw)?;
        self.apply(boosted, cfg);
        self.queue.push(raw)
    }

    fn apply(&mut self, b: &[f64], cfg: &OptimizerConfig) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (cfg.beta, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let moments = self.first_moment.iter_mut().zip(&mut self.second_moment);
        for ((theta, (m, v)), &bi) in self.params.iter_mut().zip(moments).zip(b) {
            *m = b1 * *m + (1.0 - b1) * bi;
            *v = b2 * *v + (1.0 - b2) * bi * bi;
            *theta -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
        }
    }
}
