use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid must start at 0, got {0}")]
    BadOrigin(f64),
    #[error("grid times must be finite and strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("grid needs at least one positive time")]
    TooShort,
}

/// Time grid `0 = t_0 < t_1 < ... < t_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    times: Vec<f64>,
    uniform_step: Option<f64>,
}

impl Grid {
    pub fn new(times: Vec<f64>) -> Result<Self, GridError> {
        if times.len() < 2 {
            return Err(GridError::TooShort);
        }
        if times[0] != 0.0 {
            return Err(GridError::BadOrigin(times[0]));
        }
        for i in 1..times.len() {
            if !(times[i].is_finite() && times[i] > times[i - 1]) {
                return Err(GridError::NotIncreasing(i));
            }
        }
        Ok(Grid { times, uniform_step: None })
    }

    /// `steps` equal cells on `[0, horizon]`.
    pub fn uniform(steps: usize, horizon: f64) -> Result<Self, GridError> {
        if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(GridError::TooShort);
        }
        let h = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
        times[steps] = horizon;
        Ok(Grid { times, uniform_step: Some(h) })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is nonempty")
    }

    pub fn uniform_step(&self) -> Option<f64> {
        self.uniform_step
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.times[i], self.times[i + 1])
    }

    /// Index of `t` when it is a grid time up to a relative tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon().max(1.0);
        let i = self.times.partition_point(|&s| s < t - tol);
        (i < self.times.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }

    /// Sub-grid of the cells between indices `from..=to`, shifted to start at 0.
    pub fn window(&self, from: usize, to: usize) -> Grid {
        let base = self.times[from];
        let times = self.times[from..=to].iter().map(|t| t - base).collect();
        Grid { times, uniform_step: self.uniform_step }
    }
}
