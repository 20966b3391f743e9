//! Noise-level discretizations and RePaint step sequences.
//!
//! Time is an integer step index `i = 0..=N`. Level `sigma(N)` is the largest
//! noise-to-signal ratio and `sigma(0) = 0` is the clean endpoint. A reverse
//! step moves from `i` to `i - 1`, a forward step from `i` to `i + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretized noise schedule, stored as explicit level lists so a run can be
/// replayed bit-exactly from its config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
    scales: Vec<f64>,
}

impl NoiseSchedule {
    /// Power-law (`rho`) spacing between `sigma_min` at index 1 and
    /// `sigma_max` at index N, with an exact zero at index 0.
    ///
    /// `sigma_i = (smax^(1/rho) + (N - i)/(N - 1) * (smin^(1/rho) - smax^(1/rho)))^rho`
    /// for `i >= 1`. A single-step schedule is `[0, sigma_max]`.
    pub fn power_law(n_steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Parameter("n_steps must be >= 1".into()));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(Error::Parameter(format!(
                "need 0 < sigma_min < sigma_max, got sigma_min = {sigma_min}, sigma_max = {sigma_max}"
            )));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("rho must be positive, got {rho}")));
        }
        let mut levels = vec![0.0; n_steps + 1];
        if n_steps == 1 {
            levels[1] = sigma_max;
        } else {
            let lo = sigma_min.powf(1.0 / rho);
            let hi = sigma_max.powf(1.0 / rho);
            let denom = (n_steps - 1) as f64;
            for (i, level) in levels.iter_mut().enumerate().skip(1) {
                let frac = (n_steps - i) as f64 / denom;
                *level = (hi + frac * (lo - hi)).powf(rho);
            }
            // pin the endpoints against powf round-off
            levels[1] = sigma_min;
            levels[n_steps] = sigma_max;
        }
        Self::from_levels(levels)
    }

    /// Explicit level list in index order (`levels[0] == 0`), unit signal scale.
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        let scales = vec![1.0; levels.len()];
        Self::with_scales(levels, scales)
    }

    pub fn with_scales(levels: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Parameter("schedule needs at least two levels".into()));
        }
        if scales.len() != levels.len() {
            return Err(Error::Dimension {
                context: "schedule scales",
                expected: levels.len(),
                got: scales.len(),
            });
        }
        if levels[0] != 0.0 {
            return Err(Error::Parameter(format!(
                "levels[0] must be exactly 0, got {}",
                levels[0]
            )));
        }
        for w in levels.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::ScheduleOrder {
                    lower: w[0],
                    upper: w[1],
                });
            }
        }
        if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter(format!("signal scale must be positive, got {s}")));
        }
        Ok(Self { levels, scales })
    }

    /// Number of steps N (levels are indexed `0..=N`).
    pub fn n_steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.scales[i]
    }

    pub fn sigma_max(&self) -> f64 {
        self.levels[self.n_steps()]
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// `sigma_dot * dt` for the reverse step out of index `i`, i.e. `sigma(i-1) - sigma(i)`.
    pub fn reverse_increment(&self, i: usize) -> f64 {
        self.levels[i - 1] - self.levels[i]
    }
}

/// Std-dev multiplier of the Langevin noise injected by a stochastic DDIM step
/// between `sigma_t` (current) and `sigma_prev` (the lower neighbour):
///
/// `eta * sqrt(sigma_t^-2 + 1) * sqrt(1 - (sigma_prev^2 + 1) / (sigma_t^2 + 1))`
///
/// Algebraically this equals `eta * sqrt(sigma_t^2 - sigma_prev^2) / sigma_t`.
pub fn sigma_langevin(eta: f64, sigma_t: f64, sigma_prev: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!("eta must lie in [0, 1], got {eta}")));
    }
    if !(sigma_prev >= 0.0 && sigma_prev < sigma_t) {
        return Err(Error::ScheduleOrder {
            lower: sigma_prev,
            upper: sigma_t,
        });
    }
    if eta == 0.0 {
        return Ok(0.0);
    }
    let ratio = (sigma_prev * sigma_prev + 1.0) / (sigma_t * sigma_t + 1.0);
    Ok(eta * (sigma_t.powi(-2) + 1.0).sqrt() * (1.0 - ratio).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Reverse,
    Forward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Reverse => "reverse",
            Direction::Forward => "forward",
        }
    }
}

/// One schedule entry: move in `direction` starting from step index `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub direction: Direction,
    pub index: usize,
}

impl Step {
    pub fn target(&self) -> usize {
        match self.direction {
            Direction::Reverse => self.index - 1,
            Direction::Forward => self.index + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RePaintParams {
    pub jump_interval: usize,
    pub jump_len: usize,
    pub jump_repeat: usize,
}

impl RePaintParams {
    pub fn disabled() -> Self {
        Self {
            jump_interval: 1,
            jump_len: 1,
            jump_repeat: 0,
        }
    }
}

impl Default for RePaintParams {
    fn default() -> Self {
        Self::disabled()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RePaintSchedule {
    pub reverse_steps: usize,
    pub params: RePaintParams,
    pub steps: Vec<Step>,
}

impl RePaintSchedule {
    /// Reverse steps descend from index `reverse_steps`. Every `jump_interval`
    /// net reverse steps (while above index 0) the walk performs `jump_repeat`
    /// cycles of `jump_len` forward steps followed by `jump_len` reverse steps.
    /// Jumps are clipped so the walk never rises above the top index.
    pub fn build(reverse_steps: usize, params: RePaintParams) -> Result<Self> {
        if reverse_steps == 0 {
            return Err(Error::Parameter("reverse_steps must be >= 1".into()));
        }
        if params.jump_interval == 0 || params.jump_len == 0 {
            return Err(Error::Parameter(
                "jump_interval and jump_len must be positive".into(),
            ));
        }
        let n = reverse_steps;
        let mut steps = Vec::new();
        let mut i = n;
        while i > 0 {
            steps.push(Step {
                direction: Direction::Reverse,
                index: i,
            });
            i -= 1;
            if i > 0 && (n - i).is_multiple_of(params.jump_interval) {
                for _ in 0..params.jump_repeat {
                    let len = params.jump_len.min(n - i);
                    for _ in 0..len {
                        steps.push(Step {
                            direction: Direction::Forward,
                            index: i,
                        });
                        i += 1;
                    }
                    for _ in 0..len {
                        steps.push(Step {
                            direction: Direction::Reverse,
                            index: i,
                        });
                        i -= 1;
                    }
                }
            }
        }
        Ok(Self {
            reverse_steps,
            params,
            steps,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn reverse_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.direction == Direction::Reverse)
            .count()
    }

    pub fn forward_count(&self) -> usize {
        self.steps.len() - self.reverse_count()
    }

    /// Index path visited by replaying the steps from the top index.
    pub fn index_path(&self) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.steps.len() + 1);
        path.push(self.reverse_steps);
        path.extend(self.steps.iter().map(Step::target));
        path
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Direction::{Forward as F, Reverse as R};

    fn dirs(s: &RePaintSchedule) -> Vec<Direction> {
        s.steps.iter().map(|s| s.direction).collect()
    }

    #[test]
    fn single_step_spans_max_to_clean() {
        let s = NoiseSchedule::power_law(1, 0.1, 80.0, 7.0).unwrap();
        assert_eq!(s.levels(), &[0.0, 80.0]);
    }

    #[test]
    fn two_steps_rho_one() {
        // frac = (2 - 1) / (2 - 1) = 1 at i = 1 -> sigma_min; i = 2 -> sigma_max
        let s = NoiseSchedule::power_law(2, 0.1, 80.0, 1.0).unwrap();
        assert_eq!(s.levels(), &[0.0, 0.1, 80.0]);
    }

    #[test]
    fn rho_one_interior_is_linear() {
        let s = NoiseSchedule::power_law(3, 1.0, 3.0, 1.0).unwrap();
        assert!((s.sigma(2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(NoiseSchedule::power_law(0, 0.1, 1.0, 7.0).is_err());
        assert!(NoiseSchedule::power_law(4, 1.0, 0.5, 7.0).is_err());
        assert!(NoiseSchedule::power_law(4, 0.0, 0.5, 7.0).is_err());
        assert!(NoiseSchedule::power_law(4, -1.0, 0.5, 7.0).is_err());
        assert!(NoiseSchedule::from_levels(vec![0.0, 2.0, 1.0]).is_err());
        assert!(NoiseSchedule::from_levels(vec![0.1, 2.0]).is_err());
    }

    #[test]
    fn langevin_values() {
        assert_eq!(sigma_langevin(0.0, 1.0, 0.5).unwrap(), 0.0);
        let full = sigma_langevin(1.0, 1.0, 0.5).unwrap();
        assert!((full - 0.75f64.sqrt()).abs() < 1e-12);
        let partial = sigma_langevin(0.75, 1.0, 0.5).unwrap();
        assert!((partial - 0.75 * 0.75f64.sqrt()).abs() < 1e-12);
        assert!((partial - 0.6495).abs() < 1e-4);
    }

    #[test]
    fn langevin_closed_form_and_terminal() {
        for &(t, p) in &[(80.0, 60.0), (3.0, 0.01), (0.5, 0.1)] {
            let v = sigma_langevin(1.0, t, p).unwrap();
            let alt = (t * t - p * p).sqrt() / t;
            assert!((v - alt).abs() < 1e-12, "{v} vs {alt}");
        }
        // landing on sigma = 0 draws a full unit of fresh noise at eta = 1
        assert!((sigma_langevin(1.0, 2.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn langevin_order_error() {
        assert!(matches!(
            sigma_langevin(0.5, 1.0, 1.0),
            Err(Error::ScheduleOrder { .. })
        ));
        assert!(sigma_langevin(0.5, 1.0, 2.0).is_err());
        assert!(sigma_langevin(1.5, 1.0, 0.5).is_err());
    }

    #[test]
    fn repaint_pure_reverse() {
        let s = RePaintSchedule::build(
            4,
            RePaintParams {
                jump_interval: 100,
                jump_len: 1,
                jump_repeat: 0,
            },
        )
        .unwrap();
        assert_eq!(dirs(&s), vec![R, R, R, R]);
    }

    #[test]
    fn repaint_small_example() {
        let s = RePaintSchedule::build(
            4,
            RePaintParams {
                jump_interval: 2,
                jump_len: 1,
                jump_repeat: 1,
            },
        )
        .unwrap();
        assert_eq!(dirs(&s), vec![R, R, F, R, R, R]);
        assert_eq!(s.index_path(), vec![4, 3, 2, 3, 2, 1, 0]);
        assert_eq!(s.reverse_count() - s.forward_count(), 4);
    }

    #[test]
    fn repaint_one_jump_per_step() {
        let s = RePaintSchedule::build(
            100,
            RePaintParams {
                jump_interval: 1,
                jump_len: 1,
                jump_repeat: 1,
            },
        )
        .unwrap();
        // 100 descending steps plus 99 re-descents: one score call each
        assert_eq!(s.reverse_count(), 199);
        assert_eq!(s.forward_count(), 99);
    }
}
