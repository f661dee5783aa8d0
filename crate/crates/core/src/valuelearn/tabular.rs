use crate::error::{Error, Result};

use super::losses::expectile_loss;

/// One outcome of a tabular transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub reward: f64,
    pub next: usize,
    pub done: bool,
}

/// Finite chain where every state has a distribution over outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularChain {
    pub outcomes: Vec<Vec<Outcome>>,
}

impl TabularChain {
    /// 1-D corridor of `n` cells with the goal in cell 0. A behaviour policy
    /// steps left with probability `p_left`, otherwise right (reflecting at
    /// the far end). Reward −1 per step; the goal cell is terminal.
    pub fn corridor(n: usize, p_left: f64) -> Result<Self> {
        if n < 2 || !(0.0..=1.0).contains(&p_left) {
            return Err(Error::Config(format!("corridor needs n >= 2 and p_left in [0,1], got {n}, {p_left}")));
        }
        let mut outcomes = vec![vec![Outcome {
            prob: 1.0,
            reward: 0.0,
            next: 0,
            done: true,
        }]];
        for i in 1..n {
            let right = (i + 1).min(n - 1);
            let mut o = Vec::new();
            if p_left > 0.0 {
                o.push(Outcome {
                    prob: p_left,
                    reward: -1.0,
                    next: i - 1,
                    done: false,
                });
            }
            if p_left < 1.0 {
                o.push(Outcome {
                    prob: 1.0 - p_left,
                    reward: -1.0,
                    next: right,
                    done: false,
                });
            }
            outcomes.push(o);
        }
        Ok(Self { outcomes })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    fn targets(&self, v: &[f64], s: usize, gamma: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let bootstrap: Vec<f64> = self.outcomes[s]
            .iter()
            .map(|o| if o.done { 0.0 } else { gamma * v[o.next] })
            .collect();
        self.outcomes[s].iter().zip(bootstrap).map(|(o, b)| (o.prob, o.reward + b))
    }

    /// Expected expectile TD loss of `v`.
    pub fn td_loss(&self, v: &[f64], gamma: f64, iota: f64) -> f64 {
        let n = self.len() as f64;
        (0..self.len())
            .map(|s| self.targets(v, s, gamma).map(|(p, y)| p * expectile_loss(y - v[s], iota)).sum::<f64>())
            .sum::<f64>()
            / n
    }

    /// Fixed point of `V(s) ← expectile_ι[r + γ(1−done)V(s')]`.
    pub fn expectile_fixed_point(&self, gamma: f64, iota: f64, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.len()];
        for _ in 0..max_iters {
            let next: Vec<f64> = (0..self.len())
                .map(|s| {
                    let t: Vec<(f64, f64)> = self.targets(&v, s, gamma).collect();
                    discrete_expectile(&t, iota)
                })
                .collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < tol {
                return Ok(v);
            }
        }
        Err(Error::NumericalAbort {
            step: max_iters,
            detail: "tabular expectile iteration did not converge".into(),
        })
    }
}

/// The `ι`-expectile of a discrete distribution given as `(prob, value)` pairs.
pub fn discrete_expectile(points: &[(f64, f64)], iota: f64) -> f64 {
    // the first-order condition is monotone in m; solve it piecewise-linearly
    let mut xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    let foc = |m: f64| -> f64 {
        points
            .iter()
            .map(|&(p, x)| p * if x < m { 1.0 - iota } else { iota } * (x - m))
            .sum()
    };
    for w in xs.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if foc(lo) >= 0.0 && foc(hi) <= 0.0 {
            // linear on (lo, hi]: a·m + b, using the weights valid inside the interval
            let mid = 0.5 * (lo + hi);
            let (mut a, mut b) = (0.0, 0.0);
            for &(p, x) in points {
                let w = p * if x < mid { 1.0 - iota } else { iota };
                a -= w;
                b += w * x;
            }
            return (-b / a).clamp(lo, hi);
        }
    }
    xs[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectile_of_point_mass_and_mean() {
        assert_eq!(discrete_expectile(&[(1.0, 3.0)], 0.9), 3.0);
        let d = [(0.25, -1.0), (0.75, 3.0)];
        assert!((discrete_expectile(&d, 0.5) - 2.0).abs() < 1e-12);
        assert!(discrete_expectile(&d, 0.9) > 2.0);
    }

    #[test]
    fn deterministic_corridor_steps_to_go() {
        let c = TabularChain::corridor(6, 1.0).unwrap();
        let v = c.expectile_fixed_point(1.0, 0.7, 1e-12, 1000).unwrap();
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, -(i as f64));
        }
        assert_eq!(c.td_loss(&v, 1.0, 0.7), 0.0);
    }
}
