//! Lazily realized Brownian motion in intrinsic time, for the random-clock
//! coupling.
//!
//! The path is kept as a sorted knot list (time, value). Advancing a cursor
//! past the last knot draws a fresh Gaussian increment; advancing into the
//! interior inserts a knot by Brownian-bridge conditioning. Both clocks are
//! nondecreasing, so knots behind the slower cursor are dead and pruned.

use std::collections::VecDeque;

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::sampling::draw_std_normal;

/// Knot cap; with monotone pruning the live window stays small, the cap only
/// guards against clock pathologies.
pub const KNOT_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy)]
struct Knot {
    t: f64,
    value: f64,
}

pub struct IntrinsicBrownian {
    knots: VecDeque<Knot>,
    /// Most recent pure extension (a, b, increment); lets an immediately
    /// repeated query over the same span return the drawn increment exactly.
    last_ext: Option<(f64, f64, f64)>,
    cap: usize,
}

impl IntrinsicBrownian {
    pub fn new() -> Self {
        let mut knots = VecDeque::new();
        knots.push_back(Knot { t: 0.0, value: 0.0 });
        Self { knots, last_ext: None, cap: KNOT_CAP }
    }

    fn index_of(&self, t: f64) -> Option<usize> {
        // Cursors always sit on knots near the back; scan from the back.
        self.knots.iter().rposition(|k| k.t == t)
    }

    fn value_at_knot(&self, t: f64) -> Option<f64> {
        self.index_of(t).map(|i| self.knots[i].value)
    }

    /// B(a + delta) - B(a). `a` must be an existing knot (the cursor of one
    /// of the two processes); `delta` must be positive.
    pub fn advance(&mut self, a: f64, delta: f64, step: usize, rng: &mut ChaCha12Rng) -> Result<f64> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::ClockNotMonotone { step, increment: delta });
        }
        let b = a + delta;
        if let Some((ma, mb, inc)) = self.last_ext {
            if ma == a && mb == b {
                return Ok(inc);
            }
        }
        let va = self
            .value_at_knot(a)
            .ok_or_else(|| Error::EigenSolve(format!("internal: cursor {a} is not a knot")))?;
        let back = *self.knots.back().expect("knot list never empty");

        let inc = if b > back.t {
            let g = draw_std_normal(rng);
            let ext = if a == back.t {
                // Use the requested span for the variance so that constant
                // clocks reproduce the plain coupling bit for bit.
                g * delta.sqrt()
            } else {
                g * (b - back.t).sqrt()
            };
            let vb = back.value + ext;
            self.knots.push_back(Knot { t: b, value: vb });
            let inc = if a == back.t { ext } else { vb - va };
            self.last_ext = Some((a, b, inc));
            inc
        } else {
            // Interior query: either an existing knot or a bridge insertion.
            let j = self.knots.partition_point(|k| k.t < b);
            if j < self.knots.len() && self.knots[j].t == b {
                self.knots[j].value - va
            } else {
                let left = self.knots[j - 1];
                let right = self.knots[j];
                let span = right.t - left.t;
                let frac = (b - left.t) / span;
                let mean = left.value + frac * (right.value - left.value);
                let var = (b - left.t) * (right.t - b) / span;
                let vb = mean + draw_std_normal(rng) * var.max(0.0).sqrt();
                self.knots.insert(j, Knot { t: b, value: vb });
                vb - va
            }
        };
        if self.knots.len() > self.cap {
            return Err(Error::KnotOverflow { cap: self.cap });
        }
        Ok(inc)
    }

    /// Drop knots strictly behind `horizon` (the slower cursor). The knot at
    /// or immediately before the horizon is retained as a bridge endpoint.
    pub fn prune(&mut self, horizon: f64) {
        while self.knots.len() >= 2 && self.knots[1].t <= horizon {
            self.knots.pop_front();
        }
        if let Some((_, mb, _)) = self.last_ext {
            if mb < horizon {
                self.last_ext = None;
            }
        }
    }

    /// Value of the path at intrinsic time `u`, realizing it if needed.
    /// Used for marginal-law checks; `u` must not precede the first knot.
    pub fn sample_value(&mut self, u: f64, rng: &mut ChaCha12Rng) -> Result<f64> {
        let front = self.knots.front().expect("knot list never empty").t;
        if u < front {
            return Err(Error::InvalidInput(format!("time {u} precedes pruned history {front}")));
        }
        if let Some(v) = self.value_at_knot(u) {
            return Ok(v);
        }
        let back = *self.knots.back().unwrap();
        if u > back.t {
            let g = draw_std_normal(rng);
            let vb = back.value + g * (u - back.t).sqrt();
            self.knots.push_back(Knot { t: u, value: vb });
            return Ok(vb);
        }
        let va = self.knots.front().unwrap().value;
        let inc = self.advance(self.knots.front().unwrap().t, u - front, 0, rng)?;
        Ok(va + inc)
    }

    #[cfg(test)]
    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }
}

impl Default for IntrinsicBrownian {
    fn default() -> Self {
        Self::new()
    }
}
