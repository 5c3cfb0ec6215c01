//! Minimum-jerk scalar reference smoother.
//!
//! Between goal changes the output follows a quintic with zero velocity and
//! acceleration at the end; for a rest-to-rest move this is the classic
//! 10τ³ − 15τ⁴ + 6τ⁵ profile. When the goal changes mid-flight the segment
//! is re-planned from the current value, velocity and acceleration, so the
//! output stays C² across goal changes.

/// One smoothed degree of freedom.
#[derive(Debug, Clone)]
pub struct MinJerkSmoother {
    /// Segment duration T (s).
    smoothing_time: f64,
    /// Quintic coefficients in normalized time τ = elapsed / T.
    coeffs: [f64; 6],
    elapsed: f64,
    goal: f64,
    value: f64,
    velocity: f64,
    acceleration: f64,
}

impl MinJerkSmoother {
    /// Starts at rest at `initial`; `smoothing_time` must be positive.
    pub fn new(smoothing_time: f64, initial: f64) -> Self {
        assert!(smoothing_time > 0.0, "smoothing time must be positive");
        let mut s = MinJerkSmoother {
            smoothing_time,
            coeffs: [0.0; 6],
            elapsed: 0.0,
            goal: initial,
            value: initial,
            velocity: 0.0,
            acceleration: 0.0,
        };
        s.replan(initial);
        s
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    /// Advances time by `dt`, heading for `goal`; returns the new value.
    pub fn advance(&mut self, goal: f64, dt: f64) -> f64 {
        assert!(dt > 0.0, "time step must be positive");
        if goal != self.goal {
            self.replan(goal);
        }
        self.elapsed += dt;
        let tau = (self.elapsed / self.smoothing_time).min(1.0);
        let t = self.smoothing_time;
        let c = &self.coeffs;
        // Horner evaluation of p, p' and p'' in τ; velocities and
        // accelerations need the 1/T and 1/T² chain-rule factors.
        let p = ((((c[5] * tau + c[4]) * tau + c[3]) * tau + c[2]) * tau + c[1]) * tau + c[0];
        let dp = (((5.0 * c[5] * tau + 4.0 * c[4]) * tau + 3.0 * c[3]) * tau + 2.0 * c[2]) * tau
            + c[1];
        let ddp = ((20.0 * c[5] * tau + 12.0 * c[4]) * tau + 6.0 * c[3]) * tau + 2.0 * c[2];
        self.value = p;
        self.velocity = dp / t;
        self.acceleration = ddp / (t * t);
        self.value
    }

    /// New quintic from the current (value, velocity, acceleration) to
    /// (goal, 0, 0) over one smoothing period.
    fn replan(&mut self, goal: f64) {
        let t = self.smoothing_time;
        let x0 = self.value;
        let v = self.velocity * t;
        let a = self.acceleration * t * t;
        let d = goal - x0;
        self.coeffs = [
            x0,
            v,
            0.5 * a,
            10.0 * d - 6.0 * v - 1.5 * a,
            -15.0 * d + 8.0 * v + 1.5 * a,
            6.0 * d - 3.0 * v - 0.5 * a,
        ];
        self.elapsed = 0.0;
        self.goal = goal;
    }
}
