//! Dual-PID lateral tracking of a target lane reference.
//!
//! The outer loop maps lateral error to a desired heading, the inner loop
//! maps heading error to a yaw rate. Gains are fixed constants tuned once
//! against the lane-change envelope (center crossing within 2-5 s at
//! highway speed, overshoot past the new center at most 0.3 m) and pinned
//! by regression tests in the parent module.

/// Outer loop: lateral error (m) to desired yaw (rad).
const KP_OUTER: f64 = 0.032;
const KI_OUTER: f64 = 0.0;
const KD_OUTER: f64 = 0.004;
/// Inner loop: yaw error (rad) to yaw rate (rad/s).
const KP_INNER: f64 = 3.0;
const KI_INNER: f64 = 0.0;
const KD_INNER: f64 = 0.0;
/// Saturation of the desired yaw; bounds lateral speed to v * sin(YAW_MAX).
const YAW_MAX: f64 = 0.03;
/// Saturation of the commanded yaw rate.
const YAW_RATE_MAX: f64 = 0.3;
/// Anti-windup clamp on the integral terms.
const INTEGRAL_MAX: f64 = 10.0;

#[derive(Debug, Clone, Default)]
pub struct LateralController {
    outer_int: f64,
    outer_prev_err: Option<f64>,
    inner_int: f64,
    inner_prev_err: Option<f64>,
}

impl LateralController {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Advance one step. Takes the current global lateral position, the
    /// (already updated) longitudinal speed, the current yaw and the target
    /// lane center; returns the next global lateral position and yaw.
    pub fn step(
        &mut self,
        d_global: f64,
        v: f64,
        yaw: f64,
        target_center: f64,
        dt: f64,
    ) -> (f64, f64) {
        let err = target_center - d_global;
        self.outer_int = (self.outer_int + err * dt).clamp(-INTEGRAL_MAX, INTEGRAL_MAX);
        let derr = match self.outer_prev_err {
            Some(prev) => (err - prev) / dt,
            None => 0.0,
        };
        self.outer_prev_err = Some(err);
        let yaw_des = (KP_OUTER * err + KI_OUTER * self.outer_int + KD_OUTER * derr)
            .clamp(-YAW_MAX, YAW_MAX);

        let yaw_err = yaw_des - yaw;
        self.inner_int = (self.inner_int + yaw_err * dt).clamp(-INTEGRAL_MAX, INTEGRAL_MAX);
        let dyaw_err = match self.inner_prev_err {
            Some(prev) => (yaw_err - prev) / dt,
            None => 0.0,
        };
        self.inner_prev_err = Some(yaw_err);
        let rate = (KP_INNER * yaw_err + KI_INNER * self.inner_int + KD_INNER * dyaw_err)
            .clamp(-YAW_RATE_MAX, YAW_RATE_MAX);

        let yaw_next = yaw + rate * dt;
        let d_next = d_global + v * yaw_next.sin() * dt;
        (d_next, yaw_next)
    }
}
