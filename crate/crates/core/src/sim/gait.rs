//! Contact scheduling and swing-foot trajectories.

use serde::{Deserialize, Serialize};

use crate::model::{GaitPattern, GaitSchedule, Vec3, NUM_LEGS};

/// Contact state of every leg at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitPhase {
    pub stance: [bool; NUM_LEGS],
    /// Progress through the current stance or swing interval, in `[0, 1)`.
    pub phase: [f64; NUM_LEGS],
}

/// Leg `i` is in stance iff `frac(t / period + offset_i) < duty`.
pub fn gait_tick(gait: &GaitSchedule, t: f64) -> GaitPhase {
    if gait.pattern == GaitPattern::Stand || gait.duty >= 1.0 {
        return GaitPhase {
            stance: [true; NUM_LEGS],
            phase: [0.0; NUM_LEGS],
        };
    }
    let mut stance = [false; NUM_LEGS];
    let mut phase = [0.0; NUM_LEGS];
    for i in 0..NUM_LEGS {
        let s = (t / gait.period + gait.phase_offsets[i]).rem_euclid(1.0);
        if s < gait.duty {
            stance[i] = true;
            phase[i] = s / gait.duty;
        } else {
            phase[i] = (s - gait.duty) / (1.0 - gait.duty);
        }
    }
    GaitPhase { stance, phase }
}

/// Stance flags at `t + k*dt` for `k = 0..n`.
pub fn stance_horizon(gait: &GaitSchedule, t: f64, dt: f64, n: usize) -> Vec<[bool; NUM_LEGS]> {
    (0..n).map(|k| gait_tick(gait, t + k as f64 * dt).stance).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwingConfig {
    /// Apex height of the swing foot [m].
    pub height: f64,
    /// Velocity feedback gain of the touchdown heuristic [s].
    pub k_v: f64,
}

impl Default for SwingConfig {
    fn default() -> Self {
        Self {
            height: 0.08,
            k_v: 0.03,
        }
    }
}

/// Raibert touchdown: hip projection plus `v T_stance / 2 + k_v (v - v_cmd)`,
/// on the ground plane.
pub fn raibert_target(hip_projection: &Vec3, vel: &Vec3, vel_cmd: &Vec3, t_stance: f64, k_v: f64) -> Vec3 {
    let mut p = hip_projection + vel * (t_stance / 2.0) + (vel - vel_cmd) * k_v;
    p.z = 0.0;
    p
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Swing path from liftoff to touchdown: cubic blend in the horizontal plane
/// and a cubic rise to `height` then a cubic descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingTrajectory {
    pub start: Vec3,
    pub end: Vec3,
    pub height: f64,
}

impl SwingTrajectory {
    /// Position at normalized swing time `s` in `[0, 1]`.
    pub fn sample(&self, s: f64) -> Vec3 {
        let b = smoothstep(s);
        let mut p = self.start + (self.end - self.start) * b;
        p.z = if s < 0.5 {
            self.start.z + self.height * smoothstep(2.0 * s)
        } else {
            self.end.z + self.height * smoothstep(2.0 * (1.0 - s))
        };
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stand_is_always_stance() {
        let g = GaitSchedule::stand();
        for t in [0.0, 0.13, 7.9] {
            assert_eq!(gait_tick(&g, t).stance, [true; 4]);
        }
    }

    #[test]
    fn trot_starts_with_diagonal_pair() {
        let g = GaitSchedule::trot(0.5);
        assert_eq!(gait_tick(&g, 0.0).stance, [true, false, false, true]);
        assert_eq!(gait_tick(&g, 0.25).stance, [false, true, true, false]);
    }

    #[test]
    fn stance_fraction_matches_duty() {
        let g = GaitSchedule {
            duty: 0.6,
            ..GaitSchedule::trot(0.4)
        };
        let dt = 1e-3;
        let ticks = (g.period / dt).round() as usize;
        for leg in 0..4 {
            let count = (0..ticks)
                .filter(|&k| gait_tick(&g, k as f64 * dt).stance[leg])
                .count();
            let expect = g.duty * ticks as f64;
            assert!((count as f64 - expect).abs() <= 1.0, "leg {leg}: {count}");
        }
    }

    #[test]
    fn raibert_examples() {
        let hip = Vec3::new(0.24, 0.13, 0.0);
        let z = Vec3::zeros();
        assert_eq!(raibert_target(&hip, &z, &z, 0.25, 0.03), hip);
        let v = Vec3::new(0.5, 0.0, 0.0);
        let t = raibert_target(&hip, &v, &Vec3::zeros(), 0.25, 0.0);
        assert_relative_eq!(t.x - hip.x, 0.0625, epsilon = 1e-12);
    }

    #[test]
    fn swing_endpoints_are_exact() {
        let sw = SwingTrajectory {
            start: Vec3::new(0.1, 0.2, 0.0),
            end: Vec3::new(0.3, 0.1, 0.0),
            height: 0.08,
        };
        assert_eq!(sw.sample(0.0), sw.start);
        assert_eq!(sw.sample(1.0), sw.end);
        assert_relative_eq!(sw.sample(0.5).z, 0.08, epsilon = 1e-12);
    }
}
