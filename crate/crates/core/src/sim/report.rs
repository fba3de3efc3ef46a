//! Run metrics, the per-tick trace and their text formats.

use std::fmt::Write as _;

use crate::mpc::ControllerKind;

/// Names of the per-tick trace columns, in order.
pub fn trace_header() -> Vec<String> {
    let mut cols = vec!["time".to_string()];
    let state = [
        "roll", "pitch", "yaw", "px", "py", "pz", "wx", "wy", "wz", "vx", "vy", "vz", "g",
    ];
    cols.extend(state.iter().map(|s| s.to_string()));
    cols.extend(state.iter().map(|s| format!("ref_{s}")));
    for leg in 0..4 {
        for axis in ["x", "y", "z"] {
            cols.push(format!("f{leg}{axis}"));
        }
    }
    cols.extend(["fmx", "fmy", "fmz"].map(String::from));
    cols.push("q_arm".into());
    cols.extend((0..3).map(|i| format!("obj{i}")));
    cols.extend((0..3).map(|i| format!("objv{i}")));
    cols.extend(["int_x", "int_y", "int_z"].map(String::from));
    cols.extend((0..4).map(|i| format!("stance{i}")));
    cols.push("degraded".into());
    cols.push("subtask".into());
    cols
}

/// Number of trace columns.
pub const TRACE_COLUMNS: usize = 58;

/// One control tick worth of trace data; `values` follows [`trace_header`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub values: Vec<f64>,
}

/// Per-tick trace of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Values of one column, by header name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = trace_header().iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[idx]).collect())
    }

    /// CSV text with a header line. Numbers use the shortest representation
    /// that round-trips, so equal runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = trace_header().join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.values.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Summary metrics of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub name: String,
    pub controller: ControllerKind,
    pub seed: u64,
    /// Simulated time actually covered [s].
    pub sim_time: f64,
    pub com_height_rmse: f64,
    pub pitch_rmse: f64,
    /// Largest absolute pitch at any physics step [rad].
    pub max_pitch: f64,
    pub max_height_error: f64,
    /// CoM dropped below half the reference height, or the run aborted.
    pub fell: bool,
    /// Diagnostic of an aborted run.
    pub aborted: Option<String>,
    pub ticks: usize,
    /// Ticks where a layer failed or hit its iteration limit.
    pub degraded_ticks: usize,
    /// Applied stance forces outside the friction pyramid.
    pub pyramid_violations: usize,
    /// Largest gripper to grasped-object distance [m].
    pub max_grasp_error: f64,
    pub final_object: [f64; 3],
    pub handle_release_time: Option<f64>,
    /// First time the door leaf reached 80% of the target angle.
    pub door_80_time: Option<f64>,
    pub final_door_angle: Option<f64>,
    /// Smallest door-frame clearance over all reference poses [m].
    pub min_clearance: Option<f64>,
    /// Largest push-force component along the door leaf or vertical, as a
    /// fraction of the force magnitude, over all planned push steps.
    pub max_push_tangential: Option<f64>,
}

impl RunMetrics {
    pub fn new(name: &str, controller: ControllerKind, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            controller,
            seed,
            sim_time: 0.0,
            com_height_rmse: 0.0,
            pitch_rmse: 0.0,
            max_pitch: 0.0,
            max_height_error: 0.0,
            fell: false,
            aborted: None,
            ticks: 0,
            degraded_ticks: 0,
            pyramid_violations: 0,
            max_grasp_error: 0.0,
            final_object: [0.0; 3],
            handle_release_time: None,
            door_80_time: None,
            final_door_angle: None,
            min_clearance: None,
            max_push_tangential: None,
        }
    }

    /// `key = value` lines, one per field; absent values print as `none`.
    pub fn to_summary(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "none".to_string(), |x| format!("{x}"))
        }
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("controller", self.controller.to_string());
        kv("seed", self.seed.to_string());
        kv("sim_time", format!("{}", self.sim_time));
        kv("com_height_rmse", format!("{}", self.com_height_rmse));
        kv("pitch_rmse", format!("{}", self.pitch_rmse));
        kv("max_pitch", format!("{}", self.max_pitch));
        kv("max_height_error", format!("{}", self.max_height_error));
        kv("fell", self.fell.to_string());
        kv("aborted", self.aborted.clone().unwrap_or_else(|| "none".into()));
        kv("ticks", self.ticks.to_string());
        kv("degraded_ticks", self.degraded_ticks.to_string());
        kv("pyramid_violations", self.pyramid_violations.to_string());
        kv("max_grasp_error", format!("{}", self.max_grasp_error));
        kv(
            "final_object",
            format!("{} {} {}", self.final_object[0], self.final_object[1], self.final_object[2]),
        );
        kv("handle_release_time", opt(self.handle_release_time));
        kv("door_80_time", opt(self.door_80_time));
        kv("final_door_angle", opt(self.final_door_angle));
        kv("min_clearance", opt(self.min_clearance));
        kv("max_push_tangential", opt(self.max_push_tangential));
        s
    }
}

/// Side-by-side table of several runs.
pub fn comparison_table(runs: &[RunMetrics]) -> String {
    let mut s = String::from(
        "controller,com_height_rmse,pitch_rmse,max_pitch,max_height_error,fell\n",
    );
    for m in runs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m.controller, m.com_height_rmse, m.pitch_rmse, m.max_pitch, m.max_height_error, m.fell
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_declared_width() {
        assert_eq!(trace_header().len(), TRACE_COLUMNS);
    }

    #[test]
    fn csv_rows_have_header_width() {
        let trace = Trace {
            rows: vec![
                TraceRow {
                    values: vec![0.5; TRACE_COLUMNS],
                },
                TraceRow {
                    values: (0..TRACE_COLUMNS).map(|i| i as f64 * 0.1).collect(),
                },
            ],
        };
        let csv = trace.to_csv();
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), TRACE_COLUMNS);
        }
        assert_eq!(trace.column("pz").unwrap(), vec![0.5, 6.0 * 0.1]);
        assert!(trace.column("nope").is_none());
    }

    #[test]
    fn summary_lists_every_metric() {
        let m = RunMetrics::new("lift", ControllerKind::Baseline, 7);
        let s = m.to_summary();
        assert!(s.contains("controller = Baseline"));
        assert!(s.contains("fell = false"));
        assert_eq!(s.lines().count(), 20);
    }
}
