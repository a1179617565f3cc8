//! Library side of the command-line tools: every subcommand is a function
//! here returning data, and the binary only parses flags and writes files.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::gait_library::{GaitLibrary, ResetMap};
use crate::hlip::{HlipParams, HlipPlanner, HlipReferenceConfig};
use crate::reference::{scalar_names, Channel, Parity, ReferenceFrame};
use crate::rng;
use crate::trainer::{evaluate, Checkpoint, EpisodeSummary};

/// Velocities converted by `gen-library` when none are given.
pub const DEFAULT_LIBRARY_VELOCITIES: [f64; 7] = [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75];

pub const DEFAULT_INVARIANCE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub enum ReferenceSource<'a> {
    Hlip {
        params: &'a HlipParams,
        cfg: &'a HlipReferenceConfig,
    },
    GaitLibrary(&'a GaitLibrary),
}

/// Column-major-friendly table of floats with a named header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn reference_header(channels: &[Channel]) -> Vec<String> {
    let names = scalar_names(channels);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("{n}_dot")));
    header
}

/// Samples `(t, y_d, ẏ_d)` at `i·dt` over `steps` steps of the selected gait.
pub fn generate_reference(source: ReferenceSource<'_>, velocity: f64, steps: usize, dt: f64) -> Result<Table> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("dt", "must be positive"));
    }
    if steps == 0 {
        return Err(Error::validation("steps", "must be at least 1"));
    }
    let planner;
    let (channels, period, frame): (Vec<Channel>, f64, Box<dyn Fn(f64) -> Result<ReferenceFrame>>) = match source {
        ReferenceSource::Hlip { params, cfg } => {
            planner = HlipPlanner::new(velocity, *params, cfg.clone())?;
            let p = &planner;
            (p.channels(), params.step_period(), Box::new(move |t| p.frame_at(t)))
        }
        ReferenceSource::GaitLibrary(lib) => {
            let entry = lib.select(velocity)?;
            (
                entry.channels(),
                entry.step_duration(),
                Box::new(move |t| entry.reference_at(t, Parity::Even)),
            )
        }
    };
    let n = (steps as f64 * period / dt).round() as usize;
    let rows = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let f = frame(t)?;
            let mut row = Vec::with_capacity(1 + 2 * f.y.len());
            row.push(t);
            row.extend(&f.y);
            row.extend(&f.ydot);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: reference_header(&channels),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryResidual {
    pub v_nominal: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub entries: Vec<EntryResidual>,
    pub threshold: f64,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.residual < self.threshold)
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.iter().map(|e| e.residual).fold(0.0, f64::max)
    }
}

pub fn check_invariance(lib: &GaitLibrary, reset: &ResetMap, threshold: f64) -> Result<InvarianceReport> {
    if lib.is_empty() {
        return Err(Error::Library("library has no entries".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::validation("threshold", "must be positive"));
    }
    let entries = lib
        .entries()
        .iter()
        .map(|e| {
            Ok(EntryResidual {
                v_nominal: e.v_nominal(),
                residual: e.impact_invariance_residual(reset)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InvarianceReport { entries, threshold })
}

/// Deterministic policy-mean roll-outs, one per command, all from `seed`.
pub fn evaluate_commands(
    ckpt: &Checkpoint,
    commands: &[f64],
    seed: u64,
) -> Result<Vec<(EpisodeSummary, Trajectory)>> {
    commands
        .par_iter()
        .map(|&cmd| {
            let mut env = ckpt.make_env()?;
            let mut traj = Trajectory::new(&env);
            let s = evaluate(&ckpt.policy.actor, &mut env, seed, cmd, None, Some(&mut traj))?;
            Ok((s, traj))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub samples: Vec<EpisodeSummary>,
    pub mean: f64,
    /// Population standard deviation, so a single sample gives 0.
    pub std: f64,
}

/// Evaluates one checkpoint across `samples` CoM-height multipliers drawn
/// uniformly from the checkpoint's randomization range (1.0 when disabled).
pub fn sweep_com_height(ckpt: &Checkpoint, samples: usize, seed: u64, command: f64) -> Result<SweepResult> {
    if samples == 0 {
        return Err(Error::validation("samples", "must be at least 1"));
    }
    let r = &ckpt.env.randomization;
    let mut draw = rng::stream(seed, "sweep.com_height", 0);
    let multipliers: Vec<f64> = (0..samples)
        .map(|_| {
            if r.enabled && r.com_height_range[0] < r.com_height_range[1] {
                draw.random_range(r.com_height_range[0]..=r.com_height_range[1])
            } else if r.enabled {
                r.com_height_range[0]
            } else {
                1.0
            }
        })
        .collect();
    let summaries = multipliers
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut env = ckpt.make_env()?;
            let ep_seed = rng::derive_seed(seed, "sweep.episode", i as u64);
            evaluate(&ckpt.policy.actor, &mut env, ep_seed, command, Some(m), None)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = summaries.len() as f64;
    let mean = summaries.iter().map(|s| s.tracking_error).sum::<f64>() / n;
    let var = summaries.iter().map(|s| (s.tracking_error - mean).powi(2)).sum::<f64>() / n;
    Ok(SweepResult {
        samples: summaries,
        mean,
        std: var.sqrt(),
    })
}

pub fn write_summaries_csv(rows: &[EpisodeSummary], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "command",
            "seed",
            "com_height_scale",
            "steps",
            "terminated",
            "tracking_error",
            "mean_eta",
            "mean_vel_err",
            "mean_total_reward",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSummaryRow {
    pub param: &'static str,
    pub samples: usize,
    pub mean_tracking_error: f64,
    pub std_tracking_error: f64,
}

pub fn write_sweep_summary_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(SweepSummaryRow {
        param: "com_height",
        samples: result.samples.len(),
        mean_tracking_error: result.mean,
        std_tracking_error: result.std,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;
    use crate::gait_library::{convert_hlip, HLIP_FIT_DEGREE};
    use crate::trainer::{PpoConfig, TrainSetup};

    fn hlip_inputs() -> (HlipParams, HlipReferenceConfig) {
        let params = HlipParams {
            t_dsp: 0.0,
            ..HlipParams::default()
        };
        let cfg = HlipReferenceConfig {
            t_period: 2.0 * params.step_period(),
            ..HlipReferenceConfig::default()
        };
        (params, cfg)
    }

    #[test]
    fn hlip_reference_header_and_length() {
        let (params, cfg) = hlip_inputs();
        let t = generate_reference(ReferenceSource::Hlip { params: &params, cfg: &cfg }, 0.0, 2, 0.01).unwrap();
        assert_eq!(
            t.header,
            [
                "t",
                "com_x",
                "swing_foot_0",
                "swing_foot_1",
                "swing_foot_2",
                "torso_pitch",
                "com_x_dot",
                "swing_foot_0_dot",
                "swing_foot_1_dot",
                "swing_foot_2_dot",
                "torso_pitch_dot"
            ]
        );
        assert_eq!(t.rows.len(), (2.0 * params.step_period() / 0.01).round() as usize);
        assert!(t.column("com_x").unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(t.column("com_x_dot").unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gaitlib_source_matches_hlip_source() {
        let (params, cfg) = hlip_inputs();
        let (lib, _) = convert_hlip(&DEFAULT_LIBRARY_VELOCITIES, &params, &cfg, HLIP_FIT_DEGREE).unwrap();
        for v in [-0.5, 0.25, 0.75] {
            let a = generate_reference(ReferenceSource::Hlip { params: &params, cfg: &cfg }, v, 4, 0.005).unwrap();
            let b = generate_reference(ReferenceSource::GaitLibrary(&lib), v, 4, 0.005).unwrap();
            assert_eq!(a.header, b.header);
            assert_eq!(a.rows.len(), b.rows.len());
            let worst = a
                .rows
                .iter()
                .zip(&b.rows)
                .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "v = {v}: {worst:e}");
        }
    }

    #[test]
    fn invariance_report() {
        let (params, cfg) = hlip_inputs();
        let (mut lib, reset) = convert_hlip(&[0.0, 0.5], &params, &cfg, HLIP_FIT_DEGREE).unwrap();
        let report = check_invariance(&lib, &reset, DEFAULT_INVARIANCE_THRESHOLD).unwrap();
        assert!(report.passed());
        assert_eq!(report.entries.len(), 2);
        let pts = lib.entries_mut()[1].curve_mut("torso_pitch").unwrap().control_points_mut();
        let last = pts.len() - 1;
        pts[last][0] += 1e-3;
        pts[last - 1][0] += 1e-3;
        let report = check_invariance(&lib, &reset, DEFAULT_INVARIANCE_THRESHOLD).unwrap();
        assert!(!report.passed());
        assert!((report.max_residual() - 1e-3).abs() < 1e-4);
        assert!(check_invariance(&lib, &reset, 0.0).is_err());
    }

    fn untrained(kind: EnvKind) -> Checkpoint {
        let mut setup = TrainSetup {
            env: Default::default(),
            clf: Default::default(),
            weights: Default::default(),
            ppo: PpoConfig::default(),
            variant: crate::env::RewardVariant::TrackingOnly,
        };
        setup.env.kind = kind;
        setup.env.episode_len = 60;
        setup.initial_checkpoint().unwrap()
    }

    #[test]
    fn sweep_statistics() {
        let mut ckpt = untrained(EnvKind::HlipStepper);
        ckpt.env.randomization.enabled = false;
        let one = sweep_com_height(&ckpt, 1, 0, 0.0).unwrap();
        assert_eq!(one.std, 0.0);
        assert_eq!(one.samples[0].com_height_scale, 1.0);

        ckpt.env.randomization.enabled = true;
        let many = sweep_com_height(&ckpt, 6, 3, 0.25).unwrap();
        let [lo, hi] = ckpt.env.randomization.com_height_range;
        assert!(many.samples.iter().all(|s| (lo..=hi).contains(&s.com_height_scale)));
        let again = sweep_com_height(&ckpt, 6, 3, 0.25).unwrap();
        assert_eq!(many, again);
        let mean = many.samples.iter().map(|s| s.tracking_error).sum::<f64>() / 6.0;
        assert!((many.mean - mean).abs() < 1e-15);
        assert!(sweep_com_height(&ckpt, 0, 3, 0.25).is_err());
    }

    #[test]
    fn eval_commands_are_ordered_and_finite() {
        let ckpt = untrained(EnvKind::DoubleIntegrator);
        let out = evaluate_commands(&ckpt, &[0.0, 0.5, -0.5], 1).unwrap();
        let cmds: Vec<f64> = out.iter().map(|(s, _)| s.command).collect();
        assert_eq!(cmds, vec![0.0, 0.5, -0.5]);
        assert!(out.iter().all(|(s, t)| s.tracking_error.is_finite() && t.rows().len() == 60));
        assert!(evaluate_commands(&ckpt, &[5.0], 1).is_err());
    }
}
