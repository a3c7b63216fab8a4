//! Safe exploration around a baseline PID for simulator training data.
//!
//! Two perturbation shapes: a boundary ramp that starts high at inhalation
//! onset and decays linearly to zero, and a triangular bump inside the
//! inhalation. Per breath one of the two is drawn and added to the base PID
//! output before clamping.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    episode_split, run_segment, Controller, Episode, Plant, Sample, Trajectory, Waveform, U_MAX,
};
use crate::error::{Result, VentError};
use crate::pid::{PidCoefficients, PidController};

/// Per-setting exploration parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub base_pid: PidCoefficients,
    /// Boundary additive-control range, control units.
    pub c_a: (f64, f64),
    /// Boundary decay-time range, s.
    pub t_a: (f64, f64),
    /// Triangular peak range, control units (may be negative).
    pub c_b: (f64, f64),
    /// Triangular window, s (fixed, not resampled).
    pub t_b: (f64, f64),
    /// Probability of the boundary policy per breath.
    pub p_a: f64,
}

/// Exploration rows per ISO setting: (R, C) -> (P, I, D), c_a, t_a, c_b, t_b, p_a.
#[allow(clippy::type_complexity)]
pub const EXPLORATION_TABLE: [(
    (f64, f64),
    (f64, f64, f64),
    (f64, f64),
    (f64, f64),
    (f64, f64),
    (f64, f64),
    f64,
); 6] = [
    ((5.0, 10.0), (1.0, 0.5, 0.0), (50.0, 100.0), (0.3, 0.6), (-20.0, 40.0), (0.1, 0.5), 0.25),
    ((5.0, 20.0), (1.0, 3.0, 0.0), (50.0, 100.0), (0.4, 0.8), (-20.0, 60.0), (0.1, 0.5), 0.25),
    ((5.0, 50.0), (2.0, 4.0, 0.0), (75.0, 100.0), (1.0, 1.5), (-20.0, 60.0), (0.1, 0.5), 0.25),
    ((20.0, 10.0), (1.0, 0.5, 0.0), (50.0, 100.0), (0.3, 0.6), (-20.0, 40.0), (0.1, 0.5), 0.25),
    ((20.0, 20.0), (0.0, 3.0, 0.0), (30.0, 60.0), (0.5, 1.0), (-20.0, 40.0), (0.1, 0.5), 0.25),
    ((20.0, 50.0), (0.0, 4.0, 0.0), (70.0, 100.0), (1.0, 1.5), (-20.0, 40.0), (0.1, 0.5), 0.25),
];

impl ExplorationConfig {
    /// Table row for an ISO setting, if one exists.
    pub fn for_setting(r: f64, c: f64) -> Option<Self> {
        EXPLORATION_TABLE
            .iter()
            .find(|((rr, cc), ..)| *rr == r && *cc == c)
            .map(|(_, (kp, ki, kd), c_a, t_a, c_b, t_b, p_a)| ExplorationConfig {
                base_pid: PidCoefficients::new(*kp, *ki, *kd),
                c_a: *c_a,
                t_a: *t_a,
                c_b: *c_b,
                t_b: *t_b,
                p_a: *p_a,
            })
    }

    pub fn validate(&self) -> Result<()> {
        let ranges_ok = self.c_a.0 <= self.c_a.1
            && self.t_a.0 <= self.t_a.1
            && self.c_b.0 <= self.c_b.1
            && self.t_b.0 <= self.t_b.1;
        if !ranges_ok || !(0.0..=1.0).contains(&self.p_a) {
            return Err(VentError::InvalidParameter(format!(
                "invalid exploration config: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Boundary,
    Triangular,
}

/// A sampled additive control schedule over one inhalation, piecewise linear
/// in time since inhalation start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSchedule {
    pub kind: ScheduleKind,
    /// Peak additive control, control units.
    pub peak: f64,
    /// Support start, s since inhalation start.
    pub t_start: f64,
    /// Support end, s.
    pub t_end: f64,
}

impl AdditiveSchedule {
    /// Additive control at `t` seconds since inhalation start.
    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Boundary => {
                if t < 0.0 || t >= self.t_end {
                    0.0
                } else {
                    self.peak * (1.0 - t / self.t_end)
                }
            }
            ScheduleKind::Triangular => {
                if t <= self.t_start || t >= self.t_end {
                    return 0.0;
                }
                let mid = 0.5 * (self.t_start + self.t_end);
                if t <= mid {
                    self.peak * (t - self.t_start) / (mid - self.t_start)
                } else {
                    self.peak * (self.t_end - t) / (self.t_end - mid)
                }
            }
        }
    }
}

/// Boundary policy: additive control c ~ U(c_a) at inhalation start,
/// decaying linearly to zero at t_end ~ U(t_a).
pub fn boundary_schedule(rng: &mut ChaCha8Rng, cfg: &ExplorationConfig) -> AdditiveSchedule {
    let peak = sample_range(rng, cfg.c_a);
    let t_end = sample_range(rng, cfg.t_a);
    AdditiveSchedule {
        kind: ScheduleKind::Boundary,
        peak,
        t_start: 0.0,
        t_end,
    }
}

/// Triangular policy: peak c ~ U(c_b); rises linearly from zero at t_b_min to
/// the peak at the window midpoint, back to zero at t_b_max.
pub fn triangular_schedule(rng: &mut ChaCha8Rng, cfg: &ExplorationConfig) -> AdditiveSchedule {
    let peak = sample_range(rng, cfg.c_b);
    AdditiveSchedule {
        kind: ScheduleKind::Triangular,
        peak,
        t_start: cfg.t_b.0,
        t_end: cfg.t_b.1,
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Base PID plus an additive schedule, clamped to [0, U_MAX].
struct PerturbedPid {
    pid: PidController,
    schedule: AdditiveSchedule,
    breath_start: f64,
}

impl Controller for PerturbedPid {
    fn begin_breath(&mut self) {
        self.pid.begin_breath();
    }

    fn control(&mut self, t: f64, target: f64, measured: f64) -> f64 {
        let base = crate::pid::pid_control_raw(
            &mut self.pid.state,
            target,
            measured,
            &self.pid.coeffs,
        );
        (base + self.schedule.value(t - self.breath_start)).clamp(0.0, U_MAX)
    }

    fn reset(&mut self) {
        self.pid.reset();
    }
}

/// Audit record for one attempted breath.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BreathLog {
    pub breath: usize,
    pub schedule: AdditiveSchedule,
    pub aborted: bool,
}

/// A collected exploration dataset: inspiratory episodes, the raw
/// trajectory, and the per-breath audit log.
#[derive(Clone, Debug)]
pub struct Collection {
    pub episodes: Vec<Episode>,
    pub trajectory: Trajectory,
    pub log: Vec<BreathLog>,
}

/// Collect `n_breaths` exploration breaths on the plant. Each breath draws
/// the boundary policy with probability p_a (triangular otherwise), runs the
/// base PID plus the additive schedule, and records the trajectory. A breath
/// that trips the safety ceiling is dropped (plant state restored, time not
/// advanced) and logged; collection continues.
pub fn collect_dataset(
    plant: &mut Plant,
    cfg: &ExplorationConfig,
    wf: &Waveform,
    n_breaths: usize,
    rng: &mut ChaCha8Rng,
    context_len: usize,
) -> Result<Collection> {
    if n_breaths < 1 {
        return Err(VentError::InvalidParameter("n_breaths must be >= 1".into()));
    }
    cfg.validate()?;
    let steps = wf.steps_per_breath();
    let mut samples: Vec<Sample> = Vec::with_capacity(n_breaths * steps);
    let mut log = Vec::with_capacity(n_breaths);
    let mut recorded = 0usize;
    for breath in 0..n_breaths {
        let schedule = if rng.random::<f64>() < cfg.p_a {
            boundary_schedule(rng, cfg)
        } else {
            triangular_schedule(rng, cfg)
        };
        let snapshot = plant.clone();
        let mut ctrl = PerturbedPid {
            pid: PidController::new(cfg.base_pid.clone()),
            schedule,
            breath_start: (recorded * steps) as f64 * wf.dt,
        };
        let before = samples.len();
        let res = run_segment(plant, &mut ctrl, wf, recorded * steps, steps, &mut samples);
        let aborted = res.is_err();
        if aborted {
            match res {
                Err(VentError::SafetyAbort { .. }) => {
                    samples.truncate(before);
                    *plant = snapshot;
                }
                Err(e) => return Err(e),
                Ok(()) => unreachable!(),
            }
        } else {
            recorded += 1;
        }
        log.push(BreathLog {
            breath,
            schedule,
            aborted,
        });
    }
    let trajectory = Trajectory {
        setting: plant.setting.clone(),
        waveform: wf.clone(),
        samples,
    };
    let episodes = if trajectory.samples.is_empty() {
        Vec::new()
    } else {
        episode_split(&trajectory, context_len)?
    };
    Ok(Collection {
        episodes,
        trajectory,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LungSetting, Phase, P_MAX};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn cfg_5_50() -> ExplorationConfig {
        ExplorationConfig::for_setting(5.0, 50.0).unwrap()
    }

    #[test]
    fn table_rows_match_settings() {
        let c = cfg_5_50();
        assert_eq!(c.c_a, (75.0, 100.0));
        assert_eq!(c.t_a, (1.0, 1.5));
        assert_eq!(
            (c.base_pid.kp, c.base_pid.ki, c.base_pid.kd),
            (2.0, 4.0, 0.0)
        );
        let c2 = ExplorationConfig::for_setting(20.0, 20.0).unwrap();
        assert_eq!(c2.c_b, (-20.0, 40.0));
        assert_eq!(c2.t_b, (0.1, 0.5));
        assert_eq!(c2.p_a, 0.25);
        assert!(ExplorationConfig::for_setting(50.0, 10.0).is_none());
    }

    #[test]
    fn boundary_schedule_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = boundary_schedule(&mut rng, &cfg_5_50());
        assert!(s.peak >= 75.0 && s.peak <= 100.0);
        assert!(s.t_end >= 1.0 && s.t_end <= 1.5);
        assert_relative_eq!(s.value(0.0), s.peak);
        assert_relative_eq!(s.value(s.t_end), 0.0);
        assert_eq!(s.value(s.t_end + 0.2), 0.0);
        // Linear midpoint.
        assert_relative_eq!(s.value(s.t_end / 2.0), s.peak / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn triangular_schedule_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ExplorationConfig::for_setting(20.0, 20.0).unwrap();
        let s = triangular_schedule(&mut rng, &cfg);
        assert!(s.peak >= -20.0 && s.peak <= 40.0);
        let (t0, t1) = cfg.t_b;
        assert_eq!(s.value(t0), 0.0);
        assert_eq!(s.value(t1), 0.0);
        assert_relative_eq!(s.value(0.5 * (t0 + t1)), s.peak, max_relative = 1e-12);
        assert_eq!(s.value(t0 - 0.05), 0.0);
        assert_eq!(s.value(t1 + 0.05), 0.0);
    }

    #[test]
    fn schedules_linear_on_support_zero_outside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = cfg_5_50();
        for s in [
            boundary_schedule(&mut rng, &cfg),
            triangular_schedule(&mut rng, &cfg),
        ] {
            assert_eq!(s.value(s.t_start - 0.01), 0.0);
            assert_eq!(s.value(s.t_end + 0.01), 0.0);
            // Piecewise linear within the support: each half is affine, so
            // midpoints of sub-intervals interpolate exactly.
            let mid = 0.5 * (s.t_start + s.t_end);
            for (a, b) in [(s.t_start.max(0.0), mid), (mid, s.t_end)] {
                let (va, vb) = (s.value(a), s.value(b));
                let m = 0.5 * (a + b);
                assert_relative_eq!(
                    s.value(m),
                    0.5 * (va + vb),
                    max_relative = 1e-9,
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn p_a_one_always_boundary() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let mut plant = Plant::rc(ls);
        let mut cfg = cfg_5_50();
        cfg.p_a = 1.0;
        let wf = Waveform::standard(30.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let col = collect_dataset(&mut plant, &cfg, &wf, 20, &mut rng, 5).unwrap();
        assert!(col
            .log
            .iter()
            .all(|l| l.schedule.kind == ScheduleKind::Boundary));
    }

    #[test]
    fn zero_width_perturbation_equals_base_pid() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let wf = Waveform::standard(25.0, 5.0).unwrap();
        let mut cfg = cfg_5_50();
        cfg.c_a = (0.0, 0.0);
        cfg.c_b = (0.0, 0.0);

        let mut plant = Plant::rc(ls.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let col = collect_dataset(&mut plant, &cfg, &wf, 3, &mut rng, 0).unwrap();

        let mut plant2 = Plant::rc(ls);
        let mut pid = PidController::new(cfg.base_pid.clone());
        let base = crate::dynamics::run_breath(&mut plant2, &mut pid, &wf, 3).unwrap();
        assert_eq!(col.trajectory.samples, base.samples);
    }

    #[test]
    fn collection_reproducible() {
        let ls = LungSetting::iso(20.0, 20.0).unwrap();
        let wf = Waveform::standard(20.0, 5.0).unwrap();
        let cfg = ExplorationConfig::for_setting(20.0, 20.0).unwrap();
        let run = |seed| {
            let mut plant = Plant::rc(ls.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            collect_dataset(&mut plant, &cfg, &wf, 30, &mut rng, 5).unwrap()
        };
        let a = run(11);
        let b = run(11);
        assert_eq!(a.trajectory.samples, b.trajectory.samples);
        assert_eq!(a.episodes, b.episodes);
    }

    #[test]
    fn boundary_policy_frequency_approaches_p_a() {
        let ls = LungSetting::iso(5.0, 20.0).unwrap();
        let wf = Waveform::standard(20.0, 5.0).unwrap();
        let cfg = ExplorationConfig::for_setting(5.0, 20.0).unwrap();
        let mut plant = Plant::rc(ls);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let col = collect_dataset(&mut plant, &cfg, &wf, 2000, &mut rng, 0).unwrap();
        let frac = col
            .log
            .iter()
            .filter(|l| l.schedule.kind == ScheduleKind::Boundary)
            .count() as f64
            / col.log.len() as f64;
        assert!((frac - cfg.p_a).abs() < 0.05, "frac = {frac}");
    }

    #[test]
    fn applied_control_stays_in_range_and_under_ceiling() {
        // 500 breaths on (5, 50) with the table row: wide control coverage,
        // pressures under the safety ceiling for every recorded sample.
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let wf = Waveform::standard(35.0, 5.0).unwrap();
        let cfg = cfg_5_50();
        let mut plant = Plant::rc(ls);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let col = collect_dataset(&mut plant, &cfg, &wf, 500, &mut rng, 5).unwrap();
        let mut u_min = f64::INFINITY;
        let mut u_max_seen = f64::NEG_INFINITY;
        for s in &col.trajectory.samples {
            assert!(s.u >= 0.0 && s.u <= U_MAX);
            assert!(s.p <= P_MAX);
            if s.phase == Phase::Inspiratory {
                u_min = u_min.min(s.u);
                u_max_seen = u_max_seen.max(s.u);
            }
        }
        // Exploration spans a wide control range.
        assert!(u_max_seen - u_min > 50.0, "span = {}", u_max_seen - u_min);
        assert!(u_max_seen > 90.0);
        // Most breaths survive.
        let aborted = col.log.iter().filter(|l| l.aborted).count();
        assert!(aborted < 100, "aborted = {aborted}");
    }
}
