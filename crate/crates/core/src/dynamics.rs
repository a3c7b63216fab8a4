//! Ground-truth lung-ventilator plants and the episodic inspiratory abstraction.
//!
//! Two plants are provided: a linear RC model parameterized directly by the
//! ISO resistance/compliance values (the default ground truth), and a
//! nonlinear balloon model used as a transfer stress test. Both expose the
//! same step/vent interface so controllers and data collection are
//! plant-agnostic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Result, VentError};

/// Control ceiling, in control units. PID outputs and exploration
/// perturbations are clamped to [0, U_MAX].
pub const U_MAX: f64 = 100.0;

/// Flow produced by one control unit, L/s. u = 100 commands 2 L/s.
pub const FLOW_SCALE_LPS: f64 = 0.02;

pub const ML_PER_L: f64 = 1000.0;

/// Safety ceiling, cmH2O. Runs abort when lung pressure exceeds this.
pub const P_MAX: f64 = 70.0;

/// mL per cubic arbitrary-length-unit in the balloon radius law, chosen so
/// the default rest radius r0 = 0.24 corresponds to a 300 mL rest volume:
/// 300 / ((4*pi/3) * 0.24^3).
pub const BALLOON_VOLUME_UNIT_ML: f64 = 5180.824970439303;

fn flow_ml_per_s(u: f64) -> f64 {
    u * FLOW_SCALE_LPS * ML_PER_L
}

/// A lung-ventilator plant parameterization: the ISO (R, C) pair plus the
/// latent constants of the balloon physics model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LungSetting {
    /// Airway resistance, cmH2O/(L/s).
    pub r: f64,
    /// Compliance, mL/cmH2O.
    pub c: f64,
    /// Baseline pressure, cmH2O (empty-lung pressure for the RC model,
    /// rest-radius pressure for the balloon model).
    #[serde(default = "default_p0")]
    pub p0: f64,
    /// Rest radius, arbitrary length unit (see [`BALLOON_VOLUME_UNIT_ML`]).
    #[serde(default = "default_r0")]
    pub r0: f64,
    /// Supply pressure behind the inspiratory valve, cmH2O.
    #[serde(default = "default_p_supply")]
    pub p_supply: f64,
    /// Valve resistance scale; R_in = k_valve / d^4.
    #[serde(default = "default_k_valve")]
    pub k_valve: f64,
}

fn default_p0() -> f64 {
    5.0
}
fn default_r0() -> f64 {
    0.24
}
fn default_p_supply() -> f64 {
    60.0
}
// (p_supply - p0) / U_MAX: a fully open valve at baseline pressure commands
// full-scale flow.
fn default_k_valve() -> f64 {
    0.55
}

impl LungSetting {
    pub fn new(r: f64, c: f64) -> Result<Self> {
        let ls = LungSetting {
            r,
            c,
            p0: default_p0(),
            r0: default_r0(),
            p_supply: default_p_supply(),
            k_valve: default_k_valve(),
        };
        ls.validate()?;
        Ok(ls)
    }

    /// ISO-named setting; R must be one of {5, 20, 50} and C one of
    /// {10, 20, 50}.
    pub fn iso(r: f64, c: f64) -> Result<Self> {
        let r_ok = [5.0, 20.0, 50.0].contains(&r);
        let c_ok = [10.0, 20.0, 50.0].contains(&c);
        if !r_ok || !c_ok {
            return Err(VentError::InvalidParameter(format!(
                "not an ISO setting: R={r}, C={c}"
            )));
        }
        Self::new(r, c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r > 0.0
            && self.c > 0.0
            && self.p0 > 0.0
            && self.p_supply > self.p0
            && self.r0 > 0.0
            && self.k_valve > 0.0;
        if ok {
            Ok(())
        } else {
            Err(VentError::InvalidParameter(format!(
                "lung setting violates p_supply > p0 > 0, r0 > 0, k_valve > 0, R > 0, C > 0: {self:?}"
            )))
        }
    }

    /// Expiratory time constant R*C, converted to seconds
    /// (cmH2O/(L/s) * mL/cmH2O = ms-of-liters -> /1000).
    pub fn tau_exp(&self) -> f64 {
        self.r * self.c / ML_PER_L
    }

    pub fn key(&self) -> String {
        format!("R{}C{}", self.r, self.c)
    }
}

/// Target pressure schedule for one breath cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    /// Peak inspiratory pressure, cmH2O.
    pub pip: f64,
    /// Positive-end expiratory pressure, cmH2O.
    pub peep: f64,
    /// Inspiratory duration, s.
    pub t_insp: f64,
    /// Expiratory duration, s.
    pub t_exp: f64,
    /// Timestep, s.
    pub dt: f64,
}

impl Waveform {
    pub fn new(pip: f64, peep: f64, t_insp: f64, t_exp: f64, dt: f64) -> Result<Self> {
        let wf = Waveform {
            pip,
            peep,
            t_insp,
            t_exp,
            dt,
        };
        wf.validate()?;
        Ok(wf)
    }

    /// Default breath timing: 1 s inspiration, 2 s expiration, dt = 0.03 s
    /// (300 steps is three breaths).
    pub fn standard(pip: f64, peep: f64) -> Result<Self> {
        Self::new(pip, peep, 1.0, 2.0, 0.03)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pip > self.peep && self.peep >= 0.0) {
            return Err(VentError::InvalidParameter(format!(
                "waveform requires pip > peep >= 0: pip={}, peep={}",
                self.pip, self.peep
            )));
        }
        if !(self.t_insp > 0.0 && self.t_exp > 0.0 && self.dt > 0.0) {
            return Err(VentError::InvalidParameter(
                "waveform durations and dt must be positive".into(),
            ));
        }
        let steps = (self.t_insp + self.t_exp) / self.dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(VentError::InvalidParameter(format!(
                "breath period {} is not an integer multiple of dt {}",
                self.t_insp + self.t_exp,
                self.dt
            )));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        self.t_insp + self.t_exp
    }

    pub fn steps_per_breath(&self) -> usize {
        (self.period() / self.dt).round() as usize
    }

    /// Number of timesteps per breath that fall in the inspiratory phase.
    pub fn inspiratory_steps(&self) -> usize {
        (0..self.steps_per_breath())
            .filter(|&k| self.phase_at(k as f64 * self.dt) == Phase::Inspiratory)
            .count()
    }

    pub fn phase_at(&self, t: f64) -> Phase {
        if t.rem_euclid(self.period()) < self.t_insp {
            Phase::Inspiratory
        } else {
            Phase::Expiratory
        }
    }

    pub fn target(&self, t: f64) -> f64 {
        match self.phase_at(t) {
            Phase::Inspiratory => self.pip,
            Phase::Expiratory => self.peep,
        }
    }
}

/// Target pressure at time `t`: PIP during inspiration, PEEP during
/// expiration, periodic with period t_insp + t_exp.
pub fn waveform_target(t: f64, wf: &Waveform) -> f64 {
    wf.target(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "in")]
    Inspiratory,
    #[serde(rename = "ex")]
    Expiratory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Lung volume, mL.
    pub v: f64,
    /// Lung pressure, cmH2O.
    pub p: f64,
    /// Elapsed time, s.
    pub t: f64,
    pub phase: Phase,
}

/// Static pressure map of the balloon model: radius from volume, then the
/// two-balloon law. Clamped below at 0.
pub fn balloon_pressure(v: f64, ls: &LungSetting) -> f64 {
    let v_units = v / BALLOON_VOLUME_UNIT_ML;
    let r = (3.0 * v_units / (4.0 * std::f64::consts::PI)).powf(1.0 / 3.0);
    let p = ls.p0 + (1.0 - (ls.r0 / r).powi(6)) / (r * ls.r0 * ls.r0);
    p.max(0.0)
}

/// One step of the balloon plant: volume integrates the commanded flow, then
/// pressure follows from the radius law.
pub fn balloon_step(state: &PlantState, u: f64, dt: f64, ls: &LungSetting) -> Result<PlantState> {
    let v = state.v + flow_ml_per_s(u) * dt;
    if v <= 0.0 {
        return Err(VentError::NonPositiveVolume { v });
    }
    Ok(PlantState {
        v,
        p: balloon_pressure(v, ls),
        t: state.t + dt,
        phase: state.phase,
    })
}

/// Static+resistive pressure map of the RC model while flow u is applied:
/// p = p0 + v/C + R * flow.
pub fn rc_pressure(v: f64, u: f64, ls: &LungSetting) -> f64 {
    (ls.p0 + v / ls.c + ls.r * u * FLOW_SCALE_LPS).max(0.0)
}

/// One step of the linear RC plant.
pub fn rc_step(state: &PlantState, u: f64, dt: f64, ls: &LungSetting) -> Result<PlantState> {
    let v = state.v + flow_ml_per_s(u) * dt;
    if v < 0.0 {
        return Err(VentError::NonPositiveVolume { v });
    }
    Ok(PlantState {
        v,
        p: rc_pressure(v, u, ls),
        t: state.t + dt,
        phase: state.phase,
    })
}

/// Flow through the inspiratory valve at opening `d`, from the supply
/// differential and Poiseuille resistance R_in = k_valve / d^4. Floored at
/// zero: the inspiratory valve cannot produce backflow.
pub fn valve_flow(p_lung: f64, d_opening: f64, ls: &LungSetting) -> f64 {
    let d = d_opening.clamp(0.0, 1.0);
    ((ls.p_supply - p_lung) * d.powi(4) / ls.k_valve).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantModel {
    Rc,
    Balloon,
}

/// A stateful single-owner plant instance with its own seeded RNG for
/// optional sensor noise.
#[derive(Clone, Debug)]
pub struct Plant {
    pub setting: LungSetting,
    pub model: PlantModel,
    state: PlantState,
    noise_sigma: f64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(model: PlantModel, setting: LungSetting) -> Self {
        let state = Self::initial_state(model, &setting);
        Plant {
            setting,
            model,
            state,
            noise_sigma: 0.0,
            seed: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn rc(setting: LungSetting) -> Self {
        Self::new(PlantModel::Rc, setting)
    }

    pub fn balloon(setting: LungSetting) -> Self {
        Self::new(PlantModel::Balloon, setting)
    }

    /// Additive Gaussian sensor noise on observed pressure (off when 0).
    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    fn initial_state(model: PlantModel, ls: &LungSetting) -> PlantState {
        match model {
            // Empty lung: p = p0.
            PlantModel::Rc => PlantState {
                v: 0.0,
                p: ls.p0,
                t: 0.0,
                phase: Phase::Expiratory,
            },
            // Rest radius: p = p0.
            PlantModel::Balloon => PlantState {
                v: BALLOON_VOLUME_UNIT_ML * 4.0 / 3.0 * std::f64::consts::PI * ls.r0.powi(3),
                p: ls.p0,
                t: 0.0,
                phase: Phase::Expiratory,
            },
        }
    }

    pub fn reset(&mut self) {
        self.state = Self::initial_state(self.model, &self.setting);
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    pub fn state(&self) -> PlantState {
        self.state
    }

    pub fn pressure(&self) -> f64 {
        self.state.p
    }

    pub fn volume(&self) -> f64 {
        self.state.v
    }

    /// Observed pressure: true pressure plus sensor noise, floored at 0.
    pub fn observe(&mut self) -> f64 {
        if self.noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.noise_sigma).expect("sigma > 0");
            (self.state.p + n.sample(&mut self.rng)).max(0.0)
        } else {
            self.state.p
        }
    }

    /// Apply control u (control units) for dt seconds during inspiration.
    pub fn apply(&mut self, u: f64, dt: f64) -> Result<()> {
        self.state.phase = Phase::Inspiratory;
        self.state = match self.model {
            PlantModel::Rc => rc_step(&self.state, u, dt, &self.setting)?,
            PlantModel::Balloon => balloon_step(&self.state, u, dt, &self.setting)?,
        };
        Ok(())
    }

    /// Equilibrium volume at which the static pressure equals `peep`.
    fn equilibrium_volume(&self, peep: f64) -> f64 {
        match self.model {
            PlantModel::Rc => (self.setting.c * (peep - self.setting.p0)).max(0.0),
            PlantModel::Balloon => {
                // Bisect the rising branch of the balloon curve,
                // r in (0, 7^(1/6) * r0].
                let ls = &self.setting;
                let rest = BALLOON_VOLUME_UNIT_ML * 4.0 / 3.0 * std::f64::consts::PI
                    * ls.r0.powi(3);
                let v_peak = rest * 7.0f64.powf(0.5); // (7^(1/6))^3 = 7^(1/2)
                if peep <= balloon_pressure(rest * 1e-3, ls) {
                    return rest * 1e-3;
                }
                if peep >= balloon_pressure(v_peak, ls) {
                    return v_peak;
                }
                let (mut lo, mut hi) = (rest * 1e-3, v_peak);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if balloon_pressure(mid, ls) < peep {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Expiratory vent: exponential decay of volume toward the equilibrium
    /// at `peep` with time constant tau, then pressure from the static map.
    pub fn vent(&mut self, dt: f64, peep: f64, tau: f64) {
        let v_eq = self.equilibrium_volume(peep);
        let decay = (-dt / tau).exp();
        let v = v_eq + (self.state.v - v_eq) * decay;
        self.state = PlantState {
            v,
            p: match self.model {
                PlantModel::Rc => rc_pressure(v, 0.0, &self.setting),
                PlantModel::Balloon => balloon_pressure(v, &self.setting),
            },
            t: self.state.t + dt,
            phase: Phase::Expiratory,
        };
    }

    /// Place the plant at the volume whose static pressure is `p` (used to
    /// warm-start open-loop comparisons from a recorded context).
    pub fn set_pressure(&mut self, p: f64) {
        let v = match self.model {
            PlantModel::Rc => (self.setting.c * (p - self.setting.p0)).max(0.0),
            PlantModel::Balloon => self.equilibrium_volume(p),
        };
        self.state.v = v;
        self.state.p = match self.model {
            PlantModel::Rc => rc_pressure(v, 0.0, &self.setting),
            PlantModel::Balloon => balloon_pressure(v, &self.setting),
        };
    }
}

/// Closed-loop controller interface used by the breath runner.
pub trait Controller {
    /// Called at the start of every inspiratory phase.
    fn begin_breath(&mut self);
    /// Control for the step at time `t` given the target and measured
    /// pressure. Must return a value in [0, U_MAX].
    fn control(&mut self, t: f64, target: f64, measured: f64) -> f64;
    /// Full reset (between waveforms / scoring runs).
    fn reset(&mut self);
}

/// Controller that always outputs zero flow.
pub struct ZeroController;

impl Controller for ZeroController {
    fn begin_breath(&mut self) {}
    fn control(&mut self, _t: f64, _target: f64, _measured: f64) -> f64 {
        0.0
    }
    fn reset(&mut self) {}
}

/// Controller that outputs a constant command.
pub struct ConstantController(pub f64);

impl Controller for ConstantController {
    fn begin_breath(&mut self) {}
    fn control(&mut self, _t: f64, _target: f64, _measured: f64) -> f64 {
        self.0.clamp(0.0, U_MAX)
    }
    fn reset(&mut self) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub u: f64,
    pub p: f64,
    pub phase: Phase,
}

/// Time-aligned record of one run: (control, pressure, phase) samples at a
/// uniform timestep, plus the plant setting and waveform that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub setting: LungSetting,
    pub waveform: Waveform,
    pub samples: Vec<Sample>,
}

/// Advance the plant through steps [step0, step0 + n_steps), appending
/// samples. The controller runs during inspiration; expiration vents with
/// the fixed exponential decay. Aborts when pressure exceeds [`P_MAX`].
pub(crate) fn run_segment(
    plant: &mut Plant,
    ctrl: &mut dyn Controller,
    wf: &Waveform,
    step0: usize,
    n_steps: usize,
    out: &mut Vec<Sample>,
) -> Result<()> {
    let tau = plant.setting.tau_exp();
    let mut prev_phase = if step0 == 0 {
        Phase::Expiratory
    } else {
        wf.phase_at((step0 as f64 - 1.0) * wf.dt)
    };
    for k in step0..step0 + n_steps {
        let t = k as f64 * wf.dt;
        let phase = wf.phase_at(t);
        if phase == Phase::Inspiratory && prev_phase == Phase::Expiratory {
            ctrl.begin_breath();
        }
        prev_phase = phase;
        let p = plant.observe();
        let u = match phase {
            Phase::Inspiratory => ctrl.control(t, wf.target(t), p).clamp(0.0, U_MAX),
            Phase::Expiratory => 0.0,
        };
        out.push(Sample { t, u, p, phase });
        match phase {
            Phase::Inspiratory => plant.apply(u, wf.dt)?,
            Phase::Expiratory => plant.vent(wf.dt, wf.peep, tau),
        }
        if plant.pressure() > P_MAX {
            return Err(VentError::SafetyAbort {
                t: t + wf.dt,
                p: plant.pressure(),
                p_max: P_MAX,
            });
        }
    }
    Ok(())
}

/// Run `n_breaths` full breath cycles under the given controller.
pub fn run_breath(
    plant: &mut Plant,
    ctrl: &mut dyn Controller,
    wf: &Waveform,
    n_breaths: usize,
) -> Result<Trajectory> {
    if n_breaths < 1 {
        return Err(VentError::InvalidParameter("n_breaths must be >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n_breaths * wf.steps_per_breath());
    run_segment(
        plant,
        ctrl,
        wf,
        0,
        n_breaths * wf.steps_per_breath(),
        &mut samples,
    )?;
    Ok(Trajectory {
        setting: plant.setting.clone(),
        waveform: wf.clone(),
        samples,
    })
}

/// One inspiratory phase extracted from a trajectory: pressures/controls of
/// the inspiratory samples, plus up to `context_len` pressures immediately
/// preceding the phase as warm-start context (oldest first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub pressures: Vec<f64>,
    pub controls: Vec<f64>,
    pub context: Vec<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.pressures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pressures.is_empty()
    }

    /// Pressure at episode start (the first inspiratory sample).
    pub fn start_pressure(&self) -> f64 {
        self.pressures[0]
    }
}

/// Split a trajectory into its maximal contiguous inspiratory runs.
/// Expiratory samples are discarded except as warm-start context.
pub fn episode_split(traj: &Trajectory, context_len: usize) -> Result<Vec<Episode>> {
    if traj.samples.is_empty() {
        return Err(VentError::EmptyTrajectory);
    }
    let mut episodes = Vec::new();
    let mut i = 0;
    let n = traj.samples.len();
    while i < n {
        if traj.samples[i].phase == Phase::Inspiratory {
            let start = i;
            while i < n && traj.samples[i].phase == Phase::Inspiratory {
                i += 1;
            }
            let context = traj.samples[start.saturating_sub(context_len)..start]
                .iter()
                .map(|s| s.p)
                .collect();
            episodes.push(Episode {
                pressures: traj.samples[start..i].iter().map(|s| s.p).collect(),
                controls: traj.samples[start..i].iter().map(|s| s.u).collect(),
                context,
            });
        } else {
            i += 1;
        }
    }
    Ok(episodes)
}

/// Mean per-step L1 deviation of inspiratory samples from the waveform
/// target, skipping the first `skip_breaths` breaths.
pub fn mean_inspiratory_l1(traj: &Trajectory, skip_breaths: usize) -> f64 {
    let wf = &traj.waveform;
    let period = wf.period();
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in &traj.samples {
        if s.phase != Phase::Inspiratory {
            continue;
        }
        let breath = (s.t / period).floor() as usize;
        if breath < skip_breaths {
            continue;
        }
        sum += (s.p - wf.target(s.t)).abs();
        count += 1;
    }
    if count == 0 {
        f64::INFINITY
    } else {
        sum / count as f64
    }
}

/// Tracking score of a controller on a plant: for each waveform, run
/// `n_breaths` breaths on a fresh copy of the plant, take the mean
/// inspiratory L1 deviation skipping the first `skip_breaths` breaths, then
/// average across waveforms. A safety abort scores infinite.
pub fn score_tracking(
    ctrl: &mut dyn Controller,
    plant: &Plant,
    waveforms: &[Waveform],
    n_breaths: usize,
    skip_breaths: usize,
) -> f64 {
    let mut total = 0.0;
    for wf in waveforms {
        let mut p = plant.clone();
        p.reset();
        ctrl.reset();
        match run_breath(&mut p, ctrl, wf, n_breaths) {
            Ok(traj) => total += mean_inspiratory_l1(&traj, skip_breaths),
            Err(_) => return f64::INFINITY,
        }
    }
    total / waveforms.len() as f64
}

/// Header line of a trajectory JSONL file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub setting: LungSetting,
    pub waveform: Waveform,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// Free-form metadata (e.g. per-breath exploration policy audit trail).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub meta: Option<serde_json::Value>,
}

/// Write a trajectory as JSON-lines: one header line, then one sample per
/// line as {"t": .., "u": .., "p": .., "phase": "in"|"ex"}.
pub fn write_trajectory_jsonl(
    path: &Path,
    traj: &Trajectory,
    seed: Option<u64>,
    meta: Option<serde_json::Value>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let header = TrajectoryHeader {
        setting: traj.setting.clone(),
        waveform: traj.waveform.clone(),
        seed,
        meta,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in &traj.samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl(path: &Path) -> Result<(Trajectory, TrajectoryHeader)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let header_line = lines
        .next()
        .ok_or(VentError::EmptyTrajectory)??;
    let header: TrajectoryHeader = serde_json::from_str(&header_line)?;
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line)?);
    }
    Ok((
        Trajectory {
            setting: header.setting.clone(),
            waveform: header.waveform.clone(),
            samples,
        },
        header,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn wf_std(pip: f64) -> Waveform {
        Waveform::standard(pip, 5.0).unwrap()
    }

    #[test]
    fn waveform_target_examples() {
        let wf = Waveform::new(35.0, 5.0, 1.0, 2.0, 0.03).unwrap();
        assert_eq!(waveform_target(0.0, &wf), 35.0);
        assert_eq!(waveform_target(1.5, &wf), 5.0);
        assert_eq!(waveform_target(3.0, &wf), 35.0);
    }

    #[test]
    fn waveform_rejects_bad_period() {
        assert!(Waveform::new(35.0, 5.0, 1.0, 2.0, 0.07).is_err());
        assert!(Waveform::new(5.0, 5.0, 1.0, 2.0, 0.03).is_err());
    }

    #[test]
    fn balloon_rest_radius_is_fixed_point() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        // Volume at rest radius.
        let v_rest = BALLOON_VOLUME_UNIT_ML * 4.0 / 3.0 * std::f64::consts::PI * ls.r0.powi(3);
        assert_relative_eq!(v_rest, 300.0, max_relative = 1e-12);
        assert_relative_eq!(balloon_pressure(v_rest, &ls), ls.p0, max_relative = 1e-12);
    }

    #[test]
    fn balloon_step_zero_flow_identity() {
        let ls = LungSetting::iso(20.0, 20.0).unwrap();
        let s = PlantState {
            v: 400.0,
            p: balloon_pressure(400.0, &ls),
            t: 0.0,
            phase: Phase::Inspiratory,
        };
        let s2 = balloon_step(&s, 0.0, 0.03, &ls).unwrap();
        assert_eq!(s2.v, s.v);
        assert_eq!(s2.p, s.p);
        assert_relative_eq!(s2.t, 0.03);
    }

    #[test]
    fn balloon_step_matches_direct_formula() {
        // Oracle (independent arithmetic): v' = 400 + 20 * 20 * 0.03 = 412 mL,
        // r' = (3*(412/5180.824970439303)/(4*pi))^(1/3), p' = 5 + (1 - (0.24/r')^6)/(r' * 0.24^2).
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let s = PlantState {
            v: 400.0,
            p: 0.0,
            t: 0.0,
            phase: Phase::Inspiratory,
        };
        let s2 = balloon_step(&s, 20.0, 0.03, &ls).unwrap();
        assert_relative_eq!(s2.v, 412.0, max_relative = 1e-12);
        assert_relative_eq!(s2.p, 35.573456341588766, max_relative = 1e-10);
    }

    #[test]
    fn balloon_overdrain_errors() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let s = PlantState {
            v: 1.0,
            p: 0.0,
            t: 0.0,
            phase: Phase::Expiratory,
        };
        assert!(matches!(
            balloon_step(&s, -10.0, 0.03, &ls),
            Err(VentError::NonPositiveVolume { .. })
        ));
    }

    #[test]
    fn rc_step_empty_lung_no_flow() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let s = PlantState {
            v: 0.0,
            p: 0.0,
            t: 0.0,
            phase: Phase::Expiratory,
        };
        let s2 = rc_step(&s, 0.0, 0.03, &ls).unwrap();
        assert_eq!(s2.p, ls.p0);
        assert_eq!(s2.v, 0.0);
    }

    #[test]
    fn rc_step_matches_direct_formula() {
        // Oracle: v' = 500 + 30*20*0.03 = 518; p' = 5 + 518/50 + 5*30*0.02 = 18.36.
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let s = PlantState {
            v: 500.0,
            p: 0.0,
            t: 0.0,
            phase: Phase::Inspiratory,
        };
        let s2 = rc_step(&s, 30.0, 0.03, &ls).unwrap();
        assert_relative_eq!(s2.v, 518.0, max_relative = 1e-12);
        assert_relative_eq!(s2.p, 18.36, max_relative = 1e-12);
    }

    #[test]
    fn rc_resistive_term_linear_in_u() {
        let ls = LungSetting::iso(20.0, 10.0).unwrap();
        let base = rc_pressure(250.0, 0.0, &ls);
        let p1 = rc_pressure(250.0, 10.0, &ls) - base;
        let p2 = rc_pressure(250.0, 20.0, &ls) - base;
        assert_relative_eq!(p2, 2.0 * p1, max_relative = 1e-12);
    }

    #[test]
    fn valve_flow_examples() {
        let mut ls = LungSetting::iso(5.0, 50.0).unwrap();
        ls.k_valve = 1.0;
        assert_eq!(valve_flow(20.0, 0.0, &ls), 0.0);
        assert_eq!(valve_flow(ls.p_supply, 0.7, &ls), 0.0);
        assert_relative_eq!(
            valve_flow(20.0, 0.5, &ls),
            2.5,
            max_relative = 1e-12
        );
        // Backflow floor.
        assert_eq!(valve_flow(ls.p_supply + 10.0, 1.0, &ls), 0.0);
    }

    #[test]
    fn run_breath_zero_controller_stays_at_baseline() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let mut plant = Plant::rc(ls);
        let wf = wf_std(35.0);
        let traj = run_breath(&mut plant, &mut ZeroController, &wf, 1).unwrap();
        for s in &traj.samples {
            assert_relative_eq!(s.p, 5.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn run_breath_constant_u_monotone_inspiration() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let mut plant = Plant::rc(ls);
        let wf = wf_std(35.0);
        let traj = run_breath(&mut plant, &mut ConstantController(20.0), &wf, 1).unwrap();
        let insp: Vec<f64> = traj
            .samples
            .iter()
            .filter(|s| s.phase == Phase::Inspiratory)
            .map(|s| s.p)
            .collect();
        for w in insp.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn run_breath_aborts_above_ceiling() {
        let ls = LungSetting::iso(20.0, 10.0).unwrap();
        let mut plant = Plant::rc(ls);
        let wf = wf_std(35.0);
        let err = run_breath(&mut plant, &mut ConstantController(100.0), &wf, 1).unwrap_err();
        assert!(matches!(err, VentError::SafetyAbort { .. }));
    }

    #[test]
    fn episode_split_counts() {
        let ls = LungSetting::iso(5.0, 20.0).unwrap();
        let mut plant = Plant::rc(ls);
        let wf = wf_std(30.0);
        let traj = run_breath(&mut plant, &mut ConstantController(10.0), &wf, 3).unwrap();
        assert_eq!(traj.samples.len(), 300);
        let eps = episode_split(&traj, 5).unwrap();
        assert_eq!(eps.len(), 3);
        for e in &eps {
            assert_eq!(e.len(), 34);
        }
        // First episode has no preceding samples; later ones carry context.
        assert!(eps[0].context.is_empty());
        assert_eq!(eps[1].context.len(), 5);
        // Concatenated episode lengths equal total inspiratory sample count.
        let total: usize = eps.iter().map(|e| e.len()).sum();
        let insp = traj
            .samples
            .iter()
            .filter(|s| s.phase == Phase::Inspiratory)
            .count();
        assert_eq!(total, insp);
    }

    #[test]
    fn episode_split_all_expiratory_is_empty() {
        let ls = LungSetting::iso(5.0, 20.0).unwrap();
        let wf = wf_std(30.0);
        let traj = Trajectory {
            setting: ls,
            waveform: wf,
            samples: vec![
                Sample {
                    t: 0.0,
                    u: 0.0,
                    p: 5.0,
                    phase: Phase::Expiratory,
                },
                Sample {
                    t: 0.03,
                    u: 0.0,
                    p: 5.0,
                    phase: Phase::Expiratory,
                },
            ],
        };
        assert!(episode_split(&traj, 3).unwrap().is_empty());
    }

    #[test]
    fn episode_split_empty_trajectory_errors() {
        let ls = LungSetting::iso(5.0, 20.0).unwrap();
        let wf = wf_std(30.0);
        let traj = Trajectory {
            setting: ls,
            waveform: wf,
            samples: vec![],
        };
        assert!(matches!(
            episode_split(&traj, 3),
            Err(VentError::EmptyTrajectory)
        ));
    }

    #[test]
    fn trajectory_jsonl_round_trip() {
        let ls = LungSetting::iso(20.0, 20.0).unwrap();
        let mut plant = Plant::rc(ls);
        let wf = wf_std(25.0);
        let traj = run_breath(&mut plant, &mut ConstantController(15.0), &wf, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");
        write_trajectory_jsonl(&path, &traj, Some(7), None).unwrap();
        let (back, header) = read_trajectory_jsonl(&path).unwrap();
        assert_eq!(back, traj);
        assert_eq!(header.seed, Some(7));
    }

    #[test]
    fn run_breath_reproducible_with_noise() {
        let ls = LungSetting::iso(5.0, 50.0).unwrap();
        let wf = wf_std(30.0);
        let mut a = Plant::rc(ls.clone()).with_noise(0.05, 42);
        let mut b = Plant::rc(ls).with_noise(0.05, 42);
        let ta = run_breath(&mut a, &mut ConstantController(20.0), &wf, 2).unwrap();
        let tb = run_breath(&mut b, &mut ConstantController(20.0), &wf, 2).unwrap();
        assert_eq!(ta, tb);
    }

    proptest! {
        #[test]
        fn balloon_zero_flow_is_identity(v in 50.0f64..2000.0) {
            let ls = LungSetting::iso(5.0, 50.0).unwrap();
            let s = PlantState { v, p: balloon_pressure(v, &ls), t: 0.0, phase: Phase::Inspiratory };
            let s2 = balloon_step(&s, 0.0, 0.03, &ls).unwrap();
            prop_assert_eq!(s2.v, s.v);
            prop_assert_eq!(s2.p, s.p);
        }

        #[test]
        fn balloon_volume_update_linear(v in 100.0f64..1500.0, u in 0.0f64..100.0) {
            let ls = LungSetting::iso(20.0, 20.0).unwrap();
            let s = PlantState { v, p: 0.0, t: 0.0, phase: Phase::Inspiratory };
            let whole = balloon_step(&s, u, 0.03, &ls).unwrap();
            let half = balloon_step(&s, u, 0.015, &ls).unwrap();
            let two = balloon_step(&half, u, 0.015, &ls).unwrap();
            prop_assert!((whole.v - two.v).abs() < 1e-9);
        }

        #[test]
        fn rc_pressure_affine_coefficients(v in 0.0f64..1500.0, u in 0.0f64..100.0) {
            let ls = LungSetting::iso(20.0, 50.0).unwrap();
            // Finite differences recover 1/C (per mL) and R (per L/s).
            let h = 1.0;
            let dv = (rc_pressure(v + h, u, &ls) - rc_pressure(v, u, &ls)) / h;
            prop_assert!((dv - 1.0 / ls.c).abs() < 1e-9);
            let du = (rc_pressure(v, u + h, &ls) - rc_pressure(v, u, &ls)) / h;
            prop_assert!((du - ls.r * FLOW_SCALE_LPS).abs() < 1e-9);
        }

        #[test]
        fn waveform_periodic_two_values(t in 0.0f64..30.0) {
            let wf = Waveform::new(30.0, 5.0, 1.0, 2.0, 0.03).unwrap();
            let v = waveform_target(t, &wf);
            prop_assert!(v == 30.0 || v == 5.0);
            prop_assert_eq!(waveform_target(t + wf.period(), &wf), v);
        }
    }
}
