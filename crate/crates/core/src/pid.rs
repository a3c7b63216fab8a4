//! PID control law and exhaustive grid-search tuning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{score_tracking, Controller, Plant, Waveform, U_MAX};
use crate::error::{Result, VentError};

/// The 20 grid values searched per coefficient.
pub const GRID_VALUES: [f64; 20] = [
    0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0,
    9.0, 10.0,
];

/// Best (P, I, D) per ISO setting as reported on the physical test lung.
/// Kept as a reference baseline; the grid search re-tunes on the local plant.
pub const REFERENCE_BEST_PID: [((f64, f64), (f64, f64, f64)); 6] = [
    ((5.0, 10.0), (10.0, 0.2, 0.0)),
    ((5.0, 20.0), (10.0, 10.0, 0.0)),
    ((5.0, 50.0), (10.0, 10.0, 0.0)),
    ((20.0, 10.0), (8.0, 1.0, 0.0)),
    ((20.0, 20.0), (5.0, 10.0, 0.0)),
    ((20.0, 50.0), (5.0, 10.0, 0.0)),
];

pub fn reference_best_pid(r: f64, c: f64) -> Option<PidCoefficients> {
    REFERENCE_BEST_PID
        .iter()
        .find(|((rr, cc), _)| *rr == r && *cc == c)
        .map(|(_, (kp, ki, kd))| PidCoefficients::new(*kp, *ki, *kd))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidCoefficients {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// History window for the integral sum; `None` sums the whole episode so
    /// far (the history is cleared at each inspiration start either way).
    #[serde(default)]
    pub window: Option<usize>,
}

impl PidCoefficients {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        PidCoefficients {
            kp,
            ki,
            kd,
            window: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kp >= 0.0 && self.ki >= 0.0 && self.kd >= 0.0 {
            Ok(())
        } else {
            Err(VentError::InvalidParameter(format!(
                "PID gains must be non-negative: {self:?}"
            )))
        }
    }
}

/// Error history of a PID controller within the current episode.
#[derive(Clone, Debug, Default)]
pub struct PidState {
    errors: Vec<f64>,
}

impl PidState {
    pub fn new() -> Self {
        PidState { errors: Vec::new() }
    }

    /// Clear the history (anti-windup at inspiration start).
    pub fn reset(&mut self) {
        self.errors.clear();
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// Scale every stored error (used by linearity checks).
    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.errors {
            *e *= factor;
        }
    }
}

/// PID output before clamping: kp*e + ki*sum(window) + kd*(e - e_prev).
/// Pushes the new error into the state.
pub fn pid_control_raw(
    state: &mut PidState,
    target: f64,
    measured: f64,
    c: &PidCoefficients,
) -> f64 {
    let e = target - measured;
    let e_prev = state.errors.last().copied().unwrap_or(0.0);
    state.errors.push(e);
    let take = match c.window {
        Some(k) => (k + 1).min(state.errors.len()),
        None => state.errors.len(),
    };
    let sum: f64 = state.errors[state.errors.len() - take..].iter().sum();
    c.kp * e + c.ki * sum + c.kd * (e - e_prev)
}

/// PID control law, clamped to [0, U_MAX].
pub fn pid_control(state: &mut PidState, target: f64, measured: f64, c: &PidCoefficients) -> f64 {
    pid_control_raw(state, target, measured, c).clamp(0.0, U_MAX)
}

/// A PID controller usable with the breath runner.
#[derive(Clone, Debug)]
pub struct PidController {
    pub coeffs: PidCoefficients,
    pub state: PidState,
}

impl PidController {
    pub fn new(coeffs: PidCoefficients) -> Self {
        PidController {
            coeffs,
            state: PidState::new(),
        }
    }
}

impl Controller for PidController {
    fn begin_breath(&mut self) {
        self.state.reset();
    }

    fn control(&mut self, _t: f64, target: f64, measured: f64) -> f64 {
        pid_control(&mut self.state, target, measured, &self.coeffs)
    }

    fn reset(&mut self) {
        self.state.reset();
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub values: Vec<f64>,
    /// When false (default) D is fixed to 0 and the search covers P x I.
    #[serde(default)]
    pub include_d: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            values: GRID_VALUES.to_vec(),
            include_d: false,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let ds: &[f64] = if self.include_d { &self.values } else { &[0.0] };
        let mut pts = Vec::with_capacity(self.values.len() * self.values.len() * ds.len());
        for &kp in &self.values {
            for &ki in &self.values {
                for &kd in ds {
                    pts.push((kp, ki, kd));
                }
            }
        }
        pts
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridEntry {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub per_waveform: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: PidCoefficients,
    pub best_score: f64,
    pub table: Vec<GridEntry>,
}

impl GridSearchResult {
    /// CSV rows: kp,ki,kd,<one score column per waveform>,mean.
    pub fn table_csv(&self, waveforms: &[Waveform]) -> String {
        let mut s = String::from("kp,ki,kd");
        for wf in waveforms {
            s.push_str(&format!(",pip{}", wf.pip));
        }
        s.push_str(",mean\n");
        for e in &self.table {
            s.push_str(&format!("{},{},{}", e.kp, e.ki, e.kd));
            for v in &e.per_waveform {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(&format!(",{}\n", e.mean));
        }
        s
    }
}

fn eval_point(plant: &Plant, point: (f64, f64, f64), waveforms: &[Waveform]) -> GridEntry {
    let coeffs = PidCoefficients::new(point.0, point.1, point.2);
    let mut per_waveform = Vec::with_capacity(waveforms.len());
    for wf in waveforms {
        let mut ctrl = PidController::new(coeffs.clone());
        let score = score_tracking(&mut ctrl, plant, std::slice::from_ref(wf), 3, 1);
        per_waveform.push(score);
    }
    let mean = per_waveform.iter().sum::<f64>() / per_waveform.len() as f64;
    GridEntry {
        kp: point.0,
        ki: point.1,
        kd: point.2,
        per_waveform,
        mean,
    }
}

/// Exhaustive grid search: every (kp, ki, kd) point is scored with 3 breaths
/// per waveform (first breath ignored); returns the argmin with ties broken
/// by lexicographically smallest coefficients. Safety aborts score infinite.
pub fn grid_search(
    plant: &Plant,
    grid: &GridSpec,
    waveforms: &[Waveform],
) -> Result<GridSearchResult> {
    if grid.values.is_empty() {
        return Err(VentError::InvalidParameter("empty grid".into()));
    }
    if waveforms.is_empty() {
        return Err(VentError::InvalidParameter("no waveforms".into()));
    }
    let points = grid.points();
    let table: Vec<GridEntry> = points
        .par_iter()
        .map(|&pt| eval_point(plant, pt, waveforms))
        .collect();
    let mut best_idx = 0;
    for (i, e) in table.iter().enumerate() {
        let b = &table[best_idx];
        let better = e.mean < b.mean
            || (e.mean == b.mean && (e.kp, e.ki, e.kd) < (b.kp, b.ki, b.kd));
        if better {
            best_idx = i;
        }
    }
    let b = &table[best_idx];
    Ok(GridSearchResult {
        best: PidCoefficients::new(b.kp, b.ki, b.kd),
        best_score: b.mean,
        table,
    })
}
