//! Learned data-driven simulator of inspiratory dynamics.
//!
//! The simulator predicts the next pressure from fixed-length histories of
//! pressures and controls. A handful of boundary networks specialize the
//! first step(s) of an episode, where zero-padded histories make the input
//! distribution atypical; a general network covers the rest. Rollouts feed
//! predictions back autoregressively and are differentiable end to end.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Episode, Plant, U_MAX};
use crate::error::{Result, VentError};
use crate::nnet::{cosine_lr, Mlp, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimFeaturization {
    /// Pressure history length, steps.
    pub h_p: usize,
    /// Control history length, steps.
    pub h_c: usize,
}

impl SimFeaturization {
    pub fn new(h_p: usize, h_c: usize) -> Result<Self> {
        if h_p < 1 || h_c < 1 {
            return Err(VentError::InvalidParameter(
                "history lengths must be >= 1".into(),
            ));
        }
        Ok(SimFeaturization { h_p, h_c })
    }

    pub fn input_dim(&self) -> usize {
        self.h_p + self.h_c
    }
}

/// Per-feature standardization statistics plus target standardization,
/// estimated from training data. Zero-variance features keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub t_mean: f64,
    pub t_scale: f64,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            t_mean: 0.0,
            t_scale: 1.0,
        }
    }
}

/// Simulator architecture: network depth/width, history lengths, and the
/// number of boundary models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimArch {
    pub depth: usize,
    pub width: usize,
    pub h_p: usize,
    pub h_c: usize,
    pub n_b: usize,
}

/// Architecture-search winners per ISO setting (d, N_B, H_p, W, H_c).
pub const ARCH_TABLE: [((f64, f64), SimArch); 6] = [
    ((5.0, 10.0), SimArch { depth: 9, width: 150, h_p: 5, h_c: 10, n_b: 1 }),
    ((5.0, 20.0), SimArch { depth: 6, width: 100, h_p: 5, h_c: 5, n_b: 1 }),
    ((5.0, 50.0), SimArch { depth: 6, width: 150, h_p: 10, h_c: 10, n_b: 1 }),
    ((20.0, 10.0), SimArch { depth: 9, width: 100, h_p: 10, h_c: 10, n_b: 1 }),
    ((20.0, 20.0), SimArch { depth: 9, width: 150, h_p: 10, h_c: 10, n_b: 1 }),
    ((20.0, 50.0), SimArch { depth: 9, width: 150, h_p: 10, h_c: 10, n_b: 1 }),
];

impl SimArch {
    pub fn for_setting(r: f64, c: f64) -> Option<SimArch> {
        ARCH_TABLE
            .iter()
            .find(|((rr, cc), _)| *rr == r && *cc == c)
            .map(|(_, a)| *a)
    }

    /// Small architecture that trains quickly on the desk-scale plants.
    pub fn compact() -> SimArch {
        SimArch {
            depth: 2,
            width: 48,
            h_p: 5,
            h_c: 5,
            n_b: 1,
        }
    }

    pub fn featurization(&self) -> SimFeaturization {
        SimFeaturization {
            h_p: self.h_p,
            h_c: self.h_c,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimTrainHyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for SimTrainHyper {
    fn default() -> Self {
        SimTrainHyper {
            epochs: 200,
            batch: 64,
            lr0: 0.1,
            weight_decay: 1e-5,
            holdout_frac: 0.2,
            seed: 0,
        }
    }
}

/// Regression data for one sub-model: raw (unnormalized) input windows and
/// next-pressure targets.
#[derive(Clone, Debug, Default)]
pub struct RegressionSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl RegressionSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Concatenated, normalized input vector: pressures oldest to newest, then
/// controls oldest to newest. Histories must already be padded to the fixed
/// lengths the stats were computed for.
pub fn featurize(pressures: &[f64], controls: &[f64], norm: &NormStats) -> Vec<f64> {
    debug_assert_eq!(pressures.len() + controls.len(), norm.mean.len());
    pressures
        .iter()
        .chain(controls.iter())
        .enumerate()
        .map(|(j, &v)| (v - norm.mean[j]) / norm.scale[j])
        .collect()
}

/// Raw input window for the transition out of step `t` of an episode:
/// pressures p[t-H_p+1 ..= t] and controls u[t-H_c+1 ..= t], zero-padded
/// before the episode start.
fn raw_window(feat: &SimFeaturization, pressures: &[f64], controls: &[f64], t: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(feat.input_dim());
    for j in 0..feat.h_p {
        let idx = t as isize - (feat.h_p - 1 - j) as isize;
        w.push(if idx < 0 { 0.0 } else { pressures[idx as usize] });
    }
    for j in 0..feat.h_c {
        let idx = t as isize - (feat.h_c - 1 - j) as isize;
        w.push(if idx < 0 { 0.0 } else { controls[idx as usize] });
    }
    w
}

/// Build per-model regression sets. Set i < n_b holds the transition into
/// step i+1 of every episode; the final set is the general model's and holds
/// all remaining transitions. Episodes shorter than n_b + 1 contribute only
/// to the boundary sets they can.
pub fn build_regression_sets(
    episodes: &[Episode],
    feat: &SimFeaturization,
    n_b: usize,
) -> Result<Vec<RegressionSet>> {
    if episodes.is_empty() {
        return Err(VentError::DegenerateData("no episodes".into()));
    }
    let mut sets = vec![RegressionSet::default(); n_b + 1];
    for ep in episodes {
        if ep.len() < 2 {
            continue;
        }
        for t in 0..ep.len() - 1 {
            let set_idx = t.min(n_b);
            sets[set_idx]
                .inputs
                .push(raw_window(feat, &ep.pressures, &ep.controls, t));
            sets[set_idx].targets.push(ep.pressures[t + 1]);
        }
    }
    if sets[n_b].is_empty() {
        return Err(VentError::EpisodeTooShort { min_len: n_b + 1 });
    }
    Ok(sets)
}

/// Standardization statistics over every input window and target in the
/// given sets. Constant features fall back to scale 1.
pub fn compute_norm(sets: &[RegressionSet], dim: usize) -> NormStats {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    let mut t_mean = 0.0;
    for s in sets {
        for (x, y) in s.inputs.iter().zip(&s.targets) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
            t_mean += y;
            n += 1;
        }
    }
    let n_f = (n.max(1)) as f64;
    for m in &mut mean {
        *m /= n_f;
    }
    t_mean /= n_f;
    let mut var = vec![0.0; dim];
    let mut t_var = 0.0;
    for s in sets {
        for (x, y) in s.inputs.iter().zip(&s.targets) {
            for (vv, (v, m)) in var.iter_mut().zip(x.iter().zip(&mean)) {
                let d = v - m;
                *vv += d * d;
            }
            let d = y - t_mean;
            t_var += d * d;
        }
    }
    let floor = |v: f64| {
        let s = (v / n_f).sqrt();
        if s > 1e-12 {
            s
        } else {
            1.0
        }
    };
    NormStats {
        mean,
        scale: var.into_iter().map(floor).collect(),
        t_mean,
        t_scale: floor(t_var),
    }
}

/// Trained simulator for one lung setting: boundary networks for the first
/// n_b steps of an episode plus a general network, with the featurization
/// and normalization used at training time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulatorModel {
    pub feat: SimFeaturization,
    pub boundary: Vec<Mlp>,
    pub general: Mlp,
    pub norm: NormStats,
    /// Lung-setting key this model was trained for ("R{r}C{c}").
    pub setting_key: String,
}

impl SimulatorModel {
    pub fn n_b(&self) -> usize {
        self.boundary.len()
    }

    pub fn net_for_step(&self, t: usize) -> &Mlp {
        if t < self.boundary.len() {
            &self.boundary[t]
        } else {
            &self.general
        }
    }

    /// Predict the pressure after step `t` given all pressures `ps[0..=t]`
    /// and controls `us[0..=t]` of the episode so far.
    pub fn step_forward(&self, ps: &[f64], us: &[f64], t: usize) -> Result<(f64, Tape)> {
        let raw = raw_window(&self.feat, ps, us, t);
        let x = featurize(&raw[..self.feat.h_p], &raw[self.feat.h_p..], &self.norm);
        let (y, tape) = self.net_for_step(t).forward(&x)?;
        Ok((y[0] * self.norm.t_scale + self.norm.t_mean, tape))
    }

    /// Reverse step: scatter the gradient of the step-t prediction into
    /// accumulators over absolute pressure indices (dp[0..=t]) and control
    /// indices (du[0..=t]). Zero-padded positions are dropped.
    pub fn step_backward(
        &self,
        t: usize,
        tape: &Tape,
        dpred: f64,
        dp: &mut [f64],
        du: &mut [f64],
    ) -> Result<()> {
        let dz = dpred * self.norm.t_scale;
        let (dx, _) = self.net_for_step(t).backward(tape, &[dz])?;
        for j in 0..self.feat.h_p {
            let idx = t as isize - (self.feat.h_p - 1 - j) as isize;
            if idx >= 0 {
                dp[idx as usize] += dx[j] / self.norm.scale[j];
            }
        }
        for j in 0..self.feat.h_c {
            let idx = t as isize - (self.feat.h_c - 1 - j) as isize;
            if idx >= 0 {
                let col = self.feat.h_p + j;
                du[idx as usize] += dx[col] / self.norm.scale[col];
            }
        }
        Ok(())
    }
}

/// Dispatches per-setting simulators by their lung-setting key.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MetaSimulator {
    pub models: Vec<SimulatorModel>,
}

impl MetaSimulator {
    pub fn for_setting(&self, r: f64, c: f64) -> Option<&SimulatorModel> {
        let key = format!("R{r}C{c}");
        self.models.iter().find(|m| m.setting_key == key)
    }
}

/// Result of a simulator training run.
#[derive(Clone, Debug)]
pub struct SimTraining {
    pub model: SimulatorModel,
    pub train_indices: Vec<usize>,
    pub heldout_indices: Vec<usize>,
    pub heldout: Vec<Episode>,
    /// Mean squared error (normalized targets) per epoch over all sub-models.
    pub epoch_losses: Vec<f64>,
}

fn train_net_on_set(
    net: &mut Mlp,
    xs: &Array2<f64>,
    ys: &Array1<f64>,
    hyper: &SimTrainHyper,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = ys.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        let lr = cosine_lr(hyper.lr0, epoch, hyper.epochs);
        let mut sq_sum = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + hyper.batch).min(n);
            let idx = &order[start..end];
            let mut xb = Array2::zeros((idx.len(), xs.ncols()));
            let mut yb = Array1::zeros(idx.len());
            for (row, &i) in idx.iter().enumerate() {
                xb.row_mut(row).assign(&xs.row(i));
                yb[row] = ys[i];
            }
            let (pred, tape) = net.forward_batch(&xb).expect("shapes fixed");
            let resid = &pred.column(0).to_owned() - &yb;
            sq_sum += resid.iter().map(|r| r * r).sum::<f64>();
            let scale = 2.0 / idx.len() as f64;
            let dy = resid.mapv(|r| r * scale).insert_axis(ndarray::Axis(1));
            let (_, grads) = net.backward_batch(&tape, &dy).expect("shapes fixed");
            net.sgd_step(&grads, lr, hyper.weight_decay);
            start = end;
        }
        losses.push(sq_sum / n as f64);
    }
    losses
}

/// Train a simulator: split episodes 80/20 train/held-out, fit normalization
/// on the training transitions, then fit each sub-model by minibatch SGD on
/// squared error.
pub fn train_simulator(
    episodes: &[Episode],
    arch: &SimArch,
    hyper: &SimTrainHyper,
    setting_key: &str,
) -> Result<SimTraining> {
    if episodes.is_empty() {
        return Err(VentError::DegenerateData("no episodes".into()));
    }
    let feat = arch.featurization();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);

    // Episode-level split keeps held-out windows disjoint from training.
    let mut indices: Vec<usize> = (0..episodes.len()).collect();
    indices.shuffle(&mut rng);
    let n_hold = ((episodes.len() as f64 * hyper.holdout_frac).round() as usize)
        .min(episodes.len().saturating_sub(1));
    let heldout_indices: Vec<usize> = {
        let mut v = indices[..n_hold].to_vec();
        v.sort_unstable();
        v
    };
    let train_indices: Vec<usize> = {
        let mut v = indices[n_hold..].to_vec();
        v.sort_unstable();
        v
    };
    let train: Vec<Episode> = train_indices.iter().map(|&i| episodes[i].clone()).collect();
    let heldout: Vec<Episode> = heldout_indices
        .iter()
        .map(|&i| episodes[i].clone())
        .collect();

    let sets = build_regression_sets(&train, &feat, arch.n_b)?;
    let total: usize = sets.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(VentError::DegenerateData("no transitions".into()));
    }
    let norm = compute_norm(&sets, feat.input_dim());
    // Nothing to regress: every input identical and every target identical.
    let first_input = &sets.iter().find(|s| !s.is_empty()).unwrap().inputs[0];
    let first_target = sets.iter().find(|s| !s.is_empty()).unwrap().targets[0];
    let all_const = sets.iter().all(|s| {
        s.inputs.iter().all(|x| x == first_input) && s.targets.iter().all(|&t| t == first_target)
    });
    if all_const {
        return Err(VentError::DegenerateData(
            "all inputs and targets constant".into(),
        ));
    }

    let mut nets = Vec::with_capacity(arch.n_b + 1);
    for _ in 0..arch.n_b + 1 {
        nets.push(Mlp::with_arch(
            feat.input_dim(),
            arch.depth,
            arch.width,
            1,
            &mut rng,
        )?);
    }

    let mut per_net_losses: Vec<Vec<f64>> = Vec::with_capacity(nets.len());
    let mut weights = Vec::with_capacity(nets.len());
    for (net, set) in nets.iter_mut().zip(&sets) {
        if set.is_empty() {
            per_net_losses.push(vec![0.0; hyper.epochs]);
            weights.push(0.0);
            continue;
        }
        let mut xs = Array2::zeros((set.len(), feat.input_dim()));
        let mut ys = Array1::zeros(set.len());
        for (i, (x, y)) in set.inputs.iter().zip(&set.targets).enumerate() {
            for (j, v) in featurize(&x[..feat.h_p], &x[feat.h_p..], &norm)
                .into_iter()
                .enumerate()
            {
                xs[[i, j]] = v;
            }
            ys[i] = (y - norm.t_mean) / norm.t_scale;
        }
        per_net_losses.push(train_net_on_set(net, &xs, &ys, hyper, &mut rng));
        weights.push(set.len() as f64);
    }
    let wsum: f64 = weights.iter().sum();
    let epoch_losses = (0..hyper.epochs)
        .map(|e| {
            per_net_losses
                .iter()
                .zip(&weights)
                .map(|(l, w)| l[e] * w)
                .sum::<f64>()
                / wsum
        })
        .collect();

    let general = nets.pop().expect("at least one net");
    Ok(SimTraining {
        model: SimulatorModel {
            feat,
            boundary: nets,
            general,
            norm,
            setting_key: setting_key.to_string(),
        },
        train_indices,
        heldout_indices,
        heldout,
        epoch_losses,
    })
}

/// Autoregressive rollout: predictions for steps 1..=controls.len(), seeded
/// by the last entry of `context` (the pressure at episode start). Earlier
/// context entries are not consumed: training windows zero-pad before the
/// episode start, so rollouts do the same.
pub fn simulate_episode(model: &SimulatorModel, controls: &[f64], context: &[f64]) -> Vec<f64> {
    let (preds, _) = rollout_with_tape(model, controls, context);
    preds
}

/// Per-step record of a differentiable rollout.
pub struct RolloutTape {
    tapes: Vec<Tape>,
    n: usize,
}

/// Rollout that records per-step tapes for a later backward pass.
pub fn rollout_with_tape(
    model: &SimulatorModel,
    controls: &[f64],
    context: &[f64],
) -> (Vec<f64>, RolloutTape) {
    let p0 = context.last().copied().unwrap_or(model.norm.t_mean);
    let mut ps = Vec::with_capacity(controls.len() + 1);
    ps.push(p0);
    let mut tapes = Vec::with_capacity(controls.len());
    for t in 0..controls.len() {
        let (p_next, tape) = model
            .step_forward(&ps, controls, t)
            .expect("rollout shapes fixed");
        ps.push(p_next);
        tapes.push(tape);
    }
    (
        ps[1..].to_vec(),
        RolloutTape {
            tapes,
            n: controls.len(),
        },
    )
}

/// Reverse sweep through a recorded rollout: given dL/d(prediction_t) for
/// each predicted step, returns dL/du_t for every control (and dL/dp0).
pub fn rollout_backward(
    model: &SimulatorModel,
    tape: &RolloutTape,
    d_preds: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = tape.n;
    if d_preds.len() != n {
        return Err(VentError::ShapeMismatch {
            expected: n,
            got: d_preds.len(),
            context: "rollout_backward d_preds",
        });
    }
    let mut dp = vec![0.0; n + 1];
    let mut du = vec![0.0; n];
    for (t, d) in d_preds.iter().enumerate() {
        dp[t + 1] += d;
    }
    for t in (0..n).rev() {
        let dpred = dp[t + 1];
        if dpred != 0.0 {
            model.step_backward(t, &tape.tapes[t], dpred, &mut dp, &mut du)?;
        }
    }
    Ok((du, dp[0]))
}

/// Mean absolute error of open-loop rollouts against recorded episodes:
/// replay each episode's controls, compare predicted to recorded pressures.
pub fn open_loop_mae(model: &SimulatorModel, episodes: &[Episode]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ep in episodes {
        if ep.len() < 2 {
            continue;
        }
        let preds = simulate_episode(model, &ep.controls[..ep.len() - 1], &[ep.pressures[0]]);
        for (pred, actual) in preds.iter().zip(&ep.pressures[1..]) {
            sum += (pred - actual).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// A dynamical system driven open-loop by an external control sequence.
pub trait OpenLoopSystem {
    /// Reset to the start of an episode; `context` carries the pressures up
    /// to the episode start (last entry = start pressure).
    fn begin(&mut self, context: &[f64]);
    /// Apply one control and return the resulting pressure.
    fn step(&mut self, u: f64) -> f64;
}

/// Learned simulator as an open-loop system.
pub struct SimSystem<'a> {
    model: &'a SimulatorModel,
    ps: Vec<f64>,
    us: Vec<f64>,
}

impl<'a> SimSystem<'a> {
    pub fn new(model: &'a SimulatorModel) -> Self {
        SimSystem {
            model,
            ps: vec![model.norm.t_mean],
            us: Vec::new(),
        }
    }
}

impl OpenLoopSystem for SimSystem<'_> {
    fn begin(&mut self, context: &[f64]) {
        self.ps.clear();
        self.ps
            .push(context.last().copied().unwrap_or(self.model.norm.t_mean));
        self.us.clear();
    }

    fn step(&mut self, u: f64) -> f64 {
        self.us.push(u);
        let t = self.us.len() - 1;
        let (p, _) = self
            .model
            .step_forward(&self.ps, &self.us, t)
            .expect("rollout shapes fixed");
        self.ps.push(p);
        p
    }
}

/// Ground-truth plant as an open-loop system (inspiratory stepping only).
pub struct PlantSystem {
    pub plant: Plant,
    pub dt: f64,
}

impl OpenLoopSystem for PlantSystem {
    fn begin(&mut self, context: &[f64]) {
        self.plant.reset();
        if let Some(&p) = context.last() {
            self.plant.set_pressure(p);
        }
    }

    fn step(&mut self, u: f64) -> f64 {
        self.plant
            .apply(u.clamp(0.0, U_MAX), self.dt)
            .expect("non-negative flow cannot drain the lung");
        self.plant.pressure()
    }
}

/// Empirical distribution over control sequences: a pool of recorded
/// (context, controls) pairs sampled uniformly.
#[derive(Clone, Debug)]
pub struct ControlDist {
    pub pool: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ControlDist {
    /// Pool built from recorded episodes (context = episode start pressure).
    pub fn from_episodes(episodes: &[Episode]) -> Result<Self> {
        let pool: Vec<(Vec<f64>, Vec<f64>)> = episodes
            .iter()
            .filter(|e| !e.is_empty())
            .map(|e| (vec![e.start_pressure()], e.controls.clone()))
            .collect();
        if pool.is_empty() {
            return Err(VentError::DegenerateData("empty control pool".into()));
        }
        Ok(ControlDist { pool })
    }

    /// Longest horizon every pooled sequence supports.
    pub fn max_horizon(&self) -> usize {
        self.pool.iter().map(|(_, u)| u.len()).min().unwrap_or(0)
    }

    fn sample<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a (Vec<f64>, Vec<f64>) {
        &self.pool[rng.random_range(0..self.pool.len())]
    }
}

/// Monte-Carlo estimate of the open-loop distance between two systems.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub mean: f64,
    pub std_err: f64,
    /// Mean per-step distance, length = horizon.
    pub per_step: Vec<f64>,
    pub n_samples: usize,
}

/// Open-loop distance: expectation over control sequences of the summed
/// per-step distance between the two systems' pressures, each system
/// evolving its own state from the same initial context.
pub fn open_loop_distance(
    sys1: &mut dyn OpenLoopSystem,
    sys2: &mut dyn OpenLoopSystem,
    dist: &ControlDist,
    horizon: usize,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DistanceEstimate> {
    if horizon == 0 || n_samples == 0 {
        return Err(VentError::InvalidParameter(
            "horizon and n_samples must be positive".into(),
        ));
    }
    if dist.max_horizon() < horizon {
        return Err(VentError::InvalidParameter(format!(
            "control pool has sequences shorter than horizon {horizon}"
        )));
    }
    let mut totals = Vec::with_capacity(n_samples);
    let mut per_step = vec![0.0; horizon];
    for _ in 0..n_samples {
        let (ctx, us) = dist.sample(rng);
        sys1.begin(ctx);
        sys2.begin(ctx);
        let mut total = 0.0;
        for (t, &u) in us.iter().take(horizon).enumerate() {
            let d = (sys1.step(u) - sys2.step(u)).abs();
            total += d;
            per_step[t] += d;
        }
        totals.push(total);
    }
    let n = n_samples as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    for v in &mut per_step {
        *v /= n;
    }
    Ok(DistanceEstimate {
        mean,
        std_err: (var / n).sqrt(),
        per_step,
        n_samples,
    })
}
