//! Adam optimization with per-epoch exponential learning-rate decay, the
//! epoch loop, best-checkpoint selection, evaluation, finite-difference
//! gradient checking, the statistical-efficiency sweep, and gradient-norm
//! heatmap export.

use crate::checkpoint;
use crate::corpus::{stream_windows, subset_fraction, PreparedCorpus, StreamBatcher, WindowBatch};
use crate::error::{Error, Result};
use crate::lattice::{
    backward_window, forward_window, init_network, solve_hidden_for_budget, CarriedState,
    NetworkConfig, NetworkParams, Readout, DEFAULT_BATCH, DEFAULT_BPTT,
};
use crate::numkit::softmax_cce;
use crate::CellKind;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Optimizer hyperparameters. Defaults are the training-protocol values:
/// lr 0.001 decaying by 0.9 per epoch, β1 = 0.1, β2 = 0.001, ε = 1e-8.
/// `standard()` switches to the conventional β1 = 0.9, β2 = 0.999.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            decay: 0.9,
            beta1: 0.1,
            beta2: 0.001,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn standard() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            ..AdamConfig::default()
        }
    }
}

/// First/second-moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: NetworkParams,
    v: NetworkParams,
    t: u64,
    lr_t: f64,
}

/// base · decay^(epoch−1), applied per epoch.
pub fn lr_schedule(base: f64, decay: f64, epoch: usize) -> f64 {
    assert!(epoch >= 1, "epochs are 1-indexed");
    base * decay.powi(epoch as i32 - 1)
}

impl AdamState {
    pub fn new(params: &NetworkParams, cfg: AdamConfig) -> AdamState {
        AdamState {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr_t: cfg.lr,
        }
    }

    /// Apply the per-epoch decay schedule.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr_t = lr_schedule(self.cfg.lr, self.cfg.decay, epoch);
    }

    pub fn effective_lr(&self) -> f64 {
        self.lr_t
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One Adam update:
    /// m ← β1·m + (1−β1)g; v ← β2·v + (1−β2)g²;
    /// θ ← θ − lr_t · (m/(1−β1^t)) / (√(v/(1−β2^t)) + ε).
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        if let Some(tensor) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient { tensor });
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr_t;
        let eps = self.cfg.eps;
        for ((theta, g), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()))
        {
            let td = theta.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..td.len() {
                let gi = gd[i];
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                td[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm when clipping triggered.
pub fn clip_global_norm(grads: &mut NetworkParams, max_norm: f64) -> Option<f64> {
    let norm = grads.l2_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.scale_in_place(s);
        }
        Some(norm)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Epoch loop and evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct EpochOptions {
    /// Carry hidden state across windows within the epoch (reset at epoch
    /// start either way).
    pub stateful: bool,
    pub clip_norm: Option<f64>,
}

impl Default for EpochOptions {
    fn default() -> Self {
        EpochOptions {
            stateful: true,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub train_cce: f64,
    pub mean_layer_grad_norms: Vec<f64>,
    pub windows: usize,
}

/// One full pass over the batcher: forward, backward, Adam per window.
pub fn run_epoch(
    params: &mut NetworkParams,
    cfg: &NetworkConfig,
    batcher: &mut StreamBatcher,
    adam: &mut AdamState,
    opts: &EpochOptions,
) -> Result<EpochStats> {
    batcher.reset();
    let windows = batcher.num_windows();
    if windows == 0 {
        return Err(Error::CorpusTooSmall {
            len: 0,
            batch: cfg.batch,
            bptt: cfg.bptt,
        });
    }
    let mut carry: Option<CarriedState> = None;
    let mut loss_sum = 0.0;
    let mut norm_sums = vec![0.0; cfg.depth];
    let mut count = 0usize;
    while let Some(window) = batcher.next() {
        let start = match (&carry, opts.stateful) {
            (Some(c), true) => c.clone(),
            _ => CarriedState::zeros(cfg, window.b),
        };
        let (_, new_carry, cache) = forward_window(params, cfg, &window, &start)?;
        let (mut grads, loss, layer_norms) = backward_window(params, cfg, &cache, &window.targets)?;
        if let Some(max_norm) = opts.clip_norm {
            if let Some(norm) = clip_global_norm(&mut grads, max_norm) {
                log::info!("clipped gradient norm {norm:.4e} to {max_norm}");
            }
        }
        adam.step(params, &grads)?;
        carry = Some(new_carry);
        loss_sum += loss;
        for (s, n) in norm_sums.iter_mut().zip(&layer_norms) {
            *s += n;
        }
        count += 1;
    }
    Ok(EpochStats {
        train_cce: loss_sum / count as f64,
        mean_layer_grad_norms: norm_sums.iter().map(|s| s / count as f64).collect(),
        windows: count,
    })
}

/// Mean per-character CCE over every predicted position of the split,
/// evaluated as a single stateful stream. No parameter mutation.
pub fn evaluate(params: &NetworkParams, cfg: &NetworkConfig, ids: &[u32]) -> Result<f64> {
    if ids.len() < 2 {
        return Err(Error::CorpusTooShort {
            len: ids.len(),
            need: 2,
        });
    }
    let n = ids.len() - 1;
    let mut carry = CarriedState::zeros(cfg, 1);
    let mut loss_sum = 0.0;
    let mut pos = 0usize;
    while pos < n {
        let k = cfg.bptt.min(n - pos);
        let window = WindowBatch {
            k,
            b: 1,
            inputs: ids[pos..pos + k].to_vec(),
            targets: ids[pos + 1..pos + k + 1].to_vec(),
        };
        let (logits, new_carry, _) = forward_window(params, cfg, &window, &carry)?;
        for (t, logit) in logits.iter().enumerate() {
            let (l, _) = softmax_cce(logit, &[window.targets[t] as usize])?;
            loss_sum += l;
        }
        carry = new_carry;
        pos += k;
    }
    Ok(loss_sum / n as f64)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

/// Hidden size given directly or derived from a parameter budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenSpec {
    Units(usize),
    Budget(usize),
}

/// Everything a training run needs besides the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: CellKind,
    pub depth: usize,
    pub hidden: HiddenSpec,
    pub bptt: usize,
    pub batch: usize,
    pub readout: Readout,
    pub tie_grid_weights: bool,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub stateful: bool,
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(kind: CellKind, hidden: HiddenSpec) -> TrainConfig {
        TrainConfig {
            kind,
            depth: 2,
            hidden,
            bptt: DEFAULT_BPTT,
            batch: DEFAULT_BATCH,
            readout: Readout::Vertical,
            tie_grid_weights: false,
            adam: AdamConfig::default(),
            max_epochs: 100,
            patience: 10,
            seed: 0,
            stateful: true,
            clip_norm: None,
        }
    }

    /// Resolve the concrete network configuration for a vocabulary size.
    pub fn network_config(&self, vocab: usize) -> Result<NetworkConfig> {
        let hidden = match self.hidden {
            HiddenSpec::Units(m) => m,
            HiddenSpec::Budget(budget) => solve_hidden_for_budget(
                self.kind,
                self.depth,
                vocab,
                self.tie_grid_weights,
                budget,
            )?,
        };
        let mut cfg = NetworkConfig::new(self.kind, self.depth, hidden, vocab);
        cfg.bptt = self.bptt;
        cfg.batch = self.batch;
        cfg.readout = self.readout;
        cfg.tie_grid_weights = self.tie_grid_weights;
        cfg.validate()?;
        Ok(cfg)
    }

    fn epoch_options(&self) -> EpochOptions {
        EpochOptions {
            stateful: self.stateful,
            clip_norm: self.clip_norm,
        }
    }
}

/// One epoch's metrics row. Wall time is kept for logs but excluded from
/// the serialized form so metrics files are bit-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_cce: f64,
    pub valid_cce: f64,
    pub test_cce: f64,
    pub lr: f64,
    #[serde(skip)]
    pub wall_secs: f64,
    pub layer_grad_norms: Vec<f64>,
    pub windows: usize,
}

#[derive(Debug)]
pub struct FitResult {
    pub records: Vec<TrainRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub test_loss_at_best: f64,
    pub total_epochs: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub best_params: NetworkParams,
    pub config: NetworkConfig,
}

/// Where fit should write its artifacts; both optional.
#[derive(Debug, Clone, Default)]
pub struct FitOutputs {
    pub checkpoint: Option<PathBuf>,
    pub metrics_jsonl: Option<PathBuf>,
}

/// Train up to max_epochs with per-epoch validation, checkpointing on
/// strict improvement, early stopping after `patience` stale epochs.
/// best_epoch is the argmin of validation CCE (earliest on ties).
pub fn fit(tc: &TrainConfig, corpus: &PreparedCorpus, out: &FitOutputs) -> Result<FitResult> {
    let cfg = tc.network_config(corpus.vocab.len())?;
    let mut params = init_network(&cfg, tc.seed)?;
    let mut adam = AdamState::new(&params, tc.adam);
    let mut batcher = stream_windows(&corpus.split.train, cfg.batch, cfg.bptt)?;
    let opts = tc.epoch_options();

    let mut records: Vec<TrainRecord> = Vec::new();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut best_params = params.clone();
    let mut stale = 0usize;

    for epoch in 1..=tc.max_epochs {
        adam.set_epoch(epoch);
        let t0 = Instant::now();
        let stats = run_epoch(&mut params, &cfg, &mut batcher, &mut adam, &opts)?;
        let valid_cce = evaluate(&params, &cfg, &corpus.split.valid)?;
        let test_cce = evaluate(&params, &cfg, &corpus.split.test)?;
        let record = TrainRecord {
            epoch,
            train_cce: stats.train_cce,
            valid_cce,
            test_cce,
            lr: adam.effective_lr(),
            wall_secs: t0.elapsed().as_secs_f64(),
            layer_grad_norms: stats.mean_layer_grad_norms,
            windows: stats.windows,
        };
        log::info!(
            "{} epoch {epoch}: train {:.4} valid {:.4} test {:.4} lr {:.2e} ({:.1}s)",
            cfg.kind,
            record.train_cce,
            record.valid_cce,
            record.test_cce,
            record.lr,
            record.wall_secs
        );
        let improved = best.map_or(true, |(_, bv, _)| valid_cce < bv);
        records.push(record);
        if improved {
            best = Some((epoch, valid_cce, test_cce));
            best_params = params.clone();
            stale = 0;
            if let Some(path) = &out.checkpoint {
                let metrics = serde_json::json!({
                    "best_epoch": epoch,
                    "valid_cce": valid_cce,
                    "test_cce": test_cce,
                });
                checkpoint::save(path, &best_params, &cfg, &corpus.vocab, metrics)?;
            }
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }

    if let Some(path) = &out.metrics_jsonl {
        write_metrics_jsonl(&records, path)?;
    }
    let (best_epoch, best_valid_loss, test_loss_at_best) =
        best.expect("max_epochs ≥ 1 yields at least one record");
    Ok(FitResult {
        total_epochs: records.len(),
        records,
        best_epoch,
        best_valid_loss,
        test_loss_at_best,
        checkpoint_path: out.checkpoint.clone(),
        best_params,
        config: cfg,
    })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GradcheckDims {
    pub hidden: usize,
    pub depth: usize,
    pub bptt: usize,
    pub batch: usize,
    pub vocab: usize,
}

impl Default for GradcheckDims {
    fn default() -> Self {
        GradcheckDims {
            hidden: 4,
            depth: 2,
            bptt: 3,
            batch: 2,
            vocab: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub elements: usize,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub kind: CellKind,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failing_tensors(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_err > self.tolerance)
            .map(|t| t.name.as_str())
            .collect()
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "gradcheck {}: max rel err {:.3e} (tolerance {:.1e}) — {}",
            self.kind,
            self.max_rel_err,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<18} {:>10} elems   max rel err {:.3e}{}",
                t.name,
                t.elements,
                t.max_rel_err,
                if t.max_rel_err > self.tolerance {
                    "  <-- FAIL"
                } else {
                    ""
                }
            )?;
        }
        Ok(())
    }
}

pub const GRADCHECK_TOL: f64 = 1e-6;
const GRADCHECK_FD_STEP: f64 = 1e-5;
const GRADCHECK_DENOM_FLOOR: f64 = 1e-8;

fn window_mean_loss(
    params: &NetworkParams,
    cfg: &NetworkConfig,
    window: &WindowBatch,
    carry: &CarriedState,
) -> Result<f64> {
    let (logits, _, _) = forward_window(params, cfg, window, carry)?;
    let mut sum = 0.0;
    for (t, logit) in logits.iter().enumerate() {
        let tgt: Vec<usize> = window.target_row(t).iter().map(|&x| x as usize).collect();
        let (l, _) = softmax_cce(logit, &tgt)?;
        sum += l;
    }
    Ok(sum / (window.k * window.b) as f64)
}

/// Compare supplied gradients against central finite differences of the
/// window loss, element by element. Always produces a report.
pub fn check_gradients(
    params: &NetworkParams,
    cfg: &NetworkConfig,
    window: &WindowBatch,
    carry: &CarriedState,
    grads: &NetworkParams,
) -> Result<GradcheckReport> {
    let names = params.tensor_names();
    let mut tensors = Vec::with_capacity(names.len());
    let mut overall: f64 = 0.0;
    for (ti, name) in names.iter().enumerate() {
        let elements = params.tensors()[ti].len();
        let mut worst: f64 = 0.0;
        for e in 0..elements {
            let orig = params.tensors()[ti].data()[e];
            let mut probe = params.clone();
            probe.tensors_mut()[ti].data_mut()[e] = orig + GRADCHECK_FD_STEP;
            let lp = window_mean_loss(&probe, cfg, window, carry)?;
            probe.tensors_mut()[ti].data_mut()[e] = orig - GRADCHECK_FD_STEP;
            let lm = window_mean_loss(&probe, cfg, window, carry)?;
            let fd = (lp - lm) / (2.0 * GRADCHECK_FD_STEP);
            let an = grads.tensors()[ti].data()[e];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(GRADCHECK_DENOM_FLOOR);
            worst = worst.max(rel);
        }
        overall = overall.max(worst);
        tensors.push(TensorCheck {
            name: name.clone(),
            max_rel_err: worst,
            elements,
        });
    }
    Ok(GradcheckReport {
        kind: cfg.kind,
        tolerance: GRADCHECK_TOL,
        max_rel_err: overall,
        tensors,
        passed: overall <= GRADCHECK_TOL,
    })
}

/// Build a small random network and window, compute analytic gradients,
/// and verify every parameter tensor against finite differences.
///
/// The incoming carry is randomized (it is a constant under truncation)
/// so that every gate path — in particular reset gates acting on h2 —
/// carries gradient mass well above the finite-difference noise floor.
pub fn gradcheck(kind: CellKind, dims: GradcheckDims, seed: u64) -> Result<GradcheckReport> {
    if dims.hidden > 8 || dims.bptt > 4 || dims.batch > 2 {
        return Err(Error::InvalidConfig(format!(
            "gradcheck dims too large (hidden {} ≤ 8, bptt {} ≤ 4, batch {} ≤ 2)",
            dims.hidden, dims.bptt, dims.batch
        )));
    }
    let mut cfg = NetworkConfig::new(kind, dims.depth, dims.hidden, dims.vocab);
    cfg.bptt = dims.bptt;
    cfg.batch = dims.batch;
    // Probe at a healthy random point rather than a fresh Glorot init:
    // doubled weights and non-zero biases keep every gate path's gradient
    // well above what central differences can resolve in f64.
    let mut params = init_network(&cfg, seed)?;
    let mut rng = crate::numkit::Rng::new(seed ^ 0x5EED);
    let names = params.tensor_names();
    for (name, t) in names.into_iter().zip(params.tensors_mut()) {
        if name.contains(".b_") || name.ends_with("b_out") {
            for x in t.data_mut() {
                *x = rng.uniform(-0.3, 0.3);
            }
        } else {
            t.scale_in_place(2.0);
        }
    }
    let window = WindowBatch {
        k: dims.bptt,
        b: dims.batch,
        inputs: (0..dims.bptt * dims.batch)
            .map(|_| rng.below(dims.vocab) as u32)
            .collect(),
        targets: (0..dims.bptt * dims.batch)
            .map(|_| rng.below(dims.vocab) as u32)
            .collect(),
    };
    let carry = random_carry(&cfg, dims.batch, &mut rng);
    let (_, _, cache) = forward_window(&params, &cfg, &window, &carry)?;
    let (grads, _, _) = backward_window(&params, &cfg, &cache, &window.targets)?;
    check_gradients(&params, &cfg, &window, &carry, &grads)
}

fn random_carry(cfg: &NetworkConfig, batch: usize, rng: &mut crate::numkit::Rng) -> CarriedState {
    let mut carry = CarriedState::zeros(cfg, batch);
    for state in &mut carry.layers {
        for x in state.h2.data_mut() {
            *x = rng.uniform(-0.8, 0.8);
        }
        for m in [&mut state.m1, &mut state.m2].into_iter().flatten() {
            for x in m.data_mut() {
                *x = rng.uniform(-0.8, 0.8);
            }
        }
    }
    carry
}

// ---------------------------------------------------------------------------
// Statistical-efficiency sweep
// ---------------------------------------------------------------------------

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub test_cce: f64,
    pub best_epoch: usize,
    pub best_valid_cce: f64,
}

/// Independent fit per training fraction on a fixed valid/test set.
/// Rows come back sorted by fraction. `jobs` > 1 runs fits concurrently;
/// results are deterministic either way since each fit owns its state.
pub fn efficiency_sweep(
    tc: &TrainConfig,
    corpus: &PreparedCorpus,
    fractions: &[f64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() {
        return Err(Error::InvalidConfig("no fractions given".into()));
    }
    let mut fractions: Vec<f64> = fractions.to_vec();
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let jobs = jobs.max(1);
    let mut rows: Vec<Option<SweepRow>> = vec![None; fractions.len()];

    for chunk_start in (0..fractions.len()).step_by(jobs) {
        let chunk_end = (chunk_start + jobs).min(fractions.len());
        let results: Vec<(usize, Result<SweepRow>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (chunk_start..chunk_end)
                .map(|i| {
                    let p = fractions[i];
                    scope.spawn(move || {
                        let row = (|| {
                            let sub = PreparedCorpus {
                                vocab: corpus.vocab.clone(),
                                split: subset_fraction(&corpus.split, p)?,
                            };
                            let result = fit(tc, &sub, &FitOutputs::default())?;
                            Ok(SweepRow {
                                fraction: p,
                                test_cce: result.test_loss_at_best,
                                best_epoch: result.best_epoch,
                                best_valid_cce: result.best_valid_loss,
                            })
                        })();
                        (i, row)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (i, row) in results {
            rows[i] = Some(row?);
        }
    }
    Ok(rows.into_iter().map(|r| r.unwrap()).collect())
}

// ---------------------------------------------------------------------------
// Gradient-norm heatmap
// ---------------------------------------------------------------------------

/// Train for `epochs` epochs and collect each layer's epoch-mean gradient
/// norm. Returns grid[layer][epoch] with layer 0 closest to the input.
pub fn grad_heatmap(
    tc: &TrainConfig,
    corpus: &PreparedCorpus,
    epochs: usize,
) -> Result<Vec<Vec<f64>>> {
    if tc.depth < 2 {
        return Err(Error::InvalidConfig(
            "heatmap needs at least 2 layers".into(),
        ));
    }
    let cfg = tc.network_config(corpus.vocab.len())?;
    let mut params = init_network(&cfg, tc.seed)?;
    let mut adam = AdamState::new(&params, tc.adam);
    let mut batcher = stream_windows(&corpus.split.train, cfg.batch, cfg.bptt)?;
    let opts = tc.epoch_options();
    let mut grid = vec![vec![0.0; epochs]; cfg.depth];
    for epoch in 1..=epochs {
        adam.set_epoch(epoch);
        let stats = run_epoch(&mut params, &cfg, &mut batcher, &mut adam, &opts)?;
        for (l, norm) in stats.mean_layer_grad_norms.iter().enumerate() {
            grid[l][epoch - 1] = *norm;
        }
        log::info!("heatmap {} epoch {epoch}: train {:.4}", cfg.kind, stats.train_cce);
    }
    Ok(grid)
}

/// CSV grid: one row per layer (1 = closest to input), one column per epoch.
pub fn write_heatmap_csv(grid: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut out = String::new();
    let epochs = grid.first().map_or(0, Vec::len);
    out.push_str("layer");
    for e in 1..=epochs {
        out.push_str(&format!(",epoch_{e}"));
    }
    out.push('\n');
    for (l, row) in grid.iter().enumerate() {
        out.push_str(&format!("{}", l + 1));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Train, collect per-layer per-epoch mean gradient norms, write the grid.
pub fn grad_heatmap_export(
    tc: &TrainConfig,
    corpus: &PreparedCorpus,
    epochs: usize,
    path: &Path,
) -> Result<Vec<Vec<f64>>> {
    let grid = grad_heatmap(tc, corpus, epochs)?;
    write_heatmap_csv(&grid, path)?;
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Metrics files
// ---------------------------------------------------------------------------

/// One JSON object per line, one line per epoch.
pub fn write_metrics_jsonl(records: &[TrainRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r)?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a metrics file back; parse failures name the offending line.
pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<TrainRecord>> {
    let f = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(f);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrainRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidConfig(format!("{}:{}: malformed record: {e}", path.display(), i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Compact per-run summary.
pub fn write_fit_summary_csv(result: &FitResult, path: &Path) -> Result<()> {
    let mut out = String::from(
        "cell,depth,hidden,params,best_epoch,total_epochs,best_valid_cce,test_cce_at_best\n",
    );
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        result.config.kind,
        result.config.depth,
        result.config.hidden,
        result.best_params.param_count(),
        result.best_epoch,
        result.total_epochs,
        result.best_valid_loss,
        result.test_loss_at_best
    ));
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = String::from("fraction,test_cce,best_epoch,best_valid_cce\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.fraction, r.test_cce, r.best_epoch, r.best_valid_cce
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
