//! Monte-Carlo replicas, replica averaging and parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{client_step_in_place, sign0, Algorithm};
use crate::attack::corrupt_in_place;
use crate::error::{Error, Result};
use crate::model::{dot, fill_sample, test_mse, NetworkSpec};
use crate::rng::{experiment_stream, replica_stream, ExperimentPurpose, ReplicaPurpose, Stream};
use crate::schedule::{draw_client_set, MaskScheduler};
use crate::theory::{self, KronBundle, MseDecomposition, TheoryOptions};

/// Any tracked metric above this aborts the replica.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Largest Kronecker dimension for which sweeps attach theory predictions.
pub const THEORY_LIMIT: usize = 70_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Stepsize,
    SharedEntries,
    AttackVariance,
    AttackProbability,
    ByzantineCount,
    RoundSize,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Stepsize => "stepsize",
            SweepParam::SharedEntries => "shared_entries",
            SweepParam::AttackVariance => "attack_variance",
            SweepParam::AttackProbability => "attack_probability",
            SweepParam::ByzantineCount => "byzantine_count",
            SweepParam::RoundSize => "round_size",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            SweepParam::Stepsize,
            SweepParam::SharedEntries,
            SweepParam::AttackVariance,
            SweepParam::AttackProbability,
            SweepParam::ByzantineCount,
            SweepParam::RoundSize,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::Config(format!("sweep_param: unknown parameter '{s}'")))
    }

    /// Copy of `spec` with this parameter set to `value`.
    pub fn apply(self, spec: &NetworkSpec, value: f64) -> Result<NetworkSpec> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{}: expected a nonnegative integer, got {v}", self.name())))
            }
        };
        let mut out = spec.clone();
        match self {
            SweepParam::Stepsize => out.stepsize = value,
            SweepParam::SharedEntries => out.shared_entries = count(value)?,
            SweepParam::AttackVariance => out.attack_variance = value,
            SweepParam::AttackProbability => out.attack_probability = value,
            SweepParam::ByzantineCount => {
                let n = count(value)?;
                if n > out.num_clients {
                    return Err(Error::Config(format!("byzantine_count: {n} exceeds K={}", out.num_clients)));
                }
                out.clients.iter_mut().enumerate().for_each(|(k, c)| c.byzantine = k < n);
            }
            SweepParam::RoundSize => out.round_size = count(value)?,
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub spec: NetworkSpec,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub replicas: usize,
    pub seed: u64,
    pub sweep: Option<Sweep>,
    /// Trailing iterations averaged for steady-state estimates.
    pub window: usize,
    /// Server-side test samples.
    pub test_size: usize,
    /// Attach theory predictions to sweep rows when the network is small
    /// enough.
    pub theory: bool,
    pub neumann_order: usize,
    pub small_step: bool,
}

impl ExperimentPlan {
    pub fn new(spec: NetworkSpec, algorithm: Algorithm) -> Self {
        Self {
            spec,
            algorithm,
            iterations: 3000,
            replicas: 100,
            seed: 0,
            sweep: None,
            window: 200,
            test_size: 50,
            theory: true,
            neumann_order: theory::DEFAULT_NEUMANN_ORDER,
            small_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.replicas == 0 {
            return Err(Error::Config("replicas: R ≥ 1 violated".into()));
        }
        if self.window == 0 || self.window > self.iterations {
            return Err(Error::Config(format!(
                "window: 1 ≤ window ≤ iterations violated (window={}, iterations={})",
                self.window, self.iterations
            )));
        }
        if self.test_size == 0 {
            return Err(Error::Config("test_size: N_t ≥ 1 violated".into()));
        }
        Ok(())
    }

    /// The network actually simulated: Online-Fed exchanges the full model.
    pub fn effective_spec(&self) -> NetworkSpec {
        match self.algorithm {
            Algorithm::Onlinefed => self.spec.with_full_sharing(),
            _ => self.spec.clone(),
        }
    }
}

/// Server test set, drawn once per experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub inputs: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
}

/// Each test sample comes from a uniformly chosen client, so the test set
/// follows the network's mixture of input and noise statistics.
pub fn draw_test_set(spec: &NetworkSpec, size: usize, seed: u64) -> TestSet {
    use rand::Rng;
    let mut rng = experiment_stream(seed, ExperimentPurpose::TestSet);
    let d = spec.model_dim;
    let mut inputs = Vec::with_capacity(size);
    let mut responses = Vec::with_capacity(size);
    for _ in 0..size {
        let k = rng.random_range(0..spec.num_clients);
        let mut x = vec![0.0; d];
        let y = fill_sample(&spec.clients[k], &spec.true_model, &mut x, &mut rng);
        inputs.push(x);
        responses.push(y);
    }
    TestSet { inputs, responses }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaTrace {
    /// Test MSE after each round.
    pub test_mse: Vec<f64>,
    /// Mean over clients of the trailing-window mean of `ε_{k,n}²`.
    pub network_mse: f64,
    pub final_global: Vec<f64>,
}

struct Streams {
    schedule: Stream,
    data: Stream,
    attack: Stream,
}

impl Streams {
    fn new(seed: u64, replica: usize) -> Self {
        Self {
            schedule: replica_stream(seed, replica, ReplicaPurpose::Schedule),
            data: replica_stream(seed, replica, ReplicaPurpose::Data),
            attack: replica_stream(seed, replica, ReplicaPurpose::Attack),
        }
    }
}

fn guard(iteration: usize, value: f64) -> Result<()> {
    if value.is_finite() && value <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, value })
    }
}

/// Runs one replica. Deterministic in `(plan.seed, replica)`; a diverging run
/// returns [`Error::Divergence`].
pub fn run_replica(plan: &ExperimentPlan, replica: usize) -> Result<ReplicaTrace> {
    plan.validate()?;
    let test = draw_test_set(&plan.spec, plan.test_size, plan.seed);
    run_replica_with(plan, replica, &test)
}

fn run_replica_with(plan: &ExperimentPlan, replica: usize, test: &TestSet) -> Result<ReplicaTrace> {
    match plan.algorithm {
        Algorithm::Psofed | Algorithm::Onlinefed => run_sharing(plan, replica, test),
        Algorithm::Signsgd => run_signsgd(plan, replica, test),
    }
}

/// PSO-Fed round order: draw `S_n`; every client samples and takes its local
/// step (selected clients first pull `S_{k,n} w_n`); draw `S_{k,n+1}`;
/// selected Byzantine clients may perturb their upload; the server averages.
///
/// Online-Fed takes the same path with full masks, replacing the masked
/// copies by whole-vector copies.
fn run_sharing(plan: &ExperimentPlan, replica: usize, test: &TestSet) -> Result<ReplicaTrace> {
    let spec = plan.effective_spec();
    let full = plan.algorithm == Algorithm::Onlinefed;
    let (k, d, s, mu) = (spec.num_clients, spec.model_dim, spec.round_size, spec.stepsize);
    let attack = spec.attack_spec();
    let mut rng = Streams::new(plan.seed, replica);
    let mut masks = if full { None } else { Some(MaskScheduler::new(k, d, spec.shared_entries, spec.mask_mode, &mut rng.schedule)?) };
    let mut global = vec![0.0; d];
    let mut local = vec![vec![0.0; d]; k];
    let mut x = vec![0.0; d];
    let mut upload = vec![0.0; d];
    let mut next_global = vec![0.0; d];
    let mut selected = vec![false; k];
    let tail_start = plan.iterations - plan.window;
    let mut err_acc = vec![0.0; k];
    let mut trace = Vec::with_capacity(plan.iterations);
    for n in 0..plan.iterations {
        let set = draw_client_set(k, s, &mut rng.schedule)?;
        selected.iter_mut().for_each(|v| *v = false);
        set.iter().for_each(|&c| selected[c] = true);
        for c in 0..k {
            let y = fill_sample(&spec.clients[c], &spec.true_model, &mut x, &mut rng.data);
            let e = if full {
                if selected[c] {
                    local[c].copy_from_slice(&global);
                }
                client_step_in_place(&global, &mut local[c], &x, y, None, mu)
            } else {
                let mask = selected[c].then(|| &masks.as_ref().unwrap().current()[c]);
                client_step_in_place(&global, &mut local[c], &x, y, mask, mu)
            };
            if n >= tail_start {
                err_acc[c] += e * e;
            }
        }
        if let Some(m) = masks.as_mut() {
            m.advance(&mut rng.schedule)?;
        }
        next_global.iter_mut().for_each(|v| *v = 0.0);
        for &c in &set {
            upload.copy_from_slice(&local[c]);
            corrupt_in_place(&mut upload, c, &attack, &mut rng.attack);
            match masks.as_ref() {
                None => {
                    for (g, u) in next_global.iter_mut().zip(&upload) {
                        *g += u;
                    }
                }
                Some(m) => {
                    let mask = &m.current()[c];
                    let mut p = 0;
                    let idx = mask.indices();
                    for (i, g) in next_global.iter_mut().enumerate() {
                        if p < idx.len() && idx[p] == i {
                            *g += upload[i];
                            p += 1;
                        } else {
                            *g += global[i];
                        }
                    }
                }
            }
        }
        let inv = 1.0 / s as f64;
        for (g, ng) in global.iter_mut().zip(&next_global) {
            *g = ng * inv;
        }
        let mse = test_mse(&global, &test.inputs, &test.responses)?;
        guard(n, mse)?;
        trace.push(mse);
    }
    finish(trace, err_acc, plan.window, global)
}

/// SignSGD with majority vote. A Byzantine upload is the sign of the
/// gradient implied by its perturbed LMS step, `sign(μg − δ)`.
fn run_signsgd(plan: &ExperimentPlan, replica: usize, test: &TestSet) -> Result<ReplicaTrace> {
    let spec = &plan.spec;
    let (k, d, s, mu) = (spec.num_clients, spec.model_dim, spec.round_size, spec.stepsize);
    let attack = spec.attack_spec();
    let mut rng = Streams::new(plan.seed, replica);
    let mut global = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut step = vec![0.0; d];
    let mut votes = vec![0.0; d];
    let mut selected = vec![false; k];
    let tail_start = plan.iterations - plan.window;
    let mut err_acc = vec![0.0; k];
    let mut trace = Vec::with_capacity(plan.iterations);
    for n in 0..plan.iterations {
        let set = draw_client_set(k, s, &mut rng.schedule)?;
        selected.iter_mut().for_each(|v| *v = false);
        set.iter().for_each(|&c| selected[c] = true);
        votes.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..k {
            let y = fill_sample(&spec.clients[c], &spec.true_model, &mut x, &mut rng.data);
            let e = y - dot(&global, &x);
            if n >= tail_start {
                err_acc[c] += e * e;
            }
            if selected[c] {
                // step = −μg = μxε; the perturbed step is step + δ.
                for (st, xi) in step.iter_mut().zip(&x) {
                    *st = mu * xi * e;
                }
                corrupt_in_place(&mut step, c, &attack, &mut rng.attack);
                for (v, st) in votes.iter_mut().zip(&step) {
                    *v += sign0(-*st);
                }
            }
        }
        for (g, v) in global.iter_mut().zip(&votes) {
            *g -= mu * sign0(*v);
        }
        let mse = test_mse(&global, &test.inputs, &test.responses)?;
        guard(n, mse)?;
        trace.push(mse);
    }
    finish(trace, err_acc, plan.window, global)
}

fn finish(trace: Vec<f64>, err_acc: Vec<f64>, window: usize, global: Vec<f64>) -> Result<ReplicaTrace> {
    let k = err_acc.len() as f64;
    let network_mse = err_acc.iter().map(|a| a / window as f64).sum::<f64>() / k;
    guard(trace.len(), network_mse)?;
    Ok(ReplicaTrace { test_mse: trace, network_mse, final_global: global })
}

/// Replica-averaged metrics of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub test_mse_trace: Vec<f64>,
    /// Mean over replicas of the trailing-window test MSE.
    pub steady_test_mse: f64,
    pub steady_test_mse_se: f64,
    pub network_mse: f64,
    pub network_mse_se: f64,
    /// Replica mean of the final global model.
    pub mean_final_global: Vec<f64>,
    pub replicas_used: usize,
    /// `(replica, iteration)` of every excluded divergent replica.
    pub diverged: Vec<(usize, usize)>,
    pub per_term: Option<MseDecomposition>,
}

/// Order-fixed pairwise sum.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

fn pairwise_sum_vec(xs: &[&[f64]]) -> Vec<f64> {
    match xs.len() {
        0 => Vec::new(),
        1 => xs[0].to_vec(),
        n => {
            let (a, b) = (pairwise_sum_vec(&xs[..n / 2]), pairwise_sum_vec(&xs[n / 2..]));
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        }
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0) / n).sqrt())
}

/// Averages the replicas in index order, so the result does not depend on
/// the thread count or scheduling.
pub fn aggregate_replicas(traces: &[ReplicaTrace], window: usize) -> Result<RunMetrics> {
    if traces.is_empty() {
        return Err(Error::Experiment("no replica completed".into()));
    }
    let r = traces.len() as f64;
    let tests: Vec<&[f64]> = traces.iter().map(|t| t.test_mse.as_slice()).collect();
    let test_mse_trace: Vec<f64> = pairwise_sum_vec(&tests).into_iter().map(|v| v / r).collect();
    let steady: Vec<f64> = traces
        .iter()
        .map(|t| pairwise_sum(&t.test_mse[t.test_mse.len() - window..]) / window as f64)
        .collect();
    let (steady_test_mse, steady_test_mse_se) = mean_and_se(&steady);
    let nets: Vec<f64> = traces.iter().map(|t| t.network_mse).collect();
    let (network_mse, network_mse_se) = mean_and_se(&nets);
    let finals: Vec<&[f64]> = traces.iter().map(|t| t.final_global.as_slice()).collect();
    let mean_final_global = pairwise_sum_vec(&finals).into_iter().map(|v| v / r).collect();
    Ok(RunMetrics {
        test_mse_trace,
        steady_test_mse,
        steady_test_mse_se,
        network_mse,
        network_mse_se,
        mean_final_global,
        replicas_used: traces.len(),
        diverged: Vec::new(),
        per_term: None,
    })
}

/// Runs all replicas in parallel; divergent replicas are excluded and listed.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<RunMetrics> {
    plan.validate()?;
    let test = draw_test_set(&plan.spec, plan.test_size, plan.seed);
    let outcomes: Vec<Result<ReplicaTrace>> =
        (0..plan.replicas).into_par_iter().map(|r| run_replica_with(plan, r, &test)).collect();
    let mut traces = Vec::with_capacity(outcomes.len());
    let mut diverged = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => traces.push(t),
            Err(Error::Divergence { iteration, .. }) => diverged.push((r, iteration)),
            Err(e) => return Err(e),
        }
    }
    if traces.is_empty() {
        return Err(Error::Experiment(format!("all {} replicas diverged", plan.replicas)));
    }
    let mut metrics = aggregate_replicas(&traces, plan.window)?;
    metrics.diverged = diverged;
    Ok(metrics)
}

/// Theory-engine outputs attached to a sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub mse: MseDecomposition,
    pub mu_max_mean: f64,
    pub mu_max_ms: f64,
    pub mu_star: f64,
}

/// Theory for `spec`, or `None` when the theory does not cover it (SignSGD,
/// round-robin masks, oversized networks, unstable stepsize).
pub fn predict(spec: &NetworkSpec, algorithm: Algorithm, neumann_order: usize, small_step: bool) -> Option<TheoryPrediction> {
    if algorithm == Algorithm::Signsgd {
        return None;
    }
    let spec = if algorithm == Algorithm::Onlinefed { spec.with_full_sharing() } else { spec.clone() };
    let lay = theory::Layout::new(spec.num_clients, spec.model_dim);
    if lay.kron_dim() > THEORY_LIMIT {
        return None;
    }
    let bundle = KronBundle::new(&spec).ok()?;
    let opts = TheoryOptions { small_step };
    let mse = theory::steady_state_mse(&bundle, spec.stepsize, opts).ok()?;
    Some(TheoryPrediction {
        mse,
        mu_max_mean: theory::mean_stability_bound(&spec).ok()?,
        mu_max_ms: theory::ms_stability_bound(&bundle).ok()?,
        mu_star: theory::optimal_stepsize(&bundle, neumann_order).ok()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: Option<SweepParam>,
    pub value: f64,
    pub algorithm: Algorithm,
    pub metrics: RunMetrics,
    pub theory: Option<TheoryPrediction>,
    pub replicas: usize,
    pub seed: u64,
}

/// One experiment per sweep value, all sharing the plan's seed (common random
/// numbers across the grid). Without a sweep axis, a single row is produced.
pub fn sweep(plan: &ExperimentPlan) -> Result<Vec<SweepRow>> {
    sweep_with_progress(plan, |_| {})
}

pub fn sweep_with_progress<F: FnMut(&SweepRow)>(plan: &ExperimentPlan, mut progress: F) -> Result<Vec<SweepRow>> {
    plan.validate()?;
    let points: Vec<(Option<SweepParam>, f64, NetworkSpec)> = match &plan.sweep {
        None => vec![(None, f64::NAN, plan.spec.clone())],
        Some(sw) => {
            if sw.values.is_empty() {
                return Err(Error::Config("sweep_values: at least one value required".into()));
            }
            sw.values
                .iter()
                .map(|&v| Ok((Some(sw.param), v, sw.param.apply(&plan.spec, v)?)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut rows = Vec::with_capacity(points.len());
    for (param, value, spec) in points {
        let point = ExperimentPlan { spec: spec.clone(), sweep: None, ..plan.clone() };
        let mut metrics = run_experiment(&point)?;
        let theory = if plan.theory { predict(&spec, plan.algorithm, plan.neumann_order, plan.small_step) } else { None };
        metrics.per_term = theory.map(|t| t.mse);
        let row = SweepRow { param, value, algorithm: plan.algorithm, metrics, theory, replicas: plan.replicas, seed: plan.seed };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}
