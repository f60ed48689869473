//! One outer loop, three update rules.
//!
//! Every iteration selects a data distribution (the joint source for
//! finetuning, a sampled task for Reptile and first-order MAML), runs `T`
//! plain SGD steps from the current initialization, and then moves the
//! initialization:
//!
//! - finetuning continues from the adapted weights, `θ ← θ⁽ᵀ⁾`;
//! - Reptile interpolates, `θ ← θ + ε·mean_j(θⱼ⁽ᵀ⁾ − θ)`;
//! - first-order MAML steps along the held-out gradient taken at the adapted
//!   weights, `θ ← θ − β·mean_j ∇ℒ(θⱼ⁽ᵀ⁾)`, treating `∂θ⁽ᵀ⁾/∂θ` as identity.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{freeze_mask, replace_head, FreezeMode, LayeredParams, Target};
use crate::numerics::{sgd_step, Graph, Tensor};
use crate::tasks::{
    sample_episode, sample_joint_batch, sample_sine_task, sine_batch, ClassUniverse, Episode, LandscapeTask,
    Scenario, SineConfig, Split, ToyTask,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Finetune,
    Reptile,
    Fomaml,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Finetune, Algorithm::Reptile, Algorithm::Fomaml];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Finetune => "finetune",
            Algorithm::Reptile => "reptile",
            Algorithm::Fomaml => "fomaml",
        }
    }

    /// Reptile and MAML sample tasks; finetuning draws from the joint source.
    pub fn is_episodic(self) -> bool {
        !matches!(self, Algorithm::Finetune)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub algorithm: Algorithm,
    /// α, the inner SGD step size.
    pub inner_lr: f64,
    /// T, inner steps per outer iteration.
    pub inner_steps: usize,
    /// ε for Reptile, β for first-order MAML; unused by finetuning.
    #[serde(default)]
    pub outer_lr: f64,
    #[serde(default = "one")]
    pub meta_batch_size: usize,
    /// Examples per inner batch; 0 (or anything at least the support size)
    /// means every inner step sees the full support set.
    #[serde(default)]
    pub inner_batch_size: usize,
}

fn one() -> usize {
    1
}

impl AlgorithmSpec {
    pub fn finetune(inner_lr: f64, inner_steps: usize) -> Self {
        Self {
            algorithm: Algorithm::Finetune,
            inner_lr,
            inner_steps,
            outer_lr: 0.0,
            meta_batch_size: 1,
            inner_batch_size: 0,
        }
    }

    pub fn reptile(inner_lr: f64, inner_steps: usize, epsilon: f64) -> Self {
        Self {
            algorithm: Algorithm::Reptile,
            outer_lr: epsilon,
            ..Self::finetune(inner_lr, inner_steps)
        }
    }

    pub fn fomaml(inner_lr: f64, inner_steps: usize, beta: f64) -> Self {
        Self {
            algorithm: Algorithm::Fomaml,
            outer_lr: beta,
            ..Self::finetune(inner_lr, inner_steps)
        }
    }

    pub fn with_meta_batch(mut self, m: usize) -> Self {
        self.meta_batch_size = m;
        self
    }

    pub fn with_inner_batch(mut self, b: usize) -> Self {
        self.inner_batch_size = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr.is_finite() && self.inner_lr >= 0.0) {
            return Err(Error::invalid(format!("inner_lr must be finite and >= 0, got {}", self.inner_lr)));
        }
        if self.inner_steps == 0 {
            return Err(Error::invalid("inner_steps must be >= 1"));
        }
        if self.meta_batch_size == 0 {
            return Err(Error::invalid("meta_batch_size must be >= 1"));
        }
        if self.algorithm.is_episodic() && !(self.outer_lr.is_finite() && self.outer_lr > 0.0) {
            return Err(Error::invalid(format!(
                "{} needs a positive outer_lr, got {}",
                self.algorithm, self.outer_lr
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tasks

/// Anything the inner loop can adapt to.
pub trait AdaptationTask: Send {
    /// Loss and gradient on the batch used by inner step `step`.
    fn inner_loss_and_grad(&mut self, params: &LayeredParams, step: usize) -> Result<(f64, LayeredParams)>;

    /// Loss and gradient on the held-out batch evaluated after adaptation.
    fn outer_loss_and_grad(&mut self, params: &LayeredParams) -> Result<(f64, LayeredParams)>;

    /// Query loss and accuracy, for tasks that have labelled held-out data.
    fn query_metrics(&self, _params: &LayeredParams) -> Result<Option<(f64, f64)>> {
        Ok(None)
    }
}

/// A toy landscape task acting on the single weight of a
/// [`LayeredParams::scalar`]. Inner and outer losses are the same function.
#[derive(Debug, Clone, Copy)]
pub struct LandscapeObjective(pub LandscapeTask);

impl LandscapeObjective {
    fn eval(&self, params: &LayeredParams) -> Result<(f64, LayeredParams)> {
        let mut g = Graph::new();
        let layer = &params.layers()[0];
        let w = g.leaf(layer.weight.clone());
        let loss = g.scalar_eval(w, &self.0)?;
        g.backward(loss)?;
        let mut grads = params.zeros_like();
        grads.layers_mut()[0].weight = g.grad(w).cloned().expect("weight feeds the loss");
        Ok((g.value(loss).item(), grads))
    }
}

impl AdaptationTask for LandscapeObjective {
    fn inner_loss_and_grad(&mut self, params: &LayeredParams, _step: usize) -> Result<(f64, LayeredParams)> {
        self.eval(params)
    }

    fn outer_loss_and_grad(&mut self, params: &LayeredParams) -> Result<(f64, LayeredParams)> {
        self.eval(params)
    }
}

/// Inner steps draw from the support set, the outer loss uses the query set.
#[derive(Debug, Clone)]
pub struct EpisodeTask {
    pub episode: Episode,
    inner_batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl EpisodeTask {
    pub fn new(episode: Episode, inner_batch_size: usize, seed: u64) -> Self {
        let n = episode.support_len();
        Self {
            episode,
            inner_batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn full_support(&self) -> bool {
        self.inner_batch_size == 0 || self.inner_batch_size >= self.episode.support_len()
    }

    /// Indices of the next inner batch, reshuffling at every epoch boundary.
    fn next_batch(&mut self) -> Vec<usize> {
        let b = self.inner_batch_size;
        if self.cursor + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        idx
    }
}

impl AdaptationTask for EpisodeTask {
    fn inner_loss_and_grad(&mut self, params: &LayeredParams, _step: usize) -> Result<(f64, LayeredParams)> {
        if self.full_support() {
            let ep = &self.episode;
            return params.loss_and_grad(&ep.support_x, Target::Classes(&ep.support_y));
        }
        let idx = self.next_batch();
        let x = self.episode.support_x.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| self.episode.support_y[i]).collect();
        params.loss_and_grad(&x, Target::Classes(&y))
    }

    fn outer_loss_and_grad(&mut self, params: &LayeredParams) -> Result<(f64, LayeredParams)> {
        let ep = &self.episode;
        params.loss_and_grad(&ep.query_x, Target::Classes(&ep.query_y))
    }

    fn query_metrics(&self, params: &LayeredParams) -> Result<Option<(f64, f64)>> {
        let ep = &self.episode;
        params.evaluate(&ep.query_x, &ep.query_y).map(Some)
    }
}

/// Pre-drawn labelled batches: one per inner step plus one held-out batch.
#[derive(Debug, Clone)]
pub struct BatchTask {
    pub inner: Vec<(Tensor, Vec<usize>)>,
    pub outer: (Tensor, Vec<usize>),
}

impl AdaptationTask for BatchTask {
    fn inner_loss_and_grad(&mut self, params: &LayeredParams, step: usize) -> Result<(f64, LayeredParams)> {
        let (x, y) = &self.inner[step % self.inner.len()];
        params.loss_and_grad(x, Target::Classes(y))
    }

    fn outer_loss_and_grad(&mut self, params: &LayeredParams) -> Result<(f64, LayeredParams)> {
        let (x, y) = &self.outer;
        params.loss_and_grad(x, Target::Classes(y))
    }

    fn query_metrics(&self, params: &LayeredParams) -> Result<Option<(f64, f64)>> {
        let (x, y) = &self.outer;
        params.evaluate(x, y).map(Some)
    }
}

/// Sine-wave regression: full-support inner steps, query points outside.
#[derive(Debug, Clone)]
pub struct RegressionTask {
    pub support: (Tensor, Tensor),
    pub query: (Tensor, Tensor),
}

impl AdaptationTask for RegressionTask {
    fn inner_loss_and_grad(&mut self, params: &LayeredParams, _step: usize) -> Result<(f64, LayeredParams)> {
        params.loss_and_grad(&self.support.0, Target::Values(&self.support.1))
    }

    fn outer_loss_and_grad(&mut self, params: &LayeredParams) -> Result<(f64, LayeredParams)> {
        params.loss_and_grad(&self.query.0, Target::Values(&self.query.1))
    }
}

/// Produces the distribution for each outer iteration.
pub trait TaskSource {
    fn next_task(&mut self, spec: &AlgorithmSpec, rng: &mut ChaCha8Rng) -> Result<Box<dyn AdaptationTask>>;
}

/// Strictly alternates task 1, task 2, task 1, ...
#[derive(Debug, Clone)]
pub struct LandscapeSource {
    pub scenario: Scenario,
    drawn: u64,
}

impl LandscapeSource {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario, drawn: 0 }
    }
}

impl TaskSource for LandscapeSource {
    fn next_task(&mut self, _spec: &AlgorithmSpec, _rng: &mut ChaCha8Rng) -> Result<Box<dyn AdaptationTask>> {
        let task = if self.drawn.is_multiple_of(2) {
            ToyTask::First
        } else {
            ToyTask::Second
        };
        self.drawn += 1;
        Ok(Box::new(LandscapeObjective(LandscapeTask {
            scenario: self.scenario,
            task,
        })))
    }
}

/// N-way k-shot episodes from one split of a universe.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSource<'a> {
    pub universe: &'a ClassUniverse,
    pub split: Split,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

impl TaskSource for EpisodeSource<'_> {
    fn next_task(&mut self, spec: &AlgorithmSpec, rng: &mut ChaCha8Rng) -> Result<Box<dyn AdaptationTask>> {
        let ep = sample_episode(self.universe, self.split, self.way, self.shot, self.query, rng)?;
        Ok(Box::new(EpisodeTask::new(ep, spec.inner_batch_size, rng.random())))
    }
}

/// Non-episodic mini-batches over every class of a split (the joint source
/// distribution used by finetuning).
#[derive(Debug, Clone, Copy)]
pub struct JointSource<'a> {
    pub universe: &'a ClassUniverse,
    pub split: Split,
    pub batch_size: usize,
}

impl TaskSource for JointSource<'_> {
    fn next_task(&mut self, spec: &AlgorithmSpec, rng: &mut ChaCha8Rng) -> Result<Box<dyn AdaptationTask>> {
        let inner = (0..spec.inner_steps)
            .map(|_| sample_joint_batch(self.universe, self.split, self.batch_size, rng))
            .collect::<Result<Vec<_>>>()?;
        let outer = sample_joint_batch(self.universe, self.split, self.batch_size, rng)?;
        Ok(Box::new(BatchTask { inner, outer }))
    }
}

#[derive(Debug, Clone)]
pub struct SineSource {
    pub config: SineConfig,
    pub shots: usize,
    pub query: usize,
}

impl TaskSource for SineSource {
    fn next_task(&mut self, _spec: &AlgorithmSpec, rng: &mut ChaCha8Rng) -> Result<Box<dyn AdaptationTask>> {
        let task = sample_sine_task(&self.config, rng);
        let support = sine_batch(&task, self.shots, &self.config, rng)?;
        let query = sine_batch(&task, self.query, &self.config, rng)?;
        Ok(Box::new(RegressionTask { support, query }))
    }
}

// ---------------------------------------------------------------------------
// Inner loop

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationTrace {
    /// Loss on the inner batch before each step.
    pub support_loss: Vec<f64>,
    /// Euclidean norm of the full gradient before each step.
    pub grad_norm: Vec<f64>,
    /// Query loss after 0, 1, ... updates (empty when not observed).
    pub query_loss: Vec<f64>,
    pub query_accuracy: Vec<f64>,
    pub final_params: LayeredParams,
}

fn adapt(
    theta: &LayeredParams,
    task: &mut dyn AdaptationTask,
    lr: f64,
    steps: usize,
    mask: &[bool],
    observe_query: bool,
) -> Result<AdaptationTrace> {
    let mut p = theta.clone();
    let mut trace = AdaptationTrace {
        support_loss: Vec::with_capacity(steps),
        grad_norm: Vec::with_capacity(steps),
        query_loss: Vec::new(),
        query_accuracy: Vec::new(),
        final_params: theta.clone(),
    };
    let observe = |p: &LayeredParams, trace: &mut AdaptationTrace, task: &dyn AdaptationTask| -> Result<()> {
        if observe_query {
            if let Some((l, a)) = task.query_metrics(p)? {
                trace.query_loss.push(l);
                trace.query_accuracy.push(a);
            }
        }
        Ok(())
    };
    observe(&p, &mut trace, task)?;
    for step in 0..steps {
        let (loss, grad) = task.inner_loss_and_grad(&p, step)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite(format!("inner step {step}: loss {loss}")));
        }
        trace.support_loss.push(loss);
        trace.grad_norm.push(grad.norm());
        p = sgd_step(&p, &grad, lr, mask)?;
        observe(&p, &mut trace, task)?;
    }
    trace.final_params = p;
    Ok(trace)
}

/// `T` SGD steps from `theta` on the task's inner batches. `theta` is not
/// modified; the adapted parameters are returned with the trace.
pub fn inner_adapt(
    theta: &LayeredParams,
    task: &mut dyn AdaptationTask,
    spec: &AlgorithmSpec,
    mask: &[bool],
) -> Result<(LayeredParams, AdaptationTrace)> {
    if spec.inner_steps == 0 {
        return Err(Error::invalid("inner_steps must be >= 1"));
    }
    let trace = adapt(theta, task, spec.inner_lr, spec.inner_steps, mask, false)?;
    Ok((trace.final_params.clone(), trace))
}

// ---------------------------------------------------------------------------
// Outer loop

#[derive(Debug, Clone)]
pub struct MetaState {
    pub params: LayeredParams,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub spec: AlgorithmSpec,
}

/// Losses observed during one outer update, averaged over the meta-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterStats {
    /// Inner loss before the first step (initial performance).
    pub initial_loss: f64,
    /// Held-out loss at the adapted weights (first-order MAML only, else NaN).
    pub outer_loss: f64,
}

impl MetaState {
    pub fn new(params: LayeredParams, spec: AlgorithmSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            params,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            spec,
        })
    }

    /// Draws `meta_batch_size` tasks and applies one outer update.
    pub fn step(&mut self, source: &mut dyn TaskSource) -> Result<OuterStats> {
        let mut tasks = (0..self.spec.meta_batch_size)
            .map(|_| source.next_task(&self.spec, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        self.outer_update(&mut tasks)
    }

    /// Adapts to every task of the meta-batch and moves the initialization.
    pub fn outer_update(&mut self, tasks: &mut [Box<dyn AdaptationTask>]) -> Result<OuterStats> {
        let spec = &self.spec;
        if tasks.len() != spec.meta_batch_size {
            return Err(Error::invalid(format!(
                "meta-batch has {} tasks, spec wants {}",
                tasks.len(),
                spec.meta_batch_size
            )));
        }
        let mask = vec![true; self.params.num_layers()];
        let m = tasks.len() as f64;
        let mut initial_loss = 0.0;
        let mut outer_loss = 0.0;
        let mut direction = self.params.zeros_like();
        for task in tasks.iter_mut() {
            let (adapted, trace) = inner_adapt(&self.params, task.as_mut(), spec, &mask)?;
            initial_loss += trace.support_loss[0] / m;
            match spec.algorithm {
                Algorithm::Finetune => direction.add_scaled(1.0 / m, &adapted)?,
                Algorithm::Reptile => direction.add_scaled(1.0 / m, &adapted.sub(&self.params)?)?,
                Algorithm::Fomaml => {
                    let (l, g) = task.outer_loss_and_grad(&adapted)?;
                    outer_loss += l / m;
                    direction.add_scaled(1.0 / m, &g)?;
                }
            }
        }
        let next = match spec.algorithm {
            Algorithm::Finetune => direction,
            Algorithm::Reptile => {
                let mut p = self.params.clone();
                p.add_scaled(spec.outer_lr, &direction)?;
                p
            }
            Algorithm::Fomaml => {
                let mut p = self.params.clone();
                p.add_scaled(-spec.outer_lr, &direction)?;
                p
            }
        };
        if !next.all_finite() {
            return Err(Error::NonFinite(format!(
                "{} outer update at iteration {}",
                spec.algorithm, self.iteration
            )));
        }
        self.params = next;
        self.iteration += 1;
        Ok(OuterStats {
            initial_loss,
            outer_loss: if spec.algorithm == Algorithm::Fomaml {
                outer_loss
            } else {
                f64::NAN
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: u64,
    /// Mean initial inner loss since the previous validation.
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: LayeredParams,
    pub best_iteration: u64,
    pub best_metric: f64,
    pub final_state: MetaState,
    pub history: Vec<HistoryRow>,
}

/// Runs `iterations` outer updates, validating every `eval_every` iterations
/// and after the last one, and keeps the parameters with the highest
/// validation metric (earliest wins ties).
pub fn meta_train<F>(
    mut state: MetaState,
    source: &mut dyn TaskSource,
    iterations: u64,
    eval_every: u64,
    mut eval_fn: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&LayeredParams) -> Result<f64>,
{
    if iterations == 0 || eval_every == 0 {
        return Err(Error::invalid("iterations and eval_every must be >= 1"));
    }
    let mut history = Vec::new();
    let mut best: Option<(LayeredParams, u64, f64)> = None;
    let mut window = (0.0, 0usize);
    for i in 1..=iterations {
        let stats = state
            .step(source)
            .map_err(|e| Error::NonFinite(format!("meta-iteration {i}: {e}")))?;
        window.0 += stats.initial_loss;
        window.1 += 1;
        if i % eval_every == 0 || i == iterations {
            let metric = eval_fn(&state.params)?;
            history.push(HistoryRow {
                iteration: i,
                train_loss: window.0 / window.1 as f64,
                val_metric: metric,
            });
            window = (0.0, 0);
            if best.as_ref().is_none_or(|b| metric > b.2) {
                best = Some((state.params.clone(), i, metric));
            }
        }
    }
    let (best_params, best_iteration, best_metric) = best.expect("at least one validation");
    Ok(TrainOutcome {
        best_params,
        best_iteration,
        best_metric,
        final_state: state,
        history,
    })
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPolicy {
    Learned,
    RandomHead,
}

/// How a trained initialization is adapted to a new episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub steps: usize,
    pub lr: f64,
    pub head: HeadPolicy,
    pub mask: FreezeMode,
}

impl EvalProtocol {
    /// Finetuning swaps in a fresh head and trains only it; Reptile and MAML
    /// keep their learned head and adapt every layer.
    pub fn for_algorithm(algorithm: Algorithm, steps: usize, lr: f64) -> Self {
        match algorithm {
            Algorithm::Finetune => Self {
                steps,
                lr,
                head: HeadPolicy::RandomHead,
                mask: FreezeMode::BodyFrozen,
            },
            _ => Self {
                steps,
                lr,
                head: HeadPolicy::Learned,
                mask: FreezeMode::AllTrainable,
            },
        }
    }
}

/// Adapts `theta` on the episode's full support set for `steps` updates,
/// recording query accuracy after each of `0..=steps` updates.
pub fn adapt_and_evaluate(
    theta: &LayeredParams,
    episode: &Episode,
    steps: usize,
    lr: f64,
    head: HeadPolicy,
    mask: FreezeMode,
    head_seed: u64,
) -> Result<AdaptationTrace> {
    let start = match head {
        HeadPolicy::RandomHead => replace_head(theta, episode.way, head_seed)?,
        HeadPolicy::Learned => {
            if theta.output_dim() != episode.way {
                return Err(Error::invalid(format!(
                    "learned head has {} outputs but the episode is {}-way",
                    theta.output_dim(),
                    episode.way
                )));
            }
            theta.clone()
        }
    };
    let mask = freeze_mask(&start, mask);
    let mut task = EpisodeTask::new(episode.clone(), 0, 0);
    adapt(&start, &mut task, lr, steps, &mask, true)
}

pub fn evaluate_with(theta: &LayeredParams, episode: &Episode, protocol: &EvalProtocol, head_seed: u64) -> Result<AdaptationTrace> {
    adapt_and_evaluate(theta, episode, protocol.steps, protocol.lr, protocol.head, protocol.mask, head_seed)
}

/// A fixed, seeded list of episodes.
pub fn episode_bank(
    universe: &ClassUniverse,
    split: Split,
    way: usize,
    shot: usize,
    query: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| sample_episode(universe, split, way, shot, query, &mut rng))
        .collect()
}

/// Per-episode head seed, stable across runs.
pub fn head_seed(base: u64, episode_index: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ episode_index as u64
}

/// Mean post-adaptation query accuracy over `bank`.
pub fn mean_accuracy(theta: &LayeredParams, bank: &[Episode], protocol: &EvalProtocol, seed: u64) -> Result<f64> {
    if bank.is_empty() {
        return Err(Error::invalid("empty episode bank"));
    }
    let mut total = 0.0;
    for (i, ep) in bank.iter().enumerate() {
        let trace = evaluate_with(theta, ep, protocol, head_seed(seed, i))?;
        total += trace.query_accuracy.last().copied().unwrap_or(0.0);
    }
    Ok(total / bank.len() as f64)
}
