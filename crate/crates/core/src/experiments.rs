//! Analysis protocols: the 1-D landscape study, head ablation, training-shot
//! sweep, joint classification accuracy and its correlation with few-shot
//! accuracy, plus the statistics they report.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::metaopt::{
    episode_bank, evaluate_with, head_seed, meta_train, mean_accuracy, Algorithm, AlgorithmSpec, EpisodeSource,
    EvalProtocol, HeadPolicy, JointSource, LandscapeSource, MetaState, TaskSource,
};
use crate::model::{freeze_mask, init_params, replace_head, Activation, FreezeMode, LayeredParams, ModelConfig, Target};
use crate::numerics::sgd_step;
use crate::tasks::{stratified_split, ClassUniverse, DistributionTag, Episode, Scenario, Split, UniverseConfig};

// ---------------------------------------------------------------------------
// Statistics

/// Product-moment correlation and its two-sided p-value from the
/// t-distribution with `n − 2` degrees of freedom. A perfect fit gives `p = 0`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::Statistics(format!("length mismatch: {n} vs {}", ys.len())));
    }
    if n < 3 {
        return Err(Error::Statistics(format!("pearson needs n >= 3, got {n}")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Statistics("zero variance input".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    let p = if one_minus <= 0.0 {
        0.0
    } else {
        // P(|T| > |t|) = I_{df/(df+t²)}(df/2, 1/2), and df/(df+t²) = 1 − r².
        beta_reg(df / 2.0, 0.5, one_minus).clamp(0.0, 1.0)
    };
    Ok((r, p))
}

/// Sample mean and the half-width `1.96·s/√n`.
pub fn mean_ci95(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Statistics(format!("confidence interval needs n >= 2, got {n}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    /// Values that fell outside the edges and were left out.
    pub excluded: usize,
}

/// Uniform-bin density estimate; the upper edge belongs to the last bin.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::invalid(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    let mut excluded = 0;
    for &v in values {
        if !(lo..=hi).contains(&v) {
            excluded += 1;
            continue;
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = (values.len() - excluded) as f64;
    let masses = counts
        .iter()
        .map(|&c| if total > 0.0 { c as f64 / total } else { 0.0 })
        .collect();
    Ok(Histogram { edges, masses, excluded })
}

// ---------------------------------------------------------------------------
// Landscape study

pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Step sizes for one algorithm on the toy landscapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyRates {
    pub inner_lr: f64,
    #[serde(default)]
    pub outer_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub scenario: Scenario,
    pub inner_steps: usize,
    pub meta_iterations: u64,
    pub num_inits: usize,
    pub init_range: (f64, f64),
    pub bins: usize,
    pub finetune: ToyRates,
    pub reptile: ToyRates,
    pub fomaml: ToyRates,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::A,
            inner_steps: 5,
            meta_iterations: 10_000,
            num_inits: 100,
            init_range: (-200.0, 200.0),
            bins: 80,
            finetune: ToyRates {
                inner_lr: 0.005,
                outer_lr: 0.0,
            },
            reptile: ToyRates {
                inner_lr: 0.034,
                outer_lr: 0.015,
            },
            fomaml: ToyRates {
                inner_lr: 0.1,
                outer_lr: 0.5,
            },
        }
    }
}

impl ToyConfig {
    pub fn spec(&self, algorithm: Algorithm) -> AlgorithmSpec {
        let (r, build): (ToyRates, fn(f64, usize, f64) -> AlgorithmSpec) = match algorithm {
            Algorithm::Finetune => (self.finetune, |a, t, _| AlgorithmSpec::finetune(a, t)),
            Algorithm::Reptile => (self.reptile, AlgorithmSpec::reptile),
            Algorithm::Fomaml => (self.fomaml, AlgorithmSpec::fomaml),
        };
        build(r.inner_lr, self.inner_steps, r.outer_lr)
    }

    pub fn inits(&self) -> Vec<f64> {
        let (lo, hi) = self.init_range;
        let n = self.num_inits;
        if n == 1 {
            return vec![(lo + hi) / 2.0];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyResult {
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub inner_steps: usize,
    pub inits: Vec<f64>,
    /// Final θ per initialization; `None` when the run diverged.
    pub finals: Vec<Option<f64>>,
    pub diverged: usize,
    /// Mean final θ over converged runs.
    pub mean_final: f64,
    pub std_final: f64,
    pub density: Histogram,
}

impl ToyResult {
    pub fn converged(&self) -> Vec<f64> {
        self.finals.iter().flatten().copied().collect()
    }
}

/// Meta-trains one scalar initialization; `None` on divergence.
pub fn toy_run(spec: &AlgorithmSpec, scenario: Scenario, init: f64, iterations: u64) -> Result<Option<f64>> {
    let mut state = MetaState::new(LayeredParams::scalar(init), spec.clone(), 0)?;
    let mut source = LandscapeSource::new(scenario);
    for _ in 0..iterations {
        match state.step(&mut source) {
            Ok(_) => {}
            Err(Error::NonFinite(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
        if state.params.first_value().abs() > DIVERGENCE_LIMIT {
            return Ok(None);
        }
    }
    Ok(Some(state.params.first_value()))
}

pub fn run_toy_algorithm(cfg: &ToyConfig, algorithm: Algorithm) -> Result<ToyResult> {
    let spec = cfg.spec(algorithm);
    spec.validate()?;
    let inits = cfg.inits();
    let finals = inits
        .par_iter()
        .map(|&x| toy_run(&spec, cfg.scenario, x, cfg.meta_iterations))
        .collect::<Result<Vec<_>>>()?;
    let ok: Vec<f64> = finals.iter().flatten().copied().collect();
    let (mean_final, std_final) = if ok.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = ok.iter().sum::<f64>() / ok.len() as f64;
        let v = ok.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ok.len() as f64;
        (m, v.sqrt())
    };
    let (lo, hi) = cfg.init_range;
    Ok(ToyResult {
        algorithm,
        scenario: cfg.scenario,
        inner_steps: cfg.inner_steps,
        diverged: finals.len() - ok.len(),
        density: histogram(&ok, cfg.bins, lo, hi)?,
        inits,
        finals,
        mean_final,
        std_final,
    })
}

pub fn run_toy(cfg: &ToyConfig) -> Result<Vec<ToyResult>> {
    Algorithm::ALL.iter().map(|&a| run_toy_algorithm(cfg, a)).collect()
}

// ---------------------------------------------------------------------------
// Few-shot classification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    pub universe: UniverseConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub way: usize,
    pub train_shot: usize,
    pub eval_shot: usize,
    pub query: usize,
    pub meta_iterations: u64,
    pub eval_every: u64,
    pub val_episodes: usize,
    pub test_episodes: usize,
    /// Mini-batch size of the joint source used by finetuning.
    pub joint_batch: usize,
    pub finetune: AlgorithmSpec,
    pub reptile: AlgorithmSpec,
    pub fomaml: AlgorithmSpec,
    pub eval_steps: usize,
    pub eval_lr: f64,
    pub joint_epochs: usize,
    pub joint_lr: f64,
    pub joint_batch_eval: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            universe: UniverseConfig::default(),
            hidden: vec![32],
            activation: Activation::Relu,
            way: 5,
            train_shot: 1,
            eval_shot: 1,
            query: 15,
            meta_iterations: 2000,
            eval_every: 200,
            val_episodes: 200,
            test_episodes: 300,
            joint_batch: 50,
            finetune: AlgorithmSpec::finetune(0.1, 1),
            reptile: AlgorithmSpec::reptile(0.1, 5, 0.3),
            fomaml: AlgorithmSpec::fomaml(0.1, 5, 0.3).with_meta_batch(4),
            eval_steps: 10,
            eval_lr: 0.1,
            joint_epochs: 30,
            joint_lr: 0.1,
            joint_batch_eval: 25,
        }
    }
}

impl FewShotConfig {
    pub fn spec(&self, algorithm: Algorithm) -> &AlgorithmSpec {
        match algorithm {
            Algorithm::Finetune => &self.finetune,
            Algorithm::Reptile => &self.reptile,
            Algorithm::Fomaml => &self.fomaml,
        }
    }

    pub fn protocol(&self, algorithm: Algorithm) -> EvalProtocol {
        EvalProtocol::for_algorithm(algorithm, self.eval_steps, self.eval_lr)
    }

    pub fn validate(&self) -> Result<()> {
        for a in Algorithm::ALL {
            let spec = self.spec(a);
            if spec.algorithm != a {
                return Err(Error::invalid(format!("{a} section holds a {} spec", spec.algorithm)));
            }
            spec.validate()?;
        }
        if self.way < 2 || self.train_shot == 0 || self.eval_shot == 0 || self.query == 0 {
            return Err(Error::invalid("way >= 2 and positive shot/query counts required"));
        }
        if self.eval_every == 0 || self.meta_iterations == 0 {
            return Err(Error::invalid("meta_iterations and eval_every must be >= 1"));
        }
        if self.val_episodes == 0 || self.test_episodes < 2 || self.joint_batch == 0 || self.joint_batch_eval == 0 {
            return Err(Error::invalid("episode counts and batch sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub params: LayeredParams,
    pub best_iteration: u64,
    pub best_metric: f64,
    pub history: Vec<crate::metaopt::HistoryRow>,
}

/// Trains one method on the meta-train split and keeps the checkpoint with
/// the best meta-validation accuracy.
pub fn train_method(
    cfg: &FewShotConfig,
    universe: &ClassUniverse,
    algorithm: Algorithm,
    hidden: &[usize],
    train_shot: usize,
    seed: u64,
) -> Result<TrainedModel> {
    let spec = cfg.spec(algorithm).clone();
    let outputs = match algorithm {
        Algorithm::Finetune => universe.splits().train.len(),
        _ => cfg.way,
    };
    let model = ModelConfig::new(universe.dim(), hidden, outputs)
        .with_activation(cfg.activation)
        .with_seed(seed);
    let params = init_params(&model)?;
    let state = MetaState::new(params, spec, seed ^ 0x5eed_0001)?;
    let mut episodes = EpisodeSource {
        universe,
        split: Split::Train,
        way: cfg.way,
        shot: train_shot,
        query: cfg.query,
    };
    let mut joint = JointSource {
        universe,
        split: Split::Train,
        batch_size: cfg.joint_batch,
    };
    let source: &mut dyn TaskSource = match algorithm {
        Algorithm::Finetune => &mut joint,
        _ => &mut episodes,
    };
    let bank = episode_bank(
        universe,
        Split::Val,
        cfg.way,
        cfg.eval_shot,
        cfg.query,
        cfg.val_episodes,
        seed ^ 0x5eed_0002,
    )?;
    let protocol = cfg.protocol(algorithm);
    let out = meta_train(state, source, cfg.meta_iterations, cfg.eval_every, |p| {
        mean_accuracy(p, &bank, &protocol, seed)
    })?;
    Ok(TrainedModel {
        algorithm,
        hidden: hidden.to_vec(),
        seed,
        params: out.best_params,
        best_iteration: out.best_iteration,
        best_metric: out.best_metric,
        history: out.history,
    })
}

/// Test-split episodes for a seed, on whichever universe is passed.
pub fn test_bank(cfg: &FewShotConfig, universe: &ClassUniverse, shot: usize, seed: u64) -> Result<Vec<Episode>> {
    episode_bank(universe, Split::Test, cfg.way, shot, cfg.query, cfg.test_episodes, seed ^ 0x7e57)
}

/// Mean post-adaptation accuracy on `eval_shot` test episodes.
pub fn few_shot_accuracy(cfg: &FewShotConfig, universe: &ClassUniverse, model: &TrainedModel, seed: u64) -> Result<f64> {
    let bank = test_bank(cfg, universe, cfg.eval_shot, seed)?;
    mean_accuracy(&model.params, &bank, &cfg.protocol(model.algorithm), seed)
}

// ---------------------------------------------------------------------------
// Head ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// (mean, 95% half-width) of query accuracy after 0..=steps updates.
    pub accuracy: Vec<(f64, f64)>,
    /// (mean, 95% half-width) of the gradient norm before updates 1..=steps.
    pub grad_norm: Vec<(f64, f64)>,
    /// Final-step accuracy per episode.
    pub final_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadAblation {
    pub learned: StepStats,
    pub random_head: StepStats,
}

fn step_stats(traces: &[crate::metaopt::AdaptationTrace]) -> Result<StepStats> {
    let column = |f: &dyn Fn(&crate::metaopt::AdaptationTrace) -> &Vec<f64>| -> Result<Vec<(f64, f64)>> {
        let len = f(&traces[0]).len();
        (0..len)
            .map(|i| mean_ci95(&traces.iter().map(|t| f(t)[i]).collect::<Vec<_>>()))
            .collect()
    };
    Ok(StepStats {
        accuracy: column(&|t| &t.query_accuracy)?,
        grad_norm: column(&|t| &t.grad_norm)?,
        final_accuracy: traces.iter().map(|t| *t.query_accuracy.last().unwrap()).collect(),
    })
}

/// Adapts a learned-head and a fresh-head copy of `params` on every episode,
/// training all layers in both cases.
pub fn run_head_ablation(params: &LayeredParams, bank: &[Episode], steps: usize, lr: f64, seed: u64) -> Result<HeadAblation> {
    if bank.len() < 2 {
        return Err(Error::invalid("head ablation needs at least 2 episodes"));
    }
    let run = |head: HeadPolicy| -> Result<StepStats> {
        let protocol = EvalProtocol {
            steps,
            lr,
            head,
            mask: FreezeMode::AllTrainable,
        };
        let traces = bank
            .par_iter()
            .enumerate()
            .map(|(i, ep)| evaluate_with(params, ep, &protocol, head_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        step_stats(&traces)
    };
    Ok(HeadAblation {
        learned: run(HeadPolicy::Learned)?,
        random_head: run(HeadPolicy::RandomHead)?,
    })
}

// ---------------------------------------------------------------------------
// Training-shot sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub algorithm: Algorithm,
    pub k_train: usize,
    /// Base seed; the runs use `seed..seed + per_seed.len()`.
    pub seed: u64,
    pub accuracy_mean: f64,
    pub accuracy_min: f64,
    pub accuracy_max: f64,
    pub per_seed: Vec<f64>,
}

/// Trains each algorithm at each support size and evaluates on
/// `eval_shot`-shot test episodes, over `num_seeds` consecutive seeds.
pub fn run_k_sweep(
    cfg: &FewShotConfig,
    universe: &ClassUniverse,
    algorithms: &[Algorithm],
    k_values: &[usize],
    seed: u64,
    num_seeds: usize,
) -> Result<Vec<SweepResult>> {
    if num_seeds == 0 {
        return Err(Error::invalid("sweep needs at least one seed"));
    }
    let jobs: Vec<(Algorithm, usize, u64)> = algorithms
        .iter()
        .flat_map(|&a| k_values.iter().flat_map(move |&k| (0..num_seeds as u64).map(move |s| (a, k, seed + s))))
        .collect();
    let accs = jobs
        .par_iter()
        .map(|&(a, k, s)| {
            let model = train_method(cfg, universe, a, &cfg.hidden, k, s)?;
            few_shot_accuracy(cfg, universe, &model, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(jobs
        .chunks(num_seeds)
        .zip(accs.chunks(num_seeds))
        .map(|(job, acc)| SweepResult {
            algorithm: job[0].0,
            k_train: job[0].1,
            seed,
            accuracy_mean: acc.iter().sum::<f64>() / acc.len() as f64,
            accuracy_min: acc.iter().copied().fold(f64::INFINITY, f64::min),
            accuracy_max: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            per_seed: acc.to_vec(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Joint classification accuracy

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            batch_size: 25,
            train_fraction: 0.6,
        }
    }
}

impl From<&FewShotConfig> for JointConfig {
    fn from(cfg: &FewShotConfig) -> Self {
        Self {
            epochs: cfg.joint_epochs,
            lr: cfg.joint_lr,
            batch_size: cfg.joint_batch_eval,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointAccuracy {
    pub accuracy: f64,
    /// Frozen body with the trained head.
    pub params: LayeredParams,
}

/// Trains a fresh head over every meta-test class on a stratified split of
/// their instances, body frozen, and reports held-out accuracy.
pub fn joint_accuracy(theta: &LayeredParams, universe: &ClassUniverse, cfg: &JointConfig, seed: u64) -> Result<JointAccuracy> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("joint batch size must be positive"));
    }
    let classes = universe.splits().test.len();
    let split = stratified_split(universe, Split::Test, cfg.train_fraction, seed)?;
    let mut params = replace_head(theta, classes, seed)?;
    let mask = freeze_mask(&params, FreezeMode::BodyFrozen);
    let train_x = universe.gather(&split.train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = train_x.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| split.train_labels[i]).collect();
            let (_, g) = params.loss_and_grad(&x, Target::Classes(&y))?;
            params = sgd_step(&params, &g, cfg.lr, &mask)?;
        }
    }
    let accuracy = params.accuracy(&universe.gather(&split.test), &split.test_labels)?;
    Ok(JointAccuracy { accuracy, params })
}

pub fn run_joint_accuracy(theta: &LayeredParams, universe: &ClassUniverse, cfg: &JointConfig, seed: u64) -> Result<f64> {
    joint_accuracy(theta, universe, cfg, seed).map(|j| j.accuracy)
}

// ---------------------------------------------------------------------------
// Correlation study

/// Label for a hidden-width configuration, e.g. `32x32`.
pub fn capacity_label(hidden: &[usize]) -> String {
    if hidden.is_empty() {
        return "linear".into();
    }
    hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Algorithm,
    pub capacity: String,
    pub seed: u64,
    pub universe: DistributionTag,
    pub joint_accuracy: f64,
    pub few_shot_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    /// Method name, or `all` for the pooled row.
    pub method: String,
    pub capacity: String,
    pub universe: DistributionTag,
    pub pairs: Vec<(f64, f64)>,
    /// `None` when undefined (fewer than 3 pairs or a constant series).
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
}

pub const SIGNIFICANCE: f64 = 0.005;

fn correlate(method: String, capacity: String, universe: DistributionTag, pairs: Vec<(f64, f64)>) -> CorrelationResult {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let (r, p) = match pearson(&xs, &ys) {
        Ok((r, p)) => (Some(r), Some(p)),
        Err(_) => (None, None),
    };
    CorrelationResult {
        method,
        capacity,
        universe,
        pairs,
        r,
        p,
        significant: p.is_some_and(|p| p < SIGNIFICANCE),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStudy {
    pub runs: Vec<RunRecord>,
    /// Per (method, capacity, universe), then one pooled row per universe.
    pub results: Vec<CorrelationResult>,
}

impl CorrelationStudy {
    pub fn runs_for(&self, method: Algorithm, universe: DistributionTag) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(move |r| r.method == method && r.universe == universe)
    }

    fn mean_of(&self, method: Algorithm, universe: DistributionTag, f: fn(&RunRecord) -> f64) -> f64 {
        let v: Vec<f64> = self.runs_for(method, universe).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn mean_joint_accuracy(&self, method: Algorithm, universe: DistributionTag) -> f64 {
        self.mean_of(method, universe, |r| r.joint_accuracy)
    }

    pub fn mean_few_shot_accuracy(&self, method: Algorithm, universe: DistributionTag) -> f64 {
        self.mean_of(method, universe, |r| r.few_shot_accuracy)
    }
}

/// Trains every (method, capacity, seed) once on the in-distribution
/// universe and measures joint and few-shot accuracy on both universes.
pub fn run_correlation_study(
    cfg: &FewShotConfig,
    universe: &ClassUniverse,
    methods: &[Algorithm],
    capacities: &[Vec<usize>],
    seeds: &[u64],
) -> Result<CorrelationStudy> {
    let shifted = universe.shifted();
    let joint_cfg = JointConfig::from(cfg);
    let jobs: Vec<(Algorithm, &Vec<usize>, u64)> = methods
        .iter()
        .flat_map(|&m| capacities.iter().flat_map(move |c| seeds.iter().map(move |&s| (m, c, s))))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(method, hidden, seed)| {
            let model = train_method(cfg, universe, method, hidden, cfg.train_shot, seed)?;
            [universe, &shifted]
                .into_iter()
                .map(|u| {
                    Ok(RunRecord {
                        method,
                        capacity: capacity_label(hidden),
                        seed,
                        universe: u.tag(),
                        joint_accuracy: run_joint_accuracy(&model.params, u, &joint_cfg, seed)?,
                        few_shot_accuracy: few_shot_accuracy(cfg, u, &model, seed)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<RunRecord> = per_job.into_iter().flatten().collect();

    let mut results = Vec::new();
    for tag in [DistributionTag::InDistribution, DistributionTag::Shifted] {
        for &method in methods {
            for hidden in capacities {
                let cap = capacity_label(hidden);
                let pairs = runs
                    .iter()
                    .filter(|r| r.universe == tag && r.method == method && r.capacity == cap)
                    .map(|r| (r.joint_accuracy, r.few_shot_accuracy))
                    .collect();
                results.push(correlate(method.name().into(), cap, tag, pairs));
            }
        }
        let pooled = runs
            .iter()
            .filter(|r| r.universe == tag)
            .map(|r| (r.joint_accuracy, r.few_shot_accuracy))
            .collect();
        results.push(correlate("all".into(), "all".into(), tag, pooled));
    }
    Ok(CorrelationStudy { runs, results })
}
