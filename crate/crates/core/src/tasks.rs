//! Task distributions: the two hand-built 1-D loss landscapes, sine-wave
//! regression, and synthetic N-way k-shot classification over a universe of
//! Gaussian classes split into disjoint meta-train/val/test class sets.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ScalarFn, Tensor};

// ---------------------------------------------------------------------------
// Loss landscapes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    A,
    B,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::A => "a",
            Scenario::B => "b",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyTask {
    First,
    Second,
}

/// Breakpoint of the piecewise second task in scenario b.
pub const KINK: f64 = 50.0;

pub fn landscape_loss(scenario: Scenario, task: ToyTask, x: f64) -> f64 {
    match (scenario, task) {
        (_, ToyTask::First) => 1.3 * (x - 5.0) * (x - 5.0),
        (Scenario::A, ToyTask::Second) => (x - 100.0) * (x - 100.0),
        (Scenario::B, ToyTask::Second) => {
            if x > KINK {
                (x - 100.0) * (x - 100.0)
            } else {
                -5.0 * x + 2750.0
            }
        }
    }
}

/// Analytic derivative; at the kink the left (linear) branch is used.
pub fn landscape_grad(scenario: Scenario, task: ToyTask, x: f64) -> f64 {
    match (scenario, task) {
        (_, ToyTask::First) => 2.6 * (x - 5.0),
        (Scenario::A, ToyTask::Second) => 2.0 * (x - 100.0),
        (Scenario::B, ToyTask::Second) => {
            if x > KINK {
                2.0 * (x - 100.0)
            } else {
                -5.0
            }
        }
    }
}

/// One toy task, usable as a graph primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LandscapeTask {
    pub scenario: Scenario,
    pub task: ToyTask,
}

impl ScalarFn for LandscapeTask {
    fn value(&self, x: f64) -> f64 {
        landscape_loss(self.scenario, self.task, x)
    }

    fn derivative(&self, x: f64) -> f64 {
        landscape_grad(self.scenario, self.task, x)
    }
}

// ---------------------------------------------------------------------------
// Sine regression

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineConfig {
    pub x_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    pub phase_range: (f64, f64),
}

impl Default for SineConfig {
    fn default() -> Self {
        Self {
            x_range: (-5.0, 5.0),
            amplitude_range: (0.1, 5.0),
            phase_range: (0.0, std::f64::consts::PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SineTask {
    pub fn target(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn sample_sine_task<R: Rng + ?Sized>(config: &SineConfig, rng: &mut R) -> SineTask {
    SineTask {
        amplitude: uniform_in(rng, config.amplitude_range),
        phase: uniform_in(rng, config.phase_range),
    }
}

/// `m` inputs drawn uniformly from the configured interval with exact targets,
/// both as `m x 1` matrices.
pub fn sine_batch<R: Rng + ?Sized>(
    task: &SineTask,
    m: usize,
    config: &SineConfig,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    if m == 0 {
        return Err(Error::invalid("sine batch needs at least one point"));
    }
    let xs: Vec<f64> = (0..m).map(|_| uniform_in(rng, config.x_range)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| task.target(x)).collect();
    Ok((Tensor::new(vec![m, 1], xs)?, Tensor::new(vec![m, 1], ys)?))
}

// ---------------------------------------------------------------------------
// Class universe

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistributionTag {
    #[default]
    InDistribution,
    Shifted,
}

impl DistributionTag {
    pub fn name(self) -> &'static str {
        match self {
            DistributionTag::InDistribution => "in_distribution",
            DistributionTag::Shifted => "shifted",
        }
    }
}

/// Disjoint class-id sets covering `0..universe_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClassSplits {
    pub fn classes(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_of(&self, class: usize) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.classes(s).contains(&class))
    }
}

/// Deterministically partitions shuffled class ids by `fractions`
/// (train and val sizes are rounded, test takes the remainder). Every split
/// must receive at least `min_per_split` classes.
pub fn make_class_splits(
    universe_size: usize,
    fractions: [f64; 3],
    seed: u64,
    min_per_split: usize,
) -> Result<ClassSplits> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| *f < 0.0 || !f.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions must be non-negative and sum to 1, got {fractions:?}")));
    }
    let n_train = (fractions[0] * universe_size as f64).round() as usize;
    let n_val = ((fractions[1] * universe_size as f64).round() as usize).min(universe_size - n_train.min(universe_size));
    let n_train = n_train.min(universe_size);
    let n_test = universe_size - n_train - n_val;
    for (name, n) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if n < min_per_split {
            return Err(Error::InsufficientClasses {
                what: format!("{name} split"),
                available: n,
                required: min_per_split,
            });
        }
    }
    let mut ids: Vec<usize> = (0..universe_size).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = ids[..n_train].to_vec();
    let mut val = ids[n_train..n_train + n_val].to_vec();
    let mut test = ids[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(ClassSplits { train, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseConfig {
    pub num_classes: usize,
    pub dim: usize,
    /// Prototypes live in the first `signal_dim` coordinates; noise is isotropic.
    pub signal_dim: usize,
    pub examples_per_class: usize,
    /// Prototype norm.
    pub prototype_scale: f64,
    pub noise_std: f64,
    pub fractions: [f64; 3],
    /// Norm of the translation applied to prototypes in the shifted universe.
    pub shift_translation: f64,
    pub seed: u64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            dim: 16,
            signal_dim: 4,
            examples_per_class: 100,
            prototype_scale: 1.0,
            noise_std: 0.25,
            fractions: [0.5, 0.25, 0.25],
            shift_translation: 0.5,
            seed: 0,
        }
    }
}

/// `(class, index within the class pool)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceId {
    pub class: usize,
    pub index: usize,
}

/// Gaussian classes with a fixed finite pool of examples each.
#[derive(Debug, Clone)]
pub struct ClassUniverse {
    config: UniverseConfig,
    splits: ClassSplits,
    tag: DistributionTag,
    prototypes: Vec<Vec<f64>>,
    scales: Vec<f64>,
    /// Standard-normal draws, one `examples_per_class x dim` matrix per class.
    noise: Vec<Tensor>,
    examples: Vec<Tensor>,
}

impl ClassUniverse {
    /// Builds the in-distribution universe. `min_per_split` is the largest way
    /// count episodes will request.
    pub fn generate(config: &UniverseConfig, min_per_split: usize) -> Result<Self> {
        if config.dim == 0 || config.signal_dim == 0 || config.signal_dim > config.dim {
            return Err(Error::invalid(format!(
                "need 0 < signal_dim <= dim, got {} and {}",
                config.signal_dim, config.dim
            )));
        }
        if config.examples_per_class < 2 {
            return Err(Error::invalid("each class needs at least two examples"));
        }
        let splits = make_class_splits(config.num_classes, config.fractions, config.seed, min_per_split)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut prototypes = Vec::with_capacity(config.num_classes);
        let mut scales = Vec::with_capacity(config.num_classes);
        let mut noise = Vec::with_capacity(config.num_classes);
        for _ in 0..config.num_classes {
            let mut z: Vec<f64> = (0..config.signal_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut z {
                *v *= config.prototype_scale / norm;
            }
            z.resize(config.dim, 0.0);
            prototypes.push(z);
            scales.push(config.noise_std * rng.random_range(0.8..1.2));
            noise.push(Tensor::from_fn(&[config.examples_per_class, config.dim], |_| {
                StandardNormal.sample(&mut rng)
            }));
        }
        let mut u = Self {
            config: config.clone(),
            splits,
            tag: DistributionTag::InDistribution,
            prototypes,
            scales,
            noise,
            examples: Vec::new(),
        };
        u.materialize();
        Ok(u)
    }

    /// The same classes and noise draws with every prototype mapped through a
    /// fixed rotation and translation.
    pub fn shifted(&self) -> Self {
        let d = self.config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5ee_d0f5_b1f7);
        let rotation = random_orthogonal(d, &mut rng);
        let mut translation: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let tn = translation.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut translation {
            *v *= self.config.shift_translation / tn;
        }
        let prototypes = self
            .prototypes
            .iter()
            .map(|p| {
                (0..d)
                    .map(|i| (0..d).map(|j| rotation[i * d + j] * p[j]).sum::<f64>() + translation[i])
                    .collect()
            })
            .collect();
        let mut u = Self {
            prototypes,
            tag: DistributionTag::Shifted,
            examples: Vec::new(),
            ..self.clone()
        };
        u.materialize();
        u
    }

    pub fn with_tag(&self, tag: DistributionTag) -> Self {
        match tag {
            DistributionTag::InDistribution if self.tag == tag => self.clone(),
            DistributionTag::Shifted if self.tag == tag => self.clone(),
            DistributionTag::Shifted => self.shifted(),
            DistributionTag::InDistribution => Self::generate(&self.config, 0)
                .map(|mut u| {
                    u.splits = self.splits.clone();
                    u
                })
                .expect("config already validated"),
        }
    }

    fn materialize(&mut self) {
        self.examples = (0..self.config.num_classes)
            .map(|c| {
                let noise = &self.noise[c];
                let d = self.config.dim;
                Tensor::from_fn(noise.shape(), |i| self.prototypes[c][i % d] + self.scales[c] * noise.data()[i])
            })
            .collect();
    }

    pub fn config(&self) -> &UniverseConfig {
        &self.config
    }

    pub fn splits(&self) -> &ClassSplits {
        &self.splits
    }

    pub fn tag(&self) -> DistributionTag {
        self.tag
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    pub fn example(&self, id: InstanceId) -> &[f64] {
        self.examples[id.class].row(id.index)
    }

    /// Stacks the given instances into an `n x dim` matrix.
    pub fn gather(&self, ids: &[InstanceId]) -> Tensor {
        let d = self.config.dim;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(self.example(id));
        }
        Tensor::new(vec![ids.len().max(1), d], data).unwrap_or_else(|_| Tensor::zeros(&[1, d]))
    }
}

/// Gram-Schmidt on a Gaussian matrix; row-major `d x d`.
fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(r) {
                *a -= dot * b;
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    rows.concat()
}

// ---------------------------------------------------------------------------
// Episodes

#[derive(Debug, Clone)]
pub struct Episode {
    pub support_x: Tensor,
    pub support_y: Vec<usize>,
    pub query_x: Tensor,
    pub query_y: Vec<usize>,
    pub way: usize,
    pub shot: usize,
    /// `class_map[label]` is the original class id.
    pub class_map: Vec<usize>,
    pub support_ids: Vec<InstanceId>,
    pub query_ids: Vec<InstanceId>,
}

impl Episode {
    pub fn support_len(&self) -> usize {
        self.support_y.len()
    }

    pub fn query_len(&self) -> usize {
        self.query_y.len()
    }
}

/// Samples `way` classes from `split`, then `shot` support and `query`
/// distinct query instances per class. Labels follow the sampled class order.
pub fn sample_episode<R: Rng + ?Sized>(
    universe: &ClassUniverse,
    split: Split,
    way: usize,
    shot: usize,
    query: usize,
    rng: &mut R,
) -> Result<Episode> {
    let classes = universe.splits().classes(split);
    if classes.len() < way || way == 0 {
        return Err(Error::InsufficientClasses {
            what: format!("{split:?} split"),
            available: classes.len(),
            required: way.max(1),
        });
    }
    if shot == 0 || query == 0 {
        return Err(Error::invalid("episodes need shot >= 1 and query >= 1"));
    }
    let pool = universe.config().examples_per_class;
    if shot + query > pool {
        return Err(Error::invalid(format!(
            "{shot} support + {query} query examples exceed the {pool} available per class"
        )));
    }
    let class_map: Vec<usize> = index::sample(rng, classes.len(), way)
        .into_iter()
        .map(|i| classes[i])
        .collect();
    let mut support_ids = Vec::with_capacity(way * shot);
    let mut query_ids = Vec::with_capacity(way * query);
    let mut support_y = Vec::with_capacity(way * shot);
    let mut query_y = Vec::with_capacity(way * query);
    for (label, &class) in class_map.iter().enumerate() {
        let picks = index::sample(rng, pool, shot + query).into_vec();
        for (j, &index) in picks.iter().enumerate() {
            let id = InstanceId { class, index };
            if j < shot {
                support_ids.push(id);
                support_y.push(label);
            } else {
                query_ids.push(id);
                query_y.push(label);
            }
        }
    }
    Ok(Episode {
        support_x: universe.gather(&support_ids),
        support_y,
        query_x: universe.gather(&query_ids),
        query_y,
        way,
        shot,
        class_map,
        support_ids,
        query_ids,
    })
}

/// A non-episodic mini-batch over every class of `split`, labelled by the
/// class's position in the split.
pub fn sample_joint_batch<R: Rng + ?Sized>(
    universe: &ClassUniverse,
    split: Split,
    batch_size: usize,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>)> {
    let classes = universe.splits().classes(split);
    if classes.is_empty() || batch_size == 0 {
        return Err(Error::invalid("joint batch needs classes and a positive batch size"));
    }
    let pool = universe.config().examples_per_class;
    let mut ids = Vec::with_capacity(batch_size);
    let mut labels = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let label = rng.random_range(0..classes.len());
        ids.push(InstanceId {
            class: classes[label],
            index: rng.random_range(0..pool),
        });
        labels.push(label);
    }
    Ok((universe.gather(&ids), labels))
}

/// Per-class split of every instance of `split` into a `train_fraction` part
/// and the rest. Labels are class positions within the split.
#[derive(Debug, Clone)]
pub struct StratifiedSplit {
    pub train: Vec<InstanceId>,
    pub train_labels: Vec<usize>,
    pub test: Vec<InstanceId>,
    pub test_labels: Vec<usize>,
}

pub fn stratified_split(universe: &ClassUniverse, split: Split, train_fraction: f64, seed: u64) -> Result<StratifiedSplit> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let pool = universe.config().examples_per_class;
    let n_train = ((pool as f64) * train_fraction).round() as usize;
    if n_train == 0 || n_train == pool {
        return Err(Error::invalid("stratified split leaves one side empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = StratifiedSplit {
        train: Vec::new(),
        train_labels: Vec::new(),
        test: Vec::new(),
        test_labels: Vec::new(),
    };
    for (label, &class) in universe.splits().classes(split).iter().enumerate() {
        let mut idx: Vec<usize> = (0..pool).collect();
        idx.shuffle(&mut rng);
        for (j, index) in idx.into_iter().enumerate() {
            let id = InstanceId { class, index };
            if j < n_train {
                out.train.push(id);
                out.train_labels.push(label);
            } else {
                out.test.push(id);
                out.test_labels.push(label);
            }
        }
    }
    Ok(out)
}
