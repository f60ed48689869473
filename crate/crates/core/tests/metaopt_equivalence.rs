use gbml_core::metaopt::{
    inner_adapt, meta_train, AdaptationTask, AlgorithmSpec, BatchTask, EpisodeTask, LandscapeObjective, LandscapeSource,
    MetaState,
};
use gbml_core::model::{init_params, LayeredParams, ModelConfig, Target};
use gbml_core::numerics::sgd_step;
use gbml_core::tasks::{
    sample_episode, sample_joint_batch, ClassUniverse, Episode, LandscapeTask, Scenario, Split, ToyTask, UniverseConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(outputs: usize) -> (ClassUniverse, LayeredParams) {
    let u = ClassUniverse::generate(&UniverseConfig::default(), 5).unwrap();
    let p = init_params(&ModelConfig::new(16, &[12], outputs).with_seed(3)).unwrap();
    (u, p)
}

fn episodes(u: &ClassUniverse, n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_episode(u, Split::Train, 5, 1, 5, &mut rng).unwrap()).collect()
}

fn boxed(ep: &Episode) -> Box<dyn AdaptationTask> {
    Box::new(EpisodeTask::new(ep.clone(), 0, 0))
}

#[test]
fn reptile_single_step_is_sgd_with_product_rate() {
    let (u, p0) = setup(5);
    let (alpha, eps) = (0.2, 0.35);
    let eps_list = episodes(&u, 100, 11);
    let mut st = MetaState::new(p0.clone(), AlgorithmSpec::reptile(alpha, 1, eps), 0).unwrap();
    let mut sgd = p0;
    let mask = [true, true];
    let mut worst = 0.0f64;
    for ep in &eps_list {
        st.outer_update(&mut [boxed(ep)]).unwrap();
        let (_, g) = sgd.loss_and_grad(&ep.support_x, Target::Classes(&ep.support_y)).unwrap();
        sgd = sgd_step(&sgd, &g, eps * alpha, &mask).unwrap();
        worst = worst.max(st.params.max_abs_diff(&sgd).unwrap());
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn fomaml_without_inner_steps_is_sgd_on_query() {
    let (u, p0) = setup(5);
    let beta = 0.15;
    let mut st = MetaState::new(p0.clone(), AlgorithmSpec::fomaml(0.0, 3, beta), 0).unwrap();
    let mut sgd = p0;
    let mut worst = 0.0f64;
    for ep in &episodes(&u, 100, 12) {
        st.outer_update(&mut [boxed(ep)]).unwrap();
        let (_, g) = sgd.loss_and_grad(&ep.query_x, Target::Classes(&ep.query_y)).unwrap();
        sgd = sgd_step(&sgd, &g, beta, &[true, true]).unwrap();
        worst = worst.max(st.params.max_abs_diff(&sgd).unwrap());
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn finetune_single_step_is_sgd_on_the_stream() {
    let (u, p0) = setup(10);
    let alpha = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let stream: Vec<_> = (0..100).map(|_| sample_joint_batch(&u, Split::Train, 20, &mut rng).unwrap()).collect();
    let mut st = MetaState::new(p0.clone(), AlgorithmSpec::finetune(alpha, 1), 0).unwrap();
    let mut sgd = p0;
    let mut worst = 0.0f64;
    for b in &stream {
        let task: Box<dyn AdaptationTask> = Box::new(BatchTask {
            inner: vec![b.clone()],
            outer: b.clone(),
        });
        st.outer_update(&mut [task]).unwrap();
        let (_, g) = sgd.loss_and_grad(&b.0, Target::Classes(&b.1)).unwrap();
        sgd = sgd_step(&sgd, &g, alpha, &[true, true]).unwrap();
        worst = worst.max(st.params.max_abs_diff(&sgd).unwrap());
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn meta_batch_update_averages_single_updates() {
    let (u, p0) = setup(5);
    let eps_list = episodes(&u, 4, 14);
    for spec in [
        AlgorithmSpec::reptile(0.1, 3, 0.4).with_meta_batch(4),
        AlgorithmSpec::fomaml(0.1, 3, 0.2).with_meta_batch(4),
    ] {
        let mut batched = MetaState::new(p0.clone(), spec.clone(), 0).unwrap();
        let mut tasks: Vec<_> = eps_list.iter().map(boxed).collect();
        batched.outer_update(&mut tasks).unwrap();

        let singles: Vec<LayeredParams> = eps_list
            .iter()
            .map(|ep| {
                let mut s = MetaState::new(p0.clone(), spec.clone().with_meta_batch(1), 0).unwrap();
                s.outer_update(&mut [boxed(ep)]).unwrap();
                s.params
            })
            .collect();
        let avg = LayeredParams::mean_of(&singles).unwrap();
        assert!(batched.params.max_abs_diff(&avg).unwrap() <= 1e-12);
    }
}

/// Fixed-target task: one inner step of lr 1 jumps straight to `target`.
struct Jump(Vec<f64>);

impl AdaptationTask for Jump {
    fn inner_loss_and_grad(&mut self, p: &LayeredParams, _: usize) -> gbml_core::Result<(f64, LayeredParams)> {
        let diff: Vec<f64> = p.flatten().iter().zip(&self.0).map(|(a, b)| a - b).collect();
        Ok((0.0, p.with_flat(&diff)?))
    }
    fn outer_loss_and_grad(&mut self, p: &LayeredParams) -> gbml_core::Result<(f64, LayeredParams)> {
        Ok((0.0, p.zeros_like()))
    }
}

#[test]
fn reptile_interpolation_on_three_parameters() {
    // a 1 -> 1 -> 1 network has weights w1, w2 and biases b1, b2; use a
    // 2-input single layer instead: 2 weights + 1 bias
    let p0 = init_params(&ModelConfig::new(2, &[], 1).with_seed(1)).unwrap();
    assert_eq!(p0.num_params(), 3);
    let theta = p0.flatten();
    let target = vec![1.5, -2.0, 0.25];
    let eps = 0.3;
    let mut st = MetaState::new(p0, AlgorithmSpec::reptile(1.0, 1, eps), 0).unwrap();
    st.outer_update(&mut [Box::new(Jump(target.clone())) as Box<dyn AdaptationTask>]).unwrap();
    for ((got, t), th) in st.params.flatten().iter().zip(&target).zip(&theta) {
        assert!((got - (th + eps * (t - th))).abs() <= 1e-12);
    }
}

#[test]
fn inner_adapt_leaves_theta_untouched() {
    let (u, p0) = setup(5);
    let before = p0.clone();
    let ep = &episodes(&u, 1, 15)[0];
    let mut task = EpisodeTask::new(ep.clone(), 0, 0);
    let (adapted, trace) = inner_adapt(&p0, &mut task, &AlgorithmSpec::reptile(0.5, 4, 1.0), &[true, true]).unwrap();
    assert_eq!(p0, before);
    assert_ne!(adapted, p0);
    assert_eq!(trace.support_loss.len(), 4);
    assert!(trace.grad_norm.iter().all(|&g| g >= 0.0));
}

#[test]
fn same_seed_same_history() {
    let (u, p0) = setup(5);
    let run = || {
        let st = MetaState::new(p0.clone(), AlgorithmSpec::fomaml(0.1, 2, 0.1).with_meta_batch(2), 21).unwrap();
        let mut src = gbml_core::metaopt::EpisodeSource {
            universe: &u,
            split: Split::Train,
            way: 5,
            shot: 1,
            query: 5,
        };
        meta_train(st, &mut src, 30, 10, |p| Ok(p.norm())).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.best_params, b.best_params);
    assert_eq!(a.final_state.iteration, 30);
}

#[test]
fn finetune_on_fixed_quadratic_never_increases_loss() {
    let task = LandscapeTask {
        scenario: Scenario::A,
        task: ToyTask::First,
    };
    let mut st = MetaState::new(LayeredParams::scalar(-150.0), AlgorithmSpec::finetune(0.01, 1), 0).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let stats = st
            .outer_update(&mut [Box::new(LandscapeObjective(task)) as Box<dyn AdaptationTask>])
            .unwrap();
        assert!(stats.initial_loss <= last);
        last = stats.initial_loss;
    }
}

#[test]
fn alternating_landscape_source() {
    let spec = AlgorithmSpec::finetune(0.1, 1);
    let mut st = MetaState::new(LayeredParams::scalar(0.0), spec, 0).unwrap();
    let mut src = LandscapeSource::new(Scenario::A);
    // step 1 on task 1 from 0: 0 - 0.1 * 2.6 * (0 - 5) = 1.3
    st.step(&mut src).unwrap();
    assert!((st.params.first_value() - 1.3).abs() < 1e-12);
    // step 2 on task 2 from 1.3: 1.3 - 0.1 * 2 * (1.3 - 100) = 21.04
    st.step(&mut src).unwrap();
    assert!((st.params.first_value() - 21.04).abs() < 1e-12);
}
