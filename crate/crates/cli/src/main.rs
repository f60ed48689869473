use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gbml_core::experiments::{
    few_shot_accuracy, joint_accuracy, mean_ci95, run_correlation_study, run_head_ablation, run_k_sweep,
    run_toy, test_bank, train_method, JointConfig, TrainedModel,
};
use gbml_core::io::{
    ablation_table, correlate_table, history_table, load_checkpoint, parse_config, runs_table, save_checkpoint,
    sweep_table, toy_density_table, toy_finals_table, toy_summary_table, write_results, Cell, Checkpoint,
    ExperimentConfig, ExperimentKind, Table,
};
use gbml_core::metaopt::evaluate_with;
use gbml_core::model::ModelConfig;
use gbml_core::tasks::ClassUniverse;
use gbml_core::{Algorithm, Error, Result};

#[derive(Parser)]
#[command(name = "gbml", version, about = "Finetuning, Reptile and first-order MAML experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train on the two 1-D loss landscapes from 100 initializations.
    Toy(Flags),
    /// Train one method on the synthetic universe and save a checkpoint.
    Train(Flags),
    /// Few-shot accuracy of a checkpoint on both universes.
    Eval(Flags),
    /// Learned versus freshly initialized output layer during adaptation.
    AblateHead(Flags),
    /// Vary the training support size, evaluate on 1-shot episodes.
    SweepK(Flags),
    /// Joint classification accuracy of a trained body.
    JointAcc(Flags),
    /// Correlate joint and few-shot accuracy across methods and capacities.
    Correlate(Flags),
}

#[derive(clap::Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Flags) {
        match self {
            Command::Toy(f) => (ExperimentKind::Toy, f),
            Command::Train(f) => (ExperimentKind::Train, f),
            Command::Eval(f) => (ExperimentKind::Eval, f),
            Command::AblateHead(f) => (ExperimentKind::AblateHead, f),
            Command::SweepK(f) => (ExperimentKind::SweepK, f),
            Command::JointAcc(f) => (ExperimentKind::JointAcc, f),
            Command::Correlate(f) => (ExperimentKind::Correlate, f),
        }
    }
}

fn load_config(kind: ExperimentKind, flags: &Flags) -> Result<ExperimentConfig> {
    let mut cfg = match &flags.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::new(kind),
    };
    if cfg.kind != kind {
        return Err(Error::ConfigValidation {
            field: "kind".into(),
            message: format!("config is for `{}`, command is `{}`", cfg.kind.name(), kind.name()),
        });
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &flags.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn universe(cfg: &ExperimentConfig) -> Result<ClassUniverse> {
    ClassUniverse::generate(&cfg.fewshot.universe, cfg.fewshot.way)
}

fn checkpoint_of(model: &TrainedModel, universe: &ClassUniverse, cfg: &ExperimentConfig) -> Checkpoint {
    let fs = &cfg.fewshot;
    Checkpoint {
        model: ModelConfig::new(universe.dim(), &model.hidden, model.params.output_dim())
            .with_activation(fs.activation)
            .with_seed(model.seed),
        algorithm: model.algorithm,
        params: model.params.clone(),
        iteration: model.best_iteration,
        val_metric: model.best_metric,
    }
}

/// Parameters from the configured checkpoint, or freshly trained ones.
fn obtain(cfg: &ExperimentConfig, universe: &ClassUniverse, algorithm: Algorithm) -> Result<TrainedModel> {
    if let Some(path) = &cfg.checkpoint {
        let c = load_checkpoint(path)?;
        if c.algorithm != algorithm {
            return Err(Error::ConfigValidation {
                field: "checkpoint".into(),
                message: format!("holds a {} model, expected {algorithm}", c.algorithm),
            });
        }
        return Ok(TrainedModel {
            algorithm,
            hidden: c.model.hidden.clone(),
            seed: c.model.seed,
            params: c.params,
            best_iteration: c.iteration,
            best_metric: c.val_metric,
            history: Vec::new(),
        });
    }
    let fs = &cfg.fewshot;
    train_method(fs, universe, algorithm, &fs.hidden, fs.train_shot, cfg.seed)
}

fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = &cfg.out_dir;
    let mut written = Vec::new();
    let mut checkpoints = Vec::new();
    let mut emit = |name: &str, table: &Table| -> Result<()> {
        let path = out.join(name);
        write_results(&path, table)?;
        written.push(path);
        Ok(())
    };
    match kind {
        ExperimentKind::Toy => {
            let results = run_toy(&cfg.toy)?;
            emit("toy.csv", &toy_finals_table(&results))?;
            emit("toy_summary.csv", &toy_summary_table(&results))?;
            emit("toy_density.csv", &toy_density_table(&results))?;
        }
        ExperimentKind::Train => {
            let u = universe(cfg)?;
            let algorithm = cfg.algorithm.expect("validated");
            let fs = &cfg.fewshot;
            let model = train_method(fs, &u, algorithm, &fs.hidden, fs.train_shot, cfg.seed)?;
            let path = out.join(format!("{algorithm}.ckpt"));
            save_checkpoint(&path, &checkpoint_of(&model, &u, cfg))?;
            checkpoints.push(path);
            emit(
                &format!("history_{algorithm}.csv"),
                &history_table(algorithm, &model.hidden, cfg.seed, &model.history),
            )?;
        }
        ExperimentKind::Eval => {
            let u = universe(cfg)?;
            let algorithm = cfg.algorithm.expect("validated");
            let model = obtain(cfg, &u, algorithm)?;
            let fs = &cfg.fewshot;
            let protocol = fs.protocol(algorithm);
            let mut t = Table::new(
                "eval",
                vec!["algorithm", "universe", "seed", "accuracy_mean", "accuracy_ci95", "episodes"],
                3,
            );
            for uni in [u.clone(), u.shifted()] {
                let bank = test_bank(fs, &uni, fs.eval_shot, cfg.seed)?;
                let accs = bank
                    .iter()
                    .enumerate()
                    .map(|(i, ep)| {
                        let tr = evaluate_with(&model.params, ep, &protocol, gbml_core::metaopt::head_seed(cfg.seed, i))?;
                        Ok(*tr.query_accuracy.last().expect("at least one entry"))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (m, h) = mean_ci95(&accs)?;
                t.push(vec![
                    algorithm.name().into(),
                    uni.tag().name().into(),
                    cfg.seed.into(),
                    m.into(),
                    h.into(),
                    accs.len().into(),
                ]);
            }
            emit("eval.csv", &t)?;
        }
        ExperimentKind::AblateHead => {
            let u = universe(cfg)?;
            let ab = &cfg.ablation;
            let model = obtain(cfg, &u, ab.algorithm)?;
            let fs = &cfg.fewshot;
            let bank = gbml_core::metaopt::episode_bank(
                &u,
                gbml_core::tasks::Split::Test,
                fs.way,
                fs.eval_shot,
                fs.query,
                ab.episodes,
                cfg.seed ^ 0x7e57,
            )?;
            let result = run_head_ablation(&model.params, &bank, ab.steps, fs.eval_lr, cfg.seed)?;
            emit("ablate_head.csv", &ablation_table(ab.algorithm, &result))?;
        }
        ExperimentKind::SweepK => {
            let u = universe(cfg)?;
            let sw = &cfg.sweep;
            let results = run_k_sweep(&cfg.fewshot, &u, &sw.algorithms, &sw.k_values, cfg.seed, sw.num_seeds)?;
            emit("sweep.csv", &sweep_table(&results))?;
        }
        ExperimentKind::JointAcc => {
            let u = universe(cfg)?;
            let algorithm = cfg.algorithm.expect("validated");
            let model = obtain(cfg, &u, algorithm)?;
            let jc = JointConfig::from(&cfg.fewshot);
            let mut t = Table::new(
                "joint-acc",
                vec!["algorithm", "universe", "seed", "joint_accuracy", "few_shot_accuracy"],
                3,
            );
            for uni in [u.clone(), u.shifted()] {
                let j = joint_accuracy(&model.params, &uni, &jc, cfg.seed)?;
                let f = few_shot_accuracy(&cfg.fewshot, &uni, &model, cfg.seed)?;
                t.push(vec![
                    algorithm.name().into(),
                    uni.tag().name().into(),
                    cfg.seed.into(),
                    Cell::Float(j.accuracy),
                    Cell::Float(f),
                ]);
            }
            emit("joint_acc.csv", &t)?;
        }
        ExperimentKind::Correlate => {
            let u = universe(cfg)?;
            let c = &cfg.correlate;
            let study = run_correlation_study(&cfg.fewshot, &u, &c.methods, &c.capacities, &cfg.seeds(c.num_seeds))?;
            emit("correlate.csv", &correlate_table(&study))?;
            emit("correlate_runs.csv", &runs_table(&study))?;
        }
    }
    written.extend(checkpoints);
    Ok(written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, flags) = cli.command.split();
    match load_config(kind, &flags).and_then(|cfg| run(kind, &cfg)) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
