use std::fs;
use std::path::Path;

use serde::Serialize;
use tmnlab::autodiff::{grad_check, OpKind, Var};
use tmnlab::data::{
    batch_pairs, load_pairs, synth_task, write_pairs, Label, Strictness, SynthSpec, TreePair,
};
use tmnlab::metrics::EvaluationReport;
use tmnlab::model::{count_parameters, Mode, ModelConfig, ModelParams, Network, Similarity};
use tmnlab::objectives::{multi_objective_loss, soft_logits_loss, LossConfig, ObjectiveError};
use tmnlab::trainer::{
    evaluate, run_phase, split_by_hash, start_for_phase, Checkpoint, PhaseConfig, PhaseRun, Start,
};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::{EvalArgs, GradcheckArgs, InspectArgs, SynthArgs, TrainArgs};

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_MAX_STATE: usize = 64;
const CORRUPTION_FACTOR: f64 = 1.5;

fn strictness(level: u8) -> Result<Strictness, Failure> {
    Strictness::new(level).ok_or_else(|| Failure::usage(format!("strictness {level} is not 0..=3")))
}

fn histogram(pairs: &[TreePair]) -> String {
    Label::ALL
        .iter()
        .map(|&l| format!("{l}={}", pairs.iter().filter(|p| p.label == l).count()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let pairs = synth_task(&SynthSpec {
        seed: args.seed,
        n_pairs: args.count,
        node_dim: args.node_dim,
        edge_dim: args.edge_dim,
        max_nodes: args.max_nodes,
    })?;
    write_pairs(&args.out, &pairs)?;
    println!("wrote {} pairs to {}: {}", pairs.len(), args.out.display(), histogram(&pairs));
    Ok(())
}

fn check_dims(model: &ModelConfig, pairs: &[TreePair], what: &str) -> Result<(), Failure> {
    for p in pairs {
        for t in [&p.tree_a, &p.tree_b] {
            if t.node_dim() != model.node_feature_dim {
                return Err(Failure::usage(format!(
                    "{what}: pair {} has {}-wide node features, the model expects {}",
                    p.pair_id,
                    t.node_dim(),
                    model.node_feature_dim
                )));
            }
            if let Some(d) = t.edge_dim().filter(|&d| d != model.edge_feature_dim) {
                return Err(Failure::usage(format!(
                    "{what}: pair {} has {d}-wide edge features, the model expects {}",
                    p.pair_id, model.edge_feature_dim
                )));
            }
        }
    }
    Ok(())
}

fn load_data(config: &RunConfig) -> Result<(Vec<TreePair>, Vec<TreePair>), Failure> {
    let level = strictness(config.data.strictness)?;
    if let Some(synth) = &config.data.synth {
        return Ok(split_by_hash(synth_task(&synth.spec())?));
    }
    let train_path = config.data.train.as_ref().expect("validated data source");
    let train = load_pairs(train_path, level)?;
    match &config.data.val {
        Some(val) => Ok((train, load_pairs(val, level)?)),
        None => Ok(split_by_hash(train)),
    }
}

/// Resolved settings written next to the checkpoints.
#[derive(Serialize)]
struct ResolvedRun<'a> {
    model: &'a ModelConfig,
    phases: Vec<PhaseConfig>,
    train_pairs: usize,
    val_pairs: usize,
}

pub fn train(args: &TrainArgs) -> Result<(), Failure> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if args.mode.is_some() {
        config.mode = args.mode;
    }
    let model = config.model_config()?;
    let (train, val) = load_data(&config)?;
    check_dims(&model, &train, "train")?;
    check_dims(&model, &val, "val")?;
    let phases = if args.phase.is_empty() { vec![1, 2, 3] } else { args.phase.clone() };
    if phases.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::usage("--phase values must be increasing"));
    }
    let mut phase_configs = Vec::new();
    for &p in &phases {
        let mut c = config.phase_config(p)?;
        if let Some(e) = args.max_epochs {
            c.max_epochs = e;
        }
        phase_configs.push(c);
    }

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    let resolved = ResolvedRun {
        model: &model,
        phases: phase_configs.clone(),
        train_pairs: train.len(),
        val_pairs: val.len(),
    };
    let run_file = out.join("run.json");
    fs::write(&run_file, serde_json::to_string_pretty(&resolved).expect("serializable"))
        .map_err(|e| Failure::data(format!("{}: {e}", run_file.display())))?;
    log::info!(
        "{} training pairs ({}), {} held out, {} parameters",
        train.len(),
        histogram(&train),
        val.len(),
        count_parameters(&ModelParams::init(&model, config.seed)?)
    );

    for (i, phase_config) in phase_configs.iter().enumerate() {
        let start = match (&args.resume, i) {
            (Some(path), 0) => Start::Resume(Box::new(Checkpoint::load(path)?)),
            _ => start_for_phase(out, phase_config.phase, args.skip_pretrain)?,
        };
        let run = PhaseRun {
            model: &model,
            train: &train,
            val: &val,
            config: phase_config,
            out_dir: out,
        };
        let outcome = run_phase(&run, start)?;
        if let Some(last) = outcome.reports.last() {
            println!(
                "phase {} finished after epoch {}: train loss {:.5}, train accuracy {:.4}, held-out accuracy {}{}",
                last.phase,
                last.epoch,
                last.train_loss,
                last.train_accuracy,
                last.val_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
                if outcome.stopped_early { " (early stop)" } else { "" }
            );
        }
    }
    Ok(())
}

fn print_report(r: &EvaluationReport) {
    println!("examples  {}", r.examples);
    println!("accuracy  {:.4}", r.accuracy);
    println!("thresholds  {} {}", r.thresholds[0], r.thresholds[1]);
    if let Some(m) = r.mean_similarity {
        println!("mean cosine  {m:.4}");
    }
    println!();
    println!("{:<15}{:>15}{:>15}{:>15}", "true \\ pred", r.classes[0], r.classes[1], r.classes[2]);
    for (class, row) in r.classes.iter().zip(&r.confusion) {
        println!("{:<15}{:>15}{:>15}{:>15}", class.to_string(), row[0], row[1], row[2]);
    }
    println!();
    println!("{:<15}{:>10}{:>10}{:>10}{:>10}", "class", "precision", "recall", "f1", "support");
    for s in &r.per_class {
        println!(
            "{:<15}{:>10.4}{:>10.4}{:>10.4}{:>10}{}",
            s.class.to_string(),
            s.precision,
            s.recall,
            s.f1,
            s.support,
            if s.degenerate { "  (degenerate)" } else { "" }
        );
    }
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.model.clone();
    let params = checkpoint.params()?;
    let pairs = load_pairs(&args.data, strictness(args.strictness)?)?;
    if pairs.is_empty() {
        return Err(Failure::data(format!("{}: no pairs", args.data.display())));
    }
    check_dims(&model, &pairs, "eval")?;
    let evaluation = evaluate(&model, &params, &pairs, args.thresholds, args.batch_size)?;
    let report = evaluation.report(args.thresholds);
    print_report(&report);
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&report).expect("serializable");
        fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    if args.node_state_dim > GRADCHECK_MAX_STATE || args.edge_state_dim > GRADCHECK_MAX_STATE {
        return Err(Failure::usage(format!(
            "gradient checks are limited to state sizes <= {GRADCHECK_MAX_STATE}"
        )));
    }
    let fault = args
        .corrupt_backward
        .as_deref()
        .map(str::parse::<OpKind>)
        .transpose()
        .map_err(Failure::usage)?;
    let config = ModelConfig {
        node_feature_dim: 6,
        edge_feature_dim: 3,
        node_state_dim: args.node_state_dim,
        edge_state_dim: args.edge_state_dim,
        prop_layers: args.prop_layers,
        graph_rep_dim: args.node_state_dim,
        mode: args.mode,
        mlp_hidden_layers: 1,
        similarity: Similarity::ScaledDot,
    };
    let params = ModelParams::init(&config, args.seed)?;
    let pairs = synth_task(&SynthSpec {
        seed: args.seed,
        n_pairs: 3,
        node_dim: 6,
        edge_dim: 3,
        max_nodes: 5,
    })?;
    let labels: Vec<Label> = pairs.iter().map(|p| p.label).collect();
    let batch = batch_pairs(&pairs)?;
    let loss_config = LossConfig::snli3();
    let report = grad_check(params.tensors(), args.epsilon, |tape, vars: &[Var]| {
        if let Some(kind) = fault {
            tape.inject_fault(kind, CORRUPTION_FACTOR);
        }
        let net = Network::from_vars(&config, vars).map_err(|e| ObjectiveError::Config(e.to_string()))?;
        let out = net
            .forward(tape, &batch)
            .map_err(|e| ObjectiveError::Config(e.to_string()))?;
        let terms = multi_objective_loss(tape, out.a, out.b, &labels, &loss_config)?;
        let fine = soft_logits_loss(tape, out.a, out.b, &labels, &loss_config)?;
        Ok::<_, ObjectiveError>(tape.add(terms.loss, fine.loss)?)
    })
    .map_err(|e| Failure::numeric(format!("gradcheck: {e}")))?;

    let name = &params.names()[report.worst_param];
    println!(
        "checked {} entries of {} tensors ({} mode, {} parameters)",
        report.entries_checked,
        params.len(),
        if config.mode == Mode::Matching { "matching" } else { "embedding" },
        count_parameters(&params)
    );
    println!(
        "max relative error {:.3e} at {name}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.max_rel_error, report.worst_index, report.analytic, report.numeric
    );
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        println!("PASS (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        println!("FAIL (tolerance {GRADCHECK_TOLERANCE:e})");
        Err(Failure::numeric(format!(
            "gradcheck: relative error {:.3e} at {name} exceeds {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

#[derive(Serialize)]
struct CheckpointSummary<'a> {
    path: &'a Path,
    format: &'a str,
    phase: u8,
    epoch: usize,
    seed: u64,
    optimizer_step: u64,
    parameters: usize,
    model: &'a ModelConfig,
    tensors: Vec<(&'a str, &'a [usize])>,
}

pub fn inspect(args: &InspectArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let params = ck.params()?;
    let summary = CheckpointSummary {
        path: &args.checkpoint,
        format: &ck.format,
        phase: ck.phase,
        epoch: ck.epoch,
        seed: ck.seed,
        optimizer_step: ck.optimizer.step,
        parameters: count_parameters(&params),
        model: &ck.model,
        tensors: ck
            .params
            .iter()
            .map(|n| (n.name.as_str(), n.tensor.shape()))
            .collect(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        return Ok(());
    }
    println!("{} ({})", summary.path.display(), summary.format);
    println!("phase {} epoch {} seed {} optimizer step {}", ck.phase, ck.epoch, ck.seed, ck.optimizer.step);
    println!("{} parameters in {} tensors", summary.parameters, summary.tensors.len());
    println!("model {}", serde_json::to_string(&ck.model).expect("serializable"));
    for (name, shape) in &summary.tensors {
        println!("  {name:<32} {shape:?}");
    }
    Ok(())
}
