mod manifest;
mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use gcon::calibration::privacy_report;
use gcon::config::KeyValues;
use gcon::dataset::{dataset_files, generate_sbm, load_dataset, make_split, save_dataset, EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLIT_FILE};
use gcon::encoder::normalize_rows;
use gcon::graph::{homophily_ratio_connected, ChangeKind};
use gcon::inference::{metrics_report, predictions_tsv};
use gcon::sensitivity::{empirical_sensitivity, AuditOptions, BOUND_TOLERANCE};
use gcon::{infer, train, Error, InferenceConfig, InferenceMode, ModelArtifact, PropagationConfig, Result, Split};

use manifest::{FileDigest, RunManifest};
use settings::*;

const EXIT_INTERNAL: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;
const EXIT_CALIBRATION: u8 = 4;
const EXIT_AUDIT: u8 = 5;

#[derive(Parser)]
#[command(name = "gcon", version, about = "Edge-private node classification: train, infer, audit, generate data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a private model on a dataset directory.
    Train(TrainArgs),
    /// Score a dataset with a trained artifact.
    Infer(InferArgs),
    /// Compare measured propagation sensitivity with its analytic bound.
    Audit(AuditArgs),
    /// Write a synthetic stochastic-block-model dataset.
    Gen(GenArgs),
    /// Rerun a recorded manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    /// `key = value` settings file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Seed for encoder initialization (defaults to --seed).
    #[arg(long)]
    encoder_seed: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Comma separated step counts, `inf` allowed.
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    /// mlsm or pseudo-huber.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    delta_l: Option<String>,
    #[arg(long)]
    d1: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// on or off.
    #[arg(long)]
    bias: Option<String>,
    /// none or all.
    #[arg(long)]
    pseudo_label: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    grad_tol: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    artifact: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    /// private or public.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha_i: Option<String>,
    /// on or off.
    #[arg(long)]
    infer_one_over_s: Option<String>,
    /// Nodes to evaluate: auto, train, val, test or all.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    max_nodes: Option<String>,
    #[arg(long, hide = true)]
    bound_scale: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// sbm or blobs-on-graph.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    p_intra: Option<String>,
    #[arg(long)]
    p_inter: Option<String>,
    #[arg(long)]
    feature_dim: Option<String>,
    #[arg(long)]
    feature_noise: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train_per_class: Option<String>,
    #[arg(long)]
    val: Option<String>,
    #[arg(long)]
    test: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Fresh output directory for the rerun.
    #[arg(long)]
    out: PathBuf,
}

/// What a subcommand produced, before the manifest is written.
struct RunRecord {
    inputs: Vec<FileDigest>,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
    exit: u8,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter { .. }
        | Error::Parse { .. }
        | Error::Dimension(_)
        | Error::InvalidGraph(_)
        | Error::SizeGuard { .. }
        | Error::Artifact(_)
        | Error::Io { .. } => EXIT_VALIDATION,
        Error::Convergence { .. } | Error::Numerical(_) => EXIT_CONVERGENCE,
        Error::Calibration(_) => EXIT_CALIBRATION,
    }
}

fn describe(e: &Error) -> String {
    match e {
        Error::InvalidParameter { name, reason } => format!("invalid value for --{}: {reason}", name.replace('_', "-")),
        other => other.to_string(),
    }
}

fn dataset_inputs(dir: &Path) -> Result<Vec<FileDigest>> {
    [EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLIT_FILE]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .map(|p| FileDigest::of(&p))
        .collect()
}

fn write_output(out: &Path, name: &str, body: &str, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    outputs.push(path);
    Ok(())
}

fn run_train(kv: &mut KeyValues, out: &Path) -> Result<RunRecord> {
    let dataset = required_path(kv, "dataset")?;
    let cfg = train_config(kv)?;
    let g = load_dataset(&dataset)?;
    let inputs = dataset_inputs(&dataset)?;
    let artifact = train(&g, &cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut outputs = Vec::new();
    let path = out.join("artifact.json");
    artifact.save(&path)?;
    outputs.push(path);

    let mut report = privacy_report(&artifact.calibration);
    report.push_str(&format!(
        "optimizer_iterations = {}\nfinal_grad_norm = {:e}\nstationarity_residual = {:e}\n",
        artifact.optimizer.iterations, artifact.optimizer.final_grad_norm, artifact.stationarity_residual
    ));
    write_output(out, "privacy_report.txt", &report, &mut outputs)?;
    println!(
        "trained on {} rows: epsilon {} delta {}, {} optimizer iterations, artifact {}",
        artifact.n1,
        cfg.budget.epsilon,
        cfg.budget.delta,
        artifact.optimizer.iterations,
        outputs[0].display()
    );
    Ok(RunRecord {
        inputs,
        seed: Some(cfg.seed),
        outputs,
        exit: 0,
    })
}

fn run_infer(kv: &mut KeyValues, out: &Path) -> Result<RunRecord> {
    let artifact_path = required_path(kv, "artifact")?;
    let dataset = required_path(kv, "dataset")?;
    let artifact = ModelArtifact::load(&artifact_path)?;
    let g = load_dataset(&dataset)?;
    let mut inputs = vec![FileDigest::of(&artifact_path)?];
    inputs.extend(dataset_inputs(&dataset)?);

    let mut cfg = InferenceConfig::default();
    kv.apply::<InferenceMode>("mode", &mut cfg.mode)?;
    cfg.alpha_i = Some(kv.parsed("alpha_i")?.unwrap_or(artifact.propagation.alpha));
    kv.set("alpha_i", cfg.resolved_alpha_i(&artifact));
    if let Some(b) = on_off(kv, "infer_one_over_s")? {
        cfg.one_over_s = b;
    }

    let labeled: Vec<usize> = (0..g.node_count()).filter(|&i| g.labels()[i].is_some()).collect();
    let split = kv.get("split").unwrap_or("auto").to_string();
    let (name, mask) = match split.as_str() {
        "auto" if !g.nodes_in(Split::Test).is_empty() => ("test", g.nodes_in(Split::Test)),
        "auto" | "all" => ("all", labeled),
        "train" => ("train", g.nodes_in(Split::Train)),
        "val" => ("val", g.nodes_in(Split::Val)),
        "test" => ("test", g.nodes_in(Split::Test)),
        other => return Err(Error::param("split", format!("expected auto, train, val, test or all, got `{other}`"))),
    };
    kv.set("split", name);

    let scores = infer(&artifact, &g, &cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut outputs = Vec::new();
    write_output(out, "predictions.tsv", &predictions_tsv(&scores), &mut outputs)?;
    if mask.is_empty() {
        println!("scored {} nodes; no labeled nodes in split `{name}`, metrics skipped", g.node_count());
    } else {
        let report = metrics_report(&artifact, &cfg, &scores, g.labels(), name, &mask)?;
        write_output(out, "metrics.txt", &report, &mut outputs)?;
        if let Some(line) = report.lines().find(|l| l.starts_with("micro_f1")) {
            println!("scored {} nodes in {} mode; {line} on {} `{name}` nodes", g.node_count(), cfg.mode.as_str(), mask.len());
        }
    }
    Ok(RunRecord {
        inputs,
        seed: Some(artifact.seed),
        outputs,
        exit: 0,
    })
}

fn run_audit(kv: &mut KeyValues, out: &Path) -> Result<RunRecord> {
    let dataset = required_path(kv, "dataset")?;
    let s = audit_settings(kv)?;
    let g = load_dataset(&dataset)?;
    let inputs = dataset_inputs(&dataset)?;
    let cfg = PropagationConfig::new(s.alpha, s.steps.clone());
    cfg.validate()?;
    let x = normalize_rows(g.features());
    let report = empirical_sensitivity(
        g.topology(),
        &x,
        &cfg,
        AuditOptions {
            clip: s.clip,
            max_nodes: s.max_nodes,
        },
    )?;
    let bound = report.bound * s.bound_scale;
    let violations = report.violations(ChangeKind::Remove, bound, BOUND_TOLERANCE);

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut outputs = Vec::new();
    write_output(out, "sensitivity.tsv", &report.to_tsv(bound), &mut outputs)?;
    let fmt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
    let max_removal = report.max_removal();
    let summary = format!(
        "bound = {bound}\nneighbors = {}\nmax_removal_psi = {}\nmax_addition_psi = {}\nremoval_slack = {}\nremoval_violations = {}\n",
        report.per_neighbor.len(),
        fmt(max_removal),
        fmt(report.max_addition()),
        fmt(max_removal.map(|m| bound - m)),
        violations.len(),
    );
    write_output(out, "audit.txt", &summary, &mut outputs)?;
    println!(
        "audited {} neighbors: bound {bound}, max removal psi {}, slack {}",
        report.per_neighbor.len(),
        fmt(max_removal),
        fmt(max_removal.map(|m| bound - m))
    );
    let exit = if violations.is_empty() {
        0
    } else {
        eprintln!("gcon audit: {} removal neighbors exceed the bound, first {}", violations.len(), violations[0].change);
        EXIT_AUDIT
    };
    Ok(RunRecord {
        inputs,
        seed: None,
        outputs,
        exit,
    })
}

fn run_gen(kv: &mut KeyValues, out: &Path) -> Result<RunRecord> {
    let s = gen_settings(kv)?;
    let g = generate_sbm(&s.spec)?;
    let g = make_split(&g, s.train_per_class, s.val, s.test, s.spec.seed)?;
    save_dataset(&g, out)?;
    let homophily = homophily_ratio_connected(&g)?;
    println!(
        "wrote {} nodes, {} edges, homophily {} to {}",
        g.node_count(),
        g.topology().edge_count(),
        homophily.map_or("undefined".to_string(), |h| format!("{h:.3}")),
        out.display()
    );
    Ok(RunRecord {
        inputs: Vec::new(),
        seed: Some(s.spec.seed),
        outputs: dataset_files(out),
        exit: 0,
    })
}

fn dispatch(subcommand: &str, kv: &mut KeyValues, out: &Path) -> Result<RunRecord> {
    match subcommand {
        "train" => run_train(kv, out),
        "infer" => run_infer(kv, out),
        "audit" => run_audit(kv, out),
        "gen" => run_gen(kv, out),
        other => Err(Error::param("subcommand", format!("cannot run `{other}`"))),
    }
}

/// Runs one subcommand and records its manifest in `out`.
fn execute(subcommand: &str, mut kv: KeyValues, out: &Path) -> Result<(RunManifest, u8)> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let record = dispatch(subcommand, &mut kv, out)?;
    let outputs = record
        .outputs
        .iter()
        .map(|p| FileDigest::of(p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand.to_string(),
        config: kv.into_map(),
        inputs: record.inputs,
        seed: record.seed,
        out_dir: out.to_path_buf(),
        outputs,
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    manifest.save(out)?;
    Ok((manifest, record.exit))
}

fn replay(args: &ReplayArgs) -> Result<u8> {
    let recorded = RunManifest::load(&args.manifest)?;
    for input in &recorded.inputs {
        let now = FileDigest::of(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(Error::param(
                "manifest",
                format!("input {} changed since the recorded run", input.path.display()),
            ));
        }
    }
    let mut kv = KeyValues::default();
    for (k, v) in &recorded.config {
        kv.set(k, v);
    }
    let (rerun, exit) = execute(&recorded.subcommand, kv, &args.out)?;
    let before = recorded.output_digests();
    let after = rerun.output_digests();
    if before != after {
        let differing: Vec<&str> = before
            .keys()
            .chain(after.keys())
            .filter(|k| before.get(*k) != after.get(*k))
            .map(String::as_str)
            .collect();
        eprintln!("gcon replay: outputs differ from the recorded run: {}", differing.join(", "));
        return Ok(EXIT_INTERNAL);
    }
    println!("replay reproduced {} output digests", after.len());
    Ok(exit)
}

fn flag(key: &'static str, v: &Option<String>) -> (&'static str, Option<String>) {
    (key, v.clone())
}

fn run(cli: Cli) -> Result<u8> {
    let (name, kv, out) = match &cli.command {
        Command::Train(a) => {
            let flags = vec![
                flag("dataset", &a.dataset),
                flag("seed", &a.seed),
                flag("encoder_seed", &a.encoder_seed),
                flag("epsilon", &a.epsilon),
                flag("delta", &a.delta),
                flag("omega", &a.omega),
                flag("alpha", &a.alpha),
                flag("steps", &a.steps),
                flag("lambda", &a.lambda),
                flag("xi", &a.xi),
                flag("clip", &a.clip),
                flag("loss", &a.loss),
                flag("delta_l", &a.delta_l),
                flag("d1", &a.d1),
                flag("hidden", &a.hidden),
                flag("epochs", &a.epochs),
                flag("lr", &a.lr),
                flag("bias", &a.bias),
                flag("pseudo_label", &a.pseudo_label),
                flag("max_iters", &a.max_iters),
                flag("grad_tol", &a.grad_tol),
            ];
            let kv = resolve(train_defaults(), a.common.config.as_deref(), flags, TRAIN_KEYS)?;
            ("train", kv, &a.common.out)
        }
        Command::Infer(a) => {
            let flags = vec![
                flag("artifact", &a.artifact),
                flag("dataset", &a.dataset),
                flag("mode", &a.mode),
                flag("alpha_i", &a.alpha_i),
                flag("infer_one_over_s", &a.infer_one_over_s),
                flag("split", &a.split),
            ];
            let kv = resolve(infer_defaults(), a.common.config.as_deref(), flags, INFER_KEYS)?;
            ("infer", kv, &a.common.out)
        }
        Command::Audit(a) => {
            let flags = vec![
                flag("dataset", &a.dataset),
                flag("alpha", &a.alpha),
                flag("steps", &a.steps),
                flag("clip", &a.clip),
                flag("max_nodes", &a.max_nodes),
                flag("bound_scale", &a.bound_scale),
            ];
            let kv = resolve(audit_defaults(), a.common.config.as_deref(), flags, AUDIT_KEYS)?;
            ("audit", kv, &a.common.out)
        }
        Command::Gen(a) => {
            let flags = vec![
                flag("kind", &a.kind),
                flag("n", &a.n),
                flag("classes", &a.classes),
                flag("p_intra", &a.p_intra),
                flag("p_inter", &a.p_inter),
                flag("feature_dim", &a.feature_dim),
                flag("feature_noise", &a.feature_noise),
                flag("seed", &a.seed),
                flag("train_per_class", &a.train_per_class),
                flag("val", &a.val),
                flag("test", &a.test),
            ];
            let kv = resolve(gen_defaults(), a.common.config.as_deref(), flags, GEN_KEYS)?;
            ("gen", kv, &a.common.out)
        }
        Command::Replay(a) => return replay(a),
    };
    Ok(execute(name, kv, out)?.1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Train(_) => "train",
        Command::Infer(_) => "infer",
        Command::Audit(_) => "audit",
        Command::Gen(_) => "gen",
        Command::Replay(_) => "replay",
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("gcon {name}: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
