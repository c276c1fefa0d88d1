use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attrlogic::compensation::compensate;
use attrlogic::consistency::{audit_record, failed_ratio, summary_record, FailedRatioReport};
use attrlogic::dataio::{load_features, save_features, Dataset, SyntheticSpec};
use attrlogic::logicnet::{evaluate_batch, EvalReport};
use attrlogic::metrics::{evaluate_predictions, render_table, AccuracyReport};
use attrlogic::poisoning::bag_of_labels;
use attrlogic::tensor::gradcheck::run_suite;
use attrlogic::{
    builtin_rules, compile, load_labels, parse_rules, save_labels, synth_generate, BolMode, EvalMode, LabelBatch,
    Penalty, RuleSet, TrainConfig, TrainState,
};

#[derive(Parser)]
#[command(
    name = "attrlogic",
    version,
    about = "Logical-consistency tools for multi-attribute labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every row of a labels or predictions file against the rules.
    Audit(AuditArgs),
    /// Generate Bag-of-Labels variants of a ground-truth file.
    Poison(PoisonArgs),
    /// Accuracy with and without enforcing logical consistency.
    Metrics(MetricsArgs),
    /// Fill empty exhaustive groups with their most confident member.
    Compensate(CompensateArgs),
    /// Write a synthetic rule-planted dataset.
    Synth(SynthArgs),
    /// Train a classifier, optionally against a logic discriminator.
    Train(TrainArgs),
    /// Finite-difference check of every layer's backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Records,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Grouped,
    Flat,
}

impl From<ModeArg> for BolMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Grouped => BolMode::Grouped,
            ModeArg::Flat => BolMode::Flat,
        }
    }
}

#[derive(Args)]
struct RuleArgs {
    /// Rule file, or the name of a built-in preset.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    rules: Option<String>,
    /// Built-in rule preset (fh-mini, celeba-strong-mini).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    rules: RuleArgs,
    /// Labels or predictions to audit.
    #[arg(long, value_name = "FILE", alias = "preds")]
    labels: PathBuf,
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct PoisonArgs {
    #[command(flatten)]
    rules: RuleArgs,
    /// Ground-truth labels.
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    /// Poisoned labels; `<stem>.logic.csv` next to it gets y_logic and provenance.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grouped")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fmt: OutputArgs,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    rules: RuleArgs,
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    preds: PathBuf,
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    /// Break down per attribute under enforce-logic instead of ignore-logic.
    #[arg(long)]
    enforce_logic: bool,
    /// Apply label compensation to the predictions first.
    #[arg(long)]
    compensate: bool,
    /// Penalize only the attributes of violated rules, not the whole row.
    #[arg(long)]
    violated_only: bool,
    #[command(flatten)]
    fmt: OutputArgs,
}

#[derive(Args)]
struct CompensateArgs {
    #[command(flatten)]
    rules: RuleArgs,
    /// Confidence predictions.
    #[arg(long, value_name = "FILE", alias = "labels")]
    preds: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    #[command(flatten)]
    fmt: OutputArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    rules: RuleArgs,
    /// Labels file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Features file to write [default: `<stem>.features.csv` next to --out].
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fmt: OutputArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    rules: RuleArgs,
    /// Training labels.
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    /// Training features [default: `<stem>.features.csv` next to --labels].
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// Held-out labels; without it a seeded 20% of the training rows is held out.
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Held-out features [default: `<stem>.features.csv` next to --gt].
    #[arg(long, value_name = "FILE")]
    test_features: Option<PathBuf>,
    /// key=value config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Weight of the adversarial term (0 trains the classifier alone).
    #[arg(long = "lambda", value_name = "F")]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Poisoning mode for the discriminator's negative examples.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Checkpoint path, written after every epoch.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Predictions of the final model on the held-out rows.
    #[arg(long, value_name = "FILE")]
    preds: Option<PathBuf>,
    /// Also report metrics after label compensation.
    #[arg(long)]
    compensate: bool,
    #[command(flatten)]
    fmt: OutputArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[command(flatten)]
    fmt: OutputArgs,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Io(String),
}

impl From<attrlogic::Error> for Failure {
    fn from(e: attrlogic::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn with_path<T>(path: &Path, r: attrlogic::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| match e {
        attrlogic::Error::Io(io) => io_err(path, io),
        other => Failure::Validation(format!("{}: {other}", path.display())),
    })
}

fn load_rules(args: &RuleArgs) -> std::result::Result<RuleSet, Failure> {
    if let Some(name) = &args.preset {
        return Ok(builtin_rules(name)?.1);
    }
    let Some(spec) = &args.rules else {
        return Err(Failure::Validation("one of --rules or --preset is required".into()));
    };
    let path = Path::new(spec);
    if !path.exists() {
        if let Ok((_, r)) = builtin_rules(spec) {
            return Ok(r);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    with_path(path, parse_rules(&text, None))
}

fn load_bound(path: &Path, rules: &RuleSet, threshold: Option<f64>) -> std::result::Result<LabelBatch, Failure> {
    let b = with_path(path, load_labels(path, Some(rules.schema())))?;
    match threshold {
        Some(t) => Ok(b.with_threshold(t)?),
        None => Ok(b),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn audit(a: AuditArgs) -> Outcome {
    let rules = load_rules(&a.rules)?;
    let batch = load_bound(&a.labels, &rules, a.threshold)?;
    let checker = compile(&rules);
    let report = failed_ratio(&checker, &batch)?;
    match a.out.format {
        Format::Records => {
            let mut out = String::new();
            let packed = batch.pack();
            for i in 0..batch.n_rows() {
                let v = checker.check_packed(packed.row(i));
                out.push_str(&audit_record(&batch.row_id(i), &v));
                out.push('\n');
            }
            out.push_str(&summary_record(&report));
            println!("{out}");
        }
        Format::Table => {
            println!("{report}");
            let verdicts = checker.check_batch(&batch)?;
            let mut per_rule = vec![0usize; rules.rules().len()];
            for v in &verdicts {
                for id in v.violated() {
                    per_rule[id.0] += 1;
                }
            }
            if per_rule.iter().any(|&c| c > 0) {
                println!("\n{:<6}{:>10}  rule", "id", "violations");
                for (k, c) in per_rule.iter().enumerate() {
                    println!(
                        "{:<6}{:>10}  {}",
                        format!("r{k}"),
                        c,
                        checker.describe(attrlogic::rules::RuleId(k))
                    );
                }
            }
        }
    }
    Ok(())
}

fn poison(a: PoisonArgs) -> Outcome {
    let rules = load_rules(&a.rules)?;
    let gt = load_bound(&a.labels, &rules, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let out = bag_of_labels(&gt, &rules, a.mode.into(), &mut rng)?;
    println!("seed={}", a.seed);
    if let Some(path) = &a.out {
        with_path(path, save_labels(&out.y_bol, path))?;
        let mut side = String::from("id,y_logic,provenance\n");
        for i in 0..gt.n_rows() {
            side += &format!("{},{},{}\n", gt.row_id(i), out.y_logic[i], out.provenance[i].as_str());
        }
        write_text(&sibling(path, "logic"), &side)?;
    }
    match a.fmt.format {
        Format::Records => {
            for i in 0..gt.n_rows() {
                println!(
                    "row_id={} y_logic={} provenance={}",
                    gt.row_id(i),
                    out.y_logic[i],
                    out.provenance[i].as_str()
                );
            }
            println!("summary n_total={} n_poisoned={}", gt.n_rows(), out.n_poisoned());
        }
        Format::Table => {
            use attrlogic::poisoning::Provenance::*;
            println!("{:<14}{:>10}", "rows", gt.n_rows());
            for p in [InterImp, IntraImp, IntraIncomp, Untouched] {
                let c = out.provenance.iter().filter(|&&q| q == p).count();
                println!("{:<14}{:>10}", p.as_str(), c);
            }
            println!("{:<14}{:>10}", "poisoned", out.n_poisoned());
        }
    }
    Ok(())
}

fn print_reports(
    format: Format,
    ignore: &AccuracyReport,
    enforce: &AccuracyReport,
    failed: &FailedRatioReport,
    detail_enforce: bool,
    prefix: &str,
) {
    let detail = if detail_enforce { enforce } else { ignore };
    match format {
        Format::Records => {
            let pre = if prefix.is_empty() {
                String::new()
            } else {
                format!("{prefix} ")
            };
            println!("{pre}{}", ignore.records()[0]);
            println!("{pre}{}", enforce.records()[0]);
            for r in detail.records().iter().skip(1) {
                println!("{pre}{r}");
            }
            println!("{pre}{}", summary_record(failed));
        }
        Format::Table => {
            if !prefix.is_empty() {
                println!("[{prefix}]");
            }
            println!("{}", render_table(&[ignore, enforce]));
            println!("\nper attribute ({})", detail.mode.as_str());
            println!("{:<24}{:>10}{:>10}{:>10}", "attribute", "acc_pos", "acc_neg", "acc_avg");
            let cell = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
            for a in &detail.per_attribute {
                println!(
                    "{:<24}{:>10}{:>10}{:>10}",
                    a.name,
                    cell(a.acc_pos),
                    cell(a.acc_neg),
                    cell(a.acc_avg)
                );
            }
            println!("\n{failed}");
        }
    }
}

fn metrics(a: MetricsArgs) -> Outcome {
    let rules = load_rules(&a.rules)?;
    let gt = load_bound(&a.gt, &rules, None)?;
    let mut preds = load_bound(&a.preds, &rules, a.threshold)?;
    let checker = compile(&rules);
    let penalty = if a.violated_only {
        Penalty::ViolatedAttributes
    } else {
        Penalty::WholeRow
    };
    if a.compensate {
        let (fixed, rep) = compensate(&preds, &rules, &checker)?;
        preds = fixed;
        if a.fmt.format == Format::Table {
            println!(
                "compensated rows={} fallback_rows={} residual_impossible={}\n",
                rep.n_rows_modified, rep.fallback_rows, rep.residual_impossible
            );
        } else {
            println!(
                "compensation n_rows_modified={} fallback_rows={} residual_impossible={}",
                rep.n_rows_modified, rep.fallback_rows, rep.residual_impossible
            );
        }
    }
    let ignore = evaluate_predictions(&preds, &gt, &checker, EvalMode::IgnoreLogic, penalty)?;
    let enforce = evaluate_predictions(&preds, &gt, &checker, EvalMode::EnforceLogic, penalty)?;
    let failed = failed_ratio(&checker, &preds)?;
    print_reports(a.fmt.format, &ignore, &enforce, &failed, a.enforce_logic, "");
    Ok(())
}

fn compensate_cmd(a: CompensateArgs) -> Outcome {
    let rules = load_rules(&a.rules)?;
    let preds = load_bound(&a.preds, &rules, a.threshold)?;
    let checker = compile(&rules);
    let (fixed, rep) = compensate(&preds, &rules, &checker)?;
    if let Some(path) = &a.out {
        with_path(path, save_labels(&fixed, path))?;
    }
    let after = failed_ratio(&checker, &fixed)?;
    match a.fmt.format {
        Format::Records => {
            println!(
                "compensation n_rows_modified={} fallback_rows={} residual_impossible={}",
                rep.n_rows_modified, rep.fallback_rows, rep.residual_impossible
            );
            for (g, c) in &rep.group_fills {
                println!("group={g} filled={c}");
            }
            println!("{}", summary_record(&after));
        }
        Format::Table => {
            println!("{:<22}{:>10}", "rows modified", rep.n_rows_modified);
            for (g, c) in &rep.group_fills {
                println!("{:<22}{:>10}", format!("filled {g}"), c);
            }
            println!("{:<22}{:>10}", "fallback rows", rep.fallback_rows);
            println!("{:<22}{:>10}", "residual impossible", rep.residual_impossible);
            println!("\nafter compensation\n{after}");
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let rules = load_rules(&a.rules)?;
    let spec = SyntheticSpec {
        n_samples: a.n,
        feature_dim: a.feature_dim,
        noise_std: a.noise_std,
        label_noise_rate: a.label_noise,
        seed: a.seed,
    };
    let data = synth_generate(&spec, &rules)?;
    let fpath = a.features.clone().unwrap_or_else(|| sibling(&a.out, "features"));
    with_path(&a.out, save_labels(&data.labels, &a.out))?;
    with_path(&fpath, save_features(&data.feature_table(), &fpath))?;
    let checker = compile(&rules);
    println!("seed={}", a.seed);
    match a.fmt.format {
        Format::Records => println!(
            "synth n_samples={} feature_dim={} flipped_rows={} labels={} features={}",
            a.n,
            a.feature_dim,
            data.flipped_rows.len(),
            a.out.display(),
            fpath.display()
        ),
        Format::Table => {
            println!("{:<16}{:>10}", "rows", a.n);
            println!("{:<16}{:>10}", "feature dim", a.feature_dim);
            println!("{:<16}{:>10}", "flipped rows", data.flipped_rows.len());
            println!("labels   {}\nfeatures {}", a.out.display(), fpath.display());
        }
    }
    if a.n > 0 {
        let r = failed_ratio(&checker, &data.labels)?;
        if a.fmt.format == Format::Records {
            println!("{}", summary_record(&r));
        } else {
            println!("\n{r}");
        }
    }
    Ok(())
}

fn load_dataset(labels: &Path, features: Option<&PathBuf>, rules: &RuleSet) -> std::result::Result<Dataset, Failure> {
    let l = load_bound(labels, rules, None)?;
    let fpath = features.cloned().unwrap_or_else(|| sibling(labels, "features"));
    let f = with_path(&fpath, load_features(&fpath))?;
    Ok(Dataset::join(&f, l)?)
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let rules = load_rules(&a.rules)?;
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            with_path(p, TrainConfig::from_kv(&text))?
        }
        None => TrainConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Validation(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(m) = a.mode {
        cfg.bol_mode = m.into();
    }
    if a.out.is_some() {
        cfg.checkpoint = a.out.clone();
    }
    cfg.validate()?;
    let data = load_dataset(&a.labels, a.features.as_ref(), &rules)?;
    let (train, test) = match &a.gt {
        Some(gt) => (data, load_dataset(gt, a.test_features.as_ref(), &rules)?),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rand_chacha::rand_core::RngCore::next_u64(&mut rng);
            let n_test = data.n_rows() / 5;
            data.shuffle_split(n_test, &mut rng)
        }
    };
    if train.n_rows() == 0 || test.n_rows() == 0 {
        return Err(Failure::Validation(
            "need at least one training and one held-out row".into(),
        ));
    }
    println!("seed={}", cfg.seed);
    let mut state = TrainState::new(cfg, &rules, train.feature_dim)?;
    for _ in 0..state.config.epochs {
        let rec = state.run_epoch(&train, &test)?;
        if a.fmt.format == Format::Records {
            println!("{}", rec.record());
        } else {
            println!(
                "epoch {:>3}  loss {:.4}  bce {:.4}  adv {:.4}  disc {:.4}  failed {:.2}%  acc_avg {:.2} / {:.2}",
                rec.epoch,
                rec.classifier_loss,
                rec.bce_loss,
                rec.adversarial_loss,
                rec.discriminator_loss,
                rec.failed_ratio * 100.0,
                rec.acc_avg_ignore,
                rec.acc_avg_enforce
            );
        }
    }
    let preds = state.predict(&test)?;
    if let Some(p) = &a.preds {
        with_path(p, save_labels(&preds, p))?;
    }
    let report: EvalReport = evaluate_batch(&preds, &test.labels, &rules, &state.checker, a.compensate)?;
    if a.fmt.format == Format::Table {
        println!();
    }
    print_reports(
        a.fmt.format,
        &report.ignore_logic,
        &report.enforce_logic,
        &report.failed,
        false,
        "",
    );
    if let Some(c) = &report.compensated {
        if a.fmt.format == Format::Table {
            println!();
        }
        print_reports(
            a.fmt.format,
            &c.ignore_logic,
            &c.enforce_logic,
            &c.failed,
            false,
            "compensated",
        );
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    println!("seed={}", a.seed);
    let results = run_suite(a.seed, a.tolerance);
    let mut failed = Vec::new();
    if a.fmt.format == Format::Table {
        println!("{:<26}{:>10}{:>16}  status", "probe", "entries", "max rel err");
    }
    for (name, r) in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        match a.fmt.format {
            Format::Records => println!(
                "probe={name} n_checked={} max_rel_error={:.3e} passed={}",
                r.n_checked,
                r.max_rel_error,
                r.passed()
            ),
            Format::Table => println!("{name:<26}{:>10}{:>16.3e}  {status}", r.n_checked, r.max_rel_error),
        }
        if !r.passed() {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn main() -> ExitCode {
    // Exit quietly when the reader of stdout goes away (e.g. `| head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Audit(a) => audit(a),
        Command::Poison(a) => poison(a),
        Command::Metrics(a) => metrics(a),
        Command::Compensate(a) => compensate_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
