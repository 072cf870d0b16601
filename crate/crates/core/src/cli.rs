//! Command-line front end: `synth`, `prepare`, `train`, `eval`, `ablate`
//! and `rank`.
//!
//! Every subcommand prints its resolved configuration as `# key=value`
//! lines on standard output before doing any work. Failures print one line
//! of the form `error[<kind>]: <reason>` on standard error and map to an
//! exit code (see [`ExitKind`]).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    build_vocabulary, generate_synthetic_corpus, parse_behaviors, parse_news_table, ImpressionLog,
    RawNews, SynthConfig, SYNTH_KEYS,
};
use crate::error::Error;
use crate::eval::{evaluate, holdout_split, inspect_ranking, reports_csv, run_ablation, Flag};
use crate::training::{
    epoch_log_csv, load_checkpoint, resume, save_checkpoint, train, Checkpoint, Dataset,
    TrainConfig, Variant,
};

/// Failure classes and their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn name(self) -> &'static str {
        match self {
            ExitKind::Usage => "usage",
            ExitKind::Data => "data",
            ExitKind::Numeric => "numeric",
        }
    }

    pub fn of(err: &Error) -> Self {
        match err {
            Error::Config(_) => ExitKind::Usage,
            Error::NonFinite(_) | Error::DegenerateVector { .. } | Error::Domain { .. } => {
                ExitKind::Numeric
            }
            _ => ExitKind::Data,
        }
    }
}

#[derive(Debug)]
struct Failure {
    kind: ExitKind,
    reason: String,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure {
            kind: ExitKind::of(&err),
            reason: err.to_string(),
        }
    }
}

fn usage(reason: impl Into<String>) -> Failure {
    Failure {
        kind: ExitKind::Usage,
        reason: reason.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "tdnr", version, about = "Title-debiasing news recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with controllable clickbait.
    Synth(SynthArgs),
    /// Build the vocabulary and validate a news/behaviors pair.
    Prepare(PrepareArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a behaviors table.
    Eval(EvalArgs),
    /// Train and evaluate all four variants on a held-out split.
    Ablate(AblateArgs),
    /// Rank the candidates of one impression.
    Rank(RankArgs),
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long, value_name = "PATH")]
    news: PathBuf,
    #[arg(long, value_name = "PATH")]
    behaviors: PathBuf,
}

/// One flag per training config key, named identically.
#[derive(Debug, Args, Default)]
struct Overrides {
    /// File of `key=value` lines; flags given here take precedence.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_name = "batch|impression")]
    cl_pool: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    attn_hidden: Option<String>,
    #[arg(long)]
    vocab_cap: Option<String>,
    #[arg(long)]
    min_freq: Option<String>,
    #[arg(long)]
    cats_len: Option<String>,
    #[arg(long)]
    title_len: Option<String>,
    #[arg(long)]
    gen_title_len: Option<String>,
    #[arg(long)]
    abstract_len: Option<String>,
    #[arg(long)]
    history_len: Option<String>,
    #[arg(long)]
    negatives: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("seed", &self.seed),
            ("variant", &self.variant),
            ("cl-pool", &self.cl_pool),
            ("d", &self.d),
            ("heads", &self.heads),
            ("attn-hidden", &self.attn_hidden),
            ("vocab-cap", &self.vocab_cap),
            ("min-freq", &self.min_freq),
            ("cats-len", &self.cats_len),
            ("title-len", &self.title_len),
            ("gen-title-len", &self.gen_title_len),
            ("abstract-len", &self.abstract_len),
            ("history-len", &self.history_len),
            ("negatives", &self.negatives),
            ("lr", &self.lr),
            ("batch-size", &self.batch_size),
            ("epochs", &self.epochs),
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("tau", &self.tau),
            ("lambda", &self.lambda),
        ]
    }

    fn apply(&self, config: &mut TrainConfig) -> CliResult<()> {
        if let Some(path) = &self.config {
            config.apply_text(&read_text(path)?)?;
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(())
    }

    fn resolve(&self) -> CliResult<TrainConfig> {
        let mut config = TrainConfig::default();
        self.apply(&mut config)?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory receiving news.tsv, behaviors.tsv and provenance.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// File of `key=value` generator settings.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    n_users: Option<String>,
    #[arg(long)]
    n_news: Option<String>,
    #[arg(long)]
    n_topics: Option<String>,
    #[arg(long)]
    clickbait_rate: Option<String>,
    #[arg(long)]
    words_per_topic: Option<String>,
    #[arg(long)]
    filler_words: Option<String>,
    #[arg(long)]
    title_words: Option<String>,
    #[arg(long)]
    abstract_words: Option<String>,
    #[arg(long)]
    abstract_topic_share: Option<String>,
    #[arg(long)]
    summary_words: Option<String>,
    #[arg(long)]
    n_categories: Option<String>,
    #[arg(long)]
    impressions_per_user: Option<String>,
    #[arg(long)]
    history_len: Option<String>,
    #[arg(long)]
    clicks_per_impression: Option<String>,
    #[arg(long)]
    skips_per_impression: Option<String>,
}

impl SynthArgs {
    fn resolve(&self) -> CliResult<SynthConfig> {
        let mut c = SynthConfig::default();
        if let Some(path) = &self.config {
            c.apply_text(&read_text(path)?)?;
        }
        let values = [
            &self.n_users,
            &self.n_news,
            &self.n_topics,
            &self.clickbait_rate,
            &self.seed,
            &self.words_per_topic,
            &self.filler_words,
            &self.title_words,
            &self.abstract_words,
            &self.abstract_topic_share,
            &self.summary_words,
            &self.n_categories,
            &self.impressions_per_user,
            &self.history_len,
            &self.clicks_per_impression,
            &self.skips_per_impression,
        ];
        for (key, value) in SYNTH_KEYS.iter().zip(values) {
            if let Some(v) = value {
                c.set(key, v)?;
            }
        }
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Optional vocabulary listing, one token per line.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Checkpoint to write.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Per-epoch loss log (CSV).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Continue from the checkpoint for `epochs` more epochs.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Metrics CSV; printed to standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Per-impression metrics CSV.
    #[arg(long, value_name = "PATH")]
    details: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Comparison CSV; printed to standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Fraction of impressions held out for evaluation.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "ID")]
    impression: String,
    /// `NEWSID=clicked` or `NEWSID=clickbait`; repeatable.
    #[arg(long, value_name = "NEWSID=FLAG", value_parser = parse_flag)]
    flag: Vec<(String, Flag)>,
    /// Ranking CSV; printed to standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn parse_flag(s: &str) -> std::result::Result<(String, Flag), String> {
    let (id, flag) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NEWSID=FLAG, got {s:?}"))?;
    if id.is_empty() {
        return Err("empty news id".into());
    }
    Ok((
        id.to_string(),
        flag.parse().map_err(|e: Error| e.to_string())?,
    ))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure {
        kind: ExitKind::Data,
        reason: format!("{}: {e}", path.display()),
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure {
        kind: ExitKind::Data,
        reason: format!("{}: {e}", path.display()),
    })
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Failure {
        kind: ExitKind::Data,
        reason: format!("{}: {e}", path.display()),
    })
}

fn read_inputs(
    inputs: &Inputs,
    config: &TrainConfig,
) -> CliResult<(Vec<RawNews>, Vec<ImpressionLog>)> {
    let news = parse_news_table(open(&inputs.news)?, true).map_err(|e| located(e, &inputs.news))?;
    let logs = parse_behaviors(open(&inputs.behaviors)?, config.history_len)
        .map_err(|e| located(e, &inputs.behaviors))?;
    Ok((news, logs))
}

fn located(err: Error, path: &Path) -> Failure {
    let mut f = Failure::from(err);
    f.reason = format!("{}: {}", path.display(), f.reason);
    f
}

fn print_config(out: &mut dyn Write, text: &str) -> CliResult<()> {
    for line in text.lines() {
        writeln!(out, "# {line}").map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_text(p, text),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| usage(e.to_string())),
    }
}

/// Loads a checkpoint and applies command-line overrides that do not
/// change the model layout.
fn checkpoint_config(path: &Path, overrides: &Overrides) -> CliResult<Checkpoint> {
    let mut ck = load_checkpoint(path).map_err(|e| located(e, path))?;
    let before = ck.config.clone();
    overrides.apply(&mut ck.config)?;
    for key in ["d", "heads", "attn-hidden", "variant"] {
        if ck.config.get(key) != before.get(key) {
            return Err(usage(format!(
                "{key} is fixed by the checkpoint ({})",
                before.get(key).unwrap_or_default()
            )));
        }
    }
    Ok(ck)
}

fn run_synth(args: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = args.resolve()?;
    print_config(out, &config.to_text())?;
    let corpus = generate_synthetic_corpus(&config)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure {
        kind: ExitKind::Data,
        reason: format!("{}: {e}", args.out.display()),
    })?;
    write_text(&args.out.join("news.tsv"), &corpus.news_tsv())?;
    write_text(&args.out.join("behaviors.tsv"), &corpus.behaviors_tsv())?;
    write_text(&args.out.join("provenance.txt"), &corpus.provenance())?;
    writeln!(
        out,
        "news={} impressions={} clickbait={}",
        corpus.news.len(),
        corpus.behaviors.len(),
        corpus.clickbait_ids().len()
    )
    .map_err(|e| usage(e.to_string()))
}

fn run_prepare(args: &PrepareArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = args.overrides.resolve()?;
    print_config(out, &config.to_text())?;
    let (news, logs) = read_inputs(&args.inputs, &config)?;
    let vocab = build_vocabulary(&news, config.min_freq, config.vocab_cap)?;
    let data = Dataset::with_vocab(vocab, &news, &logs, &config)?;
    let usable = data
        .impressions
        .iter()
        .filter(|i| i.has_both_labels())
        .count();
    let clicks: usize = data
        .impressions
        .iter()
        .map(|i| i.candidates.iter().filter(|c| c.1).count())
        .sum();
    writeln!(
        out,
        "news={} impressions={} usable_impressions={} clicks={} vocab={}",
        data.news.len(),
        data.impressions.len(),
        usable,
        clicks,
        data.vocab.len()
    )
    .map_err(|e| usage(e.to_string()))?;
    if let Some(path) = &args.out {
        let mut text = String::new();
        for w in data.vocab.words() {
            text.push_str(w);
            text.push('\n');
        }
        write_text(path, &text)?;
    }
    Ok(())
}

fn run_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let (config, vocab, previous) = if args.resume {
        let ck = checkpoint_config(&args.checkpoint, &args.overrides)?;
        (ck.config, Some(ck.vocab), Some((ck.params, ck.state)))
    } else {
        (args.overrides.resolve()?, None, None)
    };
    print_config(out, &config.to_text())?;
    let (news, logs) = read_inputs(&args.inputs, &config)?;
    let data = match vocab {
        Some(v) => Dataset::with_vocab(v, &news, &logs, &config)?,
        None => Dataset::build(&news, &logs, &config)?,
    };
    let outcome = match previous {
        Some((params, state)) => resume(&config, &data, params, state, config.epochs)?,
        None => train(&config, &data)?,
    };
    let ck = Checkpoint {
        config,
        vocab: data.vocab,
        params: outcome.params,
        state: outcome.state,
    };
    save_checkpoint(&ck, &args.checkpoint).map_err(|e| located(e, &args.checkpoint))?;
    let csv = epoch_log_csv(&outcome.log);
    match &args.out {
        Some(p) => write_text(p, &csv),
        None => emit(out, None, &csv),
    }
}

fn run_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let ck = checkpoint_config(&args.checkpoint, &args.overrides)?;
    print_config(out, &ck.config.to_text())?;
    let (news, logs) = read_inputs(&args.inputs, &ck.config)?;
    let data = Dataset::with_vocab(ck.vocab, &news, &logs, &ck.config)?;
    let report = evaluate(&ck.params, &data.news, &data.impressions, ck.config.variant)?;
    if let Some(p) = &args.details {
        write_text(p, &report.details_csv())?;
    }
    emit(out, args.out.as_deref(), &report.to_csv())
}

fn run_ablate(args: &AblateArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = args.overrides.resolve()?;
    print_config(out, &config.to_text())?;
    writeln!(out, "# holdout={}", args.holdout).map_err(|e| usage(e.to_string()))?;
    let (news, logs) = read_inputs(&args.inputs, &config)?;
    let data = Dataset::build(&news, &logs, &config)?;
    let (train_part, test) = holdout_split(&data.impressions, args.holdout, config.seed)?;
    let train_data = data.with_impressions(train_part);
    let reports = Variant::ALL
        .iter()
        .map(|&v| run_ablation(v, &config, &train_data, &test).map(|run| run.report))
        .collect::<crate::Result<Vec<_>>>()?;
    emit(out, args.out.as_deref(), &reports_csv(&reports))
}

fn run_rank(args: &RankArgs, out: &mut dyn Write) -> CliResult<()> {
    let ck = checkpoint_config(&args.checkpoint, &args.overrides)?;
    print_config(out, &ck.config.to_text())?;
    let (news, logs) = read_inputs(&args.inputs, &ck.config)?;
    let data = Dataset::with_vocab(ck.vocab, &news, &logs, &ck.config)?;
    let imp = data
        .impressions
        .iter()
        .find(|i| i.impression_id == args.impression)
        .ok_or_else(|| Failure {
            kind: ExitKind::Data,
            reason: format!("unknown impression id {}", args.impression),
        })?;
    let ranking = inspect_ranking(
        &ck.params,
        &data.news,
        imp,
        ck.config.architecture(),
        &args.flag,
    )?;
    emit(out, args.out.as_deref(), &ranking.to_csv())
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// process exit code. Output and diagnostics go to the given writers.
pub fn dispatch_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let reason = e.kind().to_string();
            let detail = e.to_string();
            let first = detail
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            let _ = writeln!(
                err,
                "error[usage]: {}",
                if first.is_empty() { &reason } else { first }
            );
            return ExitKind::Usage.code();
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a, out),
        Command::Prepare(a) => run_prepare(a, out),
        Command::Train(a) => run_train(a, out),
        Command::Eval(a) => run_eval(a, out),
        Command::Ablate(a) => run_ablate(a, out),
        Command::Rank(a) => run_rank(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let reason = f.reason.replace(['\n', '\r'], " ");
            let _ = writeln!(err, "error[{}]: {reason}", f.kind.name());
            f.kind.code()
        }
    }
}

/// [`dispatch_with`] on the process's standard streams.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
