use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use labelforge::annotation::{ingest_attribute_file, AttributeFormat};
use labelforge::audit::{Pass, DEFAULT_MIN_PER_VALUE};
use labelforge::consistency::{disagreement_counts, rank_by_inconsistency};
use labelforge::duplicates::{duplicate_inconsistency, PairQueue, Verdict, DEFAULT_THRESHOLD};
use labelforge::probe::TrainConfig;
use labelforge::project::{data_root, parse_label_list, Project, DATA_ROOT_ENV};
use labelforge::report::{render, ReportFormat, Row};
use labelforge::workflow::{BinSummary, WorkflowConfig, WorkflowStatus};
use labelforge::{Error, Execution, LabelValue, Result};

use crate::server::{serve, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "labelforge", version, about = "Audit and clean binary attribute annotations")]
pub struct Cli {
    /// Directory holding projects.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Run data-parallel work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    JsonLines,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputFormat {
    Celeba,
    Extended,
}

impl From<InputFormat> for AttributeFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Celeba => AttributeFormat::CelebaOriginal,
            InputFormat::Extended => AttributeFormat::Extended,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PassArg {
    A,
    B,
}

impl From<PassArg> for Pass {
    fn from(p: PassArg) -> Self {
        match p {
            PassArg::A => Pass::A,
            PassArg::B => Pass::B,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a project or add data to one.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Disagreement between two re-annotation passes, with consistency tiers.
    Consistency(ConsistencyArgs),
    /// Candidate duplicate pairs and their review.
    #[command(subcommand)]
    Dupes(DupesCmd),
    /// Inconsistency over confirmed duplicate pairs, highest first.
    Pin(PinArgs),
    /// Error-rate audits with two independent passes.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Ensemble-agreement cleaning.
    #[command(subcommand)]
    Workflow(WorkflowCmd),
    /// Write current labels in the extended format plus the unusable sidecar.
    Export {
        #[arg(long)]
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of image files served under /images.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, default_value_t = labelforge::lease::DEFAULT_LEASE_SECONDS)]
        lease_seconds: i64,
    },
}

#[derive(Debug, Subcommand)]
enum IngestCmd {
    /// Create a project from an attribute file.
    Labels {
        #[arg(long)]
        project: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Celeba)]
        input_format: InputFormat,
    },
    /// Add a re-annotation pass (for consistency reports).
    Pass {
        #[arg(long)]
        project: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Extended)]
        input_format: InputFormat,
    },
    /// Attach an embedding file.
    Embeddings {
        #[arg(long)]
        project: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Replace the candidate-pair queue with an exported one.
    Pairs {
        #[arg(long)]
        project: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Set the guideline text shown to annotators for an attribute.
    Guideline {
        #[arg(long)]
        project: String,
        #[arg(long)]
        attribute: String,
        #[arg(long)]
        text: String,
    },
}

#[derive(Debug, Args)]
struct ConsistencyArgs {
    #[arg(long, conflicts_with_all = ["file_a", "file_b"])]
    project: Option<String>,
    /// Pass names inside the project.
    #[arg(long, default_value = "a")]
    a: String,
    #[arg(long, default_value = "b")]
    b: String,
    /// Standalone pass files instead of a project.
    #[arg(long, requires = "file_b")]
    file_a: Option<PathBuf>,
    #[arg(long, requires = "file_a")]
    file_b: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputFormat::Extended)]
    input_format: InputFormat,
}

#[derive(Debug, Subcommand)]
enum DupesCmd {
    /// Find same-identity pairs at or above the similarity threshold.
    Detect {
        #[arg(long)]
        project: String,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    List {
        #[arg(long)]
        project: String,
        /// all, pending, arbitration or confirmed.
        #[arg(long, default_value = "all")]
        status: String,
    },
    Verdict {
        #[arg(long)]
        project: String,
        #[arg(long)]
        pair: u32,
        /// DUPLICATE or NEAR_DUPLICATE_REJECTED.
        #[arg(long)]
        verdict: String,
        #[arg(long)]
        reviewer: String,
    },
    Arbitrate {
        #[arg(long)]
        project: String,
        #[arg(long)]
        pair: u32,
        #[arg(long)]
        verdict: String,
        #[arg(long)]
        arbiter: String,
    },
    Export {
        #[arg(long)]
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct PinArgs {
    #[arg(long, conflicts_with_all = ["pairs", "labels"])]
    project: Option<String>,
    /// Standalone pair queue (TSV) instead of a project.
    #[arg(long, requires = "labels")]
    pairs: Option<PathBuf>,
    #[arg(long, requires = "pairs")]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputFormat::Celeba)]
    input_format: InputFormat,
    /// Attributes to leave out (repeatable), e.g. Blurry.
    #[arg(long)]
    exclude: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum AuditCmd {
    /// Sample a stratum of the original labels and open a session.
    Create {
        #[arg(long)]
        project: String,
        #[arg(long)]
        attribute: String,
        /// Original value of the stratum (true or false).
        #[arg(long, action = clap::ArgAction::Set)]
        value: bool,
        #[arg(long, default_value_t = DEFAULT_MIN_PER_VALUE)]
        min_per_value: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        id: Option<String>,
    },
    /// Record one label, or a file of `image_id value` lines.
    Label {
        #[arg(long)]
        project: String,
        #[arg(long)]
        session: String,
        #[arg(long, value_enum)]
        pass: PassArg,
        #[arg(long)]
        annotator: String,
        #[arg(long, required_unless_present = "file", requires = "value")]
        image: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        value: Option<String>,
        #[arg(long, conflicts_with = "image")]
        file: Option<PathBuf>,
    },
    /// Move a complete session to reconciliation and list disagreements.
    Reconcile {
        #[arg(long)]
        project: String,
        #[arg(long)]
        session: String,
    },
    Resolve {
        #[arg(long)]
        project: String,
        #[arg(long)]
        session: String,
        #[arg(long)]
        image: String,
        #[arg(long, allow_hyphen_values = true)]
        value: String,
    },
    Close {
        #[arg(long)]
        project: String,
        #[arg(long)]
        session: String,
    },
    /// Print a session file.
    Show {
        #[arg(long)]
        project: String,
        #[arg(long)]
        session: String,
    },
    /// Error rates from closed sessions.
    Report {
        #[arg(long)]
        project: String,
        #[arg(long)]
        attribute: Option<String>,
    },
}

#[derive(Debug, Args)]
struct WorkflowOpts {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.8)]
    subset_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    target_error: f64,
    #[arg(long, default_value_t = 100)]
    audit_sample_size: usize,
    #[arg(long, default_value_t = 2000)]
    small_bin_threshold: usize,
    #[arg(long, default_value_t = 10)]
    max_rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Agreeing probes needed for an audit (default: all k).
    #[arg(long)]
    min_agreement: Option<usize>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
}

impl WorkflowOpts {
    fn config(&self) -> WorkflowConfig {
        WorkflowConfig {
            k: self.k,
            subset_fraction: self.subset_fraction,
            target_error: self.target_error,
            audit_sample_size: self.audit_sample_size,
            small_bin_threshold: self.small_bin_threshold,
            max_rounds: self.max_rounds,
            seed: self.seed,
            min_agreement: self.min_agreement,
            train: TrainConfig {
                epochs: self.epochs,
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                l2: self.l2,
                seed: self.seed,
            },
        }
    }
}

#[derive(Debug, Subcommand)]
enum WorkflowCmd {
    /// Start a workflow from a seed file, or from closed audits of the attribute.
    Init {
        #[arg(long)]
        project: String,
        #[arg(long)]
        id: String,
        #[arg(long)]
        attribute: String,
        /// `image_id value` lines.
        #[arg(long)]
        seed_file: Option<PathBuf>,
        #[command(flatten)]
        opts: WorkflowOpts,
    },
    /// Run the next round (no-op once the workflow has finished).
    Step {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
    },
    Status {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
    },
    /// Print the audit sample of a bin.
    Sample {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
        #[arg(long)]
        bin: usize,
    },
    /// Open an audit session over a bin's sample.
    Session {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
        #[arg(long)]
        bin: usize,
    },
    /// Decide a bin from an audit (consensus file or closed session).
    Audit {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
        #[arg(long)]
        bin: usize,
        #[arg(long, required_unless_present = "session")]
        consensus_file: Option<PathBuf>,
        #[arg(long, conflicts_with = "consensus_file")]
        session: Option<String>,
    },
    /// Label a whole small bin by hand.
    Manual {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
        #[arg(long)]
        bin: usize,
        #[arg(long)]
        labels_file: PathBuf,
    },
    /// Send a bin to the next round.
    Defer {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
        #[arg(long)]
        bin: usize,
    },
    /// Write cleaned labels into the project labels.
    Apply {
        #[arg(long)]
        project: String,
        #[arg(long, default_value = "w1")]
        id: String,
    },
}

struct Ctx {
    root: PathBuf,
    format: ReportFormat,
    exec: Execution,
    out: String,
}

impl Ctx {
    fn open(&self, project: &str) -> Result<Project> {
        Project::open(&self.root, project)
    }

    fn table<T: Row + Serialize>(&mut self, rows: &[T]) {
        self.out.push_str(&render(rows, self.format));
    }

    /// A one-off result: `human` in table mode, `value` as one JSON line otherwise.
    fn record<T: Serialize>(&mut self, human: impl AsRef<str>, value: &T) {
        match self.format {
            ReportFormat::Table => {
                self.out.push_str(human.as_ref());
                self.out.push('\n');
            }
            ReportFormat::JsonLines => {
                self.out.push_str(&serde_json::to_string(value).expect("serializable"));
                self.out.push('\n');
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn parse_value(s: &str) -> Result<LabelValue> {
    s.parse::<LabelValue>()
        .map_err(|_| Error::InvalidArgument(format!("unknown label value {s:?}")))
}

/// Parses `argv`, runs the command and writes its output. Returns the
/// process exit code: 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    let mut ctx = Ctx {
        root: data_root(cli.data_root.as_deref()),
        format: match cli.format {
            Format::Table => ReportFormat::Table,
            Format::JsonLines => ReportFormat::JsonLines,
        },
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
        out: String::new(),
    };
    let result = dispatch(cli.command, &mut ctx);
    let _ = write!(stdout, "{}", ctx.out);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", e.code());
            if !e.ids().is_empty() {
                let shown: Vec<&str> = e.ids().iter().take(20).map(String::as_str).collect();
                let more = e.ids().len().saturating_sub(shown.len());
                let _ = writeln!(
                    stderr,
                    "  ids: {}{}",
                    shown.join(" "),
                    if more > 0 { format!(" (+{more} more)") } else { String::new() }
                );
            }
            1
        }
    }
}

fn dispatch(command: Command, ctx: &mut Ctx) -> Result<()> {
    match command {
        Command::Ingest(cmd) => ingest(cmd, ctx),
        Command::Consistency(args) => consistency(args, ctx),
        Command::Dupes(cmd) => dupes(cmd, ctx),
        Command::Pin(args) => pin(args, ctx),
        Command::Audit(cmd) => audit(cmd, ctx),
        Command::Workflow(cmd) => workflow(cmd, ctx),
        Command::Export { project, out } => {
            let p = ctx.open(&project)?;
            p.export(&out)?;
            let (_, unusable) = p.labels().summary();
            ctx.record(
                format!("wrote {} ({} unusable)", out.display(), unusable),
                &json!({ "out": out, "unusable": unusable }),
            );
            Ok(())
        }
        Command::Serve {
            addr,
            images,
            lease_seconds,
        } => {
            let config = ServiceConfig {
                data_root: ctx.root.clone(),
                images,
                lease: chrono::Duration::seconds(lease_seconds),
                exec: ctx.exec,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
                path: PathBuf::from("<runtime>"),
                source: e,
            })?;
            runtime.block_on(serve(config, addr)).map_err(|e| Error::Io {
                path: PathBuf::from(addr.to_string()),
                source: e,
            })
        }
    }
}

fn ingest(cmd: IngestCmd, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        IngestCmd::Labels {
            project,
            labels,
            input_format,
        } => {
            let p = Project::create(&ctx.root, &project, &labels, input_format.into())?;
            let s = p.summary();
            ctx.record(
                format!(
                    "created project {} with {} images ({} unusable) and {} attributes",
                    s.id, s.images, s.unusable, s.attributes
                ),
                &s,
            );
        }
        IngestCmd::Pass {
            project,
            name,
            labels,
            input_format,
        } => {
            ctx.open(&project)?.import_pass(&name, &labels, input_format.into())?;
            ctx.record(format!("stored pass {name}"), &json!({ "pass": name }));
        }
        IngestCmd::Embeddings { project, file } => {
            let n = ctx.open(&project)?.import_embeddings(&file)?;
            ctx.record(format!("stored {n} embeddings"), &json!({ "embeddings": n }));
        }
        IngestCmd::Pairs { project, file } => {
            let n = ctx.open(&project)?.import_pairs(&file)?;
            ctx.record(format!("stored {n} pairs"), &json!({ "pairs": n }));
        }
        IngestCmd::Guideline {
            project,
            attribute,
            text,
        } => {
            ctx.open(&project)?.set_guideline(&attribute, &text)?;
            ctx.record(format!("guideline set for {attribute}"), &json!({ "attribute": attribute }));
        }
    }
    Ok(())
}

fn consistency(args: ConsistencyArgs, ctx: &mut Ctx) -> Result<()> {
    let rows = match (args.project, args.file_a, args.file_b) {
        (Some(project), None, None) => ctx.open(&project)?.consistency_report(&args.a, &args.b)?,
        (None, Some(fa), Some(fb)) => {
            let f = args.input_format.into();
            disagreement_counts(&ingest_attribute_file(&fa, f)?, &ingest_attribute_file(&fb, f)?)?
        }
        _ => {
            return Err(Error::InvalidArgument(
                "give --project, or both --file-a and --file-b".into(),
            ))
        }
    };
    ctx.table(&rows);
    Ok(())
}

fn dupes(cmd: DupesCmd, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        DupesCmd::Detect { project, threshold } => {
            let n = ctx.open(&project)?.detect_pairs(threshold, ctx.exec)?;
            ctx.record(
                format!("{n} candidate pairs at similarity >= {threshold}"),
                &json!({ "pairs": n, "threshold": threshold }),
            );
        }
        DupesCmd::List { project, status } => {
            let p = ctx.open(&project)?;
            let rows: Vec<_> = p
                .pairs()
                .iter()
                .filter(|c| match status.as_str() {
                    "pending" => c.verdict == Verdict::Pending,
                    "arbitration" => c.arbitration,
                    "confirmed" => c.is_confirmed(),
                    _ => true,
                })
                .cloned()
                .collect();
            ctx.table(&rows);
        }
        DupesCmd::Verdict {
            project,
            pair,
            verdict,
            reviewer,
        } => {
            let c = ctx.open(&project)?.record_verdict(pair, verdict.parse()?, &reviewer)?;
            ctx.table(&[c]);
        }
        DupesCmd::Arbitrate {
            project,
            pair,
            verdict,
            arbiter,
        } => {
            let c = ctx.open(&project)?.arbitrate(pair, verdict.parse()?, &arbiter)?;
            ctx.table(&[c]);
        }
        DupesCmd::Export { project, out } => {
            let p = ctx.open(&project)?;
            let text = PairQueue::new(p.pairs().to_vec()).to_tsv();
            fs::write(&out, text).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            ctx.record(format!("wrote {}", out.display()), &json!({ "out": out }));
        }
    }
    Ok(())
}

fn pin(args: PinArgs, ctx: &mut Ctx) -> Result<()> {
    let (rows, degenerate) = match (args.project, args.pairs, args.labels) {
        (Some(project), None, None) => ctx.open(&project)?.pin_report(&args.exclude)?,
        (None, Some(pairs), Some(labels)) => {
            let queue = PairQueue::from_tsv(&read(&pairs)?)?;
            let matrix = ingest_attribute_file(&labels, args.input_format.into())?;
            let (stats, degenerate) = duplicate_inconsistency(queue.pairs(), &matrix)?;
            (rank_by_inconsistency(stats, &args.exclude), degenerate)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "give --project, or both --pairs and --labels".into(),
            ))
        }
    };
    ctx.table(&rows);
    if !degenerate.is_empty() {
        log::warn!("DEGENERATE_FREQUENCY: skipped {}", degenerate.join(", "));
    }
    Ok(())
}

fn audit(cmd: AuditCmd, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        AuditCmd::Create {
            project,
            attribute,
            value,
            min_per_value,
            seed,
            id,
        } => {
            let mut p = ctx.open(&project)?;
            let s = p.create_session(id.as_deref(), &attribute, value, min_per_value, seed)?;
            ctx.record(
                format!(
                    "session {} samples {} of {} images with {attribute}={}",
                    s.id,
                    s.plan.sample_ids.len(),
                    s.plan.population,
                    LabelValue::from_bool(value)
                ),
                &s.plan,
            );
        }
        AuditCmd::Label {
            project,
            session,
            pass,
            annotator,
            image,
            value,
            file,
        } => {
            let mut p = ctx.open(&project)?;
            let labels: BTreeMap<String, LabelValue> = match (image, value, file) {
                (Some(image), Some(value), None) => [(image, parse_value(&value)?)].into(),
                (None, None, Some(file)) => parse_label_list(&read(&file)?)?,
                _ => return Err(Error::InvalidArgument("give --image and --value, or --file".into())),
            };
            for (image, value) in &labels {
                p.record_audit_label(&session, pass.into(), &annotator, image, *value)?;
            }
            let remaining = p.session(&session)?.unlabeled(pass.into()).count();
            ctx.record(
                format!("recorded {} labels, {remaining} left in this pass", labels.len()),
                &json!({ "recorded": labels.len(), "remaining": remaining }),
            );
        }
        AuditCmd::Reconcile { project, session } => {
            let ids = ctx.open(&project)?.start_reconciliation(&session)?;
            ctx.record(
                format!("{} disagreements to resolve\n{}", ids.len(), ids.join("\n")),
                &json!({ "disagreements": ids }),
            );
        }
        AuditCmd::Resolve {
            project,
            session,
            image,
            value,
        } => {
            let mut p = ctx.open(&project)?;
            p.resolve(&session, &image, parse_value(&value)?)?;
            let left = p.session(&session)?.unresolved();
            ctx.record(format!("{} unresolved", left.len()), &json!({ "unresolved": left }));
        }
        AuditCmd::Close { project, session } => {
            ctx.open(&project)?.close_session(&session)?;
            ctx.record(format!("session {session} closed"), &json!({ "closed": session }));
        }
        AuditCmd::Show { project, session } => {
            let p = ctx.open(&project)?;
            let text = p.session(&session)?.to_text();
            ctx.out.push_str(&text);
        }
        AuditCmd::Report { project, attribute } => {
            let rows = ctx.open(&project)?.error_report(attribute.as_deref())?;
            ctx.table(&rows);
        }
    }
    Ok(())
}

fn bin_rows(p: &Project, id: &str) -> Result<Vec<BinSummary>> {
    let w = p.workflow(id)?;
    Ok(w.bins()
        .iter()
        .map(|b| BinSummary {
            round: w.round,
            votes: b.votes,
            size: b.members.len(),
            decision: b.decision,
            audited_error: b.audited_error(),
        })
        .collect())
}

fn workflow(cmd: WorkflowCmd, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        WorkflowCmd::Init {
            project,
            id,
            attribute,
            seed_file,
            opts,
        } => {
            let mut p = ctx.open(&project)?;
            let seed = match seed_file {
                Some(f) => parse_label_list(&read(&f)?)?,
                None => p.audited_labels(&attribute),
            };
            let w = p.create_workflow(&id, &attribute, &seed, opts.config())?;
            ctx.record(
                format!(
                    "workflow {id}: {} seed labels, {} to clean, {}",
                    w.cleaned().len(),
                    w.uncleaned().len(),
                    w.status()
                ),
                &json!({ "id": id, "seed": w.cleaned().len(), "uncleaned": w.uncleaned().len(), "status": w.status() }),
            );
        }
        WorkflowCmd::Step { project, id } => {
            let mut p = ctx.open(&project)?;
            let status = p.check_convergence(&id)?;
            if status != WorkflowStatus::Running {
                ctx.record(
                    format!("workflow {id} is {status}; nothing to do"),
                    &json!({ "id": id, "status": status, "noop": true }),
                );
                return Ok(());
            }
            p.run_round(&id, ctx.exec)?;
            let rows = bin_rows(&p, &id)?;
            ctx.table(&rows);
        }
        WorkflowCmd::Status { project, id } => {
            let mut p = ctx.open(&project)?;
            p.check_convergence(&id)?;
            let w = p.workflow(&id)?;
            let summary = json!({
                "id": id,
                "status": w.status(),
                "round": w.round,
                "cleaned": w.cleaned().len(),
                "uncleaned": w.uncleaned().len(),
                "estimated_error": w.estimated_error(),
            });
            match ctx.format {
                ReportFormat::Table => {
                    ctx.out.push_str(&format!(
                        "workflow {id}: {} round {}, {} cleaned, {} uncleaned, estimated error {:.2}% (target {:.2}%)\n",
                        w.status(),
                        w.round,
                        w.cleaned().len(),
                        w.uncleaned().len(),
                        100.0 * w.estimated_error(),
                        100.0 * w.config.target_error
                    ));
                    let rows = w.summaries();
                    ctx.table(&rows);
                }
                ReportFormat::JsonLines => {
                    let rows = w.summaries();
                    ctx.record("", &summary);
                    ctx.table(&rows);
                }
            }
        }
        WorkflowCmd::Sample { project, id, bin } => {
            let ids = ctx.open(&project)?.workflow(&id)?.bin_audit_sample(bin)?;
            ctx.record(ids.join("\n"), &json!({ "bin": bin, "sample": ids }));
        }
        WorkflowCmd::Session { project, id, bin } => {
            let mut p = ctx.open(&project)?;
            let s = p.create_bin_session(&id, bin)?;
            ctx.record(
                format!("session {} over {} images of bin {bin}", s.id, s.plan.sample_ids.len()),
                &json!({ "session": s.id, "sample": s.plan.sample_ids.len() }),
            );
        }
        WorkflowCmd::Audit {
            project,
            id,
            bin,
            consensus_file,
            session,
        } => {
            let mut p = ctx.open(&project)?;
            let b = match (consensus_file, session) {
                (Some(f), None) => p.audit_bin(&id, bin, &parse_label_list(&read(&f)?)?)?,
                (None, Some(s)) => p.audit_bin_with_session(&id, bin, &s)?,
                _ => return Err(Error::InvalidArgument("give --consensus-file or --session".into())),
            };
            ctx.record(
                format!(
                    "bin {bin}: {} (audited error {:.2}%)",
                    b.decision,
                    100.0 * b.audited_error().unwrap_or(f64::NAN)
                ),
                &json!({ "bin": bin, "decision": b.decision, "audited_error": b.audited_error() }),
            );
        }
        WorkflowCmd::Manual {
            project,
            id,
            bin,
            labels_file,
        } => {
            let mut p = ctx.open(&project)?;
            let b = p.mark_manual(&id, bin, &parse_label_list(&read(&labels_file)?)?)?;
            ctx.record(
                format!("bin {bin}: {} ({} images)", b.decision, b.members.len()),
                &json!({ "bin": bin, "decision": b.decision }),
            );
        }
        WorkflowCmd::Defer { project, id, bin } => {
            let b = ctx.open(&project)?.defer_bin(&id, bin)?;
            ctx.record(format!("bin {bin}: {}", b.decision), &json!({ "bin": bin, "decision": b.decision }));
        }
        WorkflowCmd::Apply { project, id } => {
            let n = ctx.open(&project)?.apply_workflow(&id)?;
            ctx.record(format!("{n} labels changed"), &json!({ "changed": n }));
        }
    }
    Ok(())
}
