//! The `camtrap` command line.
//!
//! Exit status: 0 on success, 1 when data cannot be processed (unreadable
//! file, bad header, leaking split) or when `--strict` finds validation
//! errors, 2 on usage errors (bad flags, missing inputs, refusing to
//! overwrite an existing output file).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use camtrap_core::eval::{
    geofilter, sequence_aggregate, MetricsReport, PredictionSet, Scorer, Tally,
};
use camtrap_core::geosplit::{assign_regions, export_split, Fold, SplitConfig};
use camtrap_core::ingest::unify;
use camtrap_core::stats::{
    blank_counts_by_source, blank_rate, class_distribution, class_distribution_of, class_weights,
    group_bursts, labeling_effort, skew_report, ClassHistogram, DEFAULT_MAX_GAP,
};
use camtrap_core::{
    ImageRecord, IssueKind, Level, Source, TaxonomyTable, UnifiedDataset, ValidationReport,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::predictions::{read_predictions, read_range_map, write_predictions};
use crate::read::{read_deployments, read_images, read_taxonomy};
use crate::{synth, write};

#[derive(Debug, Parser)]
#[command(
    name = "camtrap",
    version,
    about = "Camera-trap dataset ingestion, splitting, diagnostics and scoring"
)]
struct Cli {
    /// Worker threads for parsing and scoring [default: all cores]
    #[arg(long, global = true, env = "CAMTRAP_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    /// What to print on standard output
    #[arg(long, global = true, value_enum, default_value_t = Format::Summary)]
    format: Format,
    /// Print timings and warnings to standard error
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Summary,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, validate and unify sources into one dataset directory
    Ingest {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: RequiredOut,
        /// Exit with status 1 if any validation error was found
        #[arg(long)]
        strict: bool,
    },
    /// Report data problems without writing a dataset
    Validate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: OptionalOut,
        /// Exit with status 1 if any validation error was found
        #[arg(long)]
        strict: bool,
    },
    /// Label distribution, skew, blank rate, labeling effort
    Stats {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: OptionalOut,
        #[arg(long, default_value = "species", value_parser = parse_level)]
        level: Level,
        /// Labels counted in the skew coverage
        #[arg(long, default_value_t = 20)]
        top_n: usize,
        /// Count blank and unknown labels in the skew report
        #[arg(long)]
        include_specials: bool,
        /// Manual labeling rate in images per hour
        #[arg(long, default_value_t = 450.0)]
        rate: f64,
        /// Largest gap in seconds between images of one burst
        #[arg(long, default_value_t = DEFAULT_MAX_GAP.as_secs())]
        max_gap: u64,
    },
    /// Assign whole geographic regions to train or eval
    Split {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: RequiredOut,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        #[arg(long, default_value_t = 10.0)]
        cell_size_m: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score ranked predictions against the dataset labels
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: OptionalOut,
        #[arg(long)]
        predictions: PathBuf,
        /// Split directory (its eval.txt is used) or a manifest file
        #[arg(long)]
        split: Option<PathBuf>,
        /// Cutoffs for top-k accuracy; repeatable
        #[arg(long = "k", default_values_t = [1usize, 3])]
        k: Vec<usize>,
        #[arg(long, default_value = "species", value_parser = parse_level)]
        level: Level,
        /// Drop out-of-range labels before scoring
        #[arg(long)]
        range_map: Option<PathBuf>,
        /// Label emitted when the range map removes every entry
        #[arg(long)]
        unknown_label: Option<String>,
    },
    /// Remove predicted labels whose range excludes the camera location
    Geofilter {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: RequiredOut,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        range_map: PathBuf,
        #[arg(long)]
        unknown_label: Option<String>,
    },
    /// Capped inverse-frequency class weights
    Weights {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: RequiredOut,
        /// Split directory (its train.txt is used) or a manifest file
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value = "species", value_parser = parse_level)]
        level: Level,
        #[arg(long, default_value_t = 10.0)]
        cap: f64,
    },
    /// Group images into bursts and optionally average their predictions
    Sequences {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: RequiredOut,
        #[arg(long, default_value_t = DEFAULT_MAX_GAP.as_secs())]
        max_gap: u64,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with predictions
    Synth {
        #[command(flatten)]
        out: RequiredOut,
        /// Use this taxonomy instead of the generated 271 + 194 species one
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        images: usize,
        #[arg(long, default_value_t = 100)]
        deployments: usize,
        #[arg(long, default_value_t = 0.3)]
        blank_rate: f64,
        /// Share of non-blank images held by the 20 most frequent species
        #[arg(long, default_value_t = 0.7)]
        top20_share: f64,
        /// Zipf exponent of species frequencies; overrides --top20-share
        #[arg(long)]
        zipf_exponent: Option<f64>,
        #[arg(long, default_value_t = 3)]
        max_burst: usize,
        /// Probability that the top prediction is correct
        #[arg(long, default_value_t = 0.7)]
        accuracy: f64,
        /// Entries per prediction line
        #[arg(long, default_value_t = 5)]
        entries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    /// Directory holding taxonomy.csv, deployments.csv and images.csv
    #[arg(long, conflicts_with_all = ["taxonomy", "deployments", "images"])]
    dataset: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Deployment file of one source; repeat once per source
    #[arg(long)]
    deployments: Vec<PathBuf>,
    /// Image file of one source, paired with --deployments in order
    #[arg(long)]
    images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct RequiredOut {
    /// Output directory, created if absent
    #[arg(long, short)]
    out: PathBuf,
    /// Replace existing output files
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct OptionalOut {
    /// Output directory, created if absent
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Replace existing output files
    #[arg(long)]
    overwrite: bool,
}

fn parse_level(s: &str) -> Result<Level, String> {
    Level::parse(s)
        .ok_or_else(|| format!("`{s}` is not one of class, order, family, genus, species"))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Strict(usize),
}

type Outcome<T = ()> = Result<T, Failure>;

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<camtrap_core::Error> for Failure {
    fn from(e: camtrap_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Runs the tool and returns its exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.map_or(0, usize::from))
        .build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let mut stdout = String::new();
    let result = pool.install(|| execute(&cli, &mut stdout));
    let _ = io::stdout().lock().write_all(stdout.as_bytes());
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Strict(n)) => {
            eprintln!("error: {n} validation error(s)");
            1
        }
    }
}

struct Ctx {
    format: Format,
    verbose: bool,
    start: Instant,
}

impl Ctx {
    fn log(&self, msg: impl std::fmt::Display) {
        if self.verbose {
            eprintln!("[{:>8.3}s] {msg}", self.start.elapsed().as_secs_f64());
        }
    }
}

fn execute(cli: &Cli, stdout: &mut String) -> Outcome {
    let ctx = Ctx {
        format: cli.format,
        verbose: cli.verbose,
        start: Instant::now(),
    };
    match &cli.command {
        Command::Ingest {
            inputs,
            out,
            strict,
        } => ingest(&ctx, inputs, out, *strict, stdout),
        Command::Validate {
            inputs,
            out,
            strict,
        } => validate(&ctx, inputs, out, *strict, stdout),
        Command::Stats {
            inputs,
            out,
            level,
            top_n,
            include_specials,
            rate,
            max_gap,
        } => {
            let opts = StatsOpts {
                level: *level,
                top_n: *top_n,
                include_specials: *include_specials,
                rate: *rate,
                max_gap: Duration::from_secs(*max_gap),
            };
            stats(&ctx, inputs, out, &opts, stdout)
        }
        Command::Split {
            inputs,
            out,
            train_fraction,
            cell_size_m,
            seed,
        } => {
            let config = SplitConfig {
                train_fraction: *train_fraction,
                cell_size_m: *cell_size_m,
                seed: *seed,
            };
            split(&ctx, inputs, out, config, stdout)
        }
        Command::Eval {
            inputs,
            out,
            predictions,
            split,
            k,
            level,
            range_map,
            unknown_label,
        } => {
            let opts = EvalOpts {
                predictions,
                split: split.as_deref(),
                ks: k,
                level: *level,
                range_map: range_map.as_deref(),
                unknown_label: unknown_label.as_deref(),
            };
            eval(&ctx, inputs, out, &opts, stdout)
        }
        Command::Geofilter {
            inputs,
            out,
            predictions,
            range_map,
            unknown_label,
        } => geofilter_cmd(
            &ctx,
            inputs,
            out,
            predictions,
            range_map,
            unknown_label.as_deref(),
            stdout,
        ),
        Command::Weights {
            inputs,
            out,
            split,
            level,
            cap,
        } => weights(&ctx, inputs, out, split.as_deref(), *level, *cap, stdout),
        Command::Sequences {
            inputs,
            out,
            max_gap,
            predictions,
        } => sequences(
            &ctx,
            inputs,
            out,
            Duration::from_secs(*max_gap),
            predictions.as_deref(),
            stdout,
        ),
        Command::Synth {
            out,
            taxonomy,
            images,
            deployments,
            blank_rate,
            top20_share,
            zipf_exponent,
            max_burst,
            accuracy,
            entries,
            seed,
        } => {
            let opts = SynthOpts {
                taxonomy: taxonomy.as_deref(),
                images: *images,
                deployments: *deployments,
                blank_rate: *blank_rate,
                top20_share: *top20_share,
                zipf_exponent: *zipf_exponent,
                max_burst: *max_burst,
                accuracy: *accuracy,
                entries: *entries,
                seed: *seed,
            };
            synth_cmd(&ctx, out, &opts, stdout)
        }
    }
}

fn require_exists(path: &Path) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "input not found: {}",
            path.display()
        )))
    }
}

struct Resolved {
    taxonomy: PathBuf,
    sources: Vec<(PathBuf, PathBuf)>,
}

impl Inputs {
    fn resolve(&self) -> Outcome<Resolved> {
        let r = if let Some(dir) = &self.dataset {
            Resolved {
                taxonomy: dir.join("taxonomy.csv"),
                sources: vec![(dir.join("deployments.csv"), dir.join("images.csv"))],
            }
        } else {
            let taxonomy = self.taxonomy.clone().ok_or_else(|| {
                Failure::Usage(
                    "pass --dataset DIR or --taxonomy with --deployments/--images".into(),
                )
            })?;
            if self.deployments.is_empty() || self.deployments.len() != self.images.len() {
                return Err(Failure::Usage(format!(
                    "--deployments and --images must be given in pairs (got {} and {})",
                    self.deployments.len(),
                    self.images.len()
                )));
            }
            Resolved {
                taxonomy,
                sources: self
                    .deployments
                    .iter()
                    .cloned()
                    .zip(self.images.iter().cloned())
                    .collect(),
            }
        };
        require_exists(&r.taxonomy)?;
        for (d, i) in &r.sources {
            require_exists(d)?;
            require_exists(i)?;
        }
        Ok(r)
    }
}

/// An output directory whose files are checked before any work starts.
struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    fn prepare(dir: &Path, overwrite: bool, files: &[&str]) -> Outcome<OutDir> {
        if dir.exists() && !dir.is_dir() {
            return Err(Failure::Usage(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
        if !overwrite {
            if let Some(f) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
                return Err(Failure::Usage(format!(
                    "refusing to overwrite {}; pass --overwrite",
                    f.display()
                )));
            }
        }
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
        })
    }

    fn file(&self, name: &str) -> Outcome<BufWriter<File>> {
        let path = self.dir.join(name);
        File::create(&path)
            .map(|f| BufWriter::with_capacity(1 << 20, f))
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }
}

fn optional_out(out: &OptionalOut, files: &[&str]) -> Outcome<Option<OutDir>> {
    out.out
        .as_deref()
        .map(|d| OutDir::prepare(d, out.overwrite, files))
        .transpose()
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(
        || p.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

/// Prefixes every issue's detail, so row numbers point at a file.
fn located(report: ValidationReport, origin: &str) -> ValidationReport {
    report
        .issues()
        .iter()
        .cloned()
        .map(|mut i| {
            i.detail = format!("{origin} {}", i.detail);
            i
        })
        .collect()
}

struct Loaded {
    dataset: UnifiedDataset,
    report: ValidationReport,
    source_names: Vec<String>,
}

fn load(ctx: &Ctx, inputs: &Inputs) -> Outcome<Loaded> {
    let paths = inputs.resolve()?;
    let (table, tax_report) = read_taxonomy(&paths.taxonomy)?;
    ctx.log(format_args!("taxonomy: {} labels", table.len()));
    let parsed: Vec<_> = paths
        .sources
        .par_iter()
        .map(|(d, i)| rayon::join(|| read_deployments(d), || read_images(i)))
        .collect();
    let mut report = tax_report;
    let mut sources = Vec::with_capacity(parsed.len());
    let mut source_names = Vec::new();
    for (n, ((dp, ip), (deps, imgs))) in paths.sources.iter().zip(parsed).enumerate() {
        let (deps, imgs) = (deps?, imgs?);
        let tag = n + 1;
        report.extend(located(
            deps.report,
            &format!("source{tag}:{}", file_name(dp)),
        ));
        report.extend(located(
            imgs.report,
            &format!("source{tag}:{}", file_name(ip)),
        ));
        let name = format!("source{tag}:{}", file_name(ip));
        source_names.push(name.clone());
        sources.push(Source::new(name, deps.records, imgs.records));
    }
    ctx.log("parsed sources");
    let (dataset, unify_report) = unify(sources, table);
    report.extend(unify_report);
    report.sort();
    ctx.log(format_args!(
        "unified: {} deployments, {} images, {} issues",
        dataset.deployments().len(),
        dataset.len(),
        report.len()
    ));
    Ok(Loaded {
        dataset,
        report,
        source_names,
    })
}

fn warn_dropped(ctx: &Ctx, report: &ValidationReport) {
    let n = report.error_count();
    if n > 0 {
        eprintln!("warning: {n} validation error(s); affected records were left out (see `camtrap validate`)");
    } else {
        ctx.log("no validation errors");
    }
}

fn kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key:<32}{value}");
}

fn csv_string(f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> Outcome<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Failure::Data(e.to_string()))
}

fn issue_summary(out: &mut String, report: &ValidationReport) {
    let counts = report.counts();
    kv(out, "errors", report.error_count());
    kv(out, "notes", report.note_count());
    for kind in IssueKind::ALL {
        let notes = report.notes().filter(|i| i.kind == kind).count();
        if counts.get(kind) + notes > 0 {
            kv(
                out,
                &format!("  {kind}"),
                format_args!("{} error(s), {notes} note(s)", counts.get(kind)),
            );
        }
    }
}

fn ingest(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &RequiredOut,
    strict: bool,
    stdout: &mut String,
) -> Outcome {
    let files = [
        "taxonomy.csv",
        "deployments.csv",
        "images.csv",
        "issues.csv",
        "sources.csv",
    ];
    let dir = OutDir::prepare(&out.out, out.overwrite, &files)?;
    let loaded = load(ctx, inputs)?;
    let ds = &loaded.dataset;
    write::write_taxonomy(dir.file("taxonomy.csv")?, ds.taxonomy())?;
    write::write_deployments(dir.file("deployments.csv")?, ds.deployments())?;
    write::write_images(dir.file("images.csv")?, ds.images())?;
    write::write_issues(dir.file("issues.csv")?, &loaded.report)?;
    let rows: Vec<(String, String, String)> = ds
        .provenance()
        .iter()
        .flat_map(|p| {
            [
                ("deployments_parsed", p.deployments_read),
                ("deployments_kept", p.deployments_kept),
                ("images_parsed", p.images_read),
                ("images_kept", p.images_kept),
            ]
            .map(|(m, v)| (m.to_string(), p.name.clone(), v.to_string()))
        })
        .collect();
    write::write_key_values(dir.file("sources.csv")?, &rows)?;
    ctx.log("wrote dataset");
    match ctx.format {
        Format::Csv => stdout.push_str(&csv_string(|b| write::write_issues(b, &loaded.report))?),
        Format::Summary => {
            kv(stdout, "sources", loaded.source_names.len());
            kv(stdout, "labels", ds.taxonomy().len());
            kv(stdout, "deployments", ds.deployments().len());
            kv(stdout, "images", ds.len());
            issue_summary(stdout, &loaded.report);
        }
    }
    strict_check(strict, &loaded.report)
}

fn strict_check(strict: bool, report: &ValidationReport) -> Outcome {
    if strict && !report.is_clean() {
        Err(Failure::Strict(report.error_count()))
    } else {
        Ok(())
    }
}

fn validate(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &OptionalOut,
    strict: bool,
    stdout: &mut String,
) -> Outcome {
    let dir = optional_out(out, &["issues.csv"])?;
    let loaded = load(ctx, inputs)?;
    if let Some(dir) = &dir {
        write::write_issues(dir.file("issues.csv")?, &loaded.report)?;
    }
    match ctx.format {
        Format::Csv => stdout.push_str(&csv_string(|b| write::write_issues(b, &loaded.report))?),
        Format::Summary => {
            kv(stdout, "images", loaded.dataset.len());
            issue_summary(stdout, &loaded.report);
            kv(
                stdout,
                "status",
                if loaded.report.is_clean() {
                    "ok"
                } else {
                    "failed"
                },
            );
        }
    }
    strict_check(strict, &loaded.report)
}

struct StatsOpts {
    level: Level,
    top_n: usize,
    include_specials: bool,
    rate: f64,
    max_gap: Duration,
}

fn special_ids(table: &TaxonomyTable) -> Vec<&str> {
    table
        .records()
        .filter(|r| r.special_kind().is_some())
        .map(|r| r.label_id())
        .collect()
}

fn stats(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &OptionalOut,
    opts: &StatsOpts,
    stdout: &mut String,
) -> Outcome {
    if opts.top_n < 1 {
        return Err(Failure::Usage("--top-n must be at least 1".into()));
    }
    labeling_effort(0, opts.rate).map_err(|e| Failure::Usage(e.to_string()))?;
    let files = [
        "distribution.csv",
        "skew.csv",
        "distinct_counts.csv",
        "stats.csv",
    ];
    let dir = optional_out(out, &files)?;
    let loaded = load(ctx, inputs)?;
    warn_dropped(ctx, &loaded.report);
    let ds = &loaded.dataset;
    if ds.is_empty() {
        return Err(Failure::Data("dataset has no images".into()));
    }
    let hist = class_distribution(ds, opts.level);
    let skew_hist = if opts.include_specials {
        hist.clone()
    } else {
        hist.without(special_ids(ds.taxonomy()))
    };
    let skew = match skew_report(&skew_hist, opts.top_n) {
        Ok(s) => Some(s),
        Err(camtrap_core::Error::EmptyHistogram) => None,
        Err(e) => return Err(e.into()),
    };
    let blank = blank_rate(ds)?;
    let by_source = blank_counts_by_source(ds);
    let hours = labeling_effort(ds.len() as u64, opts.rate)?;
    let groups = group_bursts(ds, opts.max_gap);
    let distinct = ds
        .taxonomy()
        .distinct_counts_of(ds.images().iter().map(|i| i.label_id.as_str()), true);

    let mut rows: Vec<(String, String, String)> = Vec::new();
    let mut row = |m: &str, k: &str, v: String| rows.push((m.to_string(), k.to_string(), v));
    row("level", "overall", opts.level.as_str().to_string());
    row("images", "overall", ds.len().to_string());
    row("deployments", "overall", ds.deployments().len().to_string());
    row("labels_present", "overall", hist.len().to_string());
    row("blank_rate", "overall", blank.to_string());
    for (source, (blanks, n)) in &by_source {
        row(
            "blank_rate",
            source,
            (*blanks as f64 / *n as f64).to_string(),
        );
    }
    if let Some(s) = &skew {
        row(
            &format!("top{}_coverage", opts.top_n),
            "overall",
            s.coverage_fraction.to_string(),
        );
    }
    row("labeling_rate_per_hour", "overall", opts.rate.to_string());
    row("labeling_hours", "overall", hours.to_string());
    row("sequences", "overall", groups.len().to_string());
    row(
        "max_gap_seconds",
        "overall",
        opts.max_gap.as_secs().to_string(),
    );

    if let Some(dir) = &dir {
        write::write_distribution(dir.file("distribution.csv")?, &hist)?;
        write_skew_or_empty(dir.file("skew.csv")?, skew.as_ref())?;
        write::write_distinct_counts(dir.file("distinct_counts.csv")?, &distinct)?;
        write::write_key_values(dir.file("stats.csv")?, &rows)?;
    }
    match ctx.format {
        Format::Csv => stdout.push_str(&csv_string(|b| write_skew_or_empty(b, skew.as_ref()))?),
        Format::Summary => {
            for (m, k, v) in &rows {
                let key = if k == "overall" {
                    m.clone()
                } else {
                    format!("{m} [{k}]")
                };
                kv(stdout, &key, v);
            }
            for (class, c) in distinct.iter() {
                let counts: Vec<String> = Level::ALL[1..]
                    .iter()
                    .map(|l| format!("{} {}", l.as_str(), c.get(*l)))
                    .collect();
                kv(
                    stdout,
                    &format!("distinct [{}]", class.unwrap_or("all")),
                    counts.join(", "),
                );
            }
        }
    }
    Ok(())
}

fn write_skew_or_empty<W: Write>(
    out: W,
    skew: Option<&camtrap_core::stats::SkewReport>,
) -> crate::Result<()> {
    match skew {
        Some(s) => write::write_skew(out, s),
        None => write::write_skew(
            out,
            &camtrap_core::stats::SkewReport {
                n_top: 0,
                coverage_fraction: 0.0,
                curve: Vec::new(),
            },
        ),
    }
}

fn split(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &RequiredOut,
    config: SplitConfig,
    stdout: &mut String,
) -> Outcome {
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let dir = OutDir::prepare(
        &out.out,
        out.overwrite,
        &["train.txt", "eval.txt", "assignment.csv"],
    )?;
    let loaded = load(ctx, inputs)?;
    warn_dropped(ctx, &loaded.report);
    let ds = &loaded.dataset;
    let assignment = assign_regions(ds, &config)?;
    let manifests = export_split(ds, &assignment)?;
    ctx.log("assigned regions");
    write::write_manifest(dir.file("train.txt")?, &manifests.train)?;
    write::write_manifest(dir.file("eval.txt")?, &manifests.eval)?;
    write::write_assignment(dir.file("assignment.csv")?, &assignment)?;
    match ctx.format {
        Format::Csv => stdout.push_str(&csv_string(|b| write::write_assignment(b, &assignment))?),
        Format::Summary => {
            kv(stdout, "cell_size_m", config.cell_size_m);
            kv(stdout, "seed", config.seed);
            kv(stdout, "target_train_fraction", config.train_fraction);
            kv(
                stdout,
                "realized_train_fraction",
                assignment.realized_train_fraction(),
            );
            kv(
                stdout,
                "train_regions",
                assignment.region_count(Fold::Train),
            );
            kv(stdout, "eval_regions", assignment.region_count(Fold::Eval));
            kv(stdout, "train_images", manifests.train.len());
            kv(stdout, "eval_images", manifests.eval.len());
            kv(stdout, "leakage_violations", 0);
        }
    }
    Ok(())
}

/// Reads a manifest from a split directory (`default_name` inside it) or
/// from a file, and resolves its ids against the dataset.
fn manifest_images<'d>(
    ds: &'d UnifiedDataset,
    path: &Path,
    default_name: &str,
) -> Outcome<Vec<&'d ImageRecord>> {
    let file = if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    };
    require_exists(&file)?;
    let text =
        fs::read_to_string(&file).map_err(|e| Failure::Data(format!("{}: {e}", file.display())))?;
    let mut images = Vec::new();
    let mut missing = Vec::new();
    for id in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match ds.image(id) {
            Some(img) => images.push(img),
            None => missing.push(id),
        }
    }
    if let Some(first) = missing.first() {
        return Err(Failure::Data(format!(
            "{}: {} id(s) are not in the dataset (first: {first})",
            file.display(),
            missing.len()
        )));
    }
    Ok(images)
}

fn unknown_label_for(table: &TaxonomyTable, flag: Option<&str>) -> String {
    flag.map(str::to_string)
        .or_else(|| table.unknown_id().map(str::to_string))
        .unwrap_or_else(|| "unknown".to_string())
}

/// Applies the range map to every prediction whose image is in the dataset.
/// Returns the filtered set and the number of predictions left untouched
/// because their image is unknown.
fn apply_range_map(
    ds: &UnifiedDataset,
    preds: &PredictionSet,
    map: &camtrap_core::eval::RangeMap,
    unknown: &str,
) -> (PredictionSet, usize) {
    let filtered: Vec<_> = preds
        .records()
        .par_iter()
        .map(|p| {
            let located = ds
                .image(p.image_id())
                .and_then(|img| ds.deployment(&img.deployment_id));
            match located {
                Some(d) => (geofilter(p, d.latitude, d.longitude, map, unknown), false),
                None => (p.clone(), true),
            }
        })
        .collect();
    let unlocated = filtered.iter().filter(|(_, u)| *u).count();
    let (set, _) = PredictionSet::new(filtered.into_iter().map(|(p, _)| p).collect());
    (set, unlocated)
}

struct EvalOpts<'a> {
    predictions: &'a Path,
    split: Option<&'a Path>,
    ks: &'a [usize],
    level: Level,
    range_map: Option<&'a Path>,
    unknown_label: Option<&'a str>,
}

fn eval(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &OptionalOut,
    opts: &EvalOpts<'_>,
    stdout: &mut String,
) -> Outcome {
    require_exists(opts.predictions)?;
    if let Some(p) = opts.range_map {
        require_exists(p)?;
    }
    if let Some(p) = opts.split {
        require_exists(p)?;
    }
    if opts.ks.iter().any(|&k| k < 1) {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let dir = optional_out(out, &["metrics.csv", "issues.csv"])?;
    let loaded = load(ctx, inputs)?;
    warn_dropped(ctx, &loaded.report);
    let ds = &loaded.dataset;
    let (mut preds, pred_report) = read_predictions(opts.predictions)?;
    let pred_report = located(pred_report, &file_name(opts.predictions));
    ctx.log(format_args!("predictions: {} records", preds.len()));
    let mut range_issues = ValidationReport::new();
    if let Some(path) = opts.range_map {
        let (map, rep) = read_range_map(path)?;
        range_issues = located(rep, &file_name(path));
        let unknown = unknown_label_for(ds.taxonomy(), opts.unknown_label);
        preds = apply_range_map(ds, &preds, &map, &unknown).0;
        ctx.log("applied range map");
    }
    let truth: Vec<&ImageRecord> = match opts.split {
        Some(p) => manifest_images(ds, p, "eval.txt")?,
        None => ds.images().iter().collect(),
    };
    let scorer = Scorer::new(ds.taxonomy(), opts.level, opts.ks)?;
    let tally = truth
        .par_chunks(1 << 13)
        .map(|chunk| -> camtrap_core::Result<Tally> {
            let mut t = scorer.empty_tally();
            for img in chunk {
                scorer.add(&mut t, &img.label_id, preds.get(&img.image_id))?;
            }
            Ok(t)
        })
        .try_reduce(
            || scorer.empty_tally(),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )?;
    let report = scorer.report(&tally);
    ctx.log("scored");
    let matched = truth
        .iter()
        .filter(|img| preds.get(&img.image_id).is_some())
        .count();
    let unmatched = preds.len() - matched;
    let mut issues = pred_report;
    issues.extend(range_issues);
    let blank_label = ds.taxonomy().blank_id().to_string();
    if let Some(dir) = &dir {
        write::write_metrics(dir.file("metrics.csv")?, &report, &blank_label)?;
        write::write_issues(dir.file("issues.csv")?, &issues)?;
    }
    match ctx.format {
        Format::Csv => stdout.push_str(&csv_string(|b| {
            write::write_metrics(b, &report, &blank_label)
        })?),
        Format::Summary => eval_summary(stdout, &report, unmatched, &issues),
    }
    Ok(())
}

fn eval_summary(out: &mut String, r: &MetricsReport, unmatched: usize, issues: &ValidationReport) {
    kv(out, "level", r.level.as_str());
    kv(out, "evaluated", r.evaluated);
    kv(out, "skipped (no prediction)", r.skipped);
    kv(out, "predictions not evaluated", unmatched);
    kv(out, "prediction issues", issues.len());
    for (all, nb) in r.top_k.iter().zip(&r.top_k_nonblank) {
        kv(out, &format!("accuracy@{}", all.k), all.accuracy);
        kv(out, &format!("accuracy_nonblank@{}", nb.k), nb.accuracy);
    }
    kv(out, "blank_precision", write::ratio(r.blank.precision));
    kv(out, "blank_recall", write::ratio(r.blank.recall));
    kv(out, "blank_support", r.blank.support);
    kv(out, "labels_reported", r.per_class.len());
}

fn geofilter_cmd(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &RequiredOut,
    predictions: &Path,
    range_map: &Path,
    unknown_label: Option<&str>,
    stdout: &mut String,
) -> Outcome {
    require_exists(predictions)?;
    require_exists(range_map)?;
    let dir = OutDir::prepare(&out.out, out.overwrite, &["predictions.txt", "issues.csv"])?;
    let loaded = load(ctx, inputs)?;
    warn_dropped(ctx, &loaded.report);
    let ds = &loaded.dataset;
    let (preds, pred_report) = read_predictions(predictions)?;
    let (map, map_report) = read_range_map(range_map)?;
    let unknown = unknown_label_for(ds.taxonomy(), unknown_label);
    let (filtered, unlocated) = apply_range_map(ds, &preds, &map, &unknown);
    let before: usize = preds.records().iter().map(|p| p.len()).sum();
    let after: usize = filtered.records().iter().map(|p| p.len()).sum();
    let emptied = filtered
        .records()
        .iter()
        .zip(preds.records())
        .filter(|(f, p)| {
            f.len() == 1 && f.top().0 == unknown && f.top().1 == 0.0 && p.top().0 != unknown
        })
        .count();
    let mut issues = located(pred_report, &file_name(predictions));
    issues.extend(located(map_report, &file_name(range_map)));
    write_predictions(dir.file("predictions.txt")?, filtered.records())?;
    write::write_issues(dir.file("issues.csv")?, &issues)?;
    match ctx.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_predictions(&mut buf, filtered.records())?;
            stdout.push_str(&String::from_utf8_lossy(&buf));
        }
        Format::Summary => {
            kv(stdout, "records", filtered.len());
            kv(stdout, "range_map_labels", map.len());
            kv(stdout, "entries_removed", before + emptied - after);
            kv(stdout, "records_set_to_unknown", emptied);
            kv(stdout, "records_without_location", unlocated);
            kv(stdout, "issues", issues.len());
        }
    }
    Ok(())
}

fn weights(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &RequiredOut,
    split: Option<&Path>,
    level: Level,
    cap: f64,
    stdout: &mut String,
) -> Outcome {
    if cap.is_nan() || cap <= 0.0 {
        return Err(Failure::Usage(format!("--cap must be positive, got {cap}")));
    }
    if let Some(p) = split {
        require_exists(p)?;
    }
    let dir = OutDir::prepare(&out.out, out.overwrite, &["weights.csv"])?;
    let loaded = load(ctx, inputs)?;
    warn_dropped(ctx, &loaded.report);
    let ds = &loaded.dataset;
    let hist: ClassHistogram = match split {
        Some(p) => {
            let imgs = manifest_images(ds, p, "train.txt")?;
            class_distribution_of(ds, imgs.iter().map(|i| i.label_id.as_str()), level)
        }
        None => class_distribution(ds, level),
    };
    let w = class_weights(&hist, cap)?;
    write::write_weights(dir.file("weights.csv")?, &w)?;
    match ctx.format {
        Format::Csv => stdout.push_str(&csv_string(|b| write::write_weights(b, &w))?),
        Format::Summary => {
            kv(stdout, "scheme", w.scheme);
            kv(stdout, "cap", w.cap);
            kv(stdout, "labels", w.weights.len());
            kv(stdout, "images", hist.total());
            let capped = w.weights.values().filter(|&&x| x == cap).count();
            kv(stdout, "capped_labels", capped);
        }
    }
    Ok(())
}

fn sequences(
    ctx: &Ctx,
    inputs: &Inputs,
    out: &RequiredOut,
    max_gap: Duration,
    predictions: Option<&Path>,
    stdout: &mut String,
) -> Outcome {
    if let Some(p) = predictions {
        require_exists(p)?;
    }
    let dir = OutDir::prepare(
        &out.out,
        out.overwrite,
        &["sequences.csv", "sequence_predictions.txt", "issues.csv"],
    )?;
    let loaded = load(ctx, inputs)?;
    warn_dropped(ctx, &loaded.report);
    let groups = group_bursts(&loaded.dataset, max_gap);
    write::write_sequences(dir.file("sequences.csv")?, &groups)?;
    let mut aggregated = None;
    if let Some(p) = predictions {
        let (preds, rep) = read_predictions(p)?;
        let seq = sequence_aggregate(&preds, &groups);
        write_predictions(dir.file("sequence_predictions.txt")?, &seq.records)?;
        write::write_issues(dir.file("issues.csv")?, &located(rep, &file_name(p)))?;
        aggregated = Some(seq);
    }
    match ctx.format {
        Format::Csv => stdout.push_str(&csv_string(|b| write::write_sequences(b, &groups))?),
        Format::Summary => {
            kv(stdout, "images", loaded.dataset.len());
            kv(stdout, "sequences", groups.len());
            kv(stdout, "max_gap_seconds", max_gap.as_secs());
            let largest = groups.iter().map(|g| g.image_ids.len()).max().unwrap_or(0);
            kv(stdout, "largest_sequence", largest);
            if let Some(seq) = &aggregated {
                kv(stdout, "sequence_predictions", seq.records.len());
                kv(stdout, "sequences_without_predictions", seq.skipped.len());
            }
        }
    }
    Ok(())
}

struct SynthOpts<'a> {
    taxonomy: Option<&'a Path>,
    images: usize,
    deployments: usize,
    blank_rate: f64,
    top20_share: f64,
    zipf_exponent: Option<f64>,
    max_burst: usize,
    accuracy: f64,
    entries: usize,
    seed: u64,
}

fn synth_cmd(ctx: &Ctx, out: &RequiredOut, opts: &SynthOpts<'_>, stdout: &mut String) -> Outcome {
    for (name, v) in [
        ("--blank-rate", opts.blank_rate),
        ("--top20-share", opts.top20_share),
        ("--accuracy", opts.accuracy),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Failure::Usage(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    if let Some(p) = opts.taxonomy {
        require_exists(p)?;
    }
    let files = [
        "taxonomy.csv",
        "deployments.csv",
        "images.csv",
        "predictions.txt",
    ];
    let dir = OutDir::prepare(&out.out, out.overwrite, &files)?;
    let table = match opts.taxonomy {
        Some(p) => {
            let (t, rep) = read_taxonomy(p)?;
            if !rep.is_clean() {
                return Err(Failure::Data(format!(
                    "{}: taxonomy has {} error(s)",
                    p.display(),
                    rep.error_count()
                )));
            }
            t
        }
        None => TaxonomyTable::build(synth::taxonomy(271, 194)).0,
    };
    let species: Vec<String> = table
        .records()
        .filter(|r| r.special_kind().is_none())
        .map(|r| r.label_id().to_string())
        .collect();
    let exponent = match opts.zipf_exponent {
        Some(s) if s.is_finite() && s >= 0.0 => s,
        Some(s) => {
            return Err(Failure::Usage(format!(
                "--zipf-exponent must be non-negative, got {s}"
            )))
        }
        None if species.len() > 20 => {
            synth::tune_zipf_exponent(species.len(), 20, opts.top20_share)
        }
        None => 1.0,
    };
    let config = synth::CorpusConfig {
        n_images: opts.images,
        n_deployments: opts.deployments,
        blank_rate: opts.blank_rate,
        zipf_exponent: exponent,
        max_burst: opts.max_burst,
        seed: opts.seed,
        source_id: "synthetic".to_string(),
    };
    let corpus = synth::corpus(&config, &species, table.blank_id());
    ctx.log("generated corpus");
    let labels: Vec<String> = table.records().map(|r| r.label_id().to_string()).collect();
    let preds = synth::predictions(
        &corpus.images,
        &labels,
        opts.accuracy,
        opts.entries,
        opts.seed ^ 0x5eed,
    );
    write::write_taxonomy(dir.file("taxonomy.csv")?, &table)?;
    write::write_deployments(dir.file("deployments.csv")?, &corpus.deployments)?;
    write::write_images(dir.file("images.csv")?, &corpus.images)?;
    write_predictions(dir.file("predictions.txt")?, &preds)?;
    ctx.log("wrote files");
    kv(stdout, "labels", table.len());
    kv(stdout, "species", species.len());
    kv(stdout, "zipf_exponent", exponent);
    kv(stdout, "deployments", corpus.deployments.len());
    kv(stdout, "images", corpus.images.len());
    kv(stdout, "predictions", preds.len());
    Ok(())
}
