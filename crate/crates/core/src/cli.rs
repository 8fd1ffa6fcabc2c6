//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation errors, 2 usage error, 3 I/O error.
//! `FUSEATLAS_VOCAB` names an alternative vocabulary file.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};

use crate::fusion::{build_blueprint, render_table, GroupAxis};
use crate::harmonize::{build_catalog, parse_overlap_hints, BuildOptions};
use crate::index::{distribution, export_audit, export_manifest, read_manifest, write_file, yearly_totals, AuditFormat, IndexError};
use crate::query::{evaluate_recipe, facet_filter, parse_recipe, FilterRecipe, SelectionSet};
use crate::harmonize::CatalogManifest;
use crate::vocab::{VocabError, Vocabulary};

pub const VOCAB_ENV: &str = "FUSEATLAS_VOCAB";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fuseatlas", version, about = "Dataset catalog and fusion blueprint builder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and check metadata files, printing every diagnostic.
    Validate {
        /// data-meta.jsonl (`-` for stdin)
        meta: String,
        /// annotations_{task}.jsonl files
        annotations: Vec<PathBuf>,
        /// Treat unmapped modality terms as errors.
        #[arg(long)]
        strict: bool,
    },
    /// Build manifest.json from metadata files.
    Build {
        /// data-meta.jsonl (`-` for stdin)
        meta: String,
        /// annotations_{task}.jsonl files
        annotations: Vec<PathBuf>,
        /// Overlap hints: one `name_a<TAB>name_b` pair per line.
        #[arg(long)]
        hints: Option<PathBuf>,
        /// ISO-8601 build timestamp (defaults to now).
        #[arg(long = "generated-at")]
        generated_at: Option<String>,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        /// Fail on any error diagnostic instead of skipping bad records.
        #[arg(long)]
        strict: bool,
    },
    /// Print the names selected by a recipe or facet state.
    Query {
        #[arg(short = 'm', long = "manifest")]
        manifest: PathBuf,
        #[arg(long, conflicts_with_all = ["facet", "text"])]
        recipe: Option<PathBuf>,
        /// axis=value (repeatable)
        #[arg(long)]
        facet: Vec<String>,
        #[arg(long)]
        text: Option<String>,
    },
    /// Group a recipe's selection into a blueprint and print the summary table.
    Fuse {
        #[arg(short = 'm', long = "manifest")]
        manifest: PathBuf,
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long = "group-by", default_value = "modality")]
        group_by: String,
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Write the audit table for a selection.
    Export {
        #[arg(short = 'm', long = "manifest")]
        manifest: PathBuf,
        #[arg(long)]
        recipe: Option<PathBuf>,
        #[arg(long)]
        format: String,
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Print a distribution over one axis.
    Stats {
        #[arg(short = 'm', long = "manifest")]
        manifest: PathBuf,
        #[arg(long)]
        recipe: Option<PathBuf>,
        #[arg(long)]
        axis: String,
    },
}

/// A failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<i32, Failure>;

struct Io<'a> {
    stdin: &'a mut dyn Read,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Io<'_> {
    fn out(&mut self, s: &str) -> Result<(), Failure> {
        self.stdout
            .write_all(s.as_bytes())
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot write to stdout: {e}")))
    }

    fn err(&mut self, s: &str) {
        let _ = self.stderr.write_all(s.as_bytes());
    }
}

/// Runs with `argv` (including the program name) and the vocabulary named by
/// `FUSEATLAS_VOCAB`, if set.
pub fn run(argv: Vec<String>, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let vocab = std::env::var_os(VOCAB_ENV).map(PathBuf::from);
    run_with(argv, vocab, stdin, stdout, stderr)
}

/// Like [`run`], with the vocabulary override passed explicitly.
pub fn run_with(
    argv: Vec<String>,
    vocab_path: Option<PathBuf>,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let mut io = Io { stdin, stdout, stderr };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => match io.out(&text) {
                    Ok(()) => EXIT_OK,
                    Err(f) => f.code,
                },
                _ => {
                    io.err(&text);
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, vocab_path, &mut io) {
        Ok(code) => code,
        Err(f) => {
            io.err(&format!("error: {}\n", f.message));
            f.code
        }
    }
}

fn load_vocab(path: Option<PathBuf>) -> Result<Vocabulary, Failure> {
    match path {
        None => Ok(Vocabulary::builtin().clone()),
        Some(p) => Vocabulary::from_path(&p).map_err(|e| match e {
            VocabError::Io(_) => Failure::new(EXIT_IO, e.to_string()),
            _ => Failure::new(EXIT_VALIDATION, e.to_string()),
        }),
    }
}

fn read_path(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}

fn read_input(io: &mut Io<'_>, spec: &str) -> Result<String, Failure> {
    if spec == "-" {
        let mut s = String::new();
        io.stdin
            .read_to_string(&mut s)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot read stdin: {e}")))?;
        Ok(s)
    } else {
        read_path(Path::new(spec))
    }
}

fn index_failure(e: IndexError) -> Failure {
    match e {
        IndexError::Io { .. } => Failure::new(EXIT_IO, e.to_string()),
        IndexError::Axis(_) => Failure::new(EXIT_USAGE, e.to_string()),
        IndexError::Decode(_) | IndexError::Version { .. } => Failure::new(EXIT_VALIDATION, e.to_string()),
    }
}

fn load_manifest_file(path: &Path) -> Result<CatalogManifest, Failure> {
    read_manifest(path).map_err(index_failure)
}

fn load_recipe(io: &mut Io<'_>, path: &Path) -> Result<FilterRecipe, Failure> {
    let text = read_path(path)?;
    let parsed = parse_recipe(&text).map_err(|e| Failure::new(EXIT_VALIDATION, format!("{}: {e}", path.display())))?;
    for w in parsed.warnings {
        io.err(&format!("warning [{}]: {}\n", w.field, w.message));
    }
    Ok(parsed.value)
}

fn selection_for(io: &mut Io<'_>, recipe: Option<&Path>, manifest: &CatalogManifest) -> Result<(FilterRecipe, SelectionSet), Failure> {
    let recipe = match recipe {
        Some(p) => load_recipe(io, p)?,
        None => FilterRecipe::default(),
    };
    let sel = evaluate_recipe(&recipe, manifest);
    Ok((recipe, sel))
}

fn parse_timestamp(raw: Option<&str>) -> Result<DateTime<Utc>, Failure> {
    match raw {
        None => Ok(Utc::now()),
        Some(s) => DateTime::parse_from_rfc3339(s)
            .map(|d| d.with_timezone(&Utc))
            .or_else(|_| {
                chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
            })
            .map_err(|_| Failure::new(EXIT_USAGE, format!("--generated-at: '{s}' is not an ISO-8601 timestamp"))),
    }
}

fn write_output(io: &mut Io<'_>, output: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match output {
        Some(p) => write_file(p, bytes).map(|_| ()).map_err(index_failure),
        None => io
            .stdout
            .write_all(bytes)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot write to stdout: {e}"))),
    }
}

/// `1234567` → `1,234,567`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn dispatch(cmd: Command, vocab_path: Option<PathBuf>, io: &mut Io<'_>) -> CmdResult {
    match cmd {
        Command::Validate { meta, annotations, strict } => {
            let vocab = load_vocab(vocab_path)?;
            let meta_text = read_input(io, &meta)?;
            let ann_texts = annotations.iter().map(|p| read_path(p)).collect::<Result<Vec<_>, _>>()?;
            let ann_refs: Vec<&str> = ann_texts.iter().map(String::as_str).collect();
            let opts = BuildOptions {
                vocab: &vocab,
                generated_at: Utc::now(),
                strict: false,
            };
            let mut report = build_catalog(&meta_text, &ann_refs, &[], &opts)
                .map(|o| o.report)
                .unwrap_or_else(|r| r);
            if strict {
                let strict_opts = BuildOptions { strict: true, ..opts };
                if let Err(r) = build_catalog(&meta_text, &ann_refs, &[], &strict_opts) {
                    report = r;
                }
            }
            let records = meta_text.lines().filter(|l| !l.trim().is_empty()).count();
            let mut text = String::new();
            for d in &report.diagnostics {
                text.push_str(&format!("{d}\n"));
            }
            text.push_str(&format!(
                "{records} records, {} errors, {} warnings\n",
                report.error_count(),
                report.warning_count()
            ));
            io.out(&text)?;
            Ok(if report.ok() { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Build {
            meta,
            annotations,
            hints,
            generated_at,
            output,
            strict,
        } => {
            let generated_at = parse_timestamp(generated_at.as_deref())?;
            let vocab = load_vocab(vocab_path)?;
            let meta_text = read_input(io, &meta)?;
            let ann_texts = annotations.iter().map(|p| read_path(p)).collect::<Result<Vec<_>, _>>()?;
            let ann_refs: Vec<&str> = ann_texts.iter().map(String::as_str).collect();
            let hints = match hints {
                Some(p) => parse_overlap_hints(&read_path(&p)?).map_err(|r| {
                    let lines: Vec<String> = r.diagnostics.iter().map(|d| d.to_string()).collect();
                    Failure::new(EXIT_VALIDATION, format!("{}: {}", p.display(), lines.join("; ")))
                })?,
                None => Vec::new(),
            };
            let opts = BuildOptions {
                vocab: &vocab,
                generated_at,
                strict,
            };
            match build_catalog(&meta_text, &ann_refs, &hints, &opts) {
                Ok(out) => {
                    for d in &out.report.diagnostics {
                        io.err(&format!("{d}\n"));
                    }
                    export_manifest(&out.manifest, &output).map_err(index_failure)?;
                    io.err(&format!(
                        "wrote {} datasets ({} duplicate report entries) to {}\n",
                        out.manifest.datasets.len(),
                        out.manifest.duplicate_report.len(),
                        output.display()
                    ));
                    Ok(EXIT_OK)
                }
                Err(report) => {
                    for d in &report.diagnostics {
                        io.err(&format!("{d}\n"));
                    }
                    io.err(&format!("build failed: {} errors\n", report.error_count()));
                    Ok(EXIT_VALIDATION)
                }
            }
        }
        Command::Query {
            manifest,
            recipe,
            facet,
            text,
        } => {
            let m = load_manifest_file(&manifest)?;
            let sel = match recipe {
                Some(p) => selection_for(io, Some(&p), &m)?.1,
                None => {
                    let mut facets: BTreeMap<String, Vec<String>> = BTreeMap::new();
                    for f in &facet {
                        let (axis, value) = f
                            .split_once('=')
                            .ok_or_else(|| Failure::new(EXIT_USAGE, format!("--facet '{f}': expected axis=value")))?;
                        facets.entry(axis.trim().to_string()).or_default().push(value.trim().to_string());
                    }
                    facet_filter(&facets, text.as_deref(), &m).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?
                }
            };
            let mut out = String::new();
            for n in &sel.names {
                out.push_str(n);
                out.push('\n');
            }
            io.out(&out)?;
            io.err(&format!("{} of {} datasets selected\n", sel.len(), m.datasets.len()));
            Ok(EXIT_OK)
        }
        Command::Fuse {
            manifest,
            recipe,
            group_by,
            output,
        } => {
            let axis: GroupAxis = group_by.parse().map_err(|e: crate::fusion::FusionError| Failure::new(EXIT_USAGE, e.to_string()))?;
            let m = load_manifest_file(&manifest)?;
            let recipe = load_recipe(io, &recipe)?;
            let bp = build_blueprint(&recipe, &m, axis);
            if let Some(p) = &output {
                write_file(p, bp.to_json().as_bytes()).map_err(index_failure)?;
            }
            io.out(&render_table(&bp))?;
            for note in &bp.attribution_notes {
                io.err(&format!(
                    "note: '{}' carries {} and was attributed to {}\n",
                    note.dataset,
                    note.values.join(", "),
                    note.attributed_to
                ));
            }
            for flag in &bp.compatibility {
                io.err(&format!("flag [{}] {:?}: {}\n", flag.group_key, flag.flag, flag.detail));
            }
            Ok(EXIT_OK)
        }
        Command::Export {
            manifest,
            recipe,
            format,
            output,
        } => {
            let format: AuditFormat = format.parse().map_err(|e: String| Failure::new(EXIT_USAGE, e))?;
            let m = load_manifest_file(&manifest)?;
            let (_, sel) = selection_for(io, recipe.as_deref(), &m)?;
            write_output(io, output.as_deref(), &export_audit(&sel, &m, format))?;
            Ok(EXIT_OK)
        }
        Command::Stats { manifest, recipe, axis } => {
            if !matches!(axis.as_str(), "modality" | "task" | "dimension" | "anatomy_root" | "label_presence" | "year") {
                return Err(Failure::new(EXIT_USAGE, format!("--axis: unsupported axis '{axis}'")));
            }
            let m = load_manifest_file(&manifest)?;
            let (_, sel) = selection_for(io, recipe.as_deref(), &m)?;
            let mut out = String::new();
            let total: u64 = sel.records(&m).iter().map(|r| r.image_count()).sum();
            if axis == "year" {
                let y = yearly_totals(&sel, &m);
                out.push_str("year  dataset_count  image_sum\n");
                for b in &y.years {
                    out.push_str(&format!("{}  {}  {}\n", b.year, thousands(b.dataset_count as u64), thousands(b.image_sum)));
                }
                out.push_str(&format!(
                    "unknown  {}  {}\n",
                    thousands(y.unknown.dataset_count as u64),
                    thousands(y.unknown.image_sum)
                ));
            } else {
                let h = distribution(&sel, &m, &axis).map_err(index_failure)?;
                out.push_str(&format!("{}  dataset_count  image_sum\n", h.axis));
                for b in &h.bins {
                    out.push_str(&format!("{}  {}  {}\n", b.value, thousands(b.dataset_count as u64), thousands(b.image_sum)));
                }
            }
            out.push_str(&format!("selected  {}  {}\n", thousands(sel.len() as u64), thousands(total)));
            io.out(&out)?;
            Ok(EXIT_OK)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str], stdin: &str) -> (i32, String, String) {
        let argv = std::iter::once("fuseatlas").chain(args.iter().copied()).map(String::from).collect();
        let mut input = stdin.as_bytes();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(argv, None, &mut input, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(2_135_301), "2,135,301");
    }

    #[test]
    fn validate_empty_stdin() {
        let (code, out, _) = run_args(&["validate", "-"], "");
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("0 records"));
    }

    #[test]
    fn validate_reports_errors() {
        let (code, out, _) = run_args(&["validate", "-"], "{\"label_presence\":\"labeled\"}\n");
        assert_eq!(code, EXIT_VALIDATION);
        assert!(out.contains("[dataset_name]"));
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_args(&["frobnicate"], "").0, EXIT_USAGE);
        assert_eq!(run_args(&["build", "-"], "").0, EXIT_USAGE);
        let (code, _, err) = run_args(&["build", "-", "-o", "/tmp/x.json", "--generated-at", "yesterday"], "");
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--generated-at"));
        assert_eq!(run_args(&["--help"], "").0, EXIT_OK);
    }

    #[test]
    fn io_errors() {
        assert_eq!(run_args(&["validate", "/nonexistent/meta.jsonl"], "").0, EXIT_IO);
        assert_eq!(run_args(&["query", "-m", "/nonexistent/manifest.json"], "").0, EXIT_IO);
    }
}
