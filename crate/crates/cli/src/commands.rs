use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qchunker_core::metrics::{lambda_sweep, sweep_argmax, Grid, SweepRow};
use qchunker_core::pipeline::{perplexity_pairs, PplPair};
use qchunker_core::{chunk_score, load_jsonl, run_pipeline, Backend, Document, PipelineResult, ScoreBreakdown, Strategy};

use crate::config::AppConfig;
use crate::error::CliError;
use crate::plot::sweep_svg;
use crate::records::{read_lines, read_records, write_file, write_jsonl, ChunkRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ChunkStrategy {
    Fixed,
    Sentence,
    Semantic,
    Qchunker,
}

pub struct ChunkArgs {
    pub input: PathBuf,
    pub strategy: ChunkStrategy,
    pub out: PathBuf,
    pub results_dir: Option<PathBuf>,
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn chunk(cfg: &AppConfig, args: &ChunkArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let docs = load_jsonl(&args.input).map_err(CliError::input)?;
    let backend = cfg.backend()?;
    let mut records = Vec::with_capacity(docs.len());
    let baseline = |s: Strategy| qchunker_core::ChunkerConfig { strategy: s, ..cfg.chunker.clone() };
    match args.strategy {
        ChunkStrategy::Qchunker => {
            let dir = args.results_dir.clone().unwrap_or_else(|| {
                let mut p = args.out.clone().into_os_string();
                p.push(".results");
                PathBuf::from(p)
            });
            let pcfg = cfg.pipeline();
            for (i, doc) in docs.iter().enumerate() {
                let result = run_pipeline(doc, backend.as_ref(), &pcfg)?;
                let path = dir.join(format!("{i:04}-{}.json", file_safe(&doc.id)));
                let mut json = serde_json::to_vec_pretty(&result).map_err(CliError::input)?;
                json.push(b'\n');
                write_file(&path, &json)?;
                let mut rec = ChunkRecord::from_partition("qchunker", result.selected());
                rec.result_path = Some(path.to_string_lossy().into_owned());
                records.push(rec);
            }
        }
        s => {
            let strategy = match s {
                ChunkStrategy::Fixed => Strategy::Fixed,
                ChunkStrategy::Sentence => Strategy::Sentence,
                _ => Strategy::Semantic,
            };
            let chunker = baseline(strategy);
            let embedder = backend.embedder();
            for doc in &docs {
                let p = chunker.chunk(doc, embedder.as_ref()).map_err(|e| match e {
                    qchunker_core::ChunkerError::Client(c) => CliError::from(c),
                    other => CliError::input(other),
                })?;
                records.push(ChunkRecord::from_partition(strategy.label(), &p));
            }
        }
    }
    write_jsonl(&args.out, &records)?;
    writeln!(stdout, "{} documents -> {}", records.len(), args.out.display())?;
    Ok(())
}

fn score_record(
    cfg: &AppConfig,
    backend: &dyn Backend,
    rec: &ChunkRecord,
    origin: &str,
) -> Result<ScoreBreakdown, CliError> {
    let (doc, p) = rec.resolve().map_err(|e| CliError::Input(format!("{origin}: {e}")))?;
    let pre = rec.precomputed().map_err(|e| CliError::Input(format!("{origin}: {e}")))?;
    let scorer = backend.scorer_for(&doc);
    let embedder = backend.embedder();
    let s = match &pre {
        Some(pre) => chunk_score(&p, scorer.as_ref(), pre, cfg.lambda, cfg.alpha),
        None => chunk_score(&p, scorer.as_ref(), embedder.as_ref(), cfg.lambda, cfg.alpha),
    };
    s.map_err(|e| match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{origin}: {m}")),
        other => other,
    })
}

fn score_header(out: &mut dyn Write, id_width: usize) -> std::io::Result<()> {
    writeln!(out, "{:<id_width$}  {:>3}  {:>14}  {:>14}  {:>14}", "doc_id", "K", "phi_li", "phi_sd", "phi_cs")
}

fn score_row(out: &mut dyn Write, id: &str, s: &ScoreBreakdown, id_width: usize) -> std::io::Result<()> {
    writeln!(
        out,
        "{id:<id_width$}  {:>3}  {:>14.9}  {:>14.9}  {:>14.9}",
        s.k, s.phi_li, s.phi_sd, s.phi_cs
    )
}

pub struct ScoreArgs {
    pub chunks: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn score(cfg: &AppConfig, args: &ScoreArgs, json: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    let lines = read_lines(&args.chunks)?;
    let backend = cfg.backend()?;
    let mut records = Vec::with_capacity(lines.len());
    for (n, line) in &lines {
        let origin = format!("{}: line {n}", args.chunks.display());
        let mut rec: ChunkRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("{origin}: malformed chunk line: {e}")))?;
        rec.score = Some(score_record(cfg, backend.as_ref(), &rec, &origin)?);
        records.push(rec);
    }
    if let Some(out) = &args.out {
        write_jsonl(out, &records)?;
    }
    if json {
        for r in &records {
            serde_json::to_writer(&mut *stdout, r).map_err(CliError::input)?;
            writeln!(stdout)?;
        }
    } else {
        let w = records.iter().map(|r| r.doc_id.chars().count()).max().unwrap_or(0).max(6);
        score_header(stdout, w)?;
        for r in &records {
            score_row(stdout, &r.doc_id, r.score.as_ref().unwrap(), w)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub source: String,
    pub strategy: String,
    pub score: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocComparison {
    pub doc_id: String,
    pub entries: Vec<CompareEntry>,
    /// Index into `entries` of the highest Φ_CS; ties go to the earlier file.
    pub winner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub lambda: f64,
    pub alpha: f64,
    pub documents: Vec<DocComparison>,
    /// Documents won per input file, in input order.
    pub wins: Vec<usize>,
}

pub fn compare(cfg: &AppConfig, paths: &[PathBuf], json: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    if paths.len() < 2 {
        return Err(CliError::Input("compare needs at least two --chunks files".into()));
    }
    let sets: Vec<Vec<ChunkRecord>> = paths.iter().map(|p| read_records(p)).collect::<Result<_, _>>()?;
    let ids = |s: &[ChunkRecord]| s.iter().map(|r| r.doc_id.clone()).collect::<BTreeSet<_>>();
    let reference = ids(&sets[0]);
    if reference.len() != sets[0].len() {
        return Err(CliError::Input(format!("{}: duplicate doc_id", paths[0].display())));
    }
    for (p, s) in paths.iter().zip(&sets).skip(1) {
        if ids(s) != reference || s.len() != sets[0].len() {
            return Err(CliError::Input(format!(
                "{} and {} cover different documents",
                paths[0].display(),
                p.display()
            )));
        }
    }
    let by_id: Vec<BTreeMap<&str, &ChunkRecord>> =
        sets.iter().map(|s| s.iter().map(|r| (r.doc_id.as_str(), r)).collect()).collect();
    let backend = cfg.backend()?;
    let mut documents = Vec::new();
    let mut wins = vec![0usize; paths.len()];
    for rec in &sets[0] {
        let mut entries = Vec::with_capacity(paths.len());
        for (p, map) in paths.iter().zip(&by_id) {
            let r = map[rec.doc_id.as_str()];
            let origin = format!("{}: document {:?}", p.display(), r.doc_id);
            entries.push(CompareEntry {
                source: p.display().to_string(),
                strategy: r.strategy.clone(),
                score: score_record(cfg, backend.as_ref(), r, &origin)?,
            });
        }
        let winner = (1..entries.len()).fold(0, |best, i| {
            if entries[i].score.phi_cs > entries[best].score.phi_cs {
                i
            } else {
                best
            }
        });
        wins[winner] += 1;
        documents.push(DocComparison { doc_id: rec.doc_id.clone(), entries, winner });
    }
    let report = CompareReport { lambda: cfg.lambda, alpha: cfg.alpha, documents, wins };
    if json {
        serde_json::to_writer_pretty(&mut *stdout, &report).map_err(CliError::input)?;
        writeln!(stdout)?;
        return Ok(());
    }
    for d in &report.documents {
        writeln!(stdout, "{}", d.doc_id)?;
        let w = d.entries.iter().map(|e| e.strategy.chars().count()).max().unwrap_or(0).max(8);
        writeln!(stdout, "  {:<w$}  {:>3}  {:>14}  {:>14}  {:>14}", "strategy", "K", "phi_li", "phi_sd", "phi_cs")?;
        for (i, e) in d.entries.iter().enumerate() {
            let mark = if i == d.winner { "  *" } else { "" };
            let s = &e.score;
            writeln!(
                stdout,
                "  {:<w$}  {:>3}  {:>14.9}  {:>14.9}  {:>14.9}{mark}",
                e.strategy, s.k, s.phi_li, s.phi_sd, s.phi_cs
            )?;
        }
    }
    for (p, n) in paths.iter().zip(&report.wins) {
        writeln!(stdout, "wins {n}: {}", p.display())?;
    }
    Ok(())
}

pub struct SweepArgs {
    pub scores: PathBuf,
    pub downstream: PathBuf,
    pub grid: Grid,
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: String,
    pub rows: Vec<SweepRow>,
    pub argmax: Option<usize>,
    pub best_lambda: Option<f64>,
}

/// `(Φ_LI, Φ_SD)` per line, either top-level or inside a `score` object.
fn read_scheme_scores(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    #[derive(Deserialize)]
    struct Pair {
        phi_li: f64,
        phi_sd: f64,
    }
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Line {
        Scored { score: Pair },
        Bare(Pair),
    }
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| match serde_json::from_str::<Line>(&l) {
            Ok(Line::Scored { score: p }) | Ok(Line::Bare(p)) => Ok((p.phi_li, p.phi_sd)),
            Err(e) => Err(CliError::Input(format!("{}: line {n}: {e}", path.display()))),
        })
        .collect()
}

/// A JSON array of numbers, or numbers separated by whitespace.
fn read_downstream(path: &Path) -> Result<Vec<f64>, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    if raw.trim_start().starts_with('[') {
        return serde_json::from_str(&raw).map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
    }
    raw.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Input(format!("{}: not a number: {t:?}", path.display()))))
        .collect()
}

pub fn sweep(args: &SweepArgs, json: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    let schemes = read_scheme_scores(&args.scores)?;
    let downstream = read_downstream(&args.downstream)?;
    let rows = lambda_sweep(&schemes, &downstream, args.grid).map_err(CliError::input)?;
    let argmax = sweep_argmax(&rows);
    if let Some(plot) = &args.plot {
        write_file(plot, sweep_svg(&rows, argmax).as_bytes())?;
    }
    let report = SweepReport {
        grid: args.grid.to_string(),
        best_lambda: argmax.map(|i| rows[i].lambda),
        rows,
        argmax,
    };
    if json {
        serde_json::to_writer_pretty(&mut *stdout, &report).map_err(CliError::input)?;
        writeln!(stdout)?;
        return Ok(());
    }
    writeln!(stdout, "{:>8}  {:>12}", "lambda", "r")?;
    for (i, row) in report.rows.iter().enumerate() {
        let r = row.r.map_or_else(|| "undefined".to_string(), |r| format!("{r:.9}"));
        let mark = if Some(i) == report.argmax { "  <- argmax" } else { "" };
        writeln!(stdout, "{:>8}  {r:>12}{mark}", format!("{:.2}", row.lambda))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub doc_id: String,
    pub pairs: Vec<PplPair>,
    pub completions: usize,
    pub mean_original: f64,
    pub mean_completed: f64,
    /// Population variance over chunks.
    pub var_original: f64,
    pub var_completed: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

pub fn ppl_report(cfg: &AppConfig, result_path: &Path, json: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(result_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", result_path.display())))?;
    let result: PipelineResult = serde_json::from_str(&raw)
        .map_err(|e| CliError::Input(format!("{}: not a pipeline result: {e}", result_path.display())))?;
    if result.candidates.candidates.get(result.selected_index).is_none() {
        return Err(CliError::Input(format!("{}: selected_index out of range", result_path.display())));
    }
    let text: String = result.selected().chunks.iter().map(|c| c.text.as_str()).collect();
    let doc = Document::new(result.doc_id.clone(), text).map_err(CliError::input)?;
    let backend = cfg.backend()?;
    let scorer = backend.scorer_for(&doc);
    let pairs = perplexity_pairs(&result, scorer.as_ref())?;
    let (mean_original, var_original) = mean_var(&pairs.iter().map(|p| p.original).collect::<Vec<_>>());
    let (mean_completed, var_completed) = mean_var(&pairs.iter().map(|p| p.completed).collect::<Vec<_>>());
    let report = PplReport {
        doc_id: result.doc_id.clone(),
        completions: pairs.iter().filter(|p| p.was_completed).count(),
        pairs,
        mean_original,
        mean_completed,
        var_original,
        var_completed,
    };
    if json {
        serde_json::to_writer_pretty(&mut *stdout, &report).map_err(CliError::input)?;
        writeln!(stdout)?;
        return Ok(());
    }
    writeln!(stdout, "{}", report.doc_id)?;
    if report.completions == 0 {
        writeln!(stdout, "no completions performed")?;
    }
    writeln!(stdout, "{:>8}  {:>14}  {:>14}  completed", "chunk", "ppl_original", "ppl_completed")?;
    for p in &report.pairs {
        writeln!(
            stdout,
            "{:>8}  {:>14.6}  {:>14.6}  {}",
            p.chunk_index,
            p.original,
            p.completed,
            if p.was_completed { "yes" } else { "no" }
        )?;
    }
    writeln!(stdout, "{:>8}  {:>14.6}  {:>14.6}", "mean", report.mean_original, report.mean_completed)?;
    writeln!(stdout, "{:>8}  {:>14.6}  {:>14.6}", "variance", report.var_original, report.var_completed)?;
    Ok(())
}
