//! Timing harness: runs a corpus program under each call-site configuration
//! and summarizes repetitions as min/25%/median/75%/max plus the median
//! overhead against the untransformed baseline.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::agent::{Agent, AgentError};
use crate::corpus;
use crate::value::Value;
use crate::vm::io::{Discard, Script};
use crate::vm::{Image, ImageConfig, LoadError, VmError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no corpus program named {0:?}")]
    NoProgram(String),
    #[error("need at least 3 samples for quartiles, got {0}")]
    TooFewSamples(usize),
    #[error("load failed: {0}")]
    Load(#[from] LoadError),
    #[error("run failed: {0}")]
    Run(#[from] VmError),
    #[error("aspect install failed: {0}")]
    Aspect(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    #[serde(rename = "baseline-direct")]
    Baseline,
    #[serde(rename = "transformed")]
    Transformed,
    #[serde(rename = "transformed+before")]
    Before,
    #[serde(rename = "transformed+after")]
    After,
    #[serde(rename = "transformed+both")]
    Both,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Transformed,
        Variant::Before,
        Variant::After,
        Variant::Both,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline-direct",
            Variant::Transformed => "transformed",
            Variant::Before => "transformed+before",
            Variant::After => "transformed+after",
            Variant::Both => "transformed+both",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| format!("unknown configuration {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub program: String,
    /// Replaces the program's default arguments when set.
    pub n: Option<i64>,
    pub reps: usize,
    pub warmups: usize,
    pub variants: Vec<Variant>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            program: "classicfibo".into(),
            n: Some(25),
            reps: 10,
            warmups: 2,
            variants: Variant::ALL.to_vec(),
        }
    }
}

/// Milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Nearest rank: the `ceil(p * n)`-th smallest sample, with p = 0 giving the minimum.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn quartiles(samples: &[f64]) -> Result<Quartiles, BenchError> {
    if samples.len() < 3 {
        return Err(BenchError::TooFewSamples(samples.len()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Quartiles {
        min: percentile(&s, 0.0),
        q25: percentile(&s, 0.25),
        median: percentile(&s, 0.5),
        q75: percentile(&s, 0.75),
        max: percentile(&s, 1.0),
    })
}

/// Median overhead in percent.
pub fn overhead(baseline_median: f64, median: f64) -> f64 {
    (median - baseline_median) / baseline_median * 100.0
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub label: String,
    pub quartiles: Quartiles,
    /// `None` for the baseline row.
    pub overhead_pct: Option<f64>,
    pub samples_ms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub program: String,
    pub args: Vec<String>,
    pub reps: usize,
    pub warmups: usize,
    pub rows: Vec<Row>,
}

/// Turns labelled samples into rows. The first entry is the baseline.
pub fn rows_from_samples(samples: Vec<(String, Vec<f64>)>) -> Result<Vec<Row>, BenchError> {
    let mut rows: Vec<Row> = Vec::with_capacity(samples.len());
    for (label, s) in samples {
        let q = quartiles(&s)?;
        let overhead_pct = rows.first().map(|b| overhead(b.quartiles.median, q.median));
        rows.push(Row {
            label,
            quartiles: q,
            overhead_pct,
            samples_ms: s,
        });
    }
    Ok(rows)
}

fn prepare(program: &corpus::Program, variant: Variant) -> Result<Arc<Image>, BenchError> {
    let mut image = Image::new(ImageConfig::default());
    image.set_output(Arc::new(Discard));
    image.load(program.module(), variant != Variant::Baseline)?;
    image.load(
        corpus::advice("Empty").expect("Empty advice ships with the corpus"),
        false,
    )?;
    Ok(Arc::new(image))
}

/// Empty advice on every linked site; after-advice only where there is a value.
fn install(image: &Arc<Image>, variant: Variant) -> Result<(), BenchError> {
    let agent = Agent::new(image.clone());
    let keys = image.registry().keys();
    let before = matches!(variant, Variant::Before | Variant::Both);
    let after = matches!(variant, Variant::After | Variant::Both);
    for key in &keys {
        if before {
            agent.apply_before_aspect(key, "Empty", "onCall")?;
        }
        let returns = image
            .registry()
            .sites_matching(key)
            .first()
            .is_some_and(|s| !s.declared_type().ret.is_void());
        if after && returns {
            agent.apply_after_aspect(key, "Empty", "onReturn")?;
        }
    }
    Ok(())
}

fn timed_run(image: &Image, args: &[Value]) -> Result<f64, BenchError> {
    let start = Instant::now();
    image.run(None, args.to_vec())?;
    Ok(start.elapsed().as_secs_f64() * 1000.0)
}

/// Measures each variant with `reps` timed runs after `warmups` untimed
/// ones. Aspects go in after the first warmup so every site is linked.
pub fn run_bench(cfg: &BenchConfig) -> Result<Report, BenchError> {
    let program =
        corpus::program(&cfg.program).ok_or_else(|| BenchError::NoProgram(cfg.program.clone()))?;
    let args: Vec<Value> = match cfg.n {
        Some(n) => vec![Value::Int(n)],
        None => program.arg_values(),
    };
    let mut samples = Vec::new();
    for &variant in &cfg.variants {
        let mut image = prepare(program, variant)?;
        Arc::get_mut(&mut image)
            .expect("image not shared yet")
            .set_input(Arc::new(Script::new(program.input.iter().copied())));
        // The first run links the sites; aspects can only target linked ones.
        image.run(None, args.clone())?;
        install(&image, variant)?;
        for _ in 1..cfg.warmups {
            image.run(None, args.clone())?;
        }
        let mut times = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            times.push(timed_run(&image, &args)?);
        }
        samples.push((variant.label().to_string(), times));
    }
    Ok(Report {
        program: cfg.program.clone(),
        args: args.iter().map(|v| v.to_string()).collect(),
        reps: cfg.reps,
        warmups: cfg.warmups,
        rows: rows_from_samples(samples)?,
    })
}

pub fn format_overhead(o: Option<f64>) -> String {
    match o {
        None => "-".to_string(),
        Some(p) => format!("{p:+.1}%"),
    }
}

pub fn render_table(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} ({}) reps={} warmups={}  times in ms",
        r.program,
        r.args.join(" "),
        r.reps,
        r.warmups
    );
    let width = r
        .rows
        .iter()
        .map(|row| row.label.len())
        .max()
        .unwrap_or(0)
        .max(13);
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}",
        "configuration", "Q1-min", "Q2-25%", "Q3-median", "Q4-75%", "Q5-max", "overhead"
    );
    for row in &r.rows {
        let q = &row.quartiles;
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}  {:>9.3}  {:>9.3}  {:>9}",
            row.label,
            q.min,
            q.q25,
            q.median,
            q.q75,
            q.max,
            format_overhead(row.overhead_pct)
        );
    }
    out
}

pub fn render_json(r: &Report) -> String {
    serde_json::to_string_pretty(r).expect("reports serialize")
}
