//! JSON and plain-table renderings of training, evaluation and acquisition
//! reports.

use imag_core::evaluation::{AcquisitionReport, EvalReport, RougeScore, ACQUISITION_COLUMNS, EVAL_COLUMNS};
use imag_core::training::TrainReport;
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScoreJson {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl From<RougeScore> for ScoreJson {
    fn from(s: RougeScore) -> Self {
        ScoreJson {
            recall: s.recall,
            precision: s.precision,
            f1: s.f1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalJson {
    pub rouge_l: ScoreJson,
    pub rouge_2: ScoreJson,
    pub rouge_su4: ScoreJson,
    pub len: f64,
    pub lrnsr: f64,
    pub drate: f64,
    pub pairs: usize,
    /// Pairs whose pseudo-target was empty; they are left out of ROUGE.
    pub empty_targets: usize,
}

impl From<&EvalReport> for EvalJson {
    fn from(r: &EvalReport) -> Self {
        EvalJson {
            rouge_l: r.rouge_l.into(),
            rouge_2: r.rouge_2.into(),
            rouge_su4: r.rouge_su4.into(),
            len: r.len,
            lrnsr: r.lrnsr,
            drate: r.drate,
            pairs: r.pairs,
            empty_targets: r.empty_targets,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AcquisitionJson {
    pub cr: f64,
    pub cr_undefined: bool,
    pub pc: f64,
    pub pc_undefined: bool,
    pub cc: f64,
    pub cc_undefined: bool,
    pub ar: f64,
    pub pairs: usize,
    pub covered: usize,
    /// Entity-only generations, which have no input relations.
    pub skipped: usize,
}

impl AcquisitionJson {
    pub fn new(r: &AcquisitionReport, skipped: usize) -> Self {
        AcquisitionJson {
            cr: r.cr,
            cr_undefined: r.cr_undefined,
            pc: r.pc.value,
            pc_undefined: r.pc.undefined,
            cc: r.cc.value,
            cc_undefined: r.cc.undefined,
            ar: r.ar,
            pairs: r.pairs,
            covered: r.covered,
            skipped,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainJson {
    pub steps: usize,
    pub stage_boundary: usize,
    /// Steps per entry of the curves.
    pub interval: usize,
    pub loss_curve: Vec<f64>,
    pub token_nll_curve: Vec<f64>,
    pub final_loss: Option<f64>,
    pub wall_clock_secs: f64,
    pub checkpoint: String,
}

/// At most about 100 points per curve.
pub fn curve_interval(steps: usize) -> usize {
    steps.div_ceil(100).max(1)
}

impl TrainJson {
    pub fn new(report: &TrainReport, wall_clock_secs: f64, checkpoint: String) -> Self {
        let interval = curve_interval(report.steps.len());
        let token_nll_curve = report
            .steps
            .chunks(interval)
            .map(|c| c.iter().map(|s| s.token_nll).sum::<f64>() / c.len() as f64)
            .collect();
        TrainJson {
            steps: report.steps.len(),
            stage_boundary: report.stage_boundary,
            interval,
            loss_curve: report.curve(interval),
            token_nll_curve,
            final_loss: report.steps.last().map(|s| s.loss),
            wall_clock_secs,
            checkpoint,
        }
    }
}

fn table(columns: &[&str], values: &[f64]) -> String {
    let width = |c: &str| c.len().max(7);
    let head: Vec<String> = columns.iter().map(|c| format!("{c:>w$}", w = width(c))).collect();
    let row: Vec<String> = columns
        .iter()
        .zip(values)
        .map(|(c, v)| format!("{v:>w$.4}", w = width(c)))
        .collect();
    format!("{}\n{}\n", head.join(" "), row.join(" "))
}

pub fn eval_table(r: &EvalReport) -> String {
    table(&EVAL_COLUMNS, &r.row())
}

pub fn acquisition_table(r: &AcquisitionReport) -> String {
    table(&ACQUISITION_COLUMNS, &r.row())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}
