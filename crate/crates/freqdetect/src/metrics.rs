//! Attack and detection metrics: ASR (fraction of successfully perturbed
//! samples), detector confusion counts at the fixed 0.5 threshold, F1, FNR,
//! and ASRD = FNR·ASR. Reports serialize to full-precision JSON and to CSV
//! with one-decimal percentages.

use serde::{Deserialize, Serialize};

use crate::attacks::AttackOutcome;
use crate::error::{Error, Result};

/// Identifies one (ε, mode, detector, seed) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub epsilon: f64,
    pub mode: String,
    pub detector: String,
    pub seed: u64,
}

/// Confusion counts and derived scores for one detector evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
    pub fnr: f64,
    pub asr: f64,
    pub asrd: f64,
    pub config: ReportConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV row with table-formatted percentages (one decimal).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.1},{:.1},{:.1},{:.1}",
            self.config.epsilon,
            self.config.mode,
            self.config.detector,
            100.0 * self.asr,
            100.0 * self.f1,
            100.0 * self.fnr,
            100.0 * self.asrd
        )
    }

    pub const CSV_HEADER: &'static str = "epsilon,mode,detector,asr,f1,fnr,asrd";
}

/// Fraction of successfully perturbed samples.
pub fn compute_asr(outcomes: &[AttackOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Data("cannot compute ASR of an empty outcome list".into()));
    }
    let successes = outcomes.iter().filter(|o| o.success).count();
    Ok(successes as f64 / outcomes.len() as f64)
}

/// Score (probability, true label) pairs at the fixed 0.5 threshold and
/// derive F1, FNR, and ASRD = FNR·ASR.
pub fn evaluate_detector(
    predictions: &[(f64, u8)],
    asr: f64,
    config: ReportConfig,
) -> Result<EvalReport> {
    let positives = predictions.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == predictions.len() {
        return Err(Error::Data(
            "detector evaluation needs both positive and negative ground truth".into(),
        ));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for &(prob, label) in predictions {
        let predicted = prob >= 0.5;
        match (predicted, label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let fnr = fn_ as f64 / (fn_ + tp) as f64;
    let f1 = if 2 * tp + fp + fn_ > 0 { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 } else { 0.0 };
    Ok(EvalReport { tp, fp, tn, fn_, f1, fnr, asr, asrd: fnr * asr, config })
}

/// ASRD from already-computed rates; the identity the tables are checked
/// against.
pub fn asrd(fnr: f64, asr: f64) -> f64 {
    fnr * asr
}
