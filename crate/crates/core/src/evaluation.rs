//! Confusion matrices, precision/recall/F1, ROC curves, and F1-optimal
//! threshold search. Attack is the positive class; unlabeled windows are
//! dropped before counting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn to_csv(&self) -> String {
        format!(
            "actual,predicted_attack,predicted_safe\nattack,{},{}\nsafe,{},{}\n",
            self.tp, self.fn_, self.fp, self.tn
        )
    }
}

pub fn confusion(flags: &[bool], labels: &[Label]) -> Result<ConfusionMatrix> {
    if flags.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions vs {} labels",
            flags.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l) {
            (_, Label::Unlabeled) => {}
            (true, Label::Attack) => cm.tp += 1,
            (true, Label::Normal) => cm.fp += 1,
            (false, Label::Attack) => cm.fn_ += 1,
            (false, Label::Normal) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `F1 = 2·P·R / (P + R)`, with 0/0 ratios taken as 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Scores {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    Scores {
        precision,
        recall,
        f1: f1_from(precision, recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Windows with `lrp <= lrp_cut` are flagged at this point.
    pub lrp_cut: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.lrp_cut, p.fpr, p.tpr);
        }
        s
    }
}

/// Labeled `(lrp, is_attack)` pairs, checking both classes are present.
fn labeled(lrp: &[f64], labels: &[Label]) -> Result<Vec<(f64, bool)>> {
    if lrp.len() != labels.len() {
        return Err(Error::Data(format!("{} scores vs {} labels", lrp.len(), labels.len())));
    }
    let pairs: Vec<(f64, bool)> = lrp
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l != Label::Unlabeled)
        .map(|(&v, &l)| (v, l.is_attack()))
        .collect();
    let pos = pairs.iter().filter(|p| p.1).count();
    if pos == 0 || pos == pairs.len() {
        return Err(Error::Data(
            "labels contain a single class; need both attack and normal windows".into(),
        ));
    }
    Ok(pairs)
}

/// ROC of the anomaly score `−lrp`, sweeping every distinct score. Ties move
/// together, so the area equals the pairwise concordance probability.
pub fn roc(lrp: &[f64], labels: &[Label]) -> Result<RocCurve> {
    let mut pairs = labeled(lrp, labels)?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let p = pairs.iter().filter(|x| x.1).count() as f64;
    let n = pairs.len() as f64 - p;
    let mut points = vec![RocPoint {
        lrp_cut: f64::NEG_INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("non-empty");
        let pt = RocPoint {
            lrp_cut: v,
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
        };
        auc += (pt.fpr - prev.fpr) * (pt.tpr + prev.tpr) / 2.0;
        points.push(pt);
    }
    Ok(RocCurve { points, auc })
}

/// Candidate cut-offs: midpoints between consecutive distinct values plus one
/// sentinel beyond each end. Ascending.
pub fn candidate_thresholds(sorted_distinct: &[f64]) -> Vec<f64> {
    let (Some(&first), Some(&last)) = (sorted_distinct.first(), sorted_distinct.last()) else {
        return Vec::new();
    };
    std::iter::once(first - 1.0)
        .chain(sorted_distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0))
        .chain(std::iter::once(last + 1.0))
        .collect()
}

/// Threshold maximising F1 over every achievable flag set, with flags
/// `lrp < threshold`. Ties go to the lower (less sensitive) threshold.
pub fn optimal_threshold_f1(lrp: &[f64], labels: &[Label]) -> Result<(f64, f64)> {
    let mut pairs = labeled(lrp, labels)?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_pos = pairs.iter().filter(|x| x.1).count();
    let mut distinct: Vec<f64> = pairs.iter().map(|x| x.0).collect();
    distinct.dedup();
    let cands = candidate_thresholds(&distinct);

    let eval = |tp: usize, fp: usize| {
        precision_recall_f1(&ConfusionMatrix {
            tp,
            fp,
            fn_: total_pos - tp,
            tn: 0,
        })
        .f1
    };
    let mut best = (cands[0], eval(0, 0));
    let (mut tp, mut fp, mut i) = (0, 0, 0);
    for &c in &cands[1..] {
        while i < pairs.len() && pairs[i].0 < c {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f = eval(tp, fp);
        if f > best.1 {
            best = (c, f);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
    pub auc: f64,
    pub optimal_threshold: f64,
    pub optimal_f1: f64,
}

/// Full evaluation at `threshold` (defaults to the F1-optimal one).
pub fn evaluate(lrp: &[f64], labels: &[Label], threshold: Option<f64>) -> Result<(EvaluationReport, RocCurve)> {
    let curve = roc(lrp, labels)?;
    let (opt_t, opt_f1) = optimal_threshold_f1(lrp, labels)?;
    let t = threshold.unwrap_or(opt_t);
    let flags: Vec<bool> = lrp.iter().map(|&v| v < t).collect();
    let cm = confusion(&flags, labels)?;
    Ok((
        EvaluationReport {
            threshold: t,
            confusion: cm,
            scores: precision_recall_f1(&cm),
            auc: curve.auc,
            optimal_threshold: opt_t,
            optimal_f1: opt_f1,
        },
        curve,
    ))
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        format!(
            "threshold        {}\n\
             confusion        tp={} fp={} fn={} tn={}\n\
             precision        {:.4}\n\
             recall           {:.4}\n\
             F1               {:.4}\n\
             ROC AUC          {:.4}\n\
             optimal (F1)     threshold {} → F1 {:.4}\n",
            self.threshold,
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            self.scores.precision,
            self.scores.recall,
            self.scores.f1,
            self.auc,
            self.optimal_threshold,
            self.optimal_f1
        )
    }
}
