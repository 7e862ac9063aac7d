use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{case_histogram, violation_rate, BorderPairs, CaseHistogram, ViolationStats};
use crate::raster::{ElevationMap, LabelMap, DRY, FLOOD, UNLABELED};

/// Counts over labeled pixels, named `<truth>_as_<prediction>`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub flood_as_flood: u64,
    pub flood_as_dry: u64,
    pub dry_as_flood: u64,
    pub dry_as_dry: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.flood_as_flood + self.flood_as_dry + self.dry_as_flood + self.dry_as_dry
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    /// Metrics with the given class as positive.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labeled_pixels: u64,
    pub confusion: Confusion,
    pub dry: ClassMetrics,
    pub flood: ClassMetrics,
    /// Share of contradicted active pairs, when elevations were supplied.
    pub violation_rate: Option<f64>,
}

impl EvalReport {
    pub fn from_confusion(c: Confusion) -> Self {
        EvalReport {
            labeled_pixels: c.total(),
            confusion: c,
            dry: ClassMetrics::from_counts(c.dry_as_dry, c.flood_as_dry, c.dry_as_flood, c.flood_as_flood),
            flood: ClassMetrics::from_counts(c.flood_as_flood, c.dry_as_flood, c.flood_as_dry, c.dry_as_dry),
            violation_rate: None,
        }
    }
}

fn check_extent(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            "evaluate",
            format!("prediction {}x{} vs labels {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// Scores a hard prediction on the labeled pixels of `gt` only.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap) -> Result<EvalReport> {
    check_extent(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &t) in pred.values().iter().zip(gt.values()) {
        match (t, p) {
            (UNLABELED, _) => {}
            (_, UNLABELED) => return Err(Error::InvalidLabel(UNLABELED)),
            (FLOOD, FLOOD) => c.flood_as_flood += 1,
            (FLOOD, _) => c.flood_as_dry += 1,
            (DRY, FLOOD) => c.dry_as_flood += 1,
            _ => c.dry_as_dry += 1,
        }
    }
    if c.total() == 0 {
        return Err(Error::NoLabeledPixels);
    }
    Ok(EvalReport::from_confusion(c))
}

/// Physics audit of a prediction, with metrics when `gt` has labeled pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub case_histogram: CaseHistogram,
    pub violation_rate: f64,
    pub active_pairs: u64,
    pub violations: u64,
    pub metrics: Option<EvalReport>,
}

pub fn audit(pred: &LabelMap, gt: &LabelMap, h: &ElevationMap, border: BorderPairs) -> Result<AuditReport> {
    check_extent(pred, gt)?;
    let ViolationStats {
        active_pairs,
        violations,
        rate,
    } = violation_rate(pred, gt, h, border)?;
    let metrics = match evaluate(pred, gt) {
        Ok(mut m) => {
            m.violation_rate = Some(rate);
            Some(m)
        }
        Err(Error::NoLabeledPixels) => None,
        Err(e) => return Err(e),
    };
    Ok(AuditReport {
        case_histogram: case_histogram(gt, h, border)?,
        violation_rate: rate,
        active_pairs,
        violations,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(pairs: &[(i8, i8)]) -> (LabelMap, LabelMap) {
        let n = pairs.len();
        let pred = LabelMap::from_vec(n, 1, pairs.iter().map(|p| p.0).collect()).unwrap();
        let gt = LabelMap::from_vec(n, 1, pairs.iter().map(|p| p.1).collect()).unwrap();
        (pred, gt)
    }

    #[test]
    fn hand_counted_confusion() {
        // Dry positive: TP=3, FP=1, FN=1, TN=5; two unlabeled pixels are ignored.
        let mut pairs = vec![(DRY, DRY); 3];
        pairs.push((DRY, FLOOD));
        pairs.push((FLOOD, DRY));
        pairs.extend(vec![(FLOOD, FLOOD); 5]);
        pairs.extend([(FLOOD, UNLABELED), (DRY, UNLABELED)]);
        let (pred, gt) = maps(&pairs);
        let r = evaluate(&pred, &gt).unwrap();
        assert_eq!(r.labeled_pixels, 10);
        assert_eq!(r.dry.precision, 0.75);
        assert_eq!(r.dry.recall, 0.75);
        assert_eq!(r.dry.accuracy, 0.8);
        assert_eq!(r.dry.f1, 0.75);
        assert_eq!(r.flood.precision, 5.0 / 6.0);
        assert_eq!(r.flood.recall, 5.0 / 6.0);
        assert_eq!(r.dry.accuracy, r.flood.accuracy);
    }

    #[test]
    fn perfect_and_all_flood_predictions() {
        let (pred, gt) = maps(&[(FLOOD, FLOOD), (DRY, DRY), (DRY, DRY), (FLOOD, FLOOD)]);
        let r = evaluate(&pred, &gt).unwrap();
        for m in [r.dry, r.flood] {
            assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        }
        let (pred, gt) = maps(&[(FLOOD, FLOOD), (FLOOD, DRY), (FLOOD, DRY), (FLOOD, FLOOD)]);
        let r = evaluate(&pred, &gt).unwrap();
        assert_eq!(r.flood.recall, 1.0);
        assert_eq!(r.dry.recall, 0.0);
        assert_eq!(r.dry.precision, 0.0);
        assert_eq!(r.dry.f1, 0.0);
    }

    #[test]
    fn evaluation_errors() {
        let (pred, gt) = maps(&[(FLOOD, UNLABELED), (DRY, UNLABELED)]);
        assert!(matches!(evaluate(&pred, &gt), Err(Error::NoLabeledPixels)));
        let (pred, gt) = maps(&[(UNLABELED, FLOOD)]);
        assert!(matches!(evaluate(&pred, &gt), Err(Error::InvalidLabel(0))));
        let other = LabelMap::filled(1, 2, FLOOD).unwrap();
        assert!(evaluate(&other, &gt).is_err());
    }

    #[test]
    fn audit_of_consistent_truth() {
        let h = ElevationMap::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let truth = LabelMap::from_vec(4, 1, vec![FLOOD, FLOOD, DRY, DRY]).unwrap();
        let r = audit(&truth, &truth, &h, BorderPairs::Include).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.violation_rate, 0.0);
        assert_eq!(r.metrics.as_ref().unwrap().flood.f1, 1.0);
        assert_eq!(r.case_histogram.total(), 32);
        let unlabeled = LabelMap::filled(4, 1, UNLABELED).unwrap();
        assert!(audit(&truth, &unlabeled, &h, BorderPairs::Include).unwrap().metrics.is_none());
    }
}
