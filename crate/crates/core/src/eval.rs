//! Winner-takes-all evaluation of a legacy classifier, with and without a
//! correcting ensemble in front of it.
//!
//! A prediction is reported only when its top score exceeds the threshold γ.
//! Every sample is then either correctly classified (TP), misclassified (FP)
//! or not reported (FN); there are no true negatives.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{check_feature_columns, fmt_real, parse_real, read_table, Label, LabeledDataset};
use crate::ensemble::{CorrectingAction, CorrectingEnsemble};
use crate::error::{Error, Result};
use crate::rng::RngSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    scores: Vec<f64>,
    true_class: usize,
}

impl ScoredPrediction {
    pub fn new(scores: Vec<f64>, true_class: usize) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 class scores, got {}",
                scores.len()
            )));
        }
        if let Some(j) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("score {j} is not finite")));
        }
        if true_class >= scores.len() {
            return Err(Error::InvalidArgument(format!(
                "true class {true_class} out of range for {} classes",
                scores.len()
            )));
        }
        Ok(Self { scores, true_class })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn true_class(&self) -> usize {
        self.true_class
    }

    pub fn classes(&self) -> usize {
        self.scores.len()
    }

    fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-scoring class; ties are resolved with `rng`.
    fn winner(&self, rng: RngSpec) -> usize {
        let max = self.max_score();
        let tied: Vec<usize> = (0..self.scores.len()).filter(|&j| self.scores[j] == max).collect();
        if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.rng().random_range(0..tied.len())]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Class(usize),
    Abstain,
}

/// The winning class if its score exceeds `gamma`, otherwise no answer.
pub fn decide(pred: &ScoredPrediction, gamma: f64, rng: RngSpec) -> Decision {
    if pred.max_score() > gamma {
        Decision::Class(pred.winner(rng))
    } else {
        Decision::Abstain
    }
}

/// Decisions for a batch. Sample `i` breaks ties with `rng.child(i)`, so the
/// chosen class does not depend on `gamma` or on the other samples.
pub fn decide_all(preds: &[ScoredPrediction], gamma: f64, rng: RngSpec) -> Vec<Decision> {
    preds
        .par_iter()
        .enumerate()
        .map(|(i, p)| decide(p, gamma, rng.child(i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Tally {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Tally {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg
    }

    /// `TP / (TP + FN)`, or 0 when nothing is in the denominator.
    pub fn tpr(&self) -> f64 {
        let d = self.true_pos + self.false_neg;
        if d == 0 {
            0.0
        } else {
            self.true_pos as f64 / d as f64
        }
    }
}

pub fn tally(decisions: &[Decision], truths: &[usize]) -> Result<Tally> {
    check_len(decisions.len(), truths.len())?;
    let mut t = Tally::default();
    for (d, &truth) in decisions.iter().zip(truths) {
        match d {
            Decision::Class(c) if *c == truth => t.true_pos += 1,
            Decision::Class(_) => t.false_pos += 1,
            Decision::Abstain => t.false_neg += 1,
        }
    }
    Ok(t)
}

/// Misclassifications at `gamma` grouped by true class.
pub fn errors_per_class(preds: &[ScoredPrediction], gamma: f64, rng: RngSpec) -> Vec<usize> {
    let classes = preds.iter().map(ScoredPrediction::classes).max().unwrap_or(0);
    let mut counts = vec![0; classes];
    for (p, d) in preds.iter().zip(decide_all(preds, gamma, rng)) {
        if matches!(d, Decision::Class(c) if c != p.true_class) {
            counts[p.true_class] += 1;
        }
    }
    counts
}

/// Corrector training labels: a sample is an error when the legacy system
/// reports a wrong class at γ = 0.
pub fn error_labels(preds: &[ScoredPrediction], rng: RngSpec) -> Vec<Label> {
    preds
        .iter()
        .zip(decide_all(preds, 0.0, rng))
        .map(|(p, d)| match d {
            Decision::Class(c) if c != p.true_class => Label::Error,
            _ => Label::Correct,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub gamma: f64,
    pub tpr: f64,
    pub mr: f64,
    #[serde(skip)]
    pub tally: Tally,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceCurve {
    pub points: Vec<CurvePoint>,
    /// Misclassifications at γ = 0 that MR is normalised by.
    pub fp_at_zero: usize,
}

/// `points` evenly spaced thresholds from 0 to 1 inclusive.
pub fn gamma_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {points}")));
    }
    Ok((0..points).map(|i| i as f64 / (points - 1) as f64).collect())
}

/// Per-sample summary that does not depend on γ.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    top: f64,
    correct: bool,
    suppressed: bool,
}

fn outcomes(preds: &[ScoredPrediction], fired: Option<(&[bool], CorrectingAction)>, rng: RngSpec) -> Vec<Outcome> {
    preds
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut class = p.winner(rng.child(i as u64));
            let mut suppressed = false;
            if let Some((flags, action)) = fired {
                if flags[i] {
                    match action {
                        CorrectingAction::FlagError | CorrectingAction::SuppressOutput => suppressed = true,
                        CorrectingAction::Relabel(t) => class = t,
                    }
                }
            }
            Outcome {
                top: p.max_score(),
                correct: class == p.true_class,
                suppressed,
            }
        })
        .collect()
}

fn tally_at(outcomes: &[Outcome], gamma: f64) -> Tally {
    let mut t = Tally::default();
    for o in outcomes {
        if o.suppressed || o.top <= gamma {
            t.false_neg += 1;
        } else if o.correct {
            t.true_pos += 1;
        } else {
            t.false_pos += 1;
        }
    }
    t
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty γ grid".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidArgument(format!("γ must lie in [0, 1], got {g}")));
    }
    Ok(())
}

fn build_curve(outcomes: &[Outcome], grid: &[f64], fp_at_zero: usize) -> PerformanceCurve {
    let points = grid
        .iter()
        .map(|&gamma| {
            let tally = tally_at(outcomes, gamma);
            let mr = if fp_at_zero == 0 {
                0.0
            } else {
                tally.false_pos as f64 / fp_at_zero as f64
            };
            CurvePoint {
                gamma,
                tpr: tally.tpr(),
                mr,
                tally,
            }
        })
        .collect();
    PerformanceCurve { points, fp_at_zero }
}

/// Indicators of the legacy system alone over `grid`.
pub fn curve(preds: &[ScoredPrediction], grid: &[f64], rng: RngSpec) -> Result<PerformanceCurve> {
    check_grid(grid)?;
    let base = outcomes(preds, None, rng);
    let fp0 = tally_at(&base, 0.0).false_pos;
    Ok(build_curve(&base, grid, fp0))
}

/// Indicators of the combined system given which samples the ensemble fired
/// on. MR stays normalised by the legacy system's FP(0) so both curves share
/// a scale; with a relabel action it can therefore exceed 1.
pub fn corrected_curve_from_flags(
    preds: &[ScoredPrediction],
    fired: &[bool],
    action: CorrectingAction,
    grid: &[f64],
    rng: RngSpec,
) -> Result<PerformanceCurve> {
    check_grid(grid)?;
    check_len(preds.len(), fired.len())?;
    if let CorrectingAction::Relabel(t) = action {
        if let Some(p) = preds.iter().find(|p| t >= p.classes()) {
            return Err(Error::InvalidArgument(format!(
                "relabel target {t} out of range for {} classes",
                p.classes()
            )));
        }
    }
    let fp0 = tally_at(&outcomes(preds, None, rng), 0.0).false_pos;
    let corrected = outcomes(preds, Some((fired, action)), rng);
    Ok(build_curve(&corrected, grid, fp0))
}

pub fn corrected_curve(
    ensemble: &CorrectingEnsemble,
    features: &DMatrix<f64>,
    preds: &[ScoredPrediction],
    grid: &[f64],
    rng: RngSpec,
) -> Result<PerformanceCurve> {
    check_len(features.nrows(), preds.len())?;
    let fired = ensemble.fires_rows(features)?;
    corrected_curve_from_flags(preds, &fired, ensemble.action(), grid, rng)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Stratified split: within each label, `round(fraction * count)` shuffled
/// indices go to training. Both index lists come back in ascending order.
pub fn split_indices(labels: &[Label], fraction: f64, rng: RngSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [Label::Correct, Label::Error] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng.child(u64::from(label.code())).rng());
        let cut = (fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(
    data: &LabeledDataset,
    fraction: f64,
    rng: RngSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = split_indices(data.labels(), fraction, rng)?;
    Ok((data.select(&train), data.select(&test)))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<ScoredPrediction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(file)
}

/// Reads a `true,score0,...,score{C-1}` table.
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<ScoredPrediction>> {
    let table = read_table(reader)?;
    if table.header.first().map(String::as_str) != Some("true") {
        return Err(Error::Header("first column must be `true`".into()));
    }
    check_feature_columns(&table.header[1..], "score")?;
    let classes = table.header.len() - 1;
    if classes < 2 {
        return Err(Error::Header(format!("need at least 2 score columns, found {classes}")));
    }
    table
        .rows
        .iter()
        .enumerate()
        .map(|(row, record)| {
            let truth: usize = record[0].parse().map_err(|_| Error::Parse {
                row,
                message: format!("true class `{}` is not a class id", record[0]),
            })?;
            let scores = record[1..]
                .iter()
                .enumerate()
                .map(|(j, f)| parse_real(f, row, &format!("score{j}")))
                .collect::<Result<Vec<_>>>()?;
            ScoredPrediction::new(scores, truth).map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn save_predictions(preds: &[ScoredPrediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(preds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn write_predictions<W: Write>(preds: &[ScoredPrediction], mut out: W) -> std::io::Result<()> {
    let classes = preds.first().map_or(0, ScoredPrediction::classes);
    write!(out, "true")?;
    for j in 0..classes {
        write!(out, ",score{j}")?;
    }
    writeln!(out)?;
    for p in preds {
        write!(out, "{}", p.true_class)?;
        for s in &p.scores {
            write!(out, ",{}", fmt_real(*s))?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn write_curve_csv<W: Write>(curve: &PerformanceCurve, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &curve.points {
        w.serialize(p)?;
    }
    w.flush()
}

pub fn save_curve(curve: &PerformanceCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_curve_csv(curve, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(scores: &[f64], truth: usize) -> ScoredPrediction {
        ScoredPrediction::new(scores.to_vec(), truth).unwrap()
    }

    #[test]
    fn decision_rule() {
        let r = RngSpec::new(1, 0);
        assert_eq!(decide(&pred(&[0.9, 0.1], 0), 0.5, r), Decision::Class(0));
        assert_eq!(decide(&pred(&[0.4, 0.4], 0), 0.5, r), Decision::Abstain);
        assert_eq!(decide(&pred(&[0.5, 0.5], 0), 0.5, r), Decision::Abstain);
        let tie = pred(&[0.5, 0.5], 0);
        let first = decide(&tie, 0.0, r);
        assert!(matches!(first, Decision::Class(0 | 1)));
        for _ in 0..5 {
            assert_eq!(decide(&tie, 0.0, r), first);
        }
        // both classes turn up across seeds
        let picks: Vec<_> = (0..64).map(|s| decide(&tie, 0.0, RngSpec::new(s, 0))).collect();
        assert!(picks.contains(&Decision::Class(0)) && picks.contains(&Decision::Class(1)));
    }

    #[test]
    fn prediction_validation() {
        assert!(ScoredPrediction::new(vec![1.0], 0).is_err());
        assert!(ScoredPrediction::new(vec![1.0, f64::NAN], 0).is_err());
        assert!(ScoredPrediction::new(vec![1.0, 0.0], 2).is_err());
    }

    #[test]
    fn perfect_classifier() {
        let preds = vec![pred(&[0.2, 0.7, 0.1], 1); 30];
        let c = curve(&preds, &gamma_grid(11).unwrap(), RngSpec::new(2, 0)).unwrap();
        assert_eq!(c.fp_at_zero, 0);
        assert_eq!(c.points[0].tpr, 1.0);
        assert!(c.points.iter().all(|p| p.mr == 0.0));
        // past the top score nothing is reported
        assert_eq!(c.points[10].tpr, 0.0);
        assert_eq!(c.points[10].tally.false_neg, 30);
    }

    #[test]
    fn tally_counts() {
        let d = [Decision::Class(0), Decision::Class(1), Decision::Abstain, Decision::Class(2)];
        let t = tally(&d, &[0, 0, 1, 2]).unwrap();
        assert_eq!((t.true_pos, t.false_pos, t.false_neg), (2, 1, 1));
        assert!((t.tpr() - 2.0 / 3.0).abs() < 1e-15);
        assert!(tally(&d, &[0]).is_err());
    }

    fn mixed() -> Vec<ScoredPrediction> {
        vec![
            pred(&[0.9, 0.1], 0),
            pred(&[0.3, 0.7], 0),
            pred(&[0.6, 0.4], 1),
            pred(&[0.2, 0.8], 1),
            pred(&[0.55, 0.45], 0),
        ]
    }

    #[test]
    fn flag_and_relabel_accounting() {
        let preds = mixed();
        let grid = [0.0, 0.65];
        let r = RngSpec::new(4, 0);
        let base = curve(&preds, &grid, r).unwrap();
        assert_eq!(base.fp_at_zero, 2);
        assert_eq!(base.points[0].mr, 1.0);
        // at 0.65 only samples 0, 1, 3 are reported; 1 is wrong
        assert_eq!(base.points[1].tally, Tally { true_pos: 2, false_pos: 1, false_neg: 2 });
        assert_eq!(base.points[1].mr, 0.5);

        let never = [false; 5];
        let same = corrected_curve_from_flags(&preds, &never, CorrectingAction::FlagError, &grid, r).unwrap();
        assert_eq!(same, base);

        // fire on both errors and one correct sample
        let fired = [false, true, true, false, true];
        let flagged = corrected_curve_from_flags(&preds, &fired, CorrectingAction::FlagError, &grid, r).unwrap();
        assert_eq!(flagged.points[0].tally, Tally { true_pos: 2, false_pos: 0, false_neg: 3 });
        assert_eq!(flagged.points[0].mr, 0.0);
        let suppressed =
            corrected_curve_from_flags(&preds, &fired, CorrectingAction::SuppressOutput, &grid, r).unwrap();
        assert_eq!(suppressed, flagged);

        let relabel = corrected_curve_from_flags(&preds, &fired, CorrectingAction::Relabel(1), &grid, r).unwrap();
        // sample 1 becomes wrong (still 1 vs 0), sample 2 becomes right, sample 4 becomes wrong
        assert_eq!(relabel.points[0].tally, Tally { true_pos: 3, false_pos: 2, false_neg: 0 });
        assert!(corrected_curve_from_flags(&preds, &fired, CorrectingAction::Relabel(7), &grid, r).is_err());
        assert!(corrected_curve_from_flags(&preds, &fired[..3], CorrectingAction::FlagError, &grid, r).is_err());
        assert!(curve(&preds, &[1.5], r).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = gamma_grid(101).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 1.0);
        assert!((g[37] - 0.37).abs() < 1e-15);
        assert!(gamma_grid(1).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let mut labels = vec![Label::Correct; 8240];
        labels.extend(vec![Label::Error; 1760]);
        let r = RngSpec::new(9, 0);
        let (train, test) = split_indices(&labels, 0.8, r).unwrap();
        let count = |idx: &[usize], l| idx.iter().filter(|&&i| labels[i] == l).count();
        assert_eq!((count(&train, Label::Correct), count(&train, Label::Error)), (6592, 1408));
        assert_eq!((count(&test, Label::Correct), count(&test, Label::Error)), (1648, 352));
        assert_eq!(split_indices(&labels, 0.8, r).unwrap(), (train.clone(), test));
        assert_ne!(split_indices(&labels, 0.8, RngSpec::new(10, 0)).unwrap().0, train);
        let (all, none) = split_indices(&labels, 1.0, r).unwrap();
        assert_eq!(all.len(), 10_000);
        assert!(none.is_empty());
        assert!(split_indices(&labels, 1.2, r).is_err());
    }

    #[test]
    fn prediction_csv_round_trip() {
        let preds = mixed();
        let mut buf = Vec::new();
        write_predictions(&preds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("true,score0,score1\n"));
        assert_eq!(read_predictions(text.as_bytes()).unwrap(), preds);
        assert!(read_predictions("label,score0,score1\n0,1,2\n".as_bytes()).is_err());
        assert!(read_predictions("true,score0,score1\n5,1,2\n".as_bytes()).is_err());
        assert!(read_predictions("true,score0\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn curve_csv_has_three_columns() {
        let c = curve(&mixed(), &[0.0, 0.5], RngSpec::new(1, 1)).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("gamma,tpr,mr"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn error_labels_follow_the_zero_threshold() {
        let labels = error_labels(&mixed(), RngSpec::new(0, 0));
        use Label::*;
        assert_eq!(labels, vec![Correct, Error, Error, Correct, Correct]);
        assert_eq!(errors_per_class(&mixed(), 0.0, RngSpec::new(0, 0)), vec![1, 1]);
    }
}
