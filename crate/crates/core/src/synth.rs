//! Synthetic stand-in for a deep feature extractor and the classifier on top
//! of it.
//!
//! Class means sit on a sphere of radius `class_separation`; a sample is its
//! class mean plus noise drawn uniformly from `[-noise_scale, noise_scale]^n`,
//! so every coordinate is bounded. The legacy classifier picks the nearest
//! mean and reports softmax scores of the negated squared distances.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{save_dataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{error_labels, save_predictions, ScoredPrediction};
use crate::rng::RngSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub classes: usize,
    pub per_class: usize,
    pub class_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.per_class == 0 {
            return Err(Error::InvalidArgument(format!(
                "need n >= 1 and per_class >= 1 (got n={}, per_class={})",
                self.n, self.per_class
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", self.classes)));
        }
        for (name, v) in [("class_separation", self.class_separation), ("noise_scale", self.noise_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Every generated coordinate lies in `[-bound, bound]`.
    pub fn feature_bound(&self) -> f64 {
        self.class_separation + self.noise_scale
    }

    pub fn samples(&self) -> usize {
        self.classes * self.per_class
    }

    fn rng(&self) -> RngSpec {
        RngSpec::from_seed(self.seed)
    }
}

/// Feature rows and the legacy classifier's output on them, row-aligned and
/// grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudy {
    pub features: DMatrix<f64>,
    pub predictions: Vec<ScoredPrediction>,
    pub means: DMatrix<f64>,
}

impl CaseStudy {
    pub fn truths(&self) -> Vec<usize> {
        self.predictions.iter().map(ScoredPrediction::true_class).collect()
    }

    /// Share of samples whose top score names the wrong class.
    pub fn error_rate(&self) -> f64 {
        let labels = error_labels(&self.predictions, RngSpec::default());
        let errors = labels.iter().filter(|l| **l == crate::Label::Error).count();
        errors as f64 / self.predictions.len() as f64
    }

    /// The features labelled by whether the legacy classifier got them wrong.
    pub fn labeled(&self) -> Result<LabeledDataset> {
        LabeledDataset::new(self.features.clone(), error_labels(&self.predictions, RngSpec::default()))
    }
}

pub fn generate_casestudy(spec: &SynthSpec) -> Result<CaseStudy> {
    spec.validate()?;
    let n = spec.n;
    let rng = spec.rng();

    let mut r = rng.child(0).rng();
    let mut means = DMatrix::zeros(spec.classes, n);
    for c in 0..spec.classes {
        let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
        let norm = g.norm();
        if norm == 0.0 {
            return Err(Error::Numerical("drew a zero direction for a class mean".into()));
        }
        means.set_row(c, &(g * (spec.class_separation / norm)).transpose());
    }

    // noise comes from its own stream so only its scale changes with noise_scale
    let mut r = rng.child(1).rng();
    let total = spec.samples();
    let mut features = DMatrix::zeros(total, n);
    for i in 0..total {
        let c = i / spec.per_class;
        for j in 0..n {
            let u: f64 = r.random_range(-1.0..=1.0);
            features[(i, j)] = means[(c, j)] + spec.noise_scale * u;
        }
    }

    // softmax(-|x - m_c|^2 / tau) with tau the spread of a distance gap under the noise
    let tau = 2.0 * spec.noise_scale * spec.class_separation * (2.0f64 / 3.0).sqrt();
    let predictions = (0..total)
        .into_par_iter()
        .map(|i| {
            let x = features.row(i);
            let d2: Vec<f64> = (0..spec.classes).map(|c| (x - means.row(c)).norm_squared()).collect();
            let best = d2.iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = d2.iter().map(|d| (-(d - best) / tau).exp()).collect();
            let sum: f64 = w.iter().sum();
            ScoredPrediction::new(w.iter().map(|v| v / sum).collect(), i / spec.per_class)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CaseStudy {
        features,
        predictions,
        means,
    })
}

/// Bisects `noise_scale` until the legacy error rate is within `tolerance`
/// of `target`. The other fields of `spec` are kept.
pub fn calibrate_noise(spec: &SynthSpec, target: f64, tolerance: f64) -> Result<SynthSpec> {
    if !(target > 0.0 && target < 1.0 - 1.0 / spec.classes as f64) {
        return Err(Error::InvalidArgument(format!("target error rate {target} is out of reach")));
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tolerance}")));
    }
    let rate = |noise: f64| -> Result<f64> {
        let s = SynthSpec {
            noise_scale: noise,
            ..*spec
        };
        Ok(generate_casestudy(&s)?.error_rate())
    };
    let mut lo = 0.0;
    let mut hi = spec.class_separation;
    while rate(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 * spec.class_separation {
            return Err(Error::Numerical("error rate never reaches the target".into()));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let e = rate(mid)?;
        if (e - target).abs() <= tolerance {
            return Ok(SynthSpec {
                noise_scale: mid,
                ..*spec
            });
        }
        if e < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(format!(
        "could not bring the error rate within {tolerance} of {target}"
    )))
}

/// Writes the feature dataset (labelled by legacy error) and the row-aligned
/// predictions.
pub fn save_casestudy(study: &CaseStudy, features: impl AsRef<Path>, predictions: impl AsRef<Path>) -> Result<()> {
    save_dataset(&study.labeled()?, features)?;
    save_predictions(&study.predictions, predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Label;

    fn spec(noise: f64) -> SynthSpec {
        SynthSpec {
            n: 30,
            classes: 4,
            per_class: 200,
            class_separation: 1.0,
            noise_scale: noise,
            seed: 17,
        }
    }

    #[test]
    fn shapes_and_bounds() {
        let s = spec(0.4);
        let cs = generate_casestudy(&s).unwrap();
        assert_eq!(cs.features.shape(), (800, 30));
        assert_eq!(cs.predictions.len(), 800);
        assert_eq!(cs.truths()[399], 1);
        assert!(cs.features.iter().all(|v| v.abs() <= s.feature_bound()));
        for c in 0..4 {
            assert!((cs.means.row(c).norm() - 1.0).abs() < 1e-12);
        }
        for p in &cs.predictions {
            assert!((p.scores().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_pick_the_nearest_mean() {
        let cs = generate_casestudy(&spec(0.6)).unwrap();
        for (i, p) in cs.predictions.iter().enumerate() {
            let x = cs.features.row(i);
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    (x - cs.means.row(a)).norm().total_cmp(&(x - cs.means.row(b)).norm())
                })
                .unwrap();
            let top = (0..4).max_by(|&a, &b| p.scores()[a].total_cmp(&p.scores()[b])).unwrap();
            assert_eq!(top, nearest);
        }
    }

    #[test]
    fn error_rate_vanishes_with_noise() {
        assert_eq!(generate_casestudy(&spec(1e-3)).unwrap().error_rate(), 0.0);
        let low = generate_casestudy(&spec(0.2)).unwrap().error_rate();
        let high = generate_casestudy(&spec(1.5)).unwrap().error_rate();
        assert!(low < high && high > 0.1);
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(generate_casestudy(&spec(0.5)).unwrap(), generate_casestudy(&spec(0.5)).unwrap());
        let other = SynthSpec { seed: 18, ..spec(0.5) };
        assert_ne!(generate_casestudy(&other).unwrap().features, generate_casestudy(&spec(0.5)).unwrap().features);
        assert!(generate_casestudy(&SynthSpec { classes: 1, ..spec(0.5) }).is_err());
        assert!(generate_casestudy(&spec(0.0)).is_err());
        assert!(generate_casestudy(&SynthSpec { class_separation: -1.0, ..spec(0.5) }).is_err());
    }

    #[test]
    fn calibration_hits_the_target() {
        let s = calibrate_noise(&spec(1.0), 0.176, 0.01).unwrap();
        let cs = generate_casestudy(&s).unwrap();
        assert!((cs.error_rate() - 0.176).abs() <= 0.01);
        let labeled = cs.labeled().unwrap();
        assert_eq!(
            labeled.error_count(),
            (cs.error_rate() * 800.0).round() as usize
        );
        assert!(labeled.labels().contains(&Label::Correct));
        assert!(calibrate_noise(&spec(1.0), 0.9, 0.01).is_err());
    }
}
