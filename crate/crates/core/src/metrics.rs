//! Batch-level comparison metrics: errors of pointwise mean and standard
//! deviation, tagged constraint errors and the spectral power error.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{ConstraintError, ConstraintSet, Tag};
use crate::fields::{Grid1D, SampleBatch};
use crate::linalg::norm2;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("batches live on different grids")]
    GridMismatch,
    #[error("batch has too few samples ({0}); spread metrics need at least 2")]
    TooFewSamples(usize),
    #[error("constraint set has no `{0}` component")]
    MissingTag(Tag),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// How squared field differences are reduced over the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide the squared norm by `nx * nt`.
    #[default]
    GridMean,
    /// Plain squared Euclidean norm.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mmse: f64,
    /// Absent when either batch has a single sample.
    pub smse: Option<f64>,
    /// Only tags present in the constraint set appear here.
    pub ce: BTreeMap<Tag, f64>,
    pub power_mse: f64,
    pub count_generated: usize,
    pub count_reference: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "mmse,smse,ce_ic,ce_bc,ce_cl,ce_flux,ce_tv,power_mse,count_generated,count_reference";

    /// Flat CSV row matching [`Self::CSV_HEADER`]; absent tags are empty cells.
    pub fn csv_row(&self) -> String {
        let ce = |t: Tag| self.ce.get(&t).map(|v| format!("{v:e}")).unwrap_or_default();
        format!(
            "{:e},{},{},{},{},{},{},{:e},{},{}",
            self.mmse,
            self.smse.map(|v| format!("{v:e}")).unwrap_or_default(),
            ce(Tag::Ic),
            ce(Tag::Bc),
            ce(Tag::Cl),
            ce(Tag::Flux),
            ce(Tag::Tv),
            self.power_mse,
            self.count_generated,
            self.count_reference
        )
    }
}

fn same_grid(a: &SampleBatch, b: &SampleBatch) -> Result<Grid1D, MetricsError> {
    if a.grid() != b.grid() {
        return Err(MetricsError::GridMismatch);
    }
    Ok(*a.grid())
}

/// Pointwise mean over the sample axis.
pub fn pointwise_mean(batch: &SampleBatch) -> Vec<f64> {
    let mut mean = vec![0.0; batch.grid().len()];
    for s in batch.samples() {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let c = batch.count() as f64;
    mean.iter_mut().for_each(|m| *m /= c);
    mean
}

/// Pointwise population standard deviation (divisor `count`).
pub fn pointwise_std(batch: &SampleBatch) -> Vec<f64> {
    let mean = pointwise_mean(batch);
    let mut var = vec![0.0; mean.len()];
    for s in batch.samples() {
        for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let c = batch.count() as f64;
    var.iter().map(|v| (v / c).sqrt()).collect()
}

fn reduce(a: &[f64], b: &[f64], norm: Normalization) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match norm {
        Normalization::GridMean => sq / a.len() as f64,
        Normalization::Raw => sq,
    }
}

/// Squared difference of the pointwise means alone. Unlike [`mmse_smse`] a
/// single-sample batch is accepted on either side, so a lone truth solution
/// can serve as the reference.
pub fn mmse(generated: &SampleBatch, reference: &SampleBatch, norm: Normalization) -> Result<f64, MetricsError> {
    same_grid(generated, reference)?;
    for c in [generated.count(), reference.count()] {
        if c < 1 {
            return Err(MetricsError::TooFewSamples(c));
        }
    }
    Ok(reduce(&pointwise_mean(generated), &pointwise_mean(reference), norm))
}

/// Squared differences of the pointwise means and standard deviations.
pub fn mmse_smse(generated: &SampleBatch, reference: &SampleBatch, norm: Normalization) -> Result<(f64, f64), MetricsError> {
    same_grid(generated, reference)?;
    for c in [generated.count(), reference.count()] {
        if c < 2 {
            return Err(MetricsError::TooFewSamples(c));
        }
    }
    let mmse = reduce(&pointwise_mean(generated), &pointwise_mean(reference), norm);
    let smse = reduce(&pointwise_std(generated), &pointwise_std(reference), norm);
    Ok((mmse, smse))
}

/// Mean over samples of `‖R_tag(u)‖₂`.
pub fn constraint_error(set: &ConstraintSet, tag: Tag, batch: &SampleBatch) -> Result<f64, MetricsError> {
    if !set.has_tag(tag) {
        return Err(MetricsError::MissingTag(tag));
    }
    if batch.grid() != set.grid() {
        return Err(MetricsError::GridMismatch);
    }
    let sub = set.restrict(tag)?;
    let mut total = 0.0;
    for s in batch.samples() {
        total += norm2(&sub.residual(s)?);
    }
    Ok(total / batch.count() as f64)
}

/// Time-averaged `|û(k)|²` of the batch mean field, unnormalized forward DFT
/// along x evaluated directly.
pub fn power_spectrum(batch: &SampleBatch) -> Vec<f64> {
    let g = batch.grid();
    let mean = pointwise_mean(batch);
    let nx = g.nx;
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..nx)
        .map(|p| {
            let a = 2.0 * PI * p as f64 / nx as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    let mut power = vec![0.0; nx];
    for j in 0..g.nt {
        let slice = &mean[j * nx..(j + 1) * nx];
        for (k, pk) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in slice.iter().enumerate() {
                let p = (k * i) % nx;
                re += v * cos[p];
                im -= v * sin[p];
            }
            *pk += re * re + im * im;
        }
    }
    power.iter_mut().for_each(|p| *p /= g.nt as f64);
    power
}

pub fn power_mse(generated: &SampleBatch, reference: &SampleBatch) -> Result<f64, MetricsError> {
    let g = same_grid(generated, reference)?;
    let a = power_spectrum(generated);
    let b = power_spectrum(reference);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / g.nx as f64)
}

pub fn full_report(
    generated: &SampleBatch,
    reference: &SampleBatch,
    set: &ConstraintSet,
    norm: Normalization,
) -> Result<MetricsReport, MetricsError> {
    let mmse = mmse(generated, reference, norm)?;
    let smse = if generated.count() > 1 && reference.count() > 1 {
        Some(mmse_smse(generated, reference, norm)?.1)
    } else {
        None
    };
    let mut ce = BTreeMap::new();
    for tag in set.tags() {
        ce.insert(tag, constraint_error(set, tag, generated)?);
    }
    Ok(MetricsReport {
        mmse,
        smse,
        ce,
        power_mse: power_mse(generated, reference)?,
        count_generated: generated.count(),
        count_reference: reference.count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintKind;

    fn grid(nx: usize, nt: usize) -> Grid1D {
        Grid1D::periodic(nx, nt, (0.0, 1.0), (0.0, 1.0)).unwrap()
    }

    fn batch_of(g: Grid1D, f: impl Fn(usize, usize) -> f64, count: usize) -> SampleBatch {
        let states: Vec<Vec<f64>> = (0..count).map(|s| (0..g.len()).map(|k| f(s, k)).collect()).collect();
        SampleBatch::from_states(g, &states).unwrap()
    }

    #[test]
    fn identical_batches_score_zero() {
        let g = grid(8, 4);
        let b = batch_of(g, |s, k| ((s * 7 + k) as f64).sin(), 5);
        assert_eq!(mmse_smse(&b, &b, Normalization::GridMean).unwrap(), (0.0, 0.0));
        assert_eq!(power_mse(&b, &b).unwrap(), 0.0);
        let set = ConstraintSet::new(g, vec![ConstraintKind::LinearMassConservation]).unwrap();
        let r = full_report(&b, &b, &set, Normalization::GridMean).unwrap();
        assert_eq!((r.mmse, r.smse, r.power_mse, r.count_generated), (0.0, Some(0.0), 0.0, 5));
    }

    #[test]
    fn mean_error_accepts_single_reference() {
        let g = grid(4, 2);
        let truth = batch_of(g, |_, _| 1.0, 1);
        let gen = batch_of(g, |s, _| if s == 0 { 0.0 } else { 4.0 }, 2);
        assert_eq!(mmse(&gen, &truth, Normalization::GridMean).unwrap(), 1.0);
        assert_eq!(mmse(&gen, &truth, Normalization::Raw).unwrap(), 8.0);
        assert!(matches!(
            mmse_smse(&gen, &truth, Normalization::Raw),
            Err(MetricsError::TooFewSamples(1))
        ));
    }

    #[test]
    fn constant_shift_moves_only_the_mean() {
        let g = grid(6, 3);
        let b = batch_of(g, |s, k| ((s + 2 * k) as f64).cos(), 4);
        let shifted = batch_of(g, |s, k| ((s + 2 * k) as f64).cos() + 0.5, 4);
        let (m, s) = mmse_smse(&shifted, &b, Normalization::GridMean).unwrap();
        assert!((m - 0.25).abs() < 1e-12 && s < 1e-12);
        let (raw, _) = mmse_smse(&shifted, &b, Normalization::Raw).unwrap();
        assert!((raw - 0.25 * g.len() as f64).abs() < 1e-10);
    }

    #[test]
    fn two_sample_hand_computation() {
        let g = grid(3, 2);
        let gen = batch_of(g, |s, _| 2.0 * s as f64, 2);
        let reference = batch_of(g, |_, _| 1.0, 2);
        let (m, s) = mmse_smse(&gen, &reference, Normalization::GridMean).unwrap();
        assert_eq!((m, s), (0.0, 1.0));
        assert_eq!(
            mmse_smse(&gen.select(&[0]).unwrap(), &reference, Normalization::GridMean),
            Err(MetricsError::TooFewSamples(1))
        );
    }

    #[test]
    fn constraint_error_is_euclidean_mean() {
        let g = grid(2, 2);
        let set = ConstraintSet::new(g, vec![ConstraintKind::DirichletIc { target: vec![0.0, 0.0] }]).unwrap();
        let one = SampleBatch::new(g, vec![3.0, 4.0, 9.0, 9.0]).unwrap();
        assert!((constraint_error(&set, Tag::Ic, &one).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(constraint_error(&set, Tag::Cl, &one), Err(MetricsError::MissingTag(Tag::Cl)));
        let r = full_report(
            &SampleBatch::from_states(g, &[vec![0.0; 4], vec![0.0, 0.0, 1.0, 1.0]]).unwrap(),
            &SampleBatch::from_states(g, &[vec![0.0; 4], vec![0.0; 4]]).unwrap(),
            &set,
            Normalization::GridMean,
        )
        .unwrap();
        assert_eq!(r.ce.get(&Tag::Ic), Some(&0.0));
        assert!(!r.ce.contains_key(&Tag::Cl));
    }

    #[test]
    fn report_round_trips_through_json() {
        let g = grid(5, 3);
        let a = batch_of(g, |s, k| ((s * 3 + k) as f64 * 0.37).sin(), 4);
        let b = batch_of(g, |s, k| ((s + k) as f64 * 0.91).cos(), 3);
        let set = ConstraintSet::new(g, vec![ConstraintKind::LinearMassConservation]).unwrap();
        let r = full_report(&a, &b, &set, Normalization::GridMean).unwrap();
        let back: MetricsReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_row().split(',').count(), MetricsReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn power_of_distinct_pure_modes() {
        let nx = 16;
        let g = grid(nx, 3);
        let mode = |m: f64| move |_: usize, k: usize| (2.0 * PI * m * (k % nx) as f64 / nx as f64).sin();
        let reference = batch_of(g, mode(3.0), 1);
        let gen = batch_of(g, mode(5.0), 1);
        // four bins (3, 5 and their conjugates) each differ by (nx/2)^2
        let expected = 4.0 * (nx as f64 / 2.0).powi(4) / nx as f64;
        assert_eq!(expected, 1024.0);
        assert!((power_mse(&gen, &reference).unwrap() - expected).abs() < 1e-9);
        let doubled = batch_of(g, move |s, k| 2.0 * mode(5.0)(s, k), 1);
        let zero = batch_of(g, |_, _| 0.0, 1);
        let base = power_mse(&gen, &zero).unwrap();
        assert!((power_mse(&doubled, &zero).unwrap() / base - 16.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_matches_fft_oracle() {
        use rustfft::num_complex::Complex;
        let g = grid(12, 4);
        let b = batch_of(g, |s, k| ((s * 5 + k * k) as f64 * 0.13).sin() + 0.2, 3);
        let mean = pointwise_mean(&b);
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(12);
        let mut expect = vec![0.0; 12];
        for j in 0..4 {
            let mut buf: Vec<Complex<f64>> = mean[j * 12..(j + 1) * 12].iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft.process(&mut buf);
            for (e, c) in expect.iter_mut().zip(&buf) {
                *e += c.norm_sqr() / 4.0;
            }
        }
        for (a, e) in power_spectrum(&b).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12 * (1.0 + e));
        }
    }

    #[test]
    fn invariances() {
        let g = grid(10, 3);
        let a = batch_of(g, |s, k| ((s * 11 + k) as f64 * 0.3).sin(), 4);
        let b = batch_of(g, |s, k| ((s * 2 + 3 * k) as f64 * 0.2).cos(), 5);
        let reordered = a.select(&[3, 1, 0, 2]).unwrap();
        let (m1, s1) = mmse_smse(&a, &b, Normalization::GridMean).unwrap();
        let (m2, s2) = mmse_smse(&reordered, &b, Normalization::GridMean).unwrap();
        assert!((m1 - m2).abs() < 1e-12 && (s1 - s2).abs() < 1e-12);
        let shift = |batch: &SampleBatch| {
            let states: Vec<Vec<f64>> = batch
                .samples()
                .map(|s| (0..g.len()).map(|k| s[(k / 10) * 10 + (k % 10 + 3) % 10]).collect())
                .collect();
            SampleBatch::from_states(g, &states).unwrap()
        };
        let p1 = power_mse(&a, &b).unwrap();
        let p2 = power_mse(&shift(&a), &shift(&b)).unwrap();
        assert!((p1 - p2).abs() < 1e-9 * (1.0 + p1));
        assert_eq!(
            mmse_smse(&a, &batch_of(grid(10, 4), |_, _| 0.0, 2), Normalization::Raw),
            Err(MetricsError::GridMismatch)
        );
    }
}
