use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{mixup, pipeline, InverseMixedSample, MixedSample, SeedOrigin};
use crate::data::LabeledDataset;
use crate::stats::{l2_distance, median, percentile};
use crate::{seed, Error, Result};

/// Parameters of the Gaussian-noise Mixup privacy bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub n: f64,
    pub n_mix: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    pub delta: f64,
}

impl DpParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("n_mix", self.n_mix),
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("sigma_x2", self.sigma_x2),
            ("sigma_y2", self.sigma_y2),
            ("delta", self.delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, format!("must be positive, got {v}")));
            }
        }
        if self.delta >= 1.0 {
            return Err(Error::validation("delta", "must be below 1"));
        }
        Ok(())
    }
}

/// ε of the (ε, δ) guarantee; natural logarithm.
pub fn dp_epsilon(p: &DpParams) -> Result<f64> {
    p.validate()?;
    let delta2 = p.d_x / p.sigma_x2 + p.d_y / p.sigma_y2;
    let log_term = (1.0 / p.delta).ln();
    let first = 2.0 * p.n_mix * delta2 / (8.0 * p.n)
        * (1.0 + (4.0 * p.n * log_term / (delta2 * p.n_mix)).sqrt());
    let second = (delta2 * p.n_mix * log_term / (4.0 * p.n)).sqrt();
    Ok(first + second)
}

/// `ln min(‖x̂ − x_i‖, ‖x̂ − x_j‖)`.
pub fn sample_privacy(mixed: &[f64], x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    if l2_distance(x_i, x_j) == 0.0 {
        return Err(Error::invalid("privacy metric undefined for identical raw samples"));
    }
    nearest_privacy(mixed, &[x_i, x_j])
}

/// `ln` of the distance from `x` to its nearest raw sample.
pub fn nearest_privacy(x: &[f64], raws: &[&[f64]]) -> Result<f64> {
    let d = raws
        .iter()
        .map(|r| l2_distance(x, r))
        .fold(f64::INFINITY, f64::min);
    if !(d > 0.0) {
        return Err(Error::invalid("privacy metric undefined at zero distance"));
    }
    Ok(d.ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyRow {
    pub gamma: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

fn summarize(gamma: f64, values: &[f64]) -> PrivacyRow {
    PrivacyRow {
        gamma,
        median: median(values),
        p25: percentile(values, 25.0),
        p75: percentile(values, 75.0),
    }
}

/// Metric distribution of Mixup samples over the same `pairs` random raw
/// pairs for every γ.
pub fn mixup_privacy_profile(
    data: &LabeledDataset,
    gammas: &[f64],
    pairs: usize,
    master_seed: u64,
) -> Result<Vec<PrivacyRow>> {
    if data.len() < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let mut rng = seed::stream(master_seed, "privacy-pairs", 0, 0);
    let mut drawn = Vec::with_capacity(pairs);
    while drawn.len() < pairs {
        let i = rng.random_range(0..data.len());
        let j = rng.random_range(0..data.len());
        if i != j && data.samples()[i] != data.samples()[j] {
            drawn.push((i, j));
        }
    }
    gammas
        .iter()
        .map(|&gamma| {
            let values = drawn
                .iter()
                .map(|&(i, j)| {
                    let (xi, yi) = data.sample(i);
                    let (xj, yj) = data.sample(j);
                    let m = mixup(xi, yi, xj, yj, data.label_count(), gamma, SeedOrigin { worker: 0, raw: (i, j) })?;
                    sample_privacy(&m.x, xi, xj)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(gamma, &values))
        })
        .collect()
}

fn raw_sources<'a>(shards: &'a [LabeledDataset], sample: &InverseMixedSample) -> Vec<&'a [f64]> {
    sample
        .sources
        .iter()
        .flat_map(|o| [o.raw.0, o.raw.1].map(|i| &shards[o.worker].samples()[i][..]))
        .collect()
}

/// Metric distribution of inverse-mixed samples against the raw samples that
/// produced them, for each γ.
pub fn inverse_privacy_profile(
    shards: &[LabeledDataset],
    gammas: &[f64],
    n_mix: usize,
    n_inv: usize,
    master_seed: u64,
) -> Result<Vec<PrivacyRow>> {
    gammas
        .iter()
        .map(|&gamma| {
            let mixed: Vec<MixedSample> = pipeline::collect_seeds(shards, gamma, n_mix, master_seed)?;
            let inverse = super::pair_and_invert(&mixed, n_inv)?;
            let values = inverse
                .iter()
                .map(|s| nearest_privacy(&s.x, &raw_sources(shards, s)))
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(gamma, &values))
        })
        .collect()
}

pub fn write_privacy_csv<W: Write>(rows: &[PrivacyRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gamma", "median", "p25", "p75"])?;
    for r in rows {
        w.write_record([r.gamma, r.median, r.p25, r.p75].map(|v| format!("{v:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_classification;

    fn reference() -> DpParams {
        DpParams {
            n: 500.0,
            n_mix: 100.0,
            d_x: 784.0,
            d_y: 10.0,
            sigma_x2: 1.0,
            sigma_y2: 1.0,
            delta: 1e-5,
        }
    }

    // 50-digit evaluation of the same expression (mpmath).
    const REFERENCE_EPSILON: f64 = 82.458070160348353508456891788454502071200315281899;

    #[test]
    fn epsilon_matches_high_precision_oracle() {
        let e = dp_epsilon(&reference()).unwrap();
        assert!((e - REFERENCE_EPSILON).abs() / REFERENCE_EPSILON < 1e-10);
    }

    #[test]
    fn epsilon_monotonicity() {
        let by_n: Vec<f64> = (1..=10)
            .map(|k| dp_epsilon(&DpParams { n: 100.0 * k as f64, ..reference() }).unwrap())
            .collect();
        assert!(by_n.windows(2).all(|w| w[1] < w[0]));
        let by_mix: Vec<f64> = (1..=10)
            .map(|k| dp_epsilon(&DpParams { n_mix: 10.0 * k as f64, ..reference() }).unwrap())
            .collect();
        assert!(by_mix.windows(2).all(|w| w[1] > w[0]));
        let far = dp_epsilon(&DpParams { n: 1e16, ..reference() }).unwrap();
        assert!(far < 1e-3);
    }

    #[test]
    fn epsilon_rejects_bad_delta() {
        assert!(dp_epsilon(&DpParams { delta: 1.0, ..reference() }).is_err());
        assert!(dp_epsilon(&DpParams { n: 0.0, ..reference() }).is_err());
    }

    #[test]
    fn sample_privacy_examples() {
        let m = mixup(&[0.0], 0, &[2.0], 1, 2, 0.5, SeedOrigin { worker: 0, raw: (0, 1) }).unwrap();
        assert_eq!(sample_privacy(&m.x, &[0.0], &[2.0]).unwrap(), 0.0);
        assert!(sample_privacy(&[1.0], &[2.0], &[2.0]).is_err());
    }

    #[test]
    fn privacy_grows_with_gamma() {
        let data = synth_classification(4, 30, 8, 1).unwrap();
        let rows = mixup_privacy_profile(&data, &[0.1, 0.2, 0.3, 0.4], 200, 5).unwrap();
        assert!(rows.windows(2).all(|w| w[1].median > w[0].median));
        let mut buf = Vec::new();
        write_privacy_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("gamma,median,p25,p75\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
