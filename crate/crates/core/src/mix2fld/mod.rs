//! Mixup seed collection, inverse-Mixup and the FLD pipeline built on them.
//!
//! Workers upload a few Mixup superpositions of their own samples. The server
//! combines mirrored seeds from different workers so that the soft labels
//! cancel back to a hard label, then uses those samples to distil the
//! averaged worker logits into a global model.

mod pipeline;
mod privacy;

pub use pipeline::{
    collect_seeds, generate_seeds, output_to_model, run_fld_with_seeds, run_mix2fld,
    server_seeds, Mix2FldConfig, Mix2FldRun, SeedMode, ServerSchedule, TrainingSeed,
};
pub use privacy::{
    dp_epsilon, inverse_privacy_profile, mixup_privacy_profile, nearest_privacy, sample_privacy,
    write_privacy_csv, DpParams, PrivacyRow,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::linalg::least_squares;
use crate::stats::one_hot;
use crate::{Error, Result};

const LABEL_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

/// Where a mixed sample came from. Kept for privacy evaluation only; the
/// protocol never reads it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedOrigin {
    pub worker: usize,
    pub raw: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedSample {
    pub x: Vec<f64>,
    pub soft_label: Vec<f64>,
    pub gamma: f64,
    pub origin: SeedOrigin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseMixedSample {
    pub x: Vec<f64>,
    pub label: usize,
    pub coefficients: Vec<f64>,
    pub sources: Vec<SeedOrigin>,
}

impl InverseMixedSample {
    pub fn contributing_workers(&self) -> BTreeSet<usize> {
        self.sources.iter().map(|s| s.worker).collect()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::invalid(format!("gamma must lie in (0, 0.5], got {gamma}")));
    }
    Ok(())
}

/// `γ·(x_i, y_i) + (1−γ)·(x_j, y_j)` for labels given as class indices.
pub fn mixup(
    x_i: &[f64],
    y_i: usize,
    x_j: &[f64],
    y_j: usize,
    label_count: usize,
    gamma: f64,
    origin: SeedOrigin,
) -> Result<MixedSample> {
    check_gamma(gamma)?;
    if x_i.len() != x_j.len() {
        return Err(Error::shape("mixup covariate", x_i.len(), x_j.len()));
    }
    if y_i >= label_count || y_j >= label_count {
        return Err(Error::invalid("mixup label outside label range"));
    }
    let x = x_i
        .iter()
        .zip(x_j)
        .map(|(a, b)| gamma * a + (1.0 - gamma) * b)
        .collect();
    let mut soft_label = vec![0.0; label_count];
    soft_label[y_i] += gamma;
    soft_label[y_j] += 1.0 - gamma;
    Ok(MixedSample {
        x,
        soft_label,
        gamma,
        origin,
    })
}

/// Inverse ratio for a symmetric pair `{γ, 1−γ}`, `{1−γ, γ}` recovering the
/// hard label at `position` (0 or 1).
pub fn solve_inverse_ratio(gamma: f64, position: usize) -> Result<f64> {
    check_gamma(gamma)?;
    // γ/(2γ−1) written as 1/(2 − 1/γ), which rounds to the exact ratio for
    // decimal inputs such as 0.4 and 0.25.
    let det = 2.0 - 1.0 / gamma;
    if det.abs() < RANK_TOL {
        return Err(Error::SingularMixture(
            "gamma = 0.5 makes both soft labels identical".into(),
        ));
    }
    match position {
        0 => Ok(1.0 / det),
        1 => Ok(1.0 - 1.0 / det),
        _ => Err(Error::invalid(format!("position must be 0 or 1, got {position}"))),
    }
}

/// Finds coefficients `c` with `Σ c_k ŷ_k = e_label` and `Σ c_k = 1`, and
/// returns `Σ c_k x̂_k`.
pub fn inverse_mixup(seeds: &[MixedSample], label: usize) -> Result<InverseMixedSample> {
    let first = seeds
        .first()
        .ok_or_else(|| Error::invalid("inverse-Mixup needs at least one seed"))?;
    let workers: BTreeSet<usize> = seeds.iter().map(|s| s.origin.worker).collect();
    if workers.len() < 2 {
        return Err(Error::PrivacyRule(format!(
            "all {} seeds come from worker {}",
            seeds.len(),
            first.origin.worker
        )));
    }
    let d_y = first.soft_label.len();
    let d_x = first.x.len();
    if label >= d_y {
        return Err(Error::invalid(format!("label {label} outside [0, {d_y})")));
    }
    for s in seeds {
        if s.soft_label.len() != d_y {
            return Err(Error::shape("soft label", d_y, s.soft_label.len()));
        }
        if s.x.len() != d_x {
            return Err(Error::shape("mixed covariate", d_x, s.x.len()));
        }
    }
    let n = seeds.len();
    let rows = d_y + 1;
    let mut a = vec![0.0; rows * n];
    for (k, s) in seeds.iter().enumerate() {
        for (r, &v) in s.soft_label.iter().enumerate() {
            a[r * n + k] = v;
        }
        a[d_y * n + k] = 1.0;
    }
    let mut b = one_hot(label, d_y);
    b.push(1.0);
    let ls = least_squares(&a, rows, n, &b, RANK_TOL)?;
    if ls.residual > LABEL_TOL {
        return Err(Error::SingularMixture(format!(
            "no combination of the seeds reproduces label {label} (residual {:e})",
            ls.residual
        )));
    }
    let mut x = vec![0.0; d_x];
    for (c, s) in ls.solution.iter().zip(seeds) {
        for (acc, v) in x.iter_mut().zip(&s.x) {
            *acc += c * v;
        }
    }
    Ok(InverseMixedSample {
        x,
        label,
        coefficients: ls.solution,
        sources: seeds.iter().map(|s| s.origin).collect(),
    })
}

/// Label reached by applying `coefficients` to the seeds' soft labels.
pub fn reconstructed_label(seeds: &[MixedSample], coefficients: &[f64]) -> Vec<f64> {
    let d_y = seeds.first().map_or(0, |s| s.soft_label.len());
    let mut out = vec![0.0; d_y];
    for (c, s) in coefficients.iter().zip(seeds) {
        for (o, v) in out.iter_mut().zip(&s.soft_label) {
            *o += c * v;
        }
    }
    out
}

/// Two-point support `(a, b)` with `a < b`, or `None` for hard labels and
/// wider mixtures.
fn two_point_support(label: &[f64]) -> Option<(usize, usize)> {
    let mut support = label
        .iter()
        .enumerate()
        .filter(|(_, &v)| v.abs() > LABEL_TOL)
        .map(|(i, _)| i);
    let a = support.next()?;
    let b = support.next()?;
    support.next().is_none().then_some((a, b))
}

/// True when `t` carries the mirrored soft label of `s` on the same two
/// classes, which is what makes the pair invertible.
pub fn is_mirror(s: &MixedSample, t: &MixedSample) -> bool {
    match (two_point_support(&s.soft_label), two_point_support(&t.soft_label)) {
        (Some((a, b)), Some(other)) if other == (a, b) => {
            (s.soft_label[a] - t.soft_label[b]).abs() <= LABEL_TOL
                && (s.soft_label[b] - t.soft_label[a]).abs() <= LABEL_TOL
                && (s.soft_label[a] - s.soft_label[b]).abs() > LABEL_TOL
        }
        _ => false,
    }
}

/// Builds up to `n_inv` inverse-mixed samples from cross-worker mirror
/// pairs. A greedy one-to-one matching is taken first; remaining mirror
/// pairs, which reuse seeds, follow in index order. Each pair yields one
/// sample per label in its support.
pub fn pair_and_invert(seeds: &[MixedSample], n_inv: usize) -> Result<Vec<InverseMixedSample>> {
    let mut pairs = Vec::new();
    for i in 0..seeds.len() {
        for j in i + 1..seeds.len() {
            if seeds[i].origin.worker != seeds[j].origin.worker && is_mirror(&seeds[i], &seeds[j]) {
                pairs.push((i, j));
            }
        }
    }
    let mut used = vec![false; seeds.len()];
    let mut ordered = Vec::with_capacity(pairs.len());
    let mut rest = Vec::new();
    for &(i, j) in &pairs {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            ordered.push((i, j));
        } else {
            rest.push((i, j));
        }
    }
    let unmatched = used.iter().filter(|u| !**u).count();
    if unmatched > 0 {
        log::warn!("{unmatched} of {} seeds have no cross-device mirror and are dropped", seeds.len());
    }
    ordered.extend(rest);
    let mut out = Vec::with_capacity(n_inv);
    'pairs: for (i, j) in ordered {
        let pair = [seeds[i].clone(), seeds[j].clone()];
        let (a, b) = two_point_support(&seeds[i].soft_label).expect("mirror pairs have two-point support");
        for label in [a, b] {
            if out.len() == n_inv {
                break 'pairs;
            }
            out.push(inverse_mixup(&pair, label)?);
        }
    }
    if out.len() < n_inv {
        log::warn!("only {} inverse-mixed samples available, {n_inv} requested", out.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin(worker: usize) -> SeedOrigin {
        SeedOrigin { worker, raw: (0, 1) }
    }

    fn soft(x: Vec<f64>, label: Vec<f64>, worker: usize) -> MixedSample {
        MixedSample {
            x,
            soft_label: label,
            gamma: 0.4,
            origin: origin(worker),
        }
    }

    #[test]
    fn mixup_examples() {
        let m = mixup(&[1.0, 0.0], 0, &[0.0, 1.0], 1, 2, 0.4, origin(0)).unwrap();
        assert!((m.x[0] - 0.4).abs() < 1e-15 && (m.x[1] - 0.6).abs() < 1e-15);
        assert_eq!(m.soft_label, vec![0.4, 0.6]);
        let same = mixup(&[1.0], 1, &[3.0], 1, 3, 0.3, origin(0)).unwrap();
        assert_eq!(same.soft_label, vec![0.0, 1.0, 0.0]);
        let half = mixup(&[1.0], 0, &[3.0], 1, 2, 0.5, origin(0)).unwrap();
        assert_eq!(half.soft_label, vec![0.5, 0.5]);
        assert!(mixup(&[1.0], 0, &[3.0], 1, 2, 0.6, origin(0)).is_err());
        assert!(mixup(&[1.0], 0, &[3.0], 1, 2, 0.0, origin(0)).is_err());
    }

    #[test]
    fn inverse_ratio_examples() {
        assert_eq!(solve_inverse_ratio(0.4, 0).unwrap(), -2.0);
        assert_eq!(1.0 - solve_inverse_ratio(0.4, 0).unwrap(), 3.0);
        assert_eq!(solve_inverse_ratio(0.25, 0).unwrap(), -0.5);
        assert!(matches!(solve_inverse_ratio(0.5, 0), Err(Error::SingularMixture(_))));
        // Hand check of both equations at γ = 0.4.
        let g = 0.4;
        let h = solve_inverse_ratio(g, 0).unwrap();
        assert!((h * g + (1.0 - h) * (1.0 - g) - 1.0).abs() < 1e-12);
        assert!((h * (1.0 - g) + (1.0 - h) * g).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_inverts_to_hard_labels() {
        let seeds = [
            soft(vec![1.0, 2.0], vec![0.4, 0.6], 0),
            soft(vec![-1.0, 0.5], vec![0.6, 0.4], 1),
        ];
        let inv = inverse_mixup(&seeds, 0).unwrap();
        assert!((inv.coefficients[0] + 2.0).abs() < 1e-12);
        assert!((inv.coefficients[1] - 3.0).abs() < 1e-12);
        let label = reconstructed_label(&seeds, &inv.coefficients);
        assert!((label[0] - 1.0).abs() < 1e-12 && label[1].abs() < 1e-12);
        assert!((inv.x[0] - (-2.0 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn hard_seeds_select_identity() {
        let seeds = [
            soft(vec![1.0], vec![1.0, 0.0], 0),
            soft(vec![5.0], vec![0.0, 1.0], 1),
        ];
        let inv = inverse_mixup(&seeds, 0).unwrap();
        assert!((inv.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(inv.coefficients[1].abs() < 1e-12);
    }

    #[test]
    fn inverse_errors() {
        let same_worker = [
            soft(vec![1.0], vec![0.4, 0.6], 0),
            soft(vec![2.0], vec![0.6, 0.4], 0),
        ];
        assert!(matches!(inverse_mixup(&same_worker, 0), Err(Error::PrivacyRule(_))));
        let half = [
            soft(vec![1.0], vec![0.5, 0.5], 0),
            soft(vec![2.0], vec![0.5, 0.5], 1),
        ];
        assert!(matches!(inverse_mixup(&half, 0), Err(Error::SingularMixture(_))));
    }

    #[test]
    fn pairing_allows_augmentation() {
        let seeds = vec![
            soft(vec![0.0], vec![0.4, 0.6, 0.0], 0),
            soft(vec![1.0], vec![0.4, 0.6, 0.0], 0),
            soft(vec![2.0], vec![0.6, 0.4, 0.0], 1),
            soft(vec![3.0], vec![0.6, 0.4, 0.0], 1),
            soft(vec![4.0], vec![0.0, 0.4, 0.6], 1),
        ];
        let inv = pair_and_invert(&seeds, 100).unwrap();
        // Four cross-worker mirror pairs, two labels each.
        assert_eq!(inv.len(), 8);
        assert!(inv.len() > seeds.len());
        assert!(inv.iter().all(|s| s.contributing_workers().len() == 2));
        assert_eq!(pair_and_invert(&seeds, 3).unwrap().len(), 3);
    }

    proptest! {
        #[test]
        fn two_seed_path_matches_ratio(
            gamma in prop_oneof![0.01f64..0.49, Just(0.1), Just(0.25), Just(0.4)],
            xa in proptest::collection::vec(-3.0f64..3.0, 3),
            xb in proptest::collection::vec(-3.0f64..3.0, 3),
            position in 0usize..2,
        ) {
            let seeds = [
                soft(xa, vec![gamma, 1.0 - gamma], 0),
                soft(xb, vec![1.0 - gamma, gamma], 1),
            ];
            let inv = inverse_mixup(&seeds, position).unwrap();
            let ratio = solve_inverse_ratio(gamma, position).unwrap();
            prop_assert!((inv.coefficients[0] - ratio).abs() <= 1e-9 * ratio.abs().max(1.0));
            let label = reconstructed_label(&seeds, &inv.coefficients);
            let expect = one_hot(position, 2);
            for (a, b) in label.iter().zip(&expect) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn general_solve_matches_lu_oracle(
            n_s in 2usize..5,
            entries in proptest::collection::vec(0.05f64..1.0, 25),
            label in 0usize..5,
        ) {
            // n_s seeds over n_s classes; labels normalised to sum to 1.
            let seeds: Vec<MixedSample> = (0..n_s)
                .map(|k| {
                    let row = &entries[k * 5..k * 5 + n_s];
                    let total: f64 = row.iter().sum();
                    soft(vec![k as f64], row.iter().map(|v| v / total).collect(), k % 2)
                })
                .collect();
            let label = label % n_s;
            let m = nalgebra::DMatrix::from_fn(n_s, n_s, |r, c| seeds[c].soft_label[r]);
            prop_assume!(m.determinant().abs() > 1e-6);
            let rhs = nalgebra::DVector::from_vec(one_hot(label, n_s));
            let oracle = m.lu().solve(&rhs).unwrap();
            let inv = inverse_mixup(&seeds, label).unwrap();
            for (a, b) in inv.coefficients.iter().zip(oracle.iter()) {
                prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
            }
            let rec = reconstructed_label(&seeds, &inv.coefficients);
            for (a, b) in rec.iter().zip(one_hot(label, n_s)) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
