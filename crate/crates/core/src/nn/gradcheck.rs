//! Central finite differences, used as an oracle for every analytic gradient.

/// Central-difference gradient of `f` at `w`.
pub fn finite_difference<F>(f: F, w: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂ + ‖b‖₂, 1e-12)`; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = crate::stats::l2_norm(a) + crate::stats::l2_norm(b);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale.max(1e-12)
    }
}
