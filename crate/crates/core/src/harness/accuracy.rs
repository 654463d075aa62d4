use crate::domain::Vec3;

/// Error of approximate accelerations against reference ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceErrors {
    /// sqrt(sum |a - e|^2 / sum |e|^2).
    pub rms: f64,
    /// sqrt(mean(|a - e|^2 / |e|^2)); dominated by particles sitting in
    /// near-cancelling fields.
    pub rms_per_particle: f64,
    pub max_relative: f64,
}

pub fn force_errors(approx: &[Vec3], exact: &[Vec3]) -> ForceErrors {
    assert_eq!(approx.len(), exact.len(), "force arrays differ in length");
    let (mut num, mut den, mut per, mut max) = (0.0, 0.0, 0.0, 0.0f64);
    for (a, e) in approx.iter().zip(exact) {
        let d2: f64 = (0..3).map(|k| (a[k] - e[k]).powi(2)).sum();
        let e2: f64 = e.iter().map(|v| v * v).sum();
        num += d2;
        den += e2;
        let rel = if e2 > 0.0 { d2 / e2 } else { 0.0 };
        per += rel;
        max = max.max(rel.sqrt());
    }
    let n = approx.len().max(1) as f64;
    ForceErrors {
        rms: if den > 0.0 { (num / den).sqrt() } else { 0.0 },
        rms_per_particle: (per / n).sqrt(),
        max_relative: max,
    }
}
