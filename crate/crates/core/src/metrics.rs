//! Trajectory comparison metrics: distance to ground truth, Fréchet distance
//! between fitted Gaussians, temporal variance, interaction force and task
//! statistics, plus the report tables built from them.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{AgentAction, Outcome, Trajectory};
use crate::world::{wrap_angle, Pose2, Vec2};

/// Summed per-step position error; the longer sequence is truncated.
pub fn l2_to_gt(traj: &[Pose2], gt: &[Pose2]) -> Result<f64> {
    if traj.is_empty() || gt.is_empty() {
        return Err(Error::Invalid("l2 needs non-empty sequences".into()));
    }
    Ok(traj
        .iter()
        .zip(gt)
        .map(|(a, b)| (a.position() - b.position()).norm())
        .sum())
}

/// Per-step (dx, dy, dtheta) of a pose sequence, with dtheta wrapped.
pub fn pose_deltas(poses: &[Pose2]) -> Vec<Vec<f64>> {
    poses
        .windows(2)
        .map(|w| {
            vec![
                w[1].x - w[0].x,
                w[1].y - w[0].y,
                wrap_angle(w[1].theta - w[0].theta),
            ]
        })
        .collect()
}

fn mean_cov(samples: &[Vec<f64>], what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(Error::Invalid(format!(
            "{what} has {} samples, need at least 2",
            samples.len()
        )));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::Invalid(format!(
            "{what} samples must share a positive dimension"
        )));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= n - 1.0;
    }
    Ok((mean, cov))
}

/// Relative tolerance for negative eigenvalues of a PSD matrix.
const PSD_TOL: f64 = 1e-9;

/// Square root of a symmetric PSD matrix.
fn sqrt_psd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new(a.clone());
    let scale = e.eigenvalues.amax().max(1.0);
    if let Some(v) = e.eigenvalues.iter().find(|v| **v < -PSD_TOL * scale) {
        return Err(Error::NonFinite(format!(
            "{what} is not positive semidefinite (eigenvalue {v})"
        )));
    }
    let root = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&e.eigenvectors * root * e.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians fitted to two sample sets:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with sample
/// covariances (n - 1 denominator).
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = mean_cov(a, "first sample set")?;
    let (mb, cb) = mean_cov(b, "second sample set")?;
    let n = ma.len();
    if mb.len() != n {
        return Err(Error::Invalid(format!(
            "sample dimensions differ: {n} vs {}",
            mb.len()
        )));
    }
    let dmu: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let (ca, cb) = (
        DMatrix::from_row_slice(n, n, &ca),
        DMatrix::from_row_slice(n, n, &cb),
    );
    // tr((Ca Cb)^(1/2)) = tr((Ca^(1/2) Cb Ca^(1/2))^(1/2)), the inner product being symmetric.
    let sa = sqrt_psd(&ca, "first covariance")?;
    let inner = &sa * &cb * &sa;
    let root = sqrt_psd(&((&inner + inner.transpose()) * 0.5), "covariance product")?;
    Ok((dmu + ca.trace() + cb.trace() - 2.0 * root.trace()).max(0.0))
}

/// Scalar-Gaussian Fréchet distance `(mu_a - mu_b)^2 + (s_a - s_b)^2`.
pub fn frechet_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    let col = |x: &[f64]| x.iter().map(|v| vec![*v]).collect::<Vec<_>>();
    let (ma, va) = mean_cov(&col(a), "first sample set")?;
    let (mb, vb) = mean_cov(&col(b), "second sample set")?;
    Ok((ma[0] - mb[0]).powi(2) + (va[0].sqrt() - vb[0].sqrt()).powi(2))
}

/// Full and per-dimension Fréchet distances on pooled pose deltas.
pub fn fd_pose_batches(a: &[Vec<Pose2>], b: &[Vec<Pose2>]) -> Result<(f64, [f64; 3])> {
    let fa: Vec<Vec<f64>> = a.iter().flat_map(|p| pose_deltas(p)).collect();
    let fb: Vec<Vec<f64>> = b.iter().flat_map(|p| pose_deltas(p)).collect();
    let full = frechet_distance(&fa, &fb)?;
    let dim = |f: &[Vec<f64>], d: usize| f.iter().map(|v| v[d]).collect::<Vec<_>>();
    let mut per = [0.0; 3];
    for (d, p) in per.iter_mut().enumerate() {
        *p = frechet_1d(&dim(&fa, d), &dim(&fb, d))?;
    }
    Ok((full, per))
}

fn unwrap_angles(poses: &[Pose2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(poses.len());
    for p in poses {
        let next = match out.last() {
            Some(&prev) => prev + wrap_angle(p.theta - prev),
            None => p.theta,
        };
        out.push(next);
    }
    out
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Per-trajectory variance over time of (x, y, theta), averaged over the
/// batch. Orientation is unwrapped first.
pub fn temporal_variance(batch: &[Vec<Pose2>]) -> Result<[f64; 3]> {
    if batch.is_empty() {
        return Err(Error::Invalid("temporal variance of an empty batch".into()));
    }
    let mut acc = [0.0; 3];
    for (i, t) in batch.iter().enumerate() {
        if t.len() < 2 {
            return Err(Error::Invalid(format!(
                "trajectory {i} has {} poses, need at least 2",
                t.len()
            )));
        }
        let xs: Vec<f64> = t.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = t.iter().map(|p| p.y).collect();
        acc[0] += population_variance(&xs);
        acc[1] += population_variance(&ys);
        acc[2] += population_variance(&unwrap_angles(t));
    }
    Ok(acc.map(|v| v / batch.len() as f64))
}

/// Axial internal force in newtons: positive stretches the table, negative
/// compresses it.
pub fn interaction_force(
    a_robot: &AgentAction,
    a_human: &AgentAction,
    theta: f64,
    force_scale: f64,
) -> f64 {
    let u = Vec2::new(theta.cos(), theta.sin());
    (a_robot.as_vec().dot(u) - a_human.as_vec().dot(u)) * force_scale / 2.0
}

/// Interaction force at every acting step of a trajectory.
pub fn interaction_series(t: &Trajectory) -> Vec<f64> {
    let acting = t.steps.len().saturating_sub(1);
    t.steps[..acting]
        .iter()
        .map(|s| {
            interaction_force(
                &s.action_robot,
                &s.action_human,
                s.state.pose.theta,
                t.params.force_scale,
            )
        })
        .collect()
}

/// Scales all series by the global extremes: negative values by |min| and
/// positive values by max, so zero stays zero and the extremes map to -1
/// and 1.
pub fn scale_interaction_series(series: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let all = series.iter().flatten();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(*v), h.max(*v))
    });
    if !(hi > lo) {
        return Err(Error::Invalid(
            "interaction series are constant; cannot scale".into(),
        ));
    }
    let scale = |v: f64| {
        if v > 0.0 {
            v / hi
        } else if v < 0.0 {
            v / -lo
        } else {
            0.0
        }
    };
    Ok(series
        .iter()
        .map(|s| s.iter().map(|v| scale(*v)).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub success_rate: f64,
    /// Over successful trials only; absent without successes.
    pub mean_time: Option<f64>,
    pub std_time: Option<f64>,
}

/// Success fraction and completion-time statistics (population std).
pub fn task_stats(trials: &[Trajectory]) -> Result<TaskStats> {
    if trials.is_empty() {
        return Err(Error::Invalid("task statistics of zero trials".into()));
    }
    let times: Vec<f64> = trials
        .iter()
        .filter(|t| t.outcome == Outcome::Success)
        .map(|t| t.duration())
        .collect();
    let success_rate = times.len() as f64 / trials.len() as f64;
    if times.is_empty() {
        return Ok(TaskStats {
            success_rate,
            mean_time: None,
            std_time: None,
        });
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    Ok(TaskStats {
        success_rate,
        mean_time: Some(mean),
        std_time: Some(population_variance(&times).sqrt()),
    })
}

/// One row of a comparison table. Serialized names follow the column
/// headers of the printed tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    #[serde(rename = "method")]
    pub method: String,
    #[serde(rename = "L2", skip_serializing_if = "Option::is_none", default)]
    pub l2: Option<f64>,
    #[serde(rename = "FD", skip_serializing_if = "Option::is_none", default)]
    pub fd: Option<f64>,
    #[serde(rename = "FD_x", skip_serializing_if = "Option::is_none", default)]
    pub fd_x: Option<f64>,
    #[serde(rename = "FD_y", skip_serializing_if = "Option::is_none", default)]
    pub fd_y: Option<f64>,
    #[serde(rename = "FD_theta", skip_serializing_if = "Option::is_none", default)]
    pub fd_theta: Option<f64>,
    #[serde(rename = "Var_x", skip_serializing_if = "Option::is_none", default)]
    pub var_x: Option<f64>,
    #[serde(rename = "Var_y", skip_serializing_if = "Option::is_none", default)]
    pub var_y: Option<f64>,
    #[serde(rename = "Var_theta", skip_serializing_if = "Option::is_none", default)]
    pub var_theta: Option<f64>,
    #[serde(
        rename = "Success (%)",
        skip_serializing_if = "Option::is_none",
        default
    )]
    pub success_pct: Option<f64>,
    #[serde(rename = "Time (s)", skip_serializing_if = "Option::is_none", default)]
    pub mean_time: Option<f64>,
    #[serde(
        rename = "Time std (s)",
        skip_serializing_if = "Option::is_none",
        default
    )]
    pub time_std: Option<f64>,
}

impl MetricReport {
    pub fn with_var(mut self, v: [f64; 3]) -> Self {
        (self.var_x, self.var_y, self.var_theta) = (Some(v[0]), Some(v[1]), Some(v[2]));
        self
    }

    pub fn with_fd(mut self, full: f64, per: [f64; 3]) -> Self {
        (self.fd, self.fd_x, self.fd_y, self.fd_theta) =
            (Some(full), Some(per[0]), Some(per[1]), Some(per[2]));
        self
    }

    pub fn with_task(mut self, s: &TaskStats) -> Self {
        self.success_pct = Some(100.0 * s.success_rate);
        self.mean_time = s.mean_time;
        self.time_std = s.std_time;
        self
    }

    fn cells(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("L2", self.l2),
            ("FD", self.fd),
            ("FD_x", self.fd_x),
            ("FD_y", self.fd_y),
            ("FD_theta", self.fd_theta),
            ("Var_x", self.var_x),
            ("Var_y", self.var_y),
            ("Var_theta", self.var_theta),
            ("Success (%)", self.success_pct),
            ("Time (s)", self.mean_time),
            ("Time std (s)", self.time_std),
        ]
    }
}

/// Aligned plain-text table of the columns present in any row.
pub fn format_table(rows: &[MetricReport]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let headers: Vec<&str> = first
        .cells()
        .iter()
        .enumerate()
        .filter(|(i, _)| rows.iter().any(|r| r.cells()[*i].1.is_some()))
        .map(|(_, (h, _))| *h)
        .collect();
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("Method")
        .chain(headers.iter().copied())
        .map(String::from)
        .collect()];
    for r in rows {
        let cells = r.cells();
        let mut line = vec![r.method.clone()];
        for h in &headers {
            let v = cells.iter().find(|(n, _)| n == h).and_then(|(_, v)| *v);
            line.push(v.map_or_else(|| "-".into(), |v| format!("{v:.4}")));
        }
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &grid {
        let cols: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect();
        writeln!(out, "{}", cols.join("  ").trim_end()).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{SimParams, StepRecord};
    use crate::world::{ObservationFrame, TableState};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize, dy: f64) -> Vec<Pose2> {
        (0..n)
            .map(|i| Pose2::new(i as f64 * 0.1, dy, 0.0))
            .collect()
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_to_gt(&line(10, 0.0), &line(10, 0.0)).unwrap(), 0.0);
        assert!((l2_to_gt(&line(10, 1.0), &line(10, 0.0)).unwrap() - 10.0).abs() < 1e-12);
        assert!((l2_to_gt(&line(14, 1.0), &line(10, 0.0)).unwrap() - 10.0).abs() < 1e-12);
        assert!(l2_to_gt(&[], &line(3, 0.0)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rp = |n| {
            (0..n)
                .map(|_| Pose2::new(rng.random(), rng.random(), rng.random()))
                .collect::<Vec<_>>()
        };
        let (a, b) = (rp(30), rp(30));
        let mut direct = 0.0;
        for i in 0..30 {
            direct += ((a[i].x - b[i].x).powi(2) + (a[i].y - b[i].y).powi(2)).sqrt();
        }
        assert!((l2_to_gt(&a, &b).unwrap() - direct).abs() < 1e-12);
    }

    fn gaussian_set(
        rng: &mut ChaCha8Rng,
        n: usize,
        mix: &[[f64; 3]; 3],
        shift: [f64; 3],
    ) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let z: [f64; 3] = std::array::from_fn(|_| {
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
                });
                (0..3)
                    .map(|i| shift[i] + (0..3).map(|j| mix[i][j] * z[j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Independent route: eigenvalues of the non-symmetric product.
    fn fd_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let fit = |s: &[Vec<f64>]| {
            let n = s.len() as f64;
            let d = s[0].len();
            let m = DMatrix::from_fn(d, 1, |i, _| s.iter().map(|v| v[i]).sum::<f64>() / n);
            let c = DMatrix::from_fn(d, d, |i, j| {
                s.iter().map(|v| (v[i] - m[i]) * (v[j] - m[j])).sum::<f64>() / (n - 1.0)
            });
            (m, c)
        };
        let (ma, ca) = fit(a);
        let (mb, cb) = fit(b);
        let prod = &ca * &cb;
        let root_tr: f64 = prod.complex_eigenvalues().iter().map(|l| l.sqrt().re).sum();
        (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * root_tr
    }

    #[test]
    fn fd_examples_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mix = [[1.0, 0.2, 0.0], [0.3, 0.5, 0.1], [0.0, -0.4, 0.8]];
        let a = gaussian_set(&mut rng, 400, &mix, [0.0; 3]);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);

        let ones = vec![1.0; 5];
        let zeros = vec![0.0; 5];
        assert!((frechet_1d(&ones, &zeros).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_1d(&[0.0, 2.0], &[5.0, 5.0]).unwrap() - (16.0 + 2.0)).abs() < 1e-12);

        let mix_b = [[0.5, 0.0, 0.3], [0.0, 1.2, 0.0], [0.2, 0.1, 0.4]];
        for k in 0..10 {
            let b = gaussian_set(&mut rng, 300, &mix_b, [0.3 * k as f64, -0.1, 0.05]);
            let got = frechet_distance(&a, &b).unwrap();
            let want = fd_oracle(&a, &b);
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            assert!((got - frechet_distance(&b, &a).unwrap()).abs() < 1e-9);
        }
        assert!(frechet_distance(&a[..1], &a).is_err());
        assert!(frechet_distance(&a, &[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let r = sqrt_psd(&a, "m").unwrap();
        assert!((&r * &r - &a).amax() < 1e-12);
        assert!(sqrt_psd(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), "m").is_err());
    }

    proptest! {
        #[test]
        fn fd_grows_with_mean_shift(s1 in 0.0..3.0f64, extra in 0.0..3.0f64, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mix = [[1.0, 0.0, 0.0], [0.2, 0.7, 0.0], [0.0, 0.1, 0.3]];
            let a = gaussian_set(&mut rng, 50, &mix, [0.0; 3]);
            let shifted = |s: f64| a.iter().map(|v| vec![v[0] + s, v[1] - 0.5 * s, v[2]]).collect::<Vec<_>>();
            let f1 = frechet_distance(&a, &shifted(s1)).unwrap();
            let f2 = frechet_distance(&a, &shifted(s1 + extra)).unwrap();
            prop_assert!(f2 + 1e-9 >= f1);
        }

        #[test]
        fn variance_is_translation_invariant(dx in -50.0..50.0f64, dy in -50.0..50.0f64, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<Pose2> = (0..20).map(|_| Pose2::new(rng.random(), rng.random(), rng.random_range(-3.0..3.0))).collect();
            let moved: Vec<Pose2> = t.iter().map(|p| Pose2::new(p.x + dx, p.y + dy, p.theta)).collect();
            let (a, b) = (temporal_variance(&[t]).unwrap(), temporal_variance(&[moved]).unwrap());
            for d in 0..3 {
                prop_assert!((a[d] - b[d]).abs() < 1e-9);
            }
        }

        #[test]
        fn interaction_ignores_common_perpendicular_force(
            fx in -0.5..0.5f64, fy in -0.5..0.5f64, gx in -0.5..0.5f64, gy in -0.5..0.5f64,
            theta in -3.0..3.0f64, k in -0.4..0.4f64,
        ) {
            let n = Vec2::new(-theta.sin(), theta.cos()) * k;
            let base = interaction_force(&AgentAction::new(fx, fy), &AgentAction::new(gx, gy), theta, 8.0);
            let moved = interaction_force(&AgentAction::new(fx + n.x, fy + n.y), &AgentAction::new(gx + n.x, gy + n.y), theta, 8.0);
            prop_assert!((base - moved).abs() < 1e-12);
        }

        #[test]
        fn l2_triangle_inequality(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rp = || (0..15).map(|_| Pose2::new(rng.random(), rng.random(), 0.0)).collect::<Vec<_>>();
            let (a, b, c) = (rp(), rp(), rp());
            prop_assert!(l2_to_gt(&a, &c).unwrap() <= l2_to_gt(&a, &b).unwrap() + l2_to_gt(&b, &c).unwrap() + 1e-12);
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(
            temporal_variance(&[line(1, 0.0).repeat(5)]).unwrap(),
            [0.0; 3]
        );
        let alt: Vec<Pose2> = (0..10)
            .map(|i| Pose2::new(if i % 2 == 0 { 0.0 } else { 2.0 }, 0.0, 0.0))
            .collect();
        assert!((temporal_variance(std::slice::from_ref(&alt)).unwrap()[0] - 1.0).abs() < 1e-12);
        let both = temporal_variance(&[alt.clone(), line(1, 0.0).repeat(4)]).unwrap();
        assert!((both[0] - 0.5).abs() < 1e-12);
        assert!(temporal_variance(&[line(1, 0.0)]).is_err());
        // Orientation crossing the branch cut varies little.
        let spin: Vec<Pose2> = [3.1, -3.1, 3.1, -3.1]
            .iter()
            .map(|t| Pose2::new(0.0, 0.0, *t))
            .collect();
        assert!(temporal_variance(&[spin]).unwrap()[2] < 0.01);
    }

    #[test]
    fn interaction_examples() {
        let push = AgentAction::new(1.0, 0.0);
        assert_eq!(interaction_force(&push, &push, 0.0, 8.0), 0.0);
        assert!(
            (interaction_force(&push, &AgentAction::new(-1.0, 0.0), 0.0, 8.0) - 8.0).abs() < 1e-12
        );
        let up = AgentAction::new(0.0, 1.0);
        assert!(interaction_force(&up, &AgentAction::new(0.0, -0.5), 0.0, 8.0).abs() < 1e-12);
        let rot = std::f64::consts::FRAC_PI_2;
        assert!(
            (interaction_force(&AgentAction::new(0.0, -1.0), &up, rot, 8.0) + 8.0).abs() < 1e-12
        );
    }

    #[test]
    fn scaling_examples() {
        let s = vec![vec![-4.0, 0.0, 2.0], vec![0.0, 0.0], vec![1.0, -1.0]];
        let out = scale_interaction_series(&s).unwrap();
        assert_eq!(out[0], vec![-1.0, 0.0, 1.0]);
        assert_eq!(out[1], vec![0.0, 0.0]);
        // Two-pass oracle.
        let lo = s.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let hi = s
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let want: Vec<f64> = s[2]
            .iter()
            .map(|v| if *v > 0.0 { v / hi } else { v / lo.abs() })
            .collect();
        assert_eq!(out[2], want);
        assert!(scale_interaction_series(&[vec![0.5, 0.5]]).is_err());
    }

    fn trial(outcome: Outcome, ticks: u64) -> Trajectory {
        let rec = |tick| StepRecord {
            tick,
            state: TableState::at_rest(Pose2::new(0.0, 0.0, 0.0)),
            action_robot: AgentAction::ZERO,
            action_human: AgentAction::ZERO,
            obs: ObservationFrame::default(),
        };
        let params = SimParams {
            dt: 0.1,
            ..SimParams::default()
        };
        Trajectory {
            map_id: "m".into(),
            params,
            steps: (0..=ticks).map(rec).collect(),
            outcome,
        }
    }

    #[test]
    fn task_stats_examples() {
        let s = task_stats(&[
            trial(Outcome::Success, 100),
            trial(Outcome::Success, 200),
            trial(Outcome::Timeout, 400),
            trial(Outcome::Success, 150),
        ])
        .unwrap();
        assert_eq!(s.success_rate, 0.75);
        assert!((s.mean_time.unwrap() - 15.0).abs() < 1e-9);
        let two =
            task_stats(&[trial(Outcome::Success, 100), trial(Outcome::Success, 200)]).unwrap();
        assert!(
            (two.mean_time.unwrap() - 15.0).abs() < 1e-9
                && (two.std_time.unwrap() - 5.0).abs() < 1e-9
        );
        let none = task_stats(&[trial(Outcome::Collision, 10)]).unwrap();
        assert_eq!(
            none,
            TaskStats {
                success_rate: 0.0,
                mean_time: None,
                std_time: None
            }
        );
        assert!(task_stats(&[]).is_err());
    }

    #[test]
    fn report_json_and_table() {
        let r = MetricReport {
            method: "VRNN".into(),
            l2: Some(1.5),
            ..Default::default()
        }
        .with_fd(2.0, [0.1, 0.2, 0.3])
        .with_var([1.0, 2.0, 3.0]);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["FD_theta"], 0.3);
        assert_eq!(json["Var_x"], 1.0);
        assert!(json.get("Success (%)").is_none());
        let back: MetricReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
        let rrt = MetricReport {
            method: "RRT".into(),
            ..Default::default()
        }
        .with_var([0.5, 0.5, 0.5]);
        let t = format_table(&[r, rrt]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("Var_theta") && !lines[0].contains("Success"));
        assert!(lines[2].trim_start().starts_with("RRT"));
        assert_eq!(lines[0].len(), lines[1].len());
    }
}
