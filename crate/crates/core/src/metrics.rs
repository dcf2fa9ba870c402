//! Trajectory error metrics against ground truth or a loop-closure constraint.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::format_num;
use crate::lie::Rot3;
use crate::state::TrajectoryPoint;

/// Drops points whose timestamp equals the previous one.
fn dedup(points: &[TrajectoryPoint]) -> Vec<&TrajectoryPoint> {
    let mut out: Vec<&TrajectoryPoint> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|q| q.t != p.t) {
            out.push(p);
        }
    }
    out
}

/// Pairs every estimate inside the ground-truth time span with the ground
/// truth point nearest in time.
pub fn associate<'a>(
    est: &'a [TrajectoryPoint],
    gt: &'a [TrajectoryPoint],
) -> Result<Vec<(&'a TrajectoryPoint, &'a TrajectoryPoint)>> {
    let (first, last) = match (gt.first(), gt.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::NoOverlap),
    };
    let pairs: Vec<_> = dedup(est)
        .into_iter()
        .filter(|p| p.t >= first && p.t <= last)
        .map(|p| {
            let i = gt.partition_point(|g| g.t < p.t);
            let nearest = if i == 0 {
                0
            } else if i == gt.len() || p.t - gt[i - 1].t <= gt[i].t - p.t {
                i - 1
            } else {
                i
            };
            (p, &gt[nearest])
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(pairs)
}

/// Root-mean-square position error after nearest-timestamp association, in
/// the shared initial frame (no alignment).
pub fn ate_rmse(est: &[TrajectoryPoint], gt: &[TrajectoryPoint]) -> Result<f64> {
    let pairs = associate(est, gt)?;
    let sum: f64 = pairs.iter().map(|(e, g)| (e.pos - g.pos).norm_squared()).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Distance between the first and last positions, and the integrated path
/// length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopClosure {
    pub error: f64,
    pub path_length: f64,
    /// `100 * error / path_length`; absent when the path length is zero.
    pub percent: Option<f64>,
}

pub fn path_length(points: &[TrajectoryPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].pos - w[0].pos).norm()).sum()
}

pub fn loop_closure(est: &[TrajectoryPoint]) -> Result<LoopClosure> {
    if est.len() < 2 {
        return Err(Error::TooFewSamples { count: est.len() });
    }
    let error = (est[est.len() - 1].pos - est[0].pos).norm();
    let path_length = path_length(est);
    let percent = (path_length > 0.0).then(|| 100.0 * error / path_length);
    Ok(LoopClosure { error, path_length, percent })
}

/// Signed heading error `z` of `log(R_gt^T R_est)` at the last common time.
pub fn yaw_drift(est: &[TrajectoryPoint], gt: &[TrajectoryPoint]) -> Result<f64> {
    let pairs = associate(est, gt)?;
    let (e, g) = pairs[pairs.len() - 1];
    let rel: Rot3 = g.rot.transpose() * e.rot;
    Ok(rel.log()?.z)
}

/// Mean speed over stance-flagged points; absent when none are flagged.
pub fn mean_stance_speed(est: &[TrajectoryPoint]) -> Option<f64> {
    let speeds: Vec<f64> = dedup(est).iter().filter(|p| p.stance).map(|p| p.vel.norm()).collect();
    (!speeds.is_empty()).then(|| speeds.iter().sum::<f64>() / speeds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub ate_rmse: Option<f64>,
    pub final_loop_error: f64,
    pub loop_error_pct_path: Option<f64>,
    pub yaw_drift: Option<f64>,
    pub mean_stance_speed: Option<f64>,
    pub path_length: f64,
}

impl MetricReport {
    /// Loop-closure metrics always; ATE and yaw drift when ground truth is
    /// given.
    pub fn compute(est: &[TrajectoryPoint], gt: Option<&[TrajectoryPoint]>) -> Result<Self> {
        let lc = loop_closure(est)?;
        let (ate, yaw) = match gt {
            Some(gt) => (Some(ate_rmse(est, gt)?), Some(yaw_drift(est, gt)?)),
            None => (None, None),
        };
        Ok(MetricReport {
            ate_rmse: ate,
            final_loop_error: lc.error,
            loop_error_pct_path: lc.percent,
            yaw_drift: yaw,
            mean_stance_speed: mean_stance_speed(est),
            path_length: lc.path_length,
        })
    }

    /// Named values in report order.
    pub fn fields(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("ate_rmse", self.ate_rmse),
            ("final_loop_error", Some(self.final_loop_error)),
            ("loop_error_pct_path", self.loop_error_pct_path),
            ("yaw_drift", self.yaw_drift),
            ("mean_stance_speed", self.mean_stance_speed),
            ("path_length", Some(self.path_length)),
        ]
    }

    /// `key = value` lines; absent values are omitted.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {}", format_num(v));
            }
        }
        s
    }

    /// Values for the sweep table columns `ate_rmse,loop_err,loop_pct,yaw_drift`;
    /// absent values are empty cells.
    pub fn csv_cells(&self) -> [String; 4] {
        let cell = |v: Option<f64>| v.map(format_num).unwrap_or_default();
        [
            cell(self.ate_rmse),
            cell(Some(self.final_loop_error)),
            cell(self.loop_error_pct_path),
            cell(self.yaw_drift),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Vec3;
    use proptest::prelude::*;

    fn point(t: f64, pos: Vec3, yaw: f64) -> TrajectoryPoint {
        TrajectoryPoint { t, pos, vel: Vec3::zeros(), rot: Rot3::from_yaw(yaw), stance: false }
    }

    fn path(n: usize) -> Vec<TrajectoryPoint> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.01;
                point(t, Vec3::new(t.sin(), t.cos() - 1.0, 0.1 * t), 0.3 * t)
            })
            .collect()
    }

    #[test]
    fn ate_examples() {
        let gt = path(200);
        assert_eq!(ate_rmse(&gt, &gt).unwrap(), 0.0);
        let shifted: Vec<_> = gt.iter().map(|p| TrajectoryPoint { pos: p.pos + Vec3::new(0.1, 0.0, 0.0), ..*p }).collect();
        assert!((ate_rmse(&shifted, &gt).unwrap() - 0.1).abs() < 1e-12);

        let late: Vec<_> = gt.iter().map(|p| TrajectoryPoint { t: p.t + 100.0, ..*p }).collect();
        assert!(matches!(ate_rmse(&late, &gt), Err(Error::NoOverlap)));
        assert!(matches!(ate_rmse(&gt, &[]), Err(Error::NoOverlap)));
    }

    #[test]
    fn association_picks_nearest() {
        let gt = path(100);
        let est = vec![point(0.0149, gt[1].pos, 0.0), point(0.0151, gt[2].pos, 0.0)];
        assert_eq!(ate_rmse(&est, &gt).unwrap(), 0.0);
    }

    #[test]
    fn loop_closure_examples() {
        let square: Vec<_> = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]
            .iter()
            .enumerate()
            .map(|(i, p)| point(i as f64, Vec3::new(p[0], p[1], 0.0), 0.0))
            .collect();
        let lc = loop_closure(&square).unwrap();
        assert_eq!((lc.error, lc.path_length, lc.percent), (0.0, 4.0, Some(0.0)));

        // Out 50.5 m and back 49.5 m: 100 m of path, 1 m short of closing.
        let open = vec![
            point(0.0, Vec3::zeros(), 0.0),
            point(1.0, Vec3::new(50.5, 0.0, 0.0), 0.0),
            point(2.0, Vec3::new(1.0, 0.0, 0.0), 0.0),
        ];
        let lc = loop_closure(&open).unwrap();
        assert_eq!(lc.error, 1.0);
        assert_eq!(lc.path_length, 100.0);
        assert_eq!(lc.percent, Some(1.0));

        let still = vec![point(0.0, Vec3::zeros(), 0.0), point(1.0, Vec3::zeros(), 0.0)];
        assert_eq!(loop_closure(&still).unwrap().percent, None);
        assert!(loop_closure(&still[..1]).is_err());
    }

    #[test]
    fn yaw_drift_examples() {
        let gt = path(100);
        assert_eq!(yaw_drift(&gt, &gt).unwrap(), 0.0);
        let turned: Vec<_> = gt.iter().map(|p| TrajectoryPoint { rot: Rot3::from_yaw(0.1) * p.rot, ..*p }).collect();
        assert!((yaw_drift(&turned, &gt).unwrap() - 0.1).abs() < 1e-12);
        let back: Vec<_> = gt.iter().map(|p| TrajectoryPoint { rot: Rot3::from_yaw(-0.2) * p.rot, ..*p }).collect();
        assert!((yaw_drift(&back, &gt).unwrap() + 0.2).abs() < 1e-12);
    }

    #[test]
    fn stance_speed() {
        let mut p = path(4);
        assert_eq!(mean_stance_speed(&p), None);
        p[1].stance = true;
        p[1].vel = Vec3::new(0.03, 0.04, 0.0);
        p[2].stance = true;
        assert!((mean_stance_speed(&p).unwrap() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn report_formats() {
        let gt = path(50);
        let r = MetricReport::compute(&gt, Some(&gt)).unwrap();
        assert_eq!(r.ate_rmse, Some(0.0));
        assert!(r.to_kv().contains("ate_rmse = 0\n"));
        let r = MetricReport::compute(&gt, None).unwrap();
        assert!(!r.to_kv().contains("ate_rmse"));
        assert_eq!(r.csv_cells()[0], "");
    }

    proptest! {
        #[test]
        fn invariant_to_duplicated_final_point(n in 2usize..100, dx in -1.0f64..1.0, dyaw in -1.0f64..1.0) {
            let gt = path(n);
            let est: Vec<_> = gt.iter().map(|p| TrajectoryPoint {
                pos: p.pos + Vec3::new(dx * p.t, 0.0, 0.0),
                rot: Rot3::from_yaw(dyaw * p.t) * p.rot,
                ..*p
            }).collect();
            let mut dup = est.clone();
            dup.push(*est.last().unwrap());
            let a = MetricReport::compute(&est, Some(&gt)).unwrap();
            let b = MetricReport::compute(&dup, Some(&gt)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ate_zero_iff_positions_agree(n in 2usize..50, k in 0usize..50, d in 1e-9f64..1.0) {
            let gt = path(n);
            let mut est = gt.clone();
            prop_assert_eq!(ate_rmse(&est, &gt).unwrap(), 0.0);
            est[k % n].pos.y += d;
            prop_assert!(ate_rmse(&est, &gt).unwrap() > 0.0);
        }
    }
}
