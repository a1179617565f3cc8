//! Vector-valued Bézier curves over a unit phase.
//!
//! A curve is parameterized by the phase `s ∈ [0, 1]` and carries a duration
//! so that rates can be reported per second (`s = t / duration`). Phases are
//! range-checked, never wrapped; periodic callers wrap before evaluating.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, check_unit_phase, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BezierCurve {
    control_points: Vec<Vec<f64>>,
    duration: f64,
}

impl BezierCurve {
    pub fn new(control_points: Vec<Vec<f64>>, duration: f64) -> Result<Self> {
        let first = control_points
            .first()
            .ok_or_else(|| Error::validation("bezier curve", "no control points"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::validation("bezier curve", "zero-dimensional points"));
        }
        if let Some(bad) = control_points.iter().find(|p| p.len() != dim) {
            return Err(Error::Dimension {
                what: "bezier control point",
                expected: dim,
                got: bad.len(),
            });
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::validation(
                "bezier curve",
                format!("duration must be positive and finite, got {duration}"),
            ));
        }
        for p in &control_points {
            check_finite("bezier control point", p)?;
        }
        Ok(Self {
            control_points,
            duration,
        })
    }

    /// Curve that stays at `value` for the whole phase.
    pub fn constant(value: Vec<f64>, degree: usize, duration: f64) -> Result<Self> {
        Self::new(vec![value; degree + 1], duration)
    }

    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.control_points[0].len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn control_points(&self) -> &[Vec<f64>] {
        &self.control_points
    }

    pub fn control_points_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.control_points
    }

    pub fn into_control_points(self) -> Vec<Vec<f64>> {
        self.control_points
    }

    /// Same curve with a different duration (phase shape unchanged).
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.control_points.clone(), duration)
    }

    /// Position at phase `s`, by De Casteljau recursion.
    pub fn eval(&self, s: f64) -> Result<Vec<f64>> {
        check_unit_phase("bezier phase", s)?;
        Ok(de_casteljau(&self.control_points, s))
    }

    /// Time derivative at phase `s` (per second, not per unit phase).
    pub fn eval_rate(&self, s: f64) -> Result<Vec<f64>> {
        check_unit_phase("bezier phase", s)?;
        let d = self.degree();
        if d == 0 {
            return Ok(vec![0.0; self.dim()]);
        }
        let scale = d as f64 / self.duration;
        let hodograph: Vec<Vec<f64>> = self
            .control_points
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| scale * (b - a)).collect())
            .collect();
        Ok(de_casteljau(&hodograph, s))
    }

    /// Componentwise sign flip of every control point (entries of `sign` are ±1).
    pub fn scaled(&self, sign: &[f64]) -> Result<Self> {
        if sign.len() != self.dim() {
            return Err(Error::Dimension {
                what: "mirror sign",
                expected: self.dim(),
                got: sign.len(),
            });
        }
        let points = self
            .control_points
            .iter()
            .map(|p| p.iter().zip(sign).map(|(x, s)| x * s).collect())
            .collect();
        Ok(Self {
            control_points: points,
            duration: self.duration,
        })
    }

    /// Degree-5 swing-foot curve from `start` to `end` with zero endpoint
    /// velocity and the vertical midpoint raised `apex_height` above the
    /// higher endpoint.
    ///
    /// Layout: `P0 = P1 = start`, `P4 = P5 = end`; `P2`, `P3` sit at 40% / 60%
    /// of the horizontal span and share the height `zc` solving
    /// `(6 z0 + 20 zc + 6 z1) / 32 = max(z0, z1) + apex`.
    pub fn fit_swing(start: [f64; 3], end: [f64; 3], apex_height: f64, duration: f64) -> Result<Self> {
        check_finite("swing start", &start)?;
        check_finite("swing end", &end)?;
        check_finite("swing apex/duration", &[apex_height, duration])?;
        if apex_height <= 0.0 {
            return Err(Error::validation(
                "swing apex",
                format!("apex height must be positive, got {apex_height}"),
            ));
        }
        if duration <= 0.0 {
            return Err(Error::validation(
                "swing duration",
                format!("duration must be positive, got {duration}"),
            ));
        }
        let apex = start[2].max(end[2]) + apex_height;
        let zc = (32.0 * apex - 6.0 * start[2] - 6.0 * end[2]) / 20.0;
        let lerp = |f: f64| -> Vec<f64> {
            vec![
                start[0] + f * (end[0] - start[0]),
                start[1] + f * (end[1] - start[1]),
                zc,
            ]
        };
        let points = vec![
            start.to_vec(),
            start.to_vec(),
            lerp(0.4),
            lerp(0.6),
            end.to_vec(),
            end.to_vec(),
        ];
        Self::new(points, duration)
    }

    /// Degree-`degree` curve passing exactly through `sample(s_i)` at the
    /// Chebyshev–Lobatto phases `s_i = (1 − cos(π i / degree)) / 2`.
    ///
    /// The node set includes both endpoints, so `eval(0)` and `eval(1)` match
    /// the sampled function up to the linear-solve rounding.
    pub fn interpolate<F>(degree: usize, duration: f64, mut sample: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<Vec<f64>>,
    {
        if degree == 0 {
            return Self::new(vec![sample(0.0)?], duration);
        }
        let n = degree + 1;
        let nodes: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    0.0
                } else if i == degree {
                    1.0
                } else {
                    0.5 * (1.0 - (std::f64::consts::PI * i as f64 / degree as f64).cos())
                }
            })
            .collect();
        let values = nodes.iter().map(|&s| sample(s)).collect::<Result<Vec<_>>>()?;
        let dim = values[0].len();
        let basis = DMatrix::from_fn(n, n, |i, j| bernstein(degree, j, nodes[i]));
        let lu = basis.lu();
        let mut points = vec![vec![0.0; dim]; n];
        for k in 0..dim {
            let rhs = DVector::from_iterator(n, values.iter().map(|v| v[k]));
            let coef = lu
                .solve(&rhs)
                .ok_or_else(|| Error::Degenerate("singular Bernstein interpolation matrix".into()))?;
            for (p, c) in points.iter_mut().zip(coef.iter()) {
                p[k] = *c;
            }
        }
        // Endpoint control points equal the endpoint samples exactly.
        points[0] = values[0].clone();
        points[degree] = values[degree].clone();
        Self::new(points, duration)
    }
}

fn de_casteljau(points: &[Vec<f64>], s: f64) -> Vec<f64> {
    if s == 0.0 {
        return points[0].clone();
    }
    if s == 1.0 {
        return points[points.len() - 1].clone();
    }
    let mut work: Vec<Vec<f64>> = points.to_vec();
    let n = work.len();
    for level in 1..n {
        for i in 0..n - level {
            let (head, tail) = work.split_at_mut(i + 1);
            let (a, b) = (&mut head[i], &tail[0]);
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * (y - *x);
            }
        }
    }
    work.swap_remove(0)
}

/// Bernstein basis polynomial `C(n, i) s^i (1 − s)^(n − i)`.
pub fn bernstein(n: usize, i: usize, s: f64) -> f64 {
    binomial(n, i) * s.powi(i as i32) * (1.0 - s).powi((n - i) as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bernstein_sum(curve: &BezierCurve, s: f64) -> Vec<f64> {
        let d = curve.degree();
        let mut out = vec![0.0; curve.dim()];
        for (i, p) in curve.control_points().iter().enumerate() {
            let b = bernstein(d, i, s);
            for (o, x) in out.iter_mut().zip(p) {
                *o += b * x;
            }
        }
        out
    }

    #[test]
    fn endpoints_interpolate() {
        let c = BezierCurve::new(vec![vec![1.0, 2.0], vec![5.0, -1.0], vec![3.0, 4.0]], 0.5).unwrap();
        assert_eq!(c.eval(0.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(c.eval(1.0).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn constant_curve_has_zero_rate() {
        let c = BezierCurve::constant(vec![0.7, -0.2], 5, 0.4).unwrap();
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            assert_eq!(c.eval(s).unwrap(), vec![0.7, -0.2]);
            let r = c.eval_rate(s).unwrap();
            assert!(r.iter().all(|x| x.abs() < 1e-15));
        }
    }

    #[test]
    fn linear_curve_rate() {
        let c = BezierCurve::new(vec![vec![1.0], vec![3.0]], 0.5).unwrap();
        for s in [0.0, 0.3, 1.0] {
            assert!((c.eval_rate(s).unwrap()[0] - 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn phase_out_of_range_is_error() {
        let c = BezierCurve::constant(vec![0.0], 2, 1.0).unwrap();
        assert!(matches!(c.eval(1.0 + 1e-9), Err(Error::Range { .. })));
        assert!(matches!(c.eval_rate(-1e-9), Err(Error::Range { .. })));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(BezierCurve::new(vec![], 1.0).is_err());
        assert!(BezierCurve::new(vec![vec![0.0], vec![0.0, 1.0]], 1.0).is_err());
        assert!(BezierCurve::new(vec![vec![0.0]], 0.0).is_err());
        assert!(BezierCurve::new(vec![vec![f64::NAN]], 1.0).is_err());
    }

    #[test]
    fn swing_apex_in_place() {
        // Midpoint equation with z0 = z1 = 0: 20 zc / 32 = 0.1 → zc = 0.16.
        let c = BezierCurve::fit_swing([0.0; 3], [0.0; 3], 0.1, 0.4).unwrap();
        assert!((c.control_points()[2][2] - 0.16).abs() < 1e-15);
        let mid = c.eval(0.5).unwrap();
        assert!((mid[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn swing_boundary_conditions() {
        let c = BezierCurve::fit_swing([0.0, 0.0, 0.0], [0.3, 0.0, 0.0], 0.08, 0.4).unwrap();
        assert_eq!(c.eval(0.0).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(c.eval(1.0).unwrap(), vec![0.3, 0.0, 0.0]);
        for s in [0.0, 1.0] {
            assert!(c.eval_rate(s).unwrap().iter().all(|x| x.abs() < 1e-12));
        }
        assert!((c.eval(0.5).unwrap()[2] - 0.08).abs() < 1e-12);
        assert!((c.eval(0.5).unwrap()[0] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn swing_halved_duration_doubles_rate() {
        let a = BezierCurve::fit_swing([0.0, 0.1, 0.0], [0.3, 0.1, 0.02], 0.08, 0.4).unwrap();
        let b = BezierCurve::fit_swing([0.0, 0.1, 0.0], [0.3, 0.1, 0.02], 0.08, 0.2).unwrap();
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            let ra = a.eval_rate(s).unwrap();
            let rb = b.eval_rate(s).unwrap();
            for (x, y) in ra.iter().zip(&rb) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swing_rejects_bad_input() {
        assert!(BezierCurve::fit_swing([0.0; 3], [0.0; 3], 0.0, 0.4).is_err());
        assert!(BezierCurve::fit_swing([0.0; 3], [0.0; 3], 0.1, -1.0).is_err());
        assert!(BezierCurve::fit_swing([f64::INFINITY, 0.0, 0.0], [0.0; 3], 0.1, 0.4).is_err());
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        // A cubic is represented exactly by any degree ≥ 3 interpolant.
        let f = |s: f64| vec![1.0 - 2.0 * s + 0.5 * s * s * s];
        let c = BezierCurve::interpolate(6, 1.0, |s| Ok(f(s))).unwrap();
        for k in 0..=50 {
            let s = k as f64 / 50.0;
            assert!((c.eval(s).unwrap()[0] - f(s)[0]).abs() < 1e-13);
        }
    }

    fn arb_curve() -> impl Strategy<Value = BezierCurve> {
        (0usize..=8, 1usize..=3).prop_flat_map(|(deg, dim)| {
            proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, dim), deg + 1)
                .prop_map(|pts| BezierCurve::new(pts, 0.8).unwrap())
        })
    }

    proptest! {
        #[test]
        fn de_casteljau_matches_bernstein(c in arb_curve(), s in 0.0..=1.0f64) {
            let a = c.eval(s).unwrap();
            let b = bernstein_sum(&c, s);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn eval_is_affine_equivariant(
            c in arb_curve(),
            s in 0.0..=1.0f64,
            m in proptest::collection::vec(-2.0..2.0f64, 9),
            b in proptest::collection::vec(-2.0..2.0f64, 3),
        ) {
            let k = c.dim();
            let apply = |p: &[f64]| -> Vec<f64> {
                (0..k).map(|r| (0..k).map(|j| m[r * 3 + j] * p[j]).sum::<f64>() + b[r]).collect()
            };
            let mapped = BezierCurve::new(
                c.control_points().iter().map(|p| apply(p)).collect(),
                c.duration(),
            ).unwrap();
            let lhs = mapped.eval(s).unwrap();
            let rhs = apply(&c.eval(s).unwrap());
            for (x, y) in lhs.iter().zip(&rhs) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn swing_contract_holds(
            x0 in -1.0..1.0f64, y0 in -1.0..1.0f64, z0 in 0.0..0.2f64,
            x1 in -1.0..1.0f64, y1 in -1.0..1.0f64, z1 in 0.0..0.2f64,
            apex in 0.01..0.3f64, dur in 0.1..1.0f64,
        ) {
            let c = BezierCurve::fit_swing([x0, y0, z0], [x1, y1, z1], apex, dur).unwrap();
            prop_assert_eq!(c.eval(0.0).unwrap(), vec![x0, y0, z0]);
            prop_assert_eq!(c.eval(1.0).unwrap(), vec![x1, y1, z1]);
            prop_assert!(c.eval_rate(0.0).unwrap().iter().all(|v| v.abs() < 1e-12));
            prop_assert!(c.eval_rate(1.0).unwrap().iter().all(|v| v.abs() < 1e-12));
            let z = c.eval(0.5).unwrap()[2];
            prop_assert!(z >= z0.max(z1) + apex * (1.0 - 1e-6));
        }
    }
}
