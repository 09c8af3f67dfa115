use serde::{Deserialize, Serialize};

use super::RenormError;
use crate::geom::{imat_det, IMat2, Vec2};
use crate::windtree::SystemParams;

type M2 = [[f64; 2]; 2];

fn to_f(m: &IMat2) -> M2 {
    [[m[0][0] as f64, m[0][1] as f64], [m[1][0] as f64, m[1][1] as f64]]
}

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Singular values (descending) and the right-singular vector of the largest.
fn svd2(m: &M2) -> (f64, f64, [f64; 2]) {
    // eigen-decomposition of MᵀM
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    let l1 = 0.5 * (tr + disc);
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).abs();
    let s1 = l1.sqrt();
    let s2 = if s1 > 0.0 { det / s1 } else { 0.0 };
    // eigenvector of l1
    let v = if b.abs() > 1e-300 || (a - d).abs() > 1e-300 {
        let angle = 0.5 * (2.0 * b).atan2(a - d);
        [angle.cos(), angle.sin()]
    } else {
        [1.0, 0.0]
    };
    (s1, s2, v)
}

fn canonical(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    let (x, y) = (v[0] / n, v[1] / n);
    if x < 0.0 || (x == 0.0 && y < 0.0) {
        [-x, -y]
    } else {
        [x, y]
    }
}

/// Product `B_n ⋯ B_1` of integer transition matrices kept as a normalized
/// float matrix plus a log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleAccumulator {
    pub matrices: Vec<IMat2>,
    /// `t_0 = 0`, then one entry per matrix.
    pub times: Vec<f64>,
    /// `log ‖B_k ⋯ B_1‖` (spectral norm); entry 0 is 0.
    pub product_norm_log: Vec<f64>,
    /// Level-0 basis `A_0` (rows in `(e1, e2)` coordinates).
    pub frame: IMat2,
    /// Most-contracted direction after each step, `None` while undefined.
    pub contracted: Vec<Option<[f64; 2]>>,
    prod: M2,
    log_scale: f64,
}

impl CocycleAccumulator {
    pub fn new(frame: IMat2) -> Self {
        CocycleAccumulator {
            matrices: Vec::new(),
            times: vec![0.0],
            product_norm_log: vec![0.0],
            frame,
            contracted: vec![None],
            prod: [[1.0, 0.0], [0.0, 1.0]],
            log_scale: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn t(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn push(&mut self, b: IMat2, t: f64) -> Result<(), RenormError> {
        if !(t > self.t()) {
            return Err(RenormError::NonIncreasingTime(t));
        }
        if imat_det(&b).abs() != 1 {
            return Err(RenormError::InductionBlowup(format!("transition {b:?} is not unimodular")));
        }
        self.prod = mul(&to_f(&b), &self.prod);
        let (s1, _, _) = svd2(&self.prod);
        self.log_scale += s1.ln();
        for row in self.prod.iter_mut() {
            for v in row.iter_mut() {
                *v /= s1;
            }
        }
        self.matrices.push(b);
        self.times.push(t);
        self.product_norm_log.push(self.log_scale);
        self.contracted.push(self.contracted_now());
        Ok(())
    }

    /// Direction in `(e1, e2)` coordinates most contracted by the coefficient
    /// cocycle `A_n^{-T}`, i.e. the top right-singular direction of `A_n`.
    fn contracted_now(&self) -> Option<[f64; 2]> {
        let a = mul(&self.prod, &to_f(&self.frame));
        let (s1, s2, v) = svd2(&a);
        // the normalized product has s1 = 1 up to the frame
        (s1 > s2 * (1.0 + 1e-9)).then(|| canonical(v))
    }

    /// Current normalized product (norm 1) and its log scale.
    pub fn product(&self) -> ([[f64; 2]; 2], f64) {
        (self.prod, self.log_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub theta_top: f64,
    pub theta_bottom: f64,
    pub contracted_dir: Option<[f64; 2]>,
    /// Batch-means standard error of `theta_top`.
    pub stderr: f64,
    pub theta_first_half: f64,
    pub theta_second_half: f64,
    pub stderr_first_half: f64,
    pub stderr_second_half: f64,
    pub t: f64,
}

impl LyapunovEstimate {
    /// The two half-run estimates agree within two standard errors of their
    /// difference.
    pub fn halves_consistent(&self) -> bool {
        let se = self.stderr_first_half.hypot(self.stderr_second_half);
        (self.theta_first_half - self.theta_second_half).abs() <= 2.0 * se
    }
}

/// Rate and batch-means standard error of the log-norm increments over steps
/// `lo..hi` (indices into `product_norm_log`).
fn rate(acc: &CocycleAccumulator, lo: usize, hi: usize) -> (f64, f64) {
    let l = &acc.product_norm_log;
    let t = &acc.times;
    let dt = t[hi] - t[lo];
    let r = (l[hi] - l[lo]) / dt;
    let n = hi - lo;
    let nb = 8.min(n / 2).max(2).min(n.max(1));
    let mut rates = Vec::with_capacity(nb);
    for j in 0..nb {
        let a = lo + j * n / nb;
        let b = lo + (j + 1) * n / nb;
        if b > a && t[b] > t[a] {
            rates.push((l[b] - l[a]) / (t[b] - t[a]));
        }
    }
    if rates.len() < 2 {
        return (r, f64::INFINITY);
    }
    let m = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (rates.len() - 1) as f64;
    (r, (var / rates.len() as f64).sqrt())
}

/// Top exponent `log ‖B_n ⋯ B_1‖ / t_n`; the bottom one is its negative by
/// symplecticity.
pub fn lyapunov_estimate(acc: &CocycleAccumulator, min_t: f64) -> Result<LyapunovEstimate, RenormError> {
    let n = acc.len();
    if n == 0 || acc.t() < min_t {
        return Err(RenormError::InsufficientTime(acc.t(), min_t));
    }
    let theta = acc.product_norm_log[n] / acc.t();
    let (_, se) = rate(acc, 0, n);
    let h = n / 2;
    let (t1, s1) = if h > 0 { rate(acc, 0, h) } else { (theta, f64::INFINITY) };
    let (t2, s2) = if h < n { rate(acc, h, n) } else { (theta, f64::INFINITY) };
    Ok(LyapunovEstimate {
        theta_top: theta,
        theta_bottom: -theta,
        contracted_dir: acc.contracted[n],
        stderr: se,
        theta_first_half: t1,
        theta_second_half: t2,
        stderr_first_half: s1,
        stderr_second_half: s2,
        t: acc.t(),
    })
}

/// Largest angle (radians, mod π) between contracted directions over the
/// steps `from..`.
pub fn direction_drift(acc: &CocycleAccumulator, from: usize) -> f64 {
    let last = match acc.contracted.last().copied().flatten() {
        Some(v) => v,
        None => return f64::INFINITY,
    };
    let mut worst: f64 = 0.0;
    for d in &acc.contracted[from.min(acc.contracted.len() - 1)..] {
        match d {
            Some(v) => {
                let c = (v[0] * last[0] + v[1] * last[1]).abs().min(1.0);
                worst = worst.max(c.acos());
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

/// Strip direction predicted from the contracted direction: angle of
/// `w1·e1 + w2·e2` mod π, and the unit normal.
pub fn predict_strip(dir: [f64; 2], params: &SystemParams) -> Result<(f64, Vec2), RenormError> {
    let v = params.e1 * dir[0] + params.e2 * dir[1];
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(RenormError::ZeroDirection);
    }
    let th = v.y.atan2(v.x).rem_euclid(std::f64::consts::PI);
    let th = if th >= std::f64::consts::PI { 0.0 } else { th };
    let u = v * (1.0 / n);
    Ok((th, Vec2::new(-u.y, u.x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::IDENTITY as UNIT;
    use std::f64::consts::{FRAC_PI_4, PI};

    #[test]
    fn fibonacci_product_growth() {
        let mut acc = CocycleAccumulator::new(UNIT);
        for k in 1..=10_000 {
            let b = if k % 2 == 1 { [[1, 1], [0, 1]] } else { [[1, 0], [1, 1]] };
            acc.push(b, k as f64).unwrap();
        }
        let est = lyapunov_estimate(&acc, 1.0).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((est.theta_top - phi.ln()).abs() < 1e-3, "{}", est.theta_top);
        assert_eq!(est.theta_bottom, -est.theta_top);
        assert!(est.halves_consistent());
        assert!(est.contracted_dir.is_some());
    }

    #[test]
    fn direct_powering_oracle() {
        // [[2,1],[1,1]]^10 = [[F21, F20], [F20, F19]]
        let mut acc = CocycleAccumulator::new(UNIT);
        for k in 1..=20 {
            let b = if k % 2 == 1 { [[1, 0], [1, 1]] } else { [[1, 1], [0, 1]] };
            acc.push(b, k as f64).unwrap();
        }
        let m: M2 = [[10946.0, 6765.0], [6765.0, 4181.0]];
        let (s1, _, _) = svd2(&m);
        assert!((acc.product_norm_log[20] - s1.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_only() {
        let mut acc = CocycleAccumulator::new(UNIT);
        for k in 1..=10 {
            acc.push(UNIT, k as f64).unwrap();
        }
        let est = lyapunov_estimate(&acc, 1.0).unwrap();
        assert_eq!(est.theta_top, 0.0);
        assert!(est.contracted_dir.is_none());
    }

    #[test]
    fn time_must_increase() {
        let mut acc = CocycleAccumulator::new(UNIT);
        acc.push(UNIT, 1.0).unwrap();
        assert!(acc.push(UNIT, 1.0).is_err());
        assert!(acc.push([[2, 0], [0, 1]], 2.0).is_err());
        assert!(lyapunov_estimate(&acc, 5.0).is_err());
    }

    #[test]
    fn strip_prediction_examples() {
        let p = SystemParams::new(Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), 0.2, 0.2, 0.5);
        let (th, z) = predict_strip([1.0, 0.0], &p).unwrap();
        assert_eq!(th, 0.0);
        assert!((z - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        let (th, _) = predict_strip([1.0, 1.0], &p).unwrap();
        assert!((th - FRAC_PI_4).abs() < 1e-15);
        let (th, _) = predict_strip([-1.0, -1.0], &p).unwrap();
        assert!((th - FRAC_PI_4).abs() < 1e-15 && th < PI);
        assert!(predict_strip([0.0, 0.0], &p).is_err());
    }
}
