//! Poincaré ball and Klein model primitives.
//!
//! Points on the ball of curvature `c` satisfy `c·‖u‖² < 1`. All operations
//! clamp arctanh arguments, floor denominators, and re-project results that
//! rounding pushed onto or past the boundary, so every returned point is
//! strictly inside the ball.

use crate::error::{Error, Result};
use crate::linalg::l2_norm;
use ndarray::{Array1, Array2, ArrayView1};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Upper clamp for every arctanh argument.
pub const ATANH_CLAMP: f64 = 1.0 - 1e-7;
/// Magnitude floor applied to denominators.
pub const DENOM_FLOOR: f64 = 1e-15;
/// Re-projection margin: outputs that land on or outside the boundary are
/// pulled back to radius `(1 - BALL_MARGIN)/√c`.
pub const BALL_MARGIN: f64 = 1e-5;
/// Default number of sampled quadruples for [`gromov_delta`].
pub const DEFAULT_GROMOV_SAMPLES: usize = 10_000;

fn floor_denom(d: f64) -> f64 {
    if d.abs() < DENOM_FLOOR {
        DENOM_FLOOR.copysign(d)
    } else {
        d
    }
}

/// Positive curvature magnitude of a Poincaré ball (ball radius `1/√c`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::contract(format!(
                "curvature must be finite and positive, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn sqrt(&self) -> f64 {
        self.0.sqrt()
    }

    /// Radius of the ball, `1/√c`.
    pub fn ball_radius(&self) -> f64 {
        1.0 / self.0.sqrt()
    }

    /// True when a squared norm lies strictly inside the ball.
    pub fn contains_norm_sq(&self, norm_sq: f64) -> bool {
        norm_sq.is_finite() && self.0 * norm_sq < 1.0
    }
}

/// A point strictly inside the Poincaré ball of a given curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareVector {
    components: Array1<f64>,
    curvature: Curvature,
}

/// A point in the Klein model of the same curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct KleinVector {
    components: Array1<f64>,
    curvature: Curvature,
}

impl PoincareVector {
    /// Validates the ball invariant `c·‖u‖² < 1`.
    pub fn new(components: Array1<f64>, curvature: Curvature) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::contract("Poincaré point needs dimension >= 1"));
        }
        if components.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Poincaré point components".into()));
        }
        let norm_sq = components.dot(&components);
        if !curvature.contains_norm_sq(norm_sq) {
            return Err(Error::contract(format!(
                "point with c·‖u‖² = {} is not inside the ball",
                curvature.value() * norm_sq
            )));
        }
        Ok(PoincareVector {
            components,
            curvature,
        })
    }

    /// Builds a point, rescaling to radius `(1 − 1e−5)/√c` if the input lies
    /// on or outside the boundary.
    pub fn project(components: Array1<f64>, curvature: Curvature) -> Self {
        PoincareVector {
            components: project_into_ball(components, curvature),
            curvature,
        }
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        PoincareVector {
            components: Array1::zeros(dim),
            curvature,
        }
    }

    pub fn components(&self) -> ArrayView1<'_, f64> {
        self.components.view()
    }

    pub fn into_components(self) -> Array1<f64> {
        self.components
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(self.components.view())
    }

    fn check_compatible(&self, other: &PoincareVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        if self.curvature != other.curvature {
            return Err(Error::CurvatureMismatch {
                left: self.curvature.value(),
                right: other.curvature.value(),
            });
        }
        Ok(())
    }

    /// Möbius addition `u ⊕_c v`.
    pub fn mobius_add(&self, other: &PoincareVector) -> Result<PoincareVector> {
        self.check_compatible(other)?;
        let c = self.curvature.value();
        let uv = self.components.dot(&other.components);
        let uu = self.components.dot(&self.components);
        let vv = other.components.dot(&other.components);
        let num = &self.components * (1.0 + 2.0 * c * uv + c * vv)
            + &other.components * (1.0 - c * uu);
        let den = floor_denom(1.0 + 2.0 * c * uv + c * c * uu * vv);
        Ok(PoincareVector::project(num / den, self.curvature))
    }

    /// Möbius scalar multiplication `w ⊗_c u`; zero input or zero scalar
    /// yields the origin.
    pub fn mobius_scalar_mul(&self, w: f64) -> PoincareVector {
        let n = self.norm();
        if n == 0.0 || w == 0.0 {
            return PoincareVector::origin(self.dim(), self.curvature);
        }
        let sc = self.curvature.sqrt();
        let arg = (sc * n).min(ATANH_CLAMP);
        let t = (w * arg.atanh()).tanh();
        let scale = t / floor_denom(sc * n);
        PoincareVector::project(&self.components * scale, self.curvature)
    }

    /// Point with negated components (the Möbius additive inverse).
    pub fn neg(&self) -> PoincareVector {
        PoincareVector {
            components: -&self.components,
            curvature: self.curvature,
        }
    }

    /// Geodesic distance `D(u, v) = (2/√c)·arctanh(√c‖−u ⊕_c v‖)`.
    pub fn distance(&self, other: &PoincareVector) -> Result<f64> {
        self.check_compatible(other)?;
        let m = self.neg().mobius_add(other)?;
        let sc = self.curvature.sqrt();
        let arg = (sc * m.norm()).clamp(0.0, ATANH_CLAMP);
        Ok(2.0 / sc * arg.atanh())
    }

    /// Conversion to the Klein model: `u_K = 2u / (1 + c‖u‖²)`.
    pub fn to_klein(&self) -> KleinVector {
        let c = self.curvature.value();
        let norm_sq = self.components.dot(&self.components);
        KleinVector {
            components: &self.components * (2.0 / (1.0 + c * norm_sq)),
            curvature: self.curvature,
        }
    }

    /// Inverse of [`exp_map_origin`]: maps the point back to the tangent
    /// space at the origin.
    pub fn log_map_origin(&self) -> Array1<f64> {
        let n = self.norm();
        if n == 0.0 {
            return Array1::zeros(self.dim());
        }
        let sc = self.curvature.sqrt();
        let arg = (sc * n).min(ATANH_CLAMP);
        let scale = arg.atanh() / (sc * n);
        &self.components * scale
    }
}

impl KleinVector {
    pub fn new(components: Array1<f64>, curvature: Curvature) -> Result<Self> {
        if components.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Klein point components".into()));
        }
        let norm_sq = components.dot(&components);
        if !curvature.contains_norm_sq(norm_sq) {
            return Err(Error::contract(format!(
                "Klein point with c·‖u‖² = {} is not inside the ball",
                curvature.value() * norm_sq
            )));
        }
        Ok(KleinVector {
            components,
            curvature,
        })
    }

    pub fn components(&self) -> ArrayView1<'_, f64> {
        self.components.view()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    /// Lorentz factor `r = 1/√(1 − c‖u‖²)`, always ≥ 1.
    pub fn lorentz_factor(&self) -> f64 {
        let c = self.curvature.value();
        let norm_sq = self.components.dot(&self.components);
        1.0 / (1.0 - c * norm_sq).max(DENOM_FLOOR).sqrt()
    }

    /// Conversion back to the Poincaré ball:
    /// `u_D = u_K / (1 + √(1 − c‖u_K‖²))`.
    pub fn to_poincare(&self) -> PoincareVector {
        let c = self.curvature.value();
        let norm_sq = self.components.dot(&self.components);
        let root = (1.0 - c * norm_sq).max(0.0).sqrt();
        PoincareVector::project(&self.components / (1.0 + root), self.curvature)
    }
}

fn project_into_ball(components: Array1<f64>, curvature: Curvature) -> Array1<f64> {
    let norm_sq = components.dot(&components);
    if curvature.contains_norm_sq(norm_sq) {
        return components;
    }
    let target = (1.0 - BALL_MARGIN) * curvature.ball_radius();
    let n = norm_sq.sqrt();
    if n == 0.0 || !n.is_finite() {
        // non-finite input cannot be rescued; fall back to the origin
        return Array1::zeros(components.len());
    }
    components * (target / n)
}

/// Exponential map at the origin:
/// `E(v) = tanh(√c‖v‖) · v / (√c‖v‖)`, with `E(0) = 0`.
pub fn exp_map_origin(v: ArrayView1<f64>, curvature: Curvature) -> PoincareVector {
    let n = l2_norm(v);
    if n == 0.0 {
        return PoincareVector::origin(v.len(), curvature);
    }
    let sc = curvature.sqrt();
    let scale = (sc * n).tanh() / (sc * n);
    PoincareVector::project(&v * scale, curvature)
}

/// Hyperbolic average of a non-empty point set via the Einstein midpoint:
/// each point is converted to Klein coordinates, averaged with Lorentz-factor
/// weights, and converted back.
pub fn einstein_midpoint(points: &[PoincareVector]) -> Result<PoincareVector> {
    let first = points
        .first()
        .ok_or_else(|| Error::contract("einstein_midpoint needs at least one point"))?;
    let dim = first.dim();
    let curvature = first.curvature();
    let mut weighted = Array1::<f64>::zeros(dim);
    let mut total = 0.0;
    for p in points {
        first.check_compatible(p)?;
        let k = p.to_klein();
        let r = k.lorentz_factor();
        weighted += &(&k.components * r);
        total += r;
    }
    let mean = KleinVector {
        components: weighted / total,
        curvature,
    };
    Ok(mean.to_poincare())
}

/// Rescales `x` to norm at most `r`, preserving direction:
/// `x' = min{1, r/‖x‖} · x`.
pub fn clip_features(x: ArrayView1<f64>, r: f64) -> Result<Array1<f64>> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::contract(format!(
            "clip radius must be positive, got {r}"
        )));
    }
    let n = l2_norm(x);
    if n <= r {
        Ok(x.to_owned())
    } else {
        Ok(&x * (r / n))
    }
}

/// Euclidean distance, the default metric for [`gromov_delta`].
pub fn euclidean_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    crate::linalg::squared_distance(a, b).sqrt()
}

/// Gromov four-point hyperbolicity estimate over a point set (matrix rows).
///
/// For a quadruple the three pairwise-sum pairings are formed; the quadruple's
/// delta is half the gap between the largest and second-largest pairing, and
/// the result is the maximum over quadruples. All quadruples are enumerated
/// when `n ≤ 30`; otherwise `sample_quadruples` random quadruples are drawn
/// deterministically from `seed`.
pub fn gromov_delta<F>(
    points: &Array2<f64>,
    metric: F,
    sample_quadruples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64,
{
    let n = points.nrows();
    if n < 4 {
        return Err(Error::contract(format!(
            "gromov_delta needs at least 4 points, got {n}"
        )));
    }
    // precomputed distance matrix; n stays small at desk scale
    let mut dist = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = metric(points.row(i), points.row(j));
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    let quad_delta = |a: usize, b: usize, c: usize, d: usize| -> f64 {
        let s1 = dist[[a, b]] + dist[[c, d]];
        let s2 = dist[[a, c]] + dist[[b, d]];
        let s3 = dist[[a, d]] + dist[[b, c]];
        let mut s = [s1, s2, s3];
        s.sort_by(f64::total_cmp);
        (s[2] - s[1]) / 2.0
    };
    let mut best: f64 = 0.0;
    if n <= 30 {
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    for d in (c + 1)..n {
                        best = best.max(quad_delta(a, b, c, d));
                    }
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..sample_quadruples {
            let mut idx = [0usize; 4];
            let mut filled = 0;
            while filled < 4 {
                let cand = rng.random_range(0..n);
                if !idx[..filled].contains(&cand) {
                    idx[filled] = cand;
                    filled += 1;
                }
            }
            best = best.max(quad_delta(idx[0], idx[1], idx[2], idx[3]));
        }
    }
    Ok(best)
}
