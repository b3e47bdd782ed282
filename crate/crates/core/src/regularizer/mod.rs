//! Policy regularizers `φ` and the quantities derived from them.
//!
//! A regularizer adds the bonus `λ φ(π(a|s))` to every reward. Admissible
//! functions on `(0, 1]` are non-increasing, vanish at 1, and make
//! `f_φ(x) = x φ(x)` strictly concave; in addition `x φ(x) → 0` as `x → 0+`.
//! Under those conditions `f_φ'` is strictly decreasing and has an inverse
//! `g_φ`, which maps a scaled Q-value gap to an action probability.
//!
//! Five basic families are provided (Shannon, Tsallis, cosine, sine,
//! exponential) together with the two closure operations that preserve
//! admissibility: non-negative weighted sums and pointwise minima. Every
//! constructor audits the admissibility conditions numerically and rejects
//! parameter choices that fail them.

mod parse;

use std::f64::consts::{E, FRAC_PI_2};
use std::fmt;

use thiserror::Error;

use crate::root::{self, Stop};

pub use parse::ParseError;

/// Evaluations of `φ'` closer than this to a branch crossing of a `min`
/// regularizer are rejected as non-differentiable.
pub const KINK_EXCLUSION: f64 = 1e-9;

/// Lower and upper end of the open bracket used when inverting `f_φ'`.
pub const INVERSE_EPS: f64 = 1e-12;

/// Bracket width at which the reference bisection for `g_φ` stops.
pub const INVERSE_WIDTH: f64 = 1e-12;

const CROSSING_WIDTH: f64 = 1e-12;
const AUDIT_GRID: usize = 400;

/// Names of the seven regularizers used throughout the experiments.
pub const PRESET_NAMES: [&str; 7] = ["shannon", "tsallis", "cos", "exp", "min", "poly", "mix"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizerError {
    #[error("{op}: argument {x} outside its domain {domain}")]
    Domain {
        op: &'static str,
        x: f64,
        domain: &'static str,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("regularizer `{spec}` violates admissibility: {reason}")]
    NotAdmissible { spec: String, reason: String },
    #[error("min regularizer is not differentiable at {x} (branch crossing at {crossing})")]
    NonDifferentiable { x: f64, crossing: f64 },
    #[error("not a probability vector: {0}")]
    NotADistribution(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub type Result<T> = std::result::Result<T, RegularizerError>;

/// The tagged description of a regularizer.
#[derive(Debug, Clone, PartialEq)]
pub enum RegularizerKind {
    /// `-log x`
    Shannon,
    /// `k/(q-1) (1 - x^(q-1))`
    Tsallis { k: f64, q: f64 },
    /// `cos(θx) - cos θ`
    Cosine { theta: f64 },
    /// `sin θ - sin(θx)`
    Sine { theta: f64 },
    /// `q - x^k q^x`
    Exponential { k: f64, q: f64 },
    /// `Σ wᵢ φᵢ`
    WeightedSum(Vec<(f64, Regularizer)>),
    /// `min{φ_a, φ_b}`
    Min(Box<Regularizer>, Box<Regularizer>),
}

/// A validated regularizer. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    kind: RegularizerKind,
    /// Sign changes of `φ_a - φ_b` on (0,1); only populated for `Min`.
    crossings: Vec<f64>,
    boundary: FPrimeBoundary,
}

/// One-sided limits of `f_φ'` at the ends of (0,1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FPrimeBoundary {
    /// `lim_{x→0+} f_φ'(x)`; `+∞` when the regularizer cannot produce zeros.
    pub at_zero: f64,
    /// `lim_{x→1-} f_φ'(x)`.
    pub at_one: f64,
}

impl Regularizer {
    pub fn shannon() -> Self {
        Self::build(RegularizerKind::Shannon).expect("shannon is admissible")
    }

    pub fn tsallis(k: f64, q: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid(format!("tsallis k must be positive, got {k}")));
        }
        if !(q.is_finite() && q > 0.0) || q == 1.0 {
            return Err(invalid(format!("tsallis q must be positive and != 1, got {q}")));
        }
        Self::build(RegularizerKind::Tsallis { k, q })
    }

    pub fn cosine(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Self::build(RegularizerKind::Cosine { theta })
    }

    /// `sin θ − sin(θx)`. Strict concavity of `x φ(x)` fails for θ above
    /// roughly 1.0769 (where `θ tan θ = 2`), so such θ are rejected by the
    /// admissibility check even though they lie in `(0, π/2]`.
    pub fn sine(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Self::build(RegularizerKind::Sine { theta })
    }

    pub fn exponential(k: f64, q: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(invalid(format!("exp k must be >= 0, got {k}")));
        }
        if !(q.is_finite() && q >= 1.0) {
            return Err(invalid(format!("exp q must be >= 1, got {q}")));
        }
        Self::build(RegularizerKind::Exponential { k, q })
    }

    /// Non-negative combination `Σ wᵢ φᵢ`. Needs at least one positive weight.
    pub fn combine_sum(terms: Vec<(f64, Regularizer)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(invalid("sum needs at least one term".into()));
        }
        for (w, _) in &terms {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(invalid(format!("sum weights must be finite and >= 0, got {w}")));
            }
        }
        if terms.iter().all(|(w, _)| *w == 0.0) {
            return Err(invalid("sum needs a strictly positive weight".into()));
        }
        Self::build(RegularizerKind::WeightedSum(terms))
    }

    /// Pointwise minimum. The result is generally not differentiable where
    /// the two branches cross; those points are located here and exposed
    /// through [`Regularizer::crossings`].
    pub fn combine_min(a: Regularizer, b: Regularizer) -> Result<Self> {
        Self::build(RegularizerKind::Min(Box::new(a), Box::new(b)))
    }

    /// One of the seven named regularizers (see [`PRESET_NAMES`]).
    pub fn preset(name: &str) -> Option<Self> {
        let r = match name {
            "shannon" => Self::shannon(),
            "tsallis" => Self::tsallis(0.5, 2.0).ok()?,
            "cos" => Self::cosine(FRAC_PI_2).ok()?,
            "exp" => Self::exponential(0.0, E).ok()?,
            // min{-log x, 2(1-x)}
            "min" => Self::combine_min(Self::shannon(), Self::tsallis(2.0, 2.0).ok()?).ok()?,
            // ½(1-x) + (1-x²)
            "poly" => Self::combine_sum(vec![
                (1.0, Self::tsallis(0.5, 2.0).ok()?),
                (1.0, Self::tsallis(2.0, 3.0).ok()?),
            ])
            .ok()?,
            // -log x + ½(1-x)
            "mix" => Self::combine_sum(vec![(1.0, Self::shannon()), (1.0, Self::tsallis(0.5, 2.0).ok()?)]).ok()?,
            _ => return None,
        };
        Some(r)
    }

    /// All seven presets, in [`PRESET_NAMES`] order.
    pub fn presets() -> Vec<(&'static str, Self)> {
        PRESET_NAMES
            .iter()
            .map(|n| (*n, Self::preset(n).expect("presets are admissible")))
            .collect()
    }

    fn build(kind: RegularizerKind) -> Result<Self> {
        let crossings = match &kind {
            RegularizerKind::Min(a, b) => find_crossings(a, b),
            _ => Vec::new(),
        };
        let mut reg = Regularizer {
            kind,
            crossings,
            boundary: FPrimeBoundary {
                at_zero: f64::NAN,
                at_one: f64::NAN,
            },
        };
        reg.boundary = reg.compute_boundary();
        reg.audit()?;
        Ok(reg)
    }

    pub fn kind(&self) -> &RegularizerKind {
        &self.kind
    }

    /// Branch crossings of a `min` regularizer on (0,1), ascending.
    pub fn crossings(&self) -> &[f64] {
        &self.crossings
    }

    /// True when the sign pattern of `φ_a − φ_b` changes more than once.
    pub fn has_multiple_crossings(&self) -> bool {
        self.crossings.len() > 1
    }

    /// `φ(x)` for `x ∈ (0, 1]`.
    pub fn phi(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x <= 1.0) {
            return Err(RegularizerError::Domain {
                op: "phi",
                x,
                domain: "(0, 1]",
            });
        }
        Ok(self.phi_raw(x))
    }

    /// `φ'(x)` for `x ∈ (0, 1)`, away from any branch crossing.
    pub fn phi_prime(&self, x: f64) -> Result<f64> {
        self.check_open(x, "phi_prime")?;
        Ok(self.dphi_raw(x))
    }

    /// `f_φ'(x) = φ(x) + x φ'(x)` for `x ∈ (0, 1)`.
    pub fn f_prime(&self, x: f64) -> Result<f64> {
        self.check_open(x, "f_prime")?;
        Ok(self.fp_raw(x))
    }

    pub fn f_prime_boundary(&self) -> FPrimeBoundary {
        self.boundary
    }

    /// Whether the optimal policy can have zero entries for some λ, i.e.
    /// whether `f_φ'(0+)` is finite.
    pub fn induces_sparsity(&self) -> bool {
        self.boundary.at_zero.is_finite()
    }

    /// `g_φ(y)`, the inverse of `f_φ'` clamped to `[0, 1]`.
    ///
    /// Closed forms are used for Shannon, for sums of Tsallis terms with
    /// `q ∈ {2, 3}`, and for minima whose branches have closed forms;
    /// everything else goes through a bracketed Newton solve on `f_φ'`.
    pub fn g(&self, y: f64) -> f64 {
        self.g_from(y, f64::NAN)
    }

    /// [`Regularizer::g`] with a starting point for the Newton solve, e.g.
    /// the answer for a nearby `y`. Ignored by closed forms and when not in
    /// `(0, 1)`.
    pub fn g_from(&self, y: f64, guess: f64) -> f64 {
        let b = self.boundary;
        if y >= b.at_zero {
            return 0.0;
        }
        if y <= b.at_one {
            return 1.0;
        }
        match &self.kind {
            RegularizerKind::Shannon => return (-(1.0 + y)).exp().min(1.0),
            RegularizerKind::Tsallis { k, q } if *q == 2.0 => return ((k - y) / (2.0 * k)).clamp(0.0, 1.0),
            RegularizerKind::Min(a, b) if self.crossings.len() <= 1 => return self.g_min(a, b, y, guess),
            _ => {}
        }
        if let Some((c0, c1, c2)) = self.quadratic_f_prime() {
            return solve_quadratic_f_prime(c0, c1, c2, y);
        }
        self.g_newton(y, guess)
    }

    fn g_newton(&self, y: f64, guess: f64) -> f64 {
        let (lo, hi) = self.inverse_bracket(y);
        if lo == 0.0 && hi < 1.0 {
            return 0.0;
        }
        let stop = Stop {
            abs_width: 0.0,
            rel_width: 4e-16,
            residual: 0.0,
        };
        root::newton_decreasing_from(|x| self.fp_fpp_raw(x), lo, hi, guess, y, stop)
    }

    /// Inverse for a minimum with at most one crossing `c`: `f_φ'` is the
    /// left branch's on `(0, c)` and the right branch's on `(c, 1)`, with a
    /// downward jump at `c` over which `g_φ` is flat.
    fn g_min(&self, a: &Regularizer, b: &Regularizer, y: f64, guess: f64) -> f64 {
        let Some(&c) = self.crossings.first() else {
            let mid = 0.5;
            let branch = if a.phi_raw(mid) <= b.phi_raw(mid) { a } else { b };
            return branch.g_from(y, guess);
        };
        let left_mid = 0.5 * c;
        let right_mid = 0.5 * (1.0 + c);
        let left = if a.phi_raw(left_mid) <= b.phi_raw(left_mid) { a } else { b };
        let right = if a.phi_raw(right_mid) <= b.phi_raw(right_mid) { a } else { b };
        if y >= left.fp_raw(c) {
            left.g_from(y, guess).min(c)
        } else if y <= right.fp_raw(c) {
            right.g_from(y, guess).max(c)
        } else {
            c
        }
    }

    /// `(c0, c1, c2)` with `f_φ'(x) = c0 − c1 x − c2 x²` when the regularizer
    /// is a non-negative combination of Tsallis terms with `q ∈ {2, 3}`.
    fn quadratic_f_prime(&self) -> Option<(f64, f64, f64)> {
        match &self.kind {
            RegularizerKind::Tsallis { k, q } if *q == 2.0 => Some((*k, 2.0 * k, 0.0)),
            RegularizerKind::Tsallis { k, q } if *q == 3.0 => Some((0.5 * k, 0.0, 1.5 * k)),
            RegularizerKind::WeightedSum(terms) => terms.iter().filter(|(w, _)| *w > 0.0).try_fold(
                (0.0, 0.0, 0.0),
                |acc, (w, r)| {
                    let (c0, c1, c2) = r.quadratic_f_prime()?;
                    Some((acc.0 + w * c0, acc.1 + w * c1, acc.2 + w * c2))
                },
            ),
            _ => None,
        }
    }

    /// Reference inversion of `f_φ'` by plain bisection on
    /// `(ε, 1 − ε)`, stopping at bracket width [`INVERSE_WIDTH`]. Slower than
    /// [`Regularizer::g`] and used to cross-check it.
    pub fn g_bisect(&self, y: f64) -> f64 {
        let b = self.boundary;
        if y >= b.at_zero {
            return 0.0;
        }
        if y <= b.at_one {
            return 1.0;
        }
        let lo = INVERSE_EPS;
        let hi = 1.0 - INVERSE_EPS;
        if self.fp_raw(lo) <= y {
            return lo;
        }
        if self.fp_raw(hi) >= y {
            return hi;
        }
        root::bisect_decreasing(|x| self.fp_raw(x), lo, hi, y, INVERSE_WIDTH)
    }

    /// Derivative of `g_φ` at `y`, i.e. `1 / f_φ''(g_φ(y))`; zero where `g_φ`
    /// is clamped.
    pub(crate) fn g_and_slope(&self, y: f64, guess: f64) -> (f64, f64) {
        let x = self.g_from(y, guess);
        if x <= 0.0 || x >= 1.0 {
            return (x, 0.0);
        }
        let d = self.fpp_raw(x);
        let slope = if d < 0.0 && d.is_finite() { 1.0 / d } else { 0.0 };
        (x, slope)
    }

    /// `H_φ(p) = Σ p(a) φ(p(a))` with `0·φ(0) = 0`.
    pub fn entropy_like(&self, p: &[f64]) -> Result<f64> {
        check_distribution(p, 1e-9)?;
        Ok(p.iter().filter(|&&v| v > 0.0).map(|&v| v * self.phi_raw(v.min(1.0))).sum())
    }

    /// Interval `[lo, hi]` of supergradients of `f_φ` at `x`. A single point
    /// except at a crossing of a `min` regularizer.
    pub(crate) fn f_prime_interval(&self, x: f64) -> (f64, f64) {
        self.interval(x, Self::fp_raw)
    }

    /// Interval of one-sided derivatives of `φ` at `x`.
    pub(crate) fn phi_prime_interval(&self, x: f64) -> (f64, f64) {
        self.interval(x, Self::dphi_raw)
    }

    fn interval(&self, x: f64, leaf: fn(&Self, f64) -> f64) -> (f64, f64) {
        match &self.kind {
            RegularizerKind::WeightedSum(terms) => terms
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, r)| {
                    let (lo, hi) = r.interval(x, leaf);
                    (w * lo, w * hi)
                })
                .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1)),
            RegularizerKind::Min(a, b) => {
                if self.crossings.iter().any(|c| (x - c).abs() < KINK_EXCLUSION) {
                    let (al, ah) = a.interval(x, leaf);
                    let (bl, bh) = b.interval(x, leaf);
                    (al.min(bl), ah.max(bh))
                } else {
                    self.active_branch(x).interval(x, leaf)
                }
            }
            _ => {
                let v = leaf(self, x);
                (v, v)
            }
        }
    }

    fn check_open(&self, x: f64, op: &'static str) -> Result<()> {
        if !(x > 0.0 && x < 1.0) {
            return Err(RegularizerError::Domain {
                op,
                x,
                domain: "(0, 1)",
            });
        }
        if let Some(c) = self.nearby_kink(x) {
            return Err(RegularizerError::NonDifferentiable { x, crossing: c });
        }
        Ok(())
    }

    fn nearby_kink(&self, x: f64) -> Option<f64> {
        match &self.kind {
            RegularizerKind::WeightedSum(terms) => terms
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .find_map(|(_, r)| r.nearby_kink(x)),
            RegularizerKind::Min(a, b) => self
                .crossings
                .iter()
                .copied()
                .find(|c| (x - c).abs() < KINK_EXCLUSION)
                .or_else(|| self.active_branch(x).nearby_kink(x))
                .or_else(|| {
                    // a kink of the inactive branch is invisible, but one of
                    // the active branch at a point where both agree is not
                    let _ = (a, b);
                    None
                }),
            _ => None,
        }
    }

    fn active_branch(&self, x: f64) -> &Regularizer {
        match &self.kind {
            RegularizerKind::Min(a, b) => {
                if a.phi_raw(x) <= b.phi_raw(x) {
                    a
                } else {
                    b
                }
            }
            _ => self,
        }
    }

    pub(crate) fn phi_raw(&self, x: f64) -> f64 {
        match &self.kind {
            RegularizerKind::Shannon => 0.0 - x.ln(),
            RegularizerKind::Tsallis { k, q } => k / (q - 1.0) * (1.0 - x.powf(q - 1.0)),
            RegularizerKind::Cosine { theta } => (theta * x).cos() - theta.cos(),
            RegularizerKind::Sine { theta } => theta.sin() - (theta * x).sin(),
            RegularizerKind::Exponential { k, q } => q - x.powf(*k) * q.powf(x),
            RegularizerKind::WeightedSum(terms) => terms
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, r)| w * r.phi_raw(x))
                .sum(),
            RegularizerKind::Min(a, b) => a.phi_raw(x).min(b.phi_raw(x)),
        }
    }

    pub(crate) fn dphi_raw(&self, x: f64) -> f64 {
        match &self.kind {
            RegularizerKind::Shannon => -1.0 / x,
            RegularizerKind::Tsallis { k, q } => -k * x.powf(q - 2.0),
            RegularizerKind::Cosine { theta } => -theta * (theta * x).sin(),
            RegularizerKind::Sine { theta } => -theta * (theta * x).cos(),
            RegularizerKind::Exponential { k, q } => {
                let lq = q.ln();
                -q.powf(x) * x.powf(k - 1.0) * (k + x * lq)
            }
            RegularizerKind::WeightedSum(terms) => terms
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, r)| w * r.dphi_raw(x))
                .sum(),
            RegularizerKind::Min(..) => self.active_branch(x).dphi_raw(x),
        }
    }

    pub(crate) fn fp_raw(&self, x: f64) -> f64 {
        match &self.kind {
            RegularizerKind::Shannon => -x.ln() - 1.0,
            RegularizerKind::Tsallis { k, q } => k / (q - 1.0) - k * q / (q - 1.0) * x.powf(q - 1.0),
            RegularizerKind::Cosine { theta } => {
                let t = theta * x;
                t.cos() - theta.cos() - t * t.sin()
            }
            RegularizerKind::Sine { theta } => {
                let t = theta * x;
                theta.sin() - t.sin() - t * t.cos()
            }
            RegularizerKind::Exponential { k, q } => q - x.powf(*k) * q.powf(x) * (1.0 + k + x * q.ln()),
            RegularizerKind::WeightedSum(terms) => terms
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, r)| w * r.fp_raw(x))
                .sum(),
            RegularizerKind::Min(..) => self.active_branch(x).fp_raw(x),
        }
    }

    /// `(f_φ'(x), f_φ''(x))`, sharing the expensive sub-expressions.
    pub(crate) fn fp_fpp_raw(&self, x: f64) -> (f64, f64) {
        match &self.kind {
            RegularizerKind::Cosine { theta } => {
                let t = theta * x;
                let (s, c) = t.sin_cos();
                (c - theta.cos() - t * s, -2.0 * theta * s - theta * t * c)
            }
            RegularizerKind::Sine { theta } => {
                let t = theta * x;
                let (s, c) = t.sin_cos();
                (theta.sin() - s - t * c, -2.0 * theta * c + theta * t * s)
            }
            RegularizerKind::Exponential { k, q } => {
                let lq = q.ln();
                let a = k + x * lq;
                let qx = (x * lq).exp();
                let xk = if *k == 0.0 { 1.0 } else { x.powf(*k) };
                let xk1 = if *k == 0.0 { 0.0 } else { x.powf(k - 1.0) };
                (q - xk * qx * (1.0 + a), -qx * (xk1 * a * (1.0 + a) + xk * lq))
            }
            RegularizerKind::WeightedSum(terms) => terms.iter().filter(|(w, _)| *w > 0.0).fold((0.0, 0.0), |acc, (w, r)| {
                let (a, b) = r.fp_fpp_raw(x);
                (acc.0 + w * a, acc.1 + w * b)
            }),
            RegularizerKind::Min(..) => self.active_branch(x).fp_fpp_raw(x),
            _ => (self.fp_raw(x), self.fpp_raw(x)),
        }
    }

    /// `f_φ''(x)`, hand-derived per family.
    pub(crate) fn fpp_raw(&self, x: f64) -> f64 {
        match &self.kind {
            RegularizerKind::Shannon => -1.0 / x,
            RegularizerKind::Tsallis { k, q } => -k * q * x.powf(q - 2.0),
            RegularizerKind::Cosine { theta } => {
                let t = theta * x;
                -2.0 * theta * t.sin() - theta * t * t.cos()
            }
            RegularizerKind::Sine { theta } => {
                let t = theta * x;
                -2.0 * theta * t.cos() + theta * t * t.sin()
            }
            RegularizerKind::Exponential { k, q } => {
                let lq = q.ln();
                let a = k + x * lq;
                -q.powf(x) * (x.powf(k - 1.0) * a * (1.0 + a) + x.powf(*k) * lq)
            }
            RegularizerKind::WeightedSum(terms) => terms
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, r)| w * r.fpp_raw(x))
                .sum(),
            RegularizerKind::Min(..) => self.active_branch(x).fpp_raw(x),
        }
    }

    fn compute_boundary(&self) -> FPrimeBoundary {
        match &self.kind {
            RegularizerKind::Shannon => FPrimeBoundary {
                at_zero: f64::INFINITY,
                at_one: -1.0,
            },
            RegularizerKind::Tsallis { k, q } => FPrimeBoundary {
                at_zero: if *q > 1.0 { k / (q - 1.0) } else { f64::INFINITY },
                at_one: -k,
            },
            RegularizerKind::Cosine { theta } => FPrimeBoundary {
                at_zero: 1.0 - theta.cos(),
                at_one: -theta * theta.sin(),
            },
            RegularizerKind::Sine { theta } => FPrimeBoundary {
                at_zero: theta.sin(),
                at_one: -theta * theta.cos(),
            },
            RegularizerKind::Exponential { k, q } => FPrimeBoundary {
                at_zero: if *k > 0.0 { *q } else { q - 1.0 },
                at_one: -q * (k + q.ln()),
            },
            RegularizerKind::WeightedSum(terms) => {
                terms
                    .iter()
                    .filter(|(w, _)| *w > 0.0)
                    .fold(FPrimeBoundary { at_zero: 0.0, at_one: 0.0 }, |acc, (w, r)| FPrimeBoundary {
                        at_zero: acc.at_zero + w * r.boundary.at_zero,
                        at_one: acc.at_one + w * r.boundary.at_one,
                    })
            }
            RegularizerKind::Min(a, b) => {
                let near_zero = 1e-9;
                let near_one = 1.0 - 1e-6;
                let zero_branch = if a.phi_raw(near_zero) <= b.phi_raw(near_zero) { a } else { b };
                let one_branch = if a.phi_raw(near_one) <= b.phi_raw(near_one) { a } else { b };
                FPrimeBoundary {
                    at_zero: zero_branch.boundary.at_zero,
                    at_one: one_branch.boundary.at_one,
                }
            }
        }
    }

    /// Bracket `[lo, hi]` with `f_φ'(lo) > y > f_φ'(hi)`, limits understood
    /// at the ends. `(0, lo)` with `lo < 1` signals that the root lies below the
    /// smallest positive double probed.
    fn inverse_bracket(&self, y: f64) -> (f64, f64) {
        // with a finite limit at 0+ the open interval (0, 1) already brackets
        if self.boundary.at_zero.is_finite() {
            return (0.0, 1.0);
        }
        let mut lo = INVERSE_EPS;
        while self.fp_raw(lo) <= y {
            if lo < 1e-300 {
                return (0.0, lo);
            }
            lo *= 1e-8;
        }
        (lo, 1.0)
    }

    /// Numerical admissibility audit on an interior grid.
    fn audit(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(RegularizerError::NotAdmissible {
                spec: self.to_string(),
                reason,
            })
        };
        if self.phi_raw(1.0) != 0.0 {
            return fail(format!("phi(1) = {} != 0", self.phi_raw(1.0)));
        }
        let n = AUDIT_GRID;
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let phis: Vec<f64> = xs.iter().map(|&x| self.phi_raw(x)).collect();
        if phis.iter().any(|v| !v.is_finite()) {
            return fail("phi is not finite on (0,1]".into());
        }
        for i in 0..n - 1 {
            if phis[i + 1] > phis[i] + 1e-13 * (1.0 + phis[i].abs()) {
                return fail(format!("phi increases near x = {}", xs[i]));
            }
        }
        for i in 1..n - 1 {
            let f = |j: usize| xs[j] * phis[j];
            let second = f(i - 1) - 2.0 * f(i) + f(i + 1);
            if !(second < 0.0) {
                return fail(format!("x*phi(x) not strictly concave near x = {}", xs[i]));
            }
        }
        let interior: Vec<f64> = xs[..n - 1].to_vec();
        for w in interior.windows(2) {
            if !(self.fp_raw(w[1]) < self.fp_raw(w[0])) {
                return fail(format!("f' not strictly decreasing near x = {}", w[0]));
            }
        }
        let tiny = 1e-300;
        if !(tiny * self.phi_raw(tiny)).is_finite() || (tiny * self.phi_raw(tiny)).abs() > 1e-6 {
            return fail("x*phi(x) does not vanish at 0+".into());
        }
        Ok(())
    }
}

/// Root in `[0, 1]` of `c0 − c1 x − c2 x² = y`, using the cancellation-free
/// form of the quadratic formula.
fn solve_quadratic_f_prime(c0: f64, c1: f64, c2: f64, y: f64) -> f64 {
    let d = c0 - y;
    let x = if c2 == 0.0 {
        d / c1
    } else {
        // x = (−c1 + √(c1² + 4 c2 d)) / (2 c2) = 2d / (c1 + √(c1² + 4 c2 d))
        2.0 * d / (c1 + (c1 * c1 + 4.0 * c2 * d).sqrt())
    };
    x.clamp(0.0, 1.0)
}

fn invalid(msg: String) -> RegularizerError {
    RegularizerError::InvalidParameter(msg)
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 && theta <= FRAC_PI_2 {
        Ok(())
    } else {
        Err(invalid(format!("theta must lie in (0, pi/2], got {theta}")))
    }
}

pub(crate) fn check_distribution(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(RegularizerError::NotADistribution("empty vector".into()));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < -tol) {
        return Err(RegularizerError::NotADistribution(format!("entry {v}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(RegularizerError::NotADistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// Sign changes of `φ_a − φ_b` on (0,1), each refined by bisection.
fn find_crossings(a: &Regularizer, b: &Regularizer) -> Vec<f64> {
    let diff = |x: f64| {
        let (pa, pb) = (a.phi_raw(x), b.phi_raw(x));
        let d = pa - pb;
        if d.abs() <= 1e-14 * (1.0 + pa.abs().max(pb.abs())) {
            0.0
        } else {
            d
        }
    };
    // log-spaced near 0, linear elsewhere
    let mut grid: Vec<f64> = (0..=60).map(|i| 10f64.powf(-12.0 + i as f64 * 10.0 / 60.0)).collect();
    grid.extend((1..2000).map(|i| 0.01 + 0.98 * i as f64 / 2000.0));
    grid.extend((1..=40).map(|i| 1.0 - 10f64.powf(-2.0 - i as f64 * 6.0 / 40.0)));
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut out = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    for &x in &grid {
        let d = diff(x);
        if d == 0.0 {
            continue;
        }
        if let Some((xl, dl)) = last {
            if dl.signum() != d.signum() {
                let sign = dl.signum();
                let c = root::bisect_decreasing(|t| sign * diff(t), xl, x, 0.0, CROSSING_WIDTH);
                out.push(c);
            }
        }
        last = Some((x, d));
    }
    out
}

impl fmt::Display for Regularizer {
    /// Canonical string in the regularizer grammar; parses back to an equal value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            RegularizerKind::Shannon => write!(f, "shannon"),
            RegularizerKind::Tsallis { k, q } => write!(f, "tsallis:k={k:?},q={q:?}"),
            RegularizerKind::Cosine { theta } => write!(f, "cos:theta={theta:?}"),
            RegularizerKind::Sine { theta } => write!(f, "sin:theta={theta:?}"),
            RegularizerKind::Exponential { k, q } => write!(f, "exp:k={k:?},q={q:?}"),
            RegularizerKind::WeightedSum(terms) => {
                write!(f, "sum(")?;
                for (i, (w, r)) in terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, "+")?;
                    }
                    write!(f, "{w:?}*{r}")?;
                }
                write!(f, ")")
            }
            RegularizerKind::Min(a, b) => write!(f, "min({a},{b})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tsallis_half() -> Regularizer {
        Regularizer::tsallis(0.5, 2.0).unwrap()
    }

    #[test]
    fn phi_examples() {
        let t = tsallis_half();
        assert_eq!(t.phi(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(t.phi(0.5).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(Regularizer::shannon().phi((-1f64).exp()).unwrap(), 1.0, epsilon = 1e-15);

        let m = Regularizer::combine_min(Regularizer::shannon(), Regularizer::tsallis(2.0, 2.0).unwrap()).unwrap();
        // -log 0.9 = 0.105360..., 2(1-0.9) = 0.2
        assert_abs_diff_eq!(m.phi(0.9).unwrap(), -(0.9f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(m.phi(0.9).unwrap(), 0.10536051565782628, epsilon = 1e-12);
    }

    #[test]
    fn phi_rejects_out_of_domain() {
        let s = Regularizer::shannon();
        assert!(matches!(s.phi(0.0), Err(RegularizerError::Domain { .. })));
        assert!(matches!(s.phi(1.5), Err(RegularizerError::Domain { .. })));
        assert!(matches!(s.phi(f64::NAN), Err(RegularizerError::Domain { .. })));
        assert!(matches!(s.phi_prime(1.0), Err(RegularizerError::Domain { .. })));
    }

    #[test]
    fn phi_prime_examples() {
        assert_abs_diff_eq!(Regularizer::shannon().phi_prime(0.5).unwrap(), -2.0, epsilon = 1e-15);
        for x in [0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(tsallis_half().phi_prime(x).unwrap(), -0.5, epsilon = 1e-15);
        }
        let c = Regularizer::cosine(FRAC_PI_2).unwrap();
        // -(π/2) sin(π/4)
        assert_abs_diff_eq!(c.phi_prime(0.5).unwrap(), -1.1107207345395915, epsilon = 1e-12);
    }

    #[test]
    fn f_prime_examples() {
        let s = Regularizer::shannon();
        assert_abs_diff_eq!(s.f_prime(1.0 - 1e-12).unwrap(), -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tsallis_half().f_prime(0.25).unwrap(), 0.25, epsilon = 1e-15);
        let e = Regularizer::exponential(0.0, E).unwrap();
        assert_abs_diff_eq!(e.f_prime(1e-12).unwrap(), E - 1.0, epsilon = 1e-9);
    }

    #[test]
    fn boundary_examples() {
        let b = Regularizer::shannon().f_prime_boundary();
        assert_eq!(b.at_zero, f64::INFINITY);
        assert_eq!(b.at_one, -1.0);
        let b = tsallis_half().f_prime_boundary();
        assert_eq!((b.at_zero, b.at_one), (0.5, -0.5));
        let sum = Regularizer::combine_sum(vec![(1.0, tsallis_half()), (1.0, Regularizer::shannon())]).unwrap();
        let b = sum.f_prime_boundary();
        assert_eq!(b.at_zero, f64::INFINITY);
        assert_abs_diff_eq!(b.at_one, -1.5, epsilon = 1e-15);
        let m = Regularizer::combine_min(Regularizer::shannon(), tsallis_half()).unwrap();
        assert_eq!(m.f_prime_boundary().at_zero, 0.5);
    }

    #[test]
    fn boundary_matches_numeric_limits() {
        for (name, r) in Regularizer::presets() {
            let b = r.f_prime_boundary();
            let near_one = r.fp_raw(1.0 - 1e-9);
            assert_abs_diff_eq!(near_one, b.at_one, epsilon = 1e-6);
            let near_zero = r.fp_raw(1e-12);
            if b.at_zero.is_finite() {
                assert!((near_zero - b.at_zero).abs() < 1e-5, "{name}: {near_zero} vs {}", b.at_zero);
            } else {
                assert!(near_zero > 20.0, "{name}");
            }
        }
    }

    #[test]
    fn g_examples() {
        assert_abs_diff_eq!(tsallis_half().g(0.0), 0.5, epsilon = 1e-15);
        assert_eq!(Regularizer::shannon().g(-1.0), 1.0);
        let c = Regularizer::cosine(FRAC_PI_2).unwrap();
        assert_eq!(c.g(1.0), 0.0);
        assert_eq!(c.g_bisect(1.0), 0.0);
        // just inside the boundary the bisection oracle agrees
        assert_abs_diff_eq!(c.g(0.999), c.g_bisect(0.999), epsilon = 1e-11);
    }

    #[test]
    fn closed_forms_agree_with_bisection() {
        for r in [Regularizer::shannon(), tsallis_half(), Regularizer::tsallis(1.3, 2.0).unwrap()] {
            for i in 0..200 {
                let y = -3.0 + 6.0 * i as f64 / 199.0;
                let a = r.g(y);
                let b = r.g_bisect(y);
                // bisection cannot resolve below its ε bracket
                if a > 2.0 * INVERSE_EPS && a < 1.0 - 2.0 * INVERSE_EPS {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn newton_path_agrees_with_bisection() {
        for (name, r) in Regularizer::presets() {
            for i in 0..300 {
                let y = -4.0 + 8.0 * i as f64 / 299.0;
                let a = r.g(y);
                let b = r.g_bisect(y);
                if a > 2.0 * INVERSE_EPS {
                    assert!((a - b).abs() < 1e-11, "{name} y={y}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn g_is_tiny_but_positive_for_unbounded_f_prime() {
        let s = Regularizer::shannon();
        let x = s.g(400.0);
        assert!(x > 0.0);
        assert_abs_diff_eq!(x.ln(), -401.0, epsilon = 1e-9);
        let mix = Regularizer::preset("mix").unwrap();
        let x = mix.g(400.0);
        assert!(x > 0.0 && x < 1e-150);
        assert_abs_diff_eq!(mix.fp_raw(x), 400.0, epsilon = 1e-9);
    }

    #[test]
    fn combine_sum_examples() {
        let poly = Regularizer::preset("poly").unwrap();
        for x in [0.1, 0.4, 0.8] {
            assert_abs_diff_eq!(poly.phi(x).unwrap(), 0.5 * (1.0 - x) + (1.0 - x * x), epsilon = 1e-14);
        }
        let ident = Regularizer::combine_sum(vec![(1.0, Regularizer::shannon())]).unwrap();
        for x in [0.01, 0.3, 0.99] {
            assert_eq!(ident.phi(x).unwrap(), Regularizer::shannon().phi(x).unwrap());
        }
        let mix = Regularizer::preset("mix").unwrap();
        assert_eq!(mix.f_prime_boundary().at_zero, f64::INFINITY);
        assert!(Regularizer::combine_sum(vec![(0.0, Regularizer::shannon())]).is_err());
        assert!(Regularizer::combine_sum(vec![]).is_err());
        assert!(Regularizer::combine_sum(vec![(-1.0, Regularizer::shannon())]).is_err());
    }

    #[test]
    fn combine_min_examples() {
        let m = Regularizer::preset("min").unwrap();
        assert_eq!(m.crossings().len(), 1);
        let c = m.crossings()[0];
        assert_abs_diff_eq!(-c.ln(), 2.0 * (1.0 - c), epsilon = 1e-11);
        assert!(c > 0.1 && c < 0.3);
        assert!(matches!(m.phi_prime(c), Err(RegularizerError::NonDifferentiable { .. })));
        assert!(matches!(m.f_prime(c + 5e-10), Err(RegularizerError::NonDifferentiable { .. })));
        assert!(m.phi_prime(c + 1e-6).is_ok());

        let same = Regularizer::combine_min(Regularizer::shannon(), Regularizer::shannon()).unwrap();
        assert!(same.crossings().is_empty());
        for x in [0.05, 0.5, 0.95] {
            assert_eq!(same.phi(x).unwrap(), Regularizer::shannon().phi(x).unwrap());
            assert!(same.phi_prime(x).is_ok());
        }
    }

    #[test]
    fn min_g_is_flat_at_the_kink() {
        let m = Regularizer::preset("min").unwrap();
        let c = m.crossings()[0];
        let (right, left) = m.f_prime_interval(c);
        assert!(left > right + 0.1);
        let mid = 0.5 * (left + right);
        assert_abs_diff_eq!(m.g(mid), c, epsilon = 1e-11);
        assert_abs_diff_eq!(m.g_bisect(mid), c, epsilon = 1e-11);
    }

    #[test]
    fn sparsity_classification() {
        assert!(!Regularizer::shannon().induces_sparsity());
        assert!(Regularizer::tsallis(0.7, 1.5).unwrap().induces_sparsity());
        assert!(Regularizer::tsallis(0.7, 3.0).unwrap().induces_sparsity());
        assert!(!Regularizer::tsallis(0.7, 0.5).unwrap().induces_sparsity());
        let expected = [false, true, true, true, true, true, false];
        for ((name, r), want) in Regularizer::presets().into_iter().zip(expected) {
            assert_eq!(r.induces_sparsity(), want, "{name}");
        }
    }

    #[test]
    fn entropy_like_examples() {
        for (_, r) in Regularizer::presets() {
            assert_eq!(r.entropy_like(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        }
        assert_abs_diff_eq!(
            Regularizer::shannon().entropy_like(&[0.25; 4]).unwrap(),
            4f64.ln(),
            epsilon = 1e-14
        );
        for n in 1..8 {
            let p = vec![1.0 / n as f64; n];
            let want = 0.5 * (1.0 - 1.0 / n as f64);
            assert_abs_diff_eq!(tsallis_half().entropy_like(&p).unwrap(), want, epsilon = 1e-14);
        }
        assert!(matches!(
            tsallis_half().entropy_like(&[0.5, 0.4]),
            Err(RegularizerError::NotADistribution(_))
        ));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Regularizer::cosine(0.0).is_err());
        assert!(Regularizer::cosine(2.0).is_err());
        assert!(Regularizer::sine(-0.1).is_err());
        assert!(Regularizer::tsallis(1.0, 1.0).is_err());
        assert!(Regularizer::tsallis(0.0, 2.0).is_err());
        assert!(Regularizer::exponential(-1.0, 2.0).is_err());
        assert!(Regularizer::exponential(0.0, 0.5).is_err());
    }

    #[test]
    fn audit_rejects_inadmissible_members() {
        // q = 1 makes φ identically zero
        assert!(matches!(
            Regularizer::exponential(0.0, 1.0),
            Err(RegularizerError::NotAdmissible { .. })
        ));
        // x(sin θ - sin θx) loses concavity near 1 when θ tan θ > 2
        assert!(matches!(Regularizer::sine(FRAC_PI_2), Err(RegularizerError::NotAdmissible { .. })));
        assert!(Regularizer::sine(1.0).is_ok());
        assert!(Regularizer::sine(0.3).is_ok());
    }

    #[test]
    fn display_is_canonical() {
        for (_, r) in Regularizer::presets() {
            let s = r.to_string();
            let back: Regularizer = s.parse().unwrap();
            assert_eq!(back, r, "{s}");
        }
    }
}
