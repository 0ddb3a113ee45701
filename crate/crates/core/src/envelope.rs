//! Piecewise-linear envelopes of scalar nonlinearities.
//!
//! The domain is split into `h + 1` uniform subintervals, then further at
//! every inflection point so each piece has a single curvature sign. On a
//! convex piece the secant bounds from above and the tangent at the piece
//! midpoint bounds from below; on a concave piece the roles swap.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::interval::{propagate_affine, IntervalVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Convex,
    Concave,
    Linear,
}

/// Curvature declaration on `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureRegion {
    pub lower: f64,
    pub upper: f64,
    pub curvature: Curvature,
}

/// Built-in elementary functions selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Square,
    Sine,
    Identity,
}

impl FunctionKind {
    pub fn function(self) -> ElementaryFunction {
        match self {
            FunctionKind::Square => ElementaryFunction::square(),
            FunctionKind::Sine => ElementaryFunction::sine(),
            FunctionKind::Identity => ElementaryFunction::identity(),
        }
    }
}

/// A scalar function with declared curvature and optional prior knowledge.
#[derive(Clone)]
pub struct ElementaryFunction {
    pub name: String,
    pub eval: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
    pub second_derivative: Option<fn(f64) -> f64>,
    /// Sorted, non-overlapping regions; their shared endpoints are the
    /// inflection points.
    pub regions: Vec<CurvatureRegion>,
    /// Interval on which the function is non-decreasing.
    pub monotone_on: Option<(f64, f64)>,
    pub prior_floor: Option<f64>,
    pub prior_ceiling: Option<f64>,
}

impl fmt::Debug for ElementaryFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ElementaryFunction")
            .field("name", &self.name)
            .field("regions", &self.regions)
            .field("monotone_on", &self.monotone_on)
            .finish_non_exhaustive()
    }
}

impl Serialize for ElementaryFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

impl ElementaryFunction {
    /// `χ²`: convex, non-decreasing for `χ ≥ 0`, never negative.
    pub fn square() -> Self {
        Self {
            name: "square".into(),
            eval: |x| x * x,
            derivative: |x| 2.0 * x,
            second_derivative: Some(|_| 2.0),
            regions: vec![CurvatureRegion {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                curvature: Curvature::Convex,
            }],
            monotone_on: Some((0.0, f64::INFINITY)),
            prior_floor: Some(0.0),
            prior_ceiling: None,
        }
    }

    /// `sin χ` on `[−8π, 8π]`: concave on `[2kπ, (2k+1)π]`, convex between.
    pub fn sine() -> Self {
        use std::f64::consts::PI;
        let regions = (-8..8)
            .map(|k| CurvatureRegion {
                lower: k as f64 * PI,
                upper: (k + 1) as f64 * PI,
                curvature: if k % 2 == 0 { Curvature::Concave } else { Curvature::Convex },
            })
            .collect();
        Self {
            name: "sine".into(),
            eval: f64::sin,
            derivative: f64::cos,
            second_derivative: Some(|x| -x.sin()),
            regions,
            monotone_on: None,
            prior_floor: Some(-1.0),
            prior_ceiling: Some(1.0),
        }
    }

    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            eval: |x| x,
            derivative: |_| 1.0,
            second_derivative: Some(|_| 0.0),
            regions: vec![CurvatureRegion {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                curvature: Curvature::Linear,
            }],
            monotone_on: Some((f64::NEG_INFINITY, f64::INFINITY)),
            prior_floor: None,
            prior_ceiling: None,
        }
    }

    fn curvature_on(&self, lo: f64, hi: f64) -> Option<Curvature> {
        self.regions.iter().find(|r| r.lower <= lo && hi <= r.upper).map(|r| r.curvature)
    }

    fn inflections_in(&self, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
        self.regions
            .iter()
            .flat_map(|r| [r.lower, r.upper])
            .filter(move |&p| p > lo && p < hi)
    }

    /// Checks each declared region against the second derivative on 100
    /// points of `[lo, hi] ∩ region`.
    pub fn check_curvature(&self, lo: f64, hi: f64) -> Result<()> {
        let Some(d2) = self.second_derivative else {
            return Ok(());
        };
        for r in &self.regions {
            let (a, b) = (r.lower.max(lo), r.upper.min(hi));
            if a >= b {
                continue;
            }
            for k in 0..100 {
                let x = a + (b - a) * k as f64 / 99.0;
                let v = d2(x);
                let tol = 1e-12 * (1.0 + v.abs());
                let ok = match r.curvature {
                    Curvature::Convex => v >= -tol,
                    Curvature::Concave => v <= tol,
                    Curvature::Linear => v.abs() <= tol,
                };
                if !ok {
                    return Err(Error::invalid(format!(
                        "{} declared {:?} on [{}, {}] but f''({x}) = {v}",
                        self.name, r.curvature, r.lower, r.upper
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `slope·χ + intercept` valid on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearPiece {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl LinearPiece {
    pub fn at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    fn secant(f: fn(f64) -> f64, lo: f64, hi: f64) -> Self {
        let (fa, fb) = (f(lo), f(hi));
        let slope = (fb - fa) / (hi - lo);
        Self { lo, hi, slope, intercept: fa - slope * lo }
    }

    fn tangent(f: fn(f64) -> f64, df: fn(f64) -> f64, lo: f64, hi: f64) -> Self {
        let m = 0.5 * (lo + hi);
        let slope = df(m);
        Self { lo, hi, slope, intercept: f(m) - slope * m }
    }
}

/// Upper and lower piecewise-linear bounds of one elementary function.
#[derive(Debug, Clone, Serialize)]
pub struct ElementaryEnvelope {
    pub function: ElementaryFunction,
    pub domain: (f64, f64),
    /// Interior partition points, including inflection points.
    pub breakpoints: Vec<f64>,
    pub upper_pieces: Vec<LinearPiece>,
    pub lower_pieces: Vec<LinearPiece>,
    pub floor: f64,
    pub ceiling: f64,
}

/// Builds the envelope with `h` uniformly spaced interior points.
pub fn build_envelope(f: &ElementaryFunction, domain: (f64, f64), h: usize) -> Result<ElementaryEnvelope> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("invalid envelope domain [{lo}, {hi}]")));
    }
    let mut points: Vec<f64> = (0..=h + 1).map(|k| lo + (hi - lo) * k as f64 / (h + 1) as f64).collect();
    points[h + 1] = hi;
    points.extend(f.inflections_in(lo, hi));
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));

    f.check_curvature(lo, hi)?;
    let mut upper = Vec::with_capacity(points.len() - 1);
    let mut lower = Vec::with_capacity(points.len() - 1);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let curvature = f.curvature_on(a, b).ok_or_else(|| {
            Error::invalid(format!("curvature of {} undeclared on [{a}, {b}]", f.name))
        })?;
        let secant = LinearPiece::secant(f.eval, a, b);
        let tangent = LinearPiece::tangent(f.eval, f.derivative, a, b);
        let (up, down) = match curvature {
            Curvature::Convex => (secant, tangent),
            Curvature::Concave => (tangent, secant),
            Curvature::Linear => (secant, secant),
        };
        upper.push(up);
        lower.push(down);
    }
    Ok(ElementaryEnvelope {
        function: f.clone(),
        domain,
        breakpoints: points[1..points.len() - 1].to_vec(),
        upper_pieces: upper,
        lower_pieces: lower,
        floor: f64::NEG_INFINITY,
        ceiling: f64::INFINITY,
    })
}

/// Clips the lower bound at `floor` and the upper bound at `ceiling`.
pub fn refine_with_prior(env: &ElementaryEnvelope, floor: Option<f64>, ceiling: Option<f64>) -> ElementaryEnvelope {
    let mut out = env.clone();
    if let Some(f) = floor {
        out.floor = out.floor.max(f);
    }
    if let Some(c) = ceiling {
        out.ceiling = out.ceiling.min(c);
    }
    out
}

impl ElementaryEnvelope {
    fn check_domain(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        if x >= lo && x <= hi {
            Ok(())
        } else {
            Err(Error::DomainEscape { value: x, lower: lo, upper: hi })
        }
    }

    fn piece_index(&self, x: f64) -> usize {
        // Pieces are half-open; the right piece owns a shared breakpoint.
        self.breakpoints.partition_point(|&b| b <= x)
    }

    pub fn upper(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.upper_pieces[self.piece_index(x)].at(x).min(self.ceiling))
    }

    pub fn lower(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.lower_pieces[self.piece_index(x)].at(x).max(self.floor))
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.function.eval)(x)
    }

    /// Whether the underlying function is declared non-decreasing on `[a, b]`.
    pub fn is_monotone_on(&self, a: f64, b: f64) -> bool {
        self.function.monotone_on.is_some_and(|(lo, hi)| lo <= a && b <= hi)
    }
}

/// Tightest `[min Ω, max Ω]` with `lower(χ) ≤ Ω ≤ upper(χ)` over `χ ∈ [a, b]`.
///
/// Each piece is linear, so its extremes over the clipped interval sit at the
/// clip endpoints.
pub fn runtime_interval_general(env: &ElementaryEnvelope, a: f64, b: f64) -> Result<(f64, f64)> {
    if a > b || a.is_nan() || b.is_nan() {
        return Err(Error::invalid(format!("invalid scalar box [{a}, {b}]")));
    }
    env.check_domain(a)?;
    env.check_domain(b)?;
    if a == b {
        return Ok((env.lower(a)?, env.upper(a)?));
    }
    let extremes = |pieces: &[LinearPiece]| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in pieces {
            let (c1, c2) = (p.lo.max(a), p.hi.min(b));
            if c1 < c2 {
                for c in [c1, c2] {
                    let v = p.at(c);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        (lo, hi)
    };
    let (lower_min, _) = extremes(&env.lower_pieces);
    let (_, upper_max) = extremes(&env.upper_pieces);
    Ok((lower_min.max(env.floor), upper_max.min(env.ceiling)))
}

/// Endpoint shortcut for a non-decreasing function:
/// `[min{g̲(a), ḡ(a)}, max{g̲(b), ḡ(b)}]`.
pub fn runtime_interval_monotonic(env: &ElementaryEnvelope, a: f64, b: f64) -> Result<(f64, f64)> {
    if a > b || a.is_nan() || b.is_nan() {
        return Err(Error::invalid(format!("invalid scalar box [{a}, {b}]")));
    }
    if !env.is_monotone_on(a, b) {
        return Err(Error::invalid(format!(
            "{} is not declared monotone on [{a}, {b}]",
            env.function.name
        )));
    }
    let (la, ua) = (env.lower(a)?, env.upper(a)?);
    let (lb, ub) = (env.lower(b)?, env.upper(b)?);
    Ok((la.min(ua), lb.max(ub)))
}

/// `[F⁺g̲ − F⁻ḡ, F⁺ḡ − F⁻g̲]`.
pub fn propagate_through_f(f: &DMatrix<f64>, g_box: &IntervalVector) -> Result<IntervalVector> {
    propagate_affine(f, g_box)
}

/// One component `g_i(x) = e(x[state_index])` of the state nonlinearity.
#[derive(Debug, Clone, Serialize)]
pub struct NonlinearTerm {
    pub state_index: usize,
    pub envelope: ElementaryEnvelope,
    /// Use the endpoint shortcut instead of the general extraction.
    pub monotone: bool,
}

impl NonlinearTerm {
    pub fn interval(&self, state_box: &IntervalVector) -> Result<(f64, f64)> {
        if self.state_index >= state_box.dim() {
            return Err(Error::invalid(format!("state index {} out of range", self.state_index)));
        }
        let (a, b) = state_box.component(self.state_index);
        if self.monotone {
            runtime_interval_monotonic(&self.envelope, a, b)
        } else {
            runtime_interval_general(&self.envelope, a, b)
        }
    }
}

/// Stacks the runtime intervals of every term.
pub fn nonlinear_interval(terms: &[NonlinearTerm], state_box: &IntervalVector) -> Result<IntervalVector> {
    let mut lo = DVector::zeros(terms.len());
    let mut hi = DVector::zeros(terms.len());
    for (i, t) in terms.iter().enumerate() {
        let (l, u) = t.interval(state_box)?;
        lo[i] = l;
        hi[i] = u;
    }
    IntervalVector::new(lo, hi)
}

/// Exact `g(x)`.
pub fn nonlinear_value(terms: &[NonlinearTerm], x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(terms.len(), terms.iter().map(|t| t.envelope.eval(x[t.state_index])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn assert_sound(env: &ElementaryEnvelope, samples: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = env.domain;
        for _ in 0..samples {
            let x = rng.random_range(lo..=hi);
            let f = env.eval(x);
            assert!(env.lower(x).unwrap() <= f + 1e-9, "lower at {x}");
            assert!(env.upper(x).unwrap() >= f - 1e-9, "upper at {x}");
        }
    }

    #[test]
    fn square_h2_uses_secants_and_midpoint_tangents() {
        let env = build_envelope(&ElementaryFunction::square(), (-10.0, 20.0), 2).unwrap();
        assert_eq!(env.breakpoints, vec![0.0, 10.0]);
        // Secant of χ² through (0, 0) and (10, 100): slope 10.
        let up = env.upper_pieces[1];
        assert_eq!((up.slope, up.intercept), (10.0, 0.0));
        // Tangent at midpoint 5: slope 10, intercept −25.
        let down = env.lower_pieces[1];
        assert_eq!((down.slope, down.intercept), (10.0, -25.0));
        assert_sound(&env, 1000, 1);
    }

    #[test]
    fn linear_function_is_exact() {
        for h in [0, 1, 5] {
            let env = build_envelope(&ElementaryFunction::identity(), (-3.0, 7.0), h).unwrap();
            for k in 0..=50 {
                let x = -3.0 + 10.0 * k as f64 / 50.0;
                assert!((env.upper(x).unwrap() - x).abs() < 1e-12);
                assert!((env.lower(x).unwrap() - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_is_concave_on_zero_pi() {
        let env = build_envelope(&ElementaryFunction::sine(), (0.0, PI), 1).unwrap();
        // Upper = tangent at π/4 on the first piece.
        let t = env.upper_pieces[0];
        assert!((t.slope - (PI / 4.0).cos()).abs() < 1e-15);
        let s = env.lower_pieces[0];
        assert!((s.at(0.0)).abs() < 1e-15 && (s.at(PI / 2.0) - 1.0).abs() < 1e-12);
        assert_sound(&env, 1000, 2);
        let wide = build_envelope(&ElementaryFunction::sine(), (-5.0, 9.0), 3).unwrap();
        assert_sound(&wide, 5000, 3);
    }

    #[test]
    fn undeclared_curvature_is_rejected() {
        let mut f = ElementaryFunction::square();
        f.regions[0].lower = 0.0;
        assert!(matches!(build_envelope(&f, (-1.0, 1.0), 2), Err(Error::InvalidInput(_))));
        let mut wrong = ElementaryFunction::sine();
        wrong.regions[8].curvature = Curvature::Convex;
        assert!(build_envelope(&wrong, (0.0, 3.0), 1).is_err());
    }

    #[test]
    fn floor_refinement_tightens_near_zero() {
        let env = build_envelope(&ElementaryFunction::square(), (-10.0, 20.0), 2).unwrap();
        let refined = refine_with_prior(&env, Some(0.0), None);
        let mut strictly = false;
        for k in 0..=300 {
            let x = -10.0 + 30.0 * k as f64 / 300.0;
            let (a, b) = (env.lower(x).unwrap(), refined.lower(x).unwrap());
            assert!(b >= a && b >= 0.0);
            assert_eq!(env.upper(x).unwrap(), refined.upper(x).unwrap());
            strictly |= b > a;
        }
        assert!(strictly);
        assert!(refined.lower(0.0).unwrap() > env.lower(0.0).unwrap());
        assert!(refined.lower(1.0).unwrap() > env.lower(1.0).unwrap());
        assert_sound(&refined, 1000, 4);

        let same = refine_with_prior(&env, Some(f64::NEG_INFINITY), None);
        assert_eq!(same.floor, env.floor);
        assert_eq!(same.lower_pieces, env.lower_pieces);
    }

    #[test]
    fn general_interval_on_small_box() {
        let env = refine_with_prior(
            &build_envelope(&ElementaryFunction::square(), (-10.0, 20.0), 2).unwrap(),
            Some(0.0),
            None,
        );
        let (lo, hi) = runtime_interval_general(&env, 1.0, 2.0).unwrap();
        assert!(lo <= 1.0 && hi >= 4.0);
        // Candidate enumeration: the bounds are attained at χ ∈ {1, 2}.
        assert_eq!(lo, env.lower(1.0).unwrap().min(env.lower(2.0).unwrap()));
        assert_eq!(hi, env.upper(1.0).unwrap().max(env.upper(2.0).unwrap()));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let x = rng.random_range(1.0..=2.0);
            assert!(env.lower(x).unwrap() >= lo - 1e-12 && env.upper(x).unwrap() <= hi + 1e-12);
        }
    }

    #[test]
    fn general_interval_point_and_full_domain() {
        let env = build_envelope(&ElementaryFunction::square(), (-10.0, 20.0), 4).unwrap();
        let (l, u) = runtime_interval_general(&env, 3.0, 3.0).unwrap();
        assert_eq!((l, u), (env.lower(3.0).unwrap(), env.upper(3.0).unwrap()));

        let (lo, hi) = runtime_interval_general(&env, -10.0, 20.0).unwrap();
        assert_eq!(hi, 400.0);
        let mut sampled_min = f64::INFINITY;
        for k in 0..=30_000 {
            let x = -10.0 + 30.0 * k as f64 / 30_000.0;
            sampled_min = sampled_min.min(env.lower(x).unwrap());
        }
        assert!((lo - sampled_min).abs() < 1e-6);
    }

    #[test]
    fn domain_escape_is_reported() {
        let env = build_envelope(&ElementaryFunction::square(), (0.0, 60.0), 20).unwrap();
        assert!(matches!(
            runtime_interval_general(&env, 10.0, 61.0),
            Err(Error::DomainEscape { value, .. }) if value == 61.0
        ));
        assert!(matches!(env.upper(-0.5), Err(Error::DomainEscape { .. })));
    }

    #[test]
    fn monotone_shortcut() {
        let env = build_envelope(&ElementaryFunction::square(), (0.0, 20.0), 3).unwrap();
        let (lo, hi) = runtime_interval_monotonic(&env, 5.0, 10.0).unwrap();
        assert!(lo <= 25.0 && hi >= 100.0);
        let expected_lo = env.lower(5.0).unwrap().min(env.upper(5.0).unwrap());
        let expected_hi = env.lower(10.0).unwrap().max(env.upper(10.0).unwrap());
        assert_eq!((lo, hi), (expected_lo, expected_hi));

        let (a, b) = runtime_interval_monotonic(&env, 7.0, 7.0).unwrap();
        assert_eq!((a, b), (env.lower(7.0).unwrap(), env.upper(7.0).unwrap()));

        let id = build_envelope(&ElementaryFunction::identity(), (-5.0, 5.0), 2).unwrap();
        let (a, b) = runtime_interval_monotonic(&id, -1.5, 2.5).unwrap();
        assert!((a + 1.5).abs() < 1e-12 && (b - 2.5).abs() < 1e-12);

        let neg = build_envelope(&ElementaryFunction::square(), (-5.0, 5.0), 2).unwrap();
        assert!(matches!(runtime_interval_monotonic(&neg, -2.0, 1.0), Err(Error::InvalidInput(_))));
        let sine = build_envelope(&ElementaryFunction::sine(), (0.0, 1.0), 2).unwrap();
        assert!(runtime_interval_monotonic(&sine, 0.1, 0.2).is_err());
    }

    #[test]
    fn propagate_through_acc_f() {
        let mu = 1e-4;
        let mut f = DMatrix::zeros(6, 2);
        f[(2, 0)] = -mu;
        f[(5, 1)] = -mu;
        let g = IntervalVector::from_slices(&[100.0, 400.0], &[400.0, 900.0]).unwrap();
        let out = propagate_through_f(&f, &g).unwrap();
        assert!((out.lower()[2] + 400.0 * mu).abs() < 1e-15);
        assert!((out.upper()[2] + 100.0 * mu).abs() < 1e-15);
        assert!((out.lower()[5] + 900.0 * mu).abs() < 1e-15);
        assert!((out.upper()[5] + 400.0 * mu).abs() < 1e-15);
        assert_eq!(out.lower()[0], 0.0);

        let zero = propagate_through_f(&DMatrix::zeros(3, 2), &g).unwrap();
        assert!(zero.lower().iter().chain(zero.upper().iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn propagate_random_f_contains_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = IntervalVector::from_slices(&[-1.0, 0.0, 2.0], &[1.0, 3.0, 2.5]).unwrap();
        let out = propagate_through_f(&f, &g).unwrap();
        for _ in 0..1000 {
            let v = DVector::from_fn(3, |i, _| rng.random_range(g.lower()[i]..=g.upper()[i]));
            assert!(out.contains(&(&f * v), 1e-12));
        }
    }

    #[test]
    fn envelope_serializes_pieces() {
        let env = build_envelope(&ElementaryFunction::square(), (0.0, 60.0), 1).unwrap();
        let v = serde_json::to_value(&env).unwrap();
        assert_eq!(v["function"], "square");
        assert_eq!(v["upper_pieces"].as_array().unwrap().len(), 2);
    }
}
