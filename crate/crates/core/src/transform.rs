//! Road plane fitting and the disparity transformation.
//!
//! Road pixels of a disparity image follow `g = ϰ·(cosΦ·v − sinΦ·u) + ϰ·κ`,
//! a line in the v-disparity domain rotated by the pitch-like angle Φ. The
//! fit minimizes, over Φ, the residual energy of the best affine fit of `g`
//! against the rotated coordinate `t(Φ) = cosΦ·v − sinΦ·u`; scale ϰ and
//! offset κ then come from that affine fit. The transformation subtracts the
//! fitted plane and lifts everything by Λ so the lowest valid pixel sits at
//! exactly 0 — road becomes a flat band and potholes become the dark tail
//! below it.
//!
//! There are two angle solvers sharing one energy definition: the canonical
//! numerical path (coarse scan + golden-section + an in-bracket parabolic
//! polish) and a closed form from the stationarity condition of the energy;
//! see docs/pitch-solver.md for the derivation of the latter.

use crate::disparity::DisparityImage;
use crate::error::{Error, Result};
use crate::io::full_precision;

use std::f64::consts::FRAC_PI_2;

// ── Model and fit types ────────────────────────────────────────────────────

/// Fitted road geometry: `g_road(u, v) = ϰ(cosΦ·v − sinΦ·u) + ϰκ`, plus the
/// lift Λ applied after subtraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadModel {
    /// Rotation angle Φ, in (−π/2, π/2).
    pub phi: f64,
    /// Scale ϰ, strictly positive for sane geometry.
    pub varkappa: f64,
    /// Offset κ.
    pub kappa: f64,
    /// Lift Λ ≥ 0 pinning the minimum transformed value to 0.
    pub lambda: f64,
}

impl RoadModel {
    pub fn validate(&self) -> Result<()> {
        if !self.phi.is_finite() || self.phi.abs() >= FRAC_PI_2 {
            return Err(Error::BadParameter(format!(
                "phi must lie in (-pi/2, pi/2), got {}",
                self.phi
            )));
        }
        if !self.varkappa.is_finite() || self.varkappa <= 0.0 {
            return Err(Error::NonPositiveScale(self.varkappa));
        }
        if !self.kappa.is_finite() {
            return Err(Error::BadParameter(format!("kappa = {}", self.kappa)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::BadParameter(format!("lambda = {}", self.lambda)));
        }
        Ok(())
    }
}

/// The valid pixels entering the fit, as parallel columns.
#[derive(Debug, Clone)]
pub struct FitInput {
    g: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FitInput {
    /// Needs ≥ 3 finite samples spanning more than one image row.
    pub fn new(g: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if g.len() != u.len() || g.len() != v.len() {
            return Err(Error::BadParameter(format!(
                "fit columns disagree: g {}, u {}, v {}",
                g.len(),
                u.len(),
                v.len()
            )));
        }
        if g.len() < 3 {
            return Err(Error::TooFewPixels(g.len()));
        }
        if g.iter().chain(&u).chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::BadParameter("non-finite fit sample".into()));
        }
        if v.iter().all(|&vi| vi == v[0]) {
            return Err(Error::SingleRow(v[0] as usize));
        }
        Ok(Self { g, u, v })
    }

    /// Collect the valid pixels of an image in row-major order.
    pub fn from_image(img: &DisparityImage) -> Result<Self> {
        let mut g = Vec::new();
        let mut u = Vec::new();
        let mut v = Vec::new();
        for (ui, vi, gi) in img.valid_pixels() {
            g.push(gi);
            u.push(ui as f64);
            v.push(vi as f64);
        }
        Self::new(g, u, v)
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiMethod {
    GridRefine,
    ClosedForm,
}

impl PhiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PhiMethod::GridRefine => "grid_refine",
            PhiMethod::ClosedForm => "closed_form",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grid_refine" => Ok(PhiMethod::GridRefine),
            "closed_form" => Ok(PhiMethod::ClosedForm),
            other => Err(Error::BadParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// Result of an angle solve.
#[derive(Debug, Clone)]
pub struct PhiSolution {
    pub phi_star: f64,
    /// Residual energy at `phi_star`.
    pub cost: f64,
    pub method: PhiMethod,
    /// Closed form only: the evaluated (Φ, energy) root candidates, in
    /// quadratic-root order q = −1 then q = +1 (one entry if the quadratic
    /// degenerates to a linear equation).
    pub candidates: Option<Vec<(f64, f64)>>,
    /// Closed form only: discriminant of the stationarity quadratic.
    pub delta: Option<f64>,
}

/// Knobs of [`fit_and_transform`], mirroring the CLI flags.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub grid_size: usize,
    pub tol: f64,
    pub closed_form: bool,
    pub robust_refit: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_size: 1024,
            tol: 1e-10,
            closed_form: false,
            robust_refit: false,
        }
    }
}

/// A fitted model together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct RoadFit {
    pub model: RoadModel,
    pub solution: PhiSolution,
}

// ── Numerics: compensated sums and centered moments ────────────────────────

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// Centered first and second moments of (u, v, g). Everything the energy
/// needs is a function of these plus the angle, which makes one energy
/// evaluation O(1) instead of O(k).
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean_u: f64,
    mean_v: f64,
    mean_g: f64,
    suu: f64,
    svv: f64,
    suv: f64,
    sug: f64,
    svg: f64,
    sgg: f64,
}

impl Moments {
    fn of(fit: &FitInput) -> Self {
        let k = fit.len() as f64;
        let (mut su, mut sv, mut sg) = (Kahan::default(), Kahan::default(), Kahan::default());
        for i in 0..fit.len() {
            su.add(fit.u[i]);
            sv.add(fit.v[i]);
            sg.add(fit.g[i]);
        }
        let (mean_u, mean_v, mean_g) = (su.value() / k, sv.value() / k, sg.value() / k);

        let mut acc = [Kahan::default(); 6];
        for i in 0..fit.len() {
            let cu = fit.u[i] - mean_u;
            let cv = fit.v[i] - mean_v;
            let cg = fit.g[i] - mean_g;
            acc[0].add(cu * cu);
            acc[1].add(cv * cv);
            acc[2].add(cu * cv);
            acc[3].add(cu * cg);
            acc[4].add(cv * cg);
            acc[5].add(cg * cg);
        }
        Self {
            mean_u,
            mean_v,
            mean_g,
            suu: acc[0].value(),
            svv: acc[1].value(),
            suv: acc[2].value(),
            sug: acc[3].value(),
            svg: acc[4].value(),
            sgg: acc[5].value(),
        }
    }

    /// Scale used for relative rank-deficiency thresholds.
    #[inline]
    fn coord_scale(&self) -> f64 {
        self.suu + self.svv
    }

    /// Projection numerator N(Φ) = Σ ct·cg and denominator D(Φ) = Σ ct².
    #[inline]
    fn projection(&self, phi: f64) -> (f64, f64) {
        let (s, c) = phi.sin_cos();
        let n = self.svg * c - self.sug * s;
        let d = self.svv * c * c - 2.0 * self.suv * c * s + self.suu * s * s;
        (n, d)
    }

    #[inline]
    fn rank_ok(&self, d: f64) -> bool {
        d > 1e-14 * self.coord_scale()
    }

    /// Optimal slope of g against t(Φ), None where the fit is rank-deficient.
    #[inline]
    fn slope(&self, phi: f64) -> Option<f64> {
        let (n, d) = self.projection(phi);
        self.rank_ok(d).then(|| n / d)
    }

    /// O(1) energy; accurate to ~1e-16 relative to `sgg`, which is plenty for
    /// the coarse scan but not for reporting costs near zero.
    #[inline]
    fn quick_energy(&self, phi: f64) -> Option<f64> {
        let (n, d) = self.projection(phi);
        self.rank_ok(d).then(|| self.sgg - n * n / d)
    }
}

/// O(1) energy evaluations that stay accurate down to ~1e-12 absolute.
///
/// With a reference slope x₁⁰ at angle Φ₀ and its residuals r⁰, the residual
/// at any other (Φ, x₁(Φ)) is r⁰ + α·cv + β·cu for small α, β, so the energy
/// is an exact quadratic in (α, β) over the moments of (r⁰, cv, cu). One O(k)
/// pass buys those moments; every evaluation after that is O(1) and free of
/// the catastrophic cancellation of `quick_energy` near the minimum.
#[derive(Debug, Clone, Copy)]
struct RefinedEnergy {
    m: Moments,
    cos0: f64,
    sin0: f64,
    slope0: f64,
    srr: f64,
    srv: f64,
    sru: f64,
}

impl RefinedEnergy {
    fn at(fit: &FitInput, m: Moments, phi0: f64) -> Option<Self> {
        let slope0 = m.slope(phi0)?;
        let (sin0, cos0) = phi0.sin_cos();
        let (mut srr, mut srv, mut sru) = (Kahan::default(), Kahan::default(), Kahan::default());
        for i in 0..fit.len() {
            let cu = fit.u[i] - m.mean_u;
            let cv = fit.v[i] - m.mean_v;
            let cg = fit.g[i] - m.mean_g;
            let r = cg - slope0 * (cos0 * cv - sin0 * cu);
            srr.add(r * r);
            srv.add(r * cv);
            sru.add(r * cu);
        }
        Some(Self {
            m,
            cos0,
            sin0,
            slope0,
            srr: srr.value(),
            srv: srv.value(),
            sru: sru.value(),
        })
    }

    fn energy(&self, phi: f64) -> Option<f64> {
        let slope = self.m.slope(phi)?;
        let (s, c) = phi.sin_cos();
        let alpha = self.slope0 * self.cos0 - slope * c;
        let beta = slope * s - self.slope0 * self.sin0;
        let e = self.srr
            + 2.0 * (alpha * self.srv + beta * self.sru)
            + alpha * alpha * self.m.svv
            + 2.0 * alpha * beta * self.m.suv
            + beta * beta * self.m.suu;
        Some(e.max(0.0))
    }
}

// ── Energy ─────────────────────────────────────────────────────────────────

/// Residual energy at angle `phi`: the sum of squared residuals of the best
/// affine fit of g against t(Φ) = cosΦ·v − sinΦ·u. The literal two-pass
/// computation, compensated; matches a textbook least-squares solve.
pub fn energy(fit: &FitInput, phi: f64) -> Result<f64> {
    if !phi.is_finite() || phi.abs() > FRAC_PI_2 {
        return Err(Error::BadParameter(format!(
            "angle {phi} outside [-pi/2, pi/2]"
        )));
    }
    let (s, c) = phi.sin_cos();
    let k = fit.len() as f64;

    let (mut sg, mut st) = (Kahan::default(), Kahan::default());
    for i in 0..fit.len() {
        sg.add(fit.g[i]);
        st.add(c * fit.v[i] - s * fit.u[i]);
    }
    let (mean_g, mean_t) = (sg.value() / k, st.value() / k);

    let (mut stt, mut stg, mut scale) = (Kahan::default(), Kahan::default(), Kahan::default());
    for i in 0..fit.len() {
        let ct = (c * fit.v[i] - s * fit.u[i]) - mean_t;
        let cg = fit.g[i] - mean_g;
        stt.add(ct * ct);
        stg.add(ct * cg);
        let (cu, cv) = (fit.u[i] - mean_t, fit.v[i] - mean_t);
        scale.add(cu * cu + cv * cv);
    }
    let stt = stt.value();
    if stt <= 1e-14 * scale.value() {
        return Err(Error::RankDeficient);
    }
    let slope = stg.value() / stt;

    let mut rss = Kahan::default();
    for i in 0..fit.len() {
        let ct = (c * fit.v[i] - s * fit.u[i]) - mean_t;
        let cg = fit.g[i] - mean_g;
        let r = cg - slope * ct;
        rss.add(r * r);
    }
    Ok(rss.value().max(0.0))
}

// ── Numerical angle solver ─────────────────────────────────────────────────

/// Angle domain is the open interval (−π/2, π/2); brackets are clamped a hair
/// inside it.
const ANGLE_EDGE: f64 = FRAC_PI_2 - 1e-12;
/// Bracket width below which refinement switches to the cancellation-free
/// evaluator.
const REFINE_BRACKET: f64 = 1e-5;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimize the energy: coarse scan over `grid_size` midpoint samples of
/// (−π/2, π/2), golden-section refinement around the best sample until the
/// bracket is below `tol`, then a safeguarded parabolic polish inside that
/// final bracket. `phi_star` always lies within ±(π/grid_size + tol) of the
/// best coarse sample.
pub fn estimate_phi(fit: &FitInput, grid_size: usize, tol: f64) -> Result<PhiSolution> {
    if grid_size < 16 {
        return Err(Error::BadParameter(format!(
            "grid size {grid_size} too small (need ≥ 16)"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::BadParameter(format!("tolerance {tol} must be > 0")));
    }
    let m = Moments::of(fit);
    if m.coord_scale() <= 0.0 {
        return Err(Error::RankDeficient);
    }

    // Coarse scan; midpoints keep samples off the interval ends. Strict
    // comparison keeps the smallest angle on exact ties.
    let step = std::f64::consts::PI / grid_size as f64;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..grid_size {
        let phi = -FRAC_PI_2 + (i as f64 + 0.5) * step;
        if let Some(e) = m.quick_energy(phi) {
            if best.map_or(true, |(_, be)| e < be) {
                best = Some((phi, e));
            }
        }
    }
    let (phi_grid, _) = best.ok_or(Error::RankDeficient)?;

    let mut a = (phi_grid - step).max(-ANGLE_EDGE);
    let mut b = (phi_grid + step).min(ANGLE_EDGE);

    // Golden section on the cheap evaluator until the bracket is small enough
    // that cancellation would start to matter.
    let quick = |phi: f64| m.quick_energy(phi).unwrap_or(f64::INFINITY);
    let coarse_target = tol.max(REFINE_BRACKET);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (quick(c), quick(d));
    while b - a > coarse_target {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = quick(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = quick(d);
        }
    }

    // Switch to the refined evaluator for the final descent and the polish.
    let anchor = if fc <= fd { c } else { d };
    let refined = RefinedEnergy::at(fit, m, anchor).ok_or(Error::RankDeficient)?;
    let eval = |phi: f64| refined.energy(phi).unwrap_or(f64::INFINITY);

    let mut best = (anchor, eval(anchor));
    let track = |phi: f64, e: f64, best: &mut (f64, f64)| {
        if e < best.1 || (e == best.1 && phi < best.0) {
            *best = (phi, e);
        }
    };

    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    track(c, fc, &mut best);
    track(d, fd, &mut best);
    while b - a > tol {
        // Stop if the bracket reaches the floating-point floor.
        if b - a <= f64::EPSILON * (a.abs().max(b.abs()) + 1.0) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = eval(c);
            track(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = eval(d);
            track(d, fd, &mut best);
        }
    }

    // Parabolic polish inside [a, b]: fit a parabola through the best point
    // and the bracket ends, jump to its vertex. Near the optimum the energy
    // is an almost exact parabola, so a few steps give machine-level angles
    // that plain golden section at tol would miss.
    let (mut fa, mut fb) = (eval(a), eval(b));
    track(a, fa, &mut best);
    track(b, fb, &mut best);
    let mut mid = best.0.clamp(a, b);
    let mut fmid = best.1;
    for _ in 0..8 {
        let (x1, x2, x3) = (a, mid, b);
        let (f1, f2, f3) = (fa, fmid, fb);
        let num = (x2 - x1).powi(2) * (f2 - f3) - (x2 - x3).powi(2) * (f2 - f1);
        let den = (x2 - x1) * (f2 - f3) - (x2 - x3) * (f2 - f1);
        if den == 0.0 {
            break;
        }
        let vertex = (x2 - 0.5 * num / den).clamp(a, b);
        if !vertex.is_finite() || (vertex - x2).abs() <= f64::EPSILON * (x2.abs() + 1.0) {
            break;
        }
        let fv = eval(vertex);
        track(vertex, fv, &mut best);
        // Keep the best point as the new middle, shrink the side it replaces.
        if fv <= fmid {
            if vertex < mid {
                b = mid;
                fb = fmid;
            } else {
                a = mid;
                fa = fmid;
            }
            mid = vertex;
            fmid = fv;
        } else if vertex < mid {
            a = vertex;
            fa = fv;
        } else {
            b = vertex;
            fb = fv;
        }
    }

    let phi_star = best.0;
    let cost = energy(fit, phi_star)?;
    Ok(PhiSolution {
        phi_star,
        cost,
        method: PhiMethod::GridRefine,
        candidates: None,
        delta: None,
    })
}

// ── Closed-form angle solver ───────────────────────────────────────────────

/// Roots of the stationarity condition of the energy, as a quadratic in
/// tanΦ. The coefficients come from the centered second moments; the two
/// roots are the energy's interior minimizer and maximizer, so the
/// discriminant is a perfect square in exact arithmetic and both candidates
/// are evaluated to pick the minimizer. See docs/pitch-solver.md.
pub fn phi_closed_form(fit: &FitInput) -> Result<PhiSolution> {
    let m = Moments::of(fit);
    let (aq, bq, cq) = stationarity_quadratic(&m);

    let scale = aq.abs().max(bq.abs()).max(cq.abs());
    if scale == 0.0 {
        return Err(Error::DegenerateStationarity);
    }

    let delta;
    let roots: Vec<f64> = if aq.abs() <= 1e-14 * scale {
        if bq.abs() <= 1e-14 * scale {
            return Err(Error::DegenerateStationarity);
        }
        // Leading coefficient vanished: the maximizer root escaped to ±π/2
        // and only the linear root remains.
        delta = bq * bq;
        vec![-cq / bq]
    } else {
        let raw = bq * bq - 4.0 * aq * cq;
        delta = raw;
        let tiny = 1e-12 * (bq * bq).max((4.0 * aq * cq).abs());
        if raw < -tiny {
            return Err(Error::NoRealRoot(raw));
        }
        let sqrt_d = raw.max(0.0).sqrt();
        // Stable quadratic roots, ordered q = −1 then q = +1.
        let sgn = if bq >= 0.0 { 1.0 } else { -1.0 };
        let qq = -0.5 * (bq + sgn * sqrt_d);
        let r_minus_sgn = qq / aq;
        let r_plus_sgn = if qq != 0.0 { cq / qq } else { 0.0 };
        if sgn > 0.0 {
            vec![r_minus_sgn, r_plus_sgn]
        } else {
            vec![r_plus_sgn, r_minus_sgn]
        }
    };

    let mut candidates = Vec::with_capacity(roots.len());
    for t in roots {
        let phi = t.atan();
        let e = energy(fit, phi).unwrap_or(f64::INFINITY);
        candidates.push((phi, e));
    }
    let &(phi_star, cost) = candidates
        .iter()
        .filter(|(_, e)| e.is_finite())
        .min_by(|(p1, e1), (p2, e2)| e1.total_cmp(e2).then(p1.total_cmp(p2)))
        .ok_or(Error::RankDeficient)?;

    Ok(PhiSolution {
        phi_star,
        cost,
        method: PhiMethod::ClosedForm,
        candidates: Some(candidates),
        delta: Some(delta),
    })
}

/// Coefficients (a, b, c) of `a·tan²Φ + b·tanΦ + c = 0`.
fn stationarity_quadratic(m: &Moments) -> (f64, f64, f64) {
    let (svg, sug, svv, suu, suv) = (m.svg, m.sug, m.svv, m.suu, m.suv);
    let a = sug * (svg * suu - sug * suv);
    let b = svg * (sug * suv - svg * suu) - sug * (svg * suv - sug * svv);
    let c = svg * (svg * suv - sug * svv);
    (a, b, c)
}

// ── Scale and offset ───────────────────────────────────────────────────────

/// Least-squares scale and offset at a fixed angle: fits `g ≈ x₀ + x₁·t(Φ)`
/// and returns (ϰ, κ) = (x₁, x₀/x₁).
pub fn solve_scale_offset(fit: &FitInput, phi: f64) -> Result<(f64, f64)> {
    let m = Moments::of(fit);
    let (n, d) = m.projection(phi);
    if !m.rank_ok(d) {
        return Err(Error::RankDeficient);
    }
    let x1 = n / d;
    let (s, c) = phi.sin_cos();
    let mean_t = c * m.mean_v - s * m.mean_u;
    let x0 = m.mean_g - x1 * mean_t;
    if !(x1.is_finite() && x1 > 0.0) {
        return Err(Error::NonPositiveScale(x1));
    }
    Ok((x1, x0 / x1))
}

// ── Transformation ─────────────────────────────────────────────────────────

/// The fitted plane at pixel (u, v). Shared between the transformation and
/// the synthetic generator so that subtracting it cancels bit-exactly.
#[inline]
pub(crate) fn plane_value(
    cos_phi: f64,
    sin_phi: f64,
    varkappa: f64,
    kappa: f64,
    u: f64,
    v: f64,
) -> f64 {
    varkappa * (cos_phi * v - sin_phi * u) + varkappa * kappa
}

/// Subtract the road plane and lift by Λ: `G'(p) = G(p) − ϰ(cosΦ·v − sinΦ·u)
/// − ϰκ + Λ`. Invalid pixels stay invalid.
pub fn transform(img: &DisparityImage, model: &RoadModel) -> Result<DisparityImage> {
    model.validate()?;
    let (s, c) = model.phi.sin_cos();
    let mut out = Vec::with_capacity(img.width() * img.height());
    for v in 0..img.height() {
        for u in 0..img.width() {
            let g = img.get(u, v);
            out.push(if g.is_finite() {
                (g - plane_value(c, s, model.varkappa, model.kappa, u as f64, v as f64))
                    + model.lambda
            } else {
                f64::NAN
            });
        }
    }
    DisparityImage::new(img.width(), img.height(), out)
}

// ── Full fit ───────────────────────────────────────────────────────────────

/// Fit the road model of an image: angle, then scale/offset, then Λ. With
/// `closed_form` the algebraic solver runs first and any of its failure modes
/// falls back to the numerical path. With `robust_refit` the fit is repeated
/// once without the pixels sitting more than 3 MADs below the first plane
/// (pothole pixels drag the plane down; one re-fit removes most of the bias).
pub fn fit_road_model(img: &DisparityImage, cfg: &SolverConfig) -> Result<RoadFit> {
    let fit = FitInput::from_image(img)?;
    let mut solution = solve_angle(&fit, cfg)?;
    let (mut varkappa, mut kappa) = solve_scale_offset(&fit, solution.phi_star)?;

    if cfg.robust_refit {
        if let Some(kept) = below_plane_filter(&fit, solution.phi_star, varkappa, kappa) {
            let refit = FitInput::new(kept.0, kept.1, kept.2)?;
            solution = solve_angle(&refit, cfg)?;
            let (vk, kp) = solve_scale_offset(&refit, solution.phi_star)?;
            varkappa = vk;
            kappa = kp;
        }
    }

    let (s, c) = solution.phi_star.sin_cos();
    let mut min_residual = f64::INFINITY;
    for (u, v, g) in img.valid_pixels() {
        let r = g - plane_value(c, s, varkappa, kappa, u as f64, v as f64);
        if r < min_residual {
            min_residual = r;
        }
    }
    let lambda = (-min_residual).max(0.0);

    let model = RoadModel {
        phi: solution.phi_star,
        varkappa,
        kappa,
        lambda,
    };
    model.validate()?;
    Ok(RoadFit { model, solution })
}

/// Fit and apply: the returned image has minimum 0 over valid pixels (Λ is
/// chosen from the same residuals the transformation subtracts).
pub fn fit_and_transform(
    img: &DisparityImage,
    cfg: &SolverConfig,
) -> Result<(RoadFit, DisparityImage)> {
    let fit = fit_road_model(img, cfg)?;
    let out = transform(img, &fit.model)?;
    Ok((fit, out))
}

fn solve_angle(fit: &FitInput, cfg: &SolverConfig) -> Result<PhiSolution> {
    if cfg.closed_form {
        match phi_closed_form(fit) {
            Ok(sol) => return Ok(sol),
            Err(
                Error::NoRealRoot(_) | Error::DegenerateStationarity | Error::RankDeficient,
            ) => {}
            Err(other) => return Err(other),
        }
    }
    estimate_phi(fit, cfg.grid_size, cfg.tol)
}

/// Samples at least 3 MADs below the plane are dropped; None when nothing
/// gets filtered (or everything would be).
fn below_plane_filter(
    fit: &FitInput,
    phi: f64,
    varkappa: f64,
    kappa: f64,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (s, c) = phi.sin_cos();
    let residuals: Vec<f64> = (0..fit.len())
        .map(|i| fit.g[i] - plane_value(c, s, varkappa, kappa, fit.u[i], fit.v[i]))
        .collect();
    let med = median(&residuals);
    let mad = median(&residuals.iter().map(|r| (r - med).abs()).collect::<Vec<_>>());
    if mad == 0.0 {
        return None;
    }
    let cutoff = med - 3.0 * mad;
    let keep: Vec<usize> = (0..fit.len()).filter(|&i| residuals[i] >= cutoff).collect();
    if keep.len() == fit.len() || keep.len() < 3 {
        return None;
    }
    Some((
        keep.iter().map(|&i| fit.g[i]).collect(),
        keep.iter().map(|&i| fit.u[i]).collect(),
        keep.iter().map(|&i| fit.v[i]).collect(),
    ))
}

/// Median with the even-length average-of-middles convention.
fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

// ── Sidecar serialization ──────────────────────────────────────────────────

impl RoadFit {
    /// `key=value` lines with full-precision numbers.
    pub fn to_sidecar(&self) -> String {
        format!(
            "phi={}\nvarkappa={}\nkappa={}\nlambda={}\ncost={}\nmethod={}\n",
            full_precision(self.model.phi),
            full_precision(self.model.varkappa),
            full_precision(self.model.kappa),
            full_precision(self.model.lambda),
            full_precision(self.solution.cost),
            self.solution.method.as_str()
        )
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let mut phi = None;
        let mut varkappa = None;
        let mut kappa = None;
        let mut lambda = None;
        let mut cost = None;
        let mut method = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::BadParameter(format!("sidecar line {line:?}")))?;
            match key {
                "phi" => phi = Some(parse_field(key, value)?),
                "varkappa" => varkappa = Some(parse_field(key, value)?),
                "kappa" => kappa = Some(parse_field(key, value)?),
                "lambda" => lambda = Some(parse_field(key, value)?),
                "cost" => cost = Some(parse_field(key, value)?),
                "method" => method = Some(PhiMethod::parse(value)?),
                _ => {} // unknown keys pass through for forward compatibility
            }
        }
        let missing = |name: &str| Error::BadParameter(format!("sidecar missing {name}"));
        let model = RoadModel {
            phi: phi.ok_or_else(|| missing("phi"))?,
            varkappa: varkappa.ok_or_else(|| missing("varkappa"))?,
            kappa: kappa.ok_or_else(|| missing("kappa"))?,
            lambda: lambda.ok_or_else(|| missing("lambda"))?,
        };
        model.validate()?;
        Ok(RoadFit {
            model,
            solution: PhiSolution {
                phi_star: model.phi,
                cost: cost.ok_or_else(|| missing("cost"))?,
                method: method.ok_or_else(|| missing("method"))?,
                candidates: None,
                delta: None,
            },
        })
    }
}

fn parse_field(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::BadParameter(format!("sidecar {key}={value:?}")))
}
