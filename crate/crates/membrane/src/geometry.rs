//! Geometry of an immersed periodic surface patch: fundamental forms, normal,
//! curvatures, Christoffel data, validity residuals, and the conformal torus
//! generator used for initial data.
//!
//! The chart is isothermal when `a11 = a22 = E` and `a12 = 0`; all evolution
//! formulas downstream assume that structure and the residuals here measure
//! how well a given embedding maintains it.

use crate::error::SimError;
use crate::spectral::{Grid, ScalarField, Vec3Field};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Everything the dynamics needs to know about the surface at one instant.
///
/// `l`, `m`, `n` are the second-fundamental-form coefficients (the classical
/// L, M, N); `normal` is the unit normal; `h` and `k` are the mean and
/// Gaussian curvatures derived from them. `e` is the isothermal conformal
/// factor, nominally equal to both `a11` and `a22`.
#[derive(Clone, Debug)]
pub struct GeometrySnapshot {
    pub r: Vec3Field,
    pub a11: ScalarField,
    pub a12: ScalarField,
    pub a22: ScalarField,
    pub e: ScalarField,
    pub l: ScalarField,
    pub m: ScalarField,
    pub n: ScalarField,
    pub normal: Vec3Field,
    pub h: ScalarField,
    pub k: ScalarField,
}

/// The two independent Christoffel values of an isothermal chart.
///
/// With `G = e_alpha_over_2e` and `D = e_beta_over_2e`, the full symbol set is
/// `Γ¹₁₁ = Γ²₁₂ = Γ²₂₁ = -Γ¹₂₂ = G` and `Γ²₂₂ = Γ¹₁₂ = Γ¹₂₁ = -Γ²₁₁ = D`.
#[derive(Clone, Debug)]
pub struct ChristoffelField {
    pub e_alpha_over_2e: ScalarField,
    pub e_beta_over_2e: ScalarField,
}

/// First fundamental form `a11 = Rα·Rα`, `a12 = Rα·Rβ`, `a22 = Rβ·Rβ`.
///
/// Products are kept pointwise (no spectral truncation): these fields feed
/// curvature oracles whose accuracy floor would otherwise be set by the
/// truncation tail rather than the derivative error.
pub fn first_forms(r: &Vec3Field) -> (ScalarField, ScalarField, ScalarField) {
    let ra = r.partial_alpha();
    let rb = r.partial_beta();
    (ra.dot(&ra), ra.dot(&rb), rb.dot(&rb))
}

/// Area density `|Rα × Rβ|` of the chart.
pub fn area_jacobian(r: &Vec3Field) -> ScalarField {
    r.partial_alpha().cross(&r.partial_beta()).magnitude()
}

/// Unit normal `n = Rα × Rβ / |Rα × Rβ|`.
///
/// Fails with `DegenerateChart` when the cross product dips below
/// `eps_degenerate` anywhere — the surface is no longer immersed and the
/// simulation must halt.
pub fn normal(r: &Vec3Field, eps_degenerate: f64) -> Result<Vec3Field, SimError> {
    let cross = r.partial_alpha().cross(&r.partial_beta());
    let jac = cross.magnitude();
    let min_jac = jac.min();
    if !(min_jac >= eps_degenerate) {
        return Err(SimError::DegenerateChart {
            min_jac,
            threshold: eps_degenerate,
        });
    }
    Ok(cross.scale_field(&jac.recip()))
}

/// Second fundamental form `L = Rαα·n`, `M = Rαβ·n`, `N = Rββ·n`.
/// The mixed coefficient is computed once from `(Rα)β`.
pub fn second_forms(
    r: &Vec3Field,
    normal: &Vec3Field,
) -> (ScalarField, ScalarField, ScalarField) {
    let ra = r.partial_alpha();
    let rb = r.partial_beta();
    (
        ra.partial_alpha().dot(normal),
        ra.partial_beta().dot(normal),
        rb.partial_beta().dot(normal),
    )
}

/// Mean and Gaussian curvatures `H = (L+N)/(2E)`, `K = (LN - M²)/E²` of an
/// isothermal chart. Fails if the conformal factor loses uniform positivity.
pub fn curvatures(
    e: &ScalarField,
    l: &ScalarField,
    m: &ScalarField,
    n: &ScalarField,
    c0: f64,
) -> Result<(ScalarField, ScalarField), SimError> {
    check_conformal_factor(e, c0)?;
    let h = &(l + n) / &e.scale(2.0);
    let k = &(&(l * n) - &(m * m)) / &(e * e);
    Ok((h, k))
}

/// Christoffel values `Eα/(2E)`, `Eβ/(2E)` of the isothermal metric.
pub fn christoffel(e: &ScalarField, c0: f64) -> Result<ChristoffelField, SimError> {
    check_conformal_factor(e, c0)?;
    let two_e = e.scale(2.0);
    Ok(ChristoffelField {
        e_alpha_over_2e: &e.partial_alpha() / &two_e,
        e_beta_over_2e: &e.partial_beta() / &two_e,
    })
}

pub(crate) fn check_conformal_factor(e: &ScalarField, c0: f64) -> Result<(), SimError> {
    let min_e = e.min();
    if !(min_e >= c0) {
        return Err(SimError::SmallConformalFactor { min_e, c0 });
    }
    Ok(())
}

/// How far the embedding is from isothermal: relative L2 sizes of
/// `a11 - a22` and of `a12`, both normalized by `‖a11‖`.
pub fn isothermal_residual(r: &Vec3Field) -> (f64, f64) {
    let (a11, a12, a22) = first_forms(r);
    let scale = a11.l2().max(f64::MIN_POSITIVE);
    ((&a11 - &a22).l2() / scale, a12.l2() / scale)
}

/// Gauss and Codazzi compatibility residuals of a snapshot (relative L2):
/// `LN - M² = ½(-ΔE + (Eα²+Eβ²)/E)`, `Nα = Mβ + H Eα`, `Lβ = Mα + H Eβ`.
/// Each defect is normalized by the sum of the L2 norms of its terms.
pub fn gauss_codazzi_residuals(snap: &GeometrySnapshot) -> (f64, f64, f64) {
    let e = &snap.e;
    let ea = e.partial_alpha();
    let eb = e.partial_beta();

    let lhs = &(&snap.l * &snap.n) - &(&snap.m * &snap.m);
    let grad_sq_over_e = &(&(&ea * &ea) + &(&eb * &eb)) / e;
    let rhs = (&grad_sq_over_e - &e.laplacian()).scale(0.5);
    let gauss = relative_defect(&(&lhs - &rhs), &[lhs.l2(), rhs.l2()]);

    let na = snap.n.partial_alpha();
    let mb = snap.m.partial_beta();
    let hea = &snap.h * &ea;
    let lb = snap.l.partial_beta();
    let ma = snap.m.partial_alpha();
    let heb = &snap.h * &eb;
    // One scale for both Codazzi directions: on symmetric surfaces a single
    // direction can be trivially 0 = 0, and normalizing it by its own terms
    // would just divide roundoff by roundoff.
    let codazzi_terms = [na.l2(), mb.l2(), hea.l2(), lb.l2(), ma.l2(), heb.l2()];
    let defect1 = &(&na - &mb) - &hea;
    let codazzi1 = relative_defect(&defect1, &codazzi_terms);
    let defect2 = &(&lb - &ma) - &heb;
    let codazzi2 = relative_defect(&defect2, &codazzi_terms);

    (gauss, codazzi1, codazzi2)
}

fn relative_defect(defect: &ScalarField, term_norms: &[f64]) -> f64 {
    let scale: f64 = term_norms.iter().sum();
    defect.l2() / scale.max(f64::MIN_POSITIVE)
}

impl GeometrySnapshot {
    /// Build the full snapshot from an embedding alone, taking the conformal
    /// factor as the symmetric estimate `E = (a11 + a22)/2`.
    pub fn from_embedding(
        r: &Vec3Field,
        c0: f64,
        eps_degenerate: f64,
    ) -> Result<GeometrySnapshot, SimError> {
        let (a11, _, a22) = first_forms(r);
        let e = (&a11 + &a22).scale(0.5);
        Self::from_embedding_with_e(r, e, c0, eps_degenerate)
    }

    /// Build the snapshot from an embedding plus an externally supplied
    /// conformal factor (the iterated-reconstruction path provides its own E).
    pub fn from_embedding_with_e(
        r: &Vec3Field,
        e: ScalarField,
        c0: f64,
        eps_degenerate: f64,
    ) -> Result<GeometrySnapshot, SimError> {
        let (a11, a12, a22) = first_forms(r);
        let normal = normal(r, eps_degenerate)?;
        let (l, m, n) = second_forms(r, &normal);
        let (h, k) = curvatures(&e, &l, &m, &n, c0)?;
        Ok(GeometrySnapshot {
            r: r.clone(),
            a11,
            a12,
            a22,
            e,
            l,
            m,
            n,
            normal,
            h,
            k,
        })
    }

    /// Elastic stationarity defect `ΔH/E + 2H(H² - K)`; identically zero on
    /// stationary surfaces such as the `a/r = √2` torus.
    pub fn willmore_residual(&self) -> ScalarField {
        let lap_term = &self.h.laplacian() / &self.e;
        let h_sq = &self.h * &self.h;
        let cubic = (&self.h * &(&h_sq - &self.k)).scale(2.0);
        &lap_term + &cubic
    }
}

/// Second period of the conformal chart of the `(a, r)` torus,
/// `2πr/√(a² - r²)`.
pub fn conformal_period(a: f64, r: f64) -> f64 {
    2.0 * PI * r / (a * a - r * r).sqrt()
}

/// Torus of revolution (ring radius `a`, tube radius `r`) in an isothermal
/// chart: the longitude stays `u = x1`, the latitude is reparameterized by
/// the conformal variable `w = x2` with `dw = r dv/(a + r cos v)`, which makes
/// `a11 = a22 = (a + r cos v)²` pointwise and `a12 = 0`.
///
/// All snapshot fields are filled with closed-form samples (the generator
/// knows the surface exactly); recomputing them spectrally from `R` is the
/// job of [`GeometrySnapshot::from_embedding`] and of the test oracles.
///
/// The latitude direction is chosen so that `n = Rα×Rβ/|·|` points into the
/// tube, giving `L, N > 0` near the outer equator and the textbook positive
/// mean curvature `H = (a + 2r cos v)/(2r(a + r cos v))`.
pub fn make_torus(a: f64, r: f64, grid: Grid) -> Result<GeometrySnapshot, SimError> {
    if !(r > 0.0 && a > r) {
        return Err(SimError::InvalidParameter(format!(
            "torus radii must satisfy a > r > 0, got a = {a}, r = {r}"
        )));
    }
    let expected_l2 = conformal_period(a, r);
    if (grid.l1() - 2.0 * PI).abs() > 1e-12 {
        return Err(SimError::BadAspect {
            expected: 2.0 * PI,
            got: grid.l1(),
        });
    }
    if (grid.l2() - expected_l2).abs() > 1e-12 {
        return Err(SimError::BadAspect {
            expected: expected_l2,
            got: grid.l2(),
        });
    }

    let map = ConformalMap::new(a, r);
    // Latitude v at each x2 grid line (the map is 1-D; invert once per line).
    let v_of_row: Vec<f64> = (0..grid.n2()).map(|j| map.v_of_w(grid.x2(j))).collect();

    let mut r_field = Vec3Field::zeros(grid);
    let mut e = ScalarField::zeros(grid);
    let mut l = ScalarField::zeros(grid);
    let mut m = ScalarField::zeros(grid);
    let mut n = ScalarField::zeros(grid);
    let mut h = ScalarField::zeros(grid);
    let mut k = ScalarField::zeros(grid);
    let mut normal = Vec3Field::zeros(grid);

    let n2 = grid.n2();
    for i in 0..grid.n1() {
        let u = grid.x1(i);
        let (cu, su) = (u.cos(), u.sin());
        for j in 0..n2 {
            let v = v_of_row[j];
            let (cv, sv) = (v.cos(), v.sin());
            let rho = a + r * cv;
            let idx = i * n2 + j;
            r_field.x.values_mut()[idx] = rho * cu;
            r_field.y.values_mut()[idx] = rho * su;
            r_field.z.values_mut()[idx] = -r * sv;
            e.values_mut()[idx] = rho * rho;
            l.values_mut()[idx] = rho * cv;
            m.values_mut()[idx] = 0.0;
            n.values_mut()[idx] = rho * rho / r;
            h.values_mut()[idx] = (a + 2.0 * r * cv) / (2.0 * r * rho);
            k.values_mut()[idx] = cv / (r * rho);
            normal.x.values_mut()[idx] = -cu * cv;
            normal.y.values_mut()[idx] = -su * cv;
            normal.z.values_mut()[idx] = sv;
        }
    }

    Ok(GeometrySnapshot {
        a11: e.clone(),
        a12: ScalarField::zeros(grid),
        a22: e.clone(),
        r: r_field,
        e,
        l,
        m,
        n,
        normal,
        h,
        k,
    })
}

/// The monotone conformal latitude map `w(v)` with `w' = r/(a + r cos v)`,
/// realized through the Fourier coefficients of the integrand (the
/// equispaced sums ARE the trapezoid rule, summed to spectral accuracy by
/// the antiderivative series) and inverted by safeguarded Newton iteration.
struct ConformalMap {
    a: f64,
    r: f64,
    mean: f64,
    /// Fourier coefficients of the integrand for positive k, truncated where
    /// they reach roundoff.
    coeffs: Vec<Complex64>,
}

impl ConformalMap {
    fn new(a: f64, r: f64) -> ConformalMap {
        const NQ: usize = 4096;
        let g = |v: f64| r / (a + r * v.cos());
        let samples: Vec<f64> = (0..NQ)
            .map(|q| g(2.0 * PI * q as f64 / NQ as f64))
            .collect();
        let mean = samples.iter().sum::<f64>() / NQ as f64;
        // Direct DFT of the smooth 1-D profile; kept coefficients decay
        // geometrically, so only the first few dozen survive.
        let mut coeffs = Vec::new();
        for k in 1..NQ / 2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (q, &s) in samples.iter().enumerate() {
                let phase = -2.0 * PI * (k * q) as f64 / NQ as f64;
                acc += s * Complex64::new(phase.cos(), phase.sin());
            }
            acc /= NQ as f64;
            coeffs.push(acc);
            if acc.norm() < 1e-18 {
                break;
            }
        }
        ConformalMap { a, r, mean, coeffs }
    }

    fn w_of_v(&self, v: f64) -> f64 {
        // Antiderivative of the Fourier series, normalized so w(0) = 0:
        // w(v) = mean*v + sum_k (2/k) * Im(c_k (e^{ikv} - 1)).
        let mut w = self.mean * v;
        for (idx, c) in self.coeffs.iter().enumerate() {
            let kf = (idx + 1) as f64;
            let (s, cos) = (kf * v).sin_cos();
            w += 2.0 / kf * (c.re * s + c.im * (cos - 1.0));
        }
        w
    }

    /// Invert w(v) on the principal branch by safeguarded Newton iteration
    /// (the derivative r/(a + r cos v) is available in closed form).
    fn v_of_w(&self, w: f64) -> f64 {
        let period = 2.0 * PI * self.mean;
        let (mut lo, mut hi) = (0.0, 2.0 * PI);
        let mut v = w / period * 2.0 * PI;
        for _ in 0..100 {
            let f = self.w_of_v(v) - w;
            if f > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            let dv = f * (self.a + self.r * v.cos()) / self.r;
            let mut next = v - dv;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - v).abs() < 1e-15 {
                return next;
            }
            v = next;
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;

    pub(crate) const C0: f64 = 1e-3;
    pub(crate) const EPS_DEG: f64 = 1e-8;

    pub(crate) fn torus_grid(a: f64, r: f64, n: usize) -> Grid {
        Grid::new(n, n, 2.0 * PI, conformal_period(a, r)).unwrap()
    }

    fn rotate(v: &Vec3Field, q: &[[f64; 3]; 3]) -> Vec3Field {
        let comp = |row: &[f64; 3]| {
            &(&v.x.scale(row[0]) + &v.y.scale(row[1])) + &v.z.scale(row[2])
        };
        Vec3Field::new(comp(&q[0]), comp(&q[1]), comp(&q[2]))
    }

    /// Rotation by angle t about the (1,1,1)/√3 axis (Rodrigues form).
    fn test_rotation(t: f64) -> [[f64; 3]; 3] {
        let k = 1.0 / 3.0f64.sqrt();
        let (s, c) = t.sin_cos();
        let mut q = [[0.0; 3]; 3];
        let axis = [k, k, k];
        for i in 0..3 {
            for j in 0..3 {
                let eye = if i == j { 1.0 } else { 0.0 };
                let mut cross = 0.0;
                // cross-product matrix [axis]_x
                let lev = |i: usize, j: usize, k: usize| -> f64 {
                    match (i, j, k) {
                        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
                        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
                        _ => 0.0,
                    }
                };
                for (kk, ax) in axis.iter().enumerate() {
                    cross += lev(i, kk, j) * ax;
                }
                q[i][j] = eye * c - cross * s + (1.0 - c) * axis[i] * axis[j];
            }
        }
        q
    }

    #[test]
    fn make_torus_rejects_bad_parameters_and_periods() {
        let g_ok = torus_grid(2.0, 1.0, 32);
        assert!(matches!(
            make_torus(1.0, 1.0, g_ok),
            Err(SimError::InvalidParameter(_))
        ));
        let g_bad = Grid::new(32, 32, 2.0 * PI, 3.0).unwrap();
        assert!(matches!(
            make_torus(2.0, 1.0, g_bad),
            Err(SimError::BadAspect { .. })
        ));
        let g_bad_l1 = Grid::new(32, 32, 1.0, conformal_period(2.0, 1.0)).unwrap();
        assert!(matches!(
            make_torus(2.0, 1.0, g_bad_l1),
            Err(SimError::BadAspect { .. })
        ));
    }

    #[test]
    fn generator_is_isothermal_to_spectral_accuracy() {
        for &(a, r) in &[(2.0, 1.0), (2.0f64.sqrt(), 1.0), (3.0, 0.7)] {
            let snap = make_torus(a, r, torus_grid(a, r, 64)).unwrap();
            let (diag, off) = isothermal_residual(&snap.r);
            assert!(diag < 1e-10, "a={a}: diag residual {diag}");
            assert!(off < 1e-10, "a={a}: off residual {off}");
            assert!((&snap.a11 - &snap.a22).linf() < 1e-14, "analytic fill is exact");
        }
    }

    #[test]
    fn spectral_recomputation_matches_analytic_fill() {
        // The generator fills fields in closed form; rebuilding everything
        // from R with spectral derivatives must agree. This is the primary
        // curvature oracle.
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 64)).unwrap();
        let re = GeometrySnapshot::from_embedding(&snap.r, C0, EPS_DEG).unwrap();
        for (name, got, want) in [
            ("E", &re.e, &snap.e),
            ("L", &re.l, &snap.l),
            ("M", &re.m, &snap.m),
            ("N", &re.n, &snap.n),
            ("H", &re.h, &snap.h),
            ("K", &re.k, &snap.k),
        ] {
            let err = (got - want).linf();
            assert!(err < 1e-8, "{name} differs by {err}");
        }
        let ndiff = (&re.normal - &snap.normal).linf();
        assert!(ndiff < 1e-9, "normal differs by {ndiff}");
    }

    #[test]
    fn curvature_point_values_match_textbook_formulas() {
        // Ten scattered grid points, spectral pipeline vs closed form; plus
        // the pinned outer-equator values H = 2/3, K = 1/3 for a=2, r=1.
        let (a, r) = (2.0, 1.0);
        let grid = torus_grid(a, r, 64);
        let snap = make_torus(a, r, grid).unwrap();
        let re = GeometrySnapshot::from_embedding(&snap.r, C0, EPS_DEG).unwrap();
        assert!((re.h.at(0, 0) - 2.0 / 3.0).abs() < 1e-8);
        assert!((re.k.at(0, 0) - 1.0 / 3.0).abs() < 1e-8);
        let pts = [(3usize, 7usize), (11, 0), (17, 23), (40, 40), (5, 60),
                   (63, 1), (30, 12), (9, 33), (51, 44), (22, 58)];
        for (i, j) in pts {
            assert!((re.h.at(i, j) - snap.h.at(i, j)).abs() < 1e-8, "H at ({i},{j})");
            assert!((re.k.at(i, j) - snap.k.at(i, j)).abs() < 1e-8, "K at ({i},{j})");
        }
        // Top circle (cos v = 0): K crosses zero; check the nearest grid line
        // against the analytic value rather than against exactly zero.
        let mut j_top = 0;
        let mut best = f64::INFINITY;
        for j in 0..grid.n2() {
            let kv = snap.k.at(0, j).abs();
            if kv < best {
                best = kv;
                j_top = j;
            }
        }
        assert!((re.k.at(0, j_top) - snap.k.at(0, j_top)).abs() < 1e-8);
        assert!(best < 0.1, "grid should straddle the K = 0 circle");
    }

    #[test]
    fn outer_equator_normal_is_radial() {
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 32)).unwrap();
        // v = 0 along j = 0; the unit normal there is ±(cos u, sin u, 0).
        for i in 0..32 {
            let u = snap.r.grid().x1(i);
            let dot = snap.normal.x.at(i, 0) * u.cos() + snap.normal.y.at(i, 0) * u.sin();
            assert!((dot.abs() - 1.0).abs() < 1e-12);
            assert!(snap.normal.z.at(i, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_is_unit_and_scale_invariant() {
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 32)).unwrap();
        let n1 = normal(&snap.r, EPS_DEG).unwrap();
        assert!((&n1.magnitude() - &ScalarField::constant(snap.r.grid(), 1.0)).linf() < 1e-10);
        let n2 = normal(&snap.r.scale(2.0), EPS_DEG).unwrap();
        assert!((&n1 - &n2).linf() < 1e-10);
    }

    #[test]
    fn degenerate_chart_is_refused() {
        let g = Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        // A "surface" collapsed to a curve: Rβ = 0 identically.
        let r = Vec3Field::from_fn(g, |x, _| [x.cos(), x.sin(), 0.0]);
        assert!(matches!(
            normal(&r, EPS_DEG),
            Err(SimError::DegenerateChart { .. })
        ));
    }

    #[test]
    fn reflection_flips_normal_and_second_forms() {
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 32)).unwrap();
        let reflected = Vec3Field::new(snap.r.x.clone(), snap.r.y.clone(), -&snap.r.z);
        let n_orig = normal(&snap.r, EPS_DEG).unwrap();
        let n_ref = normal(&reflected, EPS_DEG).unwrap();
        // (x,y,-z) is orientation-reversing: the oriented normal picks up an
        // extra sign on top of the mirror image.
        let flipped_normal = Vec3Field::new(-&n_orig.x, -&n_orig.y, n_orig.z.clone());
        let (l0, m0, n0) = second_forms(&snap.r, &n_orig);
        let gap = (&n_ref - &flipped_normal).linf();
        assert!(gap < 1e-12, "reflected normal mismatch {gap}");
        let (l1, m1, n1) = second_forms(&reflected, &n_ref);
        // Against the oriented normal the entire second form flips sign.
        assert!((&l1 + &l0).linf() < 1e-12);
        assert!((&m1 + &m0).linf() < 1e-12);
        assert!((&n1 + &n0).linf() < 1e-12);
    }

    #[test]
    fn curvatures_on_umbilic_data_and_small_e_rejection() {
        let g = Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let e = ScalarField::constant(g, 1.0);
        let (h, k) = curvatures(&e, &e, &ScalarField::zeros(g), &e, C0).unwrap();
        assert!((&h - &ScalarField::constant(g, 1.0)).linf() < 1e-14);
        assert!((&k - &ScalarField::constant(g, 1.0)).linf() < 1e-14);
        let tiny = ScalarField::constant(g, 1e-4);
        assert!(matches!(
            curvatures(&tiny, &e, &e, &e, C0),
            Err(SimError::SmallConformalFactor { .. })
        ));
    }

    #[test]
    fn two_he_minus_l_plus_n_vanishes_exactly() {
        let (a, r) = (1.7, 0.9);
        let snap = make_torus(a, r, torus_grid(a, r, 32)).unwrap();
        let re = GeometrySnapshot::from_embedding(&snap.r, C0, EPS_DEG).unwrap();
        let defect = &(&re.h.scale(2.0) * &re.e) - &(&re.l + &re.n);
        assert!(defect.linf() < 1e-12);
    }

    #[test]
    fn christoffel_matches_chain_rule_on_exponential_metric() {
        let g = Grid::new(32, 32, 2.0 * PI, 2.0 * PI).unwrap();
        let gfun = ScalarField::from_fn(g, |x, y| 0.3 * x.sin() + 0.2 * (x + 2.0 * y).cos());
        let e = gfun.map(f64::exp);
        let ch = christoffel(&e, C0).unwrap();
        let want_a = gfun.partial_alpha().scale(0.5);
        let want_b = gfun.partial_beta().scale(0.5);
        assert!((&ch.e_alpha_over_2e - &want_a).linf() < 1e-9);
        assert!((&ch.e_beta_over_2e - &want_b).linf() < 1e-9);
        let flat = christoffel(&ScalarField::constant(g, 2.0), C0).unwrap();
        assert!(flat.e_alpha_over_2e.linf() == 0.0 && flat.e_beta_over_2e.linf() < 1e-15);
    }

    #[test]
    fn euclidean_invariance_of_metric_and_curvatures() {
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 32)).unwrap();
        let q = test_rotation(0.83);
        let mut moved = rotate(&snap.r, &q);
        moved.x = moved.x.add_scalar(1.4);
        moved.z = moved.z.add_scalar(-0.6);
        let re0 = GeometrySnapshot::from_embedding(&snap.r, C0, EPS_DEG).unwrap();
        let re1 = GeometrySnapshot::from_embedding(&moved, C0, EPS_DEG).unwrap();
        assert!((&re0.a11 - &re1.a11).linf() < 1e-10);
        assert!((&re0.a12 - &re1.a12).linf() < 1e-10);
        assert!((&re0.h - &re1.h).linf() < 1e-10);
        assert!((&re0.k - &re1.k).linf() < 1e-10);
        assert!((&re0.l - &re1.l).linf() < 1e-10);
        let n_rotated = rotate(&re0.normal, &q);
        assert!((&n_rotated - &re1.normal).linf() < 1e-10);
        let (g0, c10, c20) = gauss_codazzi_residuals(&re0);
        let (g1, c11, c21) = gauss_codazzi_residuals(&re1);
        assert!((g0 - g1).abs() < 1e-10 && (c10 - c11).abs() < 1e-10 && (c20 - c21).abs() < 1e-10);
    }

    #[test]
    fn scaling_laws() {
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 32)).unwrap();
        let lam = 1.7;
        let re0 = GeometrySnapshot::from_embedding(&snap.r, C0, EPS_DEG).unwrap();
        let re1 = GeometrySnapshot::from_embedding(&snap.r.scale(lam), C0, EPS_DEG).unwrap();
        assert!((&re1.a11 - &re0.a11.scale(lam * lam)).linf() < 1e-9);
        assert!((&re1.l - &re0.l.scale(lam)).linf() < 1e-9);
        assert!((&re1.n - &re0.n.scale(lam)).linf() < 1e-9);
        assert!((&re1.h - &re0.h.scale(1.0 / lam)).linf() < 1e-10);
        assert!((&re1.k - &re0.k.scale(1.0 / (lam * lam))).linf() < 1e-10);
    }

    #[test]
    fn anisotropic_chart_has_order_one_isothermal_residual() {
        // Redeclare the longitude period as π (stretching x¹ by 2): a11 gains
        // a factor 4 over a22 and the diagonal residual becomes order one.
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 32)).unwrap();
        let squeezed = Grid::new(32, 32, PI, conformal_period(a, r)).unwrap();
        let reinterp = Vec3Field::new(
            ScalarField::from_values(squeezed, snap.r.x.values().to_vec()).unwrap(),
            ScalarField::from_values(squeezed, snap.r.y.values().to_vec()).unwrap(),
            ScalarField::from_values(squeezed, snap.r.z.values().to_vec()).unwrap(),
        );
        let (diag, _) = isothermal_residual(&reinterp);
        assert!(diag > 0.5, "expected order-one residual, got {diag}");
    }

    #[test]
    fn gauss_codazzi_residuals_behave() {
        let (a, r) = (2.0, 1.0);
        let snap = make_torus(a, r, torus_grid(a, r, 64)).unwrap();
        let re = GeometrySnapshot::from_embedding(&snap.r, C0, EPS_DEG).unwrap();
        let (g, c1, c2) = gauss_codazzi_residuals(&re);
        assert!(g < 1e-8, "gauss {g}");
        assert!(c1 < 1e-8, "codazzi1 {c1}");
        assert!(c2 < 1e-8, "codazzi2 {c2}");

        // Doubling H breaks the Codazzi identities at the size of ‖H ∇E‖.
        // On a revolution torus Eα = 0, so only the beta direction reacts.
        let mut broken = re.clone();
        broken.h = broken.h.scale(2.0);
        let (_, b1, b2) = gauss_codazzi_residuals(&broken);
        assert!(b2 > 1e-2, "codazzi2 should degrade: {b1}, {b2}");
        assert!(b1 < 1e-8, "alpha-direction identity stays trivial: {b1}");

        // Flat chart with vanishing second form: all residuals identically 0.
        let gflat = Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let zero = ScalarField::zeros(gflat);
        let flat = GeometrySnapshot {
            r: Vec3Field::zeros(gflat),
            a11: ScalarField::constant(gflat, 2.0),
            a12: zero.clone(),
            a22: ScalarField::constant(gflat, 2.0),
            e: ScalarField::constant(gflat, 2.0),
            l: zero.clone(),
            m: zero.clone(),
            n: zero.clone(),
            normal: Vec3Field::zeros(gflat),
            h: zero.clone(),
            k: zero,
        };
        let (fg, f1, f2) = gauss_codazzi_residuals(&flat);
        assert!(fg == 0.0 && f1 == 0.0 && f2 == 0.0);
    }

    #[test]
    fn willmore_residual_vanishes_at_the_stationary_ratio() {
        let r = 1.0;
        let a = 2.0f64.sqrt();
        let snap = make_torus(a, r, torus_grid(a, r, 64)).unwrap();
        let res = snap.willmore_residual().linf();
        assert!(res < 1e-6, "stationary torus residual {res}");
        // Generic ratio: decisively nonzero.
        let generic = make_torus(2.0, 1.0, torus_grid(2.0, 1.0, 64)).unwrap();
        assert!(generic.willmore_residual().linf() > 1e-2);
    }

    #[test]
    fn spectral_convergence_of_curvatures() {
        let r = 1.0;
        let a = 2.0f64.sqrt(); // hardest case: slowest-decaying tail
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let snap = make_torus(a, r, torus_grid(a, r, n)).unwrap();
            let re = GeometrySnapshot::from_embedding(&snap.r, C0, EPS_DEG).unwrap();
            errs.push((&re.h - &snap.h).linf());
        }
        assert!(
            errs[0] / errs[1] > 10.0,
            "convergence factor {} (errors {:?})",
            errs[0] / errs[1],
            errs
        );
    }

    #[test]
    fn conformal_map_inverts_to_machine_precision() {
        for &(a, r) in &[(2.0, 1.0), (2.0f64.sqrt(), 1.0)] {
            let map = ConformalMap::new(a, r);
            let l2 = conformal_period(a, r);
            assert!((2.0 * PI * map.mean - l2).abs() < 1e-12);
            for q in 0..17 {
                let w = q as f64 / 17.0 * l2;
                let v = map.v_of_w(w);
                assert!((map.w_of_v(v) - w).abs() < 1e-13, "round trip at w = {w}");
            }
        }
    }
}
