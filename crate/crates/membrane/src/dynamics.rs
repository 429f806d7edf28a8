//! Strain rates, the seven quadratic/cubic forcing fields F1–F7, the
//! right-hand sides of the coupled evolution system, and initial-flow
//! generators satisfying the tangential compatibility constraint.
//!
//! Conventions: `U1`, `U2`, `Un` are velocity components along the unit
//! tangents/normal; lowercase `u_i = U_i/√E`, `w_i = W_i/√E` are the chart
//! advection speeds. All nonlinear products go through the alias-free
//! product [`ScalarField::mul_d`]; quotients by the (uniformly positive)
//! conformal factor stay pointwise.

use crate::error::SimError;
use crate::geometry::{check_conformal_factor, christoffel, GeometrySnapshot};
use crate::spectral::{random_band_limited, Grid, ScalarField, Vec3Field};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The evolved unknowns: tangential velocity components, normal velocity,
/// and the mean curvature as an independent dynamical field.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub u1: ScalarField,
    pub u2: ScalarField,
    pub un: ScalarField,
    pub h: ScalarField,
}

impl FlowState {
    /// Zero velocity; curvature taken from the snapshot.
    pub fn rest(snap: &GeometrySnapshot) -> FlowState {
        let grid = snap.e.grid();
        FlowState {
            u1: ScalarField::zeros(grid),
            u2: ScalarField::zeros(grid),
            un: ScalarField::zeros(grid),
            h: snap.h.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u1.is_finite() && self.u2.is_finite() && self.un.is_finite() && self.h.is_finite()
    }

    /// Largest velocity amplitude, `max(|U1|, |U2|, |Un|)` (H excluded).
    pub fn velocity_linf(&self) -> f64 {
        self.u1.linf().max(self.u2.linf()).max(self.un.linf())
    }

    /// Project every evolved field onto the 2/3 band.
    pub fn dealias(&self) -> FlowState {
        FlowState {
            u1: self.u1.dealias(),
            u2: self.u2.dealias(),
            un: self.un.dealias(),
            h: self.h.dealias(),
        }
    }
}

/// Per-instant auxiliary fields: chart velocity, surface pressure, strain.
#[derive(Clone, Debug)]
pub struct AuxState {
    pub w1: ScalarField,
    pub w2: ScalarField,
    pub pi: ScalarField,
    pub s11: ScalarField,
    pub s12: ScalarField,
    pub s22: ScalarField,
}

impl AuxState {
    pub fn zeros(grid: Grid) -> AuxState {
        AuxState {
            w1: ScalarField::zeros(grid),
            w2: ScalarField::zeros(grid),
            pi: ScalarField::zeros(grid),
            s11: ScalarField::zeros(grid),
            s12: ScalarField::zeros(grid),
            s22: ScalarField::zeros(grid),
        }
    }
}

/// Time derivatives of the five evolved quantities.
#[derive(Clone, Debug)]
pub struct RhsBundle {
    pub du1: ScalarField,
    pub du2: ScalarField,
    pub dun: ScalarField,
    pub dh: ScalarField,
    pub dr: Vec3Field,
}

impl RhsBundle {
    pub fn is_finite(&self) -> bool {
        self.du1.is_finite()
            && self.du2.is_finite()
            && self.dun.is_finite()
            && self.dh.is_finite()
            && self.dr.is_finite()
    }
}

/// Strain rates of the surface flow:
///
/// ```text
/// S11 = (√E U1)α + (Eβ U2 − Eα U1)/(2√E) − L Un
/// S12 = ½(√E U1)β + ½(√E U2)α − (Eα U2 + Eβ U1)/(2√E) − M Un
/// S22 = (√E U2)β + (Eα U1 − Eβ U2)/(2√E) − N Un
/// ```
///
/// `S11 + S22` reduces to the incompressibility constraint plus
/// `(2EH − L − N) Un`, so it vanishes identically on constrained flows.
pub fn strain_rates(
    snap: &GeometrySnapshot,
    flow: &FlowState,
    c0: f64,
) -> Result<(ScalarField, ScalarField, ScalarField), SimError> {
    check_conformal_factor(&snap.e, c0)?;
    let sqe = snap.e.sqrt();
    let two_sqe = sqe.scale(2.0);
    let ea = snap.e.partial_alpha();
    let eb = snap.e.partial_beta();
    let sqe_u1 = sqe.mul_d(&flow.u1);
    let sqe_u2 = sqe.mul_d(&flow.u2);

    let s11 = {
        let shear = &(&eb.mul_d(&flow.u2) - &ea.mul_d(&flow.u1)) / &two_sqe;
        &(&sqe_u1.partial_alpha() + &shear) - &snap.l.mul_d(&flow.un)
    };
    let s12 = {
        let sym = &sqe_u1.partial_beta().scale(0.5) + &sqe_u2.partial_alpha().scale(0.5);
        let shear = &(&ea.mul_d(&flow.u2) + &eb.mul_d(&flow.u1)) / &two_sqe;
        &(&sym - &shear) - &snap.m.mul_d(&flow.un)
    };
    let s22 = {
        let shear = &(&ea.mul_d(&flow.u1) - &eb.mul_d(&flow.u2)) / &two_sqe;
        &(&sqe_u2.partial_beta() + &shear) - &snap.n.mul_d(&flow.un)
    };
    Ok((s11, s12, s22))
}

/// `L² + 2M² + N²` with alias-free squares (the squared second-form norm
/// times E²; shows up in F6, F7 and the curvature production terms).
pub(crate) fn second_form_quad(snap: &GeometrySnapshot) -> ScalarField {
    let ll = snap.l.mul_d(&snap.l);
    let mm = snap.m.mul_d(&snap.m);
    let nn = snap.n.mul_d(&snap.n);
    &(&ll + &mm.scale(2.0)) + &nn
}

/// `(L − N)² + 4M²` (equal to `4E²(H² − K)` on exact data).
pub(crate) fn second_form_diff(snap: &GeometrySnapshot) -> ScalarField {
    let d = &snap.l - &snap.n;
    &d.mul_d(&d) + &snap.m.mul_d(&snap.m).scale(4.0)
}

/// `L U1² + 2M U1 U2 + N U2²`: the second form contracted with the
/// tangential velocity. Shared by the normal forcing and the pressure source.
pub(crate) fn kinetic_quad(snap: &GeometrySnapshot, flow: &FlowState) -> ScalarField {
    let (u1, u2) = (&flow.u1, &flow.u2);
    &(&snap.l.mul_d(&u1.mul_d(u1)) + &snap.m.mul_d(&u1.mul_d(u2)).scale(2.0))
        + &snap.n.mul_d(&u2.mul_d(u2))
}

/// The seven forcing fields of the velocity/curvature equations, verbatim:
///
/// ```text
/// F1 = (Eβ U2 − Eα U1)/(2√E) + (Un/2)(N − L)
/// F2 = ½ Un²
/// F3 = (Eα U2 + Eβ U1)/√E + 2M Un
/// F4 = −U2 W1β/√E + (2M U2 + L U1) Un/E − ((U1−W1)U2 Eβ − U2² Eα)/(2E√E)
/// F5 = −U1 W2α/√E + (2M U1 + N U2) Un/E − ((U2−W2)U1 Eα − U1² Eβ)/(2E√E)
/// F6 = ε₀(L Eβ U2 − M Eα U2 − M Eβ U1 + N Eα U1)/(E²√E)
///        − 2ε₀ Un (L²+2M²+N²)/E² − H((L−N)²+4M²)/(4E²)
///        − (L U1² + 2M U1 U2 + N U2²)/E
/// F7 = Un (L²+2M²+N²)/(2E²)
/// ```
///
/// The two viscous entries of F6, together with the strain-gradient term of
/// the normal velocity equation, are exactly the expansion of the covariant
/// normal viscous force `2ε₀(S11 L + 2 S12 M + S22 N)/E²` on states that
/// satisfy the tangential compatibility constraint; that pins the `1/E²`
/// weight on the `Un (L²+2M²+N²)` term (any other weight is dimensionally
/// inconsistent with the rest of the equation and makes the constraint
/// drift at first order in the velocity).
///
/// Note that F6 keeps its curvature-only term when the velocity vanishes:
/// that term is the bending force, and together with `−(1/2E)ΔH` it makes
/// the normal acceleration proportional to the elastic stationarity defect.
pub fn forcing_terms(
    snap: &GeometrySnapshot,
    flow: &FlowState,
    aux: &AuxState,
    eps0: f64,
    c0: f64,
) -> Result<[ScalarField; 7], SimError> {
    check_conformal_factor(&snap.e, c0)?;
    let e = &snap.e;
    let sqe = e.sqrt();
    let two_sqe = sqe.scale(2.0);
    let e_sqe = e * &sqe;
    let e2 = e * e;
    let ea = e.partial_alpha();
    let eb = e.partial_beta();
    let (u1, u2, un) = (&flow.u1, &flow.u2, &flow.un);
    let (l, m, n) = (&snap.l, &snap.m, &snap.n);

    let f1 = {
        let shear = &(&eb.mul_d(u2) - &ea.mul_d(u1)) / &two_sqe;
        &shear + &un.mul_d(&(n - l)).scale(0.5)
    };

    let f2 = un.mul_d(un).scale(0.5);

    let f3 = {
        let shear = &(&ea.mul_d(u2) + &eb.mul_d(u1)) / &sqe;
        &shear + &m.mul_d(un).scale(2.0)
    };

    let f4 = {
        let drag = &u2.mul_d(&aux.w1.partial_beta()) / &sqe;
        let curv = &(&m.mul_d(u2).scale(2.0) + &l.mul_d(u1)).mul_d(un) / e;
        let metric = {
            let t1 = (&u1.mul_d(u2) - &aux.w1.mul_d(u2)).mul_d(&eb);
            let t2 = u2.mul_d(u2).mul_d(&ea);
            &(&t1 - &t2) / &e_sqe.scale(2.0)
        };
        &(&curv - &drag) - &metric
    };

    let f5 = {
        let drag = &u1.mul_d(&aux.w2.partial_alpha()) / &sqe;
        let curv = &(&m.mul_d(u1).scale(2.0) + &n.mul_d(u2)).mul_d(un) / e;
        let metric = {
            let t1 = (&u2.mul_d(u1) - &aux.w2.mul_d(u1)).mul_d(&ea);
            let t2 = u1.mul_d(u1).mul_d(&eb);
            &(&t1 - &t2) / &e_sqe.scale(2.0)
        };
        &(&curv - &drag) - &metric
    };

    let quad = second_form_quad(snap);
    let diff = second_form_diff(snap);

    let f6 = {
        let mixed = {
            let t = &(&l.mul_d(&eb).mul_d(u2) - &m.mul_d(&ea).mul_d(u2))
                + &(&n.mul_d(&ea).mul_d(u1) - &m.mul_d(&eb).mul_d(u1));
            &t.scale(eps0) / &(&e2 * &sqe)
        };
        let visc = &un.mul_d(&quad).scale(2.0 * eps0) / &e2;
        let bend = &flow.h.mul_d(&diff) / &e2.scale(4.0);
        let kinetic = &kinetic_quad(snap, flow) / e;
        &(&(&mixed - &visc) - &bend) - &kinetic
    };

    let f7 = &un.mul_d(&quad) / &e2.scale(2.0);

    Ok([f1, f2, f3, f4, f5, f6, f7])
}

/// Full right-hand side of the evolution system:
///
/// ```text
/// ∂U1/∂t = ε₀ Δ(√E U1)/(E√E) − Πα/√E + 2ε₀ F1α/(E√E) + F2α/(2√E)
///            − ε₀ F3β/(E√E) − (u1−w1) U1α − (u2−w2) U1β + F4
/// ∂U2/∂t = ε₀ Δ(√E U2)/(E√E) − Πβ/√E − 2ε₀ F1β/(E√E) + F2β/(2√E)
///            − ε₀ F3α/(E√E) − (u1−w1) U2α − (u2−w2) U2β + F5
/// ∂Un/∂t = −ΔH/(2E) − 2HΠ − (2u1−w1) Unα − (2u2−w2) Unβ
///            + 2ε₀ (L U1α + M U1β + M U2α + N U2β)/(E√E) + F6
/// ∂H/∂t  = ΔUn/(2E) + w1 Hα + w2 Hβ + F7
/// ∂R/∂t  = Un n + W1 Rα/√E + W2 Rβ/√E
/// ```
pub fn assemble_rhs(
    snap: &GeometrySnapshot,
    flow: &FlowState,
    aux: &AuxState,
    eps0: f64,
    c0: f64,
) -> Result<RhsBundle, SimError> {
    let [f1, f2, f3, f4, f5, f6, f7] = forcing_terms(snap, flow, aux, eps0, c0)?;
    let e = &snap.e;
    let sqe = e.sqrt();
    let e_sqe = e * &sqe;
    let two_e = e.scale(2.0);
    let (u1, u2, un, h) = (&flow.u1, &flow.u2, &flow.un, &flow.h);
    // Lowercase advection speeds.
    let u1l = u1 / &sqe;
    let u2l = u2 / &sqe;
    let w1l = &aux.w1 / &sqe;
    let w2l = &aux.w2 / &sqe;

    let du1 = {
        let visc = &sqe.mul_d(u1).laplacian().scale(eps0) / &e_sqe;
        let press = &aux.pi.partial_alpha() / &sqe;
        let forcing = &(&(&f1.partial_alpha().scale(2.0 * eps0) - &f3.partial_beta().scale(eps0))
            / &e_sqe)
            + &(&f2.partial_alpha() / &sqe.scale(2.0));
        let transport = &(&u1l - &w1l).mul_d(&u1.partial_alpha())
            + &(&u2l - &w2l).mul_d(&u1.partial_beta());
        &(&(&(&visc - &press) + &forcing) - &transport) + &f4
    };

    let du2 = {
        let visc = &sqe.mul_d(u2).laplacian().scale(eps0) / &e_sqe;
        let press = &aux.pi.partial_beta() / &sqe;
        let forcing = &(&(&f1.partial_beta().scale(-2.0 * eps0) - &f3.partial_alpha().scale(eps0))
            / &e_sqe)
            + &(&f2.partial_beta() / &sqe.scale(2.0));
        let transport = &(&u1l - &w1l).mul_d(&u2.partial_alpha())
            + &(&u2l - &w2l).mul_d(&u2.partial_beta());
        &(&(&(&visc - &press) + &forcing) - &transport) + &f5
    };

    let dun = {
        let lead = -&(&h.laplacian() / &two_e);
        let press = h.mul_d(&aux.pi).scale(2.0);
        let transport = &(&u1l.scale(2.0) - &w1l).mul_d(&un.partial_alpha())
            + &(&u2l.scale(2.0) - &w2l).mul_d(&un.partial_beta());
        let coupling = {
            let t = &(&snap.l.mul_d(&u1.partial_alpha()) + &snap.m.mul_d(&u1.partial_beta()))
                + &(&snap.m.mul_d(&u2.partial_alpha()) + &snap.n.mul_d(&u2.partial_beta()));
            &t.scale(2.0 * eps0) / &e_sqe
        };
        &(&(&(&lead - &press) - &transport) + &coupling) + &f6
    };

    let dh = {
        let lead = &un.laplacian() / &two_e;
        let transport = &w1l.mul_d(&h.partial_alpha()) + &w2l.mul_d(&h.partial_beta());
        &(&lead + &transport) + &f7
    };

    let dr = {
        let ra = snap.r.partial_alpha();
        let rb = snap.r.partial_beta();
        let mut parts = Vec3Field::new(
            snap.normal.x.mul_d(un),
            snap.normal.y.mul_d(un),
            snap.normal.z.mul_d(un),
        );
        let t1 = &aux.w1 / &sqe;
        let t2 = &aux.w2 / &sqe;
        parts = &parts
            + &Vec3Field::new(ra.x.mul_d(&t1), ra.y.mul_d(&t1), ra.z.mul_d(&t1));
        &parts + &Vec3Field::new(rb.x.mul_d(&t2), rb.y.mul_d(&t2), rb.z.mul_d(&t2))
    };

    Ok(RhsBundle {
        du1,
        du2,
        dun,
        dh,
        dr,
    })
}

/// Curvature evolution written directly in covariant form,
/// `2 ∂H/∂t = a^{αβ} Un_{,αβ} + Un b^α_β b^β_α + 2 w^γ ∂γ H`,
/// expanded in the isothermal chart with explicit Christoffel bookkeeping.
/// Used as an independent cross-check of `assemble_rhs`'s dH.
pub fn mean_curvature_rhs_direct(
    snap: &GeometrySnapshot,
    flow: &FlowState,
    aux: &AuxState,
    c0: f64,
) -> Result<ScalarField, SimError> {
    let ch = christoffel(&snap.e, c0)?;
    let sqe = snap.e.sqrt();
    let un = &flow.un;
    // a^{αβ} Un_{,αβ} = (1/E)(ΔUn − (Γ¹₁₁ + Γ¹₂₂) Unα − (Γ²₁₁ + Γ²₂₂) Unβ);
    // in the isothermal chart Γ¹₂₂ = −Γ¹₁₁ and Γ²₁₁ = −Γ²₂₂, so the symbol
    // sums cancel — they are spelled out so the cancellation is the code's.
    let g111 = &ch.e_alpha_over_2e;
    let g122 = -g111;
    let g222 = &ch.e_beta_over_2e;
    let g211 = -g222;
    let gamma_alpha = g111 + &g122;
    let gamma_beta = &g211 + g222;
    let cov_lap = {
        let t = &(&un.laplacian() - &gamma_alpha.mul_d(&un.partial_alpha()))
            - &gamma_beta.mul_d(&un.partial_beta());
        &t / &snap.e
    };
    // Un b^α_β b^β_α = Un (L² + 2M² + N²)/E².
    let production = &un.mul_d(&second_form_quad(snap)) / &(&snap.e * &snap.e);
    let transport = {
        let w1l = &aux.w1 / &sqe;
        let w2l = &aux.w2 / &sqe;
        &w1l.mul_d(&flow.h.partial_alpha()) + &w2l.mul_d(&flow.h.partial_beta())
    };
    Ok(&(&cov_lap + &production).scale(0.5) + &transport)
}

/// Relative size of the tangential compatibility defect
/// `(√E U1)α + (√E U2)β − 2EH Un` (plain products: this is a measurement).
pub fn incompressibility_residual(snap: &GeometrySnapshot, flow: &FlowState) -> f64 {
    let sqe = snap.e.sqrt();
    let div_a = (&sqe * &flow.u1).partial_alpha();
    let div_b = (&sqe * &flow.u2).partial_beta();
    let sink = (&(&snap.e * &flow.h) * &flow.un).scale(2.0);
    let defect = &(&div_a + &div_b) - &sink;
    let scale = (div_a.l2() + div_b.l2() + sink.l2()).max(f64::MIN_POSITIVE);
    defect.l2() / scale
}

/// Initial velocity profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialFlow {
    /// Zero velocity.
    Rest,
    /// Divergence-free tangential velocity from a random band-limited stream
    /// function; zero normal velocity.
    StreamFunction,
    /// Random band-limited normal velocity with the tangential components
    /// solved from the compatibility constraint (it prescribes exactly the
    /// divergence of `(√E U1, √E U2)`).
    NormalMode,
}

impl std::str::FromStr for InitialFlow {
    type Err = SimError;
    fn from_str(s: &str) -> Result<InitialFlow, SimError> {
        match s {
            "rest" => Ok(InitialFlow::Rest),
            "stream_function" => Ok(InitialFlow::StreamFunction),
            "normal_mode" => Ok(InitialFlow::NormalMode),
            other => Err(SimError::InvalidParameter(format!(
                "unknown initial flow {other:?} (expected rest, stream_function, or normal_mode)"
            ))),
        }
    }
}

/// Build an initial [`FlowState`] of the requested kind, scaled so the
/// largest velocity amplitude equals `amplitude`. H always starts from the
/// snapshot's curvature.
pub fn make_initial_flow(
    snap: &GeometrySnapshot,
    kind: InitialFlow,
    amplitude: f64,
    seed: u64,
    c0: f64,
) -> Result<FlowState, SimError> {
    check_conformal_factor(&snap.e, c0)?;
    let grid = snap.e.grid();
    let sqe = snap.e.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flow = match kind {
        InitialFlow::Rest => FlowState::rest(snap),
        InitialFlow::StreamFunction => {
            let chi = random_band_limited(grid, 3, 2.0, &mut rng);
            FlowState {
                u1: &chi.partial_beta() / &sqe,
                u2: -&(&chi.partial_alpha() / &sqe),
                un: ScalarField::zeros(grid),
                h: snap.h.clone(),
            }
        }
        InitialFlow::NormalMode => {
            let raw = random_band_limited(grid, 3, 2.0, &mut rng);
            // The constraint needs a solvable divergence: remove the
            // H-component of Un so that ∫ 2EH Un dx = 0.
            let weight = &snap.e * &snap.h;
            let lambda = weight.dot_l2(&raw) / weight.dot_l2(&snap.h);
            let un = &raw - &snap.h.scale(lambda);
            let source = (&weight * &un).scale(2.0);
            let (phi, _defect) = source.solve_poisson_meanzero();
            FlowState {
                u1: &phi.partial_alpha() / &sqe,
                u2: &phi.partial_beta() / &sqe,
                un,
                h: snap.h.clone(),
            }
        }
    };
    let peak = flow.velocity_linf();
    if peak > 0.0 && amplitude > 0.0 {
        let s = amplitude / peak;
        flow.u1 = flow.u1.scale(s);
        flow.u2 = flow.u2.scale(s);
        flow.un = flow.un.scale(s);
    }
    Ok(flow)
}
