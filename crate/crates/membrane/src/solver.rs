//! Time integration of the coupled membrane system: configuration, the
//! semi-implicit (Crank–Nicolson / Heun) stepper, the direct time-marching
//! driver, and the windowed fixed-point driver that solves the nonlinear
//! system by sweeps of a frozen-coefficient linear system, with
//! contraction reporting.

use crate::dynamics::{
    assemble_rhs, make_initial_flow, strain_rates, AuxState, FlowState, InitialFlow, RhsBundle,
};
use crate::elliptic::{
    assemble_pressure_rhs, pressure_coefficient, reconstruct_conformal_factor,
    reconstruct_surface, solve_pressure, solve_tangential_velocity, PressureProblem,
};
use crate::error::SimError;
use crate::geometry::{conformal_period, make_torus, GeometrySnapshot};
use crate::spectral::{cn_diffusion_step, cn_skew_pair_step, Grid, ScalarField, Vec3Field};
use std::f64::consts::PI;

/// How the driver advances in time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// March the nonlinear system step by step.
    Direct,
    /// Solve short windows by sweeps of a frozen-coefficient linear system.
    Picard,
}

impl std::str::FromStr for Mode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Mode, SimError> {
        match s {
            "direct" => Ok(Mode::Direct),
            "picard" => Ok(Mode::Picard),
            other => Err(SimError::InvalidParameter(format!(
                "unknown mode {other:?} (expected direct or picard)"
            ))),
        }
    }
}

/// Windowed-iteration controls.
#[derive(Clone, Copy, Debug)]
pub struct PicardConfig {
    /// Length of one fixed-point window.
    pub t_window: f64,
    /// Sweep budget per window.
    pub max_sweeps: usize,
    /// Stop when `D1 + δ·D2` falls below this.
    pub tol: f64,
    /// Weight δ of the geometry metric D2 in the stopping rule.
    pub delta_weight: f64,
}

impl Default for PicardConfig {
    fn default() -> PicardConfig {
        PicardConfig {
            t_window: 0.02,
            max_sweeps: 25,
            tol: 1e-8,
            delta_weight: 0.1,
        }
    }
}

/// Full run description. `Default` gives the documented defaults for every
/// field; a minimal user config only has to pin the grid and the torus.
#[derive(Clone, Debug)]
pub struct Config {
    pub n1: usize,
    pub n2: usize,
    /// Optional chart periods; when given they are cross-checked against
    /// the torus (the chart determines them, they are not free).
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub torus_a: f64,
    pub torus_r: f64,
    /// Shear viscosity ε₀.
    pub eps0: f64,
    /// Sobolev order for the sweep metrics (even, ≥ 6).
    pub s: usize,
    pub dt: f64,
    pub t_end: f64,
    pub mode: Mode,
    pub picard: PicardConfig,
    /// Uniform lower bound required of the conformal factor.
    pub c0: f64,
    /// Least admissible `∫ 4EH² dx` for the pressure solve.
    pub a0: f64,
    /// Pointwise lower bound for `|Rα × Rβ|`.
    pub eps_degenerate: f64,
    pub pressure_tol: f64,
    pub pressure_max_iter: usize,
    /// Relative mean above which the gauge solve flags its data as
    /// incompatible.
    pub tol_solvability: f64,
    /// Safety factor of the advisory explicit-remainder step bound.
    pub cfl: f64,
    pub initial_flow: InitialFlow,
    /// Peak velocity of the generated initial flow.
    pub amplitude: f64,
    pub seed: u64,
    /// Record every k-th step (the initial and final states always are).
    pub output_every: usize,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            n1: 48,
            n2: 48,
            l1: None,
            l2: None,
            torus_a: 2.0,
            torus_r: 1.0,
            eps0: 1.0,
            s: 6,
            dt: 1e-4,
            t_end: 0.05,
            mode: Mode::Direct,
            picard: PicardConfig::default(),
            c0: 1e-3,
            a0: 1e-8,
            eps_degenerate: 1e-8,
            pressure_tol: 1e-10,
            pressure_max_iter: 500,
            tol_solvability: 1e-6,
            cfl: 0.5,
            initial_flow: InitialFlow::Rest,
            amplitude: 1e-2,
            seed: 0,
            output_every: 1,
        }
    }
}

fn near_multiple(x: f64, unit: f64) -> bool {
    let n = (x / unit).round();
    n >= 1.0 && (x - n * unit).abs() <= 1e-9 * x.abs().max(unit)
}

impl Config {
    /// Check every documented constraint; the message names the violated
    /// one.
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: &str| Err(SimError::ConfigValidation(msg.to_string()));
        if self.n1 < 4 || self.n1 % 2 != 0 || self.n2 < 4 || self.n2 % 2 != 0 {
            return fail("grid.n1 and grid.n2 must be even and at least 4");
        }
        if !(self.torus_r > 0.0 && self.torus_a > self.torus_r) {
            return fail("torus must satisfy a > r > 0");
        }
        if !(self.eps0 >= 0.0) {
            return fail("eps0 >= 0");
        }
        if self.s < 6 || self.s % 2 != 0 {
            return fail("s must be an even integer >= 6");
        }
        if !(self.dt > 0.0) {
            return fail("dt > 0");
        }
        if !(self.t_end >= self.dt) {
            return fail("t_end >= dt");
        }
        if !near_multiple(self.t_end, self.dt) {
            return fail("t_end must be an integer multiple of dt");
        }
        if !(self.picard.delta_weight > 0.0) {
            return fail("picard.delta_weight > 0");
        }
        if !(self.picard.tol > 0.0) {
            return fail("picard.tol > 0");
        }
        if self.picard.max_sweeps == 0 {
            return fail("picard.max_sweeps >= 1");
        }
        if self.mode == Mode::Picard {
            if !(self.picard.t_window > 0.0) {
                return fail("picard.t_window > 0");
            }
            if self.picard.t_window > self.t_end + 1e-12 {
                return fail("picard.t_window <= t_end");
            }
            if !near_multiple(self.picard.t_window, self.dt) {
                return fail("picard.t_window must be an integer multiple of dt");
            }
            if !near_multiple(self.t_end, self.picard.t_window) {
                return fail("t_end must be an integer multiple of picard.t_window");
            }
        }
        if !(self.c0 > 0.0) {
            return fail("c0 > 0");
        }
        if !(self.a0 > 0.0) {
            return fail("a0 > 0");
        }
        if !(self.eps_degenerate > 0.0) {
            return fail("eps_degenerate > 0");
        }
        if !(self.pressure_tol > 0.0) {
            return fail("pressure.tol > 0");
        }
        if self.pressure_max_iter == 0 {
            return fail("pressure.max_iter >= 1");
        }
        if !(self.tol_solvability > 0.0) {
            return fail("tol_solvability > 0");
        }
        if !(self.cfl > 0.0) {
            return fail("cfl > 0");
        }
        if !(self.amplitude >= 0.0) {
            return fail("amplitude >= 0");
        }
        if self.output_every == 0 {
            return fail("output.every >= 1");
        }
        if let Some(l1) = self.l1 {
            if (l1 - 2.0 * PI).abs() > 1e-12 * (2.0 * PI) {
                return Err(SimError::ConfigValidation(format!(
                    "grid.l1 must equal 2π for the torus chart (got {l1:.15e})"
                )));
            }
        }
        if let Some(l2) = self.l2 {
            let want = conformal_period(self.torus_a, self.torus_r);
            if (l2 - want).abs() > 1e-12 * want {
                return Err(SimError::ConfigValidation(format!(
                    "grid.l2 must equal the conformal period {want:.15e} of the torus (got {l2:.15e})"
                )));
            }
        }
        Ok(())
    }

    /// The chart grid this config describes (periods derived from the
    /// torus; explicit `l1`/`l2` have already been cross-checked).
    pub fn grid(&self) -> Result<Grid, SimError> {
        Grid::new(
            self.n1,
            self.n2,
            2.0 * PI,
            conformal_period(self.torus_a, self.torus_r),
        )
    }
}

/// Iteration counts and solvability data of the per-instant solves.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolveStats {
    pub pi_iters: usize,
    pub gauge_mean1: f64,
    pub gauge_mean2: f64,
    pub gauge_solvable: bool,
}

/// Everything known at one instant.
#[derive(Clone, Debug)]
pub struct SimState {
    pub t: f64,
    pub snap: GeometrySnapshot,
    pub flow: FlowState,
    pub aux: AuxState,
    pub stats: SolveStats,
}

/// One recorded trajectory point. The reference and reconstructed
/// embeddings are kept only in sweep mode, where they are distinct
/// objects.
#[derive(Clone, Debug)]
pub struct Stamp {
    pub t: f64,
    pub snap: GeometrySnapshot,
    pub flow: FlowState,
    pub aux: AuxState,
    pub stats: SolveStats,
    pub r_tilde: Option<Vec3Field>,
    pub r_hat: Option<Vec3Field>,
}

/// Time series of recorded states; `error` holds the failure that cut the
/// run short, if any (the stamps before it are intact).
#[derive(Debug, Default)]
pub struct Trajectory {
    pub stamps: Vec<Stamp>,
    pub error: Option<SimError>,
}

/// Per-window sweep convergence record.
#[derive(Clone, Debug)]
pub struct IterationReport {
    pub window_start: f64,
    /// Velocity difference metric per sweep.
    pub d1: Vec<f64>,
    /// Geometry difference metric per sweep.
    pub d2: Vec<f64>,
    /// `(D1 + δ D2)` ratio between consecutive sweeps (first entry 1).
    pub ratio: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

/// Chart velocity, strain rates, and pressure for a given instantaneous
/// state, plus the solve statistics.
pub fn solve_aux(
    snap: &GeometrySnapshot,
    flow: &FlowState,
    cfg: &Config,
) -> Result<(AuxState, SolveStats), SimError> {
    let gauge = solve_tangential_velocity(snap, flow, cfg.tol_solvability);
    let (s11, s12, s22) = strain_rates(snap, flow, cfg.c0)?;
    let mut aux = AuxState {
        w1: gauge.w1,
        w2: gauge.w2,
        pi: ScalarField::zeros(snap.e.grid()),
        s11,
        s12,
        s22,
    };
    let rhs = assemble_pressure_rhs(snap, flow, &aux, cfg.eps0, cfg.c0)?;
    let sol = solve_pressure(&PressureProblem {
        coeff: pressure_coefficient(snap, flow),
        rhs,
        tol: cfg.pressure_tol,
        max_iter: cfg.pressure_max_iter,
        min_coeff_integral: cfg.a0,
    })?;
    aux.pi = sol.pi;
    Ok((
        aux,
        SolveStats {
            pi_iters: sol.iterations,
            gauge_mean1: gauge.mean1,
            gauge_mean2: gauge.mean2,
            gauge_solvable: gauge.solvable,
        },
    ))
}

/// Initial state: analytic torus, generated initial flow, auxiliary
/// solves.
pub fn prepare_state(cfg: &Config) -> Result<SimState, SimError> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let snap = make_torus(cfg.torus_a, cfg.torus_r, grid)?;
    let flow = make_initial_flow(&snap, cfg.initial_flow, cfg.amplitude, cfg.seed, cfg.c0)?;
    let (aux, stats) = solve_aux(&snap, &flow, cfg)?;
    Ok(SimState {
        t: 0.0,
        snap,
        flow,
        aux,
        stats,
    })
}

/// Advisory bound on the explicitly treated remainder: the implicit
/// operators use the spatial mean Ē, so the variable-coefficient
/// difference and the advection speeds limit the stable step,
///
/// ```text
/// dt_max = cfl / ( max|1/2E − 1/2Ē| |k|²_max
///                + ε₀ max|1/E√E − 1/Ē√Ē| √Ē |k|²_max
///                + ‖advection‖_∞ |k|_max )
/// ```
pub fn dt_max(state: &SimState, cfg: &Config) -> f64 {
    let grid = state.snap.e.grid();
    let k1 = PI * grid.n1() as f64 / grid.l1();
    let k2 = PI * grid.n2() as f64 / grid.l2();
    let ksq = k1 * k1 + k2 * k2;
    let e = &state.snap.e;
    let ebar = e.mean();
    let skew_spread = e
        .map(|v| (0.5 / v - 0.5 / ebar).abs())
        .max();
    let visc_spread = e
        .map(|v| (1.0 / (v * v.sqrt()) - 1.0 / (ebar * ebar.sqrt())).abs())
        .max();
    let sqe = e.sqrt();
    let u1l = &state.flow.u1 / &sqe;
    let u2l = &state.flow.u2 / &sqe;
    let w1l = &state.aux.w1 / &sqe;
    let w2l = &state.aux.w2 / &sqe;
    let advection = [
        (&u1l - &w1l).linf(),
        (&u2l - &w2l).linf(),
        (&u1l.scale(2.0) - &w1l).linf(),
        (&u2l.scale(2.0) - &w2l).linf(),
        w1l.linf(),
        w2l.linf(),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    let denom = skew_spread * ksq
        + cfg.eps0 * visc_spread * ebar.sqrt() * ksq
        + advection * ksq.sqrt();
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        cfg.cfl / denom
    }
}

struct Remainders {
    u1: ScalarField,
    u2: ScalarField,
    un: ScalarField,
    h: ScalarField,
}

/// What is left of the right-hand side once the implicitly treated
/// constant-coefficient parts (`ν = ε₀/Ē` diffusion on U1, U2; the
/// `1/(2Ē)` skew coupling of Uⁿ and H) are subtracted at this state.
fn explicit_remainders(flow: &FlowState, rhs: &RhsBundle, nu: f64, c: f64) -> Remainders {
    Remainders {
        u1: &rhs.du1 - &flow.u1.laplacian().scale(nu),
        u2: &rhs.du2 - &flow.u2.laplacian().scale(nu),
        un: &rhs.dun + &flow.h.laplacian().scale(c),
        h: &rhs.dh - &flow.un.laplacian().scale(c),
    }
}

fn average(a: &Remainders, b: &Remainders) -> Remainders {
    Remainders {
        u1: (&a.u1 + &b.u1).scale(0.5),
        u2: (&a.u2 + &b.u2).scale(0.5),
        un: (&a.un + &b.un).scale(0.5),
        h: (&a.h + &b.h).scale(0.5),
    }
}

fn cn_flow_step(
    flow: &FlowState,
    rem: &Remainders,
    nu: f64,
    c: f64,
    dt: f64,
) -> FlowState {
    let u1 = cn_diffusion_step(&flow.u1, &rem.u1, nu, dt);
    let u2 = cn_diffusion_step(&flow.u2, &rem.u2, nu, dt);
    let (un, h) = cn_skew_pair_step(&flow.un, &flow.h, &rem.un, &rem.h, c, dt);
    FlowState { u1, u2, un, h }.dealias()
}

fn advance_embedding(r: &Vec3Field, d: &Vec3Field, dt: f64) -> Vec3Field {
    r + &d.scale(dt)
}

/// One semi-implicit step of the full nonlinear system.
///
/// Predictor/corrector in the explicit remainder (Heun), Crank–Nicolson in
/// the frozen constant-coefficient operators (`(ε₀/Ē)Δ` for the
/// tangential velocity, the `1/(2Ē)` skew pair for `(Uⁿ, H)`), explicit
/// trapezoid for the embedding. The evolved fields are projected back onto
/// the 2/3 band after each stage; the embedding is never truncated (its
/// spectral tail carries curvature). Geometry, chart velocity, and
/// pressure are re-solved at every stage state.
pub fn step_imex(state: &SimState, dt: f64, cfg: &Config) -> Result<SimState, SimError> {
    let ebar = state.snap.e.mean();
    let nu = cfg.eps0 / ebar;
    let c = 0.5 / ebar;
    let t_new = state.t + dt;

    let rhs1 = assemble_rhs(&state.snap, &state.flow, &state.aux, cfg.eps0, cfg.c0)?;
    let rem1 = explicit_remainders(&state.flow, &rhs1, nu, c);

    // Predictor: full CN step with start-of-step remainders.
    let flow_p = cn_flow_step(&state.flow, &rem1, nu, c, dt);
    let r_p = advance_embedding(&state.snap.r, &rhs1.dr, dt);
    if !(flow_p.is_finite() && r_p.is_finite()) {
        return Err(SimError::StepTooLarge { t: t_new });
    }
    let snap_p = GeometrySnapshot::from_embedding(&r_p, cfg.c0, cfg.eps_degenerate)?;
    let (aux_p, _) = solve_aux(&snap_p, &flow_p, cfg)?;
    let rhs2 = assemble_rhs(&snap_p, &flow_p, &aux_p, cfg.eps0, cfg.c0)?;
    let rem2 = explicit_remainders(&flow_p, &rhs2, nu, c);

    // Corrector: same CN solve from the original state, remainders
    // averaged across the step.
    let flow_new = cn_flow_step(&state.flow, &average(&rem1, &rem2), nu, c, dt);
    let r_new = advance_embedding(
        &state.snap.r,
        &(&rhs1.dr + &rhs2.dr).scale(0.5),
        dt,
    );
    if !(flow_new.is_finite() && r_new.is_finite()) {
        return Err(SimError::StepTooLarge { t: t_new });
    }
    let snap_new = GeometrySnapshot::from_embedding(&r_new, cfg.c0, cfg.eps_degenerate)?;
    let (aux_new, stats) = solve_aux(&snap_new, &flow_new, cfg)?;
    Ok(SimState {
        t: t_new,
        snap: snap_new,
        flow: flow_new,
        aux: aux_new,
        stats,
    })
}

fn stamp_of(state: &SimState) -> Stamp {
    Stamp {
        t: state.t,
        snap: state.snap.clone(),
        flow: state.flow.clone(),
        aux: state.aux.clone(),
        stats: state.stats,
        r_tilde: None,
        r_hat: None,
    }
}

/// March the nonlinear system from generated initial data to `t_end`,
/// recording every `output_every`-th step (plus the first and last). A
/// step failure ends the run early; the partial trajectory and the error
/// are both returned.
pub fn run_direct(cfg: &Config) -> Result<Trajectory, SimError> {
    let mut state = prepare_state(cfg)?;
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    let advisory = dt_max(&state, cfg);
    if cfg.dt > advisory {
        eprintln!(
            "warning: dt = {:.3e} exceeds the explicit-remainder bound {advisory:.3e}",
            cfg.dt
        );
    }
    let mut traj = Trajectory {
        stamps: vec![stamp_of(&state)],
        error: None,
    };
    let t0 = state.t;
    for step in 1..=n_steps {
        match step_imex(&state, cfg.dt, cfg) {
            Ok(next) => {
                state = next;
                // Pin the clock to a multiple of dt; summing dt per step
                // drifts by an ulp per thousand steps.
                state.t = t0 + step as f64 * cfg.dt;
                if step % cfg.output_every == 0 || step == n_steps {
                    traj.stamps.push(stamp_of(&state));
                }
            }
            Err(e) => {
                traj.error = Some(e);
                break;
            }
        }
    }
    Ok(traj)
}

/// The four velocity-difference norms that enter the sweep metric D1.
fn d1_metric(new: &[FlowState], old: &[FlowState], s: usize, dt: f64) -> f64 {
    let s3 = (s - 3) as f64;
    let s2 = (s - 2) as f64;
    let mut sup = 0.0f64;
    let mut integral = 0.0f64;
    let last = new.len() - 1;
    for (j, (a, b)) in new.iter().zip(old).enumerate() {
        let du1 = &a.u1 - &b.u1;
        let du2 = &a.u2 - &b.u2;
        let dun = &a.un - &b.un;
        let dh = &a.h - &b.h;
        let instant = (du1.sobolev_norm(s3).powi(2)
            + du2.sobolev_norm(s3).powi(2)
            + dun.sobolev_norm(s3).powi(2)
            + dh.sobolev_norm(s3).powi(2))
        .sqrt();
        sup = sup.max(instant);
        let weight = if j == 0 || j == last { 0.5 } else { 1.0 };
        integral +=
            weight * dt * (du1.sobolev_norm(s2).powi(2) + du2.sobolev_norm(s2).powi(2));
    }
    sup + integral
}

/// The geometry difference norm D2 (embedding and conformal factor).
fn d2_metric(
    new_r: &[Vec3Field],
    old_r: &[Vec3Field],
    new_e: &[ScalarField],
    old_e: &[ScalarField],
    s: usize,
) -> f64 {
    let s1 = (s - 1) as f64;
    let mut sup = 0.0f64;
    for j in 0..new_r.len() {
        let dr = (&new_r[j] - &old_r[j]).sobolev_norm(s1);
        let de = (&new_e[j] - &old_e[j]).sobolev_norm(s1);
        sup = sup.max(dr + de);
    }
    sup
}

struct SweepData {
    snaps: Vec<GeometrySnapshot>,
    flows: Vec<FlowState>,
    auxes: Vec<AuxState>,
    stats: Vec<SolveStats>,
    r_tilde: Vec<Vec3Field>,
    r_hat: Vec<Vec3Field>,
}

/// Per-stamp frozen data for one sweep: the geometry coefficients, the
/// transport speeds of the previous iterate, and the forcing `g` — the
/// full right-hand side at the previous iterate minus the linear operator
/// applied to it, so that `L·flow + g` equals the true right-hand side
/// exactly when `flow` is the previous iterate.
struct FrozenStamp {
    snap: GeometrySnapshot,
    adv_t1: ScalarField,
    adv_t2: ScalarField,
    adv_n1: ScalarField,
    adv_n2: ScalarField,
    w1l: ScalarField,
    w2l: ScalarField,
    g: RhsBundle,
    eps0: f64,
}

/// The part of the right-hand side that is linear in the flow for frozen
/// geometry and frozen transport speeds: the variable-coefficient
/// Laplacians, the advection terms, and the curvature coupling. Pressure,
/// chart velocity, and the quadratic terms stay in the frozen forcing.
fn linear_flow_op(
    fz: &FrozenStamp,
    flow: &FlowState,
) -> (ScalarField, ScalarField, ScalarField, ScalarField) {
    let e = &fz.snap.e;
    let sqe = e.sqrt();
    let e_sqe = e * &sqe;
    let two_e = e.scale(2.0);
    let (u1, u2, un, h) = (&flow.u1, &flow.u2, &flow.un, &flow.h);
    let eps0 = fz.eps0;

    let du1 = {
        let visc = &sqe.mul_d(u1).laplacian().scale(eps0) / &e_sqe;
        let transport = &fz.adv_t1.mul_d(&u1.partial_alpha()) + &fz.adv_t2.mul_d(&u1.partial_beta());
        &visc - &transport
    };
    let du2 = {
        let visc = &sqe.mul_d(u2).laplacian().scale(eps0) / &e_sqe;
        let transport = &fz.adv_t1.mul_d(&u2.partial_alpha()) + &fz.adv_t2.mul_d(&u2.partial_beta());
        &visc - &transport
    };
    let dun = {
        let lead = -&(&h.laplacian() / &two_e);
        let transport = &fz.adv_n1.mul_d(&un.partial_alpha()) + &fz.adv_n2.mul_d(&un.partial_beta());
        let coupling = {
            let t = &(&fz.snap.l.mul_d(&u1.partial_alpha()) + &fz.snap.m.mul_d(&u1.partial_beta()))
                + &(&fz.snap.m.mul_d(&u2.partial_alpha()) + &fz.snap.n.mul_d(&u2.partial_beta()));
            &t.scale(2.0 * eps0) / &e_sqe
        };
        &(&lead - &transport) + &coupling
    };
    let dh = {
        let lead = &un.laplacian() / &two_e;
        let transport = &fz.w1l.mul_d(&h.partial_alpha()) + &fz.w2l.mul_d(&h.partial_beta());
        &lead + &transport
    };
    (du1, du2, dun, dh)
}

fn freeze_stamp(
    snap: &GeometrySnapshot,
    flow: &FlowState,
    aux: &AuxState,
    cfg: &Config,
) -> Result<FrozenStamp, SimError> {
    let sqe = snap.e.sqrt();
    let u1l = &flow.u1 / &sqe;
    let u2l = &flow.u2 / &sqe;
    let w1l = &aux.w1 / &sqe;
    let w2l = &aux.w2 / &sqe;
    let mut fz = FrozenStamp {
        snap: snap.clone(),
        adv_t1: &u1l - &w1l,
        adv_t2: &u2l - &w2l,
        adv_n1: &u1l.scale(2.0) - &w1l,
        adv_n2: &u2l.scale(2.0) - &w2l,
        w1l,
        w2l,
        g: assemble_rhs(snap, flow, aux, cfg.eps0, cfg.c0)?,
        eps0: cfg.eps0,
    };
    let (l1, l2, ln, lh) = linear_flow_op(&fz, flow);
    fz.g.du1 = &fz.g.du1 - &l1;
    fz.g.du2 = &fz.g.du2 - &l2;
    fz.g.dun = &fz.g.dun - &ln;
    fz.g.dh = &fz.g.dh - &lh;
    Ok(fz)
}

/// Linear-system remainder at one stamp: the frozen-coefficient operator
/// applied to the current flow, plus the frozen forcing, minus the
/// constant-coefficient parts the CN kernels treat implicitly.
fn linear_remainders(fz: &FrozenStamp, flow: &FlowState, nu: f64, c: f64) -> Remainders {
    let (l1, l2, ln, lh) = linear_flow_op(fz, flow);
    Remainders {
        u1: &(&l1 + &fz.g.du1) - &flow.u1.laplacian().scale(nu),
        u2: &(&l2 + &fz.g.du2) - &flow.u2.laplacian().scale(nu),
        un: &(&ln + &fz.g.dun) + &flow.h.laplacian().scale(c),
        h: &(&lh + &fz.g.dh) - &flow.un.laplacian().scale(c),
    }
}

/// One fixed-point window starting from `initial`. Every sweep solves a
/// LINEAR system: coefficients, transport speeds, pressure, chart
/// velocity, and all quadratic terms are frozen at the previous sweep's
/// trajectory, while the variable-coefficient Laplacians, advection, and
/// curvature coupling act on the new iterate. The linear system is
/// marched by the same predictor/corrector Crank–Nicolson machinery as
/// the direct stepper (with Ē taken at the window start), the reference
/// embedding is integrated by the trapezoid rule from frozen velocities,
/// and the geometry is rebuilt per stamp through the reconstruction
/// chain. Stamp 0 is pinned to the incoming state; the sweep-0 seed runs
/// the initial data once through the same reconstruction chain so sweep
/// differences measure motion, not the chain's truncation offset.
fn picard_window(
    initial: &SimState,
    cfg: &Config,
) -> Result<(Vec<Stamp>, IterationReport), SimError> {
    let dt = cfg.dt;
    let steps = (cfg.picard.t_window / dt).round() as usize;
    let ebar = initial.snap.e.mean();
    let nu = cfg.eps0 / ebar;
    let c = 0.5 / ebar;
    let delta = cfg.picard.delta_weight;

    // Sweep 0: constant-in-time seed, with the geometry of stamps ≥ 1
    // expressed through the reconstruction chain at the initial data.
    let (seed_hat, seed_snap, seed_aux, seed_stats) = {
        let (hat, fresh) = reconstruct_surface(&initial.flow.h, &initial.snap.r);
        let e_new = reconstruct_conformal_factor(&fresh);
        let snap =
            GeometrySnapshot::from_embedding_with_e(&fresh, e_new, cfg.c0, cfg.eps_degenerate)?;
        let (aux, stats) = solve_aux(&snap, &initial.flow, cfg)?;
        (hat, snap, aux, stats)
    };
    let mut prev = SweepData {
        snaps: vec![seed_snap; steps + 1],
        flows: vec![initial.flow.clone(); steps + 1],
        auxes: vec![seed_aux; steps + 1],
        stats: vec![seed_stats; steps + 1],
        r_tilde: vec![initial.snap.r.clone(); steps + 1],
        r_hat: vec![seed_hat; steps + 1],
    };
    prev.snaps[0] = initial.snap.clone();
    prev.auxes[0] = initial.aux.clone();
    prev.stats[0] = initial.stats;
    prev.r_hat[0] = initial.snap.r.clone();

    let mut report = IterationReport {
        window_start: initial.t,
        d1: Vec::new(),
        d2: Vec::new(),
        ratio: Vec::new(),
        converged: false,
        sweeps: 0,
    };
    let mut prev_metric: Option<f64> = None;
    let mut expanding_streak = 0usize;

    for sweep in 1..=cfg.picard.max_sweeps {
        // Freeze coefficients and forcings at every stamp of the previous
        // sweep.
        let mut frozen = Vec::with_capacity(steps + 1);
        for j in 0..=steps {
            frozen.push(freeze_stamp(
                &prev.snaps[j],
                &prev.flows[j],
                &prev.auxes[j],
                cfg,
            )?);
        }

        // March the linear system with the direct stepper's
        // predictor/corrector CN machinery.
        let mut flows: Vec<FlowState> = Vec::with_capacity(steps + 1);
        flows.push(initial.flow.clone());
        for j in 0..steps {
            let rem_a = linear_remainders(&frozen[j], &flows[j], nu, c);
            let pred = cn_flow_step(&flows[j], &rem_a, nu, c, dt);
            let rem_b = linear_remainders(&frozen[j + 1], &pred, nu, c);
            flows.push(cn_flow_step(&flows[j], &average(&rem_a, &rem_b), nu, c, dt));
        }

        // Reference embedding by the trapezoid rule over frozen velocities.
        let mut r_tilde = Vec::with_capacity(steps + 1);
        r_tilde.push(initial.snap.r.clone());
        for j in 0..steps {
            let incr = (&frozen[j].g.dr + &frozen[j + 1].g.dr).scale(0.5 * dt);
            r_tilde.push(&r_tilde[j] + &incr);
        }

        // Geometry and auxiliary chain per stamp.
        let mut snaps = Vec::with_capacity(steps + 1);
        let mut auxes = Vec::with_capacity(steps + 1);
        let mut stats = Vec::with_capacity(steps + 1);
        let mut r_hat = Vec::with_capacity(steps + 1);
        snaps.push(initial.snap.clone());
        auxes.push(initial.aux.clone());
        stats.push(initial.stats);
        r_hat.push(initial.snap.r.clone());
        for j in 1..=steps {
            let (hat, fresh) = reconstruct_surface(&flows[j].h, &r_tilde[j]);
            if !(fresh.is_finite() && flows[j].is_finite()) {
                return Err(SimError::StepTooLarge {
                    t: initial.t + j as f64 * dt,
                });
            }
            let e_new = reconstruct_conformal_factor(&fresh);
            let snap =
                GeometrySnapshot::from_embedding_with_e(&fresh, e_new, cfg.c0, cfg.eps_degenerate)?;
            let (aux, st) = solve_aux(&snap, &flows[j], cfg)?;
            snaps.push(snap);
            auxes.push(aux);
            stats.push(st);
            r_hat.push(hat);
        }

        // Contraction bookkeeping against the previous sweep.
        let d1 = d1_metric(&flows, &prev.flows, cfg.s, dt);
        let new_e: Vec<ScalarField> = snaps.iter().map(|s| s.e.clone()).collect();
        let old_e: Vec<ScalarField> = prev.snaps.iter().map(|s| s.e.clone()).collect();
        let new_r: Vec<Vec3Field> = snaps.iter().map(|s| s.r.clone()).collect();
        let old_r: Vec<Vec3Field> = prev.snaps.iter().map(|s| s.r.clone()).collect();
        let d2 = d2_metric(&new_r, &old_r, &new_e, &old_e, cfg.s);
        let metric = d1 + delta * d2;
        let ratio = match prev_metric {
            Some(m) if m > 0.0 => metric / m,
            _ => 1.0,
        };
        report.d1.push(d1);
        report.d2.push(d2);
        report.ratio.push(ratio);
        report.sweeps = sweep;
        if std::env::var_os("MEMBRANE_TRACE_SWEEPS").is_some() {
            eprintln!("sweep {sweep}: d1={d1:.3e} d2={d2:.3e} ratio={ratio:.3}");
        }

        prev = SweepData {
            snaps,
            flows,
            auxes,
            stats,
            r_tilde,
            r_hat,
        };

        if metric < cfg.picard.tol {
            report.converged = true;
            break;
        }
        if prev_metric.is_some() && ratio > 1.0 {
            expanding_streak += 1;
            if expanding_streak >= 2 {
                return Err(SimError::NonContraction { sweep, ratio });
            }
        } else {
            expanding_streak = 0;
        }
        prev_metric = Some(metric);
    }

    let stamps = (0..=steps)
        .map(|j| Stamp {
            t: initial.t + j as f64 * dt,
            snap: prev.snaps[j].clone(),
            flow: prev.flows[j].clone(),
            aux: prev.auxes[j].clone(),
            stats: prev.stats[j],
            r_tilde: Some(prev.r_tilde[j].clone()),
            r_hat: Some(prev.r_hat[j].clone()),
        })
        .collect();
    Ok((stamps, report))
}

/// Solve `[0, t_end]` as consecutive fixed-point windows. Returns the
/// trajectory (all window stamps) and one convergence report per window.
/// A window that fails to converge, or stops contracting, ends the run;
/// the windows before it are intact and the error is recorded.
pub fn run_picard(cfg: &Config) -> Result<(Trajectory, Vec<IterationReport>), SimError> {
    let initial = prepare_state(cfg)?;
    let windows = (cfg.t_end / cfg.picard.t_window).round() as usize;
    let mut traj = Trajectory::default();
    let mut reports = Vec::new();
    let mut state = initial;
    for w in 0..windows {
        match picard_window(&state, cfg) {
            Ok((stamps, report)) => {
                let converged = report.converged;
                let sweeps = report.sweeps;
                reports.push(report);
                let skip = usize::from(w > 0);
                traj.stamps.extend(stamps.into_iter().skip(skip));
                let last = traj.stamps.last().expect("window produced stamps");
                state = SimState {
                    t: last.t,
                    snap: last.snap.clone(),
                    flow: last.flow.clone(),
                    aux: last.aux.clone(),
                    stats: last.stats,
                };
                if !converged {
                    traj.error = Some(SimError::NoConvergence {
                        iterations: sweeps,
                        residual: f64::NAN,
                    });
                    break;
                }
            }
            Err(e) => {
                traj.error = Some(e);
                break;
            }
        }
    }
    Ok((traj, reports))
}
