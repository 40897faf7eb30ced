//! One KAM step (truncate, solve, Lie transform, normal-form update) and the
//! driving iteration with its domain schedule.

use crate::error::{KamError, Result};
use crate::homological::{
    extract_truncation, residual_check, solve_homological, DivisorEntry, NormalFormUpdate,
    SolutionF,
};
use crate::lattice::MultiIndex;
use crate::model::{block_matrix, divisor, BlockSign, NormalForm};
use crate::series::{DomainParams, HamiltonianSeries};
use num_complex::Complex64;
use std::time::Instant;

/// Tunables of the iteration; mirrors the `[kam]` section of the config.
#[derive(Clone, Debug)]
pub struct EngineParams {
    pub gamma: f64,
    /// Exponent used in every runtime divisor bound gamma / K^tau_eff.
    pub tau_eff: f64,
    /// The paper-scale exponent, recorded in reports.
    pub tau_paper: f64,
    pub schedule_c: f64,
    pub order_cap: usize,
    pub degree_cap: u32,
    /// Hard cap on the Fourier cutoff K.
    pub k_cap: u32,
    /// Relative homological residual tolerance.
    pub residual_tol: f64,
    /// Mass budget (relative to the measured norm) the post-step compaction
    /// may discard from the transformed perturbation.
    pub compact_rel: f64,
    /// Hard cap on the stored term count of the transformed perturbation.
    pub compact_cap: usize,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            gamma: 0.05,
            tau_eff: 12.0,
            tau_paper: 35.0,
            schedule_c: 1.0,
            order_cap: 8,
            degree_cap: 4,
            k_cap: 40,
            residual_tol: 1e-9,
            compact_rel: 1e-5,
            compact_cap: 400_000,
        }
    }
}

/// Per-step record for the convergence report.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub nu: usize,
    pub eps: f64,
    pub eps_bound: f64,
    pub k_cut: u32,
    pub r: f64,
    pub s: f64,
    pub rho: f64,
    pub residual: f64,
    pub freq_drift: f64,
    pub min_divisor: f64,
    pub asymptotics_dev: f64,
    pub divisors_persist: bool,
    pub absorbed_second_order: f64,
    pub dropped_mass: f64,
    pub wall_secs: f64,
}

/// State of the iteration after nu steps.
#[derive(Clone, Debug)]
pub struct KamState {
    pub nf: NormalForm,
    pub perturbation: HamiltonianSeries,
    pub dp: DomainParams,
    pub eps: f64,
    pub k_cut: u32,
    pub nu: usize,
    /// Initial domain, fixed for the whole run; the schedule shrinks
    /// relative to these.
    pub dp0: DomainParams,
    pub history: Vec<StepRecord>,
    /// Generating functions of the applied transforms, in application order:
    /// the original chart is reached by flowing through these in reverse.
    pub transforms: Vec<HamiltonianSeries>,
    pub divisor_log: Vec<DivisorEntry>,
}

impl KamState {
    pub fn new(nf: NormalForm, perturbation: HamiltonianSeries, dp: DomainParams) -> Self {
        let eps = perturbation.vector_field_norm(&dp);
        let k_cut = initial_k(eps);
        KamState {
            nf,
            perturbation,
            dp,
            eps,
            k_cut,
            nu: 0,
            dp0: dp,
            history: Vec::new(),
            transforms: Vec::new(),
            divisor_log: Vec::new(),
        }
    }

    /// Recompute the cached norm; callers may assert agreement.
    pub fn measured_eps(&self) -> f64 {
        self.perturbation.vector_field_norm(&self.dp)
    }
}

/// K_0 = ln(1/eps), clamped to a sane desk range.
pub fn initial_k(eps: f64) -> u32 {
    if eps <= 0.0 {
        return 4;
    }
    ((1.0 / eps).ln().ceil().max(4.0) as u32).min(64)
}

/// Geometric tail 1 - sum_{i=2}^{top} 2^{-i}; top < 2 gives 1.
fn tail_fraction(top: usize) -> f64 {
    let mut acc = 0.0;
    let mut pow = 0.25;
    for _ in 2..=top {
        acc += pow;
        pow *= 0.5;
    }
    1.0 - acc
}

/// Next-step schedule: domain shrink, Fourier cutoff and perturbation bound.
///
/// r_{nu+1} and rho_{nu+1} follow the geometric tail toward half the initial
/// values, s_{nu+1} = eps^{1/3} s / 4, the bound is
/// c gamma^{-16} K^{16 tau + 16} eps^{4/3}, and the new cutoff is
/// c (rho - rho_+)^{-1} ln(1/eps_+) evaluated with the constant-free forecast
/// min(bound, eps^{4/3}) so the logarithm stays positive when the worst-case
/// constant is vacuous.
pub fn schedule_next(
    state: &KamState,
    params: &EngineParams,
) -> Result<(f64, f64, f64, u32, f64)> {
    if state.eps >= 1.0 {
        return Err(KamError::NonContraction(format!(
            "schedule undefined: ||X_P|| = {:.3e} >= 1",
            state.eps
        )));
    }
    let eps = state.eps;
    let nu = state.nu;
    let r_next = state.dp0.r * tail_fraction(nu + 2);
    let rho_next = state.dp0.rho * tail_fraction(nu + 2);
    let eta = eps.powf(1.0 / 3.0);
    let s_next = 0.25 * eta * state.dp.s;
    let kf = state.k_cut.max(1) as f64;
    let bound = params.schedule_c
        * params.gamma.powi(-16)
        * kf.powf(16.0 * params.tau_eff + 16.0)
        * eps.powf(4.0 / 3.0);
    let forecast = bound.min(eps.powf(4.0 / 3.0));
    let drho = state.dp.rho - rho_next;
    let k_next = if drho > 0.0 && forecast < 1.0 {
        (params.schedule_c * (1.0 / forecast).ln() / drho).ceil() as i64
    } else {
        state.k_cut as i64
    };
    let k_next = k_next.clamp(4, params.k_cap as i64) as u32;
    Ok((r_next, s_next, rho_next, k_next, bound))
}

/// H composed with the time-1 flow of F as the Lie series
/// sum_j ad_F^j(H) / j!, truncated when the vector-field norm of a term
/// falls below `tail_tol` or at `order_cap`.
pub fn lie_transform(
    h: &HamiltonianSeries,
    f: &HamiltonianSeries,
    order_cap: usize,
    degree_cap: u32,
    tail_tol: f64,
    dp: &DomainParams,
) -> Result<HamiltonianSeries> {
    let mut total = h.clone();
    let mut term = h.clone();
    let mut prev_norm = f64::INFINITY;
    let mut stalled = 0usize;
    for j in 1..=order_cap {
        // a rigorous majorant bound lets us drop the whole remaining tail
        // without forming the bracket
        if term.poisson_bracket_vfn_bound(f, dp) / j as f64 <= tail_tol {
            break;
        }
        term = term
            .poisson_bracket(f, degree_cap)?
            .scaled(Complex64::new(1.0 / j as f64, 0.0));
        if term.is_empty() {
            break;
        }
        let norm = term.vector_field_norm(dp);
        total.add_assign(&term)?;
        if norm < tail_tol {
            break;
        }
        if norm > 0.5 * prev_norm {
            stalled += 1;
            if stalled >= 3 {
                return Err(KamError::Divergence { order: j, norm });
            }
        } else {
            stalled = 0;
        }
        prev_norm = norm;
    }
    Ok(total)
}

fn apply_update(nf: &NormalForm, update: &NormalFormUpdate) -> NormalForm {
    let mut out = nf.clone();
    for (w, d) in out.omega.iter_mut().zip(&update.omega_hat) {
        *w += d;
    }
    for (w, d) in out.omega_t.iter_mut().zip(&update.omega_t_hat) {
        *w += d;
    }
    for (n, d) in &update.normal_u_hat {
        *out.normal_u.entry(n.clone()).or_insert(0.0) += d;
    }
    for (n, d) in &update.normal_v_hat {
        *out.normal_v.entry(n.clone()).or_insert(0.0) += d;
    }
    for (n, d) in &update.a_hat {
        *out.coupling_a.entry(n.clone()).or_insert(Complex64::new(0.0, 0.0)) += d;
    }
    for (n, d) in &update.b_hat {
        *out.coupling_b.entry(n.clone()).or_insert(Complex64::new(0.0, 0.0)) += d;
    }
    out
}

fn update_drift(update: &NormalFormUpdate) -> f64 {
    let mut worst = 0.0f64;
    for w in update.omega_hat.iter().chain(&update.omega_t_hat) {
        worst = worst.max(w.abs());
    }
    for w in update.normal_u_hat.values().chain(update.normal_v_hat.values()) {
        worst = worst.max(w.abs());
    }
    for w in update.a_hat.values().chain(update.b_hat.values()) {
        worst = worst.max(w.norm());
    }
    worst
}

/// Check that the divisors used by the last solve still clear the next
/// bound after the frequency update.
fn divisors_persist(log: &[DivisorEntry], nf: &NormalForm, bound_next: f64) -> bool {
    log.iter().all(|e| {
        let block = match (&e.n, &e.m, e.sign) {
            (None, _, _) => None,
            (Some(n), None, _) => block_matrix(nf, n, None, BlockSign::Minus).ok(),
            (Some(n), Some(m), Some(s)) => block_matrix(nf, n, Some(m), s).ok(),
            _ => None,
        };
        if e.n.is_some() && block.is_none() {
            return false;
        }
        divisor(nf, &e.k, &e.kt, block.as_ref()) >= bound_next
    })
}

/// Result of one step, with the pieces the verifier needs later.
pub struct StepOutcome {
    pub state: KamState,
    pub f: SolutionF,
}

/// Run one KAM step: extract R, solve the homological equation, verify the
/// residual, update the normal form, transform H by the time-1 flow of F and
/// measure the new perturbation on the shrunk domain.
pub fn kam_step(state: &KamState, params: &EngineParams) -> Result<StepOutcome> {
    let t0 = Instant::now();
    let sites = state.perturbation.sites().clone();

    if state.perturbation.is_empty() {
        // nothing to remove: advance the schedule only
        let mut next = state.clone();
        next.nu += 1;
        next.history.push(StepRecord {
            nu: next.nu,
            eps: 0.0,
            eps_bound: 0.0,
            k_cut: next.k_cut,
            r: next.dp.r,
            s: next.dp.s,
            rho: next.dp.rho,
            residual: 0.0,
            freq_drift: 0.0,
            min_divisor: f64::INFINITY,
            asymptotics_dev: next.nf.asymptotics_deviation(),
            divisors_persist: true,
            absorbed_second_order: 0.0,
            dropped_mass: 0.0,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
        return Ok(StepOutcome {
            state: next,
            f: SolutionF {
                f0: HamiltonianSeries::zero(sites.clone()),
                f1: HamiltonianSeries::zero(sites.clone()),
                f2: HamiltonianSeries::zero(sites),
                divisor_log: Vec::new(),
            },
        });
    }

    let r = extract_truncation(&state.perturbation, state.k_cut);
    let (f, update) =
        solve_homological(&r, &state.nf, params.gamma, params.tau_eff, state.k_cut)?;

    let r_norm = r.total().vector_field_norm(&state.dp);
    let residual = residual_check(&state.nf, &f, &r, &update, &state.dp)?;
    if r_norm > 0.0 && residual > params.residual_tol * r_norm {
        return Err(KamError::Residual {
            residual,
            tolerance: params.residual_tol * r_norm,
            r_norm,
        });
    }

    let freq_drift = update_drift(&update);
    let nf_next = apply_update(&state.nf, &update);

    let (r_next, s_next, rho_next, k_next, eps_bound) = schedule_next(state, params)?;

    // transform the full Hamiltonian; the Lie map is linear in its argument,
    // so N + B (few terms, eps-sized brackets) and P (many terms, eps^2-sized
    // bracket) run as separate series with the same flow
    let ftot = f.total();
    let nb = state.nf.as_series(&sites);
    let forecast = eps_bound.min(state.eps.powf(4.0 / 3.0));
    let tail_tol = (1e-3 * forecast).max(1e-8 * state.eps * state.eps);
    let nb_flow = lie_transform(&nb, &ftot, params.order_cap, params.degree_cap, tail_tol, &state.dp)?;
    let p_flow = lie_transform(
        &state.perturbation,
        &ftot,
        params.order_cap,
        params.degree_cap,
        tail_tol,
        &state.dp,
    )?;

    let nb_next = nf_next.as_series(&sites);
    let mut p_next = p_flow;
    p_next.add_assign(&nb_flow)?;
    p_next.add_assign(&nb_next.scaled(Complex64::new(-1.0, 0.0)))?;

    // strip the dynamically void constant and sweep second-order diagonal
    // remainders into the normal form so the routed classes stay empty
    let mut sweep = NormalFormUpdate::zero(&sites);
    let mut absorbed = 0.0f64;
    let routed: Vec<(MultiIndex, Complex64)> = p_next
        .terms()
        .filter(|(m, _)| crate::homological::is_routed_class(m))
        .map(|(m, c)| (m.clone(), c))
        .collect();
    for (m, c) in routed {
        p_next.remove(&m);
        if !m.is_constant() {
            absorbed = absorbed.max(c.norm());
            sweep.absorb(&m, c, &sites)?;
        }
    }
    let nf_next = apply_update(&nf_next, &sweep);

    if !p_next.is_zero_momentum() {
        return Err(KamError::Model(
            "transformed perturbation left the zero-momentum class".into(),
        ));
    }

    let dp_next = DomainParams::new(r_next, s_next, rho_next)?;
    // compaction never touches the quadratic head: those terms seed the next
    // homological solve
    let mut head = HamiltonianSeries::zero(sites.clone());
    let mut tail = HamiltonianSeries::zero(sites.clone());
    for (m, c) in p_next.terms() {
        if m.weighted_degree() <= 2 {
            head.accumulate(m.clone(), c);
        } else {
            tail.accumulate(m.clone(), c);
        }
    }
    let (tail, dropped_mass) =
        tail.prune_mass_budget(&dp_next, params.compact_rel, params.compact_cap);
    let mut p_next = tail;
    p_next.add_assign(&head)?;
    let eps_next = p_next.vector_field_norm(&dp_next);
    if eps_next > eps_bound {
        return Err(KamError::NonContraction(format!(
            "measured eps {eps_next:.3e} above the schedule bound {eps_bound:.3e}"
        )));
    }

    let bound_next = params.gamma / (k_next as f64).powf(params.tau_eff);
    let persists = divisors_persist(&f.divisor_log, &nf_next, bound_next);

    let mut next = state.clone();
    next.nf = nf_next;
    next.perturbation = p_next;
    next.dp = dp_next;
    next.eps = eps_next;
    next.k_cut = k_next;
    next.nu += 1;
    next.transforms.push(ftot);
    next.divisor_log.extend(f.divisor_log.iter().cloned());
    next.history.push(StepRecord {
        nu: next.nu,
        eps: eps_next,
        eps_bound,
        k_cut: k_next,
        r: r_next,
        s: s_next,
        rho: rho_next,
        residual,
        freq_drift,
        min_divisor: f.min_divisor(),
        asymptotics_dev: next.nf.asymptotics_deviation(),
        divisors_persist: persists,
        absorbed_second_order: absorbed,
        dropped_mass,
        wall_secs: t0.elapsed().as_secs_f64(),
    });
    Ok(StepOutcome { state: next, f })
}

/// Convergence summary of a full run.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub eps_sequence: Vec<f64>,
    pub omega_final: Vec<f64>,
    pub omega_t_final: Vec<f64>,
    pub total_drift: f64,
    pub drift_telescopes: bool,
    pub reached_target: bool,
}

/// Iterate kam_step until eps <= target or max_steps, requiring strict
/// contraction at every step.
pub fn iterate(
    state: KamState,
    params: &EngineParams,
    max_steps: usize,
    target_eps: f64,
) -> Result<(KamState, ConvergenceReport)> {
    let eps0 = state.eps;
    let mut cur = state;
    let mut eps_sequence = vec![cur.eps];
    while cur.eps > target_eps && cur.nu < max_steps {
        let eps_before = cur.eps;
        let out = kam_step(&cur, params)?;
        cur = out.state;
        eps_sequence.push(cur.eps);
        if cur.eps >= eps_before && eps_before > 0.0 {
            return Err(KamError::NonContraction(format!(
                "eps grew from {eps_before:.6e} to {:.6e} at step {}",
                cur.eps, cur.nu
            )));
        }
    }
    let total_drift: f64 = cur.history.iter().map(|h| h.freq_drift).sum();
    let report = ConvergenceReport {
        reached_target: cur.eps <= target_eps,
        drift_telescopes: eps_sequence.iter().sum::<f64>() < 2.0 * eps0 + f64::EPSILON,
        omega_final: cur.nf.omega.clone(),
        omega_t_final: cur.nf.omega_t.clone(),
        total_drift,
        eps_sequence,
    };
    Ok((cur, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::MultiIndex;
    use crate::model::{action_angle_reduce, build_hamiltonian, ModelSpec, NonlinearitySpec};
    use crate::testing::desk_sites;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn desk_spec(g: f64) -> ModelSpec {
        ModelSpec {
            sites: desk_sites(),
            nonlinearity: NonlinearitySpec::new(vec![(1, 1, g)]).unwrap(),
            xi: vec![0.317, 0.259],
            sigma: vec![0.431, 0.127],
            amp_u: vec![0.1, 0.1],
            amp_v: vec![0.1, 0.1],
            degree_cap: 4,
        }
    }

    #[test]
    fn schedule_formulas() {
        let sites = desk_sites();
        let nf = NormalForm::unperturbed(&sites, &[0.3, 0.2], &[0.1, 0.4]).unwrap();
        let p = HamiltonianSeries::single(
            sites.clone(),
            {
                let mut m = MultiIndex::constant(2, 2);
                m.l[0] = 1;
                m
            },
            c(1e-6 / 0.04, 0.0), // eps = coeff * s^2/s^2... vector field norm = coeff
        );
        let dp = DomainParams::new(1.0, 0.2, 1.0).unwrap();
        let mut state = KamState::new(nf, p, dp);
        state.eps = 1e-6;
        state.k_cut = 1;
        let params = EngineParams {
            gamma: 1.0,
            tau_eff: 2.0,
            schedule_c: 1.0,
            ..Default::default()
        };
        let (r1, s1, rho1, _k1, bound) = schedule_next(&state, &params).unwrap();
        // bound = 1 * 1 * 1 * (1e-6)^{4/3} = 1e-8
        assert!((bound - 1e-8).abs() < 1e-20);
        // eta = 1e-2, s+ = 0.2 * 1e-2 / 4
        assert!((s1 - 0.2 * 1e-2 / 4.0).abs() < 1e-18);
        // r1 = r (1 - 1/4), rho likewise
        assert!((r1 - 0.75).abs() < 1e-15);
        assert!((rho1 - 0.75).abs() < 1e-15);

        state.nu = 1;
        state.dp = DomainParams::new(r1, s1, rho1).unwrap();
        let (r2, _, rho2, _, _) = schedule_next(&state, &params).unwrap();
        assert!((r2 - (1.0 - 0.25 - 0.125)).abs() < 1e-15);
        assert!((rho2 - 0.625).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_large_eps() {
        let sites = desk_sites();
        let nf = NormalForm::unperturbed(&sites, &[0.3, 0.2], &[0.1, 0.4]).unwrap();
        let p = HamiltonianSeries::zero(sites.clone());
        let dp = DomainParams::new(1.0, 0.2, 1.0).unwrap();
        let mut state = KamState::new(nf, p, dp);
        state.eps = 2.0;
        assert!(schedule_next(&state, &EngineParams::default()).is_err());
    }

    #[test]
    fn lie_transform_identity_and_first_order() {
        let sites = desk_sites();
        let mut r = crate::testing::rng(3);
        let h = crate::testing::random_zero_momentum_series(&sites, &mut r, 10, 4);
        let f0 = HamiltonianSeries::zero(sites.clone());
        let dp = DomainParams::new(0.5, 0.2, 0.4).unwrap();
        let out = lie_transform(&h, &f0, 8, 8, 1e-12, &dp).unwrap();
        assert!(out.sub(&h).unwrap().is_empty());

        let f = crate::testing::random_zero_momentum_series(&sites, &mut r, 5, 2)
            .scaled(c(1e-4, 0.0));
        let order1 = lie_transform(&h, &f, 1, 8, 0.0, &dp).unwrap();
        let manual = h.add(&h.poisson_bracket(&f, 8).unwrap()).unwrap();
        let diff = order1.sub(&manual).unwrap().majorant_norm(&dp);
        assert!(diff < 1e-14 * manual.majorant_norm(&dp));
    }

    /// H = I_1, F = eps e^{i theta_1}: the Lie series terminates and equals
    /// the hand-integrated composition exactly.
    #[test]
    fn lie_transform_exact_on_integrable_toy() {
        let sites = desk_sites();
        let eps = 1e-3;
        let mut mf = MultiIndex::constant(2, 2);
        mf.k[0] = 1;
        let f = HamiltonianSeries::single(sites.clone(), mf.clone(), c(eps, 0.0));
        let mut mh = MultiIndex::constant(2, 2);
        mh.l[0] = 1;
        let h = HamiltonianSeries::single(sites.clone(), mh.clone(), c(1.0, 0.0));
        let dp = DomainParams::new(0.5, 0.2, 0.4).unwrap();
        let out = lie_transform(&h, &f, 8, 8, 1e-30, &dp).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out.coeff(&mh) - c(1.0, 0.0)).norm() < 1e-16);
        assert!((out.coeff(&mf) - c(0.0, -eps)).norm() < 1e-16);

        // cross-check against the numerically integrated flow at a point
        let mut p = crate::series::PhasePoint::origin(&sites);
        p.theta[0] = c(0.3, 0.0);
        p.act_i[0] = c(0.1, 0.0);
        let layout = crate::flow::ChartLayout::for_flow(&f, &p);
        let field = crate::flow::FlowField::new(&f, layout);
        let image = field.flow(&p, 1.0, 64).unwrap();
        let lhs = out.evaluate(&p);
        let rhs = h.evaluate(&image);
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn empty_perturbation_step_only_advances_schedule() {
        let sites = desk_sites();
        let nf = NormalForm::unperturbed(&sites, &[0.3, 0.2], &[0.1, 0.4]).unwrap();
        let p = HamiltonianSeries::zero(sites.clone());
        let dp = DomainParams::new(0.5, 0.2, 0.4).unwrap();
        let state = KamState::new(nf, p, dp);
        let out = kam_step(&state, &EngineParams::default()).unwrap();
        assert_eq!(out.state.nu, 1);
        assert_eq!(out.state.eps, 0.0);
        assert!(out.state.perturbation.is_empty());
    }

    #[test]
    fn linear_problem_reaches_target_in_zero_steps() {
        let sites = desk_sites();
        let nf = NormalForm::unperturbed(&sites, &[0.3, 0.2], &[0.1, 0.4]).unwrap();
        let p = HamiltonianSeries::zero(sites.clone());
        let dp = DomainParams::new(0.5, 0.2, 0.4).unwrap();
        let state = KamState::new(nf, p, dp);
        let (final_state, report) = iterate(state, &EngineParams::default(), 5, 1e-10).unwrap();
        assert_eq!(final_state.nu, 0);
        assert!(report.reached_target);
    }

    #[test]
    fn desk_step_contracts_and_stays_momentum_free() {
        let spec = desk_spec(2.25e-6);
        let h = build_hamiltonian(&spec).unwrap();
        let (nf, p) = action_angle_reduce(&h, &spec).unwrap();
        let dp = DomainParams::new(0.5, 0.2, 0.4).unwrap();
        let state = KamState::new(nf, p, dp);
        let eps0 = state.eps;
        assert!(eps0 > 0.0 && eps0 < 1.0, "eps0 = {eps0:.3e}");

        let params = EngineParams::default();
        let out = kam_step(&state, &params).unwrap();
        let s1 = &out.state;
        assert!(s1.eps < eps0, "eps {:.3e} -> {:.3e}", eps0, s1.eps);
        assert!(s1.perturbation.is_zero_momentum());
        assert_eq!(s1.history.len(), 1);
        let rec = &s1.history[0];
        assert!(rec.residual <= 1e-9 * eps0);
        assert!(rec.freq_drift < eps0);
        // absorbed classes really are gone
        for (m, _) in s1.perturbation.terms() {
            assert!(!crate::homological::is_routed_class(m));
        }
    }
}
