//! Ray-shift structure of second normal-mode derivatives: for the
//! zero-momentum class the derivative along n + tc is exactly constant in t;
//! the check measures each ray's deviation from its large-t limit against
//! the (eps / |t|) e^{-|n -+ m| rho} envelope.

use crate::error::{KamError, Result};
use crate::lattice::{ModeIndex, MultiIndex};
use crate::series::{DomainParams, HamiltonianSeries, Variable};
use num_complex::Complex64;
use rustc_hash::FxHashMap;

/// The ten derivative pairs. Same-type pairs shift the second index by -tc
/// (the index sum stays fixed), mixed-conjugation pairs shift by +tc (the
/// difference stays fixed).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RayClass {
    UU,
    UUbar,
    UbarUbar,
    UV,
    UVbar,
    UbarV,
    UbarVbar,
    VV,
    VVbar,
    VbarVbar,
}

impl RayClass {
    pub const ALL: [RayClass; 10] = [
        RayClass::UU,
        RayClass::UUbar,
        RayClass::UbarUbar,
        RayClass::UV,
        RayClass::UVbar,
        RayClass::UbarV,
        RayClass::UbarVbar,
        RayClass::VV,
        RayClass::VVbar,
        RayClass::VbarVbar,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            RayClass::UU => "u_u",
            RayClass::UUbar => "u_ubar",
            RayClass::UbarUbar => "ubar_ubar",
            RayClass::UV => "u_v",
            RayClass::UVbar => "u_vbar",
            RayClass::UbarV => "ubar_v",
            RayClass::UbarVbar => "ubar_vbar",
            RayClass::VV => "v_v",
            RayClass::VVbar => "v_vbar",
            RayClass::VbarVbar => "vbar_vbar",
        }
    }

    /// Sign of t in the second shifted index; +1 keeps the difference n - m
    /// fixed, -1 keeps the sum n + m fixed.
    pub fn second_shift(&self) -> i32 {
        match self {
            RayClass::UU
            | RayClass::UbarUbar
            | RayClass::UV
            | RayClass::UbarVbar
            | RayClass::VV
            | RayClass::VbarVbar => -1,
            RayClass::UUbar | RayClass::UVbar | RayClass::UbarV | RayClass::VVbar => 1,
        }
    }

    pub fn variables(&self, n: &ModeIndex, m: &ModeIndex) -> (Variable, Variable) {
        match self {
            RayClass::UU => (Variable::U(n.clone()), Variable::U(m.clone())),
            RayClass::UUbar => (Variable::U(n.clone()), Variable::UBar(m.clone())),
            RayClass::UbarUbar => (Variable::UBar(n.clone()), Variable::UBar(m.clone())),
            RayClass::UV => (Variable::U(n.clone()), Variable::V(m.clone())),
            RayClass::UVbar => (Variable::U(n.clone()), Variable::VBar(m.clone())),
            RayClass::UbarV => (Variable::UBar(n.clone()), Variable::V(m.clone())),
            RayClass::UbarVbar => (Variable::UBar(n.clone()), Variable::VBar(m.clone())),
            RayClass::VV => (Variable::V(n.clone()), Variable::V(m.clone())),
            RayClass::VVbar => (Variable::V(n.clone()), Variable::VBar(m.clone())),
            RayClass::VbarVbar => (Variable::VBar(n.clone()), Variable::VBar(m.clone())),
        }
    }

    /// Variable slots: 0 = u, 1 = ubar, 2 = v, 3 = vbar.
    pub fn kinds(&self) -> (usize, usize) {
        match self {
            RayClass::UU => (0, 0),
            RayClass::UUbar => (0, 1),
            RayClass::UbarUbar => (1, 1),
            RayClass::UV => (0, 2),
            RayClass::UVbar => (0, 3),
            RayClass::UbarV => (1, 2),
            RayClass::UbarVbar => (1, 3),
            RayClass::VV => (2, 2),
            RayClass::VVbar => (2, 3),
            RayClass::VbarVbar => (3, 3),
        }
    }

    /// Euclidean norm entering the decay envelope: |n + m| for same-type
    /// pairs, |n - m| for mixed ones.
    pub fn envelope_norm(&self, n: &ModeIndex, m: &ModeIndex) -> f64 {
        match self.second_shift() {
            -1 => n.add(m).norm(),
            _ => n.add(&m.neg()).norm(),
        }
    }
}

/// Formal second derivative of P along the shifted pair
/// (n + tc, m -+ tc) of the given class, as a series in the remaining
/// variables.
pub fn ray_second_derivative(
    p: &HamiltonianSeries,
    class: RayClass,
    n: &ModeIndex,
    m: &ModeIndex,
    c: &ModeIndex,
    t: i32,
) -> Result<HamiltonianSeries> {
    if c.is_zero() {
        return Err(KamError::Config("ray direction c must be nonzero".into()));
    }
    let sites = p.sites();
    let n_shift = n.add(&c.scaled(t));
    let m_shift = m.add(&c.scaled(class.second_shift() * t));
    if !sites.in_window(&n_shift) || !sites.in_window(&m_shift) {
        return Err(KamError::Model(format!(
            "shifted pair ({n_shift:?}, {m_shift:?}) leaves the window"
        )));
    }
    let (va, vb) = class.variables(&n_shift, &m_shift);
    Ok(p.partial(&va).partial(&vb))
}

/// Worst deviation in one class.
#[derive(Clone, Debug)]
pub struct RayClassReport {
    pub class: RayClass,
    /// Largest majorant norm of value(t) - limit over all checked rays.
    pub max_violation: f64,
    /// Largest violation / envelope ratio.
    pub max_ratio: f64,
    pub rays_checked: usize,
    pub witness: Option<(ModeIndex, ModeIndex, ModeIndex, i32)>,
}

#[derive(Clone, Debug)]
pub struct ToeplitzReport {
    pub classes: Vec<RayClassReport>,
    pub eps_budget: f64,
}

impl ToeplitzReport {
    pub fn max_violation(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.max_violation)
            .fold(0.0, f64::max)
    }

    pub fn max_ratio(&self) -> f64 {
        self.classes.iter().map(|c| c.max_ratio).fold(0.0, f64::max)
    }
}

type PairKey = (ModeIndex, ModeIndex);

/// Second derivatives of all terms of `p` for one class, grouped by the mode
/// pair, precomputed in one pass.
fn derivative_table(
    p: &HamiltonianSeries,
    class: RayClass,
) -> FxHashMap<PairKey, Vec<(MultiIndex, Complex64)>> {
    let mut out: FxHashMap<PairKey, Vec<(MultiIndex, Complex64)>> = FxHashMap::default();
    let pick = |m: &MultiIndex, var_kind: usize| -> Vec<(ModeIndex, u32)> {
        let map = match var_kind {
            0 => &m.alpha,
            1 => &m.beta,
            2 => &m.alpha_t,
            _ => &m.beta_t,
        };
        map.iter().map(|(n, e)| (n.clone(), e)).collect()
    };
    let (kind_a, kind_b) = class.kinds();
    let bump = |m: &mut MultiIndex, kind: usize, n: &ModeIndex| {
        match kind {
            0 => m.alpha.bump(n, -1),
            1 => m.beta.bump(n, -1),
            2 => m.alpha_t.bump(n, -1),
            _ => m.beta_t.bump(n, -1),
        };
    };
    for (m, coeff) in p.terms() {
        for (na, ea) in pick(m, kind_a) {
            for (nb, eb) in pick(m, kind_b) {
                // derivative factor, lowering the same exponent twice when
                // the variables coincide
                let factor = if kind_a == kind_b && na == nb {
                    if ea < 2 {
                        continue;
                    }
                    (ea * (ea - 1)) as f64
                } else {
                    (ea * eb) as f64
                };
                let mut dm = m.clone();
                bump(&mut dm, kind_a, &na);
                bump(&mut dm, kind_b, &nb);
                out.entry((na.clone(), nb.clone()))
                    .or_default()
                    .push((dm, coeff * factor));
            }
        }
    }
    out
}

fn table_norm_of_difference(
    a: Option<&Vec<(MultiIndex, Complex64)>>,
    b: Option<&Vec<(MultiIndex, Complex64)>>,
    dp: &DomainParams,
) -> f64 {
    let mut acc: FxHashMap<&MultiIndex, Complex64> = FxHashMap::default();
    if let Some(list) = a {
        for (m, c) in list {
            *acc.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
    }
    if let Some(list) = b {
        for (m, c) in list {
            *acc.entry(m).or_insert(Complex64::new(0.0, 0.0)) -= c;
        }
    }
    acc.into_iter()
        .map(|(m, c)| c.norm() * HamiltonianSeries::term_weight(m, dp))
        .sum()
}

/// Check every class over all rays with |n|_inf, |m|_inf, |c|_inf <= cap:
/// the limit is proxied by the largest valid |t| and every smaller nonzero
/// |t| is compared against (eps_budget / |t|) e^{-|n -+ m| rho}.
pub fn check_toeplitz(
    p: &HamiltonianSeries,
    dp: &DomainParams,
    eps_budget: f64,
    t_range: i32,
    cap: i32,
) -> Result<ToeplitzReport> {
    let sites = p.sites().clone();
    let window: Vec<ModeIndex> = sites
        .window()
        .into_iter()
        .filter(|n| n.norm_sup() <= cap)
        .collect();
    let mut dirs: Vec<ModeIndex> = sites
        .window()
        .into_iter()
        .filter(|n| n.norm_sup() <= cap && !n.is_zero())
        .collect();
    dirs.sort();

    let mut classes = Vec::new();
    for class in RayClass::ALL {
        let table = derivative_table(p, class);
        let mut report = RayClassReport {
            class,
            max_violation: 0.0,
            max_ratio: 0.0,
            rays_checked: 0,
            witness: None,
        };
        let (kind_a, kind_b) = class.kinds();
        // a shifted index is a valid ray point only while it stays a normal
        // mode of the right field (Z1 for u-type slots, Z2 for v-type)
        let member = |idx: &ModeIndex, kind: usize| {
            let cls = sites.classify(idx);
            if kind < 2 {
                cls.in_z1
            } else {
                cls.in_z2
            }
        };
        for n in &window {
            for m in &window {
                for c in &dirs {
                    let ts: Vec<i32> = (-t_range..=t_range)
                        .filter(|&t| {
                            member(&n.add(&c.scaled(t)), kind_a)
                                && member(&m.add(&c.scaled(class.second_shift() * t)), kind_b)
                        })
                        .collect();
                    let Some(&t_ref) = ts.iter().max_by_key(|t| (t.abs(), **t)) else {
                        continue;
                    };
                    if t_ref == 0 {
                        continue;
                    }
                    let key_ref = (
                        n.add(&c.scaled(t_ref)),
                        m.add(&c.scaled(class.second_shift() * t_ref)),
                    );
                    let limit = table.get(&key_ref);
                    for &t in &ts {
                        if t == 0 || t == t_ref {
                            continue;
                        }
                        let key = (
                            n.add(&c.scaled(t)),
                            m.add(&c.scaled(class.second_shift() * t)),
                        );
                        let value = table.get(&key);
                        if value.is_none() && limit.is_none() {
                            continue;
                        }
                        let viol = table_norm_of_difference(value, limit, dp);
                        report.rays_checked += 1;
                        if viol > report.max_violation {
                            report.max_violation = viol;
                            report.witness = Some((n.clone(), m.clone(), c.clone(), t));
                        }
                        let envelope = eps_budget / (t.abs() as f64)
                            * (-class.envelope_norm(n, m) * dp.rho).exp();
                        if envelope > 0.0 {
                            report.max_ratio = report.max_ratio.max(viol / envelope);
                        } else if viol > 0.0 {
                            report.max_ratio = f64::INFINITY;
                        }
                    }
                }
            }
        }
        classes.push(report);
    }
    Ok(ToeplitzReport {
        classes,
        eps_budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{action_angle_reduce, build_hamiltonian, ModelSpec, NonlinearitySpec};
    use crate::testing::desk_sites;

    fn dp() -> DomainParams {
        DomainParams::new(0.5, 0.2, 0.4).unwrap()
    }

    fn desk_p() -> HamiltonianSeries {
        let spec = ModelSpec {
            sites: desk_sites(),
            nonlinearity: NonlinearitySpec::new(vec![(1, 1, 0.05)]).unwrap(),
            xi: vec![0.317, 0.259],
            sigma: vec![0.431, 0.127],
            amp_u: vec![0.1, 0.1],
            amp_v: vec![0.1, 0.1],
            degree_cap: 4,
        };
        let h = build_hamiltonian(&spec).unwrap();
        action_angle_reduce(&h, &spec).unwrap().1
    }

    #[test]
    fn quadratic_diagonal_has_zero_mixed_derivatives() {
        let spec = ModelSpec {
            sites: desk_sites(),
            nonlinearity: NonlinearitySpec::empty(),
            xi: vec![0.1, 0.2],
            sigma: vec![0.3, 0.4],
            amp_u: vec![0.1, 0.1],
            amp_v: vec![0.1, 0.1],
            degree_cap: 4,
        };
        let h = build_hamiltonian(&spec).unwrap();
        let n = ModeIndex::new(&[1, 1]);
        let m = ModeIndex::new(&[0, 2]);
        let c = ModeIndex::new(&[0, 1]);
        let d = ray_second_derivative(&h, RayClass::UVbar, &n, &m, &c, 0).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn derivative_at_t_zero_picks_the_cofactor() {
        let sites = desk_sites();
        let n = ModeIndex::new(&[1, 1]);
        let m = ModeIndex::new(&[2, 0]);
        let mut idx = MultiIndex::constant(2, 2);
        idx.alpha.set(n.clone(), 1);
        idx.beta_t.set(m.clone(), 1);
        idx.l[0] = 1;
        let p = HamiltonianSeries::single(sites.clone(), idx, Complex64::new(2.0, 1.0));
        let c = ModeIndex::new(&[1, 0]);
        let d = ray_second_derivative(&p, RayClass::UVbar, &n, &m, &c, 0).unwrap();
        assert_eq!(d.len(), 1);
        let mut cof = MultiIndex::constant(2, 2);
        cof.l[0] = 1;
        assert_eq!(d.coeff(&cof), Complex64::new(2.0, 1.0));

        // out-of-window shift errors
        assert!(ray_second_derivative(&p, RayClass::UVbar, &n, &m, &c, 5).is_err());
    }

    #[test]
    fn zero_momentum_hamiltonian_is_exactly_ray_invariant() {
        let p = desk_p();
        assert!(p.is_zero_momentum());
        let report = check_toeplitz(&p, &dp(), 1e-4, 6, 3).unwrap();
        assert!(report.classes.iter().any(|c| c.rays_checked > 0));
        assert!(
            report.max_violation() <= 1e-14,
            "max violation {:.3e}",
            report.max_violation()
        );
    }

    #[test]
    fn empty_series_reports_all_zero() {
        let sites = desk_sites();
        let p = HamiltonianSeries::zero(sites);
        let report = check_toeplitz(&p, &dp(), 1e-4, 6, 3).unwrap();
        assert_eq!(report.max_violation(), 0.0);
        assert_eq!(report.max_ratio(), 0.0);
    }

    #[test]
    fn planted_momentum_violation_is_flagged() {
        let sites = desk_sites();
        let mut p = desk_p();
        // t-dependent coefficients on u_{n+tc} ubar_{m+tc| with |n| != |m|:
        // the ray values differ between t's, so a positive violation appears
        let n0 = ModeIndex::new(&[1, 1]);
        let m0 = ModeIndex::new(&[0, -2]);
        let c = ModeIndex::new(&[0, 1]);
        for t in -1..=1 {
            let nn = n0.add(&c.scaled(t));
            let mm = m0.add(&c.scaled(t));
            let mut idx = MultiIndex::constant(2, 2);
            idx.alpha.set(nn, 1);
            idx.beta.set(mm, 1);
            p.accumulate(idx, Complex64::new(1e-3 * (1.0 + 1.0 / (1.0 + t.abs() as f64)), 0.0));
        }
        let report = check_toeplitz(&p, &dp(), 1e-4, 6, 3).unwrap();
        let uubar = report
            .classes
            .iter()
            .find(|r| r.class == RayClass::UUbar)
            .unwrap();
        assert!(uubar.max_violation > 1e-6, "violation {:.3e}", uubar.max_violation);
        assert!(uubar.witness.is_some());
    }
}
