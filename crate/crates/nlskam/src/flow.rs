//! Numerical time-t maps of generating Hamiltonians: the chart-level flow of
//! X_F integrated with fixed-step RK4, plus the symplectic-form column check.

use crate::error::Result;
use crate::lattice::ModeIndex;
use crate::series::{HamiltonianSeries, PhasePoint, Variable};
use num_complex::Complex64;

const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Flat layout of the chart variables touched by a flow.
#[derive(Clone, Debug)]
pub struct ChartLayout {
    pub b: usize,
    pub bt: usize,
    pub modes_u: Vec<ModeIndex>,
    pub modes_v: Vec<ModeIndex>,
}

impl ChartLayout {
    /// Variables of `f` joined with the nonzero entries of `p`.
    pub fn for_flow(f: &HamiltonianSeries, p: &PhasePoint) -> Self {
        let sites = f.sites();
        let mut modes_u: std::collections::BTreeSet<ModeIndex> = std::collections::BTreeSet::new();
        let mut modes_v: std::collections::BTreeSet<ModeIndex> = std::collections::BTreeSet::new();
        for var in f.variables() {
            match var {
                Variable::U(n) | Variable::UBar(n) => {
                    modes_u.insert(n);
                }
                Variable::V(n) | Variable::VBar(n) => {
                    modes_v.insert(n);
                }
                _ => {}
            }
        }
        for n in p.u.keys().chain(p.ubar.keys()) {
            modes_u.insert(n.clone());
        }
        for n in p.v.keys().chain(p.vbar.keys()) {
            modes_v.insert(n.clone());
        }
        ChartLayout {
            b: sites.b(),
            bt: sites.bt(),
            modes_u: modes_u.into_iter().collect(),
            modes_v: modes_v.into_iter().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.b + 2 * self.bt + 2 * self.modes_u.len() + 2 * self.modes_v.len()
    }

    /// Canonical variable of each slot, in layout order.
    pub fn slot_variables(&self) -> Vec<Variable> {
        let mut vars = Vec::with_capacity(self.dim());
        for j in 0..self.b {
            vars.push(Variable::Theta(j));
        }
        for j in 0..self.bt {
            vars.push(Variable::Phi(j));
        }
        for j in 0..self.b {
            vars.push(Variable::ActionI(j));
        }
        for j in 0..self.bt {
            vars.push(Variable::ActionJ(j));
        }
        for n in &self.modes_u {
            vars.push(Variable::U(n.clone()));
        }
        for n in &self.modes_u {
            vars.push(Variable::UBar(n.clone()));
        }
        for n in &self.modes_v {
            vars.push(Variable::V(n.clone()));
        }
        for n in &self.modes_v {
            vars.push(Variable::VBar(n.clone()));
        }
        vars
    }

    pub fn pack(&self, p: &PhasePoint) -> Vec<Complex64> {
        self.slot_variables().iter().map(|v| p.get(v)).collect()
    }

    pub fn unpack(&self, z: &[Complex64]) -> PhasePoint {
        let mut p = PhasePoint {
            theta: vec![C_ZERO; self.b],
            phi: vec![C_ZERO; self.bt],
            act_i: vec![C_ZERO; self.b],
            act_j: vec![C_ZERO; self.bt],
            ..Default::default()
        };
        for (var, val) in self.slot_variables().iter().zip(z) {
            p.set(var, *val);
        }
        p
    }

    /// The canonical symplectic pairing of two tangent vectors in this
    /// layout: sum_j (X_I Y_theta - X_theta Y_I) + (J, phi) part
    /// + i sum_n (X_u Y_ubar - X_ubar Y_u) + v part.
    pub fn symplectic_form(&self, x: &[Complex64], y: &[Complex64]) -> Complex64 {
        let b = self.b;
        let bt = self.bt;
        let nu = self.modes_u.len();
        let nv = self.modes_v.len();
        let i = Complex64::new(0.0, 1.0);
        let th = 0;
        let ph = b;
        let ai = b + bt;
        let aj = ai + b;
        let u0 = aj + bt;
        let ub0 = u0 + nu;
        let v0 = ub0 + nu;
        let vb0 = v0 + nv;
        let mut acc = C_ZERO;
        for j in 0..b {
            acc += x[ai + j] * y[th + j] - x[th + j] * y[ai + j];
        }
        for j in 0..bt {
            acc += x[aj + j] * y[ph + j] - x[ph + j] * y[aj + j];
        }
        for n in 0..nu {
            acc += i * (x[u0 + n] * y[ub0 + n] - x[ub0 + n] * y[u0 + n]);
        }
        for n in 0..nv {
            acc += i * (x[v0 + n] * y[vb0 + n] - x[vb0 + n] * y[v0 + n]);
        }
        acc
    }
}

/// Precomputed Hamiltonian vector field of a generating series F:
/// theta' = F_I, I' = -F_theta, u' = i F_ubar, ubar' = -i F_u, and the
/// v analogues.
pub struct FlowField {
    layout: ChartLayout,
    partials: Vec<Option<HamiltonianSeries>>,
}

impl FlowField {
    pub fn new(f: &HamiltonianSeries, layout: ChartLayout) -> Self {
        let i = Complex64::new(0.0, 1.0);
        let vars = layout.slot_variables();
        let b = layout.b;
        let bt = layout.bt;
        let nu = layout.modes_u.len();
        let nv = layout.modes_v.len();
        let mut partials: Vec<Option<HamiltonianSeries>> = Vec::with_capacity(vars.len());
        for (slot, var) in vars.iter().enumerate() {
            // derivative of the conjugate slot with the canonical factor
            let (src, factor) = match var {
                Variable::Theta(j) => (Variable::ActionI(*j), Complex64::new(1.0, 0.0)),
                Variable::Phi(j) => (Variable::ActionJ(*j), Complex64::new(1.0, 0.0)),
                Variable::ActionI(j) => (Variable::Theta(*j), Complex64::new(-1.0, 0.0)),
                Variable::ActionJ(j) => (Variable::Phi(*j), Complex64::new(-1.0, 0.0)),
                Variable::U(n) => (Variable::UBar(n.clone()), i),
                Variable::UBar(n) => (Variable::U(n.clone()), -i),
                Variable::V(n) => (Variable::VBar(n.clone()), i),
                Variable::VBar(n) => (Variable::V(n.clone()), -i),
            };
            let d = f.partial(&src);
            let _ = (slot, b, bt, nu, nv);
            partials.push(if d.is_empty() {
                None
            } else {
                Some(d.scaled(factor))
            });
        }
        FlowField { layout, partials }
    }

    pub fn layout(&self) -> &ChartLayout {
        &self.layout
    }

    fn velocity(&self, z: &[Complex64]) -> Vec<Complex64> {
        let p = self.layout.unpack(z);
        self.partials
            .iter()
            .map(|d| match d {
                Some(series) => series.evaluate(&p),
                None => C_ZERO,
            })
            .collect()
    }

    /// Fixed-step RK4 integration of the chart flow from `p` for time `t`.
    pub fn flow(&self, p: &PhasePoint, t: f64, steps: usize) -> Result<PhasePoint> {
        let mut z = self.layout.pack(p);
        let h = t / steps as f64;
        for _ in 0..steps {
            let k1 = self.velocity(&z);
            let z2: Vec<Complex64> = z
                .iter()
                .zip(&k1)
                .map(|(a, b)| a + b * (h / 2.0))
                .collect();
            let k2 = self.velocity(&z2);
            let z3: Vec<Complex64> = z
                .iter()
                .zip(&k2)
                .map(|(a, b)| a + b * (h / 2.0))
                .collect();
            let k3 = self.velocity(&z3);
            let z4: Vec<Complex64> = z.iter().zip(&k3).map(|(a, b)| a + b * h).collect();
            let k4 = self.velocity(&z4);
            for idx in 0..z.len() {
                z[idx] += (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]) * (h / 6.0);
            }
        }
        Ok(self.layout.unpack(&z))
    }
}

/// Worst deviation of the symplectic pairing over canonical direction pairs,
/// measured through finite-difference columns of the time-1 flow map.
pub fn bracket_preservation_deviation(
    f: &HamiltonianSeries,
    base: &PhasePoint,
    flow_steps: usize,
    fd_step: f64,
) -> Result<f64> {
    let layout = ChartLayout::for_flow(f, base);
    let field = FlowField::new(f, layout);
    let layout = field.layout();
    let dim = layout.dim();
    let z0 = layout.pack(base);

    let column = |slot: usize| -> Result<Vec<Complex64>> {
        let mut zp = z0.clone();
        zp[slot] += Complex64::new(fd_step, 0.0);
        let mut zm = z0.clone();
        zm[slot] -= Complex64::new(fd_step, 0.0);
        let fp = layout.pack(&field.flow(&layout.unpack(&zp), 1.0, flow_steps)?);
        let fm = layout.pack(&field.flow(&layout.unpack(&zm), 1.0, flow_steps)?);
        Ok(fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * fd_step))
            .collect())
    };

    // canonical pairs: (theta_j, I_j), (phi_j, J_j), first/last mode pairs
    let b = layout.b;
    let bt = layout.bt;
    let nu = layout.modes_u.len();
    let nv = layout.modes_v.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for j in 0..b {
        pairs.push((j, b + bt + j));
    }
    for j in 0..bt {
        pairs.push((b + j, 2 * b + bt + j));
    }
    let u0 = 2 * b + 2 * bt;
    if nu > 0 {
        pairs.push((u0, u0 + nu));
        pairs.push((u0 + nu - 1, u0 + 2 * nu - 1));
    }
    let v0 = u0 + 2 * nu;
    if nv > 0 {
        pairs.push((v0, v0 + nv));
    }

    let mut worst = 0.0f64;
    for (a, c) in pairs {
        let col_a = column(a)?;
        let col_c = column(c)?;
        let mut ea = vec![C_ZERO; dim];
        ea[a] = Complex64::new(1.0, 0.0);
        let mut ec = vec![C_ZERO; dim];
        ec[c] = Complex64::new(1.0, 0.0);
        let got = layout.symplectic_form(&col_a, &col_c);
        let expect = layout.symplectic_form(&ea, &ec);
        worst = worst.max((got - expect).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::MultiIndex;
    use crate::testing::desk_sites;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// F = eps e^{i theta_1} has the closed-form time-1 map
    /// I_1 -> I_1 - i eps e^{i theta_1}, everything else fixed.
    #[test]
    fn flow_matches_closed_form_on_integrable_toy() {
        let sites = desk_sites();
        let eps = 1e-2;
        let mut m = MultiIndex::constant(2, 2);
        m.k[0] = 1;
        let f = HamiltonianSeries::single(sites.clone(), m, c(eps, 0.0));
        let mut p = PhasePoint::origin(&sites);
        p.theta[0] = c(0.7, 0.0);
        p.act_i[0] = c(0.3, 0.0);
        let layout = ChartLayout::for_flow(&f, &p);
        let field = FlowField::new(&f, layout);
        let out = field.flow(&p, 1.0, 32).unwrap();
        let expect = p.act_i[0] - c(0.0, eps) * (c(0.0, 1.0) * p.theta[0]).exp();
        assert!((out.act_i[0] - expect).norm() < 1e-12);
        assert!((out.theta[0] - p.theta[0]).norm() < 1e-14);
    }

    #[test]
    fn time_reversal_returns_start() {
        let sites = desk_sites();
        let mut r = crate::testing::rng(5);
        let f = crate::testing::random_zero_momentum_series(&sites, &mut r, 8, 2)
            .scaled(c(1e-3, 0.0));
        let mut p = PhasePoint::origin(&sites);
        p.theta[0] = c(0.2, 0.0);
        p.act_i[1] = c(0.05, 0.0);
        let n = sites.z1()[4].clone();
        p.u.insert(n.clone(), c(0.03, 0.01));
        p.ubar.insert(n, c(0.03, -0.01));
        let layout = ChartLayout::for_flow(&f, &p);
        let field = FlowField::new(&f, layout);
        let fwd = field.flow(&p, 1.0, 40).unwrap();
        let back = field.flow(&fwd, -1.0, 40).unwrap();
        let z0 = field.layout().pack(&p);
        let z1 = field.layout().pack(&back);
        let err: f64 = z0
            .iter()
            .zip(&z1)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn generating_flow_preserves_the_symplectic_form() {
        let sites = desk_sites();
        let mut r = crate::testing::rng(9);
        let f = crate::testing::random_zero_momentum_series(&sites, &mut r, 6, 2)
            .scaled(c(5e-3, 0.0));
        let mut p = PhasePoint::origin(&sites);
        p.theta[0] = c(0.4, 0.0);
        p.act_i[0] = c(0.02, 0.0);
        let dev = bracket_preservation_deviation(&f, &p, 24, 1e-5).unwrap();
        assert!(dev < 1e-6, "symplectic deviation {dev:.3e}");
    }
}
