//! Direct validation of constructed quasi-periodic orbits: Galerkin-truncated
//! integration of the coupled lattice system, spectral frequency extraction,
//! and torus residence measurements.

use crate::engine::KamState;
use crate::error::{KamError, Result};
use crate::flow::{ChartLayout, FlowField};
use crate::lattice::ModeIndex;
use crate::model::ModelSpec;
use crate::series::PhasePoint;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Mode amplitudes of both fields over the full window.
#[derive(Clone, Debug, Default)]
pub struct ModeState {
    pub u: BTreeMap<ModeIndex, Complex64>,
    pub v: BTreeMap<ModeIndex, Complex64>,
}

impl ModeState {
    pub fn l2_u(&self) -> f64 {
        self.u.values().map(|c| c.norm_sqr()).sum()
    }

    pub fn l2_v(&self) -> f64 {
        self.v.values().map(|c| c.norm_sqr()).sum()
    }
}

/// Uniformly sampled trajectory of the tracked site modes plus conserved
/// quantities; the full final state allows reversal tests.
#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub times: Vec<f64>,
    /// Per u-site complex amplitude histories, site order.
    pub tracked_u: Vec<Vec<Complex64>>,
    /// Per v-site histories.
    pub tracked_v: Vec<Vec<Complex64>>,
    pub l2_u: Vec<f64>,
    pub l2_v: Vec<f64>,
    /// Sum over Z1 of |u_n|^2 (normal modes only), per sample.
    pub normal_l2_u: Vec<f64>,
    pub normal_l2_v: Vec<f64>,
    pub energy: Vec<f64>,
    pub final_state: ModeState,
}

/// d-dimensional FFT working grid with mode placement helpers.
struct SpectralGrid {
    d: usize,
    m: usize,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl SpectralGrid {
    fn new(d: usize, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        SpectralGrid {
            d,
            m,
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        }
    }

    fn len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    fn bin(&self, n: &ModeIndex) -> usize {
        let mut idx = 0usize;
        for &c in n.0.iter() {
            let w = c.rem_euclid(self.m as i32) as usize;
            idx = idx * self.m + w;
        }
        idx
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        let m = self.m;
        let total = self.len();
        let mut line = vec![C_ZERO; m];
        for axis in 0..self.d {
            // stride of this axis in the row-major layout
            let stride = m.pow((self.d - 1 - axis) as u32);
            let lines = total / m;
            for l in 0..lines {
                // base offset of the l-th line along `axis`
                let block = l / stride;
                let offset = block * stride * m + (l % stride);
                for j in 0..m {
                    line[j] = data[offset + j * stride];
                }
                fft.process(&mut line);
                for j in 0..m {
                    data[offset + j * stride] = line[j];
                }
            }
        }
    }
}

/// Pseudo-spectral right-hand side of the truncated system.
struct Integrator {
    sites: Arc<crate::lattice::SiteConfig>,
    window: Vec<ModeIndex>,
    bins: Vec<usize>,
    lambda_u: Vec<f64>,
    lambda_v: Vec<f64>,
    deriv_a: Vec<(u32, u32, f64)>,
    deriv_b: Vec<(u32, u32, f64)>,
    g_terms: Vec<(u32, u32, f64)>,
    grid: SpectralGrid,
    /// (2 pi)^{-d/2} basis normalization
    basis_norm: f64,
    /// quadrature weight (2 pi / M)^d
    quad_w: f64,
}

impl Integrator {
    fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let sites = spec.sites.clone();
        let d = sites.d();
        let max_order: u32 = spec
            .nonlinearity
            .terms()
            .iter()
            .map(|&(p, q, _)| p + q)
            .max()
            .unwrap_or(1);
        let need = 2 * max_order as i32 * sites.n_max() + 1;
        let mut m = 4;
        while (m as i32) < need {
            m *= 2;
        }
        let window = sites.window();
        let grid = SpectralGrid::new(d, m);
        let bins = window.iter().map(|n| grid.bin(n)).collect();
        let lambda = |xi: &[f64], on_s: bool| -> Vec<f64> {
            window
                .iter()
                .map(|n| {
                    let cls = sites.classify(n);
                    let pos = if on_s { cls.s_pos } else { cls.st_pos };
                    n.norm_sq() as f64 + pos.map(|j| xi[j]).unwrap_or(0.0)
                })
                .collect()
        };
        Ok(Integrator {
            lambda_u: lambda(&spec.xi, true),
            lambda_v: lambda(&spec.sigma, false),
            deriv_a: spec.nonlinearity.deriv_a(),
            deriv_b: spec.nonlinearity.deriv_b(),
            g_terms: spec.nonlinearity.terms().to_vec(),
            basis_norm: (2.0 * PI).powf(-(d as f64) / 2.0),
            quad_w: (2.0 * PI / m as f64).powi(d as i32),
            grid,
            bins,
            window,
            sites,
        })
    }

    fn n_modes(&self) -> usize {
        self.window.len()
    }

    /// state layout: u modes then v modes, in window order
    fn to_grid(&self, modes: &[Complex64]) -> Vec<Complex64> {
        let mut data = vec![C_ZERO; self.grid.len()];
        for (b, c) in self.bins.iter().zip(modes) {
            data[*b] = *c;
        }
        self.grid.transform(&mut data, false);
        for x in data.iter_mut() {
            *x *= self.basis_norm;
        }
        data
    }

    /// Projection back onto the window: f_m = (2 pi)^{d/2} M^{-d} DFT(f)[m].
    fn from_grid(&self, mut data: Vec<Complex64>) -> Vec<Complex64> {
        self.grid.transform(&mut data, true);
        let s = (2.0 * PI).powf(self.grid.d as f64 / 2.0) / self.grid.len() as f64;
        self.bins.iter().map(|b| data[*b] * s).collect()
    }

    fn poly_eval(terms: &[(u32, u32, f64)], a: f64, b: f64) -> f64 {
        terms
            .iter()
            .map(|&(p, q, g)| g * a.powi(p as i32) * b.powi(q as i32))
            .sum()
    }

    /// du/dt and dv/dt stacked.
    fn rhs(&self, state: &[Complex64]) -> Vec<Complex64> {
        let nm = self.n_modes();
        let i = Complex64::new(0.0, 1.0);
        let mut out = vec![C_ZERO; 2 * nm];
        let nonlinear = !self.deriv_a.is_empty() || !self.deriv_b.is_empty();
        if nonlinear {
            let ug = self.to_grid(&state[..nm]);
            let vg = self.to_grid(&state[nm..]);
            let mut nu = vec![C_ZERO; self.grid.len()];
            let mut nv = vec![C_ZERO; self.grid.len()];
            for j in 0..self.grid.len() {
                let a = ug[j].norm_sqr();
                let b = vg[j].norm_sqr();
                let ga = Self::poly_eval(&self.deriv_a, a, b);
                let gb = Self::poly_eval(&self.deriv_b, a, b);
                nu[j] = ga * ug[j];
                nv[j] = gb * vg[j];
            }
            let nu_modes = self.from_grid(nu);
            let nv_modes = self.from_grid(nv);
            for k in 0..nm {
                out[k] = i * (self.lambda_u[k] * state[k] + nu_modes[k]);
                out[nm + k] = i * (self.lambda_v[k] * state[nm + k] + nv_modes[k]);
            }
        } else {
            for k in 0..nm {
                out[k] = i * self.lambda_u[k] * state[k];
                out[nm + k] = i * self.lambda_v[k] * state[nm + k];
            }
        }
        out
    }

    fn energy(&self, state: &[Complex64]) -> f64 {
        let nm = self.n_modes();
        let mut e = 0.0;
        for k in 0..nm {
            e += self.lambda_u[k] * state[k].norm_sqr();
            e += self.lambda_v[k] * state[nm + k].norm_sqr();
        }
        if !self.g_terms.is_empty() {
            let ug = self.to_grid(&state[..nm]);
            let vg = self.to_grid(&state[nm..]);
            let mut acc = 0.0;
            for j in 0..self.grid.len() {
                acc += Self::poly_eval(&self.g_terms, ug[j].norm_sqr(), vg[j].norm_sqr());
            }
            e += acc * self.quad_w;
        }
        e
    }
}

/// Fixed-step RK4 integration of the truncated system from `initial`,
/// sampling every `sample_every` steps (the initial state is sample zero).
pub fn integrate(
    spec: &ModelSpec,
    initial: &ModeState,
    dt: f64,
    steps: usize,
    sample_every: usize,
) -> Result<TrajectorySample> {
    let integ = Integrator::new(spec)?;
    let nm = integ.n_modes();
    let max_n2 = integ
        .window
        .iter()
        .map(|n| n.norm_sq() as f64)
        .fold(0.0, f64::max);
    let max_freq = integ
        .lambda_u
        .iter()
        .chain(integ.lambda_v.iter())
        .cloned()
        .fold(0.0f64, |a, b| a.max(b.abs()));
    if dt.abs() * (max_n2 + max_freq) > 0.1 {
        return Err(KamError::Config(format!(
            "time step too large: dt (|n|^2_max + max frequency) = {:.3} > 0.1",
            dt.abs() * (max_n2 + max_freq)
        )));
    }

    let mut state = vec![C_ZERO; 2 * nm];
    for (k, n) in integ.window.iter().enumerate() {
        if let Some(c) = initial.u.get(n) {
            state[k] = *c;
        }
        if let Some(c) = initial.v.get(n) {
            state[nm + k] = *c;
        }
    }

    let su: Vec<usize> = spec
        .sites
        .s_sites()
        .iter()
        .map(|s| integ.window.binary_search(s).unwrap())
        .collect();
    let sv: Vec<usize> = spec
        .sites
        .st_sites()
        .iter()
        .map(|s| integ.window.binary_search(s).unwrap())
        .collect();

    let n_samples = steps / sample_every + 1;
    let mut traj = TrajectorySample {
        times: Vec::with_capacity(n_samples),
        tracked_u: vec![Vec::with_capacity(n_samples); su.len()],
        tracked_v: vec![Vec::with_capacity(n_samples); sv.len()],
        l2_u: Vec::with_capacity(n_samples),
        l2_v: Vec::with_capacity(n_samples),
        normal_l2_u: Vec::with_capacity(n_samples),
        normal_l2_v: Vec::with_capacity(n_samples),
        energy: Vec::with_capacity(n_samples),
        final_state: ModeState::default(),
    };
    let l2 = |s: &[Complex64]| -> f64 { s.iter().map(|c| c.norm_sqr()).sum() };
    let l2_0 = l2(&state);

    let record =
        |t: f64, state: &[Complex64], traj: &mut TrajectorySample| {
            traj.times.push(t);
            for (slot, k) in su.iter().enumerate() {
                traj.tracked_u[slot].push(state[*k]);
            }
            for (slot, k) in sv.iter().enumerate() {
                traj.tracked_v[slot].push(state[nm + *k]);
            }
            traj.l2_u.push(l2(&state[..nm]));
            traj.l2_v.push(l2(&state[nm..]));
            let mut nu = 0.0;
            let mut nv = 0.0;
            for (k, n) in integ.window.iter().enumerate() {
                let cls = integ.sites.classify(n);
                if cls.in_z1 {
                    nu += state[k].norm_sqr();
                }
                if cls.in_z2 {
                    nv += state[nm + k].norm_sqr();
                }
            }
            traj.normal_l2_u.push(nu);
            traj.normal_l2_v.push(nv);
            traj.energy.push(integ.energy(state));
        };
    record(0.0, &state, &mut traj);

    let mut k1;
    for step in 1..=steps {
        k1 = integ.rhs(&state);
        let z2: Vec<Complex64> = state
            .iter()
            .zip(&k1)
            .map(|(a, b)| a + b * (dt / 2.0))
            .collect();
        let k2 = integ.rhs(&z2);
        let z3: Vec<Complex64> = state
            .iter()
            .zip(&k2)
            .map(|(a, b)| a + b * (dt / 2.0))
            .collect();
        let k3 = integ.rhs(&z3);
        let z4: Vec<Complex64> = state.iter().zip(&k3).map(|(a, b)| a + b * dt).collect();
        let k4 = integ.rhs(&z4);
        for idx in 0..state.len() {
            state[idx] += (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]) * (dt / 6.0);
        }
        if step % sample_every == 0 {
            let cur = l2(&state);
            if cur > 2.0 * l2_0.max(1e-300) {
                return Err(KamError::Instability(format!(
                    "l2 norm doubled at t = {:.3}",
                    step as f64 * dt
                )));
            }
            record(step as f64 * dt, &state, &mut traj);
        }
    }

    for (k, n) in integ.window.iter().enumerate() {
        if state[k] != C_ZERO {
            traj.final_state.u.insert(n.clone(), state[k]);
        }
        if state[nm + k] != C_ZERO {
            traj.final_state.v.insert(n.clone(), state[nm + k]);
        }
    }
    Ok(traj)
}

/// One extracted line of the spectrum.
#[derive(Clone, Debug)]
pub struct FrequencyEstimate {
    pub omega: f64,
    pub amplitude: f64,
    /// Peak amplitude over the rms background.
    pub dominance: f64,
}

/// Dominant frequency of a complex signal: spectral peak, parabolic bin
/// refinement, then a linear phase fit of the demodulated signal.
pub fn extract_frequency(signal: &[Complex64], dt_sample: f64) -> Result<FrequencyEstimate> {
    let n = signal.len();
    if n < 8 || n & (n - 1) != 0 {
        return Err(KamError::Config(format!(
            "spectral window must be a power of two, got {n}"
        )));
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = signal.to_vec();
    fft.process(&mut buf);
    let mags: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    let peak = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let background: f64 = {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (i, m) in mags.iter().enumerate() {
            let d = (i as i64 - peak as i64).rem_euclid(n as i64);
            if d > 2 && d < n as i64 - 2 {
                acc += m * m;
                count += 1;
            }
        }
        (acc / count.max(1) as f64).sqrt()
    };
    let dominance = mags[peak] / background.max(1e-300);
    if dominance < 3.0 {
        return Err(KamError::Inconclusive(format!(
            "no dominant peak: ratio {dominance:.2} < 3"
        )));
    }

    // signed bin frequency
    let signed_bin = if peak > n / 2 {
        peak as f64 - n as f64
    } else {
        peak as f64
    };
    let d_omega = 2.0 * PI / (n as f64 * dt_sample);
    // parabolic refinement on neighbouring magnitudes
    let left = mags[(peak + n - 1) % n];
    let right = mags[(peak + 1) % n];
    let denom = left - 2.0 * mags[peak] + right;
    let frac = if denom.abs() > 0.0 {
        0.5 * (left - right) / denom
    } else {
        0.0
    };
    let omega0 = (signed_bin + frac.clamp(-0.5, 0.5)) * d_omega;

    // demodulate and fit the residual phase slope
    let mut phase_prev = 0.0;
    let mut unwrapped = Vec::with_capacity(n);
    for (j, z) in signal.iter().enumerate() {
        let rot = *z * Complex64::new(0.0, -omega0 * j as f64 * dt_sample).exp();
        let mut ph = rot.arg();
        while ph - phase_prev > PI {
            ph -= 2.0 * PI;
        }
        while ph - phase_prev < -PI {
            ph += 2.0 * PI;
        }
        phase_prev = ph;
        unwrapped.push(ph);
    }
    let nn = n as f64;
    let sx = (0..n).map(|j| j as f64).sum::<f64>();
    let sy: f64 = unwrapped.iter().sum();
    let sxx = (0..n).map(|j| (j * j) as f64).sum::<f64>();
    let sxy: f64 = unwrapped
        .iter()
        .enumerate()
        .map(|(j, p)| j as f64 * p)
        .sum();
    let slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    let omega = omega0 + slope / dt_sample;
    Ok(FrequencyEstimate {
        omega,
        amplitude: mags[peak] / nn,
        dominance,
    })
}

/// Maximal deviations of the trajectory from the nominal torus over the
/// sample range [0, upto].
#[derive(Clone, Debug)]
pub struct ResidenceReport {
    pub action_dev: f64,
    pub normal_dev: f64,
}

pub fn torus_residence(
    traj: &TrajectorySample,
    actions_u: &[f64],
    actions_v: &[f64],
    upto: usize,
) -> ResidenceReport {
    let last = upto.min(traj.times.len());
    let mut action_dev = 0.0f64;
    for (hist, target) in traj.tracked_u.iter().zip(actions_u) {
        for z in &hist[..last] {
            action_dev = action_dev.max((z.norm_sqr() - target).abs());
        }
    }
    for (hist, target) in traj.tracked_v.iter().zip(actions_v) {
        for z in &hist[..last] {
            action_dev = action_dev.max((z.norm_sqr() - target).abs());
        }
    }
    let mut normal_dev = 0.0f64;
    for (nu, nv) in traj.normal_l2_u[..last].iter().zip(&traj.normal_l2_v[..last]) {
        normal_dev = normal_dev.max(nu + nv);
    }
    ResidenceReport {
        action_dev,
        normal_dev,
    }
}

/// Initial data on the constructed torus: normal modes zero and tangential
/// amplitudes at the configured radii in the final chart, pulled back through
/// the inverse order of the accumulated time-1 flows, then converted to
/// lattice modes.
pub fn torus_initial_state(
    state: &KamState,
    spec: &ModelSpec,
    theta0: &[f64],
    phi0: &[f64],
    flow_steps: usize,
) -> Result<ModeState> {
    let sites = &spec.sites;
    let mut point = PhasePoint::origin(sites);
    for (j, t) in theta0.iter().enumerate() {
        point.theta[j] = Complex64::new(*t, 0.0);
    }
    for (j, t) in phi0.iter().enumerate() {
        point.phi[j] = Complex64::new(*t, 0.0);
    }
    for f in state.transforms.iter().rev() {
        if f.is_empty() {
            continue;
        }
        let layout = ChartLayout::for_flow(f, &point);
        let field = FlowField::new(f, layout);
        point = field.flow(&point, 1.0, flow_steps)?;
    }

    // chart -> modes; reality of the pulled-back point is a consistency check
    let mut out = ModeState::default();
    let i = Complex64::new(0.0, 1.0);
    for (j, site) in sites.s_sites().iter().enumerate() {
        let amp = (Complex64::new(spec.amp_u[j] * spec.amp_u[j], 0.0) + point.act_i[j]).sqrt();
        out.u.insert(site.clone(), amp * (i * point.theta[j]).exp());
    }
    for (j, site) in sites.st_sites().iter().enumerate() {
        let amp = (Complex64::new(spec.amp_v[j] * spec.amp_v[j], 0.0) + point.act_j[j]).sqrt();
        out.v.insert(site.clone(), amp * (i * point.phi[j]).exp());
    }
    for (n, c) in &point.u {
        let conj_drift = (point.ubar.get(n).unwrap_or(&C_ZERO) - c.conj()).norm();
        if conj_drift > 1e-8 * c.norm().max(1e-12) {
            return Err(KamError::Model(format!(
                "pulled-back point lost reality at u_{n:?}: {conj_drift:.3e}"
            )));
        }
        if *c != C_ZERO {
            out.u.insert(n.clone(), *c);
        }
    }
    for (n, c) in &point.v {
        if *c != C_ZERO {
            out.v.insert(n.clone(), *c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NonlinearitySpec;
    use crate::testing::desk_sites;

    fn desk_spec(g: f64) -> ModelSpec {
        ModelSpec {
            sites: desk_sites(),
            nonlinearity: if g == 0.0 {
                NonlinearitySpec::empty()
            } else {
                NonlinearitySpec::new(vec![(1, 1, g)]).unwrap()
            },
            xi: vec![0.317, 0.259],
            sigma: vec![0.431, 0.127],
            amp_u: vec![0.1, 0.1],
            amp_v: vec![0.1, 0.1],
            degree_cap: 4,
        }
    }

    fn simple_state(spec: &ModelSpec) -> ModeState {
        let mut st = ModeState::default();
        for (j, s) in spec.sites.s_sites().iter().enumerate() {
            st.u.insert(s.clone(), Complex64::new(spec.amp_u[j], 0.0));
        }
        for (j, s) in spec.sites.st_sites().iter().enumerate() {
            st.v.insert(s.clone(), Complex64::new(spec.amp_v[j], 0.0));
        }
        st
    }

    #[test]
    fn linear_modes_rotate_at_their_eigenfrequencies() {
        let spec = desk_spec(0.0);
        let mut st = simple_state(&spec);
        let n = ModeIndex::new(&[1, 1]);
        st.u.insert(n.clone(), Complex64::new(0.05, 0.02));
        let dt = 8e-4;
        let steps = 5000;
        let traj = integrate(&spec, &st, dt, steps, 1).unwrap();
        let t_end = steps as f64 * dt;
        // site (0,0): lambda = xi_1
        let expect = Complex64::new(0.1, 0.0)
            * (Complex64::new(0.0, 1.0) * 0.317 * t_end).exp();
        let got = traj.tracked_u[0].last().unwrap();
        assert!((got - expect).norm() < 1e-9);
        // the free normal mode rotates at |n|^2 = 2
        let got_n = traj.final_state.u.get(&n).unwrap();
        let expect_n =
            Complex64::new(0.05, 0.02) * (Complex64::new(0.0, 1.0) * 2.0 * t_end).exp();
        assert!((got_n - expect_n).norm() < 1e-9);
    }

    #[test]
    fn conserves_energy_and_l2_on_the_desk_instance() {
        let spec = desk_spec(0.4);
        let mut st = simple_state(&spec);
        st.u.insert(ModeIndex::new(&[1, 1]), Complex64::new(0.03, 0.0));
        st.v.insert(ModeIndex::new(&[-1, 0]), Complex64::new(0.0, 0.04));
        let traj = integrate(&spec, &st, 8e-4, 20_000, 20).unwrap();
        let e0 = traj.energy[0];
        let drift = traj
            .energy
            .iter()
            .map(|e| (e - e0).abs())
            .fold(0.0, f64::max)
            / e0.abs();
        assert!(drift < 1e-6, "relative energy drift {drift:.3e}");
        let l0 = traj.l2_u[0];
        let l2_drift = traj
            .l2_u
            .iter()
            .map(|l| (l - l0).abs())
            .fold(0.0, f64::max)
            / l0;
        assert!(l2_drift < 1e-8, "relative l2 drift {l2_drift:.3e}");
    }

    #[test]
    fn gauge_phase_leaves_intensities_unchanged() {
        let spec = desk_spec(0.4);
        let mut st = simple_state(&spec);
        st.u.insert(ModeIndex::new(&[0, 1]), Complex64::new(0.02, 0.01));
        let traj1 = integrate(&spec, &st, 1e-3, 2000, 100).unwrap();
        let phase = Complex64::new(0.0, 0.77).exp();
        let mut st2 = st.clone();
        for c in st2.u.values_mut() {
            *c *= phase;
        }
        let traj2 = integrate(&spec, &st2, 1e-3, 2000, 100).unwrap();
        for (a, b) in traj1.tracked_u[0].iter().zip(&traj2.tracked_u[0]) {
            assert!((a.norm_sqr() - b.norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_backward_returns_initial_data() {
        let spec = desk_spec(0.4);
        let mut st = simple_state(&spec);
        st.u.insert(ModeIndex::new(&[1, -1]), Complex64::new(0.02, -0.03));
        let fwd = integrate(&spec, &st, 1e-3, 4000, 4000).unwrap();
        let back = integrate(&spec, &fwd.final_state, -1e-3, 4000, 4000).unwrap();
        for (n, c0) in &st.u {
            let c1 = back.final_state.u.get(n).cloned().unwrap_or(C_ZERO);
            assert!(
                (c0 - c1).norm() <= 1e-6 * c0.norm().max(1.0),
                "mode {n:?}: {c0} vs {c1}"
            );
        }
    }

    #[test]
    fn frequency_extraction_is_exact_on_linear_flow() {
        let spec = desk_spec(0.0);
        let st = simple_state(&spec);
        let dt = 8e-4;
        let traj = integrate(&spec, &st, dt, 4096, 1).unwrap();
        // drop sample 0 so the window length stays a power of two
        let est = extract_frequency(&traj.tracked_u[1][1..].to_vec(), dt).unwrap();
        let expect = 1.0 + 0.259; // |(1,0)|^2 + xi_2
        assert!(
            (est.omega - expect).abs() < 1e-3,
            "omega {:.6} vs {expect:.6}",
            est.omega
        );
        // conjugate signal peaks at the negated frequency
        let conj: Vec<Complex64> = traj.tracked_u[1][1..].iter().map(|c| c.conj()).collect();
        let est2 = extract_frequency(&conj, dt).unwrap();
        assert!((est2.omega + expect).abs() < 1e-3);
    }

    #[test]
    fn step_guard_rejects_coarse_dt() {
        let spec = desk_spec(0.0);
        let st = simple_state(&spec);
        assert!(integrate(&spec, &st, 0.05, 10, 1).is_err());
    }

    #[test]
    fn residence_is_exact_for_linear_site_rotation() {
        let spec = desk_spec(0.0);
        let st = simple_state(&spec);
        let traj = integrate(&spec, &st, 1e-3, 2000, 50).unwrap();
        let rep = torus_residence(&traj, &[0.01, 0.01], &[0.01, 0.01], usize::MAX);
        assert!(rep.action_dev < 1e-12);
        assert!(rep.normal_dev < 1e-24);
    }
}
