//! Idealized two-phase switched-linear transient simulator.
//!
//! Switches are resistors (`r_on` / `r_off`), capacitors and inductors are
//! ideal, IN is held at `vin`, OUT carries `r_load` to ground and every free
//! net leaks `g_min` to ground. Each phase is a linear network, so one
//! backward-Euler step is an affine map of the storage state
//! (capacitor voltages, inductor currents). The per-period map is built by
//! composing step maps, iterated from rest until period-boundary states
//! settle, and the final period is replayed step by step for measurements.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{structural_check, ComponentKind, DutyCycle, Netlist, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
    #[error("singular system matrix")]
    SingularSystem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub vin: f64,
    pub f_sw: f64,
    pub c_val: f64,
    pub l_val: f64,
    pub r_on: f64,
    pub r_off: f64,
    pub r_load: f64,
    pub g_min: f64,
    pub dt: f64,
    pub max_periods: usize,
    pub ss_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            vin: 2.0,
            f_sw: 200_000.0,
            c_val: 10e-6,
            l_val: 10e-6,
            r_on: 0.05,
            r_off: 10e6,
            r_load: 10.0,
            g_min: 1e-9,
            dt: 1.0 / (200_000.0 * 1000.0),
            max_periods: 2000,
            ss_tol: 1e-4,
        }
    }
}

/// Minimum mean input power for a meaningful efficiency.
pub const P_IN_FLOOR: f64 = 1e-6;
/// Minimum |vout| for a valid result.
pub const VOUT_FLOOR: f64 = 1e-3;
const STATE_NORM_FLOOR: f64 = 1e-9;

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.vin > 0.0) {
            return bad("vin must be positive");
        }
        if !(self.f_sw > 0.0) {
            return bad("f_sw must be positive");
        }
        if !(self.c_val > 0.0 && self.l_val > 0.0) {
            return bad("component values must be positive");
        }
        if !(self.dt > 0.0) || self.dt > 1.0 / (self.f_sw * 200.0) * (1.0 + 1e-9) {
            return bad("dt must be positive and at most 1/(200 f_sw)");
        }
        if !(self.r_on > 0.0 && self.r_on < self.r_load && self.r_load < self.r_off) {
            return bad("need 0 < r_on < r_load < r_off");
        }
        if !(self.g_min >= 0.0) {
            return bad("g_min must be non-negative");
        }
        if !(self.ss_tol > 0.0 && self.ss_tol < 1.0) {
            return bad("ss_tol must lie in (0, 1)");
        }
        if self.max_periods == 0 {
            return bad("max_periods must be at least 1");
        }
        Ok(())
    }

    /// Time steps in one switching period.
    pub fn steps_per_period(&self) -> usize {
        (1.0 / (self.f_sw * self.dt)).round() as usize
    }

    /// Set one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| SimError::InvalidConfig(format!("{key}: not a number: {value}")))
        };
        match key {
            "vin" => self.vin = num()?,
            "f_sw" => self.f_sw = num()?,
            "c_val" => self.c_val = num()?,
            "l_val" => self.l_val = num()?,
            "r_on" => self.r_on = num()?,
            "r_off" => self.r_off = num()?,
            "r_load" => self.r_load = num()?,
            "g_min" => self.g_min = num()?,
            "dt" => self.dt = num()?,
            "ss_tol" => self.ss_tol = num()?,
            "max_periods" => {
                self.max_periods = value
                    .parse()
                    .map_err(|_| SimError::InvalidConfig(format!("{key}: not a count: {value}")))?
            }
            _ => return Err(SimError::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 11] = [
        "vin", "f_sw", "c_val", "l_val", "r_on", "r_off", "r_load", "g_min", "dt", "max_periods",
        "ss_tol",
    ];
}

/// Switch configuration. FET-A conducts in phase A, FET-B in phase B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Design {
    pub netlist: Netlist,
    pub duty: DutyCycle,
}

impl Design {
    pub fn new(netlist: Netlist, duty: DutyCycle) -> Self {
        Design { netlist, duty }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Failure {
    Structural,
    SingularSystem,
    NoSteadyState,
    NonFinite,
    DegenerateOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub valid: bool,
    pub vout: f64,
    pub efficiency: f64,
    pub periods_run: usize,
    pub failure: Option<Failure>,
}

impl SimResult {
    fn failed(failure: Failure, periods_run: usize) -> Self {
        SimResult {
            valid: false,
            vout: 0.0,
            efficiency: 0.0,
            periods_run,
            failure: Some(failure),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Storage {
    Capacitor { g: f64 },
    Inductor { g: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Term {
    Fixed(f64),
    Free(usize),
}

#[derive(Debug, Clone)]
struct StateElem {
    storage: Storage,
    a: NodeId,
    b: NodeId,
}

/// Nodal system for one switch phase with backward-Euler companion models.
///
/// Unknowns are the voltages of every net except `0` and `IN`. The right
/// hand side is `rhs0 + H x` where `x` is the storage state.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    vin: f64,
    index: HashMap<NodeId, usize>,
    conductance: DMatrix<f64>,
    rhs0: DVector<f64>,
    coupling: DMatrix<f64>,
    states: Vec<StateElem>,
    /// Resistive branches (conductance, a, b), used for source current.
    resistors: Vec<(f64, NodeId, NodeId)>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

pub fn build_phase_system(
    n: &Netlist,
    phase: Phase,
    cfg: &SimConfig,
) -> Result<LinearSystem, SimError> {
    let mut index = HashMap::new();
    let mut free = Vec::new();
    let mut nets = n.nodes();
    if !nets.contains(&NodeId::OUT) {
        nets.push(NodeId::OUT);
    }
    for node in nets {
        if node != NodeId::GND && node != NodeId::IN {
            index.insert(node, free.len());
            free.push(node);
        }
    }
    let dim = free.len();
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs0 = DVector::<f64>::zeros(dim);
    let term = |x: NodeId| -> Term {
        if x == NodeId::GND {
            Term::Fixed(0.0)
        } else if x == NodeId::IN {
            Term::Fixed(cfg.vin)
        } else {
            Term::Free(index[&x])
        }
    };

    let stamp = |a: NodeId, b: NodeId, cond: f64, g: &mut DMatrix<f64>, rhs: &mut DVector<f64>| {
        match (term(a), term(b)) {
            (Term::Free(i), Term::Free(j)) => {
                g[(i, i)] += cond;
                g[(j, j)] += cond;
                g[(i, j)] -= cond;
                g[(j, i)] -= cond;
            }
            (Term::Free(i), Term::Fixed(v)) | (Term::Fixed(v), Term::Free(i)) => {
                g[(i, i)] += cond;
                rhs[i] += cond * v;
            }
            (Term::Fixed(_), Term::Fixed(_)) => {}
        }
    };

    let mut resistors = Vec::new();
    let mut states = Vec::new();
    for e in n.entries() {
        let [a, b] = e.terminals;
        match e.device.kind {
            ComponentKind::FetA | ComponentKind::FetB => {
                let on = matches!(
                    (e.device.kind, phase),
                    (ComponentKind::FetA, Phase::A) | (ComponentKind::FetB, Phase::B)
                );
                let cond = 1.0 / if on { cfg.r_on } else { cfg.r_off };
                stamp(a, b, cond, &mut g, &mut rhs0);
                resistors.push((cond, a, b));
            }
            ComponentKind::Capacitor => {
                let cond = cfg.c_val / cfg.dt;
                stamp(a, b, cond, &mut g, &mut rhs0);
                states.push(StateElem {
                    storage: Storage::Capacitor { g: cond },
                    a,
                    b,
                });
            }
            ComponentKind::Inductor => {
                let cond = cfg.dt / cfg.l_val;
                stamp(a, b, cond, &mut g, &mut rhs0);
                states.push(StateElem {
                    storage: Storage::Inductor { g: cond },
                    a,
                    b,
                });
            }
        }
    }
    stamp(NodeId::OUT, NodeId::GND, 1.0 / cfg.r_load, &mut g, &mut rhs0);
    resistors.push((1.0 / cfg.r_load, NodeId::OUT, NodeId::GND));
    for i in 0..dim {
        g[(i, i)] += cfg.g_min;
    }

    let mut coupling = DMatrix::<f64>::zeros(dim, states.len());
    for (j, s) in states.iter().enumerate() {
        // History source injected at a, drawn from b.
        let (into_a, into_b) = match s.storage {
            Storage::Capacitor { g } => (g, -g),
            Storage::Inductor { .. } => (-1.0, 1.0),
        };
        if let Term::Free(i) = term(s.a) {
            coupling[(i, j)] += into_a;
        }
        if let Term::Free(i) = term(s.b) {
            coupling[(i, j)] += into_b;
        }
    }

    let lu = g.clone().lu();
    if dim > 0 && !lu.is_invertible() {
        return Err(SimError::SingularSystem);
    }
    Ok(LinearSystem {
        vin: cfg.vin,
        index,
        conductance: g,
        rhs0,
        coupling,
        states,
        resistors,
        lu,
    })
}

/// One backward-Euler step's observables.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: DVector<f64>,
    pub vout: f64,
    /// Current delivered by the input source into the network.
    pub i_source: f64,
}

impl LinearSystem {
    pub fn state_len(&self) -> usize {
        self.states.len()
    }

    pub fn conductance(&self) -> &DMatrix<f64> {
        &self.conductance
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    /// Unknown-vector slot of a net, if it is not `0` or `IN`.
    pub fn slot(&self, node: NodeId) -> Option<usize> {
        self.index.get(&node).copied()
    }

    /// Node voltages after one step from `state`.
    pub fn solve(&self, state: &DVector<f64>) -> Result<DVector<f64>, SimError> {
        if self.conductance.nrows() == 0 {
            return Ok(DVector::zeros(0));
        }
        let rhs = &self.rhs0 + &self.coupling * state;
        self.lu.solve(&rhs).ok_or(SimError::SingularSystem)
    }

    pub fn voltage(&self, v: &DVector<f64>, node: NodeId) -> f64 {
        if node == NodeId::GND {
            0.0
        } else if node == NodeId::IN {
            self.vin
        } else {
            self.index.get(&node).map_or(0.0, |&i| v[i])
        }
    }

    pub fn step(&self, state: &DVector<f64>) -> Result<StepOutput, SimError> {
        let v = self.solve(state)?;
        let mut next = DVector::zeros(self.states.len());
        let mut i_source = 0.0;
        for (j, s) in self.states.iter().enumerate() {
            let vab = self.voltage(&v, s.a) - self.voltage(&v, s.b);
            // Current through the element from a to b.
            let i = match s.storage {
                Storage::Capacitor { g } => {
                    next[j] = vab;
                    g * (vab - state[j])
                }
                Storage::Inductor { g } => {
                    next[j] = state[j] + g * vab;
                    next[j]
                }
            };
            i_source += branch_from_in(s.a, s.b, i);
        }
        for &(g, a, b) in &self.resistors {
            let i = g * (self.voltage(&v, a) - self.voltage(&v, b));
            i_source += branch_from_in(a, b, i);
        }
        Ok(StepOutput {
            state: next,
            vout: self.voltage(&v, NodeId::OUT),
            i_source,
        })
    }

    /// The step as affine maps: `state' = S x + u`, `vout = cv.x + dv`,
    /// `i_source = ci.x + di`.
    fn affine_step(&self) -> Result<AffineStep, SimError> {
        let n = self.states.len();
        let zero = self.step(&DVector::zeros(n))?;
        let mut s = DMatrix::zeros(n, n);
        let mut cv = DVector::zeros(n);
        let mut ci = DVector::zeros(n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            let out = self.step(&e)?;
            s.set_column(j, &(out.state - &zero.state));
            cv[j] = out.vout - zero.vout;
            ci[j] = out.i_source - zero.i_source;
        }
        Ok(AffineStep {
            map: Affine {
                m: s,
                c: zero.state,
            },
            cv,
            dv: zero.vout,
            ci,
            di: zero.i_source,
        })
    }
}

fn branch_from_in(a: NodeId, b: NodeId, i_ab: f64) -> f64 {
    let mut out = 0.0;
    if a == NodeId::IN {
        out += i_ab;
    }
    if b == NodeId::IN {
        out -= i_ab;
    }
    out
}

#[derive(Debug, Clone)]
struct Affine {
    m: DMatrix<f64>,
    c: DVector<f64>,
}

impl Affine {
    fn identity(n: usize) -> Self {
        Affine {
            m: DMatrix::identity(n, n),
            c: DVector::zeros(n),
        }
    }

    /// `other` applied after `self`.
    fn then(&self, other: &Affine) -> Affine {
        Affine {
            m: &other.m * &self.m,
            c: &other.m * &self.c + &other.c,
        }
    }

    fn pow(&self, mut k: usize) -> Affine {
        let mut acc = Affine::identity(self.c.len());
        let mut base = self.clone();
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.then(&base);
            }
            base = base.then(&base);
            k >>= 1;
        }
        acc
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.m * x + &self.c
    }
}

#[derive(Debug, Clone)]
struct AffineStep {
    map: Affine,
    cv: DVector<f64>,
    dv: f64,
    ci: DVector<f64>,
    di: f64,
}

/// True iff `|cur - prev| <= tol * max(|cur|, floor)` in Euclidean norm.
pub fn steady_state_reached(prev: &[f64], cur: &[f64], tol: f64) -> bool {
    assert_eq!(prev.len(), cur.len(), "state vectors differ in length");
    let diff = prev
        .iter()
        .zip(cur)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let norm = cur.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff <= tol * norm.max(STATE_NORM_FLOOR)
}

/// Number of steps spent in phase B (FET-B on) per period. The duty cycle
/// is the conduction fraction of FET-B; FET-A conducts the remainder.
pub fn phase_b_steps(duty: DutyCycle, steps_per_period: usize) -> usize {
    (duty.value() * steps_per_period as f64).round() as usize
}

pub fn simulate(d: &Design, cfg: &SimConfig) -> SimResult {
    if structural_check(&d.netlist).iter().any(|v| v.is_error()) {
        return SimResult::failed(Failure::Structural, 0);
    }
    match run(d, cfg) {
        Ok(r) => r,
        Err(SimError::SingularSystem) => SimResult::failed(Failure::SingularSystem, 0),
        Err(SimError::InvalidConfig(_)) => SimResult::failed(Failure::Structural, 0),
    }
}

fn run(d: &Design, cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let sys_a = build_phase_system(&d.netlist, Phase::A, cfg)?;
    let sys_b = build_phase_system(&d.netlist, Phase::B, cfg)?;
    let step_a = sys_a.affine_step()?;
    let step_b = sys_b.affine_step()?;
    let per_period = cfg.steps_per_period();
    let n_b = phase_b_steps(d.duty, per_period);
    let n_a = per_period - n_b;
    let period = step_b.map.pow(n_b).then(&step_a.map.pow(n_a));
    if !all_finite(&period.m) || !period.c.iter().all(|x| x.is_finite()) {
        return Ok(SimResult::failed(Failure::NonFinite, 0));
    }

    let ns = sys_a.state_len();
    let mut x = DVector::<f64>::zeros(ns);
    let mut periods = 0;
    let start = loop {
        periods += 1;
        let next = period.apply(&x);
        if !next.iter().all(|v| v.is_finite()) {
            return Ok(SimResult::failed(Failure::NonFinite, periods));
        }
        if steady_state_reached(x.as_slice(), next.as_slice(), cfg.ss_tol) {
            break x;
        }
        if periods >= cfg.max_periods {
            return Ok(SimResult::failed(Failure::NoSteadyState, periods));
        }
        x = next;
    };

    // Replay the settled period step by step.
    let mut state = start;
    let (mut sum_v, mut sum_v2, mut sum_i) = (0.0, 0.0, 0.0);
    for k in 0..per_period {
        let s = if k < n_b { &step_b } else { &step_a };
        let vout = s.cv.dot(&state) + s.dv;
        let i_src = s.ci.dot(&state) + s.di;
        sum_v += vout;
        sum_v2 += vout * vout;
        sum_i += i_src;
        state = s.map.apply(&state);
    }
    let steps = per_period as f64;
    let vout = sum_v / steps;
    let p_out = sum_v2 / steps / cfg.r_load;
    let p_in = cfg.vin * sum_i / steps;
    if !(vout.is_finite() && p_out.is_finite() && p_in.is_finite()) {
        return Ok(SimResult::failed(Failure::NonFinite, periods));
    }
    if p_in < P_IN_FLOOR || vout.abs() < VOUT_FLOOR {
        return Ok(SimResult {
            vout,
            ..SimResult::failed(Failure::DegenerateOutput, periods)
        });
    }
    Ok(SimResult {
        valid: true,
        vout,
        efficiency: (p_out / p_in).clamp(0.0, 1.0),
        periods_run: periods,
        failure: None,
    })
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_triple_list;

    pub(crate) const BUCK: &str =
        "[['FET-B-0','IN','6'],['FET-A-0','6','0'],['inductor-0','6','OUT'],['capacitor-0','OUT','0']]";

    fn design(text: &str, duty: f64) -> Design {
        Design::new(parse_triple_list(text).unwrap(), DutyCycle::from_value(duty).unwrap())
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.steps_per_period(), 1000);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = SimConfig::default();
        cfg.dt = 1e-6;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::default();
        cfg.r_load = 1e8;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::default();
        assert!(cfg.set("bogus", "1").is_err());
        cfg.set("vin", "3.3").unwrap();
        assert_eq!(cfg.vin, 3.3);
    }

    #[test]
    fn closed_switch_divider() {
        let cfg = SimConfig::default();
        let n = parse_triple_list("[['FET-A-0','IN','OUT']]").unwrap();
        let sys = build_phase_system(&n, Phase::A, &cfg).unwrap();
        let v = sys.solve(&DVector::zeros(0)).unwrap();
        let expected = cfg.vin * cfg.r_load / (cfg.r_on + cfg.r_load);
        // g_min loads OUT as well; it is 1e-9 S against 0.1 S.
        assert!((sys.voltage(&v, NodeId::OUT) - expected).abs() < 1e-6);
    }

    #[test]
    fn open_switch_divider() {
        let cfg = SimConfig::default();
        let n = parse_triple_list("[['FET-A-0','IN','OUT']]").unwrap();
        let sys = build_phase_system(&n, Phase::B, &cfg).unwrap();
        let v = sys.solve(&DVector::zeros(0)).unwrap();
        let expected = cfg.vin * cfg.r_load / (cfg.r_off + cfg.r_load);
        assert!((sys.voltage(&v, NodeId::OUT) - expected).abs() < 1e-8);
        assert!(sys.voltage(&v, NodeId::OUT) < 1e-5);
    }

    #[test]
    fn buck_phase_a_matrix_by_hand() {
        // Unknowns sorted by net: OUT, 6. Phase A: FET-B off, FET-A on.
        let cfg = SimConfig::default();
        let n = parse_triple_list(BUCK).unwrap();
        let sys = build_phase_system(&n, Phase::A, &cfg).unwrap();
        let out = sys.slot(NodeId::OUT).unwrap();
        let six = sys.slot(NodeId::Internal(6)).unwrap();
        let gl = cfg.dt / cfg.l_val;
        let gc = cfg.c_val / cfg.dt;
        let g = sys.conductance();
        let expect_out = gl + gc + 1.0 / cfg.r_load + cfg.g_min;
        let expect_six = 1.0 / cfg.r_off + 1.0 / cfg.r_on + gl + cfg.g_min;
        assert!((g[(out, out)] - expect_out).abs() < 1e-9 * expect_out);
        assert!((g[(six, six)] - expect_six).abs() < 1e-9 * expect_six);
        // Inductor companion branch couples 6 and OUT.
        assert!((g[(out, six)] + gl).abs() < 1e-15);
        assert!((g[(six, out)] + gl).abs() < 1e-15);
        // States: inductor (entry 2), capacitor (entry 3).
        let h = sys.coupling();
        assert_eq!(h[(six, 0)], -1.0);
        assert_eq!(h[(out, 0)], 1.0);
        assert!((h[(out, 1)] - gc).abs() < 1e-9);
        assert_eq!(h[(six, 1)], 0.0);
    }

    #[test]
    fn buck_half_duty() {
        let r = simulate(&design(BUCK, 0.5), &SimConfig::default());
        assert!(r.valid, "{r:?}");
        assert!((r.vout - 1.0).abs() < 0.05, "{r:?}");
        assert!(r.efficiency > 0.9, "{r:?}");
    }

    #[test]
    fn output_missing_is_structural() {
        let r = simulate(&design("[['capacitor-0','IN','0']]", 0.1), &SimConfig::default());
        assert!(!r.valid);
        assert_eq!(r.failure, Some(Failure::Structural));
    }

    #[test]
    fn steady_state_predicate() {
        assert!(steady_state_reached(&[1.0, 2.0], &[1.0, 2.0], 1e-4));
        assert!(steady_state_reached(&[0.0], &[0.0], 1e-4));
        assert!(!steady_state_reached(&[1.0], &[1.2], 0.05));
    }

    #[test]
    fn periods_bounded() {
        let mut cfg = SimConfig::default();
        cfg.max_periods = 3;
        let r = simulate(&design(BUCK, 0.5), &cfg);
        assert!(r.periods_run <= 3);
        assert_eq!(r.failure, Some(Failure::NoSteadyState));
    }
}
