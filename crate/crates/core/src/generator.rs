//! Random-search topology generation, deduplication, dataset assembly and
//! prompt construction.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{
    canonical_key, structural_check, ComponentKind, Device, DutyCycle, Entry, Netlist, NodeId,
};
use crate::simulator::{simulate, Design, SimConfig, SimResult};

pub const MIN_COMPONENTS: usize = 4;
pub const MAX_COMPONENTS: usize = 10;

/// Per-group sampling weights for G1..G4.
pub const GROUP_WEIGHTS: [f64; 4] = [0.1, 0.25, 0.25, 0.4];
pub const G1_EFFICIENCY: f64 = 0.05;
pub const G2_EFFICIENCY: f64 = 0.7;
/// |vout - vin| below this puts a high-efficiency design in G3.
pub const G3_VOLTAGE_BAND: f64 = 0.2;

pub const CE_THRESHOLDS: [f64; 5] = [0.3, 0.5, 0.6, 0.7, 0.8];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("component count {0} outside [4, 10]")]
    ComponentCount(usize),
    #[error("no structurally clean netlist after {0} draws")]
    ExhaustedRetries(usize),
    #[error("search space exhausted: found {found} unique netlists, wanted {target}")]
    SpaceExhausted {
        found: usize,
        target: usize,
        netlists: Vec<Netlist>,
    },
    #[error("target must be at least 1")]
    EmptyTarget,
    #[error("simulation result is not valid")]
    InvalidInput,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("prompt is missing a constraint: {0}")]
    MissingConstraint(&'static str),
}

const RETRY_BUDGET: usize = 200_000;

/// All kind-count vectors of total `n` with at least one switch.
fn feasible_multisets(n: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for c in 0..=n {
        for l in 0..=n - c {
            for a in 0..=n - c - l {
                let b = n - c - l - a;
                if a + b >= 1 {
                    out.push([c, l, a, b]);
                }
            }
        }
    }
    out
}

/// Draw one structurally clean `n`-device netlist.
pub fn random_topology(n: usize, seed: u64) -> Result<Netlist, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_topology_with(n, &mut rng)
}

pub fn random_topology_with<R: Rng>(n: usize, rng: &mut R) -> Result<Netlist, GenError> {
    if !(MIN_COMPONENTS..=MAX_COMPONENTS).contains(&n) {
        return Err(GenError::ComponentCount(n));
    }
    let multisets = feasible_multisets(n);
    let mut pool = vec![NodeId::IN, NodeId::OUT, NodeId::GND];
    pool.extend((1..=n as u32).map(NodeId::Internal));
    let mut slots = vec![(0usize, 0usize); n];
    for _ in 0..RETRY_BUDGET {
        let counts = multisets[rng.gen_range(0..multisets.len())];
        for s in slots.iter_mut() {
            *s = (rng.gen_range(0..pool.len()), rng.gen_range(0..pool.len()));
        }
        if !quick_accept(&counts, &slots, pool.len()) {
            continue;
        }
        let mut entries = Vec::with_capacity(n);
        let mut k = 0;
        for (kind, &count) in ComponentKind::ALL.iter().zip(&counts) {
            for index in 0..count {
                let (a, b) = slots[k];
                k += 1;
                entries.push(Entry::new(Device::new(*kind, index as u32), pool[a], pool[b]));
            }
        }
        entries.shuffle(rng);
        let netlist = Netlist::new(entries).expect("indices are unique by construction");
        if !structural_check(&netlist).iter().any(|v| v.is_error()) {
            return Ok(netlist);
        }
    }
    Err(GenError::ExhaustedRetries(RETRY_BUDGET))
}

/// Cheap necessary conditions for a clean draw over pool slots
/// (0 = IN, 1 = OUT, 2 = ground, 3.. internal): no self loop, every used
/// internal slot touched twice, OUT present, IN/0 present or implied, and a
/// single connected component.
fn quick_accept(counts: &[usize; 4], slots: &[(usize, usize)], pool: usize) -> bool {
    let mut degree = [0u8; 16];
    let mut parent: [usize; 16] = std::array::from_fn(|i| i);
    fn find(p: &mut [usize; 16], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for &(a, b) in slots {
        if a == b {
            return false;
        }
        degree[a] += 1;
        degree[b] += 1;
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let has_in = degree[0] > 0 || counts[3] > 0;
    let has_gnd = degree[2] > 0 || counts[2] > 0;
    if degree[1] == 0 || !has_in || !has_gnd {
        return false;
    }
    if (3..pool).any(|i| degree[i] == 1) {
        return false;
    }
    let root = find(&mut parent, slots[0].0);
    (0..pool).all(|i| degree[i] == 0 || find(&mut parent, i) == root)
}

/// Limits for [`generate_unique`]: stop after `max_draws` draws, or after
/// `stall_limit` consecutive draws without a new topology.
#[derive(Debug, Clone, Copy)]
pub struct SearchBudget {
    pub max_draws: usize,
    pub stall_limit: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_draws: 5_000_000,
            stall_limit: 50_000,
        }
    }
}

pub fn generate_unique(n: usize, target: usize, seed: u64) -> Result<Vec<Netlist>, GenError> {
    generate_unique_with(n, target, seed, SearchBudget::default())
}

/// Random search keeping the first representative of each topology.
pub fn generate_unique_with(
    n: usize,
    target: usize,
    seed: u64,
    budget: SearchBudget,
) -> Result<Vec<Netlist>, GenError> {
    if target == 0 {
        return Err(GenError::EmptyTarget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = HashSet::new();
    let mut out = Vec::new();
    let mut stall = 0;
    for _ in 0..budget.max_draws {
        let netlist = random_topology_with(n, &mut rng)?;
        if keys.insert(canonical_key(&netlist)) {
            out.push(netlist);
            stall = 0;
            if out.len() == target {
                return Ok(out);
            }
        } else {
            stall += 1;
            if stall >= budget.stall_limit {
                break;
            }
        }
    }
    Err(GenError::SpaceExhausted {
        found: out.len(),
        target,
        netlists: out,
    })
}

/// The netlist at each of the five duty cycles, ascending.
pub fn sweep_duties(n: &Netlist) -> Vec<Design> {
    DutyCycle::all()
        .into_iter()
        .map(|d| Design::new(n.clone(), d))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    G1,
    G2,
    G3,
    G4,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::G1, Group::G2, Group::G3, Group::G4];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn assign_group(sim: &SimResult, vin: f64) -> Result<Group, GenError> {
    if !sim.valid {
        return Err(GenError::InvalidInput);
    }
    Ok(if sim.efficiency < G1_EFFICIENCY {
        Group::G1
    } else if sim.efficiency <= G2_EFFICIENCY {
        Group::G2
    } else if (sim.vout - vin).abs() < G3_VOLTAGE_BAND {
        Group::G3
    } else {
        Group::G4
    })
}

/// Draw `batch` indices with replacement so that group frequencies follow
/// [`GROUP_WEIGHTS`]. Weights of absent groups are spread proportionally
/// over the present ones.
pub fn weighted_indices<R: Rng>(
    groups: &[Group],
    batch: usize,
    rng: &mut R,
) -> Result<Vec<usize>, GenError> {
    if groups.is_empty() {
        return Err(GenError::EmptyDataset);
    }
    let mut members: [Vec<usize>; 4] = Default::default();
    for (i, g) in groups.iter().enumerate() {
        members[g.index()].push(i);
    }
    let total: f64 = (0..4)
        .filter(|&g| !members[g].is_empty())
        .map(|g| GROUP_WEIGHTS[g])
        .sum();
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut u = rng.gen::<f64>() * total;
        let mut pick = None;
        for g in 0..4 {
            if members[g].is_empty() {
                continue;
            }
            pick = Some(g);
            if u < GROUP_WEIGHTS[g] {
                break;
            }
            u -= GROUP_WEIGHTS[g];
        }
        let m = &members[pick.expect("at least one group is present")];
        out.push(m[rng.gen_range(0..m.len())]);
    }
    Ok(out)
}

pub fn weighted_sample<'a>(
    records: &'a [DatasetRecord],
    batch: usize,
    seed: u64,
) -> Result<Vec<&'a DatasetRecord>, GenError> {
    let groups: Vec<Group> = records.iter().map(|r| r.group).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(weighted_indices(&groups, batch, &mut rng)?
        .into_iter()
        .map(|i| &records[i])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    C,
    CE,
    CV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Less,
    Greater,
}

impl Relation {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Relation::Less => value < bound,
            Relation::Greater => value > bound,
        }
    }

    fn words(self) -> &'static str {
        match self {
            Relation::Less => "less than",
            Relation::Greater => "greater than",
        }
    }
}

/// A design instruction: the mandatory device pool plus at most one
/// optional performance constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub category: Category,
    /// Device names in the order they are listed; counts per kind follow.
    pub devices: Vec<String>,
    pub eff_floor: Option<f64>,
    pub vout_bound: Option<(Relation, f64)>,
    pub vin: Option<f64>,
}

impl Prompt {
    pub fn component_constraint(devices: &[Device]) -> Prompt {
        Prompt {
            category: Category::C,
            devices: devices.iter().map(|d| d.to_string()).collect(),
            eff_floor: None,
            vout_bound: None,
            vin: None,
        }
    }

    pub fn with_efficiency(mut self, floor: f64) -> Prompt {
        self.category = Category::CE;
        self.eff_floor = Some(floor);
        self
    }

    pub fn with_vout(mut self, rel: Relation, bound: f64, vin: f64) -> Prompt {
        self.category = Category::CV;
        self.vout_bound = Some((rel, bound));
        self.vin = Some(vin);
        self
    }

    pub fn device_list(&self) -> Vec<Device> {
        self.devices
            .iter()
            .filter_map(|d| d.parse().ok())
            .collect()
    }

    /// Devices per kind, indexed by [`ComponentKind::ordinal`].
    pub fn pool(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for d in self.device_list() {
            counts[d.kind.ordinal()] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.devices.is_empty() {
            return Err(GenError::MissingConstraint("component pool"));
        }
        if self.device_list().len() != self.devices.len() {
            return Err(GenError::MissingConstraint("device names"));
        }
        match self.category {
            Category::C => Ok(()),
            Category::CE if self.eff_floor.is_some() => Ok(()),
            Category::CE => Err(GenError::MissingConstraint("efficiency floor")),
            Category::CV if self.vout_bound.is_some() && self.vin.is_some() => Ok(()),
            Category::CV => Err(GenError::MissingConstraint("output voltage bound")),
        }
    }

    /// Render the instruction text.
    pub fn render(&self) -> Result<String, GenError> {
        self.validate()?;
        let devices = self.device_list();
        let mut kinds: Vec<ComponentKind> = Vec::new();
        for d in &devices {
            if !kinds.contains(&d.kind) {
                kinds.push(d.kind);
            }
        }
        let groups: Vec<String> = kinds
            .iter()
            .map(|&k| {
                let mut names: Vec<Device> =
                    devices.iter().copied().filter(|d| d.kind == k).collect();
                names.sort();
                let names: Vec<String> = names.iter().map(|d| d.to_string()).collect();
                format!("{}: {}", kind_label(k, names.len() > 1), join_and(&names))
            })
            .collect();
        let mut text = format!("Generate a {}-component circuit with ", devices.len());
        for (i, g) in groups.iter().enumerate() {
            if i > 0 {
                text.push(' ');
                if i + 1 == groups.len() {
                    text.push_str("and ");
                }
            }
            text.push_str(g);
            text.push(';');
        }
        let quoted: Vec<String> = self.devices.iter().map(|d| format!("'{d}'")).collect();
        let _ = write!(text, " representing different nodes: [{}]", quoted.join(", "));
        match self.category {
            Category::C => {}
            Category::CE => {
                let _ = write!(
                    text,
                    " with efficiency greater than {}",
                    self.eff_floor.unwrap()
                );
            }
            Category::CV => {
                let (rel, v) = self.vout_bound.unwrap();
                let _ = write!(
                    text,
                    " with Vout {} {}V when Vin equals {}V",
                    rel.words(),
                    v,
                    self.vin.unwrap()
                );
            }
        }
        Ok(text)
    }
}

fn kind_label(k: ComponentKind, plural: bool) -> String {
    let base = match k {
        ComponentKind::Capacitor => "capacitor",
        ComponentKind::Inductor => "inductor",
        ComponentKind::FetA => "n-type MOSFET",
        ComponentKind::FetB => "p-type MOSFET",
    };
    if plural {
        format!("{base}s")
    } else {
        base.to_string()
    }
}

fn join_and(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Build a prompt of the given category and render it.
pub fn build_prompt(
    devices: &[Device],
    category: Category,
    eff_floor: Option<f64>,
    vout_bound: Option<(Relation, f64)>,
    vin: Option<f64>,
) -> Result<(Prompt, String), GenError> {
    let prompt = Prompt {
        category,
        devices: devices.iter().map(|d| d.to_string()).collect(),
        eff_floor: if category == Category::CE { eff_floor } else { None },
        vout_bound: if category == Category::CV { vout_bound } else { None },
        vin: if category == Category::CV { vin } else { None },
    };
    let text = prompt.render()?;
    Ok((prompt, text))
}

/// Prompt-category proportions (C, CE, CV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMix(pub [f64; 3]);

impl Default for CategoryMix {
    fn default() -> Self {
        CategoryMix([0.2, 0.4, 0.4])
    }
}

impl CategoryMix {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Category {
        let total: f64 = self.0.iter().sum();
        let u = rng.gen::<f64>() * total;
        if u < self.0[0] {
            Category::C
        } else if u < self.0[0] + self.0[1] {
            Category::CE
        } else {
            Category::CV
        }
    }
}

/// CV bounds: eighths of vin strictly inside (0, vin).
pub fn cv_grid(vin: f64) -> Vec<f64> {
    (1..8).map(|k| vin * k as f64 / 8.0).collect()
}

/// A prompt of `category` that the simulated design satisfies. Falls back to
/// a component-only prompt when no CE threshold lies below its efficiency.
pub fn prompt_for_design<R: Rng>(
    design: &Design,
    sim: &SimResult,
    category: Category,
    vin: f64,
    rng: &mut R,
) -> Prompt {
    let devices: Vec<Device> = design.netlist.entries().iter().map(|e| e.device).collect();
    let base = Prompt::component_constraint(&devices);
    match category {
        Category::C => base,
        Category::CE => {
            let ok: Vec<f64> = CE_THRESHOLDS
                .iter()
                .copied()
                .filter(|t| sim.efficiency > *t)
                .collect();
            match ok.choose(rng) {
                Some(t) => base.with_efficiency(*t),
                None => base,
            }
        }
        Category::CV => {
            let grid: Vec<f64> = cv_grid(vin)
                .into_iter()
                .filter(|b| *b != sim.vout)
                .collect();
            let b = grid[rng.gen_range(0..grid.len())];
            let rel = if sim.vout < b {
                Relation::Less
            } else {
                Relation::Greater
            };
            base.with_vout(rel, b, vin)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub prompt: Prompt,
    pub design: Design,
    pub sim: SimResult,
    pub group: Group,
}

/// Every simulated design plus the grouped, prompted records for the valid
/// ones.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub simulated: Vec<(Design, SimResult)>,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn group_histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for r in &self.records {
            h[r.group.index()] += 1;
        }
        h
    }
}

/// Simulate every netlist at the five duties and attach prompts.
pub fn build_dataset(
    netlists: &[Netlist],
    cfg: &SimConfig,
    mix: CategoryMix,
    seed: u64,
) -> Dataset {
    let designs: Vec<Design> = netlists.iter().flat_map(sweep_duties).collect();
    let sims: Vec<SimResult> = designs.par_iter().map(|d| simulate(d, cfg)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (design, sim) in designs.iter().zip(&sims) {
        let Ok(group) = assign_group(sim, cfg.vin) else {
            continue;
        };
        let category = mix.draw(&mut rng);
        let prompt = prompt_for_design(design, sim, category, cfg.vin, &mut rng);
        records.push(DatasetRecord {
            prompt,
            design: design.clone(),
            sim: sim.clone(),
            group,
        });
    }
    Dataset {
        simulated: designs.into_iter().zip(sims).collect(),
        records,
    }
}
