//! Decoding grammars: which tokens are legal after a prefix, and the sparse
//! features the model sees at each step.

use crate::generator::{Category, Prompt, Relation, CE_THRESHOLDS};

use super::tokens::*;

/// A left-to-right grammar driving a [`super::PolicyParams`] model.
pub trait Grammar {
    type Prompt;
    type State: Clone;

    fn vocab(&self) -> usize;
    /// Length of the sparse feature space.
    fn feature_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn start(&self, x: &Self::Prompt) -> Self::State;
    /// Legal next tokens; all false once the sequence is complete.
    fn mask(&self, s: &Self::State) -> Vec<bool>;
    fn features(&self, x: &Self::Prompt, s: &Self::State, out: &mut Vec<usize>);
    fn advance(&self, s: &mut Self::State, t: Token);
    fn is_done(&self, s: &Self::State) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    EntryStart,
    Index,
    First,
    Second,
    Sep,
    Eos,
    Done,
}

#[derive(Debug, Clone)]
pub struct NetlistState {
    slot: Slot,
    entries: usize,
    used: [u16; 4],
    kind_count: [usize; 4],
    kind: usize,
    first: usize,
    degree: [u8; NODES],
    bag: Vec<usize>,
    max_internal: usize,
}

/// The netlist grammar conditioned on a [`Prompt`].
#[derive(Debug, Clone, Copy, Default)]
pub struct NetlistGrammar;

// Feature blocks.
const F_CATEGORY: usize = 0;
const F_POOL: usize = F_CATEGORY + 3;
const F_EFF: usize = F_POOL + 4 * 11;
const F_VOUT: usize = F_EFF + 6;
const F_SLOT: usize = F_VOUT + 2 * 8;
const F_ENTRIES: usize = F_SLOT + 7;
const F_KIND_COUNT: usize = F_ENTRIES + MAX_ENTRIES + 1;
const F_REMAIN: usize = F_KIND_COUNT + 4 * 11;
const F_KIND: usize = F_REMAIN + 4 * 5;
const F_FIRST: usize = F_KIND + 4;
const F_KIND_FIRST: usize = F_FIRST + NODES;
const F_DEGREE: usize = F_KIND_FIRST + 4 * NODES;
const F_BAG: usize = F_DEGREE + NODES * 4;
const F_MAX_INTERNAL: usize = F_BAG + 4 * NODES * NODES;
const F_REMAIN_SLOT: usize = F_MAX_INTERNAL + MAX_INTERNAL as usize + 1;
const F_DIM: usize = F_REMAIN_SLOT + 4 * 5 * 7;

fn prompt_features(x: &Prompt, out: &mut Vec<usize>) {
    out.push(F_CATEGORY + x.category as usize);
    let pool = x.pool();
    for (k, &c) in pool.iter().enumerate() {
        out.push(F_POOL + k * 11 + c.min(10));
    }
    if x.category == Category::CE {
        let f = x.eff_floor.unwrap_or(0.0);
        let nearest = CE_THRESHOLDS
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f).abs().total_cmp(&(b.1 - f).abs()))
            .map(|(i, _)| i)
            .unwrap();
        out.push(F_EFF + 1 + nearest);
    } else {
        out.push(F_EFF);
    }
    if let (Category::CV, Some((rel, b)), Some(vin)) = (x.category, x.vout_bound, x.vin) {
        let eighth = ((b / vin * 8.0).round() as i64).clamp(0, 7) as usize;
        let r = match rel {
            Relation::Less => 0,
            Relation::Greater => 1,
        };
        out.push(F_VOUT + r * 8 + eighth);
    }
}

fn remain_bucket(pool: usize, used: usize) -> usize {
    match pool as i64 - used as i64 {
        d if d < 0 => 0,
        d => (d as usize + 1).min(4),
    }
}

impl Grammar for NetlistGrammar {
    type Prompt = Prompt;
    type State = NetlistState;

    fn vocab(&self) -> usize {
        VOCAB
    }

    fn feature_dim(&self) -> usize {
        F_DIM
    }

    fn max_len(&self) -> usize {
        MAX_LEN
    }

    fn start(&self, _x: &Prompt) -> NetlistState {
        NetlistState {
            slot: Slot::EntryStart,
            entries: 0,
            used: [0; 4],
            kind_count: [0; 4],
            kind: 0,
            first: 0,
            degree: [0; NODES],
            bag: Vec::new(),
            max_internal: 0,
        }
    }

    fn mask(&self, s: &NetlistState) -> Vec<bool> {
        let mut m = vec![false; VOCAB];
        match s.slot {
            Slot::EntryStart => {
                if s.entries < MAX_ENTRIES {
                    for k in 0..4 {
                        m[KIND0 + k] = s.used[k].count_ones() < MAX_INDEX as u32;
                    }
                }
                if s.entries > 0 {
                    m[DUTY0..EOS].fill(true);
                }
            }
            Slot::Index => {
                for i in 0..MAX_INDEX {
                    m[IDX0 + i] = s.used[s.kind] & (1 << i) == 0;
                }
            }
            Slot::First | Slot::Second => m[NODE0..NODE0 + NODES].fill(true),
            Slot::Sep => m[SEP] = true,
            Slot::Eos => m[EOS] = true,
            Slot::Done => {}
        }
        m
    }

    fn features(&self, x: &Prompt, s: &NetlistState, out: &mut Vec<usize>) {
        prompt_features(x, out);
        let slot = s.slot as usize;
        out.push(F_SLOT + slot);
        out.push(F_ENTRIES + s.entries);
        let pool = x.pool();
        for k in 0..4 {
            out.push(F_KIND_COUNT + k * 11 + s.kind_count[k].min(10));
            let r = remain_bucket(pool[k], s.kind_count[k]);
            out.push(F_REMAIN + k * 5 + r);
            out.push(F_REMAIN_SLOT + (k * 5 + r) * 7 + slot);
        }
        if matches!(s.slot, Slot::Index | Slot::First | Slot::Second) {
            out.push(F_KIND + s.kind);
        }
        if s.slot == Slot::Second {
            out.push(F_FIRST + s.first);
            out.push(F_KIND_FIRST + s.kind * NODES + s.first);
        }
        for (n, &d) in s.degree.iter().enumerate() {
            if d > 0 {
                out.push(F_DEGREE + n * 4 + (d as usize).min(4) - 1);
            }
        }
        out.extend(s.bag.iter().map(|b| F_BAG + b));
        out.push(F_MAX_INTERNAL + s.max_internal);
    }

    fn advance(&self, s: &mut NetlistState, t: Token) {
        match s.slot {
            Slot::EntryStart if t < IDX0 => {
                s.kind = t - KIND0;
                s.slot = Slot::Index;
            }
            Slot::EntryStart => s.slot = Slot::Eos,
            Slot::Index => {
                s.used[s.kind] |= 1 << (t - IDX0);
                s.slot = Slot::First;
            }
            Slot::First | Slot::Second => {
                let n = t - NODE0;
                s.degree[n] = s.degree[n].saturating_add(1);
                if n >= 5 {
                    s.max_internal = s.max_internal.max(n - 4);
                }
                if s.slot == Slot::First {
                    s.first = n;
                    s.slot = Slot::Second;
                } else {
                    let (a, b) = (s.first.min(n), s.first.max(n));
                    s.bag.push((s.kind * NODES + a) * NODES + b);
                    s.slot = Slot::Sep;
                }
            }
            Slot::Sep => {
                s.entries += 1;
                s.kind_count[s.kind] += 1;
                s.slot = Slot::EntryStart;
            }
            Slot::Eos | Slot::Done => s.slot = Slot::Done,
        }
    }

    fn is_done(&self, s: &NetlistState) -> bool {
        s.slot == Slot::Done
    }
}

/// Fixed-length sequences over a small vocabulary with every token legal
/// at every step. Features are the position and the previous token.
#[derive(Debug, Clone, Copy)]
pub struct ToyGrammar {
    pub vocab: usize,
    pub len: usize,
}

impl Grammar for ToyGrammar {
    type Prompt = ();
    type State = (usize, Option<Token>);

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn feature_dim(&self) -> usize {
        self.len + self.vocab + 1
    }

    fn max_len(&self) -> usize {
        self.len
    }

    fn start(&self, _x: &()) -> Self::State {
        (0, None)
    }

    fn mask(&self, s: &Self::State) -> Vec<bool> {
        vec![s.0 < self.len; self.vocab]
    }

    fn features(&self, _x: &(), s: &Self::State, out: &mut Vec<usize>) {
        out.push(s.0.min(self.len - 1));
        out.push(self.len + s.1.map_or(self.vocab, |t| t));
    }

    fn advance(&self, s: &mut Self::State, t: Token) {
        *s = (s.0 + 1, Some(t));
    }

    fn is_done(&self, s: &Self::State) -> bool {
        s.0 >= self.len
    }
}
