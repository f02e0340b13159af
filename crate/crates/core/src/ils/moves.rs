//! Neighborhood moves on tuples.
//!
//! Every move is a list of relocations, each taking an exact part of a tuple
//! (requests and their demand periods) to another tuple key of the same
//! content. The inverse relocates the same parts back in reverse order, which
//! restores the tuples exactly.

use rand::seq::SliceRandom;
use rand::Rng;

use super::state::{SearchState, Transfer, Tuple, TupleKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Neighborhood {
    /// A whole tuple to another server in the same period, onto a free key.
    Shift,
    /// Two tuples on different servers exchange servers.
    Swap,
    /// Part of a tuple, one request or one demand period of it, to any server
    /// in the same period or `d` periods away.
    Split,
    /// A whole tuple into the tuple of the same period on another server.
    Merge,
    /// A whole tuple `d` periods earlier or later, on any server.
    Delay,
}

impl Neighborhood {
    pub const ALL: [Neighborhood; 5] =
        [Neighborhood::Shift, Neighborhood::Swap, Neighborhood::Split, Neighborhood::Merge, Neighborhood::Delay];
    /// Moves used by the perturbation.
    pub const PERTURB: [Neighborhood; 4] =
        [Neighborhood::Shift, Neighborhood::Swap, Neighborhood::Split, Neighborhood::Merge];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relocation {
    pub from: TupleKey,
    pub to: TupleKey,
    pub part: Tuple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub kind: Neighborhood,
    pub parts: Vec<Relocation>,
}

impl Move {
    pub fn inverse(&self) -> Move {
        let parts =
            self.parts.iter().rev().map(|r| Relocation { from: r.to, to: r.from, part: r.part.clone() }).collect();
        Move { kind: self.kind, parts }
    }
}

/// A kept move: its cost change and the move restoring the previous state.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub delta: f64,
    pub inverse: Move,
}

fn whole(from: TupleKey, tuple: &Tuple, to: TupleKey) -> Relocation {
    Relocation { from, to, part: tuple.clone() }
}

impl SearchState<'_> {
    fn transfers(&self, mv: &Move) -> Option<Vec<Transfer>> {
        let (ns, tf) = (self.inst.servers.len(), self.inst.periods);
        let mut out = Vec::new();
        for r in &mv.parts {
            let (from, to) = (r.from, r.to);
            if from == to || from.content != to.content || to.server >= ns || to.period == 0 || to.period > tf {
                return None;
            }
            let have = self.tuples.get(&from)?;
            for (&i, os) in &r.part {
                if os.is_empty() || !os.is_subset(have.get(&i)?) || os.iter().any(|&o| o > to.period) {
                    return None;
                }
                out.push(Transfer { from, to, request: i, chunks: os.clone() });
            }
        }
        Some(out)
    }

    /// Applies `mv` if its parts exist and the result is feasible.
    pub fn apply(&mut self, mv: &Move) -> Option<Applied> {
        let transfers = self.transfers(mv)?;
        let delta = self.execute(&transfers)?;
        Some(Applied { delta, inverse: mv.inverse() })
    }

    /// Candidate moves of one neighborhood, in a deterministic order.
    /// Swap pairs are subsampled to `swap_fraction` of the pair list.
    pub fn candidates<R: Rng>(&self, nb: Neighborhood, d: usize, swap_fraction: f64, rng: &mut R) -> Vec<Move> {
        let ns = self.inst.servers.len();
        let tf = self.inst.periods as isize;
        let keys: Vec<TupleKey> = self.tuples.keys().copied().collect();
        let shifted = |k: TupleKey, delta: isize| {
            let p = k.period as isize + delta;
            (p >= 1 && p <= tf).then(|| k.at(p as usize))
        };
        let hostable = |k: TupleKey| self.can_host(k.content, k.server, k.period);
        let mv = |kind, parts| Move { kind, parts };
        let mut out = Vec::new();
        match nb {
            Neighborhood::Shift => {
                for &k in &keys {
                    for j in (0..ns).filter(|&j| j != k.server) {
                        let to = k.on(j);
                        if hostable(to) && !self.tuples.contains_key(&to) {
                            out.push(mv(nb, vec![whole(k, &self.tuples[&k], to)]));
                        }
                    }
                }
            }
            Neighborhood::Swap => {
                let mut pairs = Vec::new();
                for (x, &a) in keys.iter().enumerate() {
                    for &b in &keys[x + 1..] {
                        let (ta, tb) = (a.on(b.server), b.on(a.server));
                        let free =
                            (!self.tuples.contains_key(&ta) || ta == b) && (!self.tuples.contains_key(&tb) || tb == a);
                        if a.server != b.server && free && hostable(ta) && hostable(tb) {
                            pairs.push((a, b));
                        }
                    }
                }
                let n = ((pairs.len() as f64 * swap_fraction).ceil() as usize).max(1).min(pairs.len());
                for (a, b) in pairs.choose_multiple(rng, n) {
                    let parts =
                        vec![whole(*a, &self.tuples[a], a.on(b.server)), whole(*b, &self.tuples[b], b.on(a.server))];
                    out.push(mv(nb, parts));
                }
            }
            Neighborhood::Split => {
                let d = d as isize;
                for &k in &keys {
                    let t = &self.tuples[&k];
                    let mut parts: Vec<Tuple> = Vec::new();
                    for (&i, os) in t {
                        if t.len() > 1 {
                            parts.push(Tuple::from([(i, os.clone())]));
                        }
                        if os.len() > 1 {
                            parts.extend(os.iter().map(|&o| Tuple::from([(i, [o].into())])));
                        }
                    }
                    let periods = [Some(k), shifted(k, d), shifted(k, -d)];
                    let targets: Vec<TupleKey> = periods
                        .into_iter()
                        .flatten()
                        .flat_map(|p| (0..ns).map(move |j| p.on(j)))
                        .filter(|&to| to != k)
                        .collect();
                    for part in parts {
                        for &to in targets.iter().filter(|&&to| hostable(to)) {
                            out.push(mv(nb, vec![Relocation { from: k, to, part: part.clone() }]));
                        }
                    }
                }
            }
            Neighborhood::Merge => {
                for &k in &keys {
                    for j in (0..ns).filter(|&j| j != k.server) {
                        if self.tuples.contains_key(&k.on(j)) {
                            out.push(mv(nb, vec![whole(k, &self.tuples[&k], k.on(j))]));
                        }
                    }
                }
            }
            Neighborhood::Delay => {
                let d = d as isize;
                for &k in &keys {
                    let periods = [d, -d].into_iter().filter_map(|delta| shifted(k, delta));
                    for to in periods.flat_map(|p| (0..ns).map(move |j| p.on(j))) {
                        if hostable(to) {
                            out.push(mv(nb, vec![whole(k, &self.tuples[&k], to)]));
                        }
                    }
                }
            }
        }
        out
    }

    /// First improving move of `nb`, tried in random order. Kept if found.
    pub fn improve<R: Rng>(&mut self, nb: Neighborhood, d: usize, swap_fraction: f64, rng: &mut R) -> Option<Applied> {
        let mut cands = self.candidates(nb, d, swap_fraction, rng);
        cands.shuffle(rng);
        for mv in cands {
            if let Some(applied) = self.apply(&mv) {
                if applied.delta < -1e-9 {
                    return Some(applied);
                }
                self.apply(&applied.inverse).expect("inverse of a kept move applies");
            }
        }
        None
    }
}
