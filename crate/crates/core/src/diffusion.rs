//! Gossip of scalar objective differences.
//!
//! Each agent keeps the freshest `(D_j, stamp)` it has heard for every other
//! agent, plus a short history of its own perturbation vectors. Its partial
//! gradient estimate multiplies each received scalar by its own perturbation
//! from the stamped round.

use std::io::{self, Write};

use thiserror::Error;

use crate::zeroth_order::{difference_quotient, EstimatorError};

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("stamp {stamp} is older than the perturbation history (oldest kept: {oldest})")]
    StaleBeyondBuffer { stamp: u64, oldest: u64 },
}

/// Freshest known objective difference per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceTable {
    owner: usize,
    values: Vec<f64>,
    stamps: Vec<Option<u64>>,
}

impl DifferenceTable {
    pub fn new(owner: usize, n: usize) -> Self {
        assert!(owner < n);
        Self {
            owner,
            values: vec![0.0; n],
            stamps: vec![None; n],
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// `None` until agent `j`'s information has arrived.
    pub fn stamp(&self, j: usize) -> Option<u64> {
        self.stamps[j]
    }

    /// Stores the owner's own quotient `(f_plus - f_minus) / (2u)` for round `t`.
    pub fn record_local(
        &mut self,
        t: u64,
        f_plus: f64,
        f_minus: f64,
        u: f64,
    ) -> Result<f64, DiffusionError> {
        let d = difference_quotient(f_plus, f_minus, u)?;
        self.values[self.owner] = d;
        self.stamps[self.owner] = Some(t);
        Ok(d)
    }

    /// Adopts, for every `j` other than the owner, the freshest entry among
    /// the owner and the given neighbor snapshots. Neighbors must come in
    /// ascending order; ties keep the current entry, then favor the lowest
    /// neighbor index.
    pub fn gossip_merge<'a, I>(&mut self, snapshots: &[DifferenceTable], neighbors: I)
    where
        I: IntoIterator<Item = &'a usize>,
    {
        let mut last = None;
        for &k in neighbors {
            debug_assert!(last < Some(k), "neighbors must be strictly ascending");
            last = Some(k);
            let other = &snapshots[k];
            for j in 0..self.values.len() {
                if j != self.owner && other.stamps[j] > self.stamps[j] {
                    self.stamps[j] = other.stamps[j];
                    self.values[j] = other.values[j];
                }
            }
        }
    }

    /// One `t i j stamp D` line per entry; missing stamps print as `-`.
    pub fn write_trace<W: Write>(&self, t: u64, out: &mut W) -> io::Result<()> {
        for j in 0..self.values.len() {
            match self.stamps[j] {
                Some(s) => writeln!(out, "{t} {} {j} {s} {:e}", self.owner, self.values[j])?,
                None => writeln!(out, "{t} {} {j} - 0", self.owner)?,
            }
        }
        Ok(())
    }
}

/// Ring buffer of an agent's own perturbation vectors, indexed by round.
#[derive(Debug, Clone)]
pub struct PerturbationHistory {
    dim: usize,
    capacity: usize,
    data: Vec<f64>,
    rounds: Vec<Option<u64>>,
}

impl PerturbationHistory {
    pub fn new(dim: usize, capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self {
            dim,
            capacity,
            data: vec![0.0; dim * capacity],
            rounds: vec![None; capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Slot for round `t`, to be filled by the caller; evicts round `t - capacity`.
    pub fn slot_mut(&mut self, t: u64) -> &mut [f64] {
        let k = (t % self.capacity as u64) as usize;
        self.rounds[k] = Some(t);
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn push(&mut self, t: u64, z: &[f64]) {
        self.slot_mut(t).copy_from_slice(z);
    }

    pub fn get(&self, t: u64) -> Result<&[f64], DiffusionError> {
        let k = (t % self.capacity as u64) as usize;
        if self.rounds[k] == Some(t) {
            Ok(&self.data[k * self.dim..(k + 1) * self.dim])
        } else {
            let oldest = self.rounds.iter().flatten().copied().min().unwrap_or(0);
            Err(DiffusionError::StaleBeyondBuffer { stamp: t, oldest })
        }
    }
}

/// `G0 = (1/n) sum_j D_j z_{stamp_j}`, using the owner's own perturbations.
/// Entries without a stamp contribute nothing.
pub fn assemble_grad_f0(
    table: &DifferenceTable,
    history: &PerturbationHistory,
    out: &mut [f64],
) -> Result<(), DiffusionError> {
    out.iter_mut().for_each(|v| *v = 0.0);
    let n = table.len() as f64;
    for j in 0..table.len() {
        if let Some(s) = table.stamps[j] {
            let z = history.get(s)?;
            let w = table.values[j] / n;
            for (o, zk) in out.iter_mut().zip(z) {
                *o += w * zk;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{shortest_path_distances, Graph};
    use proptest::prelude::*;

    /// Runs the synchronous protocol with constant local values `D_j = j + 1`.
    fn simulate(graph: &Graph, rounds: u64) -> Vec<DifferenceTable> {
        let n = graph.len();
        let mut tables: Vec<_> = (0..n).map(|i| DifferenceTable::new(i, n)).collect();
        for t in 0..rounds {
            let snapshot = tables.clone();
            for (i, table) in tables.iter_mut().enumerate() {
                table.record_local(t, (i + 1) as f64, -((i + 1) as f64), 1.0).unwrap();
                table.gossip_merge(&snapshot, graph.neighbors(i));
            }
        }
        tables
    }

    #[test]
    fn constant_cost_records_zero() {
        let mut t = DifferenceTable::new(0, 2);
        assert_eq!(t.record_local(5, 3.0, 3.0, 0.1).unwrap(), 0.0);
        assert_eq!(t.stamp(0), Some(5));
    }

    #[test]
    fn affine_cost_records_directional_derivative() {
        let a = [1.5, -2.0, 0.25];
        let x = [0.3, 0.1, -0.7];
        let z = [0.2, 0.4, -1.0];
        let u = 0.01;
        let f = |v: &[f64]| a.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
        let plus: Vec<f64> = x.iter().zip(&z).map(|(p, q)| p + u * q).collect();
        let minus: Vec<f64> = x.iter().zip(&z).map(|(p, q)| p - u * q).collect();
        let mut t = DifferenceTable::new(0, 1);
        let d = t.record_local(0, f(&plus), f(&minus), u).unwrap();
        let exact: f64 = a.iter().zip(&z).map(|(p, q)| p * q).sum();
        assert!((d - exact).abs() < 1e-12);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut t = DifferenceTable::new(0, 1);
        assert!(t.record_local(0, f64::NAN, 0.0, 0.1).is_err());
        assert_eq!(t.stamp(0), None);
    }

    #[test]
    fn complete_graph_is_one_round_behind() {
        let g = Graph::complete(5).unwrap();
        let tables = simulate(&g, 4);
        for (i, table) in tables.iter().enumerate() {
            for j in 0..5 {
                let expected = if i == j { 3 } else { 2 };
                assert_eq!(table.stamp(j), Some(expected));
                assert_eq!(table.value(j), (j + 1) as f64);
            }
        }
    }

    #[test]
    fn path_graph_end_is_two_rounds_behind() {
        let g = Graph::path(3).unwrap();
        let tables = simulate(&g, 6);
        assert_eq!(tables[0].stamp(2), Some(3));
        assert_eq!(tables[0].stamp(1), Some(4));
        assert_eq!(tables[2].stamp(0), Some(3));
    }

    #[test]
    fn warm_up_leaves_far_entries_unstamped() {
        let g = Graph::path(4).unwrap();
        let tables = simulate(&g, 2);
        assert_eq!(tables[0].stamp(3), None);
        assert_eq!(tables[0].stamp(1), Some(0));
    }

    #[test]
    fn ties_prefer_own_then_lowest_neighbor() {
        let mut snaps: Vec<_> = (0..3).map(|i| DifferenceTable::new(i, 3)).collect();
        snaps[1].values[0] = 10.0;
        snaps[1].stamps[0] = Some(4);
        snaps[2].values[0] = 20.0;
        snaps[2].stamps[0] = Some(4);
        let mut me = DifferenceTable::new(2, 3);
        me.gossip_merge(&snaps.clone(), &[0usize, 1]);
        assert_eq!(me.value(0), 10.0);

        let mut own = snaps[2].clone();
        snaps[1].values[0] = 99.0;
        own.gossip_merge(&snaps, &[1usize]);
        assert_eq!(own.value(0), 20.0);
    }

    #[test]
    fn history_reports_evicted_rounds() {
        let mut h = PerturbationHistory::new(2, 3);
        for t in 0..5 {
            h.push(t, &[t as f64, -(t as f64)]);
        }
        assert_eq!(h.get(4).unwrap(), &[4.0, -4.0]);
        assert_eq!(h.get(2).unwrap(), &[2.0, -2.0]);
        assert_eq!(
            h.get(1),
            Err(DiffusionError::StaleBeyondBuffer { stamp: 1, oldest: 2 })
        );
    }

    #[test]
    fn assembly_of_zero_values_is_zero() {
        let mut t = DifferenceTable::new(0, 3);
        t.record_local(0, 1.0, 1.0, 0.5).unwrap();
        let mut h = PerturbationHistory::new(2, 1);
        h.push(0, &[1.0, 2.0]);
        let mut out = [9.0; 2];
        assemble_grad_f0(&t, &h, &mut out).unwrap();
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn single_agent_is_plain_two_point_estimator() {
        let mut t = DifferenceTable::new(0, 1);
        let d = t.record_local(7, 2.0, 1.0, 0.25).unwrap();
        let mut h = PerturbationHistory::new(3, 1);
        let z = [0.5, -1.0, 2.0];
        h.push(7, &z);
        let mut out = [0.0; 3];
        assemble_grad_f0(&t, &h, &mut out).unwrap();
        for k in 0..3 {
            assert_eq!(out[k], d * z[k]);
        }
    }

    #[test]
    fn assembly_detects_undersized_history() {
        let g = Graph::path(3).unwrap();
        let tables = simulate(&g, 6);
        let mut h = PerturbationHistory::new(1, 2);
        h.push(4, &[1.0]);
        h.push(5, &[1.0]);
        let mut out = [0.0];
        assert!(matches!(
            assemble_grad_f0(&tables[0], &h, &mut out),
            Err(DiffusionError::StaleBeyondBuffer { stamp: 3, .. })
        ));
    }

    #[test]
    fn trace_lines_list_every_entry() {
        let g = Graph::path(2).unwrap();
        let tables = simulate(&g, 1);
        let mut buf = Vec::new();
        tables[0].write_trace(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("0 0 0 0 "));
        assert!(text.lines().nth(1).unwrap().ends_with("- 0"));
    }

    fn connected_graph() -> impl Strategy<Value = Graph> {
        (2usize..=12, 0.15f64..0.9, any::<u64>())
            .prop_filter_map("connected", |(n, p, seed)| Graph::erdos_renyi(n, p, seed).ok())
    }

    proptest! {
        #[test]
        fn delay_law_after_warm_up(g in connected_graph(), extra in 0u64..4) {
            let dist = shortest_path_distances(&g).unwrap();
            let diameter = dist.iter().flatten().copied().max().unwrap() as u64;
            let rounds = diameter + 1 + extra;
            let tables = simulate(&g, rounds);
            let t = rounds - 1;
            for i in 0..g.len() {
                for j in 0..g.len() {
                    prop_assert_eq!(tables[i].stamp(j), Some(t - dist[i][j] as u64));
                }
            }
        }

        #[test]
        fn stamps_never_decrease_and_merge_is_idempotent(g in connected_graph(), rounds in 1u64..8) {
            let n = g.len();
            let mut tables: Vec<_> = (0..n).map(|i| DifferenceTable::new(i, n)).collect();
            for t in 0..rounds {
                let snapshot = tables.clone();
                for (i, table) in tables.iter_mut().enumerate() {
                    let before = table.clone();
                    table.record_local(t, 1.0, 0.0, 1.0).unwrap();
                    table.gossip_merge(&snapshot, g.neighbors(i));
                    let once = table.clone();
                    table.gossip_merge(&snapshot, g.neighbors(i));
                    prop_assert_eq!(&once, &*table);
                    for j in 0..n {
                        prop_assert!(table.stamp(j) >= before.stamp(j));
                    }
                }
            }
        }

        #[test]
        fn history_of_diameter_plus_one_suffices(g in connected_graph(), extra in 0u64..6) {
            let dist = shortest_path_distances(&g).unwrap();
            let diameter = dist.iter().flatten().copied().max().unwrap();
            let n = g.len();
            let mut tables: Vec<_> = (0..n).map(|i| DifferenceTable::new(i, n)).collect();
            let mut hist: Vec<_> = (0..n).map(|_| PerturbationHistory::new(1, diameter + 1)).collect();
            let mut out = [0.0];
            for t in 0..(diameter as u64 + 2 + extra) {
                let snapshot = tables.clone();
                for (i, table) in tables.iter_mut().enumerate() {
                    hist[i].push(t, &[t as f64]);
                    table.record_local(t, 1.0, 0.0, 1.0).unwrap();
                    table.gossip_merge(&snapshot, g.neighbors(i));
                    prop_assert!(assemble_grad_f0(table, &hist[i], &mut out).is_ok());
                }
            }
        }
    }
}
