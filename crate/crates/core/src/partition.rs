//! Non-overlapping node partitions, oversampling closures and the
//! partition regularity measurements.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::network::{NodeSubset, SpatialNetwork};

/// Assignment of every node to one of `N` connected subgraphs.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    assignment: Vec<usize>,
    parts: Vec<Vec<usize>>,
    /// Sorted ids of subgraphs sharing at least one edge with each subgraph.
    adjacency: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition from a per-node part id. Ids are compacted to
    /// `0..N` in order of first use by id value, and parts whose induced
    /// subgraph is disconnected are split into their components. Returns the
    /// repaired partition and human-readable warnings.
    pub fn from_assignment(
        net: &SpatialNetwork,
        assignment: &[usize],
    ) -> Result<(Self, Vec<String>)> {
        check_len(net.node_count(), assignment.len())?;
        let mut warnings = Vec::new();
        let ids: BTreeSet<usize> = assignment.iter().copied().collect();
        let max_id = *ids.iter().next_back().unwrap_or(&0);
        if ids.len() != max_id + 1 {
            warnings.push(format!(
                "part ids are not contiguous ({} distinct ids up to {max_id}); relabelled",
                ids.len()
            ));
        }

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (x, &p) in assignment.iter().enumerate() {
            groups.entry(p).or_default().push(x);
        }
        let mut new_assignment = vec![usize::MAX; net.node_count()];
        let mut next = 0;
        let mut member = vec![false; net.node_count()];
        for (&old_id, nodes) in &groups {
            for &x in nodes {
                member[x] = true;
            }
            let mut pieces = 0;
            for &start in nodes {
                if new_assignment[start] != usize::MAX {
                    continue;
                }
                pieces += 1;
                let mut queue = VecDeque::from([start]);
                new_assignment[start] = next;
                while let Some(x) = queue.pop_front() {
                    for &(y, _) in net.neighbors(x) {
                        if member[y] && new_assignment[y] == usize::MAX {
                            new_assignment[y] = next;
                            queue.push_back(y);
                        }
                    }
                }
                next += 1;
            }
            for &x in nodes {
                member[x] = false;
            }
            if pieces > 1 {
                warnings.push(format!(
                    "part {old_id} is disconnected; split into {pieces} connected parts"
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok((
            Self::from_valid_assignment(net, new_assignment, next),
            warnings,
        ))
    }

    fn from_valid_assignment(net: &SpatialNetwork, assignment: Vec<usize>, count: usize) -> Self {
        let mut parts = vec![Vec::new(); count];
        for (x, &p) in assignment.iter().enumerate() {
            parts[p].push(x);
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); count];
        for e in net.edges() {
            let (p, q) = (assignment[e.x], assignment[e.y]);
            if p != q {
                adj[p].insert(q);
                adj[q].insert(p);
            }
        }
        Partition {
            assignment,
            parts,
            adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    /// Number of subgraphs `N`.
    pub fn count(&self) -> usize {
        self.parts.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn part_of(&self, x: usize) -> usize {
        self.assignment[x]
    }

    /// Sorted nodes of subgraph `i`.
    pub fn nodes(&self, i: usize) -> &[usize] {
        &self.parts[i]
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    fn check_id(&self, i: usize) -> Result<()> {
        if i >= self.count() {
            return Err(Error::InvalidArgument(format!(
                "subgraph id {i} out of range for {} subgraphs",
                self.count()
            )));
        }
        Ok(())
    }

    /// Sorted ids of the subgraphs forming the `k`-layer oversampling of subgraph `i`:
    /// each layer adds every whole subgraph with a node adjacent to the current set.
    pub fn closure(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        self.check_id(i)?;
        let mut inside = vec![false; self.count()];
        inside[i] = true;
        let mut frontier = vec![i];
        let mut members = vec![i];
        for _ in 0..k {
            let mut next = Vec::new();
            for &p in &frontier {
                for &q in &self.adjacency[p] {
                    if !inside[q] {
                        inside[q] = true;
                        next.push(q);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            members.extend_from_slice(&next);
            frontier = next;
        }
        members.sort_unstable();
        Ok(members)
    }

    /// Per-layer member lists for layers `0..=k_max`.
    pub fn closure_layers(&self, i: usize, k_max: usize) -> Result<Vec<Vec<usize>>> {
        (0..=k_max).map(|k| self.closure(i, k)).collect()
    }

    /// Sorted node list of a union of subgraphs.
    pub fn union_nodes(&self, ids: &[usize]) -> Vec<usize> {
        let mut nodes: Vec<usize> = ids
            .iter()
            .flat_map(|&p| self.parts[p].iter().copied())
            .collect();
        nodes.sort_unstable();
        nodes
    }

    /// The oversampled node set `N_i^k`.
    pub fn oversample(&self, i: usize, k: usize) -> Result<NodeSubset> {
        let ids = self.closure(i, k)?;
        NodeSubset::new(self.assignment.len(), self.union_nodes(&ids))
    }

    /// Debug dump: `{ "i": [[members of layer 0], [layer 1], ...] }`.
    pub fn oversampling_json(&self, k_max: usize) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for i in 0..self.count() {
            let layers = self.closure_layers(i, k_max).expect("valid id");
            map.insert(
                i.to_string(),
                serde_json::to_value(layers).expect("serializable"),
            );
        }
        serde_json::Value::Object(map)
    }

    /// Sizes of each subgraph.
    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::with_capacity(self.assignment.len() * 4);
        for p in &self.assignment {
            s.push_str(&p.to_string());
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Reads a METIS-style partition file: one integer part id per node line.
pub fn load_partition(net: &SpatialNetwork, path: &Path) -> Result<(Partition, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut assignment = Vec::with_capacity(net.node_count());
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let id: usize = t.parse().map_err(|_| {
            Error::parse(
                path,
                k + 1,
                format!("part id '{t}' is not a non-negative integer"),
            )
        })?;
        assignment.push(id);
    }
    if assignment.len() != net.node_count() {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!(
                "expected {} part ids, found {}",
                net.node_count(),
                assignment.len()
            ),
        ));
    }
    Partition::from_assignment(net, &assignment)
}

/// Splits the bounding box of the node coordinates into a `bx × by` grid of
/// blocks; every node joins the block containing it. Empty blocks are dropped.
pub fn partition_blocks(
    net: &SpatialNetwork,
    bx: usize,
    by: usize,
) -> Result<(Partition, Vec<String>)> {
    let coords = net
        .coords()
        .ok_or_else(|| Error::InvalidArgument("block partition needs node coordinates".into()))?;
    if bx == 0 || by == 0 {
        return Err(Error::InvalidArgument(
            "block counts must be positive".into(),
        ));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let bin = |v: f64, d: usize, b: usize| {
        let span = hi[d] - lo[d];
        if span <= 0.0 {
            return 0;
        }
        (((v - lo[d]) / span * b as f64) as usize).min(b - 1)
    };
    let assignment: Vec<usize> = coords
        .iter()
        .map(|c| bin(c[1], 1, by) * bx + bin(c[0], 0, bx))
        .collect();
    Partition::from_assignment(net, &assignment)
}

/// Options for the native region-growing partitioner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowOptions {
    /// Allowed relative deviation of part sizes from `node_count / N`.
    pub balance: f64,
    pub max_passes: usize,
}

impl Default for GrowOptions {
    fn default() -> Self {
        GrowOptions {
            balance: 0.3,
            max_passes: 200,
        }
    }
}

/// BFS region growing from `n_parts` seeds placed by farthest-point traversal,
/// followed by boundary re-balancing moves that keep every part connected.
/// Deterministic for a fixed `seed`.
pub fn partition_grow(
    net: &SpatialNetwork,
    n_parts: usize,
    seed: u64,
    opts: &GrowOptions,
) -> Result<Partition> {
    let n = net.node_count();
    if n_parts == 0 || n_parts > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} nodes into {n_parts} parts"
        )));
    }
    if !net.is_connected() {
        return Err(Error::InvalidArgument(
            "region growing needs a connected network".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..n);
    let mut dist = hop_distances(net, &[start]);
    let mut seeds = Vec::with_capacity(n_parts);
    for _ in 0..n_parts {
        let far = (0..n)
            .filter(|x| !seeds.contains(x))
            .max_by_key(|&x| (dist[x], Reverse(x)))
            .expect("n_parts <= n");
        seeds.push(far);
        let d = hop_distances(net, &[far]);
        for (a, b) in dist.iter_mut().zip(d) {
            *a = if seeds.len() == 1 { b } else { (*a).min(b) };
        }
    }

    let mut assignment = vec![usize::MAX; n];
    let mut sizes = vec![0usize; n_parts];
    let mut frontier: Vec<VecDeque<usize>> = vec![VecDeque::new(); n_parts];
    let mut heap = BinaryHeap::new();
    for (p, &s) in seeds.iter().enumerate() {
        assignment[s] = p;
        sizes[p] = 1;
        frontier[p].extend(net.neighbors(s).iter().map(|&(y, _)| y));
        heap.push(Reverse((1usize, p)));
    }
    let mut assigned = n_parts;
    while assigned < n {
        let Some(Reverse((size, p))) = heap.pop() else {
            break;
        };
        if size != sizes[p] {
            continue;
        }
        while let Some(x) = frontier[p].pop_front() {
            if assignment[x] == usize::MAX {
                assignment[x] = p;
                sizes[p] += 1;
                assigned += 1;
                frontier[p].extend(
                    net.neighbors(x)
                        .iter()
                        .map(|&(y, _)| y)
                        .filter(|&y| assignment[y] == usize::MAX),
                );
                break;
            }
        }
        if !frontier[p].is_empty() {
            heap.push(Reverse((sizes[p], p)));
        }
    }
    debug_assert_eq!(assigned, n);

    rebalance(net, &mut assignment, &mut sizes, opts);
    let part = Partition::from_valid_assignment(net, assignment, n_parts);
    let target = n as f64 / n_parts as f64;
    let worst = part
        .sizes()
        .iter()
        .map(|&s| (s as f64 - target).abs() / target)
        .fold(0.0, f64::max);
    if worst > opts.balance {
        log::warn!(
            "partition imbalance {worst:.2} exceeds requested {:.2}",
            opts.balance
        );
    }
    Ok(part)
}

fn rebalance(
    net: &SpatialNetwork,
    assignment: &mut [usize],
    sizes: &mut [usize],
    opts: &GrowOptions,
) {
    let n = assignment.len();
    let target = n as f64 / sizes.len() as f64;
    let upper = (target * (1.0 + opts.balance)).floor() as usize;
    let lower = (target * (1.0 - opts.balance)).ceil() as usize;
    let out_of_bounds = |s: usize| s > upper || s < lower;
    let mut mark = vec![false; n];
    for _ in 0..opts.max_passes {
        if !sizes.iter().any(|&s| out_of_bounds(s)) {
            return;
        }
        let mut moved = false;
        for x in 0..n {
            let p = assignment[x];
            if sizes[p] <= 1 {
                continue;
            }
            let best = net
                .neighbors(x)
                .iter()
                .map(|&(y, _)| assignment[y])
                .filter(|&q| q != p && sizes[p] >= sizes[q] + 2)
                .min_by_key(|&q| (sizes[q], q));
            let Some(q) = best else { continue };
            if stays_connected_without(net, assignment, p, x, &mut mark) {
                assignment[x] = q;
                sizes[p] -= 1;
                sizes[q] += 1;
                moved = true;
            }
        }
        if !moved {
            return;
        }
    }
}

fn stays_connected_without(
    net: &SpatialNetwork,
    assignment: &[usize],
    p: usize,
    removed: usize,
    mark: &mut [bool],
) -> bool {
    let Some(start) = net
        .neighbors(removed)
        .iter()
        .map(|&(y, _)| y)
        .find(|&y| assignment[y] == p)
    else {
        // isolated within its part: only possible if the part is {removed}
        return false;
    };
    let mut visited = vec![start];
    mark[start] = true;
    mark[removed] = true;
    let mut head = 0;
    while head < visited.len() {
        let x = visited[head];
        head += 1;
        for &(y, _) in net.neighbors(x) {
            if !mark[y] && assignment[y] == p {
                mark[y] = true;
                visited.push(y);
            }
        }
    }
    let part_size = assignment.iter().filter(|&&a| a == p).count();
    for &x in &visited {
        mark[x] = false;
    }
    mark[removed] = false;
    visited.len() == part_size - 1
}

/// Hop distance from the nearest of `sources`; `usize::MAX` when unreachable.
pub fn hop_distances(net: &SpatialNetwork, sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; net.node_count()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(x) = queue.pop_front() {
        for &(y, _) in net.neighbors(x) {
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Measured regularity constants of a partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// `f_table[l] = max_i #{j : N_j ⊆ N_i^l}`.
    pub f_table: Vec<usize>,
    pub max_degree: usize,
}

pub fn regularity(net: &SpatialNetwork, part: &Partition, l_max: usize) -> RegularityReport {
    let f_table = (0..=l_max)
        .map(|l| {
            (0..part.count())
                .map(|i| part.closure(i, l).expect("valid id").len())
                .max()
                .unwrap_or(0)
        })
        .collect();
    RegularityReport {
        f_table,
        max_degree: net.max_degree(),
    }
}
