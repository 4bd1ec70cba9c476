//! Weakly-connected networks: partition, combination matrix, and the limiting
//! objects (Perron vectors, `A^inf`, `W`, `Omega`, aggregate weights).
//!
//! Agents are listed in component order, sending components first. Column `k`
//! of the combination matrix holds the weights agent `k` applies to its
//! neighbours, so every column sums to one (left-stochastic).

use std::collections::VecDeque;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

/// Column-sum tolerance accepted when validating a combination matrix.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Relative condition threshold beyond which `I - A_R` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
pub const DEFAULT_MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub struct NetworkPartition {
    sending: Vec<usize>,
    receiving: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawPartition {
    sending: Vec<usize>,
    receiving: Vec<usize>,
}

impl TryFrom<RawPartition> for NetworkPartition {
    type Error = Error;
    fn try_from(raw: RawPartition) -> Result<Self> {
        NetworkPartition::new(raw.sending, raw.receiving)
    }
}

impl From<NetworkPartition> for RawPartition {
    fn from(p: NetworkPartition) -> Self {
        RawPartition {
            sending: p.sending,
            receiving: p.receiving,
        }
    }
}

/// Which component an agent belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Sending(usize),
    Receiving(usize),
}

impl NetworkPartition {
    pub fn new(sending: Vec<usize>, receiving: Vec<usize>) -> Result<Self> {
        if sending.is_empty() || receiving.is_empty() {
            return Err(Error::InvalidSpec(
                "a weak graph needs at least one sending and one receiving component".into(),
            ));
        }
        if sending.iter().chain(&receiving).any(|&n| n == 0) {
            return Err(Error::InvalidSpec("component sizes must be positive".into()));
        }
        Ok(Self { sending, receiving })
    }

    pub fn sending_sizes(&self) -> &[usize] {
        &self.sending
    }

    pub fn receiving_sizes(&self) -> &[usize] {
        &self.receiving
    }

    /// Number of sending components `S`.
    pub fn num_sending(&self) -> usize {
        self.sending.len()
    }

    /// Number of receiving components `R`.
    pub fn num_receiving(&self) -> usize {
        self.receiving.len()
    }

    /// `|S|`, the number of sending agents.
    pub fn sending_agents(&self) -> usize {
        self.sending.iter().sum()
    }

    /// `|R|`, the number of receiving agents.
    pub fn receiving_agents(&self) -> usize {
        self.receiving.iter().sum()
    }

    pub fn total_agents(&self) -> usize {
        self.sending_agents() + self.receiving_agents()
    }

    /// Global agent range of sending component `s`.
    pub fn sending_range(&self, s: usize) -> Range<usize> {
        let start: usize = self.sending[..s].iter().sum();
        start..start + self.sending[s]
    }

    /// Global agent range of receiving component `r`.
    pub fn receiving_range(&self, r: usize) -> Range<usize> {
        let start = self.sending_agents() + self.receiving[..r].iter().sum::<usize>();
        start..start + self.receiving[r]
    }

    pub fn receiving_agent_range(&self) -> Range<usize> {
        self.sending_agents()..self.total_agents()
    }

    pub fn component_of(&self, agent: usize) -> Option<Component> {
        (0..self.num_sending())
            .find(|&s| self.sending_range(s).contains(&agent))
            .map(Component::Sending)
            .or_else(|| {
                (0..self.num_receiving())
                    .find(|&r| self.receiving_range(r).contains(&agent))
                    .map(Component::Receiving)
            })
    }

    pub fn is_receiving(&self, agent: usize) -> bool {
        self.receiving_agent_range().contains(&agent)
    }

    pub fn describe(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("sending={} receiving={}", join(&self.sending), join(&self.receiving))
    }
}

/// A validated left-stochastic matrix with the weak block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    matrix: DMatrix<f64>,
    partition: NetworkPartition,
}

impl CombinationMatrix {
    /// Validates every structural invariant of a weak graph.
    pub fn new(matrix: DMatrix<f64>, partition: NetworkPartition) -> Result<Self> {
        let n = partition.total_agents();
        if matrix.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "combination matrix is {:?}, partition has {n} agents",
                matrix.shape()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSpec(
                "combination weights must be finite and nonnegative".into(),
            ));
        }
        for k in 0..n {
            let sum = matrix.column(k).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidSpec(format!(
                    "column {k} sums to {sum}, expected 1"
                )));
            }
        }
        let graph = Self { matrix, partition };
        graph.check_structure()?;
        Ok(graph)
    }

    fn check_structure(&self) -> Result<()> {
        let p = &self.partition;
        let ns = p.sending_agents();
        let n = p.total_agents();
        let a = &self.matrix;

        for l in ns..n {
            for k in 0..ns {
                if a[(l, k)] != 0.0 {
                    return Err(Error::StructureViolation(format!(
                        "receiving agent {l} feeds sending agent {k} (weight {:e})",
                        a[(l, k)]
                    )));
                }
            }
        }
        for s in 0..p.num_sending() {
            let range = p.sending_range(s);
            for l in 0..ns {
                if range.contains(&l) {
                    continue;
                }
                for k in range.clone() {
                    if a[(l, k)] != 0.0 {
                        return Err(Error::StructureViolation(format!(
                            "sending agent {l} feeds agent {k} of another sending component"
                        )));
                    }
                }
            }
            let block = a.view((range.start, range.start), (range.len(), range.len()));
            if !is_strongly_connected(&block.into_owned()) {
                return Err(Error::StructureViolation(format!(
                    "sending component {s} is not strongly connected"
                )));
            }
            if !range.clone().any(|k| a[(k, k)] > 0.0) {
                return Err(Error::StructureViolation(format!(
                    "sending component {s} has no self-loop"
                )));
            }
        }
        for r in 0..p.num_receiving() {
            let recv = p.receiving_range(r);
            for s in 0..p.num_sending() {
                let fed = p
                    .sending_range(s)
                    .any(|l| recv.clone().any(|k| a[(l, k)] > 0.0));
                if !fed {
                    return Err(Error::StructureViolation(format!(
                        "receiving component {r} has no edge from sending component {s}"
                    )));
                }
            }
        }
        // Every receiving agent must be reached by every sending component, so each
        // aggregate weight is strictly positive.
        for s in 0..p.num_sending() {
            let reached = reachable_from(a, p.sending_range(s));
            if let Some(k) = p.receiving_agent_range().find(|&k| !reached[k]) {
                return Err(Error::StructureViolation(format!(
                    "receiving agent {k} is unreachable from sending component {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn partition(&self) -> &NetworkPartition {
        &self.partition
    }

    pub fn num_agents(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.matrix[(from, to)]
    }

    /// `(l, a_lk)` pairs with positive weight feeding agent `k`.
    pub fn in_neighbors(&self, k: usize) -> Vec<(usize, f64)> {
        self.matrix
            .column(k)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(l, &w)| (l, w))
            .collect()
    }
}

fn is_strongly_connected(block: &DMatrix<f64>) -> bool {
    let n = block.nrows();
    if n == 0 {
        return false;
    }
    let forward = reachable_from(block, 0..1);
    let backward = reachable_from(&block.transpose(), 0..1);
    forward.iter().all(|&f| f) && backward.iter().all(|&b| b)
}

/// Agents reachable along positive entries (`l -> k` when `a[(l, k)] > 0`).
fn reachable_from(a: &DMatrix<f64>, sources: Range<usize>) -> Vec<bool> {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = sources.collect();
    for &s in &queue {
        seen[s] = true;
    }
    while let Some(l) = queue.pop_front() {
        for k in 0..n {
            if !seen[k] && a[(l, k)] > 0.0 {
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    seen
}

/// The three nonzero blocks of a weak combination matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub sending: DMatrix<f64>,
    pub sending_to_receiving: DMatrix<f64>,
    pub receiving: DMatrix<f64>,
}

impl Blocks {
    pub fn assemble(&self) -> DMatrix<f64> {
        let ns = self.sending.nrows();
        let nr = self.receiving.nrows();
        let mut a = DMatrix::zeros(ns + nr, ns + nr);
        a.view_mut((0, 0), (ns, ns)).copy_from(&self.sending);
        a.view_mut((0, ns), (ns, nr)).copy_from(&self.sending_to_receiving);
        a.view_mut((ns, ns), (nr, nr)).copy_from(&self.receiving);
        a
    }
}

pub fn block_decompose(graph: &CombinationMatrix) -> Result<Blocks> {
    split_blocks(graph.matrix(), graph.partition())
}

/// Splits any square matrix along the partition, rejecting receiving-to-sending weights.
pub fn split_blocks(a: &DMatrix<f64>, partition: &NetworkPartition) -> Result<Blocks> {
    let ns = partition.sending_agents();
    let nr = partition.receiving_agents();
    if a.shape() != (ns + nr, ns + nr) {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {:?}, partition has {} agents",
            a.shape(),
            ns + nr
        )));
    }
    let lower = a.view((ns, 0), (nr, ns));
    if let Some((idx, v)) = lower.iter().enumerate().find(|(_, v)| **v != 0.0) {
        let (row, col) = (idx % nr, idx / nr);
        return Err(Error::StructureViolation(format!(
            "receiving agent {} feeds sending agent {col} (weight {v:e})",
            ns + row
        )));
    }
    Ok(Blocks {
        sending: a.view((0, 0), (ns, ns)).into_owned(),
        sending_to_receiving: a.view((0, ns), (ns, nr)).into_owned(),
        receiving: a.view((ns, ns), (nr, nr)).into_owned(),
    })
}

/// Perron vector of a primitive left-stochastic block: `A p = p`, `sum(p) = 1`.
pub fn perron_eigenvector(block: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    let n = block.nrows();
    if n == 0 || block.ncols() != n {
        return Err(Error::DimensionMismatch("Perron block must be square and nonempty".into()));
    }
    let mut p = DVector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = block * &p;
        let sum = next.sum();
        if !(sum > 0.0) {
            return Err(Error::Numerical("power iteration collapsed to zero".into()));
        }
        next /= sum;
        residual = (&next - &p).amax();
        p = next;
        if residual <= tol {
            let check = (block * &p - &p).amax();
            if check <= tol && p.iter().all(|&v| v > 0.0) {
                return Ok(p);
            }
        }
    }
    Err(Error::NoConvergence { max_iter, residual })
}

pub const PERRON_TOL: f64 = 1e-14;
pub const PERRON_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LimitingMatrices {
    /// `|S| x |S|` block diagonal of `p^(s) 1^T` blocks.
    pub e: DMatrix<f64>,
    /// `A_SR (I - A_R)^{-1}`.
    pub w: DMatrix<f64>,
    /// `E W`, the upper-right block of `A^inf`.
    pub omega: DMatrix<f64>,
    pub perron: Vec<DVector<f64>>,
}

impl LimitingMatrices {
    /// Full `N x N` limit of `A^i`.
    pub fn limit_power(&self) -> DMatrix<f64> {
        let ns = self.e.nrows();
        let nr = self.omega.ncols();
        let mut a = DMatrix::zeros(ns + nr, ns + nr);
        a.view_mut((0, 0), (ns, ns)).copy_from(&self.e);
        a.view_mut((0, ns), (ns, nr)).copy_from(&self.omega);
        a
    }
}

pub fn limiting_matrices(graph: &CombinationMatrix) -> Result<LimitingMatrices> {
    let p = graph.partition();
    let blocks = block_decompose(graph)?;
    let ns = p.sending_agents();
    let nr = p.receiving_agents();

    let mut perron = Vec::with_capacity(p.num_sending());
    let mut e = DMatrix::zeros(ns, ns);
    for s in 0..p.num_sending() {
        let range = p.sending_range(s);
        let block = blocks
            .sending
            .view((range.start, range.start), (range.len(), range.len()))
            .into_owned();
        let pv = perron_eigenvector(&block, PERRON_TOL, PERRON_MAX_ITER)?;
        for col in range.clone() {
            e.view_mut((range.start, col), (range.len(), 1)).copy_from(&pv);
        }
        perron.push(pv);
    }

    let system = DMatrix::<f64>::identity(nr, nr) - &blocks.receiving;
    let cond = linalg::condition_number(&system);
    if !(cond < SINGULAR_CONDITION) {
        return Err(Error::SingularSystem(format!(
            "I - A_R has condition number {cond:e}; some receiving agent is not fed by the senders"
        )));
    }
    // (I - A_R)^T W^T = A_SR^T
    let lu = system.transpose().lu();
    let w_t = lu
        .solve(&blocks.sending_to_receiving.transpose())
        .ok_or_else(|| Error::SingularSystem("LU solve of I - A_R failed".into()))?;
    let w = w_t.transpose();
    let omega = &e * &w;
    for k in 0..nr {
        let sum = omega.column(k).sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Numerical(format!(
                "column {k} of Omega sums to {sum}"
            )));
        }
    }
    Ok(LimitingMatrices { e, w, omega, perron })
}

/// Macroscopic weights `x_{sk}`: total limiting influence of sending component `s`
/// on receiving agent `k`. Column `k` is indexed by receiving position (`k - |S|`).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateWeights {
    pub x: DMatrix<f64>,
}

impl AggregateWeights {
    /// Weight vector of the receiving agent at local position `k`.
    pub fn column(&self, k: usize) -> DVector<f64> {
        self.x.column(k).into_owned()
    }

    pub fn num_components(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_receiving(&self) -> usize {
        self.x.ncols()
    }
}

fn sum_over_components(m: &DMatrix<f64>, partition: &NetworkPartition) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(partition.num_sending(), m.ncols());
    for s in 0..partition.num_sending() {
        let range = partition.sending_range(s);
        for k in 0..m.ncols() {
            x[(s, k)] = range.clone().map(|l| m[(l, k)]).sum();
        }
    }
    x
}

pub fn aggregate_weights(lim: &LimitingMatrices, partition: &NetworkPartition) -> Result<AggregateWeights> {
    if lim.omega.nrows() != partition.sending_agents() {
        return Err(Error::DimensionMismatch(
            "limiting matrices do not match the partition".into(),
        ));
    }
    let from_omega = sum_over_components(&lim.omega, partition);
    let from_w = sum_over_components(&lim.w, partition);
    let gap = linalg::max_abs(&(&from_omega - &from_w));
    if gap > 1e-10 {
        return Err(Error::Numerical(format!(
            "aggregate weights from Omega and W differ by {gap:e}"
        )));
    }
    Ok(AggregateWeights { x: from_omega })
}

/// How receiving agents are wired among themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReceivingTopology {
    /// Undirected Erdős–Rényi graph inside each receiving component; `q` defaults
    /// to the sending connection probability.
    #[default]
    ErdosRenyi,
    ErdosRenyiWith { q: f64 },
    /// Directed edges `[from, to]` between receiving agents, indexed from zero
    /// within the receiving part. Self-loops are always added.
    Explicit { edges: Vec<[usize; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGraphSpec {
    pub partition: NetworkPartition,
    /// Erdős–Rényi connection probability inside sending components.
    pub q: f64,
    /// Per-sending-component probability that a receiving agent listens to a given sender.
    pub pi: Vec<f64>,
    #[serde(default)]
    pub receiving_topology: ReceivingTopology,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_retries() -> usize {
    DEFAULT_MAX_RETRIES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    Random(RandomGraphSpec),
    /// A fully specified matrix, rows are senders `l`, columns receivers `k`.
    Explicit {
        partition: NetworkPartition,
        matrix: Vec<Vec<f64>>,
    },
}

impl GraphSpec {
    pub fn partition(&self) -> &NetworkPartition {
        match self {
            GraphSpec::Random(r) => &r.partition,
            GraphSpec::Explicit { partition, .. } => partition,
        }
    }
}

impl RandomGraphSpec {
    fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidSpec(format!("q = {} must lie in (0, 1]", self.q)));
        }
        if self.pi.len() != self.partition.num_sending() {
            return Err(Error::InvalidSpec(format!(
                "{} send-receive probabilities for {} sending components",
                self.pi.len(),
                self.partition.num_sending()
            )));
        }
        if let Some(p) = self.pi.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidSpec(format!("pi = {p} must lie in (0, 1]")));
        }
        match &self.receiving_topology {
            ReceivingTopology::ErdosRenyiWith { q } if !(*q >= 0.0 && *q <= 1.0) => {
                return Err(Error::InvalidSpec(format!("receiving q = {q} must lie in [0, 1]")));
            }
            ReceivingTopology::Explicit { edges } => {
                let nr = self.partition.receiving_agents();
                if edges.iter().any(|e| e[0] >= nr || e[1] >= nr) {
                    return Err(Error::InvalidSpec("receiving edge index out of range".into()));
                }
            }
            _ => {}
        }
        if self.max_retries == 0 {
            return Err(Error::InvalidSpec("max_retries must be positive".into()));
        }
        Ok(())
    }
}

/// Builds a weak graph; random specs are resampled until every structural
/// invariant holds or the retry budget is exhausted.
pub fn build_weak_graph(spec: &GraphSpec, seed: u64) -> Result<CombinationMatrix> {
    match spec {
        GraphSpec::Explicit { partition, matrix } => {
            let n = partition.total_agents();
            if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
                return Err(Error::DimensionMismatch(format!(
                    "explicit matrix must be {n} x {n}"
                )));
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            CombinationMatrix::new(DMatrix::from_row_slice(n, n, &flat), partition.clone())
        }
        GraphSpec::Random(spec) => {
            spec.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut last = String::new();
            for _ in 0..spec.max_retries {
                match draw_graph(spec, &mut rng) {
                    Ok(graph) => return Ok(graph),
                    Err(Error::StructureViolation(msg)) | Err(Error::InvalidSpec(msg)) => last = msg,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::RetryExhausted {
                attempts: spec.max_retries,
                last,
            })
        }
    }
}

/// Undirected Erdős–Rényi adjacency with self-loops on the diagonal.
fn undirected_er<R: Rng>(n: usize, q: f64, rng: &mut R) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        adj[i][i] = true;
        for j in i + 1..n {
            if rng.random_bool(q) {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    adj
}

fn draw_graph<R: Rng>(spec: &RandomGraphSpec, rng: &mut R) -> Result<CombinationMatrix> {
    let p = &spec.partition;
    let n = p.total_agents();
    let ns = p.sending_agents();
    let nr = p.receiving_agents();
    let mut a = DMatrix::zeros(n, n);

    // Sending components: averaging rule, the neighbourhood counts the node itself.
    for s in 0..p.num_sending() {
        let range = p.sending_range(s);
        let adj = undirected_er(range.len(), spec.q, rng);
        for (k, row) in adj.iter().enumerate() {
            let nk = row.iter().filter(|&&e| e).count() as f64;
            for (l, &edge) in row.iter().enumerate() {
                if edge {
                    a[(range.start + l, range.start + k)] = 1.0 / nk;
                }
            }
        }
    }

    // Receiving part: in-neighbourhoods (local indices), self included.
    let mut recv_in: Vec<Vec<usize>> = (0..nr).map(|k| vec![k]).collect();
    match &spec.receiving_topology {
        ReceivingTopology::Explicit { edges } => {
            for &[from, to] in edges {
                if from != to && !recv_in[to].contains(&from) {
                    recv_in[to].push(from);
                }
            }
        }
        topo => {
            let q = match topo {
                ReceivingTopology::ErdosRenyiWith { q } => *q,
                _ => spec.q,
            };
            for r in 0..p.num_receiving() {
                let range = p.receiving_range(r);
                let offset = range.start - ns;
                let adj = undirected_er(range.len(), q, rng);
                for (k, row) in adj.iter().enumerate() {
                    for (l, &edge) in row.iter().enumerate() {
                        if edge && l != k {
                            recv_in[offset + k].push(offset + l);
                        }
                    }
                }
            }
        }
    }
    for r in 0..p.num_receiving() {
        let range = p.receiving_range(r);
        if !undirected_connected(&recv_in, range.start - ns..range.end - ns) {
            return Err(Error::StructureViolation(format!(
                "receiving component {r} is not connected"
            )));
        }
    }

    // Provisional weights, then column renormalisation.
    for k in 0..nr {
        let col = ns + k;
        let mut senders = Vec::new();
        for s in 0..p.num_sending() {
            for l in p.sending_range(s) {
                if rng.random_bool(spec.pi[s]) {
                    senders.push(l);
                }
            }
        }
        let dk = senders.len() as f64;
        for l in senders {
            a[(l, col)] = 1.0 / dk;
        }
        let nk = recv_in[k].len() as f64;
        for &l in &recv_in[k] {
            a[(ns + l, col)] = 1.0 / nk;
        }
    }
    for k in 0..n {
        let sum = a.column(k).sum();
        a.column_mut(k).scale_mut(1.0 / sum);
    }
    CombinationMatrix::new(a, p.clone())
}

/// Weak connectivity of the receiving sub-graph restricted to `range`.
fn undirected_connected(recv_in: &[Vec<usize>], range: Range<usize>) -> bool {
    let len = range.len();
    let mut seen = vec![false; len];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        let node = range.start + i;
        for j in 0..len {
            let other = range.start + j;
            if !seen[j] && (recv_in[node].contains(&other) || recv_in[other].contains(&node)) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agent() -> CombinationMatrix {
        let p = NetworkPartition::new(vec![1], vec![1]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.4]);
        CombinationMatrix::new(a, p).unwrap()
    }

    fn three_agent() -> CombinationMatrix {
        let p = NetworkPartition::new(vec![1, 1], vec![1]).unwrap();
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.3, 0.0, 1.0, 0.3, 0.0, 0.0, 0.4]);
        CombinationMatrix::new(a, p).unwrap()
    }

    fn setup1_spec() -> GraphSpec {
        GraphSpec::Random(RandomGraphSpec {
            partition: NetworkPartition::new(vec![9, 3], vec![4]).unwrap(),
            q: 0.7,
            pi: vec![0.5, 0.5],
            receiving_topology: ReceivingTopology::ErdosRenyi,
            max_retries: DEFAULT_MAX_RETRIES,
        })
    }

    #[test]
    fn partition_rejects_empty_parts() {
        assert!(NetworkPartition::new(vec![], vec![1]).is_err());
        assert!(NetworkPartition::new(vec![1], vec![]).is_err());
        assert!(NetworkPartition::new(vec![1, 0], vec![1]).is_err());
        let p = NetworkPartition::new(vec![9, 3], vec![4]).unwrap();
        assert_eq!(p.sending_range(1), 9..12);
        assert_eq!(p.receiving_range(0), 12..16);
        assert_eq!(p.component_of(10), Some(Component::Sending(1)));
        assert_eq!(p.component_of(12), Some(Component::Receiving(0)));
        assert_eq!(p.component_of(16), None);
    }

    #[test]
    fn smallest_weak_graph_blocks() {
        let g = two_agent();
        let b = block_decompose(&g).unwrap();
        assert_eq!(b.sending, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(b.sending_to_receiving, DMatrix::from_element(1, 1, 0.6));
        assert_eq!(b.receiving, DMatrix::from_element(1, 1, 0.4));
        assert_eq!(b.assemble(), *g.matrix());
    }

    #[test]
    fn forbidden_block_is_rejected() {
        let p = NetworkPartition::new(vec![1], vec![1]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0 - 1e-9, 0.6, 1e-9, 0.4]);
        assert!(matches!(split_blocks(&a, &p), Err(Error::StructureViolation(_))));
        assert!(matches!(CombinationMatrix::new(a, p), Err(Error::StructureViolation(_))));
    }

    #[test]
    fn non_stochastic_column_is_rejected() {
        let p = NetworkPartition::new(vec![1], vec![1]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.5]);
        assert!(matches!(CombinationMatrix::new(a, p), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn unreachable_receiver_is_rejected() {
        let p = NetworkPartition::new(vec![1, 1], vec![2]).unwrap();
        // agent 3 only listens to agent 2, which hears only sender 0
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.5, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.5, 0.5, //
                0.0, 0.0, 0.0, 0.5,
            ],
        );
        assert!(matches!(CombinationMatrix::new(a, p), Err(Error::StructureViolation(_))));
    }

    #[test]
    fn perron_small_cases() {
        let p = perron_eigenvector(&DMatrix::from_element(1, 1, 1.0), 1e-14, 100).unwrap();
        assert_eq!(p[0], 1.0);
        let p = perron_eigenvector(&DMatrix::from_element(2, 2, 0.5), 1e-14, 100).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn periodic_block_does_not_converge() {
        // bipartite, period two: the iterates alternate forever
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert!(matches!(
            perron_eigenvector(&a, 1e-12, 1000),
            Err(Error::NoConvergence { max_iter: 1000, .. })
        ));
    }

    #[test]
    fn two_agent_limits() {
        let g = two_agent();
        let lim = limiting_matrices(&g).unwrap();
        assert!((lim.w[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((lim.omega[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn three_agent_limits() {
        let g = three_agent();
        let lim = limiting_matrices(&g).unwrap();
        assert!((lim.w[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((lim.w[(1, 0)] - 0.5).abs() < 1e-14);
        let x = aggregate_weights(&lim, g.partition()).unwrap();
        assert!((x.x[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((x.x[(1, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn single_sender_gives_unit_weights() {
        let spec = GraphSpec::Random(RandomGraphSpec {
            partition: NetworkPartition::new(vec![5], vec![3, 2]).unwrap(),
            q: 0.6,
            pi: vec![0.4],
            receiving_topology: ReceivingTopology::ErdosRenyi,
            max_retries: DEFAULT_MAX_RETRIES,
        });
        let g = build_weak_graph(&spec, 3).unwrap();
        let lim = limiting_matrices(&g).unwrap();
        let x = aggregate_weights(&lim, g.partition()).unwrap();
        for k in 0..5 {
            assert!((x.x[(0, k)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn setup1_graph_is_valid_and_deterministic() {
        let spec = setup1_spec();
        let g1 = build_weak_graph(&spec, 7).unwrap();
        let g2 = build_weak_graph(&spec, 7).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.num_agents(), 16);
        for k in 0..16 {
            assert!((g1.matrix().column(k).sum() - 1.0).abs() < 1e-12);
        }
        let b = block_decompose(&g1).unwrap();
        // block diagonal sending part: the 9x3 cross blocks vanish
        assert!(b.sending.view((0, 9), (9, 3)).iter().all(|&v| v == 0.0));
        assert!(b.sending.view((9, 0), (3, 9)).iter().all(|&v| v == 0.0));
        let g3 = build_weak_graph(&spec, 8).unwrap();
        assert_ne!(g1, g3);
    }

    #[test]
    fn impossible_spec_exhausts_retries() {
        let spec = GraphSpec::Random(RandomGraphSpec {
            partition: NetworkPartition::new(vec![1, 1], vec![8]).unwrap(),
            q: 0.05,
            pi: vec![1e-6, 1e-6],
            receiving_topology: ReceivingTopology::ErdosRenyi,
            max_retries: 20,
        });
        assert!(matches!(
            build_weak_graph(&spec, 1),
            Err(Error::RetryExhausted { attempts: 20, .. })
        ));
    }

    #[test]
    fn out_of_range_parameters_are_invalid() {
        let mut spec = match setup1_spec() {
            GraphSpec::Random(r) => r,
            _ => unreachable!(),
        };
        spec.q = 0.0;
        assert!(matches!(
            build_weak_graph(&GraphSpec::Random(spec.clone()), 1),
            Err(Error::InvalidSpec(_))
        ));
        spec.q = 0.7;
        spec.pi = vec![0.5, 1.5];
        assert!(matches!(
            build_weak_graph(&GraphSpec::Random(spec), 1),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn explicit_spec_round_trips_through_json() {
        let spec = GraphSpec::Explicit {
            partition: NetworkPartition::new(vec![1], vec![1]).unwrap(),
            matrix: vec![vec![1.0, 0.6], vec![0.0, 0.4]],
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: GraphSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        assert_eq!(build_weak_graph(&back, 0).unwrap(), two_agent());
    }
}
