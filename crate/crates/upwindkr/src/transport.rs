//! Exact discrete optimal transport between atomic measures, with the
//! logarithmic cost log(|x - y|/r + 1) and the linear cost |x - y|.
//!
//! The solver is a transportation network simplex on the complete bipartite
//! graph: spanning-tree basis, block entering search with lowest-index tie
//! breaking, Bland's rule as an anti-cycling fallback. Dual potentials come
//! from the optimal basis and every result is verified against marginal,
//! feasibility and strong-duality checks before it is returned.
//!
//! The logarithmic cost is concave in distance, so one-dimensional monotone
//! matching shortcuts would be wrong; the general solver runs in every
//! dimension.

use crate::fields::CellField;
use crate::geometry::{dist, Point};
use std::collections::BTreeMap;
use thiserror::Error;

/// Cost-matrix entry cap for a single solve.
pub const DEFAULT_COST_CAP: usize = 4_000_000;
/// Smallest admissible cost radius; the cost blows up as r drops to zero.
pub const MIN_RADIUS: f64 = 1e-12;
/// Relative total-mass mismatch accepted by the balance checks.
pub const BALANCE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("marginal totals {plus} and {minus} differ beyond tolerance")]
    Unbalanced { plus: f64, minus: f64 },
    #[error("cost radius {0} below the minimum {MIN_RADIUS}")]
    RadiusTooSmall(f64),
    #[error("cost matrix would need {entries} entries, cap is {cap}; coarsen the measures first")]
    TooLarge { entries: usize, cap: usize },
    #[error("atom has non-finite location or mass")]
    NonFinite,
    #[error("atom mass {0} is negative")]
    NegativeMass(f64),
    #[error("simplex exceeded {0} pivots without reaching optimality")]
    PivotCap(usize),
    #[error("optimality verification failed: {0}")]
    Verification(String),
}

/// Atomic nonnegative measure. Construction merges atoms at identical
/// locations and keeps insertion order otherwise.
#[derive(Debug, Clone, Default)]
pub struct DiscreteMeasure {
    atoms: Vec<(Point, f64)>,
    total: f64,
}

fn location_key(p: Point) -> (u64, u64) {
    // normalize negative zero so merged keys are unambiguous
    let fix = |v: f64| if v == 0.0 { 0.0_f64 } else { v };
    (fix(p[0]).to_bits(), fix(p[1]).to_bits())
}

impl DiscreteMeasure {
    pub fn empty() -> Self {
        DiscreteMeasure::default()
    }

    /// Builds a measure from raw atoms, merging coincident locations.
    pub fn from_atoms(raw: impl IntoIterator<Item = (Point, f64)>) -> Result<Self, TransportError> {
        let mut order: Vec<(Point, f64)> = Vec::new();
        let mut index: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        for (p, m) in raw {
            if !p[0].is_finite() || !p[1].is_finite() || !m.is_finite() {
                return Err(TransportError::NonFinite);
            }
            if m < 0.0 {
                return Err(TransportError::NegativeMass(m));
            }
            if m == 0.0 {
                continue;
            }
            match index.entry(location_key(p)) {
                std::collections::btree_map::Entry::Occupied(e) => order[*e.get()].1 += m,
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(order.len());
                    order.push((p, m));
                }
            }
        }
        let total = order.iter().map(|(_, m)| m).sum();
        Ok(DiscreteMeasure { atoms: order, total })
    }

    pub fn atoms(&self) -> &[(Point, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    fn rescaled(&self, factor: f64) -> Self {
        let atoms: Vec<(Point, f64)> = self.atoms.iter().map(|&(p, m)| (p, m * factor)).collect();
        let total = atoms.iter().map(|(_, m)| m).sum();
        DiscreteMeasure { atoms, total }
    }
}

/// Represents a cell field as signed atoms at cell centroids with masses
/// rho_K |K| and splits the result into nonnegative parts. Atoms below
/// 1e-15 of the absolute total are dropped.
pub fn measure_from_field(field: &CellField) -> (DiscreteMeasure, DiscreteMeasure) {
    let mesh = &field.mesh;
    let total_abs: f64 = field
        .values
        .iter()
        .zip(&mesh.cells)
        .map(|(v, c)| (v * c.volume).abs())
        .sum();
    let floor = 1e-15 * total_abs;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (v, c) in field.values.iter().zip(&mesh.cells) {
        let m = v * c.volume;
        if m == 0.0 || m.abs() < floor {
            continue;
        }
        if m > 0.0 {
            plus.push((c.centroid, m));
        } else {
            minus.push((c.centroid, -m));
        }
    }
    (
        DiscreteMeasure::from_atoms(plus).expect("nonnegative by construction"),
        DiscreteMeasure::from_atoms(minus).expect("nonnegative by construction"),
    )
}

/// The positive and negative parts of the difference of two cell fields,
/// atomized at cell centroids. Atoms at coinciding centroids cancel.
#[derive(Debug, Clone)]
pub struct SignedDifference {
    pub plus: DiscreteMeasure,
    pub minus: DiscreteMeasure,
    /// Relative imbalance removed by rescaling the lighter side.
    pub imbalance_removed: f64,
}

/// Forms (field1 - field2)^+- as atomic measures. The total masses of the
/// two fields must agree to `balance_tol` relative (an imbalance above that
/// signals a conservation bug upstream); a residual below it is removed by
/// uniform rescaling of the lighter side and reported.
pub fn signed_difference(
    field1: &CellField,
    field2: &CellField,
    balance_tol: f64,
) -> Result<SignedDifference, TransportError> {
    let t1 = field1.mass();
    let t2 = field2.mass();
    let field_abs = |f: &CellField| -> f64 {
        f.values
            .iter()
            .zip(&f.mesh.cells)
            .map(|(v, c)| (v * c.volume).abs())
            .sum()
    };
    let scale = (field_abs(field1) + field_abs(field2)).max(1e-300);
    if (t1 - t2).abs() > balance_tol * scale {
        return Err(TransportError::Unbalanced { plus: t1, minus: t2 });
    }

    let mut merged: BTreeMap<(u64, u64), (Point, f64)> = BTreeMap::new();
    let mut add = |field: &CellField, sign: f64| {
        for (v, c) in field.values.iter().zip(&field.mesh.cells) {
            let m = sign * v * c.volume;
            if m == 0.0 {
                continue;
            }
            merged
                .entry(location_key(c.centroid))
                .and_modify(|e| e.1 += m)
                .or_insert((c.centroid, m));
        }
    };
    add(field1, 1.0);
    add(field2, -1.0);

    let floor = 1e-15 * scale;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (_, (p, m)) in merged {
        if m.abs() < floor {
            continue;
        }
        if m > 0.0 {
            plus.push((p, m));
        } else {
            minus.push((p, -m));
        }
    }
    let mut plus = DiscreteMeasure::from_atoms(plus)?;
    let mut minus = DiscreteMeasure::from_atoms(minus)?;
    let imbalance = (plus.total() - minus.total()).abs() / scale;
    if plus.total() > 0.0 && minus.total() > 0.0 {
        if plus.total() < minus.total() {
            plus = plus.rescaled(minus.total() / plus.total());
        } else {
            minus = minus.rescaled(plus.total() / minus.total());
        }
    } else if plus.total() == 0.0 {
        minus = DiscreteMeasure::empty();
    } else {
        plus = DiscreteMeasure::empty();
    }
    Ok(SignedDifference { plus, minus, imbalance_removed: imbalance })
}

/// One arc of an optimal plan: source atom index, sink atom index, mass.
#[derive(Debug, Clone, Copy)]
pub struct PlanArc {
    pub src: usize,
    pub dst: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveStats {
    pub pivots: usize,
    pub degenerate_pivots: usize,
    pub bland_pivots: usize,
}

/// Outcome of an exact transport solve: optimal value, plan, dual
/// potentials on both atom sets, and the primal-dual gap.
#[derive(Debug, Clone)]
pub struct KrResult {
    pub value: f64,
    /// Cost radius; absent for the linear-cost solve.
    pub r: Option<f64>,
    pub plan: Vec<PlanArc>,
    pub potential_plus: Vec<f64>,
    pub potential_minus: Vec<f64>,
    pub gap: f64,
    pub stats: SolveStats,
}

impl KrResult {
    fn zero(r: Option<f64>) -> Self {
        KrResult {
            value: 0.0,
            r,
            plan: Vec::new(),
            potential_plus: Vec::new(),
            potential_minus: Vec::new(),
            gap: 0.0,
            stats: SolveStats::default(),
        }
    }

    /// Plan export rows `src_x,src_y,dst_x,dst_y,mass,cost`.
    pub fn plan_csv(&self, plus: &DiscreteMeasure, minus: &DiscreteMeasure) -> String {
        let mut out = String::from("src_x,src_y,dst_x,dst_y,mass,cost\n");
        for arc in &self.plan {
            let (p, _) = plus.atoms()[arc.src];
            let (q, _) = minus.atoms()[arc.dst];
            let d = dist(p, q);
            let cost = match self.r {
                Some(r) => (d / r + 1.0).ln(),
                None => d,
            };
            out.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                p[0], p[1], q[0], q[1], arc.mass, cost
            ));
        }
        out
    }
}

/// Kantorovich-Rubinstein distance with cost log(|x - y|/r + 1) between two
/// balanced nonnegative measures, solved exactly.
pub fn kr_distance(
    plus: &DiscreteMeasure,
    minus: &DiscreteMeasure,
    r: f64,
) -> Result<KrResult, TransportError> {
    kr_distance_with_cap(plus, minus, r, DEFAULT_COST_CAP)
}

pub fn kr_distance_with_cap(
    plus: &DiscreteMeasure,
    minus: &DiscreteMeasure,
    r: f64,
    cap: usize,
) -> Result<KrResult, TransportError> {
    if r < MIN_RADIUS {
        return Err(TransportError::RadiusTooSmall(r));
    }
    let mut out = solve_pair(plus, minus, cap, |a, b| (dist(a, b) / r + 1.0).ln())?;
    out.r = Some(r);
    Ok(out)
}

/// 1-Wasserstein distance (linear cost), same solver and checks.
pub fn w1_distance(
    plus: &DiscreteMeasure,
    minus: &DiscreteMeasure,
) -> Result<KrResult, TransportError> {
    w1_distance_with_cap(plus, minus, DEFAULT_COST_CAP)
}

pub fn w1_distance_with_cap(
    plus: &DiscreteMeasure,
    minus: &DiscreteMeasure,
    cap: usize,
) -> Result<KrResult, TransportError> {
    solve_pair(plus, minus, cap, dist)
}

fn solve_pair(
    plus: &DiscreteMeasure,
    minus: &DiscreteMeasure,
    cap: usize,
    cost: impl Fn(Point, Point) -> f64,
) -> Result<KrResult, TransportError> {
    if plus.is_empty() && minus.is_empty() {
        return Ok(KrResult::zero(None));
    }
    let scale = plus.total().max(minus.total());
    if (plus.total() - minus.total()).abs() > 1e-10 * scale {
        return Err(TransportError::Unbalanced { plus: plus.total(), minus: minus.total() });
    }
    if plus.is_empty() || minus.is_empty() {
        return Ok(KrResult::zero(None));
    }
    let entries = plus.len() * minus.len();
    if entries > cap {
        return Err(TransportError::TooLarge { entries, cap });
    }
    NetworkSimplex::new(plus.atoms(), minus.atoms(), cost)?.solve()
}

/// Bins atoms to a lattice and replaces each bin by its mass-weighted
/// barycenter. Bins are sized so that no atom moves farther than
/// `cell_size`; the induced distance error is at most
/// log(cell_size / r + 1) times the total mass.
pub fn coarsen(measure: &DiscreteMeasure, cell_size: f64) -> DiscreteMeasure {
    assert!(cell_size > 0.0);
    let side = cell_size / 2f64.sqrt();
    let mut bins: BTreeMap<(i64, i64), (f64, f64, f64)> = BTreeMap::new();
    for &(p, m) in measure.atoms() {
        let key = ((p[0] / side).floor() as i64, (p[1] / side).floor() as i64);
        let e = bins.entry(key).or_insert((0.0, 0.0, 0.0));
        e.0 += m;
        e.1 += m * p[0];
        e.2 += m * p[1];
    }
    let atoms: Vec<(Point, f64)> = bins
        .into_values()
        .map(|(m, mx, my)| ([mx / m, my / m], m))
        .collect();
    DiscreteMeasure::from_atoms(atoms).expect("barycenters of finite atoms")
}

// ---------------------------------------------------------------------------
// transportation network simplex
// ---------------------------------------------------------------------------

const NO_NODE: usize = usize::MAX;

/// Spanning-tree simplex state. Nodes 0..m are sources, m..m+n are sinks,
/// node 0 is the root. The flow of a basic arc lives on its child node.
struct NetworkSimplex {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    supply: Vec<f64>,
    demand: Vec<f64>,
    parent: Vec<usize>,
    parent_arc: Vec<(usize, usize)>,
    parent_flow: Vec<f64>,
    children: Vec<Vec<usize>>,
    potential: Vec<f64>,
    depth: Vec<usize>,
    eps: f64,
    cursor: usize,
    bland: bool,
    stalled: usize,
    stats: SolveStats,
}

impl NetworkSimplex {
    fn new(
        sources: &[(Point, f64)],
        sinks: &[(Point, f64)],
        cost_fn: impl Fn(Point, Point) -> f64,
    ) -> Result<Self, TransportError> {
        let m = sources.len();
        let n = sinks.len();
        let mut cost = Vec::with_capacity(m * n);
        let mut max_cost: f64 = 0.0;
        for &(p, _) in sources {
            for &(q, _) in sinks {
                let c = cost_fn(p, q);
                if !c.is_finite() {
                    return Err(TransportError::NonFinite);
                }
                max_cost = max_cost.max(c.abs());
                cost.push(c);
            }
        }
        let supply: Vec<f64> = sources.iter().map(|&(_, w)| w).collect();
        // force exact balance: dump the rounding residual on the heaviest sink
        let ta: f64 = supply.iter().sum();
        let tb: f64 = sinks.iter().map(|&(_, w)| w).sum();
        let mut demand: Vec<f64> = sinks.iter().map(|&(_, w)| w * (ta / tb)).collect();
        let residual = ta - demand.iter().sum::<f64>();
        let heaviest = (0..n)
            .max_by(|&i, &j| demand[i].partial_cmp(&demand[j]).unwrap())
            .unwrap();
        demand[heaviest] += residual;

        let nodes = m + n;
        let mut s = NetworkSimplex {
            m,
            n,
            cost,
            supply,
            demand,
            parent: vec![NO_NODE; nodes],
            parent_arc: vec![(0, 0); nodes],
            parent_flow: vec![0.0; nodes],
            children: vec![Vec::new(); nodes],
            potential: vec![0.0; nodes],
            depth: vec![0; nodes],
            eps: 1e-13 * (1.0 + max_cost),
            cursor: 0,
            bland: false,
            stalled: 0,
            stats: SolveStats::default(),
        };
        s.northwest_init();
        s.refresh_potentials();
        Ok(s)
    }

    #[inline]
    fn c(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    #[inline]
    fn sink_node(&self, j: usize) -> usize {
        self.m + j
    }

    /// Initial spanning tree from the northwest-corner walk: exactly
    /// m + n - 1 arcs, degenerate zero-flow arcs where a supply and a demand
    /// run out together.
    fn northwest_init(&mut self) {
        let mut ra = self.supply.clone();
        let mut rb = self.demand.clone();
        let (mut i, mut j) = (0, 0);
        let mut arcs: Vec<(usize, usize, f64)> = Vec::with_capacity(self.m + self.n - 1);
        loop {
            let theta = ra[i].min(rb[j]);
            arcs.push((i, j, theta));
            ra[i] -= theta;
            rb[j] -= theta;
            if i + 1 == self.m && j + 1 == self.n {
                break;
            }
            if ra[i] == 0.0 && i + 1 < self.m {
                i += 1;
            } else {
                j += 1;
            }
        }
        let nodes = self.m + self.n;
        let mut adj: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); nodes];
        for &(i, j, f) in &arcs {
            adj[i].push((self.sink_node(j), i, j, f));
            adj[self.sink_node(j)].push((i, i, j, f));
        }
        let mut stack = vec![0usize];
        let mut seen = vec![false; nodes];
        seen[0] = true;
        self.parent[0] = NO_NODE;
        while let Some(u) = stack.pop() {
            for &(v, i, j, f) in &adj[u] {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                self.parent[v] = u;
                self.parent_arc[v] = (i, j);
                self.parent_flow[v] = f;
                self.children[u].push(v);
                stack.push(v);
            }
        }
        debug_assert!(seen.iter().all(|&x| x), "northwest tree must span all nodes");
    }

    /// Potentials and depths from the basis tree, root fixed at zero. On
    /// every basic arc (i, j): potential[i] - potential[sink j] = c(i, j).
    fn refresh_potentials(&mut self) {
        self.potential[0] = 0.0;
        self.depth[0] = 0;
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            // children is rebuilt by pivots; clone-free double borrow dance
            for idx in 0..self.children[u].len() {
                let v = self.children[u][idx];
                let (i, j) = self.parent_arc[v];
                self.depth[v] = self.depth[u] + 1;
                self.potential[v] = if v < self.m {
                    self.c(i, j) + self.potential[self.sink_node(j)]
                } else {
                    self.potential[i] - self.c(i, j)
                };
                stack.push(v);
            }
        }
    }

    #[inline]
    fn reduced(&self, i: usize, j: usize) -> f64 {
        self.c(i, j) - self.potential[i] + self.potential[self.sink_node(j)]
    }

    /// Block entering search from the last cursor position; best violating
    /// arc in the first block that has one, lowest index on ties.
    fn find_entering_block(&mut self) -> Option<(usize, usize)> {
        let total = self.m * self.n;
        let block = ((total as f64).sqrt() as usize).clamp(64, 16_384).min(total);
        let mut scanned = 0;
        while scanned < total {
            let mut best: Option<(f64, usize)> = None;
            let upto = block.min(total - scanned);
            for k in 0..upto {
                let arc = (self.cursor + k) % total;
                let (i, j) = (arc / self.n, arc % self.n);
                let rc = self.reduced(i, j);
                if rc < -self.eps {
                    let take = match best {
                        None => true,
                        Some((brc, barc)) => rc < brc || (rc == brc && arc < barc),
                    };
                    if take {
                        best = Some((rc, arc));
                    }
                }
            }
            self.cursor = (self.cursor + upto) % total;
            scanned += upto;
            if let Some((_, arc)) = best {
                return Some((arc / self.n, arc % self.n));
            }
        }
        None
    }

    /// Lowest-index violating arc; immune to degenerate cycling.
    fn find_entering_bland(&self) -> Option<(usize, usize)> {
        for i in 0..self.m {
            for j in 0..self.n {
                if self.reduced(i, j) < -self.eps {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// One pivot on the entering arc. The cycle runs
    /// source_i -> sink_j -> ... -> lca -> ... -> source_i through the tree.
    /// Walking UP from the sink endpoint an arc loses flow when its child
    /// node is a sink; walking up from the source endpoint it loses when the
    /// child is a source.
    fn pivot(&mut self, enter_i: usize, enter_j: usize) {
        let a = enter_i;
        let b = self.sink_node(enter_j);
        let (mut ua, mut ub) = (a, b);
        let mut path_a: Vec<usize> = Vec::new();
        let mut path_b: Vec<usize> = Vec::new();
        while self.depth[ua] > self.depth[ub] {
            path_a.push(ua);
            ua = self.parent[ua];
        }
        while self.depth[ub] > self.depth[ua] {
            path_b.push(ub);
            ub = self.parent[ub];
        }
        while ua != ub {
            path_a.push(ua);
            path_b.push(ub);
            ua = self.parent[ua];
            ub = self.parent[ub];
        }

        let arc_index = |node: usize, this: &Self| {
            let (i, j) = this.parent_arc[node];
            i * this.n + j
        };
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        for &v in path_a.iter().filter(|&&v| v < self.m).chain(path_b.iter().filter(|&&v| v >= self.m)) {
            let f = self.parent_flow[v];
            // strict improvement, or a tie broken towards the lowest arc
            let replace = match leave {
                None => true,
                Some(cur) => {
                    f < theta || (f == theta && arc_index(v, self) < arc_index(cur, self))
                }
            };
            if replace {
                theta = f;
                leave = Some(v);
            }
        }
        let leave_node = leave.expect("cycle always contains a losing arc");
        if theta == 0.0 {
            self.stalled += 1;
            self.stats.degenerate_pivots += 1;
        } else {
            self.stalled = 0;
        }

        for &v in &path_a {
            self.parent_flow[v] += if v < self.m { -theta } else { theta };
        }
        for &v in &path_b {
            self.parent_flow[v] += if v >= self.m { -theta } else { theta };
        }

        // re-root the detached subtree at the entering endpoint inside it
        let on_a_side = path_a.contains(&leave_node);
        let (sub_root, attach_to) = if on_a_side { (a, b) } else { (b, a) };
        let mut chain = Vec::new();
        let mut v = sub_root;
        loop {
            chain.push(v);
            if v == leave_node {
                break;
            }
            v = self.parent[v];
        }
        let old_parent = self.parent[leave_node];
        self.children[old_parent].retain(|&c| c != leave_node);
        let saved: Vec<((usize, usize), f64)> = chain
            .iter()
            .map(|&u| (self.parent_arc[u], self.parent_flow[u]))
            .collect();
        for t in 0..chain.len() - 1 {
            let upper = chain[t + 1];
            let lower = chain[t];
            // the arc that joined lower to upper now hangs upper below lower
            self.children[upper].retain(|&c| c != lower);
            self.parent[upper] = lower;
            self.parent_arc[upper] = saved[t].0;
            self.parent_flow[upper] = saved[t].1;
            self.children[lower].push(upper);
        }
        self.parent[sub_root] = attach_to;
        self.parent_arc[sub_root] = (enter_i, enter_j);
        self.parent_flow[sub_root] = theta;
        self.children[attach_to].push(sub_root);

        // potentials in the moved subtree shift by one constant (every kept
        // arc fixes a potential difference); depths need a fresh walk there
        let c_enter = self.c(enter_i, enter_j);
        let target = if sub_root < self.m {
            c_enter + self.potential[attach_to]
        } else {
            self.potential[attach_to] - c_enter
        };
        let shift = target - self.potential[sub_root];
        let mut stack = vec![sub_root];
        self.depth[sub_root] = self.depth[attach_to] + 1;
        while let Some(u) = stack.pop() {
            self.potential[u] += shift;
            for idx in 0..self.children[u].len() {
                let v = self.children[u][idx];
                self.depth[v] = self.depth[u] + 1;
                stack.push(v);
            }
        }
        self.stats.pivots += 1;
        if self.bland {
            self.stats.bland_pivots += 1;
        }
    }

    fn solve(mut self) -> Result<KrResult, TransportError> {
        let nodes = self.m + self.n;
        let stall_limit = 100 + 20 * nodes;
        let pivot_cap = 50_000 + 400 * nodes;
        loop {
            if !self.bland && self.stalled > stall_limit {
                self.bland = true;
            }
            let entering = if self.bland {
                self.find_entering_bland()
            } else {
                self.find_entering_block()
            };
            let Some((i, j)) = entering else { break };
            if self.stats.pivots >= pivot_cap {
                return Err(TransportError::PivotCap(pivot_cap));
            }
            self.pivot(i, j);
        }
        self.extract()
    }

    fn extract(&self) -> Result<KrResult, TransportError> {
        let nodes = self.m + self.n;
        // gather basic arcs sorted by arc index for a deterministic sum
        let mut basics: Vec<(usize, usize, f64)> = (1..nodes)
            .map(|v| {
                let (i, j) = self.parent_arc[v];
                (i, j, self.parent_flow[v])
            })
            .collect();
        basics.sort_by_key(|&(i, j, _)| i * self.n + j);

        let mut value = 0.0;
        let mut plan = Vec::new();
        let mut row_sums = vec![0.0; self.m];
        let mut col_sums = vec![0.0; self.n];
        for &(i, j, f) in &basics {
            value += f * self.c(i, j);
            row_sums[i] += f;
            col_sums[j] += f;
            if f > 0.0 {
                plan.push(PlanArc { src: i, dst: j, mass: f });
            }
        }

        let zeta: Vec<f64> = self.potential[..self.m].to_vec();
        let eta: Vec<f64> = self.potential[self.m..].to_vec();

        // verification: marginals, basic-arc slackness, dual feasibility,
        // strong duality
        let total: f64 = self.supply.iter().sum();
        let mtol = 1e-10 * total.max(1e-300);
        for i in 0..self.m {
            if (row_sums[i] - self.supply[i]).abs() > mtol {
                return Err(TransportError::Verification(format!(
                    "source {i} marginal {} vs {}",
                    row_sums[i], self.supply[i]
                )));
            }
        }
        for j in 0..self.n {
            if (col_sums[j] - self.demand[j]).abs() > mtol {
                return Err(TransportError::Verification(format!(
                    "sink {j} marginal {} vs {}",
                    col_sums[j], self.demand[j]
                )));
            }
        }
        let ctol = 1e-10 * (1.0 + self.cost.iter().fold(0.0_f64, |m, c| m.max(c.abs())));
        for &(i, j, _) in &basics {
            if (self.c(i, j) - (zeta[i] - eta[j])).abs() > ctol {
                return Err(TransportError::Verification(format!(
                    "basic arc ({i}, {j}) violates complementary slackness"
                )));
            }
        }
        for i in 0..self.m {
            for j in 0..self.n {
                if zeta[i] - eta[j] > self.c(i, j) + 100.0 * self.eps {
                    return Err(TransportError::Verification(format!(
                        "dual infeasible on arc ({i}, {j})"
                    )));
                }
            }
        }
        let dual: f64 = zeta
            .iter()
            .zip(&self.supply)
            .map(|(z, a)| z * a)
            .sum::<f64>()
            - eta.iter().zip(&self.demand).map(|(e, b)| e * b).sum::<f64>();
        let gap = (value - dual).abs();
        if gap > 1e-9 * (1.0 + value.abs()) {
            return Err(TransportError::Verification(format!(
                "duality gap {gap} for value {value}"
            )));
        }
        Ok(KrResult {
            value,
            r: None,
            plan,
            potential_plus: zeta,
            potential_minus: eta,
            gap,
            stats: self.stats,
        })
    }
}

/// Exhaustive reference solver for small instances. Enumerates every vertex
/// of the transportation polytope by leaf saturation with sound
/// branch-and-bound pruning; exact for a handful of atoms per side and
/// independent of the simplex path.
pub mod exhaustive {
    use super::Point;

    /// Exact minimal transport cost by exhaustive vertex enumeration.
    pub fn min_cost(
        sources: &[(Point, f64)],
        sinks: &[(Point, f64)],
        cost_fn: impl Fn(Point, Point) -> f64,
    ) -> f64 {
        let m = sources.len();
        let n = sinks.len();
        if m == 0 || n == 0 {
            return 0.0;
        }
        let mut cost = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                cost[i * n + j] = cost_fn(sources[i].0, sinks[j].0);
            }
        }
        let mut ra: Vec<f64> = sources.iter().map(|&(_, w)| w).collect();
        let ta: f64 = ra.iter().sum();
        let tb: f64 = sinks.iter().map(|&(_, w)| w).sum();
        let mut rb: Vec<f64> = sinks.iter().map(|&(_, w)| w * (ta / tb)).collect();
        // masses drift by an ulp per shipment along a path; residues below
        // this scale-relative floor are rounding debris, not cargo
        let tol = 1e-13 * ta.max(1e-300);
        // greedy warm start tightens the branch-and-bound from the first node
        let mut best = greedy_upper(&cost, n, &ra, &rb, tol);
        recurse(&cost, n, &mut ra, &mut rb, 0.0, &mut best, tol, usize::MAX);
        best
    }

    /// Pessimistic prune margin: never prune a branch whose bound ties the
    /// incumbent only at rounding level.
    const PRUNE_SLACK: f64 = 0.0;

    /// Feasible (generally suboptimal) cost: always ship on the cheapest
    /// live pair.
    fn greedy_upper(cost: &[f64], n: usize, ra: &[f64], rb: &[f64], tol: f64) -> f64 {
        let mut ra = ra.to_vec();
        let mut rb = rb.to_vec();
        let mut acc = 0.0;
        loop {
            let mut pick: Option<(usize, usize, f64)> = None;
            for (i, &a) in ra.iter().enumerate() {
                if a <= tol {
                    continue;
                }
                for (j, &b) in rb.iter().enumerate() {
                    if b <= tol {
                        continue;
                    }
                    let c = cost[i * n + j];
                    if pick.map_or(true, |(_, _, pc)| c < pc) {
                        pick = Some((i, j, c));
                    }
                }
            }
            let Some((i, j, c)) = pick else { return acc };
            let theta = ra[i].min(rb[j]);
            ra[i] -= theta;
            rb[j] -= theta;
            acc += theta * c;
        }
    }

    /// Dual-feasible lower bound: zeta_i = cheapest live column of row i,
    /// eta_j = the smallest value keeping zeta_i - eta_j <= c_ij. Weak
    /// duality makes zeta a - eta b a valid bound; the column-seeded mirror
    /// is taken as well.
    fn lower_bound(cost: &[f64], n: usize, ra: &[f64], rb: &[f64], tol: f64) -> f64 {
        let live_rows: Vec<usize> = (0..ra.len()).filter(|&i| ra[i] > tol).collect();
        let live_cols: Vec<usize> = (0..rb.len()).filter(|&j| rb[j] > tol).collect();
        if live_rows.is_empty() || live_cols.is_empty() {
            return 0.0;
        }
        // alternating dual ascent: each half-sweep keeps zeta_i - eta_j <=
        // c_ij, so every visited pair (zeta, eta) gives a valid bound
        let mut zeta: Vec<f64> = live_rows
            .iter()
            .map(|&i| live_cols.iter().map(|&j| cost[i * n + j]).fold(f64::INFINITY, f64::min))
            .collect();
        let mut eta: Vec<f64> = vec![0.0; live_cols.len()];
        let mut best = f64::NEG_INFINITY;
        for _ in 0..3 {
            for (jj, &j) in live_cols.iter().enumerate() {
                eta[jj] = live_rows
                    .iter()
                    .zip(&zeta)
                    .map(|(&i, &z)| z - cost[i * n + j])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            let mut obj = 0.0;
            for (&i, &z) in live_rows.iter().zip(&zeta) {
                obj += z * ra[i];
            }
            for (&j, &e) in live_cols.iter().zip(&eta) {
                obj -= e * rb[j];
            }
            best = best.max(obj);
            for (ii, &i) in live_rows.iter().enumerate() {
                zeta[ii] = live_cols
                    .iter()
                    .zip(&eta)
                    .map(|(&j, &e)| e + cost[i * n + j])
                    .fold(f64::INFINITY, f64::min);
            }
        }
        best
    }

    fn recurse(
        cost: &[f64],
        n: usize,
        ra: &mut [f64],
        rb: &mut [f64],
        acc: f64,
        best: &mut f64,
        tol: f64,
        prev_arc: usize,
    ) {
        let live_rows: Vec<usize> = (0..ra.len()).filter(|&i| ra[i] > tol).collect();
        let any_col = (0..rb.len()).any(|j| rb[j] > tol);
        // either side exhausted ends the path; whatever is left on the
        // other side is accumulated rounding debris below tol per entry
        if live_rows.is_empty() || !any_col {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if acc + lower_bound(cost, n, ra, rb, tol) >= *best - PRUNE_SLACK {
            return;
        }
        let (prev_i, prev_j) = if prev_arc == usize::MAX {
            (usize::MAX, usize::MAX)
        } else {
            (prev_arc / n, prev_arc % n)
        };
        // branch on every live pair, cheapest first; consecutive shipments
        // on disjoint index pairs commute, so only their sorted-by-arc order
        // is explored (every flow keeps a canonical representative)
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for &i in &live_rows {
            for j in 0..n {
                if rb[j] <= tol {
                    continue;
                }
                let arc = i * n + j;
                if prev_arc != usize::MAX && arc < prev_arc && i != prev_i && j != prev_j {
                    continue;
                }
                pairs.push((i, j));
            }
        }
        pairs.sort_by(|&(i1, j1), &(i2, j2)| {
            cost[i1 * n + j1].partial_cmp(&cost[i2 * n + j2]).unwrap()
        });
        // restore from saved values: an add-back restore smears ulp-level
        // drift over millions of sibling visits
        for (i, j) in pairs {
            let (saved_a, saved_b) = (ra[i], rb[j]);
            let theta = saved_a.min(saved_b);
            ra[i] -= theta;
            rb[j] -= theta;
            recurse(cost, n, ra, rb, acc + theta * cost[i * n + j], best, tol, i * n + j);
            ra[i] = saved_a;
            rb[j] = saved_b;
        }
    }
}
