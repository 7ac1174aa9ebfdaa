//! Fixed-demand traffic assignment and the road-pricing iteration.
//!
//! Link travel times follow the BPR curve `t0 (1 + 0.15 (f/c)^4)`. The user
//! equilibrium is computed with Frank-Wolfe on the Beckmann objective, either
//! classic or with conjugate search directions. Tolled links carry range
//! shifts `A ≤ B`; the pricing problem asks for tolls `u` whose equilibrium
//! flows satisfy `u + A ≤ f(u) ≤ u + B`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::FlowParams;
use crate::error::{Error, Result};
use crate::geometry::Vector;
use crate::integrate::{fmt_real, Record, StepSchedule, StopCriteria, Termination, Trajectory};

const SYNTHETIC_LINKS: &str = include_str!("../data/network_links.csv");
const SYNTHETIC_OD: &str = include_str!("../data/network_od.csv");

/// `t0 · (1 + 0.15 (f/c)^4)`.
pub fn bpr_time(t0: f64, capacity: f64, flow: f64) -> f64 {
    let x = flow / capacity;
    t0 * (1.0 + 0.15 * x * x * x * x)
}

/// Derivative of [`bpr_time`] with respect to the flow.
pub fn bpr_derivative(t0: f64, capacity: f64, flow: f64) -> f64 {
    let x = flow / capacity;
    0.6 * t0 * x * x * x / capacity
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub t0: f64,
    pub capacity: f64,
}

impl Link {
    pub fn time(&self, flow: f64) -> f64 {
        bpr_time(self.t0, self.capacity, flow)
    }
}

/// Link description with node names, as read from a links file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LinkSpec {
    pub link_id: String,
    pub from: String,
    pub to: String,
    pub t0: f64,
    pub capacity: f64,
    #[serde(deserialize_with = "flag")]
    pub tolled: bool,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" | "" => Ok(false),
        other => Err(serde::de::Error::custom(format!("tolled must be 0 or 1, got {other:?}"))),
    }
}

#[derive(Debug, Clone)]
pub struct TrafficNetwork {
    nodes: Vec<String>,
    links: Vec<Link>,
    tolled: Vec<usize>,
    lower_shift: Vec<f64>,
    upper_shift: Vec<f64>,
    outgoing: Vec<Vec<usize>>,
}

impl TrafficNetwork {
    /// Builds a network; nodes are numbered in order of first appearance and
    /// tolled links keep the order in which they are listed.
    pub fn new(specs: &[LinkSpec]) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut index = HashMap::new();
        let mut node_of = |name: &str, nodes: &mut Vec<String>| -> usize {
            *index.entry(name.to_string()).or_insert_with(|| {
                nodes.push(name.to_string());
                nodes.len() - 1
            })
        };
        let mut links = Vec::with_capacity(specs.len());
        let (mut tolled, mut lower_shift, mut upper_shift) = (Vec::new(), Vec::new(), Vec::new());
        let mut seen_ids = std::collections::HashSet::new();
        for s in specs {
            if !seen_ids.insert(s.link_id.clone()) {
                return Err(Error::Config(format!("duplicate link_id {:?}", s.link_id)));
            }
            if !(s.t0 > 0.0 && s.t0.is_finite()) {
                return Err(Error::Config(format!("link {}: t0 must be > 0, got {}", s.link_id, s.t0)));
            }
            if !(s.capacity > 0.0 && s.capacity.is_finite()) {
                return Err(Error::Config(format!("link {}: capacity must be > 0, got {}", s.link_id, s.capacity)));
            }
            let from = node_of(&s.from, &mut nodes);
            let to = node_of(&s.to, &mut nodes);
            if s.tolled {
                let (Some(a), Some(b)) = (s.a, s.b) else {
                    return Err(Error::Config(format!("link {}: tolled links need A and B", s.link_id)));
                };
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(Error::Config(format!("link {}: need finite A <= B, got A = {a}, B = {b}", s.link_id)));
                }
                tolled.push(links.len());
                lower_shift.push(a);
                upper_shift.push(b);
            }
            links.push(Link { id: s.link_id.clone(), from, to, t0: s.t0, capacity: s.capacity });
        }
        let mut outgoing = vec![Vec::new(); nodes.len()];
        for (j, l) in links.iter().enumerate() {
            outgoing[l.from].push(j);
        }
        Ok(Self { nodes, links, tolled, lower_shift, upper_shift, outgoing })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let specs = rdr.deserialize().collect::<std::result::Result<Vec<LinkSpec>, _>>()?;
        Self::new(&specs)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open links file {}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    /// The shipped eight-node, sixteen-link instance with three tolled links.
    pub fn synthetic() -> Self {
        Self::from_csv_reader(SYNTHETIC_LINKS.as_bytes()).expect("shipped links file is valid")
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn tolled(&self) -> &[usize] {
        &self.tolled
    }

    pub fn lower_shift(&self) -> &[f64] {
        &self.lower_shift
    }

    pub fn upper_shift(&self) -> &[f64] {
        &self.upper_shift
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Generalised link costs: travel time plus toll on tolled links.
    pub fn costs(&self, flows: &[f64], tolls: &[f64]) -> Vec<f64> {
        let mut c: Vec<f64> = self.links.iter().zip(flows).map(|(l, &f)| l.time(f)).collect();
        for (&j, &u) in self.tolled.iter().zip(tolls) {
            c[j] += u;
        }
        c
    }

    fn check_tolls(&self, tolls: &[f64]) -> Result<()> {
        if tolls.len() != self.tolled.len() {
            return Err(Error::DimensionMismatch { expected: self.tolled.len(), found: tolls.len() });
        }
        if !tolls.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteInput("tolls"));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct OdRow {
    origin: String,
    destination: String,
    demand: f64,
}

/// Origin-destination demands, grouped by origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ODMatrix {
    entries: Vec<(usize, usize, f64)>,
}

impl ODMatrix {
    pub fn new(net: &TrafficNetwork, entries: &[(&str, &str, f64)]) -> Result<Self> {
        let mut out = Vec::with_capacity(entries.len());
        for &(o, d, demand) in entries {
            let lookup = |name: &str| {
                net.node_index(name).ok_or_else(|| Error::Config(format!("OD entry names unknown node {name:?}")))
            };
            if !(demand >= 0.0 && demand.is_finite()) {
                return Err(Error::Config(format!("demand {o} -> {d} must be finite and >= 0, got {demand}")));
            }
            out.push((lookup(o)?, lookup(d)?, demand));
        }
        out.sort_by_key(|&(o, d, _)| (o, d));
        Ok(Self { entries: out })
    }

    pub fn from_csv_reader<R: Read>(net: &TrafficNetwork, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<OdRow>, _>>()?;
        let borrowed: Vec<(&str, &str, f64)> =
            rows.iter().map(|r| (r.origin.as_str(), r.destination.as_str(), r.demand)).collect();
        Self::new(net, &borrowed)
    }

    pub fn from_csv_path(net: &TrafficNetwork, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open OD file {}: {e}", path.display())))?;
        Self::from_csv_reader(net, file)
    }

    /// Demands of the shipped synthetic instance.
    pub fn synthetic(net: &TrafficNetwork) -> Self {
        Self::from_csv_reader(net, SYNTHETIC_OD.as_bytes()).expect("shipped OD file is valid")
    }

    /// `(origin, destination, demand)` by node index, sorted.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn total_demand(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathTree {
    pub origin: usize,
    pub dist: Vec<f64>,
    /// Link entering each node on its shortest path; `None` at the origin and
    /// at unreachable nodes.
    pub pred: Vec<Option<usize>>,
}

impl ShortestPathTree {
    /// Link indices from the origin to `dest`.
    pub fn path_to(&self, net: &TrafficNetwork, dest: usize) -> Result<Vec<usize>> {
        if !self.dist[dest].is_finite() {
            return Err(Error::UnreachableDestination {
                origin: net.nodes[self.origin].clone(),
                destination: net.nodes[dest].clone(),
            });
        }
        let mut path = Vec::new();
        let mut node = dest;
        while let Some(j) = self.pred[node] {
            path.push(j);
            node = net.links[j].from;
        }
        path.reverse();
        Ok(path)
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `origin` under nonnegative link `costs`. Unreachable nodes
/// get infinite distance.
pub fn shortest_paths(net: &TrafficNetwork, costs: &[f64], origin: usize) -> Result<ShortestPathTree> {
    if costs.len() != net.links.len() {
        return Err(Error::DimensionMismatch { expected: net.links.len(), found: costs.len() });
    }
    if origin >= net.nodes.len() {
        return Err(Error::InvalidArgument(format!("origin index {origin} out of range")));
    }
    if let Some(c) = costs.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
        return Err(Error::InvalidArgument(format!("link costs must be finite and >= 0, got {c}")));
    }
    let n = net.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[origin] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: origin });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &j in &net.outgoing[node] {
            let to = net.links[j].to;
            let nd = d + costs[j];
            if nd < dist[to] {
                dist[to] = nd;
                pred[to] = Some(j);
                heap.push(HeapEntry { dist: nd, node: to });
            }
        }
    }
    Ok(ShortestPathTree { origin, dist, pred })
}

/// Loads every OD demand onto its shortest path under `costs`.
pub fn all_or_nothing(net: &TrafficNetwork, od: &ODMatrix, costs: &[f64]) -> Result<Vec<f64>> {
    let mut flows = vec![0.0; net.links.len()];
    let mut tree: Option<ShortestPathTree> = None;
    for &(o, d, demand) in &od.entries {
        if tree.as_ref().is_none_or(|t| t.origin != o) {
            tree = Some(shortest_paths(net, costs, o)?);
        }
        let t = tree.as_ref().expect("tree computed above");
        let path = t.path_to(net, d)?;
        if demand > 0.0 {
            for j in path {
                flows[j] += demand;
            }
        }
    }
    Ok(flows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrankWolfeVariant {
    Classic,
    /// Search points combine the previous one with the new all-or-nothing
    /// solution so that consecutive directions are conjugate with respect to
    /// the diagonal Hessian of the Beckmann objective.
    Conjugate,
    /// As `Conjugate`, with the new direction conjugate to the previous two.
    Biconjugate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeSettings {
    pub gap_tol: f64,
    pub max_iter: usize,
    pub variant: FrankWolfeVariant,
}

impl Default for UeSettings {
    fn default() -> Self {
        Self { gap_tol: 1e-6, max_iter: 10_000, variant: FrankWolfeVariant::Biconjugate }
    }
}

impl UeSettings {
    fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(Error::InvalidArgument(format!("gap tolerance must be > 0, got {}", self.gap_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UEResult {
    pub link_flows: Vec<f64>,
    pub relative_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Relative gap `(c·x − c·y) / (c·x)` with `y` the all-or-nothing flows.
fn relative_gap(costs: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let cx: f64 = costs.iter().zip(x).map(|(c, f)| c * f).sum();
    let cy: f64 = costs.iter().zip(y).map(|(c, f)| c * f).sum();
    if cx <= 0.0 {
        0.0
    } else {
        ((cx - cy) / cx).max(0.0)
    }
}

/// Exact minimisation of the Beckmann objective along `x + τ d`, `τ ∈ [0, 1]`.
/// Returns `None` when `d` is not a descent direction.
fn line_search(net: &TrafficNetwork, tolls: &[f64], x: &[f64], d: &[f64]) -> Option<f64> {
    let slope = |tau: f64| -> f64 {
        let mut s = 0.0;
        for (j, l) in net.links.iter().enumerate() {
            if d[j] != 0.0 {
                s += l.time(x[j] + tau * d[j]) * d[j];
            }
        }
        for (&j, &u) in net.tolled.iter().zip(tolls) {
            s += u * d[j];
        }
        s
    };
    if !(slope(0.0) < 0.0) {
        return None;
    }
    if slope(1.0) <= 0.0 {
        return Some(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Conjugate weight of the previous search point: `N / D` with
/// `N = d̄ᵀHd`, `D = d̄ᵀH(d − d̄)`, clamped to `[0, 0.99]`.
fn conjugate_weight(net: &TrafficNetwork, x: &[f64], y: &[f64], s_prev: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (j, l) in net.links.iter().enumerate() {
        let h = bpr_derivative(l.t0, l.capacity, x[j]);
        let dbar = s_prev[j] - x[j];
        num += dbar * h * (y[j] - x[j]);
        den += dbar * h * (y[j] - s_prev[j]);
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 0.99)
    }
}

/// Search point conjugate to the previous two directions, or `None` when
/// the previous step went all the way to its search point.
fn biconjugate_target(net: &TrafficNetwork, x: &[f64], y: &[f64], s1: &[f64], s2: &[f64], tau: f64) -> Option<Vec<f64>> {
    if tau >= 1.0 - 1e-12 {
        return None;
    }
    let (mut a, mut b, mut c, mut e) = (0.0, 0.0, 0.0, 0.0);
    for (j, l) in net.links.iter().enumerate() {
        let h = bpr_derivative(l.t0, l.capacity, x[j]);
        let dbar = s1[j] - x[j];
        let dbb = tau * s1[j] + (1.0 - tau) * s2[j] - x[j];
        let fw = y[j] - x[j];
        a += dbb * h * fw;
        b += dbb * h * (s2[j] - s1[j]);
        c += dbar * h * fw;
        e += dbar * h * dbar;
    }
    let mu = if b != 0.0 { (-a / b).max(0.0) } else { 0.0 };
    let nu = if e != 0.0 { (-c / e + mu * tau / (1.0 - tau)).max(0.0) } else { 0.0 };
    if !(mu.is_finite() && nu.is_finite()) {
        return None;
    }
    let b0 = 1.0 / (1.0 + mu + nu);
    Some((0..x.len()).map(|j| b0 * (y[j] + nu * s1[j] + mu * s2[j])).collect())
}

/// Fixed-demand user equilibrium under generalised costs `t(f) + toll`.
///
/// Starts from the all-or-nothing assignment at free-flow costs. When the
/// iteration cap is reached first, the iterate with the smallest gap is
/// returned with `converged == false`.
pub fn user_equilibrium(net: &TrafficNetwork, od: &ODMatrix, tolls: &[f64], settings: &UeSettings) -> Result<UEResult> {
    settings.validate()?;
    net.check_tolls(tolls)?;
    let zero = vec![0.0; net.links.len()];
    let mut x = all_or_nothing(net, od, &net.costs(&zero, tolls))?;
    let mut s_prev: Option<Vec<f64>> = None;
    let mut s_prev2: Option<Vec<f64>> = None;
    let mut tau_prev = 1.0;
    let mut best: Option<UEResult> = None;
    let mut k = 0;
    loop {
        let costs = net.costs(&x, tolls);
        let y = all_or_nothing(net, od, &costs)?;
        let gap = relative_gap(&costs, &x, &y);
        if best.as_ref().is_none_or(|b| gap < b.relative_gap) {
            best = Some(UEResult { link_flows: x.clone(), relative_gap: gap, iterations: k, converged: false });
        }
        if gap <= settings.gap_tol {
            return Ok(UEResult { link_flows: x, relative_gap: gap, iterations: k, converged: true });
        }
        if k >= settings.max_iter {
            return Ok(best.expect("at least one iterate recorded"));
        }

        // Candidate search points, most ambitious first; the plain
        // all-or-nothing point is always last.
        let mut candidates = Vec::with_capacity(3);
        if let (FrankWolfeVariant::Biconjugate, Some(s1), Some(s2)) = (settings.variant, &s_prev, &s_prev2) {
            candidates.extend(biconjugate_target(net, &x, &y, s1, s2, tau_prev));
        }
        if let (FrankWolfeVariant::Conjugate | FrankWolfeVariant::Biconjugate, Some(sp)) = (settings.variant, &s_prev) {
            let w = conjugate_weight(net, &x, &y, sp);
            candidates.push(sp.iter().zip(&y).map(|(a, b)| w * a + (1.0 - w) * b).collect());
        }
        candidates.push(y);
        let mut chosen = None;
        for target in &candidates {
            let d: Vec<f64> = target.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            if let Some(tau) = line_search(net, tolls, &x, &d) {
                chosen = Some((target.clone(), d, tau));
                break;
            }
        }
        let (target, d, tau) = chosen.unwrap_or_else(|| {
            let y = candidates.pop().expect("all-or-nothing candidate present");
            let d = y.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            (y, d, 2.0 / (k as f64 + 2.0))
        });
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi = (*xi + tau * di).max(0.0);
        }
        s_prev2 = s_prev.take();
        s_prev = Some(target);
        tau_prev = tau;
        k += 1;
    }
}

/// The implicit map `u ↦ f(u)`: equilibrium flows on the tolled links.
#[derive(Debug, Clone)]
pub struct RoadPricingOperator {
    net: TrafficNetwork,
    od: ODMatrix,
    settings: UeSettings,
}

impl RoadPricingOperator {
    pub fn new(net: TrafficNetwork, od: ODMatrix, settings: UeSettings) -> Result<Self> {
        settings.validate()?;
        if net.tolled.is_empty() {
            return Err(Error::Config("network has no tolled links".into()));
        }
        Ok(Self { net, od, settings })
    }

    pub fn network(&self) -> &TrafficNetwork {
        &self.net
    }

    pub fn od(&self) -> &ODMatrix {
        &self.od
    }

    pub fn settings(&self) -> &UeSettings {
        &self.settings
    }

    pub fn dim(&self) -> usize {
        self.net.tolled.len()
    }

    /// Full equilibrium at tolls `u`; fails if the assignment does not reach
    /// the configured gap.
    pub fn equilibrium(&self, u: &Vector) -> Result<UEResult> {
        let ue = user_equilibrium(&self.net, &self.od, u.as_slice(), &self.settings)?;
        if !ue.converged {
            return Err(Error::NonConvergence { gap: ue.relative_gap, iterations: ue.iterations });
        }
        Ok(ue)
    }

    pub fn tolled_flows(&self, ue: &UEResult) -> Vector {
        Vector::from_iterator(self.dim(), self.net.tolled.iter().map(|&j| ue.link_flows[j]))
    }

    pub fn eval(&self, u: &Vector) -> Result<Vector> {
        Ok(self.tolled_flows(&self.equilibrium(u)?))
    }

    /// Range `[u + A, u + B]` of admissible tolled-link flows.
    pub fn bounds(&self, u: &Vector) -> (Vector, Vector) {
        let a = Vector::from_column_slice(&self.net.lower_shift);
        let b = Vector::from_column_slice(&self.net.upper_shift);
        (u + a, u + b)
    }

    /// `f(u) − P_{[u+A, u+B]}(f(u) + αu)`, given `f(u)`.
    pub fn pricing_residual(&self, u: &Vector, flows: &Vector, alpha: f64) -> Vector {
        let (lo, hi) = self.bounds(u);
        let shifted = flows + u * alpha;
        let proj = Vector::from_fn(u.len(), |i, _| shifted[i].clamp(lo[i], hi[i]));
        flows - proj
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadPricingRun {
    /// Tolls `u_n` with the pricing-residual norm in `residual_norm`.
    pub trajectory: Trajectory,
    /// `R_n = λ_{n+1} ψ(u_n) ‖f(u_n) − P(f(u_n) + αu_n)‖`, the length of the
    /// step taken from `u_n`.
    pub step_residuals: Vec<f64>,
    /// Tolled-link flows `f(u_n)`.
    pub flows: Vec<Vector>,
    pub final_equilibrium: UEResult,
    /// Whether the last `R_n` is below the residual tolerance (0.1 when none
    /// is configured).
    pub converged: bool,
}

impl RoadPricingRun {
    /// CSV with header `iter,u_1..u_m,R_n,flow_1..flow_m`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.flows.first().map_or(0, |f| f.len());
        let mut header = String::from("iter");
        for i in 1..=m {
            header.push_str(&format!(",u_{i}"));
        }
        header.push_str(",R_n");
        for i in 1..=m {
            header.push_str(&format!(",flow_{i}"));
        }
        writeln!(out, "{header}")?;
        for ((rec, r), f) in self.trajectory.records.iter().zip(&self.step_residuals).zip(&self.flows) {
            let mut line = rec.iter.to_string();
            for x in rec.state.iter().chain(std::iter::once(r)).chain(f.iter()) {
                line.push(',');
                line.push_str(&fmt_real(*x));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Default threshold on `R_n` used for the convergence flag.
pub const PRICING_RESIDUAL_THRESHOLD: f64 = 0.1;

/// Iterates `u_{n+1} = u_n + λ_{n+1} ψ(u_n) [f(u_n) − P_{Φ(u_n)}(f(u_n) + αu_n)]`
/// with `Φ(u) = [u + A, u + B]`.
///
/// Stops at `stop.max_iter` or, when `stop.residual_tol` is set, as soon as
/// `R_n` falls to that tolerance.
pub fn solve_road_pricing(
    op: &RoadPricingOperator,
    fp: &FlowParams,
    sched: &StepSchedule,
    alpha: f64,
    u0: &Vector,
    stop: &StopCriteria,
) -> Result<RoadPricingRun> {
    let fp = fp.validated()?;
    if !matches!(fp, FlowParams::FixedTime { .. }) {
        return Err(Error::InvalidArgument("road pricing uses the fixed-time gain".into()));
    }
    stop.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    op.net.check_tolls(u0.as_slice())?;

    let mut records = Vec::new();
    let mut step_residuals = Vec::new();
    let mut flows = Vec::new();
    let mut u = u0.clone();
    let mut time = 0.0;
    let mut n = 0;
    let (termination, final_equilibrium) = loop {
        let ue = op.equilibrium(&u)?;
        let f = op.tolled_flows(&ue);
        let t = op.pricing_residual(&u, &f, alpha);
        let tn = t.norm();
        let lambda = sched.step(n + 1);
        let gain = fp.gain(tn);
        let r = lambda * gain * tn;
        records.push(Record { iter: n, time, state: u.clone(), residual_norm: tn, error_norm: None });
        step_residuals.push(r);
        flows.push(f);
        if stop.residual_tol.is_some_and(|tol| r <= tol) {
            break (Termination::ResidualTol, ue);
        }
        if n >= stop.max_iter {
            break (Termination::MaxIter, ue);
        }
        if gain != 0.0 {
            u += t * (lambda * gain);
            if !u.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { iteration: n + 1 });
            }
        }
        time += lambda;
        n += 1;
    };
    let threshold = stop.residual_tol.unwrap_or(PRICING_RESIDUAL_THRESHOLD);
    let converged = step_residuals.last().is_some_and(|&r| r < threshold || r == 0.0);
    Ok(RoadPricingRun {
        trajectory: Trajectory { records, termination },
        step_residuals,
        flows,
        final_equilibrium,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str, from: &str, to: &str, t0: f64, c: f64, shift: Option<(f64, f64)>) -> LinkSpec {
        LinkSpec {
            link_id: id.into(),
            from: from.into(),
            to: to.into(),
            t0,
            capacity: c,
            tolled: shift.is_some(),
            a: shift.map(|s| s.0),
            b: shift.map(|s| s.1),
        }
    }

    fn two_links(t0: (f64, f64), c: (f64, f64), shifts: bool) -> TrafficNetwork {
        let sh = |a, b| shifts.then_some((a, b));
        TrafficNetwork::new(&[spec("1", "o", "d", t0.0, c.0, sh(0.0, 1.5)), spec("2", "o", "d", t0.1, c.1, sh(0.0, 1.5))])
            .unwrap()
    }

    fn tight() -> UeSettings {
        UeSettings { gap_tol: 1e-10, max_iter: 20_000, variant: FrankWolfeVariant::Conjugate }
    }

    /// Splits `demand` over two parallel links so both costs agree, by
    /// bisection on the cost difference.
    fn wardrop_split(net: &TrafficNetwork, tolls: (f64, f64), demand: f64) -> f64 {
        let l = net.links();
        let diff = |f1: f64| (l[0].time(f1) + tolls.0) - (l[1].time(demand - f1) + tolls.1);
        if diff(demand) <= 0.0 {
            return demand;
        }
        if diff(0.0) >= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, demand);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if diff(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn bpr_values() {
        assert_eq!(bpr_time(10.0, 100.0, 0.0), 10.0);
        assert!((bpr_time(10.0, 100.0, 100.0) - 11.5).abs() < 1e-12);
        assert!((bpr_time(10.0, 100.0, 200.0) - 34.0).abs() < 1e-12);
        let mut prev = bpr_time(3.0, 7.0, 0.0);
        for i in 1..=1000 {
            let t = bpr_time(3.0, 7.0, i as f64 * 0.05);
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn bpr_derivative_matches_difference_quotient() {
        for f in [0.5, 3.0, 12.0] {
            let h = 1e-6;
            let fd = (bpr_time(2.0, 5.0, f + h) - bpr_time(2.0, 5.0, f - h)) / (2.0 * h);
            assert!((fd - bpr_derivative(2.0, 5.0, f)).abs() < 1e-6);
        }
    }

    #[test]
    fn dijkstra_small_graphs() {
        let net = TrafficNetwork::new(&[spec("x", "a", "b", 1.0, 1.0, None)]).unwrap();
        let tree = shortest_paths(&net, &[5.0], 0).unwrap();
        assert_eq!(tree.dist[1], 5.0);

        let net = TrafficNetwork::new(&[
            spec("ab", "a", "b", 1.0, 1.0, None),
            spec("bc", "b", "c", 1.0, 1.0, None),
            spec("ac", "a", "c", 1.0, 1.0, None),
        ])
        .unwrap();
        let costs = [1.0, 1.0, 3.0];
        let tree = shortest_paths(&net, &costs, 0).unwrap();
        // enumerate the two a -> c paths
        let enumerated = [costs[0] + costs[1], costs[2]].into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(tree.dist[2], enumerated);
        assert_eq!(tree.path_to(&net, 2).unwrap(), vec![0, 1]);

        let tree = shortest_paths(&net, &[0.0; 3], 0).unwrap();
        assert_eq!(tree.dist, vec![0.0; 3]);
    }

    #[test]
    fn unreachable_destination_is_reported() {
        let net = TrafficNetwork::new(&[spec("x", "a", "b", 1.0, 1.0, None)]).unwrap();
        let od = ODMatrix::new(&net, &[("b", "a", 1.0)]).unwrap();
        let err = all_or_nothing(&net, &od, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::UnreachableDestination { ref origin, ref destination } if origin == "b" && destination == "a"));
    }

    #[test]
    fn single_route_carries_all_demand() {
        let net = TrafficNetwork::new(&[spec("x", "a", "b", 1.0, 1.0, None)]).unwrap();
        let od = ODMatrix::new(&net, &[("a", "b", 7.0)]).unwrap();
        let ue = user_equilibrium(&net, &od, &[], &UeSettings::default()).unwrap();
        assert_eq!(ue.link_flows, vec![7.0]);
        assert!(ue.converged);
    }

    #[test]
    fn symmetric_links_split_evenly() {
        let net = two_links((1.0, 1.0), (1.0, 1.0), false);
        let od = ODMatrix::new(&net, &[("o", "d", 2.0)]).unwrap();
        for variant in [FrankWolfeVariant::Classic, FrankWolfeVariant::Conjugate, FrankWolfeVariant::Biconjugate] {
            let s = UeSettings { variant, ..tight() };
            let ue = user_equilibrium(&net, &od, &[], &s).unwrap();
            assert!((ue.link_flows[0] - 1.0).abs() < 1e-3, "{variant:?}: {:?}", ue.link_flows);
            assert!((ue.link_flows[0] + ue.link_flows[1] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_links_match_wardrop_oracle() {
        let net = two_links((1.0, 2.0), (1.0, 1.0), false);
        let od = ODMatrix::new(&net, &[("o", "d", 2.0)]).unwrap();
        let oracle = wardrop_split(&net, (0.0, 0.0), 2.0);
        for variant in [FrankWolfeVariant::Classic, FrankWolfeVariant::Conjugate, FrankWolfeVariant::Biconjugate] {
            let s = UeSettings { gap_tol: 1e-8, max_iter: 500, variant };
            let ue = user_equilibrium(&net, &od, &[], &s).unwrap();
            assert!(ue.converged, "{variant:?}");
            assert!((ue.link_flows[0] - oracle).abs() < 1e-3);
        }
    }

    #[test]
    fn raising_a_toll_does_not_raise_its_flow() {
        let net = two_links((1.0, 1.2), (1.0, 1.0), true);
        let od = ODMatrix::new(&net, &[("o", "d", 3.0)]).unwrap();
        let op = RoadPricingOperator::new(net.clone(), od, tight()).unwrap();
        let low = op.eval(&Vector::from_vec(vec![0.1, 0.0])).unwrap();
        let high = op.eval(&Vector::from_vec(vec![0.6, 0.0])).unwrap();
        assert!(high[0] <= low[0]);
        assert!((low[0] - wardrop_split(&net, (0.1, 0.0), 3.0)).abs() < 1e-6);
        assert!((high[0] - wardrop_split(&net, (0.6, 0.0), 3.0)).abs() < 1e-6);
    }

    #[test]
    fn zero_demand_gives_zero_flows() {
        let net = TrafficNetwork::synthetic();
        let entries: Vec<(usize, usize, f64)> = ODMatrix::synthetic(&net).entries().to_vec();
        let names: Vec<(String, String)> =
            entries.iter().map(|&(o, d, _)| (net.nodes()[o].clone(), net.nodes()[d].clone())).collect();
        let zero: Vec<(&str, &str, f64)> = names.iter().map(|(o, d)| (o.as_str(), d.as_str(), 0.0)).collect();
        let od = ODMatrix::new(&net, &zero).unwrap();
        let ue = user_equilibrium(&net, &od, &[0.0; 3], &UeSettings::default()).unwrap();
        assert!(ue.link_flows.iter().all(|&f| f == 0.0));
        assert!(ue.converged);
    }

    #[test]
    fn unique_routes_make_the_operator_constant() {
        let net = TrafficNetwork::new(&[
            spec("1", "a", "b", 1.0, 1.0, Some((0.0, 5.0))),
            spec("2", "c", "d", 1.0, 1.0, Some((0.0, 5.0))),
        ])
        .unwrap();
        let od = ODMatrix::new(&net, &[("a", "b", 3.0), ("c", "d", 4.0)]).unwrap();
        let op = RoadPricingOperator::new(net, od, UeSettings::default()).unwrap();
        for u in [[0.0, 0.0], [2.0, 7.0]] {
            assert_eq!(op.eval(&Vector::from_row_slice(&u)).unwrap().as_slice(), &[3.0, 4.0]);
        }
    }

    #[test]
    fn synthetic_network_shape() {
        let net = TrafficNetwork::synthetic();
        assert_eq!(net.nodes().len(), 8);
        assert_eq!(net.links().len(), 16);
        assert_eq!(net.tolled().len(), 3);
        assert_eq!(net.lower_shift(), &[40.0, 0.0, 100.0]);
        assert_eq!(net.upper_shift(), &[90.0, 50.0, 200.0]);
    }

    fn check_conservation(net: &TrafficNetwork, od: &ODMatrix, flows: &[f64]) {
        let mut balance = vec![0.0; net.nodes().len()];
        for (l, f) in net.links().iter().zip(flows) {
            balance[l.from] -= f;
            balance[l.to] += f;
        }
        for &(o, d, q) in od.entries() {
            balance[o] += q;
            balance[d] -= q;
        }
        for b in balance {
            assert!(b.abs() < 1e-9, "imbalance {b}");
        }
    }

    #[test]
    fn used_parallel_routes_have_equal_costs() {
        let net = TrafficNetwork::new(&[
            spec("1", "o", "d", 1.0, 1.0, Some((0.0, 1.0))),
            spec("2", "o", "d", 1.3, 2.0, None),
            spec("3", "o", "d", 2.0, 1.5, None),
            spec("4", "o", "d", 9.0, 1.0, None),
        ])
        .unwrap();
        let od = ODMatrix::new(&net, &[("o", "d", 4.0)]).unwrap();
        let gap_tol = 1e-6;
        let ue = user_equilibrium(&net, &od, &[0.2], &UeSettings { gap_tol, ..UeSettings::default() }).unwrap();
        assert!(ue.converged);
        let costs = net.costs(&ue.link_flows, &[0.2]);
        let shortest = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        for (c, f) in costs.iter().zip(&ue.link_flows) {
            if *f > 1e-6 * 4.0 {
                assert!(c - shortest <= 10.0 * gap_tol * shortest, "used route costs {c}, shortest {shortest}");
            }
        }
        assert_eq!(ue.link_flows[3], 0.0);
    }

    proptest::proptest! {
        #[test]
        fn conservation_holds_for_any_tolls(u1 in 0.0..40.0f64, u2 in 0.0..40.0f64, u3 in 0.0..40.0f64) {
            let net = TrafficNetwork::synthetic();
            let od = ODMatrix::synthetic(&net);
            let ue = user_equilibrium(&net, &od, &[u1, u2, u3], &UeSettings::default()).unwrap();
            proptest::prop_assert!(ue.converged);
            check_conservation(&net, &od, &ue.link_flows);
        }
    }

    #[test]
    fn synthetic_equilibrium_conserves_flow() {
        let net = TrafficNetwork::synthetic();
        let od = ODMatrix::synthetic(&net);
        let ue = user_equilibrium(&net, &od, &[5.0, 0.0, 20.0], &UeSettings::default()).unwrap();
        assert!(ue.converged && ue.relative_gap <= 1e-6);
        check_conservation(&net, &od, &ue.link_flows);
    }

    #[test]
    fn equilibrium_of_outer_iteration_is_fixed() {
        // Tolls chosen so that the flow already sits at the upper bound u + B
        // with f + αu above it: the residual vanishes and u stays put.
        let net = TrafficNetwork::new(&[spec("1", "a", "b", 1.0, 1.0, Some((0.0, 2.0)))]).unwrap();
        let od = ODMatrix::new(&net, &[("a", "b", 3.0)]).unwrap();
        let op = RoadPricingOperator::new(net, od, UeSettings::default()).unwrap();
        let fp = FlowParams::fixed_time(0.75, 0.75, 0.65, 1.5).unwrap();
        let u0 = Vector::from_vec(vec![1.0]);
        let run = solve_road_pricing(&op, &fp, &StepSchedule::harmonic(4.0).unwrap(), 0.5, &u0, &StopCriteria::iterations(5))
            .unwrap();
        assert!(run.trajectory.records.iter().all(|r| r.state == u0 && r.residual_norm == 0.0));
        assert!(run.step_residuals.iter().all(|&r| r == 0.0));
        assert!(run.converged);
    }

    #[test]
    fn two_link_pricing_reaches_the_range() {
        let net = TrafficNetwork::new(&[
            spec("1", "o", "d", 1.0, 1.0, Some((0.0, 1.0))),
            spec("2", "o", "d", 1.5, 1.0, None),
        ])
        .unwrap();
        let od = ODMatrix::new(&net, &[("o", "d", 3.0)]).unwrap();
        let op = RoadPricingOperator::new(net.clone(), od, tight()).unwrap();
        let fp = FlowParams::fixed_time(0.75, 0.75, 0.65, 1.5).unwrap();
        let run = solve_road_pricing(
            &op,
            &fp,
            &StepSchedule::harmonic(1.0).unwrap(),
            0.5,
            &Vector::from_vec(vec![0.0]),
            &StopCriteria::iterations(300),
        )
        .unwrap();
        let u = run.trajectory.last().state[0];
        let flow = wardrop_split(&net, (u, 0.0), 3.0);
        assert!((flow - run.flows.last().unwrap()[0]).abs() < 1e-6);
        assert!(flow >= u - 1e-3 && flow <= u + 1.0 + 1e-3, "flow {flow}, toll {u}");
        assert!(*run.step_residuals.last().unwrap() < 0.1);
    }

    #[test]
    fn csv_layout() {
        let net = TrafficNetwork::new(&[spec("1", "a", "b", 1.0, 1.0, Some((0.0, 2.0)))]).unwrap();
        let od = ODMatrix::new(&net, &[("a", "b", 3.0)]).unwrap();
        let op = RoadPricingOperator::new(net, od, UeSettings::default()).unwrap();
        let fp = FlowParams::fixed_time(0.75, 0.75, 0.65, 1.5).unwrap();
        let run =
            solve_road_pricing(&op, &fp, &StepSchedule::harmonic(0.1).unwrap(), 0.5, &Vector::zeros(1), &StopCriteria::iterations(2))
                .unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,u_1,R_n,flow_1"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn malformed_links_are_rejected() {
        let bad = "link_id,from,to,t0,capacity,tolled,A,B\n1,a,b,0,1,0,,\n";
        assert!(matches!(TrafficNetwork::from_csv_reader(bad.as_bytes()), Err(Error::Config(_))));
        let bad = "link_id,from,to,t0,capacity,tolled,A,B\n1,a,b,1,1,1,,\n";
        assert!(TrafficNetwork::from_csv_reader(bad.as_bytes()).is_err());
    }
}
