//! Hofbauer extension, trimming and the induced first-return scheme.

use crate::error::{check_unit, Error, Result};
use crate::maps::IntervalMap;
use crate::openmap::block_rng;
use crate::stats::{linear_fit, LinearFit};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, VecDeque};

pub const DEDUP_TOL: f64 = 1e-12;
pub const DEFAULT_DOMAIN_CAP: usize = 100_000;
pub const DEFAULT_PIECE_CAP: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CutTag {
    Crit,
    PreimageOfZ,
    PreimageOfZEps0,
    PreimageOfZEps,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CutPoint {
    pub x: f64,
    pub tag: CutTag,
}

#[derive(Clone, Debug, Serialize)]
pub struct CutSet {
    points: Vec<CutPoint>,
    pub warnings: Vec<String>,
}

impl CutSet {
    /// Critical points and branch boundaries only.
    pub fn critical(map: &IntervalMap) -> Self {
        let mut c = CutSet { points: Vec::new(), warnings: Vec::new() };
        for p in map.crit() {
            c.insert(p.point, CutTag::Crit);
        }
        for b in map.breakpoints() {
            c.insert(b, CutTag::Crit);
        }
        c
    }

    /// Explicit points (tagged as critical), for fixtures.
    pub fn from_points(points: &[f64]) -> Self {
        let mut c = CutSet { points: Vec::new(), warnings: Vec::new() };
        for &p in points {
            c.insert(p, CutTag::Crit);
        }
        c
    }

    fn insert(&mut self, x: f64, tag: CutTag) {
        if x <= DEDUP_TOL || x >= 1.0 - DEDUP_TOL {
            return;
        }
        if self.points.iter().any(|p| (p.x - x).abs() <= DEDUP_TOL) {
            return;
        }
        let pos = self.points.partition_point(|p| p.x < x);
        self.points.insert(pos, CutPoint { x, tag });
    }

    pub fn points(&self) -> &[CutPoint] {
        &self.points
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    /// Cut points strictly inside (a, b), away from the ends by the dedup tolerance.
    pub fn inside(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let start = self.points.partition_point(|p| p.x <= a + DEDUP_TOL);
        self.points[start..].iter().map(|p| p.x).take_while(move |&x| x < b - DEDUP_TOL)
    }
}

/// Crit ∪ f⁻¹(z) ∪ f⁻¹(z ± ε₀) [∪ f⁻¹(z ± ε)], with the ε₀ smallness bound
/// for level `l` and the genericity of z ± ε₀ checked as warnings.
pub fn make_cutset(map: &IntervalMap, z: f64, eps0: Option<f64>, eps: Option<f64>, l: usize) -> Result<CutSet> {
    check_unit("z", z)?;
    let mut c = CutSet::critical(map);
    for y in map.preimages(z)? {
        c.insert(y, CutTag::PreimageOfZ);
    }
    let crit_z = c.xs();
    if let Some(e0) = eps0 {
        if let Some(e) = eps {
            if !(e < e0) {
                return Err(Error::Config(format!("eps = {e} must be smaller than eps0 = {e0}")));
            }
        }
        check_unit("z - eps0", z - e0)?;
        check_unit("z + eps0", z + e0)?;
        for v in [z - e0, z + e0] {
            for y in map.preimages(v)? {
                c.insert(y, CutTag::PreimageOfZEps0);
            }
        }
        let bound = eps0_bound(map, &crit_z, l);
        if !(e0 < bound) {
            c.warnings.push(format!("eps0 = {e0} violates the level-{l} smallness bound {bound:e}"));
        }
        for v in [z - e0, z + e0] {
            let mut y = v;
            for ell in 0..=50 {
                if crit_z.iter().any(|&p| (p - y).abs() < 1e-9) {
                    c.warnings.push(format!("f^{ell}({v}) lands within 1e-9 of Crit_z"));
                    break;
                }
                y = map.eval_unchecked(y);
            }
        }
    } else if eps.is_some() {
        return Err(Error::Config("eps requires eps0".into()));
    }
    if let Some(e) = eps {
        check_unit("z - eps", z - e)?;
        check_unit("z + eps", z + e)?;
        for v in [z - e, z + e] {
            for y in map.preimages(v)? {
                c.insert(y, CutTag::PreimageOfZEps);
            }
        }
    }
    Ok(c)
}

/// (1/sup|Df^l|)·min distance between distinct points of Crit_z ∪ {0, 1},
/// with sup|Df^l| sampled on a grid.
fn eps0_bound(map: &IntervalMap, crit_z: &[f64], l: usize) -> f64 {
    let mut pts = vec![0.0];
    pts.extend_from_slice(crit_z);
    pts.push(1.0);
    let gap = pts.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let mut sup: f64 = 1.0;
    for k in 0..=4096 {
        let mut x = k as f64 / 4096.0;
        let mut d = 1.0;
        for _ in 0..l {
            d *= map.abs_derivative(x);
            x = map.eval_unchecked(x);
        }
        sup = sup.max(d);
    }
    gap / sup
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HofbauerDomain {
    pub id: usize,
    pub lo: f64,
    pub hi: f64,
    pub level: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HofbauerEdge {
    pub src: usize,
    pub dst: usize,
    pub witness_lo: f64,
    pub witness_hi: f64,
    pub branch: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct HofbauerExtension {
    domains: Vec<HofbauerDomain>,
    edges: Vec<HofbauerEdge>,
    pub base_id: usize,
    pub l_max: usize,
    pub transitive_only: bool,
    cuts: CutSet,
    #[serde(skip)]
    index: HashMap<usize, usize>,
    #[serde(skip)]
    out: HashMap<usize, Vec<usize>>,
}

#[derive(Clone, Debug)]
struct Piece1 {
    lo: f64,
    hi: f64,
    branch: usize,
    img_lo: f64,
    img_hi: f64,
}

fn one_cylinders(map: &IntervalMap, cuts: &CutSet, lo: f64, hi: f64) -> Vec<Piece1> {
    let mut bounds = vec![lo];
    bounds.extend(cuts.inside(lo, hi));
    bounds.push(hi);
    bounds
        .windows(2)
        .map(|w| {
            let branch = map.branch_index(0.5 * (w[0] + w[1]));
            let br = map.branch(branch);
            let (a, b) = (br.eval(w[0]).clamp(0.0, 1.0), br.eval(w[1]).clamp(0.0, 1.0));
            Piece1 { lo: w[0], hi: w[1], branch, img_lo: a.min(b), img_hi: a.max(b) }
        })
        .collect()
}

/// Domains keyed by left endpoint for tolerance lookups.
struct DomainIndex {
    by_lo: BTreeMap<i64, Vec<usize>>,
}

impl DomainIndex {
    fn key(x: f64) -> i64 {
        (x * 1e9).floor() as i64
    }

    fn find(&self, domains: &[HofbauerDomain], lo: f64, hi: f64) -> Option<usize> {
        let k = Self::key(lo);
        for kk in [k - 1, k, k + 1] {
            if let Some(ids) = self.by_lo.get(&kk) {
                for &id in ids {
                    let d = &domains[id];
                    if (d.lo - lo).abs() <= DEDUP_TOL && (d.hi - hi).abs() <= DEDUP_TOL {
                        return Some(id);
                    }
                }
            }
        }
        None
    }

    fn insert(&mut self, lo: f64, id: usize) {
        self.by_lo.entry(Self::key(lo)).or_default().push(id);
    }
}

impl HofbauerExtension {
    pub fn domains(&self) -> &[HofbauerDomain] {
        &self.domains
    }

    pub fn edges(&self) -> &[HofbauerEdge] {
        &self.edges
    }

    pub fn cuts(&self) -> &CutSet {
        &self.cuts
    }

    pub fn domain(&self, id: usize) -> Option<&HofbauerDomain> {
        self.index.get(&id).map(|&k| &self.domains[k])
    }

    pub fn out_edges(&self, id: usize) -> impl Iterator<Item = &HofbauerEdge> {
        self.out.get(&id).into_iter().flatten().map(move |&k| &self.edges[k])
    }

    fn reindex(&mut self) {
        self.index = self.domains.iter().enumerate().map(|(k, d)| (d.id, k)).collect();
        self.out.clear();
        for (k, e) in self.edges.iter().enumerate() {
            self.out.entry(e.src).or_default().push(k);
        }
    }

    /// Assemble from explicit parts (used to build fixtures).
    pub fn from_parts(domains: Vec<HofbauerDomain>, edges: Vec<HofbauerEdge>, base_id: usize, l_max: usize, cuts: CutSet) -> Self {
        let mut e = HofbauerExtension {
            domains,
            edges,
            base_id,
            l_max,
            transitive_only: false,
            cuts,
            index: HashMap::new(),
            out: HashMap::new(),
        };
        e.reindex();
        e
    }

    /// Edge from `src` whose witness holds `x` (left witness on ties).
    pub fn edge_at(&self, src: usize, x: f64) -> Option<&HofbauerEdge> {
        self.out_edges(src).find(|e| x >= e.witness_lo && x <= e.witness_hi)
    }

    /// Breadth-first levels from the base; `None` for unreachable domains.
    pub fn recompute_levels(&self) -> HashMap<usize, usize> {
        let mut lvl = HashMap::new();
        if self.domain(self.base_id).is_none() {
            return lvl;
        }
        lvl.insert(self.base_id, 0);
        let mut q = VecDeque::from([self.base_id]);
        while let Some(d) = q.pop_front() {
            let l = lvl[&d];
            for e in self.out_edges(d) {
                if !lvl.contains_key(&e.dst) {
                    lvl.insert(e.dst, l + 1);
                    q.push_back(e.dst);
                }
            }
        }
        lvl
    }

    /// Largest |f(witness) − target| over all edges.
    pub fn max_witness_defect(&self, map: &IntervalMap) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let br = map.branch(e.branch);
                let (a, b) = (br.eval(e.witness_lo), br.eval(e.witness_hi));
                let d = self.domain(e.dst).expect("edge target exists");
                (a.min(b) - d.lo).abs().max((a.max(b) - d.hi).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Graph export: `domain,id,lo,hi,level` and `edge,src,dst,witness_lo,witness_hi` lines.
    pub fn graph_text(&self) -> String {
        let mut s = String::new();
        for d in &self.domains {
            s.push_str(&format!("domain,{},{},{},{}\n", d.id, d.lo, d.hi, d.level));
        }
        for e in &self.edges {
            s.push_str(&format!("edge,{},{},{},{}\n", e.src, e.dst, e.witness_lo, e.witness_hi));
        }
        s
    }
}

/// Level-synchronous breadth-first construction; domains of level `l_max`
/// are created but not expanded.
pub fn build_extension(map: &IntervalMap, cuts: &CutSet, l_max: usize, cap: usize) -> Result<HofbauerExtension> {
    if l_max < 1 {
        return Err(Error::Config("L_max must be at least 1".into()));
    }
    let mut domains = vec![HofbauerDomain { id: 0, lo: 0.0, hi: 1.0, level: 0 }];
    let mut idx = DomainIndex { by_lo: BTreeMap::new() };
    idx.insert(0.0, 0);
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];
    for level in 0..l_max {
        let expanded: Vec<(usize, Vec<Piece1>)> = frontier
            .par_iter()
            .map(|&id| (id, one_cylinders(map, cuts, domains[id].lo, domains[id].hi)))
            .collect();
        let mut next = Vec::new();
        for (src, pieces) in expanded {
            for p in pieces {
                if p.img_hi - p.img_lo <= DEDUP_TOL {
                    continue;
                }
                let dst = match idx.find(&domains, p.img_lo, p.img_hi) {
                    Some(d) => d,
                    None => {
                        let id = domains.len();
                        if id >= cap {
                            return Err(Error::Explosion { cap, level: level + 1 });
                        }
                        domains.push(HofbauerDomain { id, lo: p.img_lo, hi: p.img_hi, level: level + 1 });
                        idx.insert(p.img_lo, id);
                        next.push(id);
                        id
                    }
                };
                edges.push(HofbauerEdge { src, dst, witness_lo: p.lo, witness_hi: p.hi, branch: p.branch });
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(HofbauerExtension::from_parts(domains, edges, 0, l_max, cuts.clone()))
}

/// Restriction to the recurrent class reached from the base that no other
/// recurrent class is reachable from (the largest such class if several).
pub fn transitive_component(ext: &HofbauerExtension) -> Result<HofbauerExtension> {
    let n = ext.domains.len();
    let mut g = DiGraph::<usize, ()>::with_capacity(n, ext.edges.len());
    for d in &ext.domains {
        g.add_node(d.id);
    }
    for e in &ext.edges {
        g.add_edge(NodeIndex::new(ext.index[&e.src]), NodeIndex::new(ext.index[&e.dst]), ());
    }
    let sccs = kosaraju_scc(&g);
    let mut class_of = vec![0usize; n];
    for (c, m) in sccs.iter().enumerate() {
        for v in m {
            class_of[v.index()] = c;
        }
    }
    let recurrent: Vec<bool> = sccs
        .iter()
        .map(|m| m.len() > 1 || g.find_edge(m[0], m[0]).is_some())
        .collect();
    let reachable = ext.recompute_levels();
    // sccs are in reverse topological order: successors come first.
    let mut reaches_recurrent = vec![false; sccs.len()];
    for c in 0..sccs.len() {
        reaches_recurrent[c] = sccs[c].iter().any(|v| {
            g.neighbors(*v).any(|w| {
                let d = class_of[w.index()];
                d != c && (recurrent[d] || reaches_recurrent[d])
            })
        });
    }
    let pick = (0..sccs.len())
        .filter(|&c| recurrent[c] && !reaches_recurrent[c])
        .filter(|&c| sccs[c].iter().any(|v| reachable.contains_key(&ext.domains[v.index()].id)))
        .max_by_key(|&c| (sccs[c].len(), std::cmp::Reverse(c)))
        .ok_or(Error::TruncationTooSmall(ext.l_max))?;
    let keep: std::collections::HashSet<usize> = sccs[pick].iter().map(|v| ext.domains[v.index()].id).collect();
    let domains = ext.domains.iter().copied().filter(|d| keep.contains(&d.id)).collect();
    let edges = ext.edges.iter().copied().filter(|e| keep.contains(&e.src) && keep.contains(&e.dst)).collect();
    let mut out = HofbauerExtension::from_parts(domains, edges, ext.base_id, ext.l_max, ext.cuts.clone());
    out.transitive_only = true;
    Ok(out)
}

/// Sorted boundaries of the L-cylinders: ∪_{j<L} f^{-j}(cuts).
pub fn cylinder_boundaries(map: &IntervalMap, cuts: &CutSet, l: usize) -> Vec<f64> {
    let mut all: Vec<f64> = Vec::new();
    let mut layer = cuts.xs();
    for j in 0..l {
        all.extend_from_slice(&layer);
        if j + 1 == l {
            break;
        }
        let mut next = Vec::new();
        for &y in &layer {
            if let Ok(pre) = map.preimages(y) {
                next.extend(pre.into_iter().filter(|&x| x > 0.0 && x < 1.0));
            }
        }
        layer = next;
    }
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_TOL);
    all
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Window {
    pub domain: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Î′(L): every domain of level ≤ L minus its leftmost and rightmost L-cylinder.
pub fn trim(map: &IntervalMap, ext: &HofbauerExtension, l: usize) -> Result<Vec<Window>> {
    if l > ext.l_max {
        return Err(Error::Config(format!("trim level {l} exceeds L_max = {}", ext.l_max)));
    }
    let bounds = cylinder_boundaries(map, &ext.cuts, l.max(1));
    let mut out = Vec::new();
    for d in &ext.domains {
        if d.level > l {
            continue;
        }
        let s = bounds.partition_point(|&x| x <= d.lo + DEDUP_TOL);
        let e = bounds.partition_point(|&x| x < d.hi - DEDUP_TOL);
        let inner = &bounds[s..e];
        if inner.len() >= 3 || (inner.len() == 2 && inner[1] - inner[0] > DEDUP_TOL) {
            out.push(Window { domain: d.id, lo: inner[0], hi: *inner.last().unwrap() });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnRule {
    /// A piece returns when its image covers the window of the domain it
    /// lands in; the covering part returns onto the full window.
    FullWindow,
    /// Literal first entry into any window; returned images may be partial.
    FirstEntry,
}

#[derive(Clone, Debug, Serialize)]
pub struct Cylinder {
    pub lo: f64,
    pub hi: f64,
    pub host: usize,
    pub return_time: usize,
    pub image_id: usize,
    pub image_lo: f64,
    pub image_hi: f64,
    #[serde(skip)]
    pub itinerary: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InducedScheme {
    pub windows: Vec<Window>,
    pub cylinders: Vec<Cylinder>,
    /// tail[n] = m(R > n) for n = 0..=T_max, Lebesgue on the windows.
    pub tail: Vec<f64>,
    pub uncovered_mass: f64,
    pub total_mass: f64,
    pub t_max: usize,
    pub rule: ReturnRule,
    /// Pieces whose image met a window without covering it.
    pub partial_landings: usize,
}

#[derive(Clone, Debug)]
struct Piece {
    host: usize,
    img_lo: f64,
    img_hi: f64,
    domain: usize,
    itinerary: Vec<usize>,
}

fn pull_back(map: &IntervalMap, itinerary: &[usize], y: f64) -> f64 {
    itinerary.iter().rev().fold(y, |v, &b| map.branch(b).invert(v))
}

fn origin(map: &IntervalMap, itinerary: &[usize], a: f64, b: f64) -> (f64, f64) {
    let (p, q) = (pull_back(map, itinerary, a), pull_back(map, itinerary, b));
    (p.min(q), p.max(q))
}

/// Symbolic first-return construction over the extension graph.
pub fn first_return_scheme(
    map: &IntervalMap,
    ext: &HofbauerExtension,
    windows: &[Window],
    t_max: usize,
    rule: ReturnRule,
) -> Result<InducedScheme> {
    if windows.is_empty() || t_max < 1 {
        return Err(Error::Config("first-return scheme needs windows and T_max ≥ 1".into()));
    }
    let win: HashMap<usize, (usize, Window)> = windows.iter().enumerate().map(|(k, w)| (w.domain, (k, *w))).collect();
    let mut active: Vec<Piece> = windows
        .iter()
        .enumerate()
        .map(|(k, w)| Piece { host: k, img_lo: w.lo, img_hi: w.hi, domain: w.domain, itinerary: Vec::new() })
        .collect();
    let total_mass: f64 = windows.iter().map(|w| w.hi - w.lo).sum();
    let mut cylinders = Vec::new();
    let mut uncovered = 0.0;
    let mut partial = 0usize;
    for n in 1..=t_max {
        let mut next = Vec::new();
        for p in active {
            let mut bounds = vec![p.img_lo];
            bounds.extend(ext.cuts.inside(p.img_lo, p.img_hi));
            bounds.push(p.img_hi);
            for s in bounds.windows(2) {
                let (a, b) = (s[0], s[1]);
                let mid = 0.5 * (a + b);
                let Some(edge) = ext.edge_at(p.domain, mid) else {
                    let (x, y) = origin(map, &p.itinerary, a, b);
                    uncovered += y - x;
                    continue;
                };
                let br = map.branch(edge.branch);
                let (fa, fb) = (br.eval(a).clamp(0.0, 1.0), br.eval(b).clamp(0.0, 1.0));
                let (u, v) = (fa.min(fb), fa.max(fb));
                let mut itin = p.itinerary.clone();
                itin.push(edge.branch);
                let dst = edge.dst;
                let mut rest: Vec<(f64, f64)> = Vec::new();
                match win.get(&dst) {
                    Some(&(_, w)) if w.hi > u && w.lo < v => {
                        let covers = u <= w.lo + DEDUP_TOL && v >= w.hi - DEDUP_TOL;
                        if covers || rule == ReturnRule::FirstEntry {
                            let (ilo, ihi) = (w.lo.max(u), w.hi.min(v));
                            let (ilo, ihi) = if covers { (w.lo, w.hi) } else { (ilo, ihi) };
                            if !covers {
                                partial += 1;
                            }
                            let (x, y) = origin(map, &itin, ilo, ihi);
                            cylinders.push(Cylinder {
                                lo: x,
                                hi: y,
                                host: windows[p.host].domain,
                                return_time: n,
                                image_id: dst,
                                image_lo: ilo,
                                image_hi: ihi,
                                itinerary: itin.clone(),
                            });
                            if ilo - u > DEDUP_TOL {
                                rest.push((u, ilo));
                            }
                            if v - ihi > DEDUP_TOL {
                                rest.push((ihi, v));
                            }
                        } else {
                            partial += 1;
                            rest.push((u, v));
                        }
                    }
                    _ => rest.push((u, v)),
                }
                for (c, d) in rest {
                    next.push(Piece { host: p.host, img_lo: c, img_hi: d, domain: dst, itinerary: itin.clone() });
                }
            }
        }
        if next.len() > DEFAULT_PIECE_CAP {
            return Err(Error::Explosion { cap: DEFAULT_PIECE_CAP, level: n });
        }
        active = next;
    }
    for p in &active {
        let (x, y) = origin(map, &p.itinerary, p.img_lo, p.img_hi);
        uncovered += y - x;
    }
    let mut tail = vec![0.0; t_max + 1];
    for (n, t) in tail.iter_mut().enumerate() {
        *t = cylinders.iter().filter(|c| c.return_time > n).map(|c| c.hi - c.lo).sum::<f64>() + uncovered;
    }
    let scheme = InducedScheme {
        windows: windows.to_vec(),
        cylinders,
        tail,
        uncovered_mass: uncovered,
        total_mass,
        t_max,
        rule,
        partial_landings: partial,
    };
    if rule == ReturnRule::FullWindow {
        if let Some(v) = markov_violations(map, ext, &scheme).into_iter().next() {
            return Err(v);
        }
    }
    Ok(scheme)
}

/// Independent forward check of every returned cylinder: iterating its
/// endpoints R times must reproduce the full window of the image domain,
/// and no intermediate image may contain a cut point in its interior.
pub fn markov_violations(map: &IntervalMap, ext: &HofbauerExtension, scheme: &InducedScheme) -> Vec<Error> {
    let win: HashMap<usize, Window> = scheme.windows.iter().map(|w| (w.domain, *w)).collect();
    let cuts = ext.cuts.xs();
    scheme
        .cylinders
        .par_iter()
        .filter_map(|c| {
            let fail = |detail: String| Error::Markov { lo: c.lo, hi: c.hi, return_time: c.return_time, detail };
            let Some(w) = win.get(&c.image_id) else {
                return Some(fail(format!("image domain {} has no window", c.image_id)));
            };
            let (mut a, mut b) = (c.lo, c.hi);
            let mut growth = 1.0f64;
            for &br in &c.itinerary {
                let (lo, hi) = (a.min(b), a.max(b));
                let tol = 1e-9 * growth.max(1.0);
                if let Some(x) = cuts.iter().find(|&&x| x > lo + tol && x < hi - tol) {
                    return Some(fail(format!("cut {x} inside an intermediate image [{lo}, {hi}]")));
                }
                let mid = 0.5 * (lo + hi);
                growth *= map.abs_derivative(mid).max(1e-300);
                let f = map.branch(br);
                a = f.eval(a).clamp(0.0, 1.0);
                b = f.eval(b).clamp(0.0, 1.0);
            }
            let (lo, hi) = (a.min(b), a.max(b));
            let tol = 1e-9 + 1e-13 * growth;
            if (lo - w.lo).abs() > tol || (hi - w.hi).abs() > tol {
                return Some(fail(format!("image [{lo}, {hi}] is not the window [{}, {}]", w.lo, w.hi)));
            }
            None
        })
        .collect()
}

impl InducedScheme {
    pub fn covered_mass(&self) -> f64 {
        self.cylinders.iter().map(|c| c.hi - c.lo).sum()
    }

    /// Fraction of cylinders whose image is a full window.
    pub fn markov_fraction(&self) -> f64 {
        if self.cylinders.is_empty() {
            return 1.0;
        }
        let win: HashMap<usize, Window> = self.windows.iter().map(|w| (w.domain, *w)).collect();
        let ok = self
            .cylinders
            .iter()
            .filter(|c| {
                win.get(&c.image_id)
                    .is_some_and(|w| (c.image_lo - w.lo).abs() <= 1e-10 && (c.image_hi - w.hi).abs() <= 1e-10)
            })
            .count();
        ok as f64 / self.cylinders.len() as f64
    }

    /// Log-linear fit of m(R > n) over n in [n0, n1] where the tail is positive.
    pub fn tail_fit(&self, n0: usize, n1: usize) -> Option<LinearFit> {
        let pts: Vec<usize> = (n0..=n1.min(self.t_max)).filter(|&n| self.tail[n] > 0.0).collect();
        let x: Vec<f64> = pts.iter().map(|&n| n as f64).collect();
        let y: Vec<f64> = pts.iter().map(|&n| self.tail[n].ln()).collect();
        linear_fit(&x, &y)
    }

    /// Σ n·m(R = n) over returned cylinders plus (T_max + 1)·uncovered, per unit mass.
    pub fn mean_return_time_lower(&self) -> f64 {
        let s: f64 = self.cylinders.iter().map(|c| c.return_time as f64 * (c.hi - c.lo)).sum();
        (s + (self.t_max + 1) as f64 * self.uncovered_mass) / self.total_mass
    }

    /// Scheme export: `lo,hi,host,R,image_id`.
    pub fn csv(&self) -> String {
        let mut s = String::from("lo,hi,host,R,image_id\n");
        for c in &self.cylinders {
            s.push_str(&format!("{},{},{},{},{}\n", c.lo, c.hi, c.host, c.return_time, c.image_id));
        }
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SemiconjugacyReport {
    pub samples: usize,
    pub failures: usize,
}

/// One lifted step from random (x, D) pairs, projected, against f(x).
pub fn check_semiconjugacy(map: &IntervalMap, ext: &HofbauerExtension, n_samples: usize, seed: u64) -> SemiconjugacyReport {
    let expandable: Vec<&HofbauerDomain> = ext.domains.iter().filter(|d| ext.out_edges(d.id).next().is_some()).collect();
    let mut rng = block_rng(seed, 0);
    let mut failures = 0;
    if expandable.is_empty() {
        return SemiconjugacyReport { samples: 0, failures: 0 };
    }
    for _ in 0..n_samples {
        let d = expandable[rng.gen_range(0..expandable.len())];
        let x = d.lo + (d.hi - d.lo) * rng.gen::<f64>();
        let ok = match ext.edge_at(d.id, x) {
            Some(e) => {
                let y = map.branch(e.branch).eval(x).clamp(0.0, 1.0);
                let fx = map.eval_unchecked(x);
                let target = ext.domain(e.dst);
                (y - fx).abs() <= 1e-12 && target.is_some_and(|t| y >= t.lo - 1e-12 && y <= t.hi + 1e-12)
            }
            None => false,
        };
        if !ok {
            failures += 1;
        }
    }
    SemiconjugacyReport { samples: n_samples, failures }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub cylinders_sampled: usize,
    pub min_abs_derivative: f64,
    pub max_distortion: f64,
    pub margin: f64,
    pub expanding: bool,
}

/// min |DF| and max |DF(x)/DF(y)| over `samples` interior points per cylinder.
pub fn expansion_diagnostic(map: &IntervalMap, scheme: &InducedScheme, samples: usize, margin: f64) -> ExpansionReport {
    let samples = samples.max(2);
    let per: Vec<(f64, f64)> = scheme
        .cylinders
        .par_iter()
        .map(|c| {
            let mut ds = Vec::with_capacity(samples);
            for k in 0..samples {
                // Irrational offsets keep sample orbits off the kinks.
                let u = ((k as f64 + 0.5) / samples as f64 + 0.000_123_456_789 * std::f64::consts::SQRT_2).fract();
                let mut x = c.lo + (c.hi - c.lo) * u;
                let mut d = 1.0f64;
                for &b in &c.itinerary {
                    let br = map.branch(b);
                    d *= br.deriv(x).abs();
                    x = br.eval(x).clamp(0.0, 1.0);
                }
                ds.push(d);
            }
            let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ds.iter().copied().fold(0.0, f64::max);
            (lo, if lo > 0.0 { hi / lo } else { f64::INFINITY })
        })
        .collect();
    let min_d = per.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_dist = per.iter().map(|p| p.1).fold(1.0, f64::max);
    ExpansionReport {
        cylinders_sampled: per.len(),
        min_abs_derivative: min_d,
        max_distortion: max_dist,
        margin,
        expanding: min_d > 1.0 + margin,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KacReport {
    pub window_measure: f64,
    pub mean_return_time: f64,
    pub predicted: f64,
    pub uncovered_mass: f64,
}

/// Kac check against an invariant probability density `rho` on [0, 1]:
/// mean return time to Y should be 1/μ(Y). Uses the literal first-entry
/// scheme on a single-domain extension.
pub fn kac_check(scheme: &InducedScheme, mu_of_windows: f64) -> KacReport {
    KacReport {
        window_measure: mu_of_windows,
        mean_return_time: scheme.mean_return_time_lower(),
        predicted: 1.0 / mu_of_windows,
        uncovered_mass: scheme.uncovered_mass,
    }
}

/// True when no window meets π⁻¹((z − ε₀, z + ε₀)).
pub fn windows_avoid(windows: &[Window], lo: f64, hi: f64) -> bool {
    windows.iter().all(|w| w.hi <= lo || w.lo >= hi)
}

#[derive(Clone, Debug, Serialize)]
pub struct SchemeComparison {
    pub cylinders_a: usize,
    pub cylinders_b: usize,
    pub matched: usize,
    pub matched_mass_a: f64,
}

/// Cylinders of `a` that reappear in `b` with the same host, return time
/// and image domain interval (within `tol`).
pub fn compare_schemes(a: &InducedScheme, b: &InducedScheme, tol: f64) -> SchemeComparison {
    let mut matched = 0;
    let mut mass = 0.0;
    for c in &a.cylinders {
        let hit = b.cylinders.iter().any(|d| {
            d.return_time == c.return_time
                && (d.lo - c.lo).abs() <= tol
                && (d.hi - c.hi).abs() <= tol
                && (d.image_lo - c.image_lo).abs() <= tol
                && (d.image_hi - c.image_hi).abs() <= tol
        });
        if hit {
            matched += 1;
            mass += c.hi - c.lo;
        }
    }
    SchemeComparison { cylinders_a: a.cylinders.len(), cylinders_b: b.cylinders.len(), matched, matched_mass_a: mass }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutset_examples() {
        let f = IntervalMap::logistic4();
        let c = make_cutset(&f, 0.75, None, None, 1).unwrap();
        let xs = c.xs();
        assert_eq!(xs.len(), 3);
        assert!((xs[0] - 0.25).abs() < 1e-15 && xs[1] == 0.5 && (xs[2] - 0.75).abs() < 1e-15);
        let t = IntervalMap::tent2();
        let c = make_cutset(&t, 2.0 / 3.0, None, None, 1).unwrap();
        assert_eq!(c.xs().len(), 3);
        assert!(c.points().iter().filter(|p| p.tag == CutTag::PreimageOfZ).count() == 2);
        // z = 1 is the critical value of the tent; its only preimage is 1/2.
        assert_eq!(make_cutset(&t, 1.0, None, None, 1).unwrap().xs(), vec![0.5]);
        assert!(matches!(make_cutset(&t, 0.05, Some(0.1), None, 1), Err(Error::Domain { .. })));
    }

    #[test]
    fn single_domain_extensions() {
        for m in [IntervalMap::tent2(), IntervalMap::logistic4()] {
            let e = build_extension(&m, &CutSet::critical(&m), 5, DEFAULT_DOMAIN_CAP).unwrap();
            assert_eq!(e.domains().len(), 1);
            assert_eq!(e.edges().len(), 2);
            assert!(e.edges().iter().all(|x| x.src == 0 && x.dst == 0));
        }
    }

    #[test]
    fn logistic_level_one_domains() {
        let f = IntervalMap::logistic4();
        let c = CutSet::from_points(&[0.25, 0.5, 0.75]);
        let e = build_extension(&f, &c, 2, DEFAULT_DOMAIN_CAP).unwrap();
        let mut lvl1: Vec<(f64, f64)> = e.domains().iter().filter(|d| d.level == 1).map(|d| (d.lo, d.hi)).collect();
        lvl1.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(lvl1.len(), 2);
        assert!(lvl1[0].0 == 0.0 && (lvl1[0].1 - 0.75).abs() < 1e-15);
        assert!((lvl1[1].0 - 0.75).abs() < 1e-15 && lvl1[1].1 == 1.0);
    }

    #[test]
    fn trim_examples() {
        let t = IntervalMap::tent2();
        let e = build_extension(&t, &CutSet::critical(&t), 5, DEFAULT_DOMAIN_CAP).unwrap();
        let w = trim(&t, &e, 2).unwrap();
        assert_eq!(w, vec![Window { domain: 0, lo: 0.25, hi: 0.75 }]);
        assert!(trim(&t, &e, 1).unwrap().is_empty());
        let f = IntervalMap::logistic4();
        let e = build_extension(&f, &CutSet::from_points(&[0.25, 0.5, 0.75]), 3, DEFAULT_DOMAIN_CAP).unwrap();
        let w = trim(&f, &e, 1).unwrap();
        let base = w.iter().find(|w| w.domain == 0).unwrap();
        assert!((base.lo - 0.25).abs() < 1e-15 && (base.hi - 0.75).abs() < 1e-15);
    }

    #[test]
    fn injected_terminal_domain_is_dropped() {
        let t = IntervalMap::tent2();
        let e = build_extension(&t, &CutSet::critical(&t), 3, DEFAULT_DOMAIN_CAP).unwrap();
        let mut domains = e.domains().to_vec();
        let mut edges = e.edges().to_vec();
        domains.push(HofbauerDomain { id: 7, lo: 0.1, hi: 0.2, level: 1 });
        edges.push(HofbauerEdge { src: 0, dst: 7, witness_lo: 0.05, witness_hi: 0.1, branch: 0 });
        let fx = HofbauerExtension::from_parts(domains, edges, 0, 3, e.cuts().clone());
        let tc = transitive_component(&fx).unwrap();
        assert_eq!(tc.domains().len(), 1);
        assert!(tc.transitive_only);
    }

    fn tent_scheme(rule: ReturnRule) -> (IntervalMap, HofbauerExtension, InducedScheme) {
        let t = IntervalMap::tent2();
        let e = build_extension(&t, &CutSet::critical(&t), 5, DEFAULT_DOMAIN_CAP).unwrap();
        let y = trim(&t, &e, 2).unwrap();
        let s = first_return_scheme(&t, &e, &y, 20, rule).unwrap();
        (t, e, s)
    }

    #[test]
    fn tent_first_return_bookkeeping() {
        let (t, e, s) = tent_scheme(ReturnRule::FullWindow);
        assert!((s.covered_mass() + s.uncovered_mass - 0.5).abs() < 1e-10);
        assert_eq!(s.markov_fraction(), 1.0);
        assert!(markov_violations(&t, &e, &s).is_empty());
        assert!(s.cylinders.iter().all(|c| c.image_lo == 0.25 && c.image_hi == 0.75));
        let fit = s.tail_fit(5, 20).unwrap();
        assert!(fit.slope < 0.0 && fit.r2 > 0.95);
        let ex = expansion_diagnostic(&t, &s, 8, 0.01);
        assert!(ex.min_abs_derivative >= 2.0 && ex.max_distortion == 1.0);
    }

    #[test]
    fn literal_first_entry_is_not_markov_on_the_tent() {
        let (_, _, s) = tent_scheme(ReturnRule::FirstEntry);
        assert!(s.partial_landings > 0);
        assert!(s.markov_fraction() < 1.0);
        // Lebesgue is invariant and m(Y) = 1/2.
        let k = kac_check(&s, 0.5);
        assert!((k.mean_return_time - 2.0).abs() < 1e-4, "{k:?}");
    }

    #[test]
    fn semiconjugacy_and_fault_injection() {
        let f = IntervalMap::logistic4();
        let e = build_extension(&f, &make_cutset(&f, 0.75, None, None, 1).unwrap(), 4, DEFAULT_DOMAIN_CAP).unwrap();
        assert_eq!(check_semiconjugacy(&f, &e, 10_000, 1).failures, 0);
        assert!(e.max_witness_defect(&f) < 1e-10);
        let lv = e.recompute_levels();
        assert!(e.domains().iter().all(|d| lv[&d.id] == d.level));
        let n = e.domains().len();
        let mut edges = e.edges().to_vec();
        let k = edges.iter().position(|x| x.dst != x.src).unwrap();
        edges[k].dst = (edges[k].dst + 1) % n;
        let bad = HofbauerExtension::from_parts(e.domains().to_vec(), edges, 0, 4, e.cuts().clone());
        assert!(check_semiconjugacy(&f, &bad, 10_000, 1).failures > 0);
    }

    #[test]
    fn logistic_scheme_is_markov() {
        let f = IntervalMap::logistic4();
        let e = build_extension(&f, &make_cutset(&f, 0.75, None, None, 1).unwrap(), 6, DEFAULT_DOMAIN_CAP).unwrap();
        let tc = transitive_component(&e).unwrap();
        let y = trim(&f, &e, 2).unwrap();
        let s = first_return_scheme(&f, &e, &y, 12, ReturnRule::FullWindow).unwrap();
        assert!(!s.cylinders.is_empty());
        assert!((s.covered_mass() + s.uncovered_mass - s.total_mass).abs() < 1e-9);
        let ex = expansion_diagnostic(&f, &s, 8, 0.01);
        assert!(ex.max_distortion.is_finite());
        assert!(!tc.domains().is_empty());
    }
}
