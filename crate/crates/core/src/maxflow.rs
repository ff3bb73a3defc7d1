//! s–t minimum cut on capacitated graphs (Dinic's blocking-flow algorithm).
//!
//! Capacities are generic: integer types give exact flows, floats are used
//! by GrabCut.

use std::collections::VecDeque;
use std::fmt::Debug;

use num_traits::Num;

use crate::grid::BinaryMask;

pub trait Capacity: Copy + PartialOrd + Num + Debug {}
impl<T: Copy + PartialOrd + Num + Debug> Capacity for T {}

#[derive(Debug, Clone)]
struct Arc<C> {
    to: usize,
    residual: C,
}

/// Directed flow network with a distinguished source and sink.
///
/// Arcs are stored in pairs: arc `e` and its reverse `e ^ 1`.
#[derive(Debug, Clone)]
pub struct FlowGraph<C> {
    arcs: Vec<Arc<C>>,
    adjacency: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

impl<C: Capacity> FlowGraph<C> {
    /// `nodes` regular nodes; the terminals are allocated after them.
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adjacency: vec![Vec::new(); nodes + 2],
            source: nodes,
            sink: nodes + 1,
        }
    }

    pub fn nodes(&self) -> usize {
        self.adjacency.len() - 2
    }

    /// `to_source` is paid when `node` ends on the sink side, `to_sink` when
    /// it ends on the source side.
    pub fn add_tlinks(&mut self, node: usize, to_source: C, to_sink: C) {
        let (s, t) = (self.source, self.sink);
        if to_source > C::zero() {
            self.add_arc(s, node, to_source, C::zero());
        }
        if to_sink > C::zero() {
            self.add_arc(node, t, to_sink, C::zero());
        }
    }

    pub fn add_edge(&mut self, a: usize, b: usize, cap_ab: C, cap_ba: C) {
        if cap_ab > C::zero() || cap_ba > C::zero() {
            self.add_arc(a, b, cap_ab, cap_ba);
        }
    }

    fn add_arc(&mut self, a: usize, b: usize, cap_ab: C, cap_ba: C) {
        let e = self.arcs.len();
        self.arcs.push(Arc {
            to: b,
            residual: cap_ab,
        });
        self.arcs.push(Arc {
            to: a,
            residual: cap_ba,
        });
        self.adjacency[a].push(e);
        self.adjacency[b].push(e + 1);
    }

    /// Saturates the network and returns the total flow.
    pub fn max_flow(&mut self) -> C {
        let n = self.adjacency.len();
        let mut flow = C::zero();
        let mut level = vec![usize::MAX; n];
        let mut next = vec![0usize; n];
        while self.build_levels(&mut level) {
            next.iter_mut().for_each(|v| *v = 0);
            loop {
                let pushed = self.augment(&level, &mut next);
                if pushed == C::zero() {
                    break;
                }
                flow = flow + pushed;
            }
        }
        flow
    }

    fn build_levels(&self, level: &mut [usize]) -> bool {
        level.iter_mut().for_each(|v| *v = usize::MAX);
        level[self.source] = 0;
        let mut queue = VecDeque::from([self.source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adjacency[u] {
                let arc = &self.arcs[e];
                if arc.residual > C::zero() && level[arc.to] == usize::MAX {
                    level[arc.to] = level[u] + 1;
                    queue.push_back(arc.to);
                }
            }
        }
        level[self.sink] != usize::MAX
    }

    /// Finds one source→sink path in the level graph and pushes its bottleneck.
    fn augment(&mut self, level: &[usize], next: &mut [usize]) -> C {
        let mut path: Vec<usize> = Vec::new();
        let mut u = self.source;
        loop {
            if u == self.sink {
                let bottleneck = path
                    .iter()
                    .map(|&e| self.arcs[e].residual)
                    .fold(None, |m: Option<C>, r| match m {
                        Some(m) if m <= r => Some(m),
                        _ => Some(r),
                    })
                    .unwrap_or_else(C::zero);
                for &e in &path {
                    self.arcs[e].residual = self.arcs[e].residual - bottleneck;
                    self.arcs[e ^ 1].residual = self.arcs[e ^ 1].residual + bottleneck;
                }
                return bottleneck;
            }
            let mut advanced = false;
            while next[u] < self.adjacency[u].len() {
                let e = self.adjacency[u][next[u]];
                let arc = &self.arcs[e];
                if arc.residual > C::zero() && level[arc.to] == level[u] + 1 {
                    path.push(e);
                    u = arc.to;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                // dead end: retreat and skip the arc that led here
                match path.pop() {
                    Some(e) => {
                        u = self.arcs[e ^ 1].to;
                        next[u] += 1;
                    }
                    None => return C::zero(),
                }
            }
        }
    }

    /// Nodes reachable from the source in the residual graph. Only meaningful after `max_flow`.
    pub fn source_side(&self) -> Vec<bool> {
        let mut seen = vec![false; self.adjacency.len()];
        seen[self.source] = true;
        let mut queue = VecDeque::from([self.source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adjacency[u] {
                let arc = &self.arcs[e];
                if arc.residual > C::zero() && !seen[arc.to] {
                    seen[arc.to] = true;
                    queue.push_back(arc.to);
                }
            }
        }
        seen.truncate(self.nodes());
        seen
    }
}

/// Symmetric pairwise link between two pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NLink<C> {
    pub a: usize,
    pub b: usize,
    pub capacity: C,
}

/// Pixel grid with per-pixel terminal links and arbitrary symmetric n-links.
#[derive(Debug, Clone)]
pub struct GridGraph<C> {
    pub height: usize,
    pub width: usize,
    /// Cost paid when the pixel is labelled background (sink side).
    pub source_caps: Vec<C>,
    /// Cost paid when the pixel is labelled foreground (source side).
    pub sink_caps: Vec<C>,
    pub nlinks: Vec<NLink<C>>,
}

impl<C: Capacity> GridGraph<C> {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            source_caps: vec![C::zero(); height * width],
            sink_caps: vec![C::zero(); height * width],
            nlinks: Vec::new(),
        }
    }

    /// Capacity of the cut that puts exactly the `fg` pixels on the source side.
    pub fn cut_capacity(&self, fg: &[bool]) -> C {
        let mut total = C::zero();
        for (i, &f) in fg.iter().enumerate() {
            total = total
                + if f {
                    self.sink_caps[i]
                } else {
                    self.source_caps[i]
                };
        }
        for l in &self.nlinks {
            if fg[l.a] != fg[l.b] {
                total = total + l.capacity;
            }
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct MinCut<C> {
    /// Source side of the cut.
    pub foreground: BinaryMask,
    pub flow: C,
}

/// Minimum s–t cut of a pixel grid. Ties resolve to the smallest source set.
pub fn mincut_maxflow<C: Capacity>(grid: &GridGraph<C>) -> MinCut<C> {
    let n = grid.height * grid.width;
    let mut g = FlowGraph::new(n);
    for i in 0..n {
        g.add_tlinks(i, grid.source_caps[i], grid.sink_caps[i]);
    }
    for l in &grid.nlinks {
        g.add_edge(l.a, l.b, l.capacity, l.capacity);
    }
    let flow = g.max_flow();
    let side = g.source_side();
    MinCut {
        foreground: BinaryMask::from_vec(grid.height, grid.width, side).expect("extent"),
        flow,
    }
}
