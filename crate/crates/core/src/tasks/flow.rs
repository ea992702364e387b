use std::collections::{BTreeSet, VecDeque};

use num_traits::PrimInt;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetHeader, SetInstance, TaskKind};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::Tensor;

/// Width of the random projection of the capacity matrix.
pub const GRAPH_EMBEDDING_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub capacity: u32,
}

/// Directed graph with integer capacities and a sink every vertex can reach.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowGraph {
    pub vertices: usize,
    pub sink: usize,
    pub edges: Vec<Edge>,
}

impl FlowGraph {
    /// Dense capacity matrix, parallel edges summed.
    pub fn capacity_matrix<C: PrimInt>(&self, extra: usize) -> Vec<Vec<C>> {
        let size = self.vertices + extra;
        let mut cap = vec![vec![C::zero(); size]; size];
        for e in &self.edges {
            cap[e.from][e.to] = cap[e.from][e.to] + C::from(e.capacity).expect("capacity fits");
        }
        cap
    }
}

/// Random digraph: a random arborescence directed toward vertex 0 (so every
/// vertex reaches the sink) plus distinct extra arcs, capacities uniform on
/// `[1, cap_max]`.
pub fn gen_flowgraph(vertices: usize, edges: usize, cap_max: u32, seed: u64) -> Result<FlowGraph> {
    if vertices < 2 {
        return Err(Error::invalid("flow graph needs at least two vertices"));
    }
    if edges < vertices - 1 || edges > vertices * (vertices - 1) {
        return Err(Error::invalid(format!(
            "flow graph with {vertices} vertices needs between {} and {} edges, got {edges}",
            vertices - 1,
            vertices * (vertices - 1)
        )));
    }
    if cap_max == 0 {
        return Err(Error::invalid("capacity range must include a positive value"));
    }
    let mut rng = rng_for(seed, "flowgraph", 0);
    let mut order: Vec<usize> = (1..vertices).collect();
    order.shuffle(&mut rng);
    let mut present = BTreeSet::new();
    let mut out = Vec::with_capacity(edges);
    for (i, &v) in order.iter().enumerate() {
        let parent = match rng.random_range(0..=i) {
            0 => 0,
            j => order[j - 1],
        };
        present.insert((v, parent));
        out.push(Edge {
            from: v,
            to: parent,
            capacity: rng.random_range(1..=cap_max),
        });
    }
    let mut attempts = 0usize;
    while out.len() < edges {
        attempts += 1;
        if attempts > 1000 * edges {
            return Err(Error::invalid("could not place the requested number of distinct edges"));
        }
        let (u, v) = (rng.random_range(0..vertices), rng.random_range(0..vertices));
        if u == v || !present.insert((u, v)) {
            continue;
        }
        out.push(Edge {
            from: u,
            to: v,
            capacity: rng.random_range(1..=cap_max),
        });
    }
    Ok(FlowGraph {
        vertices,
        sink: 0,
        edges: out,
    })
}

/// Augmenting-path max flow with depth-first path search.
pub fn ford_fulkerson<C: PrimInt>(cap: &[Vec<C>], source: usize, sink: usize) -> C {
    let size = cap.len();
    let mut residual = cap.to_vec();
    let mut total = C::zero();
    loop {
        let mut parent = vec![usize::MAX; size];
        parent[source] = source;
        let mut stack = vec![source];
        while let Some(u) = stack.pop() {
            if u == sink {
                break;
            }
            for v in (0..size).rev() {
                if parent[v] == usize::MAX && residual[u][v] > C::zero() {
                    parent[v] = u;
                    stack.push(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            return total;
        }
        let mut bottleneck = C::max_value();
        let mut v = sink;
        while v != source {
            let u = parent[v];
            bottleneck = bottleneck.min(residual[u][v]);
            v = u;
        }
        let mut v = sink;
        while v != source {
            let u = parent[v];
            residual[u][v] = residual[u][v] - bottleneck;
            residual[v][u] = residual[v][u] + bottleneck;
            v = u;
        }
        total = total + bottleneck;
    }
}

/// Shortest-augmenting-path max flow.
pub fn edmonds_karp(cap: &[Vec<u64>], source: usize, sink: usize) -> u64 {
    let size = cap.len();
    let mut flow = vec![vec![0i64; size]; size];
    let residual = |flow: &Vec<Vec<i64>>, u: usize, v: usize| cap[u][v] as i64 - flow[u][v];
    let mut total = 0u64;
    loop {
        let mut parent = vec![None; size];
        parent[source] = Some(source);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..size {
                if parent[v].is_none() && residual(&flow, u, v) > 0 {
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        if parent[sink].is_none() {
            return total;
        }
        let mut push = i64::MAX;
        let mut v = sink;
        while v != source {
            let u = parent[v].unwrap();
            push = push.min(residual(&flow, u, v));
            v = u;
        }
        let mut v = sink;
        while v != source {
            let u = parent[v].unwrap();
            flow[u][v] += push;
            flow[v][u] -= push;
            v = u;
        }
        total += push as u64;
    }
}

/// Capacity matrix with a super-source at index `vertices` feeding every
/// vertex of `sources` with unbounded capacity.
fn with_super_source(g: &FlowGraph, sources: &[usize]) -> Result<Vec<Vec<u64>>> {
    let mut cap: Vec<Vec<u64>> = g.capacity_matrix(1);
    let unbounded = g.edges.iter().map(|e| u64::from(e.capacity)).sum::<u64>() + 1;
    for &h in sources {
        if h >= g.vertices {
            return Err(Error::invalid(format!("vertex {h} outside the graph")));
        }
        if h == g.sink {
            return Err(Error::invalid("source set contains the sink"));
        }
        cap[g.vertices][h] = unbounded;
    }
    Ok(cap)
}

/// Max flow from the vertex set `sources` to `g.sink`.
pub fn oracle_maxflow(g: &FlowGraph, sources: &[usize]) -> Result<u64> {
    let cap = with_super_source(g, sources)?;
    Ok(ford_fulkerson(&cap, g.vertices, g.sink))
}

/// The same quantity by Edmonds–Karp.
pub fn maxflow_edmonds_karp(g: &FlowGraph, sources: &[usize]) -> Result<u64> {
    let cap = with_super_source(g, sources)?;
    Ok(edmonds_karp(&cap, g.vertices, g.sink))
}

/// Seed-fixed Gaussian projection of the flattened capacity matrix to
/// [`GRAPH_EMBEDDING_DIM`] values, scaled by `1 / vertices`.
pub fn graph_embedding(g: &FlowGraph, seed: u64) -> Vec<f64> {
    let cap: Vec<Vec<u64>> = g.capacity_matrix(0);
    let flat: Vec<f64> = cap.iter().flatten().map(|&c| c as f64).collect();
    let mut rng = rng_for(seed, "graph-embedding", 0);
    let scale = 1.0 / g.vertices as f64;
    (0..GRAPH_EMBEDDING_DIM)
        .map(|_| {
            flat.iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * c
                })
                .sum::<f64>()
                * scale
        })
        .collect()
}

/// Element encoding: one-hot vertex id followed by the graph embedding.
pub fn encode_vertices(g: &FlowGraph, vertices: &[usize], embedding: &[f64]) -> Result<Tensor> {
    let d = g.vertices + embedding.len();
    let mut data = Vec::with_capacity(vertices.len() * d);
    for &v in vertices {
        let mut row = vec![0.0; g.vertices];
        row[v] = 1.0;
        data.extend(row);
        data.extend_from_slice(embedding);
    }
    Tensor::new(vec![vertices.len(), d], data)
}

/// Reads the vertex ids back out of encoded elements.
pub fn decode_vertices(g: &FlowGraph, set: &Tensor) -> Result<Vec<usize>> {
    (0..set.rows())
        .map(|i| {
            let hot = &set.row(i)[..g.vertices];
            match hot.iter().position(|&x| x == 1.0) {
                Some(v) if hot.iter().filter(|&&x| x != 0.0).count() == 1 => Ok(v),
                _ => Err(Error::Format(format!("element {i} is not a one-hot vertex encoding"))),
            }
        })
        .collect()
}

/// Sets of `subset_size` distinct non-sink vertices labelled by their max
/// flow to the sink.
pub fn gen_flow_dataset(g: &FlowGraph, subset_size: usize, count: usize, seed: u64) -> Result<Dataset> {
    if subset_size == 0 || subset_size >= g.vertices {
        return Err(Error::invalid(format!(
            "subset size must lie in [1, {}), got {subset_size}",
            g.vertices
        )));
    }
    let embedding = graph_embedding(g, seed);
    let candidates: Vec<usize> = (0..g.vertices).filter(|&v| v != g.sink).collect();
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_for(seed, "maxflow", i as u64);
        let h: Vec<usize> = candidates.choose_multiple(&mut rng, subset_size).copied().collect();
        let label = oracle_maxflow(g, &h)? as f64;
        instances.push(SetInstance {
            set: encode_vertices(g, &h, &embedding)?,
            label: Tensor::vector(vec![label]),
            digits: None,
        });
    }
    let d = g.vertices + GRAPH_EMBEDDING_DIM;
    let mut header = DatasetHeader::new(TaskKind::Maxflow, subset_size, d, 1, seed, count);
    header.graph = Some(g.clone());
    Ok(Dataset { header, instances })
}
