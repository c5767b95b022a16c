use crate::edgecache::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    DataCenter,
    Gateway,
    Edge,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub bandwidth_bps: f64,
    pub propagation_delay_s: f64,
}

/// Seconds to move `payload_bytes` across one link.
pub fn transmission_delay(payload_bytes: u64, link: &Link) -> f64 {
    8.0 * payload_bytes as f64 / link.bandwidth_bps + link.propagation_delay_s
}

/// Direct links between edge nodes, in addition to each edge's link to the
/// gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLinks {
    None,
    Ring,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub edges: usize,
    pub devices_per_edge: usize,
    pub edge_links: EdgeLinks,
    pub bandwidth_bps: f64,
    pub propagation_delay_s: f64,
    pub cache_capacity: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            edges: 4,
            devices_per_edge: 2,
            edge_links: EdgeLinks::Ring,
            bandwidth_bps: 1e9,
            propagation_delay_s: 0.0005,
            cache_capacity: 2000,
        }
    }
}

/// Data center, gateway, edge nodes and end devices. Node ids are assigned
/// in that order: the data center is 0, the gateway 1, edges follow, then
/// devices grouped by the edge they attach to.
#[derive(Debug, Clone)]
pub struct Topology {
    kinds: Vec<NodeKind>,
    names: Vec<String>,
    links: Vec<Link>,
    // per node: (neighbour, link index), sorted by neighbour id
    adjacency: Vec<Vec<(NodeId, usize)>>,
    attachment: Vec<Option<NodeId>>,
    // routes[src][dst] = link indices along the chosen shortest path
    routes: Vec<Vec<Vec<usize>>>,
    edges: Vec<NodeId>,
    devices: Vec<NodeId>,
}

impl Topology {
    pub const DATA_CENTER: NodeId = 0;
    pub const GATEWAY: NodeId = 1;

    pub fn build(cfg: &TopologyConfig) -> Self {
        let e = cfg.edges;
        let d = cfg.edges * cfg.devices_per_edge;
        let mut kinds = vec![NodeKind::DataCenter, NodeKind::Gateway];
        let mut names = vec!["dc".to_string(), "gw".to_string()];
        let edges: Vec<NodeId> = (0..e).map(|i| (2 + i) as NodeId).collect();
        let devices: Vec<NodeId> = (0..d).map(|i| (2 + e + i) as NodeId).collect();
        for i in 0..e {
            kinds.push(NodeKind::Edge);
            names.push(format!("edge{i}"));
        }
        for i in 0..d {
            kinds.push(NodeKind::Device);
            names.push(format!("dev{i}"));
        }
        let mut pairs = vec![(Self::DATA_CENTER, Self::GATEWAY)];
        pairs.extend(edges.iter().map(|&x| (Self::GATEWAY, x)));
        match cfg.edge_links {
            EdgeLinks::None => {}
            EdgeLinks::Ring if e == 2 => pairs.push((edges[0], edges[1])),
            EdgeLinks::Ring if e > 2 => {
                pairs.extend((0..e).map(|i| (edges[i], edges[(i + 1) % e])));
            }
            EdgeLinks::Ring => {}
            EdgeLinks::Full => {
                for i in 0..e {
                    for j in i + 1..e {
                        pairs.push((edges[i], edges[j]));
                    }
                }
            }
        }
        let mut attachment = vec![None; kinds.len()];
        for (i, &dev) in devices.iter().enumerate() {
            let edge = edges[i / cfg.devices_per_edge.max(1)];
            attachment[dev as usize] = Some(edge);
            pairs.push((edge, dev));
        }
        let links: Vec<Link> = pairs
            .iter()
            .map(|&(a, b)| Link {
                a,
                b,
                bandwidth_bps: cfg.bandwidth_bps,
                propagation_delay_s: cfg.propagation_delay_s,
            })
            .collect();
        let mut adjacency = vec![Vec::new(); kinds.len()];
        for (i, l) in links.iter().enumerate() {
            adjacency[l.a as usize].push((l.b, i));
            adjacency[l.b as usize].push((l.a, i));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let mut topo = Self {
            kinds,
            names,
            links,
            adjacency,
            attachment,
            routes: Vec::new(),
            edges,
            devices,
        };
        topo.routes = (0..topo.len() as NodeId)
            .map(|s| topo.bfs_routes(s))
            .collect();
        topo
    }

    /// Shortest paths from `src`; among equal-length paths the one whose
    /// predecessors have the lowest ids wins.
    fn bfs_routes(&self, src: NodeId) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut parent: Vec<Option<(NodeId, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[src as usize] = true;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &(v, link) in &self.adjacency[u as usize] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    parent[v as usize] = Some((u, link));
                    queue.push_back(v);
                }
            }
        }
        (0..n)
            .map(|dst| {
                let mut path = Vec::new();
                let mut cur = dst as NodeId;
                while let Some((p, link)) = parent[cur as usize] {
                    path.push(link);
                    cur = p;
                }
                path.reverse();
                path
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.kinds[id as usize]
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id as usize]
    }

    pub fn edges(&self) -> &[NodeId] {
        &self.edges
    }

    pub fn devices(&self) -> &[NodeId] {
        &self.devices
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// The edge node a device attaches to.
    pub fn attachment(&self, device: NodeId) -> Option<NodeId> {
        self.attachment[device as usize]
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[id as usize].iter().map(|&(v, _)| v)
    }

    pub fn route(&self, src: NodeId, dst: NodeId) -> &[usize] {
        &self.routes[src as usize][dst as usize]
    }

    pub fn hops(&self, src: NodeId, dst: NodeId) -> usize {
        self.route(src, dst).len()
    }

    /// Sum of per-hop delays along the route.
    pub fn path_delay(&self, src: NodeId, dst: NodeId, payload_bytes: u64) -> f64 {
        self.route(src, dst)
            .iter()
            .map(|&l| transmission_delay(payload_bytes, &self.links[l]))
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        (1..self.len()).all(|v| !self.routes[0][v].is_empty())
    }

    /// Other edge nodes within `range` hops of `edge`, in id order.
    pub fn edges_within(&self, edge: NodeId, range: u32) -> Vec<NodeId> {
        self.edges
            .iter()
            .copied()
            .filter(|&o| o != edge && self.hops(edge, o) <= range as usize)
            .collect()
    }

    /// Largest hop distance between two edge nodes.
    pub fn edge_diameter(&self) -> u32 {
        let mut d = 0;
        for &a in &self.edges {
            for &b in &self.edges {
                d = d.max(self.hops(a, b));
            }
        }
        d as u32
    }
}
