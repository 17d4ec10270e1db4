//! Network topology: nodes, directed data links, streams and E-AP geometry.
//!
//! External identifiers (config files, CSV columns) are 1-based. Internally
//! every node, link and stream is addressed by its 0-based position.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: usize,
    pub head: usize,
    pub tail: usize,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub id: usize,
    pub source: usize,
    pub sink: usize,
    /// Mean arrival rate in kbit/s.
    #[serde(default)]
    pub rate_kbps: f64,
}

/// Structured description of a topology, as found in the `topology` section
/// of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: usize,
    pub eap_antennas: usize,
    /// Distance from the E-AP to each node, in node-id order.
    pub eap_distances_m: Vec<f64>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub streams: Vec<StreamSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: usize,
    pub head: usize,
    pub tail: usize,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub id: usize,
    pub source: usize,
    pub sink: usize,
}

/// A validated topology. Node/link/stream indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    links: Vec<Link>,
    streams: Vec<Stream>,
    eap_antennas: usize,
    eap_distances: Vec<f64>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn stream_count(&self) -> usize {
        self.streams.len()
    }

    pub fn eap_antennas(&self) -> usize {
        self.eap_antennas
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn link(&self, l: usize) -> &Link {
        &self.links[l]
    }

    pub fn stream(&self, s: usize) -> &Stream {
        &self.streams[s]
    }

    pub fn eap_distances(&self) -> &[f64] {
        &self.eap_distances
    }

    /// Links whose tail is `n`.
    pub fn incoming(&self, n: usize) -> &[usize] {
        &self.incoming[n]
    }

    /// Links whose head is `n`.
    pub fn outgoing(&self, n: usize) -> &[usize] {
        &self.outgoing[n]
    }

    pub fn is_sink(&self, n: usize, s: usize) -> bool {
        self.streams[s].sink == n
    }

    /// Row-major index of queue `(n, s)` in flat `N × S` buffers.
    #[inline]
    pub fn queue_index(&self, n: usize, s: usize) -> usize {
        n * self.streams.len() + s
    }
}

/// Validates a topology description and computes the per-node link sets.
pub fn build_topology(spec: &TopologySpec) -> Result<Topology> {
    let n = spec.nodes;
    if n == 0 {
        return Err(Error::Topology("a topology needs at least one node".into()));
    }
    if spec.eap_antennas == 0 {
        return Err(Error::Topology("the E-AP needs at least one antenna".into()));
    }
    if spec.eap_distances_m.len() != n {
        return Err(Error::Topology(format!(
            "expected {n} E-AP distances, found {}",
            spec.eap_distances_m.len()
        )));
    }
    for (i, d) in spec.eap_distances_m.iter().enumerate() {
        if !(d.is_finite() && *d > 0.0) {
            return Err(Error::Topology(format!(
                "E-AP distance of node {} must be positive, got {d}",
                i + 1
            )));
        }
    }
    let check_node = |what: &str, id: usize| -> Result<usize> {
        if id == 0 || id > n {
            Err(Error::Topology(format!("{what} references unknown node {id}")))
        } else {
            Ok(id - 1)
        }
    };

    let mut seen = HashSet::new();
    let mut links = Vec::with_capacity(spec.links.len());
    for ls in &spec.links {
        if !seen.insert(ls.id) {
            return Err(Error::Topology(format!("duplicate link id {}", ls.id)));
        }
        let head = check_node(&format!("link {}", ls.id), ls.head)?;
        let tail = check_node(&format!("link {}", ls.id), ls.tail)?;
        if head == tail {
            return Err(Error::Topology(format!(
                "link {} is a self-loop on node {}",
                ls.id, ls.head
            )));
        }
        if !(ls.length_m.is_finite() && ls.length_m > 0.0) {
            return Err(Error::Topology(format!(
                "link {} must have a positive length, got {}",
                ls.id, ls.length_m
            )));
        }
        links.push(Link {
            id: ls.id,
            head,
            tail,
            length_m: ls.length_m,
        });
    }

    let mut seen = HashSet::new();
    let mut streams = Vec::with_capacity(spec.streams.len());
    for ss in &spec.streams {
        if !seen.insert(ss.id) {
            return Err(Error::Topology(format!("duplicate stream id {}", ss.id)));
        }
        let source = check_node(&format!("stream {}", ss.id), ss.source)?;
        let sink = check_node(&format!("stream {}", ss.id), ss.sink)?;
        if source == sink {
            return Err(Error::Topology(format!(
                "stream {} has identical source and sink",
                ss.id
            )));
        }
        streams.push(Stream {
            id: ss.id,
            source,
            sink,
        });
    }

    let mut incoming = vec![Vec::new(); n];
    let mut outgoing = vec![Vec::new(); n];
    for (l, link) in links.iter().enumerate() {
        outgoing[link.head].push(l);
        incoming[link.tail].push(l);
    }

    Ok(Topology {
        node_count: n,
        links,
        streams,
        eap_antennas: spec.eap_antennas,
        eap_distances: spec.eap_distances_m.clone(),
        incoming,
        outgoing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(id: usize, head: usize, tail: usize) -> LinkSpec {
        LinkSpec {
            id,
            head,
            tail,
            length_m: 4.0,
        }
    }

    fn line3() -> TopologySpec {
        TopologySpec {
            nodes: 3,
            eap_antennas: 4,
            eap_distances_m: vec![5.0; 3],
            links: vec![link(1, 1, 2), link(2, 2, 3)],
            streams: vec![StreamSpec {
                id: 1,
                source: 1,
                sink: 3,
                rate_kbps: 1.0,
            }],
        }
    }

    #[test]
    fn link_sets_follow_heads_and_tails() {
        let t = build_topology(&line3()).unwrap();
        assert_eq!(t.outgoing(0), &[0]);
        assert_eq!(t.incoming(1), &[0]);
        assert_eq!(t.outgoing(1), &[1]);
        assert_eq!(t.incoming(2), &[1]);
        assert!(t.outgoing(2).is_empty());
        assert!(t.is_sink(2, 0));
    }

    #[test]
    fn single_node_without_links_is_valid() {
        let spec = TopologySpec {
            nodes: 1,
            eap_antennas: 1,
            eap_distances_m: vec![1.0],
            links: vec![],
            streams: vec![],
        };
        let t = build_topology(&spec).unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.link_count(), 0);
        assert_eq!(t.stream_count(), 0);
    }

    #[test]
    fn rejects_self_loop() {
        let mut spec = line3();
        spec.links.push(link(3, 2, 2));
        let err = build_topology(&spec).unwrap_err();
        assert!(err.to_string().contains("self-loop"), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids_dangling_nodes_and_bad_lengths() {
        let mut spec = line3();
        spec.links.push(link(2, 1, 3));
        assert!(build_topology(&spec).unwrap_err().to_string().contains("duplicate"));

        let mut spec = line3();
        spec.links.push(link(7, 1, 4));
        assert!(build_topology(&spec).unwrap_err().to_string().contains("unknown node 4"));

        let mut spec = line3();
        spec.links[0].length_m = 0.0;
        assert!(build_topology(&spec).is_err());

        let mut spec = line3();
        spec.eap_distances_m[1] = -1.0;
        assert!(build_topology(&spec).is_err());

        let mut spec = line3();
        spec.streams[0].sink = 1;
        assert!(build_topology(&spec).is_err());
    }
}
