//! Roofline cost model and device topologies.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{OpNode, TensorEdge};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("topology has no devices")]
    Empty,
    #[error("device ids must be dense 0..{n}; got {id}")]
    BadDeviceId { id: usize, n: usize },
    #[error("device {id}: {field} must be finite and positive, got {value}")]
    BadDevice { id: usize, field: &'static str, value: f64 },
    #[error("link {src}->{dst}: {reason}")]
    BadLink { src: usize, dst: usize, reason: String },
    #[error("no link from device {src} to device {dst}")]
    MissingLink { src: usize, dst: usize },
    #[error("give either \"links\" or \"uniform_bandwidth\", not both")]
    AmbiguousLinks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: usize,
    /// FLOP/s.
    pub peak_flops: f64,
    /// Bytes/s.
    pub mem_bw: f64,
    /// Bytes.
    pub mem_capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub src: usize,
    pub dst: usize,
    /// Bytes/s.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpCost {
    pub flops: f64,
    /// Global-memory bytes read plus written.
    pub bytes_accessed: f64,
}

/// Roofline kernel time: the slower of the compute and memory bounds.
/// Launch overhead is not modelled.
pub fn kernel_time(cost: OpCost, device: &DeviceSpec) -> f64 {
    (cost.flops / device.peak_flops).max(cost.bytes_accessed / device.mem_bw)
}

pub fn transfer_time(bytes: f64, link: &LinkSpec) -> f64 {
    if link.src == link.dst {
        0.0
    } else {
        bytes / link.bandwidth
    }
}

/// Unfused cost: every input edge is read and the output is written once.
pub fn op_cost(node: &OpNode, in_edges: &[TensorEdge]) -> OpCost {
    OpCost {
        flops: node.flops,
        bytes_accessed: in_edges.iter().map(|e| e.bytes).sum::<f64>() + node.out_bytes,
    }
}

/// Cost of a fused kernel. Internal edges stay on chip and cost nothing.
/// External inputs are read per edge. Each member whose output is consumed
/// outside the group writes it once; so does every member with no consumer
/// at all, since its output is a graph result.
pub fn fused_cost(
    members: &[&OpNode],
    internal: &[TensorEdge],
    external_in: &[TensorEdge],
    external_out: &[TensorEdge],
) -> OpCost {
    let flops = members.iter().map(|n| n.flops).sum();
    let read: f64 = external_in.iter().map(|e| e.bytes).sum();
    let written: f64 = members
        .iter()
        .filter(|n| {
            let escapes = external_out.iter().any(|e| e.src == n.id);
            let consumed = escapes || internal.iter().any(|e| e.src == n.id);
            escapes || !consumed
        })
        .map(|n| n.out_bytes)
        .sum();
    OpCost { flops, bytes_accessed: read + written }
}

/// Devices plus a dense bandwidth matrix over ordered device pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTopology {
    devices: Vec<DeviceSpec>,
    bandwidth: Vec<Vec<f64>>,
}

impl DeviceTopology {
    pub fn new(mut devices: Vec<DeviceSpec>, links: &[LinkSpec]) -> Result<Self, TopologyError> {
        Self::check_devices(&mut devices)?;
        let n = devices.len();
        let mut bandwidth = vec![vec![f64::NAN; n]; n];
        for l in links {
            if l.src >= n || l.dst >= n {
                return Err(TopologyError::BadLink {
                    src: l.src,
                    dst: l.dst,
                    reason: format!("unknown device (topology has {n})"),
                });
            }
            if !(l.bandwidth.is_finite() && l.bandwidth > 0.0) {
                return Err(TopologyError::BadLink {
                    src: l.src,
                    dst: l.dst,
                    reason: format!("bandwidth must be positive, got {}", l.bandwidth),
                });
            }
            bandwidth[l.src][l.dst] = l.bandwidth;
        }
        for (src, row) in bandwidth.iter_mut().enumerate() {
            for (dst, bw) in row.iter_mut().enumerate() {
                if src == dst {
                    *bw = f64::INFINITY;
                } else if bw.is_nan() {
                    return Err(TopologyError::MissingLink { src, dst });
                }
            }
        }
        Ok(Self { devices, bandwidth })
    }

    pub fn uniform(devices: Vec<DeviceSpec>, bandwidth: f64) -> Result<Self, TopologyError> {
        let n = devices.len();
        let links: Vec<LinkSpec> = (0..n)
            .flat_map(|src| (0..n).filter(move |&dst| dst != src).map(move |dst| (src, dst)))
            .map(|(src, dst)| LinkSpec { src, dst, bandwidth })
            .collect();
        Self::new(devices, &links)
    }

    /// `count` identical devices joined by uniform links.
    pub fn homogeneous(
        count: usize,
        peak_flops: f64,
        mem_bw: f64,
        mem_capacity: f64,
        link_bandwidth: f64,
    ) -> Result<Self, TopologyError> {
        let devices = (0..count)
            .map(|id| DeviceSpec { id, peak_flops, mem_bw, mem_capacity })
            .collect();
        Self::uniform(devices, link_bandwidth)
    }

    fn check_devices(devices: &mut [DeviceSpec]) -> Result<(), TopologyError> {
        if devices.is_empty() {
            return Err(TopologyError::Empty);
        }
        devices.sort_by_key(|d| d.id);
        let n = devices.len();
        for (i, d) in devices.iter().enumerate() {
            if d.id != i {
                return Err(TopologyError::BadDeviceId { id: d.id, n });
            }
            for (field, value) in
                [("peak_flops", d.peak_flops), ("mem_bw", d.mem_bw), ("mem_capacity", d.mem_capacity)]
            {
                if !(value.is_finite() && value > 0.0) {
                    return Err(TopologyError::BadDevice { id: d.id, field, value });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    pub fn device(&self, id: usize) -> &DeviceSpec {
        &self.devices[id]
    }

    pub fn link(&self, src: usize, dst: usize) -> LinkSpec {
        LinkSpec { src, dst, bandwidth: self.bandwidth[src][dst] }
    }

    pub fn transfer_time(&self, bytes: f64, src: usize, dst: usize) -> f64 {
        transfer_time(bytes, &self.link(src, dst))
    }

    pub fn to_file(&self) -> TopologyFile {
        let n = self.len();
        let first = if n > 1 { self.bandwidth[0][1] } else { 1.0 };
        let uniform = (0..n).all(|s| (0..n).all(|d| s == d || self.bandwidth[s][d] == first));
        let (links, uniform_bandwidth) = if uniform {
            (None, Some(first))
        } else {
            let links = (0..n)
                .flat_map(|s| (0..n).filter(move |&d| d != s).map(move |d| (s, d)))
                .map(|(s, d)| self.link(s, d))
                .collect();
            (Some(links), None)
        };
        TopologyFile { devices: self.devices.clone(), links, uniform_bandwidth }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("topology serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let file: TopologyFile =
            serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        file.into_topology()
    }
}

pub fn load_topology(path: impl AsRef<Path>) -> Result<DeviceTopology, TopologyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| TopologyError::Io { path: path.display().to_string(), source })?;
    DeviceTopology::from_json(&text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub devices: Vec<DeviceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_bandwidth: Option<f64>,
}

impl TopologyFile {
    pub fn into_topology(self) -> Result<DeviceTopology, TopologyError> {
        match (self.links, self.uniform_bandwidth) {
            (Some(_), Some(_)) => Err(TopologyError::AmbiguousLinks),
            (Some(links), None) => DeviceTopology::new(self.devices, &links),
            (None, Some(bw)) => DeviceTopology::uniform(self.devices, bw),
            (None, None) if self.devices.len() == 1 => DeviceTopology::new(self.devices, &[]),
            (None, None) => Err(TopologyError::MissingLink { src: 0, dst: 1 }),
        }
    }
}
