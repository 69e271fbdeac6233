//! Heterogeneous system model: computing devices joined by network links.

use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;

/// A computing device with its throughput and power envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub kind: String,
    /// Abstract throughput units; the modeler picks the unit and keeps it
    /// consistent across one system.
    pub performance: f64,
    pub ncores: u32,
    #[serde(rename = "p_idle_w")]
    pub p_idle: f64,
    #[serde(rename = "p_peak_w")]
    pub p_peak: f64,
}

/// Bidirectional link between two devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLink {
    pub id: String,
    #[serde(rename = "a")]
    pub endpoint_a: String,
    #[serde(rename = "b")]
    pub endpoint_b: String,
    #[serde(rename = "t_startup_s")]
    pub t_startup: f64,
    #[serde(rename = "bandwidth_bps")]
    pub bandwidth: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDocument {
    devices: Vec<Device>,
    #[serde(default)]
    links: Vec<NetworkLink>,
}

/// The graph `S(D, L)`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    devices: Vec<Device>,
    links: Vec<NetworkLink>,
    device_index: BTreeMap<String, usize>,
    /// Per device: (neighbor device index, link index).
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl SystemModel {
    pub fn new(devices: Vec<Device>, links: Vec<NetworkLink>) -> Result<Self, ModelError> {
        let mut device_index = BTreeMap::new();
        for (i, d) in devices.iter().enumerate() {
            let at = |what: &str| format!("device '{}': {what}", d.id);
            if d.id.is_empty() {
                return Err(ModelError::invalid(format!("devices[{i}].id"), "empty id"));
            }
            if device_index.insert(d.id.clone(), i).is_some() {
                return Err(ModelError::invalid(at("id"), "duplicate device id"));
            }
            if !(d.performance.is_finite() && d.performance > 0.0) {
                return Err(ModelError::invalid(at("performance"), "must be a finite value > 0"));
            }
            if d.ncores == 0 {
                return Err(ModelError::invalid(at("ncores"), "must be >= 1"));
            }
            if !(d.p_idle.is_finite() && d.p_idle >= 0.0) {
                return Err(ModelError::invalid(at("p_idle_w"), "must be a finite value >= 0"));
            }
            if !(d.p_peak.is_finite() && d.p_peak >= d.p_idle) {
                return Err(ModelError::invalid(at("p_peak_w"), "must be finite and >= p_idle_w"));
            }
        }

        let mut adjacency = vec![Vec::new(); devices.len()];
        let mut link_ids = HashMap::new();
        for (li, l) in links.iter().enumerate() {
            let at = |what: &str| format!("link '{}': {what}", l.id);
            if link_ids.insert(l.id.as_str(), li).is_some() {
                return Err(ModelError::invalid(at("id"), "duplicate link id"));
            }
            if !(l.t_startup.is_finite() && l.t_startup >= 0.0) {
                return Err(ModelError::invalid(at("t_startup_s"), "must be a finite value >= 0"));
            }
            if !(l.bandwidth.is_finite() && l.bandwidth > 0.0) {
                return Err(ModelError::invalid(at("bandwidth_bps"), "must be a finite value > 0"));
            }
            let a = *device_index
                .get(&l.endpoint_a)
                .ok_or_else(|| ModelError::invalid(at("a"), format!("unknown device '{}'", l.endpoint_a)))?;
            let b = *device_index
                .get(&l.endpoint_b)
                .ok_or_else(|| ModelError::invalid(at("b"), format!("unknown device '{}'", l.endpoint_b)))?;
            if a == b {
                return Err(ModelError::invalid(at("b"), "endpoints must be distinct devices"));
            }
            adjacency[a].push((b, li));
            adjacency[b].push((a, li));
        }

        Ok(SystemModel { devices, links, device_index, adjacency })
    }

    pub fn from_json(document: &str) -> Result<Self, ModelError> {
        let doc: SystemDocument = serde_json::from_str(document)?;
        Self::new(doc.devices, doc.links)
    }

    pub fn to_json(&self) -> String {
        let doc = SystemDocument { devices: self.devices.clone(), links: self.links.clone() };
        serde_json::to_string_pretty(&doc).expect("system document serializes")
    }

    /// Devices in document order.
    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn links(&self) -> &[NetworkLink] {
        &self.links
    }

    pub fn device(&self, id: &str) -> Option<&Device> {
        self.device_index.get(id).map(|&i| &self.devices[i])
    }

    pub fn device_position(&self, id: &str) -> Option<usize> {
        self.device_index.get(id).copied()
    }

    /// Device ids in lexicographic order, the canonical order used by the
    /// mappers and for instance numbering.
    pub fn device_ids(&self) -> impl Iterator<Item = &str> {
        self.device_index.keys().map(String::as_str)
    }

    /// Minimal-hop route from `a` to `b` as link indices.
    ///
    /// Ties are broken by the smallest total startup time, then by the
    /// lexicographic order of the link id sequence. A device routes to itself
    /// over the empty path.
    pub fn route_indices(&self, a: usize, b: usize) -> Option<Vec<usize>> {
        if a == b {
            return Some(Vec::new());
        }

        #[derive(PartialEq)]
        struct Label {
            hops: usize,
            startup: f64,
            path: Vec<usize>,
            node: usize,
        }
        impl Label {
            fn key_cmp(&self, other: &Self, links: &[NetworkLink]) -> std::cmp::Ordering {
                self.hops
                    .cmp(&other.hops)
                    .then(self.startup.total_cmp(&other.startup))
                    .then_with(|| {
                        let lhs = self.path.iter().map(|&i| links[i].id.as_str());
                        let rhs = other.path.iter().map(|&i| links[i].id.as_str());
                        lhs.cmp(rhs)
                    })
            }
        }
        struct Entry<'l>(Label, &'l [NetworkLink]);
        impl PartialEq for Entry<'_> {
            fn eq(&self, other: &Self) -> bool {
                self.cmp(other) == std::cmp::Ordering::Equal
            }
        }
        impl Eq for Entry<'_> {}
        impl PartialOrd for Entry<'_> {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry<'_> {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                // min-heap
                other.0.key_cmp(&self.0, self.1).then(other.0.node.cmp(&self.0.node))
            }
        }

        let mut settled = vec![false; self.devices.len()];
        let mut heap = BinaryHeap::new();
        heap.push(Entry(Label { hops: 0, startup: 0.0, path: Vec::new(), node: a }, &self.links));
        while let Some(Entry(label, _)) = heap.pop() {
            if settled[label.node] {
                continue;
            }
            settled[label.node] = true;
            if label.node == b {
                return Some(label.path);
            }
            for &(next, li) in &self.adjacency[label.node] {
                if settled[next] {
                    continue;
                }
                let mut path = label.path.clone();
                path.push(li);
                heap.push(Entry(
                    Label {
                        hops: label.hops + 1,
                        startup: label.startup + self.links[li].t_startup,
                        path,
                        node: next,
                    },
                    &self.links,
                ));
            }
        }
        None
    }

    /// Ordered links of the route between two devices, by id.
    pub fn shortest_route(&self, a: &str, b: &str) -> Result<Vec<&NetworkLink>, ModelError> {
        let ia = self.device_position(a).ok_or_else(|| ModelError::UnknownDevice(a.to_string()))?;
        let ib = self.device_position(b).ok_or_else(|| ModelError::UnknownDevice(b.to_string()))?;
        let path = self
            .route_indices(ia, ib)
            .ok_or_else(|| ModelError::Unroutable { from: a.to_string(), to: b.to_string() })?;
        Ok(path.into_iter().map(|i| &self.links[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(id: &str) -> Device {
        Device { id: id.into(), kind: "cpu".into(), performance: 1e9, ncores: 4, p_idle: 20.0, p_peak: 60.0 }
    }

    fn link(id: &str, a: &str, b: &str) -> NetworkLink {
        NetworkLink { id: id.into(), endpoint_a: a.into(), endpoint_b: b.into(), t_startup: 0.0, bandwidth: 1e9 }
    }

    #[test]
    fn two_devices_one_link() {
        let doc = r#"{"devices":[
            {"id":"cpu0","kind":"cpu","performance":1e9,"ncores":4,"p_idle_w":20,"p_peak_w":60},
            {"id":"gpu0","kind":"gpu","performance":1e10,"ncores":1,"p_idle_w":70,"p_peak_w":140}],
            "links":[{"id":"l0","a":"cpu0","b":"gpu0","t_startup_s":0,"bandwidth_bps":1e6}]}"#;
        let s = SystemModel::from_json(doc).unwrap();
        assert_eq!(s.devices().len(), 2);
        assert_eq!(s.links().len(), 1);
        assert_eq!(s.device("gpu0").unwrap().p_peak, 140.0);
    }

    #[test]
    fn zero_bandwidth_names_the_link() {
        let mut l = link("slow", "a", "b");
        l.bandwidth = 0.0;
        let err = SystemModel::new(vec![dev("a"), dev("b")], vec![l]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("slow") && msg.contains("bandwidth_bps"), "{msg}");
    }

    #[test]
    fn rejects_bad_devices() {
        let mut d = dev("a");
        d.p_idle = 100.0;
        assert!(SystemModel::new(vec![d], vec![]).unwrap_err().to_string().contains("p_peak_w"));
        assert!(SystemModel::new(vec![dev("a"), dev("a")], vec![]).unwrap_err().to_string().contains("duplicate"));
        let mut d = dev("a");
        d.ncores = 0;
        assert!(SystemModel::new(vec![d], vec![]).is_err());
        let err = SystemModel::new(vec![dev("a")], vec![link("l", "a", "zz")]).unwrap_err();
        assert!(err.to_string().contains("zz"));
        assert!(matches!(SystemModel::from_json("{not json"), Err(ModelError::Parse(_))));
    }

    #[test]
    fn direct_and_unroutable() {
        let s = SystemModel::new(vec![dev("a"), dev("b"), dev("c")], vec![link("l0", "a", "b")]).unwrap();
        let r = s.shortest_route("a", "b").unwrap();
        assert_eq!(r.iter().map(|l| l.id.as_str()).collect::<Vec<_>>(), ["l0"]);
        assert!(matches!(s.shortest_route("a", "c"), Err(ModelError::Unroutable { .. })));
        assert!(s.shortest_route("a", "a").unwrap().is_empty());
    }

    #[test]
    fn tie_breaks_on_startup_then_link_id() {
        // Two 2-hop paths a-x-b and a-y-b.
        let mut l1 = link("p1", "a", "x");
        let l2 = link("p2", "x", "b");
        let l3 = link("q1", "a", "y");
        let l4 = link("q2", "y", "b");
        let s = SystemModel::new(
            vec![dev("a"), dev("b"), dev("x"), dev("y")],
            vec![l1.clone(), l2.clone(), l3.clone(), l4.clone()],
        )
        .unwrap();
        let ids = |r: Vec<&NetworkLink>| r.iter().map(|l| l.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(s.shortest_route("a", "b").unwrap()), ["p1", "p2"]);

        l1.t_startup = 1e-3;
        let s = SystemModel::new(vec![dev("a"), dev("b"), dev("x"), dev("y")], vec![l1, l2, l3, l4]).unwrap();
        assert_eq!(ids(s.shortest_route("a", "b").unwrap()), ["q1", "q2"]);
    }

    #[test]
    fn json_round_trip() {
        let s = SystemModel::new(vec![dev("a"), dev("b")], vec![link("l0", "a", "b")]).unwrap();
        let again = SystemModel::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
    }
}
