use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ControlDag, DagNode, DataDag};
use crate::tir::{read_json, write_json, TaskKind, TirIoError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportNode {
    pub index: usize,
    pub kind: TaskKind,
    pub kernel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<String>,
    #[serde(default)]
    pub bb_ids: Vec<u32>,
}

/// Serialized graph: `{nodes: [...], edges: [[w, r], ...]}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagDocument {
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<[usize; 2]>,
}

fn export_nodes(cdag: &ControlDag) -> Vec<ExportNode> {
    cdag.nodes
        .iter()
        .map(|n| ExportNode {
            index: n.index,
            kind: n.task_kind,
            kernel: n.kernel_id.clone(),
            site_id: n.site_id.clone(),
            bb_ids: n.bb_ids.clone(),
        })
        .collect()
}

impl DagDocument {
    pub fn control(cdag: &ControlDag) -> Self {
        Self {
            nodes: export_nodes(cdag),
            edges: cdag.edges().map(|(a, b)| [a, b]).collect(),
        }
    }

    pub fn data(cdag: &ControlDag, ddag: &DataDag) -> Self {
        Self {
            nodes: export_nodes(cdag),
            edges: ddag.edges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    /// Node list as a Control DAG (trace positions are not preserved).
    pub fn to_control_dag(&self) -> ControlDag {
        ControlDag {
            nodes: self
                .nodes
                .iter()
                .map(|n| DagNode {
                    index: n.index,
                    task_kind: n.kind,
                    kernel_id: n.kernel.clone(),
                    bb_ids: n.bb_ids.clone(),
                    site_id: n.site_id.clone(),
                    events: 0..0,
                })
                .collect(),
        }
    }

    pub fn to_data_dag(&self) -> DataDag {
        DataDag {
            node_count: self.nodes.len(),
            edges: self.edges.iter().map(|&[a, b]| (a, b)).collect(),
        }
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{name}\" {{");
        let _ = writeln!(out, "  node [fontname=\"monospace\"];");
        for n in &self.nodes {
            let shape = match n.kind {
                TaskKind::Type1 => "box",
                TaskKind::Type2 => "ellipse",
            };
            let _ = writeln!(
                out,
                "  n{} [label=\"{}: {}\", shape={shape}];",
                n.index, n.index, n.kernel
            );
        }
        for [a, b] in &self.edges {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
        out.push_str("}\n");
        out
    }

    pub fn load(path: &Path) -> Result<Self, TirIoError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), TirIoError> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_and_dot_shapes() {
        let doc = DagDocument {
            nodes: vec![
                ExportNode {
                    index: 0,
                    kind: TaskKind::Type1,
                    kernel: "READ_DATA".into(),
                    site_id: Some("main:0".into()),
                    bb_ids: vec![0],
                },
                ExportNode {
                    index: 1,
                    kind: TaskKind::Type2,
                    kernel: "FFT".into(),
                    site_id: Some("main:1".into()),
                    bb_ids: vec![1],
                },
            ],
            edges: vec![[0, 1]],
        };
        let json = serde_json::to_value(&doc).unwrap();
        assert_eq!(json["edges"], serde_json::json!([[0, 1]]));
        assert_eq!(json["nodes"][1]["kind"], "type2");
        let dot = doc.to_dot("g");
        assert!(dot.contains("n0 -> n1;"));
        let back: DagDocument = serde_json::from_value(json).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_data_dag().edges.len(), 1);
    }
}
