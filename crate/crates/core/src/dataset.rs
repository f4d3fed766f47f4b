//! On-disk snapshot datasets.
//!
//! A dataset is a directory holding `meta.json` plus three CSV tables:
//! `nodes.csv` and `edges.csv` (one row per bus-phase or phase edge per
//! timestep, feature columns in vector order) and `hub.csv` (feeder-head,
//! auxiliary and substation-transformer power per timestep). Floats are
//! written in shortest round-trip form, so a read returns bit-identical
//! snapshots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    feature_order_hash, BusPhase, BusType, DeviceKind, EdgeRecord, FeederTag, GridError, NodeFeatures, NodeRecord, Phase, Snapshot,
    EDGE_FEATURES, EDGE_FEATURE_NAMES, NODE_FEATURES, NODE_FEATURE_NAMES,
};
use crate::sim::{run_timeseries, SimError, SimScenario, SubstationSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{file}: unexpected header (expected `{expected}`)")]
    Header { file: &'static str, expected: String },
    #[error("{file} line {line}: {message}")]
    Row { file: &'static str, line: usize, message: String },
    #[error("feature layout hash {found} does not match this build ({expected})")]
    FeatureHash { expected: String, found: String },
    #[error("unsupported dataset format version {0}")]
    Version(u32),
    #[error("dataset has no snapshots")]
    Empty,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub feature_hash: String,
    pub node_features: Vec<String>,
    pub edge_features: Vec<String>,
    pub snapshots: usize,
    pub scenario: SimScenario,
    pub spec: SubstationSpec,
}

/// Snapshots of one substation under one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SubstationSpec,
    pub scenario: SimScenario,
    pub snapshots: Vec<Snapshot>,
}

fn node_header() -> Vec<String> {
    let mut h: Vec<String> = ["timestep", "node", "bus", "phase", "kv_base", "bus_type", "feeder"].map(String::from).to_vec();
    h.extend(NODE_FEATURE_NAMES.iter().map(|s| s.to_string()));
    h.push("v_true_pu".into());
    h
}

fn edge_header() -> Vec<String> {
    let mut h: Vec<String> = ["timestep", "from", "to", "kind"].map(String::from).to_vec();
    h.extend(EDGE_FEATURE_NAMES.iter().map(|s| s.to_string()));
    h.extend(["p_flow_pu", "q_flow_pu", "in_physics_set"].map(String::from));
    h
}

const HUB_HEADER: [&str; 5] = ["timestep", "record", "feeder", "p_pu", "q_pu"];

impl Dataset {
    /// Runs the scenario on `spec`.
    pub fn simulate(spec: SubstationSpec, scenario: SimScenario) -> Result<Self, SimError> {
        let snapshots = run_timeseries(&spec, &scenario)?;
        Ok(Dataset { spec, scenario, snapshots })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            format_version: FORMAT_VERSION,
            feature_hash: feature_order_hash(),
            node_features: NODE_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            edge_features: EDGE_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            snapshots: self.snapshots.len(),
            scenario: self.scenario.clone(),
            spec: self.spec.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let meta_path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&self.meta()).map_err(|source| DatasetError::Json {
            path: meta_path.clone(),
            source,
        })?;
        fs::write(&meta_path, text).map_err(|source| DatasetError::Io { path: meta_path, source })?;

        let path = dir.join("nodes.csv");
        let csv_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DatasetError::Csv { path: path.clone(), source }
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(node_header()).map_err(csv_err(&path))?;
        for (t, s) in self.snapshots.iter().enumerate() {
            for n in &s.nodes {
                let mut row = vec![
                    t.to_string(),
                    n.bus.id.to_string(),
                    n.bus.bus_id.to_string(),
                    n.bus.phase.to_string(),
                    n.bus.kv_base.to_string(),
                    n.bus.bus_type.as_str().to_string(),
                    n.bus.feeder.code().to_string(),
                ];
                row.extend(n.features.0.iter().map(f64::to_string));
                row.push(n.v_true_pu.to_string());
                w.write_record(&row).map_err(csv_err(&path))?;
            }
        }
        w.flush().map_err(|source| DatasetError::Io { path: path.clone(), source })?;

        let path = dir.join("edges.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(edge_header()).map_err(csv_err(&path))?;
        for (t, s) in self.snapshots.iter().enumerate() {
            for e in &s.edges {
                let mut row = vec![t.to_string(), e.from.to_string(), e.to.to_string(), e.kind.as_str().to_string()];
                row.extend(e.features.iter().map(f64::to_string));
                row.push(e.p_flow_pu.to_string());
                row.push(e.q_flow_pu.to_string());
                row.push(u8::from(e.in_physics_set).to_string());
                w.write_record(&row).map_err(csv_err(&path))?;
            }
        }
        w.flush().map_err(|source| DatasetError::Io { path: path.clone(), source })?;

        let path = dir.join("hub.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(HUB_HEADER).map_err(csv_err(&path))?;
        for (t, s) in self.snapshots.iter().enumerate() {
            let mut rec = |record: &str, feeder: i64, v: Complex64| {
                w.write_record([t.to_string(), record.to_string(), feeder.to_string(), v.re.to_string(), v.im.to_string()])
            };
            for (f, v) in &s.feeder_heads {
                rec("head", i64::from(*f), *v).map_err(csv_err(&path))?;
            }
            rec("aux", -1, s.s_aux).map_err(csv_err(&path))?;
            rec("subxfmr", -1, s.s_subxfmr).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|source| DatasetError::Io { path, source })?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, DatasetError> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|source| DatasetError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|source| DatasetError::Json { path: meta_path, source })?;
        if meta.format_version != FORMAT_VERSION {
            return Err(DatasetError::Version(meta.format_version));
        }
        let expected = feature_order_hash();
        if meta.feature_hash != expected {
            return Err(DatasetError::FeatureHash {
                expected,
                found: meta.feature_hash,
            });
        }
        let mut snapshots: Vec<Snapshot> = (0..meta.snapshots)
            .map(|t| Snapshot {
                timestamp: t as u32 * crate::sim::STEP_MINUTES,
                nodes: Vec::new(),
                edges: Vec::new(),
                feeder_heads: BTreeMap::new(),
                s_subxfmr: Complex64::new(0.0, 0.0),
                s_aux: Complex64::new(0.0, 0.0),
            })
            .collect();

        read_table(dir, "nodes.csv", &node_header(), |line, r| {
            let t = field::<usize>("nodes.csv", line, r, 0)?;
            let snap = snapshot_at(&mut snapshots, "nodes.csv", line, t)?;
            let parse_err = |e: GridError| DatasetError::Row {
                file: "nodes.csv",
                line,
                message: e.to_string(),
            };
            let mut x = [0.0; NODE_FEATURES];
            for (k, slot) in x.iter_mut().enumerate() {
                *slot = field("nodes.csv", line, r, 7 + k)?;
            }
            snap.nodes.push(NodeRecord {
                bus: BusPhase {
                    id: field("nodes.csv", line, r, 1)?,
                    bus_id: field("nodes.csv", line, r, 2)?,
                    phase: r[3].parse::<Phase>().map_err(parse_err)?,
                    kv_base: field("nodes.csv", line, r, 4)?,
                    bus_type: r[5].parse::<BusType>().map_err(parse_err)?,
                    feeder: FeederTag::from_code(field("nodes.csv", line, r, 6)?),
                },
                features: NodeFeatures(x),
                v_true_pu: field("nodes.csv", line, r, 7 + NODE_FEATURES)?,
            });
            Ok(())
        })?;

        read_table(dir, "edges.csv", &edge_header(), |line, r| {
            let t = field::<usize>("edges.csv", line, r, 0)?;
            let snap = snapshot_at(&mut snapshots, "edges.csv", line, t)?;
            let mut z = [0.0; EDGE_FEATURES];
            for (k, slot) in z.iter_mut().enumerate() {
                *slot = field("edges.csv", line, r, 4 + k)?;
            }
            snap.edges.push(EdgeRecord {
                from: field("edges.csv", line, r, 1)?,
                to: field("edges.csv", line, r, 2)?,
                kind: r[3].parse::<DeviceKind>().map_err(|e| DatasetError::Row {
                    file: "edges.csv",
                    line,
                    message: e.to_string(),
                })?,
                features: z,
                p_flow_pu: field("edges.csv", line, r, 4 + EDGE_FEATURES)?,
                q_flow_pu: field("edges.csv", line, r, 5 + EDGE_FEATURES)?,
                in_physics_set: field::<u8>("edges.csv", line, r, 6 + EDGE_FEATURES)? != 0,
            });
            Ok(())
        })?;

        let hub_header: Vec<String> = HUB_HEADER.map(String::from).to_vec();
        read_table(dir, "hub.csv", &hub_header, |line, r| {
            let t = field::<usize>("hub.csv", line, r, 0)?;
            let snap = snapshot_at(&mut snapshots, "hub.csv", line, t)?;
            let v = Complex64::new(field("hub.csv", line, r, 3)?, field("hub.csv", line, r, 4)?);
            match &r[1] {
                "head" => {
                    snap.feeder_heads.insert(field("hub.csv", line, r, 2)?, v);
                }
                "aux" => snap.s_aux = v,
                "subxfmr" => snap.s_subxfmr = v,
                other => {
                    return Err(DatasetError::Row {
                        file: "hub.csv",
                        line,
                        message: format!("unknown record `{other}`"),
                    })
                }
            }
            Ok(())
        })?;

        for s in &snapshots {
            s.validate()?;
        }
        Ok(Dataset {
            spec: meta.spec,
            scenario: meta.scenario,
            snapshots,
        })
    }
}

fn snapshot_at<'a>(snapshots: &'a mut [Snapshot], file: &'static str, line: usize, t: usize) -> Result<&'a mut Snapshot, DatasetError> {
    let len = snapshots.len();
    snapshots.get_mut(t).ok_or_else(|| DatasetError::Row {
        file,
        line,
        message: format!("timestep {t} beyond the {len} declared in meta.json"),
    })
}

fn field<T: std::str::FromStr>(file: &'static str, line: usize, r: &csv::StringRecord, k: usize) -> Result<T, DatasetError>
where
    T::Err: std::fmt::Display,
{
    let raw = r.get(k).ok_or_else(|| DatasetError::Row {
        file,
        line,
        message: format!("missing column {k}"),
    })?;
    raw.parse().map_err(|e: T::Err| DatasetError::Row {
        file,
        line,
        message: format!("column {k} `{raw}`: {e}"),
    })
}

fn read_table(
    dir: &Path,
    file: &'static str,
    header: &[String],
    mut row: impl FnMut(usize, &csv::StringRecord) -> Result<(), DatasetError>,
) -> Result<(), DatasetError> {
    let path = dir.join(file);
    let mut r = csv::Reader::from_path(&path).map_err(|source| DatasetError::Csv { path: path.clone(), source })?;
    let found = r.headers().map_err(|source| DatasetError::Csv { path: path.clone(), source })?;
    if found.iter().ne(header.iter().map(String::as_str)) {
        return Err(DatasetError::Header {
            file,
            expected: header.join(","),
        });
    }
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|source| DatasetError::Csv { path: path.clone(), source })?;
        row(k + 2, &rec)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_substation, run_timeseries, SizeClass};

    fn small() -> Dataset {
        let spec = generate_substation(2, SizeClass::Tiny, 2).unwrap();
        let scenario = SimScenario::new(1, 20, 6 * 15);
        let snapshots = run_timeseries(&spec, &scenario).unwrap();
        Dataset { spec, scenario, snapshots }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.scenario, ds.scenario);
        for (a, b) in back.snapshots.iter().zip(&ds.snapshots) {
            assert_eq!(a.nodes, b.nodes);
            assert_eq!(a.edges, b.edges);
            assert_eq!(a.feeder_heads, b.feeder_heads);
            assert_eq!((a.s_aux, a.s_subxfmr, a.timestamp), (b.s_aux, b.s_subxfmr, b.timestamp));
        }
        assert_eq!(back, ds);
    }

    #[test]
    fn header_documents_feature_order() {
        let dir = tempfile::tempdir().unwrap();
        small().write(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.contains("phase_a,phase_b,phase_c,kv,type_hub"));
        assert!(header.ends_with("m_obs,m_obs_v_pu,v_true_pu"));
    }

    #[test]
    fn foreign_feature_hash_rejected() {
        let dir = tempfile::tempdir().unwrap();
        small().write(dir.path()).unwrap();
        let path = dir.path().join("meta.json");
        let text = fs::read_to_string(&path).unwrap().replace(&feature_order_hash(), "00");
        fs::write(&path, text).unwrap();
        assert!(matches!(Dataset::read(dir.path()), Err(DatasetError::FeatureHash { .. })));
    }
}
