//! File formats. Every write goes to a temporary file in the target directory
//! and is renamed into place.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::graph::{CombinationMatrix, GraphSpec, NetworkPartition};
use crate::learning::{Snapshot, TrajectoryRecord};
use crate::models::DivergenceMatrix;
use crate::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes<F>(header: Option<&str>, fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    if let Some(h) = header {
        buf.extend_from_slice(h.as_bytes());
        buf.push(b'\n');
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

/// Row-major matrix with a `# partition ...` comment line first.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, partition: &NetworkPartition) -> Result<()> {
    let header = format!("# partition {}", partition.describe());
    let bytes = csv_bytes(Some(&header), |w| {
        for i in 0..m.nrows() {
            w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{}: ragged rows", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Columns `theta, component, divergence, provenance` (one-based labels).
pub fn write_divergence_csv(path: &Path, d: &DivergenceMatrix) -> Result<()> {
    let bytes = csv_bytes(None, |w| {
        w.write_record(["theta", "component", "divergence", "provenance"])?;
        for t in 0..d.num_hypotheses() {
            for s in 0..d.num_components() {
                w.write_record([
                    (t + 1).to_string(),
                    (s + 1).to_string(),
                    format!("{:e}", d.get(t, s)),
                    d.provenance(t, s).as_str().to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Graph artifact consumed by later commands.
pub fn write_graph(path: &Path, graph: &CombinationMatrix) -> Result<()> {
    let m = graph.matrix();
    let spec = GraphSpec::Explicit {
        partition: graph.partition().clone(),
        matrix: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
    };
    write_json(path, &spec)
}

pub fn read_graph(path: &Path) -> Result<CombinationMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingRecord(format!("graph artifact {}: {e}", path.display())))?;
    let spec: GraphSpec = serde_json::from_str(&text)?;
    match spec {
        GraphSpec::Explicit { .. } => crate::graph::build_weak_graph(&spec, 0),
        GraphSpec::Random(_) => Err(Error::Config(format!("{} is not a generated graph", path.display()))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Columns `iteration, agent, theta, log_psi, log_mu`; one-based agent and
/// hypothesis labels, empty cells for quantities that were not recorded.
pub fn write_trajectory_csv(path: &Path, traj: &TrajectoryRecord) -> Result<()> {
    let h = traj.hypotheses;
    let bytes = csv_bytes(None, |w| {
        w.write_record(["iteration", "agent", "theta", "log_psi", "log_mu"])?;
        for snap in &traj.snapshots {
            for (pos, agent) in traj.agents.iter().enumerate() {
                for t in 0..h {
                    let idx = pos * h + t;
                    w.write_record([
                        snap.iteration.to_string(),
                        (agent + 1).to_string(),
                        (t + 1).to_string(),
                        fmt_opt(snap.log_psi.as_ref().map(|v| v[idx])),
                        fmt_opt(snap.log_mu.as_ref().map(|v| v[idx])),
                    ])?;
                }
            }
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Rebuilds a trajectory from its CSV form. Seed, horizon and floor counts are
/// not part of the CSV and come back as zero.
pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryRecord> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::MissingRecord(format!("trajectory {}: {e}", path.display())))?;
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>().map(Some).map_err(|e| Error::Config(format!("bad value '{s}': {e}")))
        }
    };
    let mut rows: Vec<(usize, usize, usize, Option<f64>, Option<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Config(format!("{}: expected 5 columns", path.display())));
        }
        let int = |i: usize| -> Result<usize> {
            rec[i].parse::<usize>().map_err(|e| Error::Config(format!("bad index '{}': {e}", &rec[i])))
        };
        let (it, agent, theta) = (int(0)?, int(1)?, int(2)?);
        if agent == 0 || theta == 0 {
            return Err(Error::Config("agent and theta labels are one-based".into()));
        }
        rows.push((it, agent - 1, theta - 1, parse_opt(&rec[3])?, parse_opt(&rec[4])?));
    }
    if rows.is_empty() {
        return Err(Error::MissingRecord(format!("{} holds no records", path.display())));
    }
    let hypotheses = rows.iter().map(|r| r.2).max().unwrap_or(0) + 1;
    let first_it = rows[0].0;
    let agents: Vec<usize> = {
        let mut seen = Vec::new();
        for r in rows.iter().take_while(|r| r.0 == first_it) {
            if !seen.contains(&r.1) {
                seen.push(r.1);
            }
        }
        seen
    };
    let block = agents.len() * hypotheses;
    if rows.len() % block != 0 {
        return Err(Error::InconsistentData(format!("{}: incomplete snapshots", path.display())));
    }
    let mut snapshots = Vec::with_capacity(rows.len() / block);
    for chunk in rows.chunks(block) {
        let iteration = chunk[0].0;
        let mut psi = Vec::with_capacity(block);
        let mut mu = Vec::with_capacity(block);
        for (idx, row) in chunk.iter().enumerate() {
            let (pos, t) = (idx / hypotheses, idx % hypotheses);
            if row.0 != iteration || row.1 != agents[pos] || row.2 != t {
                return Err(Error::InconsistentData(format!(
                    "{}: unexpected row order at iteration {}",
                    path.display(),
                    row.0
                )));
            }
            psi.push(row.3);
            mu.push(row.4);
        }
        let collect = |v: Vec<Option<f64>>| -> Option<Vec<f64>> { v.into_iter().collect() };
        snapshots.push(Snapshot {
            iteration,
            log_psi: collect(psi),
            log_mu: collect(mu),
        });
    }
    if snapshots.windows(2).any(|w| w[0].iteration >= w[1].iteration) {
        return Err(Error::InconsistentData("iterations must increase".into()));
    }
    Ok(TrajectoryRecord {
        agents,
        hypotheses,
        seed: 0,
        horizon: snapshots.last().map_or(0, |s| s.iteration),
        snapshots,
        floor_hits: 0,
    })
}

/// One row of the topology time series.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub iteration: usize,
    /// Zero-based.
    pub agent: usize,
    /// Zero-based.
    pub component: usize,
    pub x_hat: f64,
    pub x_true: Option<f64>,
}

/// Columns `iteration, agent, component, x_hat, x_true`.
pub fn write_estimates_csv(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    let bytes = csv_bytes(None, |w| {
        w.write_record(["iteration", "agent", "component", "x_hat", "x_true"])?;
        for r in rows {
            w.write_record([
                r.iteration.to_string(),
                (r.agent + 1).to_string(),
                (r.component + 1).to_string(),
                format!("{:e}", r.x_hat),
                fmt_opt(r.x_true),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_weak_graph, RandomGraphSpec, ReceivingTopology};
    use crate::learning::{run, RecordSpec};
    use crate::models::{canonical_family, AgentModel};

    fn small_graph() -> CombinationMatrix {
        let spec = GraphSpec::Random(RandomGraphSpec {
            partition: NetworkPartition::new(vec![3, 2], vec![2]).unwrap(),
            q: 0.8,
            pi: vec![0.7, 0.7],
            receiving_topology: ReceivingTopology::ErdosRenyi,
            max_retries: 1000,
        });
        build_weak_graph(&spec, 4).unwrap()
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = small_graph();
        let path = dir.path().join("a.csv");
        write_matrix_csv(&path, g.matrix(), g.partition()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# partition sending=3,2 receiving=2"));
        assert_eq!(&read_matrix_csv(&path).unwrap(), g.matrix());
        let gpath = dir.path().join("graph.json");
        write_graph(&gpath, &g).unwrap();
        assert_eq!(read_graph(&gpath).unwrap().matrix(), g.matrix());
        assert!(matches!(read_graph(&dir.path().join("missing.json")), Err(Error::MissingRecord(_))));
    }

    #[test]
    fn trajectory_round_trip() {
        let g = small_graph();
        let sending = canonical_family(1.0).unwrap();
        let mut models: Vec<AgentModel> = Vec::new();
        models.extend(std::iter::repeat_n(sending[0].clone(), 3));
        models.extend(std::iter::repeat_n(sending[1].clone(), 2));
        models.extend(std::iter::repeat_n(sending[0].clone(), 2));
        let spec = RecordSpec {
            agents: Some(vec![5, 6]),
            stride: 7,
            mu: false,
            ..RecordSpec::default()
        };
        let traj = run(&g, &models, 30, 2, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        write_trajectory_csv(&path, &traj).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back.agents, traj.agents);
        assert_eq!(back.snapshots, traj.snapshots);
    }
}
