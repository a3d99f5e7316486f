use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Eager, Tensor};
use crate::error::{Error, Result};
use crate::metaloop::{task_forward, MetaParams, TrainConfig};
use crate::relgraph::edge_weights;
use crate::taskgen::{make_episode, sample_family_params, Episode, Family};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaGraphExport {
    pub vertices: usize,
    pub threshold: f64,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug)]
pub struct ExportReport {
    pub heatmaps: Vec<PathBuf>,
    pub graph: PathBuf,
    pub edges: usize,
}

/// `per_family` episodes of every family, from a stream reserved for exports.
pub fn export_episodes(cfg: &TrainConfig, per_family: usize) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut out = Vec::new();
    for family in Family::ALL {
        for _ in 0..per_family {
            let params = sample_family_params(&mut rng, Some(family));
            out.push(make_episode(&mut rng, &params, cfg.n_train, cfg.n_test, cfg.noise_std)?);
        }
    }
    Ok(out)
}

/// Knowledge-graph edge weights `A_G` of the current parameters.
pub fn meta_graph(phi: &MetaParams, cfg: &TrainConfig) -> Result<Tensor> {
    let kg = phi.kg.map(|t| Rc::new(t.clone()));
    let a = edge_weights(&mut Eager, &kg.h_g, &kg.w_o, &kg.b_o, cfg.gamma_o)?;
    Ok((*a).clone())
}

/// Undirected edges `src < dst` of `a_g` whose weight is at least `threshold`.
pub fn meta_graph_edges(a_g: &Tensor, threshold: f64) -> Vec<Edge> {
    let mut edges = Vec::new();
    for src in 0..a_g.rows() {
        for dst in src + 1..a_g.cols() {
            let weight = a_g.get(src, dst);
            if weight >= threshold {
                edges.push(Edge { src, dst, weight });
            }
        }
    }
    edges
}

/// `A_S` as CSV: header `prototype,V0,..`, one `P<k>` row per prototype.
pub fn heatmap_csv(a_s: &Tensor) -> String {
    let mut s = String::from("prototype");
    for g in 0..a_s.cols() {
        let _ = write!(s, ",V{g}");
    }
    s.push('\n');
    for k in 0..a_s.rows() {
        let _ = write!(s, "P{k}");
        for v in a_s.row_slice(k) {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}

/// `A_S` of one episode.
pub fn cross_link_matrix(phi: &MetaParams, ep: &Episode, cfg: &TrainConfig) -> Result<Tensor> {
    if !cfg.mode.uses_graph() {
        return Err(Error::Contract(format!("mode {} builds no knowledge graph", cfg.mode)));
    }
    task_forward(phi, ep, cfg)?
        .diagnostics
        .a_s
        .ok_or_else(|| Error::Contract("pipeline produced no cross links".into()))
}

/// Per-family mean of `A_S` over `episodes`, for families that occur.
pub fn family_mean_heatmaps(phi: &MetaParams, episodes: &[Episode], cfg: &TrainConfig) -> Result<Vec<(Family, Tensor)>> {
    let mut out = Vec::new();
    for family in Family::ALL {
        let mut acc: Option<Tensor> = None;
        let mut n = 0;
        for ep in episodes.iter().filter(|e| e.family() == family) {
            let a = cross_link_matrix(phi, ep, cfg)?;
            match acc.as_mut() {
                Some(m) => m.add_assign(&a)?,
                None => acc = Some(a),
            }
            n += 1;
        }
        if let Some(m) = acc {
            out.push((family, m.map(|v| v / n as f64)));
        }
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `heatmap_<i>_<family>.csv` per episode, `heatmap_mean_<family>.csv`
/// per family and `meta_graph.json` into `out_dir`.
pub fn export_interpretability(
    phi: &MetaParams,
    cfg: &TrainConfig,
    episodes: &[Episode],
    threshold: f64,
    out_dir: &Path,
) -> Result<ExportReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut heatmaps = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let a_s = cross_link_matrix(phi, ep, cfg)?;
        let path = out_dir.join(format!("heatmap_{i:03}_{}.csv", ep.family()));
        write(&path, &heatmap_csv(&a_s))?;
        heatmaps.push(path);
    }
    for (family, mean) in family_mean_heatmaps(phi, episodes, cfg)? {
        let path = out_dir.join(format!("heatmap_mean_{family}.csv"));
        write(&path, &heatmap_csv(&mean))?;
        heatmaps.push(path);
    }
    let a_g = meta_graph(phi, cfg)?;
    let graph = MetaGraphExport {
        vertices: a_g.rows(),
        threshold,
        edges: meta_graph_edges(&a_g, threshold),
    };
    let path = out_dir.join("meta_graph.json");
    write(&path, &serde_json::to_string_pretty(&graph)?)?;
    Ok(ExportReport {
        heatmaps,
        graph: path,
        edges: graph.edges.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaloop::Mode;

    fn setup() -> (MetaParams, TrainConfig) {
        let cfg = TrainConfig { d: 4, d_h: 3, hidden: 3, g: 4, n_test: 10, ..Default::default() };
        (MetaParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5)), cfg)
    }

    #[test]
    fn threshold_extremes() {
        let (phi, cfg) = setup();
        let a_g = meta_graph(&phi, &cfg).unwrap();
        assert!(meta_graph_edges(&a_g, 1.0).is_empty());
        let all = meta_graph_edges(&a_g, 0.0);
        assert_eq!(all.len(), 4 * 3 / 2);
        assert!(all.iter().all(|e| e.src < e.dst));
    }

    #[test]
    fn heatmap_layout_and_row_sums() {
        let (phi, cfg) = setup();
        let eps = export_episodes(&cfg, 2).unwrap();
        assert_eq!(eps.len(), 12);
        let dir = tempfile::tempdir().unwrap();
        let report = export_interpretability(&phi, &cfg, &eps, 0.5, dir.path()).unwrap();
        assert_eq!(report.heatmaps.len(), 12 + 6);
        let text = std::fs::read_to_string(&report.heatmaps[0]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "prototype,V0,V1,V2,V3");
        for (k, line) in lines.enumerate() {
            let mut cells = line.split(',');
            assert_eq!(cells.next().unwrap(), format!("P{k}"));
            let s: f64 = cells.map(|c| c.parse::<f64>().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let graph: MetaGraphExport =
            serde_json::from_str(&std::fs::read_to_string(&report.graph).unwrap()).unwrap();
        assert_eq!(graph.vertices, 4);
        assert_eq!(graph.edges.len(), report.edges);
    }

    #[test]
    fn graphless_modes_are_rejected() {
        let (phi, cfg) = setup();
        let cfg = TrainConfig { mode: Mode::Maml, ..cfg };
        let eps = export_episodes(&cfg, 1).unwrap();
        assert!(cross_link_matrix(&phi, &eps[0], &cfg).is_err());
    }
}
