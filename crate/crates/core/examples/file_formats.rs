//! Edge lists, GCSE embedding files, histograms and relation topology.
//!
//! cargo run --example file_formats

use gcs_probe::embedding::{load_embeddings, save_embeddings, EmbeddingMatrix};
use gcs_probe::graph::{self, TopologyThresholds};

fn main() -> gcs_probe::Result<()> {
    let dir = std::env::temp_dir().join("gcs-file-formats");
    std::fs::create_dir_all(&dir).map_err(|e| gcs_probe::Error::Format(e.to_string()))?;

    // ids are dense and 0-based; the third column is an optional annotation
    let tsv = dir.join("kg.tsv");
    let text = "# head\ttail\trelation\n0\t1\tborn_in\n0\t2\tborn_in\n0\t3\tspouse\n3\t4\n4\t3\n2\t2\n";
    std::fs::write(&tsv, text).map_err(|e| gcs_probe::Error::Format(e.to_string()))?;

    let (g, stats) = graph::load_edge_list(&tsv, None)?;
    println!(
        "{} nodes, {} edges ({} self-loop dropped, {} duplicate merged)",
        g.node_count(),
        g.edge_count(),
        stats.self_loops_dropped,
        stats.duplicates_merged
    );
    println!("degrees: {:?}", graph::degree_histogram(&g));
    println!("annotations: {:?}", graph::annotation_histogram(&g));
    let classes = graph::classify_all_edges(&g, TopologyThresholds::default())?;
    for (&(u, v), class) in g.edges().iter().zip(classes) {
        println!("  {u} - {v}: {}", class.as_str());
    }

    let x = EmbeddingMatrix::from_rows(g.node_count(), 3, (0..g.node_count() * 3).map(|i| i as f64 * 0.25).collect())?;
    let path = dir.join("base.gcse");
    save_embeddings(&x, &path)?;
    let back = load_embeddings(&path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("GCSE round trip: {} bytes, identical = {}", bytes, back == x);
    Ok(())
}
