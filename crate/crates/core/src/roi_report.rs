//! Per-ROI importance aggregation and anatomical reporting.
//!
//! Each feature is a connection between two ROIs. The top-ranked connections
//! are folded into per-ROI weights (frequency in the top set times the
//! highest absolute attribution among the ROI's top connections), and each
//! ROI is mapped to its Brodmann areas from a bundled lookup table.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::attribution::FeatureRanking;
use crate::connectome::{edge_of_index, N_ROIS};
use crate::error::{data_err, Error, Result};

const AAL_BRODMANN_CSV: &str = include_str!("../data/aal_brodmann.csv");

/// The 116 AAL region names in atlas order.
pub fn aal_names() -> &'static [&'static str] {
    &bundled_table().names
}

struct BundledTable {
    names: Vec<&'static str>,
    areas: Vec<Vec<&'static str>>,
    sources: Vec<&'static str>,
}

fn bundled_table() -> &'static BundledTable {
    static TABLE: OnceLock<BundledTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut names = Vec::with_capacity(N_ROIS);
        let mut areas = Vec::with_capacity(N_ROIS);
        let mut sources = Vec::with_capacity(N_ROIS);
        for (i, line) in AAL_BRODMANN_CSV.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 4, "bundled table row {i} malformed");
            assert_eq!(fields[0].parse::<usize>().unwrap(), i - 1, "bundled table out of order");
            names.push(fields[1]);
            if fields[2].is_empty() {
                areas.push(Vec::new());
            } else {
                areas.push(fields[2].split(';').collect());
            }
            sources.push(fields[3]);
        }
        assert_eq!(names.len(), N_ROIS, "bundled table must have {N_ROIS} rows");
        BundledTable { names, areas, sources }
    })
}

/// ROI name to Brodmann-area lookup backed by the bundled table.
pub struct BrodmannMap;

impl BrodmannMap {
    pub fn bundled() -> BrodmannMap {
        BrodmannMap
    }

    /// Brodmann areas of an ROI; cerebellar/vermis regions map to an empty
    /// list. Unknown names are an error.
    pub fn lookup(&self, roi_name: &str) -> Result<Vec<String>> {
        let table = bundled_table();
        match table.names.iter().position(|&n| n == roi_name) {
            Some(idx) => Ok(table.areas[idx].iter().map(|s| s.to_string()).collect()),
            None => data_err(format!("unknown ROI name '{roi_name}'")),
        }
    }

    /// Provenance of an ROI's table row (`paper` or `external`).
    pub fn source(&self, roi_name: &str) -> Result<&'static str> {
        let table = bundled_table();
        match table.names.iter().position(|&n| n == roi_name) {
            Some(idx) => Ok(table.sources[idx]),
            None => data_err(format!("unknown ROI name '{roi_name}'")),
        }
    }
}

/// Convenience wrapper over the bundled map.
pub fn map_brodmann(roi_name: &str) -> Result<Vec<String>> {
    BrodmannMap::bundled().lookup(roi_name)
}

/// One ROI's aggregated importance.
#[derive(Debug, Clone)]
pub struct RoiRow {
    pub roi_index: usize,
    pub roi_name: String,
    /// Appearances among the top connections.
    pub frequency: usize,
    /// Highest absolute attribution among the ROI's top connections.
    pub highest: f64,
    /// frequency x highest.
    pub weight: f64,
}

/// All 116 ROIs sorted by descending weight (ties by ROI index).
#[derive(Debug, Clone)]
pub struct RoiImportance {
    pub rows: Vec<RoiRow>,
    pub n_top_connections: usize,
}

/// Aggregate a feature ranking into per-ROI weights.
///
/// Takes the top `floor(top_fraction * n)` ranked connections; each reduced
/// index is translated through `kept` (reduced -> original feature index)
/// and then to its ROI pair. The ranking's score vector supplies the
/// attribution magnitudes.
pub fn roi_importance(ranking: &FeatureRanking, kept: &[usize], top_fraction: f64) -> Result<RoiImportance> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!("top_fraction {top_fraction} must be in (0, 1]")));
    }
    let n = ranking.order.len();
    if ranking.scores.len() != n {
        return data_err("ranking scores do not match ranking length");
    }
    let n_top = ((top_fraction * n as f64).floor() as usize).min(n);
    if n_top == 0 {
        return data_err("no connections selected: top_fraction rounds to zero connections");
    }
    let mut frequency = vec![0usize; N_ROIS];
    let mut highest = vec![0.0f64; N_ROIS];
    for &reduced in ranking.order.iter().take(n_top) {
        let original = *kept
            .get(reduced)
            .ok_or_else(|| Error::Data(format!("unmapped reduced index {reduced}")))?;
        let (i, j) = edge_of_index(original)?;
        let score = ranking.scores[reduced].abs();
        for roi in [i, j] {
            frequency[roi] += 1;
            if score > highest[roi] {
                highest[roi] = score;
            }
        }
    }
    let names = aal_names();
    let mut rows: Vec<RoiRow> = (0..N_ROIS)
        .map(|r| RoiRow {
            roi_index: r,
            roi_name: names[r].to_string(),
            frequency: frequency[r],
            highest: highest[r],
            weight: frequency[r] as f64 * highest[r],
        })
        .collect();
    rows.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .expect("finite weights")
            .then(a.roi_index.cmp(&b.roi_index))
    });
    Ok(RoiImportance { rows, n_top_connections: n_top })
}

/// Write the ranked ROI table and a normalized node-importance file.
///
/// The table has one row per ROI (zero-weight regions at the bottom):
/// `rank,roi_index,roi_name,frequency,highest,weight,brodmann_areas`.
/// The node file `roi_index,weight_normalized` scales weights to [0, 1].
pub fn emit_roi_report(
    importance: &RoiImportance,
    map: &BrodmannMap,
    table_path: &Path,
    nodes_path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(table_path)?);
    writeln!(w, "rank,roi_index,roi_name,frequency,highest,weight,brodmann_areas")?;
    for (rank, row) in importance.rows.iter().enumerate() {
        let areas = map.lookup(&row.roi_name)?.join(";");
        writeln!(
            w,
            "{},{},{},{},{:.9},{:.9},{}",
            rank + 1,
            row.roi_index,
            row.roi_name,
            row.frequency,
            row.highest,
            row.weight,
            areas
        )?;
    }
    w.flush()?;

    let max_weight = importance.rows.iter().map(|r| r.weight).fold(0.0f64, f64::max);
    let mut w = BufWriter::new(std::fs::File::create(nodes_path)?);
    writeln!(w, "roi_index,weight_normalized")?;
    let mut by_index: Vec<&RoiRow> = importance.rows.iter().collect();
    by_index.sort_by_key(|r| r.roi_index);
    for row in by_index {
        let norm = if max_weight > 0.0 { row.weight / max_weight } else { 0.0 };
        writeln!(w, "{},{:.9}", row.roi_index, norm)?;
    }
    w.flush()?;
    Ok(())
}
