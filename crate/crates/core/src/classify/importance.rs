use std::io::Write;

use serde::{Deserialize, Serialize};

use super::boost::BoostedModel;
use crate::error::Result;
use crate::features::FEATURE_NAMES;
use crate::regional::{AREA_RATIO_INDEX, DENSITY_INDEX, N_CDF_ENTRIES, N_LEVELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub index: usize,
    pub name: String,
    /// Cell feature the entry summarizes, or `density` / `area_ratio`.
    pub family: String,
    pub gain: f64,
    pub cover: f64,
    pub count: usize,
}

/// Split statistics per input feature, ranked by gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
    pub total_gain: f64,
}

/// Cell feature family of a flat region-feature index.
pub fn feature_family(index: usize) -> &'static str {
    match index {
        i if i < N_CDF_ENTRIES => FEATURE_NAMES[i / N_LEVELS],
        DENSITY_INDEX => "density",
        AREA_RATIO_INDEX => "area_ratio",
        _ => "other",
    }
}

pub fn feature_importance(model: &BoostedModel) -> ImportanceReport {
    let d = model.n_features;
    let mut gain = vec![0.0; d];
    let mut cover = vec![0.0; d];
    let mut count = vec![0usize; d];
    let mut total_gain = 0.0;
    for t in &model.trees {
        for n in 0..t.len() {
            if t.is_leaf(n) {
                continue;
            }
            let f = t.feature[n] as usize;
            gain[f] += t.gain[n];
            cover[f] += t.cover[n];
            count[f] += 1;
            total_gain += t.gain[n];
        }
    }
    let mut entries: Vec<ImportanceEntry> = (0..d)
        .filter(|&i| count[i] > 0)
        .map(|i| ImportanceEntry {
            index: i,
            name: model.feature_names[i].clone(),
            family: if d == crate::regional::REGION_FEATURE_LEN {
                feature_family(i).to_string()
            } else {
                model.feature_names[i].clone()
            },
            gain: gain[i],
            cover: cover[i],
            count: count[i],
        })
        .collect();
    entries.sort_by(|a, b| b.gain.total_cmp(&a.gain).then(a.index.cmp(&b.index)));
    ImportanceReport { entries, total_gain }
}

impl ImportanceReport {
    pub fn top(&self) -> Option<&ImportanceEntry> {
        self.entries.first()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["rank", "index", "name", "family", "gain", "cover", "count"])?;
        for (rank, e) in self.entries.iter().enumerate() {
            out.write_record([
                (rank + 1).to_string(),
                e.index.to_string(),
                e.name.clone(),
                e.family.clone(),
                e.gain.to_string(),
                e.cover.to_string(),
                e.count.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
