use std::collections::HashSet;

use super::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};

fn prefixed(r: &SampleRecord) -> String {
    let prefix = format!("{}:", r.source.as_str());
    if r.id.starts_with(&prefix) {
        r.id.clone()
    } else {
        format!("{prefix}{}", r.id)
    }
}

/// Concatenates manifests in order, without re-sampling or de-duplication.
///
/// Ids are namespaced by source (`expw:123`); a collision that survives
/// the prefixing is an error. Relative image paths are resolved against
/// each input's root so the merged manifest stands on its own.
pub fn merge_datasets(manifests: &[DatasetManifest]) -> Result<DatasetManifest> {
    let non_empty: Vec<&DatasetManifest> = manifests.iter().filter(|m| !m.is_empty()).collect();
    let num_aus = match non_empty.first() {
        Some(m) => m.num_aus,
        None => return Ok(manifests.first().cloned().unwrap_or_else(|| DatasetManifest::new(Vec::new(), 12))),
    };
    if let Some(m) = non_empty.iter().find(|m| m.num_aus != num_aus) {
        return Err(Error::Merge(format!(
            "AU count mismatch: {} vs {num_aus}",
            m.num_aus
        )));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(non_empty.iter().map(|m| m.len()).sum());
    for m in non_empty {
        for r in &m.records {
            let id = prefixed(r);
            if !seen.insert(id.clone()) {
                return Err(Error::Merge(format!("duplicate sample id `{id}` after source prefixing")));
            }
            records.push(SampleRecord {
                id,
                image_path: m.resolve_image(r),
                ..r.clone()
            });
        }
    }
    Ok(DatasetManifest::new(records, num_aus))
}
