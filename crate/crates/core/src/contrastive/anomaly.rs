use crate::encoders::Embedding;
use crate::error::{Error, Result};

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// Indices of the samples whose embedding is non-zero in every modality.
/// `rows[m]` is the flat `[B, d]` batch of modality `m`.
pub(crate) fn surviving_rows(rows: &[&[f64]], d: usize) -> Result<Vec<usize>> {
    let b = rows.first().map(|r| r.len() / d.max(1)).unwrap_or(0);
    if rows.iter().any(|r| r.len() != b * d) {
        return Err(Error::Contract(
            "modalities disagree on the batch size".into(),
        ));
    }
    let keep: Vec<usize> = (0..b)
        .filter(|&i| rows.iter().all(|r| !is_zero(&r[i * d..(i + 1) * d])))
        .collect();
    if keep.len() < 2 {
        return Err(Error::DegenerateBatch {
            survivors: keep.len(),
        });
    }
    Ok(keep)
}

/// Drop every sample whose embedding has zero norm in any modality, from all
/// modalities at once, keeping the original order.
pub fn anomaly_filter(batch: &[Vec<Embedding>]) -> Result<Vec<Vec<Embedding>>> {
    let d = batch
        .first()
        .and_then(|m| m.first())
        .map(|e| e.vector.len())
        .unwrap_or(0);
    let flat: Vec<Vec<f64>> = batch
        .iter()
        .map(|m| m.iter().flat_map(|e| e.vector.iter().copied()).collect())
        .collect();
    let refs: Vec<&[f64]> = flat.iter().map(Vec::as_slice).collect();
    if batch.iter().any(|m| m.iter().any(|e| e.vector.len() != d)) {
        return Err(Error::Contract(
            "embeddings of different widths in one batch".into(),
        ));
    }
    let keep = surviving_rows(&refs, d)?;
    Ok(batch
        .iter()
        .map(|m| keep.iter().map(|&i| m[i].clone()).collect())
        .collect())
}
