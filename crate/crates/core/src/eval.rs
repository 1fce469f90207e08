//! Natural and robust accuracy.

use alloc::vec::Vec;

use crate::attacks::{pgd_attack, PerturbationSpec};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::model::{argmax_rows, forward_logits, forward_probs, ModelParameters};
use crate::objectives::LossKind;

/// Samples per forward pass during evaluation. Attacks are per-sample, so
/// the chunking does not change results.
pub const EVAL_CHUNK: usize = 256;

/// Per-sample correctness on clean inputs (`spec == None`) or on the
/// adversarial inputs produced by `spec`.
pub fn correct_mask(params: &ModelParameters, dataset: &Dataset, spec: Option<&PerturbationSpec>) -> Result<Vec<bool>> {
    if dataset.is_empty() {
        return Err(invalid!("cannot evaluate on an empty dataset"));
    }
    let c = params.class_count();
    let mut out = Vec::with_capacity(dataset.len());
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = dataset.batch(chunk);
        let inputs = match spec {
            None => batch.inputs.clone(),
            Some(s) => {
                let clean = if s.loss_kind == LossKind::KlVsClean {
                    Some(forward_probs(params, &batch.inputs)?)
                } else {
                    None
                };
                pgd_attack(params, &batch, s, clean.as_deref())?
            }
        };
        let pred = argmax_rows(&forward_logits(params, &inputs)?, c);
        out.extend(pred.iter().zip(&batch.labels).map(|(p, y)| p == y));
    }
    Ok(out)
}

/// Fraction of correctly classified samples, natural when `spec` is `None`.
pub fn evaluate(params: &ModelParameters, dataset: &Dataset, spec: Option<&PerturbationSpec>) -> Result<f64> {
    let mask = correct_mask(params, dataset, spec)?;
    Ok(mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64)
}
