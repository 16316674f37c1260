//! Gallery/probe retrieval metrics: rank-1, mAP, and mINP.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{bail, Result};
use crate::math;
use crate::model::GaitEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Percentages in `[0, 100]`.
    pub rank1: f64,
    pub map: f64,
    pub minp: f64,
    /// Average precision (fraction) of every evaluated probe, in probe order.
    pub per_query_ap: Vec<f64>,
    /// Probes skipped because no gallery sample shares their identity.
    pub excluded: Vec<String>,
}

impl EvalResult {
    pub fn evaluated(&self) -> usize {
        self.per_query_ap.len()
    }
}

/// Euclidean retrieval. See [`evaluate_with`].
pub fn evaluate(gallery: &[GaitEmbedding], probes: &[GaitEmbedding]) -> Result<EvalResult> {
    evaluate_with(gallery, probes, math::euclidean)
}

/// Ranks the gallery for each probe by `distance`, ties broken by sample id.
/// A gallery entry with the probe's own sample id is never a candidate.
pub fn evaluate_with<D>(gallery: &[GaitEmbedding], probes: &[GaitEmbedding], distance: D) -> Result<EvalResult>
where
    D: Fn(&[f64], &[f64]) -> f64,
{
    let mut hits = 0usize;
    let mut ap_sum = 0.0;
    let mut inp_sum = 0.0;
    let mut per_query_ap = Vec::with_capacity(probes.len());
    let mut excluded = Vec::new();
    for probe in probes {
        let mut ranked: Vec<(f64, &GaitEmbedding)> = gallery
            .iter()
            .filter(|g| g.sample_id != probe.sample_id)
            .map(|g| (distance(&probe.f_gait, &g.f_gait), g))
            .collect();
        if let Some((d, g)) = ranked.iter().find(|(d, _)| d.is_nan()) {
            bail!(Numeric, "distance {d} between '{}' and '{}'", probe.sample_id, g.sample_id);
        }
        if !ranked.iter().any(|(_, g)| g.label == probe.label) {
            excluded.push(probe.sample_id.clone());
            continue;
        }
        ranked.sort_by(|a, b| match a.0.total_cmp(&b.0) {
            Ordering::Equal => a.1.sample_id.cmp(&b.1.sample_id),
            o => o,
        });
        if ranked[0].1.label == probe.label {
            hits += 1;
        }
        let mut found = 0usize;
        let mut precision_sum = 0.0;
        let mut last_rank = 0usize;
        for (r, (_, g)) in ranked.iter().enumerate() {
            if g.label == probe.label {
                found += 1;
                precision_sum += found as f64 / (r + 1) as f64;
                last_rank = r + 1;
            }
        }
        let ap = precision_sum / found as f64;
        per_query_ap.push(ap);
        ap_sum += ap;
        inp_sum += found as f64 / last_rank as f64;
    }
    let n = per_query_ap.len();
    if n == 0 {
        bail!(Data, "no probe has a gallery sample of the same identity");
    }
    let pct = |v: f64| 100.0 * v / n as f64;
    Ok(EvalResult {
        rank1: pct(hits as f64),
        map: pct(ap_sum),
        minp: pct(inp_sum),
        per_query_ap,
        excluded,
    })
}
