//! Per-pair exports: the Δ_d / ŷ_o scatter and the slope report over
//! neighbouring scans.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{predict_pairs, PreparedPair};
use crate::model::{AlphaTable, ModelParams};
use crate::pipeline::Dataset;
use crate::synthgen::{PairSample, Progression};

pub const DEFAULT_GAMMA_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub pair_id: usize,
    pub delta: f64,
    pub y_o: f64,
    pub label: Progression,
    pub clean_label: Progression,
}

/// One row per prepared pair, in pair_id order.
pub fn delta_scatter(params: &ModelParams, dataset: &Dataset, pairs: &[PreparedPair]) -> Result<Vec<ScatterRow>> {
    let outputs = predict_pairs(params, pairs)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (p, out) in pairs.iter().zip(outputs) {
        let pred = out
            .ordinal()
            .ok_or_else(|| Error::Invalid("delta scatter needs an ordinal model".into()))?;
        rows.push(ScatterRow {
            pair_id: p.pair_id,
            delta: pred.delta,
            y_o: pred.y_o,
            label: p.label,
            clean_label: dataset.pairs()[p.index].clean_label,
        });
    }
    rows.sort_by_key(|r| r.pair_id);
    Ok(rows)
}

pub fn write_csv_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("flushing csv: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    BetterWorse,
    BetterStable,
    WorseStable,
    SameLabel,
}

impl Transition {
    pub const ALL: [Transition; 4] = [
        Transition::BetterWorse,
        Transition::BetterStable,
        Transition::WorseStable,
        Transition::SameLabel,
    ];

    /// None when either side is OTHER.
    pub fn of(a: Progression, b: Progression) -> Option<Self> {
        use Progression::*;
        match (a, b) {
            (Other, _) | (_, Other) => None,
            _ if a == b => Some(Transition::SameLabel),
            (Better, Worse) | (Worse, Better) => Some(Transition::BetterWorse),
            (Better, Stable) | (Stable, Better) => Some(Transition::BetterStable),
            _ => Some(Transition::WorseStable),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transition::BetterWorse => "better_worse",
            Transition::BetterStable => "better_stable",
            Transition::WorseStable => "worse_stable",
            Transition::SameLabel => "same_label",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub n_pairs: usize,
    pub n_below: usize,
    pub fraction_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGamma {
    pub pair_id: usize,
    pub gamma: f64,
    pub label: Progression,
    pub clean_label: Progression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub threshold: f64,
    pub pairs: Vec<PairGamma>,
    /// The four transition groups, then the pooled better/worse-to-stable group.
    pub groups: Vec<GroupStat>,
}

impl GammaReport {
    pub fn group(&self, name: &str) -> Option<&GroupStat> {
        self.groups.iter().find(|g| g.group == name)
    }
}

fn group_stat(name: &str, members: &BTreeSet<usize>, gamma: &BTreeMap<usize, f64>, threshold: f64) -> GroupStat {
    let n_below = members.iter().filter(|id| gamma[id] < threshold).count();
    GroupStat {
        group: name.to_string(),
        n_pairs: members.len(),
        n_below,
        fraction_below: if members.is_empty() {
            0.0
        } else {
            n_below as f64 / members.len() as f64
        },
    }
}

/// Groups pairs by the label of the pair on a neighbouring scan (same
/// patient and visit pair, scan index ±1). A pair belongs to every group
/// one of its neighbours puts it in. Only pairs accepted by `include` count.
pub fn gamma_adjacency_report(
    alpha: &AlphaTable,
    dataset: &Dataset,
    include: &dyn Fn(&PairSample) -> bool,
    threshold: f64,
) -> Result<GammaReport> {
    let selected: Vec<&PairSample> = dataset.pairs().iter().filter(|p| include(p)).collect();
    let by_key: BTreeMap<(usize, usize, usize, usize), &PairSample> = selected
        .iter()
        .map(|p| ((p.patient_id, p.visit_from, p.visit_to, p.scan_index), *p))
        .collect();
    let gamma: BTreeMap<usize, f64> = selected.iter().map(|p| (p.pair_id, alpha.gamma(p.pair_id))).collect();

    let mut members: BTreeMap<Transition, BTreeSet<usize>> = Transition::ALL.iter().map(|&t| (t, BTreeSet::new())).collect();
    let mut edges = 0usize;
    for (&(pat, vf, vt, scan), p) in &by_key {
        if let Some(q) = by_key.get(&(pat, vf, vt, scan + 1)) {
            edges += 1;
            if let Some(t) = Transition::of(p.label, q.label) {
                let set = members.get_mut(&t).expect("all transitions present");
                set.insert(p.pair_id);
                set.insert(q.pair_id);
            }
        }
    }
    if edges == 0 {
        return Err(Error::Invalid("no adjacent scans among the selected pairs".into()));
    }

    let mut groups: Vec<GroupStat> = Transition::ALL
        .iter()
        .map(|t| group_stat(t.name(), &members[t], &gamma, threshold))
        .collect();
    let pooled: BTreeSet<usize> = members[&Transition::BetterStable]
        .union(&members[&Transition::WorseStable])
        .copied()
        .collect();
    groups.push(group_stat("progression_stable", &pooled, &gamma, threshold));

    let pairs = selected
        .iter()
        .map(|p| PairGamma {
            pair_id: p.pair_id,
            gamma: gamma[&p.pair_id],
            label: p.label,
            clean_label: p.clean_label,
        })
        .collect();
    Ok(GammaReport {
        threshold,
        pairs,
        groups,
    })
}
