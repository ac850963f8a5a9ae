//! Ranking metrics and the FLOPs accounting model.

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{Result, TsqError};
use crate::linear::argmax;

/// Non-interpolated average precision of each class column, averaged over
/// the classes that have at least one positive. Score ties rank the lower
/// row index first.
pub fn mean_average_precision(scores: &Mat, labels: &[usize]) -> Result<f64> {
    let (n, c) = scores.dim();
    if n == 0 || labels.len() != n {
        return Err(TsqError::mismatch("mAP labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(TsqError::mismatch("mAP label range", format!("< {c}"), bad));
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for class in 0..c {
        let positives = labels.iter().filter(|&&y| y == class).count();
        if positives == 0 {
            log::warn!("class {class} has no positives; excluded from mAP");
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[[b, class]]
                .total_cmp(&scores[[a, class]])
                .then(a.cmp(&b))
        });
        let (mut hits, mut ap) = (0usize, 0.0);
        for (rank, &i) in order.iter().enumerate() {
            if labels[i] == class {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        sum += ap / positives as f64;
        counted += 1;
    }
    Ok(sum / counted as f64)
}

/// Fraction of rows whose arg-max (lower index on ties) equals the label.
pub fn top1_accuracy(scores: &Mat, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() || labels.is_empty() {
        return Err(TsqError::mismatch(
            "top-1 labels",
            scores.nrows(),
            labels.len(),
        ));
    }
    let correct = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(&row.to_vec()) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsComponent {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    /// GFLOPs per frame.
    pub flops_per_frame: f64,
    pub frame_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsHead {
    pub name: String,
    /// GFLOPs per video.
    pub flops: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlopsConfig {
    pub components: Vec<FlopsComponent>,
    pub heads: Vec<FlopsHead>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsRow {
    pub name: String,
    pub detail: String,
    pub raw: f64,
    /// Rounded half-up to two decimals.
    pub rounded: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub rows: Vec<FlopsRow>,
    /// Sum of the rounded rows, so the total matches the printed rows.
    pub total: f64,
    pub total_raw: f64,
}

// Costs are handled as integer micro-GFLOPs so rounding is decimal-exact.
const MICRO: i128 = 1_000_000;

fn to_micro(name: &str, gflops: f64) -> Result<i128> {
    if !(gflops.is_finite() && gflops >= 0.0) {
        return Err(TsqError::InvalidConfig(format!(
            "cost of {name} must be finite and >= 0, got {gflops}"
        )));
    }
    if gflops > 1e12 {
        return Err(TsqError::InvalidConfig(format!(
            "cost of {name} is implausibly large"
        )));
    }
    Ok((gflops * MICRO as f64).round() as i128)
}

/// Rounds micro units half-up to `decimals` places, returned in those units.
fn round_micro(micro: i128, decimals: u32) -> i128 {
    let unit = MICRO / 10i128.pow(decimals);
    (micro + unit / 2) / unit
}

fn decimal(units: i128, decimals: u32) -> String {
    let scale = 10i128.pow(decimals);
    format!(
        "{}.{:0width$}",
        units / scale,
        units % scale,
        width = decimals as usize
    )
}

impl FlopsConfig {
    pub fn validate(&self) -> Result<()> {
        self.breakdown().map(|_| ())
    }

    pub fn breakdown(&self) -> Result<FlopsBreakdown> {
        let mut lines = Vec::new();
        for c in &self.components {
            let per = to_micro(&c.name, c.flops_per_frame)?;
            let detail = format!(
                "{} x {} frames",
                decimal(round_micro(per, 3), 3),
                c.frame_count
            );
            let micro = per
                .checked_mul(c.frame_count as i128)
                .filter(|m| *m < MICRO * 1_000_000_000_000)
                .ok_or_else(|| TsqError::InvalidConfig(format!("cost of {} overflows", c.name)))?;
            lines.push((c.name.clone(), detail, micro));
        }
        for h in &self.heads {
            lines.push((h.name.clone(), String::new(), to_micro(&h.name, h.flops)?));
        }
        let mut rows = Vec::with_capacity(lines.len());
        let (mut total_centi, mut total_micro) = (0i128, 0i128);
        for (name, detail, micro) in lines {
            let centi = round_micro(micro, 2);
            total_centi += centi;
            total_micro += micro;
            rows.push(FlopsRow {
                name,
                detail,
                raw: micro as f64 / MICRO as f64,
                rounded: centi as f64 / 100.0,
            });
        }
        Ok(FlopsBreakdown {
            rows,
            total: total_centi as f64 / 100.0,
            total_raw: total_micro as f64 / MICRO as f64,
        })
    }
}

/// Total GFLOPs: rounded-row sum, or the exact sum when `rounded` is false.
pub fn flops_total(config: &FlopsConfig, rounded: bool) -> Result<f64> {
    let b = config.breakdown()?;
    Ok(if rounded { b.total } else { b.total_raw })
}

impl FlopsBreakdown {
    /// Table layout: one line per row, then `Total <x>G`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let label = match r.name.as_str() {
                n if r.detail.is_empty() => n.to_string(),
                n => format!("{n} ({})", r.detail),
            };
            out.push_str(&format!("{label:<36} {:>8.2}G\n", r.rounded));
        }
        out.push_str(&format!("Total {:.2}G\n", self.total));
        out
    }
}
