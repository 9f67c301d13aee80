use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TopK;
use crate::objective::ViewSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SubjectDependent,
    Loso,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::SubjectDependent => "subject_dependent",
            Protocol::Loso => "loso",
        }
    }
}

/// One trained model evaluated on one subject's test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: String,
    pub seed: u64,
    /// Keyed by "BOM", "FO", "RS", "Triple".
    pub views: BTreeMap<String, TopK>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSummary {
    pub mean: TopK,
    pub std: TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub runs: Vec<SubjectResult>,
    /// Across all runs, per view.
    pub summary: BTreeMap<String, ViewSummary>,
    /// Fully resolved run configuration.
    pub config: serde_json::Value,
}

fn check_topk(t: &TopK, ctx: &str) -> Result<()> {
    let a = t.as_array();
    if a.iter().any(|v| !(0.0..=1.0).contains(v)) || a[0] > a[1] || a[1] > a[2] {
        return Err(Error::InvalidArgument(format!(
            "{ctx}: top-k accuracies {a:?} are not ordered within [0, 1]"
        )));
    }
    Ok(())
}

impl RetrievalReport {
    pub fn new(protocol: Protocol, runs: Vec<SubjectResult>, config: serde_json::Value) -> Result<Self> {
        let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut per_view: BTreeMap<String, Vec<TopK>> = BTreeMap::new();
        for r in &runs {
            for (v, t) in &r.views {
                check_topk(t, &format!("subject {} seed {} view {v}", r.subject, r.seed))?;
                per_view.entry(v.clone()).or_default().push(*t);
            }
        }
        let summary = per_view
            .into_iter()
            .map(|(v, ts)| {
                let (mean, std) = TopK::mean_std(&ts);
                (v, ViewSummary { mean, std })
            })
            .collect();
        Ok(Self {
            protocol,
            seeds,
            runs,
            summary,
            config,
        })
    }

    /// Long-format CSV: one row per run and view, then `mean`/`std` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["protocol", "subject", "seed", "view", "top1", "top3", "top5"])?;
        let p = self.protocol.as_str();
        for r in &self.runs {
            for (v, t) in &r.views {
                w.write_record([p, &r.subject, &r.seed.to_string(), v, &fmt(t.top1), &fmt(t.top3), &fmt(t.top5)])?;
            }
        }
        for (v, s) in &self.summary {
            for (tag, t) in [("mean", s.mean), ("std", s.std)] {
                w.write_record([p, tag, "", v, &fmt(t.top1), &fmt(t.top3), &fmt(t.top5)])?;
            }
        }
        finish(w)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// One view subset, with or without cross-attention, over repeated seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub views: ViewSet,
    pub cross_attention: bool,
    pub mean: TopK,
    pub std: TopK,
    pub per_seed: Vec<TopK>,
}

impl AblationRow {
    pub fn new(views: ViewSet, cross_attention: bool, per_seed: Vec<TopK>) -> Self {
        let (mean, std) = TopK::mean_std(&per_seed);
        Self {
            views,
            cross_attention,
            mean,
            std,
            per_seed,
        }
    }

    pub fn label(&self) -> String {
        if self.cross_attention {
            self.views.label()
        } else {
            format!("{} w/o C-Att", self.views.label())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub config: serde_json::Value,
}

impl AblationTable {
    pub fn row(&self, views: ViewSet, cross_attention: bool) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.views == views && r.cross_attention == cross_attention)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["views", "cross_attention", "top1_mean", "top1_std", "top3_mean", "top3_std", "top5_mean", "top5_std"])?;
        for r in &self.rows {
            let (m, s) = (r.mean.as_array(), r.std.as_array());
            w.write_record([
                r.views.label(),
                r.cross_attention.to_string(),
                fmt(m[0]),
                fmt(s[0]),
                fmt(m[1]),
                fmt(s[1]),
                fmt(m[2]),
                fmt(s[2]),
            ])?;
        }
        finish(w)
    }

    /// Percentages as `mean ± std`, one row per configuration.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Method | Top-1 (%) | Top-3 (%) | Top-5 (%) |\n|---|---|---|---|\n");
        for r in &self.rows {
            let (m, s) = (r.mean.as_array(), r.std.as_array());
            out.push_str(&format!("| {} |", r.label()));
            for i in 0..3 {
                out.push_str(&format!(" {:.1} ± {:.1} |", 100.0 * m[i], 100.0 * s[i]));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::View;

    fn run(seed: u64, top1: f64) -> SubjectResult {
        SubjectResult {
            subject: "sub-01".into(),
            seed,
            views: [("Triple".to_string(), TopK::from_array([top1, 0.8, 0.9]))].into(),
        }
    }

    #[test]
    fn summary_over_seeds() {
        let r = RetrievalReport::new(Protocol::SubjectDependent, vec![run(1, 0.5), run(0, 0.7)], serde_json::json!({})).unwrap();
        assert_eq!(r.seeds, vec![0, 1]);
        let s = r.summary["Triple"];
        assert!((s.mean.top1 - 0.6).abs() < 1e-12);
        assert!((s.std.top1 - 0.02f64.sqrt()).abs() < 1e-12);
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 + 2);
        assert!(csv.starts_with("protocol,subject,seed,view,top1,top3,top5\nsubject_dependent,sub-01,1,Triple,0.500000"));
        let back: RetrievalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn unordered_topk_rejected() {
        let e = RetrievalReport::new(Protocol::Loso, vec![run(0, 0.95)], serde_json::Value::Null).unwrap_err();
        assert!(e.to_string().contains("not ordered"));
    }

    #[test]
    fn ablation_rendering() {
        let t = AblationTable {
            seeds: vec![0],
            rows: vec![
                AblationRow::new(ViewSet::TRIPLE, true, vec![TopK::from_array([0.5, 0.7, 0.8])]),
                AblationRow::new(ViewSet::new(&[View::Contour]).unwrap(), false, vec![TopK::from_array([0.25, 0.5, 0.6])]),
            ],
            config: serde_json::Value::Null,
        };
        let md = t.to_markdown();
        assert!(md.contains("| Triple | 50.0 ± 0.0 | 70.0 ± 0.0 | 80.0 ± 0.0 |"), "{md}");
        assert!(md.contains("| BOM w/o C-Att | 25.0"), "{md}");
        assert_eq!(t.to_csv().unwrap().lines().nth(2).unwrap(), "BOM,false,0.250000,0.000000,0.500000,0.000000,0.600000,0.000000");
        assert!(t.row(ViewSet::TRIPLE, true).is_some());
        assert!(t.row(ViewSet::TRIPLE, false).is_none());
    }
}
