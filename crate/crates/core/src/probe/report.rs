use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Category, Metric};
use crate::bench::quantile;
use crate::error::{Error, Result};

/// Best challenge score per task.
pub type ReferenceTable = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    pub task: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub raw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub raw: f64,
    pub reference_max: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl CategoryStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(CategoryStats {
            n: s.len(),
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tasks: Vec<TaskScore>,
    pub categories: BTreeMap<Category, CategoryStats>,
}

pub fn normalize_and_aggregate(raw: &[RawScore], reference: &ReferenceTable) -> Result<ScoreReport> {
    let mut tasks = Vec::with_capacity(raw.len());
    for r in raw {
        let max = *reference
            .get(&r.task)
            .ok_or_else(|| Error::Config(format!("no reference score for task {:?}", r.task)))?;
        if max == 0.0 || !max.is_finite() {
            return Err(Error::Config(format!("reference score for {:?} is {max}", r.task)));
        }
        tasks.push(TaskScore {
            task: r.task.clone(),
            category: r.category,
            metric: r.metric,
            raw: r.raw,
            reference_max: max,
            normalized: r.raw / max,
        });
    }
    let mut by_cat: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    for t in &tasks {
        by_cat.entry(t.category).or_default().push(t.normalized);
    }
    let categories = by_cat
        .into_iter()
        .filter_map(|(c, v)| CategoryStats::of(&v).map(|s| (c, s)))
        .collect();
    Ok(ScoreReport { tasks, categories })
}

impl ScoreReport {
    pub fn tasks_csv(&self) -> String {
        let mut out = String::from("task,category,metric,raw,reference_max,normalized\n");
        for t in &self.tasks {
            let metric = t.metric.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&t.task),
                t.category,
                metric,
                t.raw,
                t.reference_max,
                t.normalized
            );
        }
        out
    }

    /// Per-category box statistics, one row per category.
    pub fn categories_csv(&self) -> String {
        let mut out = String::from("category,n,min,q1,median,q3,max\n");
        for (c, s) in &self.categories {
            let _ = writeln!(out, "{c},{},{},{},{},{},{}", s.n, s.min, s.q1, s.median, s.q3, s.max);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Naming of the 19 challenge tasks with their category buckets.
pub fn hear_tasks() -> Vec<(&'static str, Category)> {
    use Category::*;
    vec![
        ("Beehive States", General),
        ("Beijing Opera Percussion", Music),
        ("CREMA-D", Speech),
        ("DCASE 2016 Task 2", General),
        ("ESC-50", General),
        ("FSD50K", General),
        ("GTZAN Genre", Music),
        ("GTZAN Music Speech", General),
        ("Gunshot Triangulation", General),
        ("LibriCount", Speech),
        ("MAESTRO 5h", Music),
        ("Mridingham Stroke", Music),
        ("Mridingham Tonic", Music),
        ("NSynth Pitch 5h", Music),
        ("NSynth Pitch 50h", Music),
        ("Speech Commands 5h", Speech),
        ("Speech Commands full", Speech),
        ("Vocal Imitations", General),
        ("VoxLingua107 Top 10", Speech),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(task: &str, category: Category, v: f64) -> RawScore {
        RawScore {
            task: task.into(),
            category,
            metric: None,
            raw: v,
        }
    }

    #[test]
    fn general_fixture() {
        let scores = vec![
            raw("a", Category::General, 0.9),
            raw("b", Category::General, 0.8),
            raw("c", Category::General, 1.0),
        ];
        let refs: ReferenceTable = [("a", 1.0), ("b", 1.0), ("c", 1.0)].map(|(k, v)| (k.to_string(), v)).into();
        let r = normalize_and_aggregate(&scores, &refs).unwrap();
        let g = &r.categories[&Category::General];
        assert_eq!((g.median, g.min, g.max), (0.9, 0.8, 1.0));
    }

    #[test]
    fn missing_and_zero_reference() {
        let scores = vec![raw("a", Category::Music, 0.5)];
        assert!(normalize_and_aggregate(&scores, &ReferenceTable::new()).is_err());
        let zero: ReferenceTable = [("a".to_string(), 0.0)].into();
        assert!(normalize_and_aggregate(&scores, &zero).is_err());
    }

    #[test]
    fn csv_layout() {
        let scores = vec![raw("x,y", Category::Speech, 0.5)];
        let refs: ReferenceTable = [("x,y".to_string(), 0.5)].into();
        let r = normalize_and_aggregate(&scores, &refs).unwrap();
        assert_eq!(r.tasks_csv().lines().nth(1).unwrap(), "\"x,y\",speech,,0.5,0.5,1");
        assert_eq!(r.categories_csv().lines().nth(1).unwrap(), "speech,1,1,1,1,1,1");
    }

    #[test]
    fn bucket_sizes() {
        let mut counts = BTreeMap::new();
        for (_, c) in hear_tasks() {
            *counts.entry(c).or_insert(0) += 1;
        }
        assert_eq!(counts[&Category::Speech], 5);
        assert_eq!(counts[&Category::Music], 7);
        assert_eq!(counts[&Category::General], 7);
    }
}
