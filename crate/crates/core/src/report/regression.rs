use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyRow {
    pub model: String,
    pub task: String,
    pub accuracy: f64,
}

/// Observed accuracies, one per (model, task) pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn new(rows: Vec<AccuracyRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(Error::Validation(format!(
                    "accuracy {} for ({}, {}) outside [0, 1]",
                    r.accuracy, r.model, r.task
                )));
            }
            if !seen.insert((r.model.as_str(), r.task.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate accuracy for model `{}` on task `{}`",
                    r.model, r.task
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Collects the overall `mean` rows of evaluation report CSVs
    /// (`task,rep,probe,split,speaker,accuracy`); the model is `rep`.
    pub fn from_eval_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["task", "rep", "probe", "split", "speaker", "accuracy"] {
            return Err(Error::Format(format!("unexpected report header: {:?}", headers)));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            if &rec[3] == "mean" && &rec[4] == "all" {
                rows.push(AccuracyRow {
                    model: rec[1].to_string(),
                    task: rec[0].to_string(),
                    accuracy: rec[5]
                        .parse()
                        .map_err(|_| Error::Format(format!("bad accuracy `{}`", &rec[5])))?,
                });
            }
        }
        Self::new(rows)
    }

    /// Reads a `model,task,accuracy` CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
            if rec.len() != 3 {
                return Err(Error::Format(format!("{}: expected model,task,accuracy", path.display())));
            }
            rows.push(AccuracyRow {
                model: rec[0].to_string(),
                task: rec[1].to_string(),
                accuracy: rec[2]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad accuracy `{}`", &rec[2])))?,
            });
        }
        Self::new(rows)
    }
}

/// Coefficients of `accuracy ~ intercept + model + task`; the
/// lexicographically first model and task are the zero-effect references.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectReport {
    pub intercept: f64,
    /// Every model level, reference included at 0.
    pub model_effects: Vec<(String, f64)>,
    pub task_effects: Vec<(String, f64)>,
    pub r_squared: f64,
    pub n_observations: usize,
}

impl EffectReport {
    pub fn model_effect(&self, model: &str) -> Option<f64> {
        self.model_effects.iter().find(|(m, _)| m == model).map(|(_, c)| *c)
    }

    pub fn task_effect(&self, task: &str) -> Option<f64> {
        self.task_effects.iter().find(|(t, _)| t == task).map(|(_, c)| *c)
    }

    /// Fitted accuracy for a (model, task) pair.
    pub fn predict(&self, model: &str, task: &str) -> Option<f64> {
        Some(self.intercept + self.model_effect(model)? + self.task_effect(task)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("term,level,coefficient\n");
        let _ = writeln!(out, "intercept,,{}", self.intercept);
        for (m, c) in &self.model_effects {
            let _ = writeln!(out, "model,{},{}", m, c);
        }
        for (t, c) in &self.task_effects {
            let _ = writeln!(out, "task,{},{}", t, c);
        }
        let _ = writeln!(out, "r_squared,,{}", self.r_squared);
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::from("model effects on accuracy\n");
        for (m, c) in &self.model_effects {
            let _ = writeln!(out, "  {:<32} {:+.4}", m, c);
        }
        let _ = writeln!(out, "task effects");
        for (t, c) in &self.task_effects {
            let _ = writeln!(out, "  {:<32} {:+.4}", t, c);
        }
        let _ = writeln!(out, "intercept {:.4}  R² {:.4}  n {}", self.intercept, self.r_squared, self.n_observations);
        out
    }
}

/// Ordinary least squares with one indicator per non-reference level.
pub fn model_effect_regression(table: &AccuracyTable) -> Result<EffectReport> {
    let models: Vec<String> = table.rows.iter().map(|r| r.model.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let tasks: Vec<String> = table.rows.iter().map(|r| r.task.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if models.len() < 2 || tasks.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 models and 2 tasks, got {} and {}",
            models.len(),
            tasks.len()
        )));
    }
    let model_col: BTreeMap<&str, usize> = models.iter().skip(1).enumerate().map(|(i, m)| (m.as_str(), 1 + i)).collect();
    let offset = models.len();
    let task_col: BTreeMap<&str, usize> = tasks.iter().skip(1).enumerate().map(|(i, t)| (t.as_str(), offset + i)).collect();
    let p = models.len() + tasks.len() - 1;
    let n = table.rows.len();
    if n < p {
        return Err(Error::DegenerateFit(format!("{} observations for {} coefficients", n, p)));
    }
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (i, r) in table.rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        if let Some(&c) = model_col.get(r.model.as_str()) {
            x[(i, c)] = 1.0;
        }
        if let Some(&c) = task_col.get(r.task.as_str()) {
            x[(i, c)] = 1.0;
        }
        y[i] = r.accuracy;
    }
    let column_name = |c: usize| -> String {
        match c {
            0 => "intercept".to_string(),
            c if c < offset => format!("model `{}`", models[c]),
            c => format!("task `{}`", tasks[c - offset + 1]),
        }
    };

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    let collinear: Vec<String> = (0..p)
        .filter(|&j| r[(j, j)].abs() <= 1e-10 * scale)
        .map(column_name)
        .collect();
    if !collinear.is_empty() {
        return Err(Error::DegenerateFit(format!(
            "design matrix is rank deficient; collinear levels: {}",
            collinear.join(", ")
        )));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::DegenerateFit("triangular solve failed".into()))?;

    let fitted = &x * &beta;
    let mean = y.mean();
    let ss_res: f64 = (&y - &fitted).norm_squared();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };

    let model_effects = models
        .iter()
        .map(|m| (m.clone(), model_col.get(m.as_str()).map_or(0.0, |&c| beta[c])))
        .collect();
    let task_effects = tasks
        .iter()
        .map(|t| (t.clone(), task_col.get(t.as_str()).map_or(0.0, |&c| beta[c])))
        .collect();
    Ok(EffectReport {
        intercept: beta[0],
        model_effects,
        task_effects,
        r_squared,
        n_observations: n,
    })
}
