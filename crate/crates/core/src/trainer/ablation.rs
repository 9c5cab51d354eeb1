use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Split};
use crate::error::{Error, Result};
use crate::trainer::{evaluate_split_detailed, train, TrainConfig};

/// Axis names accepted by [`set_axis`].
pub const AXES: &[&str] = &[
    "lambda0",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda",
    "alpha",
    "beta",
    "gamma",
    "k",
    "train_snippets",
    "learning_rate",
    "epochs",
    "zeta",
    "nms_iou",
    "class_gate",
    "use_bcl",
    "use_sal",
    "use_ssal",
    "use_hal",
    "use_sparsity",
    "use_guide",
];

pub const DEFAULT_GRID_CAP: usize = 64;

fn as_count(axis: &str, value: f64) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value < 1e9 {
        Ok(value as usize)
    } else {
        Err(Error::invalid(format!("{axis} needs a positive integer, got {value}")))
    }
}

/// Set one named hyperparameter. `lambda` sets the semi-soft and hard
/// weights together; `use_*` axes switch a loss off (0) or leave it at its
/// configured weight (1).
pub fn set_axis(config: &mut TrainConfig, axis: &str, value: f64) -> Result<()> {
    match axis {
        "lambda0" => config.lambda0 = value,
        "lambda1" => config.lambda1 = value,
        "lambda2" => config.lambda2 = value,
        "lambda3" => config.lambda3 = value,
        "lambda" => {
            config.lambda2 = value;
            config.lambda3 = value;
        }
        "alpha" => config.alpha = value,
        "beta" => config.beta = value,
        "gamma" => config.gamma = value,
        "k" => config.k = Some(as_count(axis, value)?),
        "train_snippets" => config.train_snippets = Some(as_count(axis, value)?),
        "learning_rate" => config.learning_rate = value,
        "epochs" => config.epochs = as_count(axis, value)?,
        "zeta" => config.localization.zeta = value,
        "nms_iou" => config.localization.nms_iou = value,
        "class_gate" => config.localization.class_gate = value,
        toggle if toggle.starts_with("use_") => {
            let on = match value {
                0.0 => false,
                1.0 => true,
                v => return Err(Error::invalid(format!("{toggle} takes 0 or 1, got {v}"))),
            };
            let mut w = config.weights();
            let slot = w
                .get_mut(&toggle["use_".len()..])
                .ok_or_else(|| Error::invalid(format!("unknown axis {toggle:?}")))?;
            if !on {
                *slot = 0.0;
            }
            config.set_weights(&w);
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown axis {other:?}; expected one of {}",
                AXES.join(", ")
            )))
        }
    }
    config.validate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub value: f64,
    pub avg_map: f64,
    pub map_at: Vec<f64>,
    pub coverage: f64,
    pub val_avg_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub iou_thresholds: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,value,avg_map");
        for t in &self.iou_thresholds {
            write!(s, ",map@{t}").unwrap();
        }
        s.push_str(",coverage,val_avg_map\n");
        for r in &self.rows {
            write!(s, "{},{},{}", r.label, r.value, r.avg_map).unwrap();
            for m in &r.map_at {
                write!(s, ",{m}").unwrap();
            }
            writeln!(s, ",{},{}", r.coverage, r.val_avg_map).unwrap();
        }
        s
    }
}

/// Train with `config`, then score the selected checkpoint on the test split.
fn train_and_test(corpus: &Corpus, config: &TrainConfig, label: String, value: f64) -> Result<AblationRow> {
    let outcome = train(corpus, config)?;
    let (report, coverage) = evaluate_split_detailed(&outcome.best, corpus, Split::Test, config)?;
    Ok(AblationRow {
        label,
        value,
        avg_map: report.avg_map,
        map_at: report.map_at,
        coverage,
        val_avg_map: outcome.best_val_avg_map,
    })
}

/// Train once per labelled configuration, in parallel, rows in input order.
pub fn run_configs(corpus: &Corpus, runs: &[(String, f64, TrainConfig)]) -> Result<Vec<AblationRow>> {
    runs.par_iter()
        .map(|(label, value, cfg)| train_and_test(corpus, cfg, label.clone(), *value))
        .collect()
}

/// One training run per value of `axis`, all sharing the base seed.
pub fn ablate(corpus: &Corpus, base: &TrainConfig, axis: &str, values: &[f64]) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::invalid("ablation needs at least one value"));
    }
    let runs = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            set_axis(&mut cfg, axis, v)?;
            Ok((format!("{axis}={v}"), v, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        axis: axis.to_string(),
        iou_thresholds: base.iou_thresholds.clone(),
        rows: run_configs(corpus, &runs)?,
    })
}

/// Which of the six losses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub bcl: bool,
    pub sal: bool,
    pub hal: bool,
    pub ssal: bool,
    pub sparsity: bool,
    pub guide: bool,
}

impl LossToggles {
    pub fn apply(&self, config: &TrainConfig) -> TrainConfig {
        let mut c = config.clone();
        let mut w = c.weights();
        for (on, slot) in [
            (self.bcl, &mut w.bcl),
            (self.sal, &mut w.sal),
            (self.ssal, &mut w.ssal),
            (self.hal, &mut w.hal),
            (self.sparsity, &mut w.sparsity),
            (self.guide, &mut w.guide),
        ] {
            if !on {
                *slot = 0.0;
            }
        }
        c.set_weights(&w);
        c
    }
}

/// The eleven loss combinations of the loss ablation, in order.
pub fn table1_plan() -> Vec<LossToggles> {
    // Columns: SAL, HAL, SSAL, sparsity, guide. BCL is always on.
    const ROWS: [[bool; 5]; 11] = [
        [false, false, false, false, false],
        [true, false, false, false, false],
        [true, false, false, false, true],
        [true, false, false, true, false],
        [true, false, false, true, true],
        [true, true, true, false, false],
        [true, true, true, false, true],
        [true, true, true, true, false],
        [true, true, false, true, true],
        [true, false, true, true, true],
        [true, true, true, true, true],
    ];
    ROWS.iter()
        .map(|r| LossToggles {
            bcl: true,
            sal: r[0],
            hal: r[1],
            ssal: r[2],
            sparsity: r[3],
            guide: r[4],
        })
        .collect()
}

pub fn run_table1(corpus: &Corpus, base: &TrainConfig) -> Result<AblationTable> {
    let runs: Vec<(String, f64, TrainConfig)> = table1_plan()
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("exp{}", i + 1), (i + 1) as f64, t.apply(base)))
        .collect();
    Ok(AblationTable {
        axis: "table1".into(),
        iou_thresholds: base.iou_thresholds.clone(),
        rows: run_configs(corpus, &runs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    /// `(axis, value)` in axis order.
    pub point: Vec<(String, f64)>,
    pub val_avg_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_point: Vec<(String, f64)>,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if let Some(first) = self.rows.first() {
            for (axis, _) in &first.point {
                write!(s, "{axis},").unwrap();
            }
        }
        s.push_str("val_avg_map\n");
        for r in &self.rows {
            for (_, v) in &r.point {
                write!(s, "{v},").unwrap();
            }
            writeln!(s, "{}", r.val_avg_map).unwrap();
        }
        s
    }
}

/// Exhaustive search over the Cartesian product of `grid`, selecting by
/// validation avg mAP; ties go to the lexicographically smallest point.
pub fn grid_search(
    corpus: &Corpus,
    base: &TrainConfig,
    grid: &BTreeMap<String, Vec<f64>>,
    cap: usize,
) -> Result<GridResult> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(Error::invalid("grid needs at least one axis, each with values"));
    }
    let count = grid.values().try_fold(1usize, |acc, v| acc.checked_mul(v.len()));
    match count {
        Some(n) if n <= cap => {}
        n => {
            return Err(Error::invalid(format!(
                "grid has {} points, cap is {cap}",
                n.map_or("too many".to_string(), |n| n.to_string())
            )))
        }
    }
    let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (axis, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((axis.clone(), v));
                    q
                })
            })
            .collect();
    }
    let configs = points
        .iter()
        .map(|p| {
            let mut cfg = base.clone();
            for (axis, v) in p {
                set_axis(&mut cfg, axis, *v)?;
            }
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = configs
        .par_iter()
        .map(|cfg| train(corpus, cfg).map(|o| o.best_val_avg_map))
        .collect::<Result<_>>()?;

    let lexi = |a: &[(String, f64)], b: &[(String, f64)]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.1.total_cmp(&y.1))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    let mut best = 0;
    for i in 1..points.len() {
        let better = scores[i] > scores[best] || (scores[i] == scores[best] && lexi(&points[i], &points[best]).is_lt());
        if better {
            best = i;
        }
    }
    Ok(GridResult {
        best: configs[best].clone(),
        best_point: points[best].clone(),
        rows: points
            .into_iter()
            .zip(scores)
            .map(|(point, val_avg_map)| GridRow { point, val_avg_map })
            .collect(),
    })
}
