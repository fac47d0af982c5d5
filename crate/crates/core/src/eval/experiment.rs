use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::align::{pose_error_2d, pose_error_3d};
use super::synth::{generate_scenario, GeneratedScenario, Scenario};
use crate::error::{Error, Result};
use crate::lifter::{estimate_3d, EnergyParams, LiftResult};
use crate::mocap::{build_index, virtual_cameras};
use crate::psm::{infer_map_default, PsmModel};
use crate::skeleton::{Pose2D, Skeleton};

/// `count` scenarios sharing a template; scenario `i` uses seed `seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSuite {
    pub name: String,
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub template: Scenario,
}

impl ScenarioSuite {
    pub fn scenarios(&self) -> Vec<Scenario> {
        (0..self.count as u64)
            .map(|i| Scenario {
                seed: self.seed.wrapping_add(i),
                ..self.template.clone()
            })
            .collect()
    }
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl Cell {
    pub fn baseline() -> Cell {
        Cell {
            name: "default".into(),
            overrides: Vec::new(),
        }
    }

    pub fn apply(&self, base: &EnergyParams) -> Result<EnergyParams> {
        let mut p = base.clone();
        for (k, v) in &self.overrides {
            p.set(k, v)?;
        }
        p.validate()?;
        Ok(p)
    }
}

/// Cartesian product of sweeps such as `K=64,256` and `mode=all-only,posterior`.
/// Without sweeps there is a single baseline cell.
pub fn parse_sweeps(sweeps: &[String]) -> Result<Vec<Cell>> {
    let mut cells = vec![Cell::baseline()];
    for s in sweeps {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("sweep `{s}` is not `key=v1,v2`")))?;
        let key = key.trim();
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::InvalidParameter(format!("sweep `{s}` has no values")));
        }
        // reject unknown keys and bad values up front
        for v in &values {
            EnergyParams::default().set(key, v)?;
        }
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for c in &cells {
            for v in &values {
                let mut overrides = c.overrides.clone();
                overrides.push((key.to_owned(), (*v).to_owned()));
                let name = overrides.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
                next.push(Cell { name, overrides });
            }
        }
        cells = next;
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: usize,
    pub seed: u64,
    pub cell: String,
    pub status: String,
    pub error_3d: Option<f64>,
    /// Error of the weighted neighbour average instead of the optimized pose.
    pub error_3d_avg: Option<f64>,
    pub error_2d: Option<f64>,
    /// 2D error of the initial pictorial-structure estimate.
    pub error_2d_initial: Option<f64>,
    pub selected_set: Option<String>,
    /// 2D error after each iteration's refinement.
    pub error_2d_iterations: Vec<f64>,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Stat {
        mean: sig6(mean),
        std: sig6(var.sqrt()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub cell: String,
    pub scenarios: usize,
    pub failed: usize,
    pub error_3d: Option<Stat>,
    pub error_3d_avg: Option<Stat>,
    pub error_2d: Option<Stat>,
    pub error_2d_initial: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub params: EnergyParams,
    pub cells: Vec<String>,
    pub scenarios: Vec<Scenario>,
    pub rows: Vec<ReportRow>,
}

/// Rounds to 6 significant digits.
pub fn sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| sig6(x).to_string()).unwrap_or_default()
}

impl Report {
    /// Rows of one cell, in scenario order.
    pub fn cell_rows<'a>(&'a self, cell: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.cell == cell)
    }

    pub fn aggregate(&self) -> Vec<CellAggregate> {
        aggregate_rows(&self.cells, &self.rows)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows_csv(&self.rows, w)
    }

    /// Aggregates plus the effective configuration.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "params": self.params,
            "cells": self.cells,
            "scenarios": self.scenarios,
            "aggregate": self.aggregate(),
        })
    }

    /// Plot-ready curves: per-cell error and per-iteration 2D error.
    pub fn curves_tsv(&self) -> String {
        let mut out = String::from("cell\tmetric\tx\tmean\tstd\tn\n");
        for agg in self.aggregate() {
            for (metric, s) in [
                ("error_3d", agg.error_3d),
                ("error_3d_avg", agg.error_3d_avg),
                ("error_2d", agg.error_2d),
            ] {
                if let Some(s) = s {
                    let _ = writeln!(out, "{}\t{metric}\t-\t{}\t{}\t{}", agg.cell, s.mean, s.std, agg.scenarios - agg.failed);
                }
            }
        }
        for cell in &self.cells {
            let rows: Vec<&ReportRow> = self.cell_rows(cell).filter(|r| r.is_ok()).collect();
            let depth = rows.iter().map(|r| r.error_2d_iterations.len()).max().unwrap_or(0);
            for it in 0..depth {
                let v: Vec<f64> = rows.iter().filter_map(|r| r.error_2d_iterations.get(it).copied()).collect();
                if let Some(s) = stat(&v) {
                    let _ = writeln!(out, "{cell}\terror_2d_iteration\t{}\t{}\t{}\t{}", it + 1, s.mean, s.std, v.len());
                }
            }
        }
        out
    }
}

pub fn aggregate_rows(cells: &[String], rows: &[ReportRow]) -> Vec<CellAggregate> {
    cells
        .iter()
        .map(|cell| {
            let rows: Vec<&ReportRow> = rows.iter().filter(|r| &r.cell == cell).collect();
            let ok: Vec<&&ReportRow> = rows.iter().filter(|r| r.is_ok()).collect();
            let col = |f: fn(&ReportRow) -> Option<f64>| stat(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            CellAggregate {
                cell: cell.clone(),
                scenarios: rows.len(),
                failed: rows.len() - ok.len(),
                error_3d: col(|r| r.error_3d),
                error_3d_avg: col(|r| r.error_3d_avg),
                error_2d: col(|r| r.error_2d),
                error_2d_initial: col(|r| r.error_2d_initial),
            }
        })
        .collect()
}

const CSV_HEADER: [&str; 10] = [
    "scenario",
    "seed",
    "cell",
    "status",
    "error_3d",
    "error_3d_avg",
    "error_2d",
    "error_2d_initial",
    "selected_set",
    "error_2d_iterations",
];

pub fn write_rows_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        let its = r.error_2d_iterations.iter().map(|v| sig6(*v).to_string()).collect::<Vec<_>>().join(" ");
        out.write_record([
            r.scenario.to_string(),
            r.seed.to_string(),
            r.cell.clone(),
            r.status.clone(),
            fmt_opt(r.error_3d),
            fmt_opt(r.error_3d_avg),
            fmt_opt(r.error_2d),
            fmt_opt(r.error_2d_initial),
            r.selected_set.clone().unwrap_or_default(),
            its,
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads rows written by [`Report::write_csv`].
pub fn read_rows_csv<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Format("unexpected report CSV header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let err = |m: String| Error::Input {
            path: "report csv".into(),
            line,
            message: m,
        };
        let num = |k: usize| -> Result<Option<f64>> {
            let s = &rec[k];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| err(format!("{}: {e}", CSV_HEADER[k])))
            }
        };
        rows.push(ReportRow {
            scenario: rec[0].parse().map_err(|e| err(format!("scenario: {e}")))?,
            seed: rec[1].parse().map_err(|e| err(format!("seed: {e}")))?,
            cell: rec[2].to_owned(),
            status: rec[3].to_owned(),
            error_3d: num(4)?,
            error_3d_avg: num(5)?,
            error_2d: num(6)?,
            error_2d_initial: num(7)?,
            selected_set: Some(rec[8].to_owned()).filter(|s| !s.is_empty()),
            error_2d_iterations: rec[9]
                .split_whitespace()
                .map(|v| v.parse().map_err(|e| err(format!("error_2d_iterations: {e}"))))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Scores a lifting result against a generated scene.
pub fn score(result: &LiftResult, scene: &GeneratedScenario, initial: &Pose2D) -> Result<(f64, f64, f64, f64)> {
    Ok((
        pose_error_3d(&result.pose_3d, &scene.ground_truth)?,
        pose_error_3d(&result.average_pose_3d, &scene.ground_truth)?,
        pose_error_2d(&result.pose_2d, &scene.ground_truth_2d)?,
        pose_error_2d(initial, &scene.ground_truth_2d)?,
    ))
}

fn failed_row(scenario: usize, seed: u64, cell: &str, e: &Error) -> ReportRow {
    ReportRow {
        scenario,
        seed,
        cell: cell.to_owned(),
        status: format!("failed: {e}"),
        error_3d: None,
        error_3d_avg: None,
        error_2d: None,
        error_2d_initial: None,
        selected_set: None,
        error_2d_iterations: Vec::new(),
    }
}

fn run_scenario(i: usize, spec: &Scenario, skeleton: &std::sync::Arc<Skeleton>, params: &EnergyParams, cells: &[Cell]) -> Vec<ReportRow> {
    let setup = || -> Result<_> {
        let scene = generate_scenario(spec, skeleton)?;
        let index = build_index(&scene.database, &virtual_cameras(), skeleton.clone())?;
        Ok((scene, index))
    };
    let (scene, index) = match setup() {
        Ok(s) => s,
        Err(e) => return cells.iter().map(|c| failed_row(i, spec.seed, &c.name, &e)).collect(),
    };
    let mut models: BTreeMap<(usize, u64, u64), PsmModel> = BTreeMap::new();
    cells
        .iter()
        .map(|cell| {
            let mut run = || -> Result<ReportRow> {
                let p = cell.apply(params)?;
                let key = (p.c_init, p.alpha.to_bits(), p.seed);
                if !models.contains_key(&key) {
                    let m = PsmModel::fit(skeleton.clone(), &scene.training_2d, p.c_init, p.alpha, p.seed)?;
                    models.insert(key, m);
                }
                let model = &models[&key];
                let (initial, _) = infer_map_default(model, &scene.unaries)?;
                let result = estimate_3d(&scene.unaries, &index, scene.intrinsics, &p, model)?;
                let (e3, e3a, e2, e2i) = score(&result, &scene, &initial)?;
                let iterations = result
                    .iterations
                    .iter()
                    .map(|r| {
                        let est = Pose2D::new(r.refined_pose_2d.iter().map(|a| nalgebra::Vector2::new(a[0], a[1])).collect());
                        pose_error_2d(&est, &scene.ground_truth_2d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ReportRow {
                    scenario: i,
                    seed: spec.seed,
                    cell: cell.name.clone(),
                    status: "ok".into(),
                    error_3d: Some(e3),
                    error_3d_avg: Some(e3a),
                    error_2d: Some(e2),
                    error_2d_initial: Some(e2i),
                    selected_set: Some(result.selected_set.to_string()),
                    error_2d_iterations: iterations,
                })
            };
            run().unwrap_or_else(|e| {
                log::warn!("scenario {i} ({}) cell {}: {e}", spec.seed, cell.name);
                failed_row(i, spec.seed, &cell.name, &e)
            })
        })
        .collect()
}

/// Runs every scenario under every cell. Scenarios run in parallel; rows
/// come back in scenario order, then cell order. Failures become rows with
/// a `failed: ...` status.
pub fn run_experiment(scenarios: &[Scenario], params: &EnergyParams, cells: &[Cell]) -> Result<Report> {
    if scenarios.is_empty() {
        return Err(Error::InvalidParameter("no scenarios".into()));
    }
    if cells.is_empty() {
        return Err(Error::InvalidParameter("no cells".into()));
    }
    params.validate()?;
    for c in cells {
        c.apply(params)?;
    }
    let skeleton = Skeleton::default_14();
    let rows: Vec<Vec<ReportRow>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_scenario(i, s, &skeleton, params, cells))
        .collect();
    let mut rows: Vec<ReportRow> = rows.into_iter().flatten().collect();
    // cell-major, so each cell's rows are contiguous
    let order: BTreeMap<&str, usize> = cells.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
    rows.sort_by_key(|r| (order[r.cell.as_str()], r.scenario));
    Ok(Report {
        params: params.clone(),
        cells: cells.iter().map(|c| c.name.clone()).collect(),
        scenarios: scenarios.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweeps_form_a_product() {
        let cells = parse_sweeps(&["iterations=1,2".into(), "K=64,128,256".into()]).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].name, "iterations=1;K=64");
        assert_eq!(cells[5].name, "iterations=2;K=256");
        assert_eq!(parse_sweeps(&[]).unwrap(), vec![Cell::baseline()]);
        assert!(parse_sweeps(&["bogus=1".into()]).is_err());
        assert!(parse_sweeps(&["iterations".into()]).is_err());
        assert!(parse_sweeps(&["iterations=x".into()]).is_err());
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(12.3456789).to_string(), "12.3457");
        assert_eq!(sig6(0.000123456789).to_string(), "0.000123457");
        assert_eq!(sig6(0.0), 0.0);
    }

    #[test]
    fn csv_round_trip_and_aggregates() {
        let row = |s: usize, cell: &str, e: Option<f64>| ReportRow {
            scenario: s,
            seed: s as u64,
            cell: cell.into(),
            status: if e.is_some() { "ok".into() } else { "failed: x".into() },
            error_3d: e,
            error_3d_avg: e.map(|v| v + 1.0),
            error_2d: e.map(|v| v / 10.0),
            error_2d_initial: e,
            selected_set: e.map(|_| "all".into()),
            error_2d_iterations: e.map(|v| vec![v, v / 2.0]).unwrap_or_default(),
        };
        let rows = vec![row(0, "a", Some(10.0)), row(1, "a", Some(20.0)), row(0, "b", None)];
        let mut buf = Vec::new();
        write_rows_csv(&rows, &mut buf).unwrap();
        let back = read_rows_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let agg = aggregate_rows(&["a".into(), "b".into()], &back);
        assert_eq!(agg[0].error_3d, Some(Stat { mean: 15.0, std: 5.0 }));
        assert_eq!(agg[1].failed, 1);
        assert_eq!(agg[1].error_3d, None);
    }
}
