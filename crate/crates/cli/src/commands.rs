use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;

use dslift_core::eval::{
    aggregate_rows, generate_scenario, parse_sweeps, pose_error_2d, pose_error_3d_with, read_rows_csv, run_experiment,
    Report, ReportRow, Scenario, ScenarioSuite,
};
use dslift_core::lifter::{estimate_3d, lift_from_pose2d, EnergyParams, Intrinsics};
use dslift_core::mocap::io::{read_pose_file, write_pose_jsonl, PoseRecord};
use dslift_core::mocap::{build_index_with_ids, virtual_cameras, MoCapIndex};
use dslift_core::psm::{PsmModel, UnaryMap, UnarySynthesis};
use dslift_core::skeleton::{deduplicate_indices, validate_skeleton, Pose2D, Pose3D, Skeleton};

use crate::fail::{Context, Failure};
use crate::files::{open, read_json, read_text, write_atomic, write_json, write_text};
use crate::{BuildDbArgs, EstimateArgs, EvalArgs, ParamArgs, ReportArgs, SynthArgs};

/// Training poses rendered for the default initial pictorial structure.
const DEFAULT_TRAINING_POSES: usize = 300;

fn load_skeleton(path: Option<&Path>) -> Result<std::sync::Arc<Skeleton>, Failure> {
    let Some(path) = path else {
        return Ok(Skeleton::default_14());
    };
    let sk = Skeleton::parse(&read_text(path)?).context(path.display())?;
    let report = validate_skeleton(&sk);
    if !report.is_ok() {
        return Err(Failure::input(format!("{}: invalid skeleton: {report}", path.display())));
    }
    Ok(std::sync::Arc::new(sk))
}

fn load_params(file: Option<&Path>, overrides: &[String]) -> Result<EnergyParams, Failure> {
    let mut p = match file {
        Some(path) => EnergyParams::parse(&read_text(path)?).context(path.display())?,
        None => EnergyParams::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("--set `{o}`: expected KEY=VALUE")))?;
        p.set(k.trim(), v.trim()).context("--set")?;
    }
    p.validate().context("parameters")?;
    Ok(p)
}

fn resolve_params(a: &ParamArgs) -> Result<EnergyParams, Failure> {
    let mut p = load_params(a.params.as_deref(), &a.overrides)?;
    if let Some(n) = a.iterations {
        p.iterations = n;
    }
    if let Some(s) = a.seed {
        p.seed = s;
    }
    p.validate().context("parameters")?;
    Ok(p)
}

pub fn build_db(a: BuildDbArgs) -> Result<(), Failure> {
    let sk = load_skeleton(a.skeleton.as_deref())?;
    if !(a.dedup_mm >= 0.0) {
        return Err(Failure::input("--dedup-mm must be >= 0"));
    }
    let records = read_pose_file(&a.poses, &sk)?;
    if records.is_empty() {
        return Err(Failure::input(format!("{}: no poses", a.poses.display())));
    }
    let poses: Vec<Pose3D> = records.iter().map(|r| r.pose.clone()).collect();
    let kept = deduplicate_indices(&poses, &sk, a.dedup_mm);
    let ids = kept.iter().map(|&i| records[i].id.clone()).collect();
    let kept_poses: Vec<Pose3D> = kept.iter().map(|&i| poses[i].clone()).collect();
    let index = build_index_with_ids(&kept_poses, ids, &virtual_cameras(), sk.clone())?;
    write_atomic(&a.out, |w| index.write_to(w).map_err(std::io::Error::other))?;
    println!(
        "poses read: {}, kept after {} mm dedup: {}, cameras: {}, entries per joint set: {}",
        records.len(),
        a.dedup_mm,
        kept.len(),
        index.cameras().len(),
        index.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Pose2dFile {
    joints_px: Vec<[f64; 2]>,
}

impl Pose2dFile {
    fn to_pose(&self) -> Pose2D {
        Pose2D::new(self.joints_px.iter().map(|p| Vector2::new(p[0], p[1])).collect())
    }

    fn from_pose(p: &Pose2D) -> Pose2dFile {
        Pose2dFile {
            joints_px: p.joints.iter().map(|j| [j.x, j.y]).collect(),
        }
    }
}

fn read_pose2d_lines(path: &Path) -> Result<Vec<Pose2D>, Failure> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Pose2dFile = serde_json::from_str(line)
            .map_err(|e| Failure::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(p.to_pose());
    }
    Ok(out)
}

/// Index poses through a spread of virtual views, placed at the depth that
/// gives them the pixel height of the unary peaks.
fn default_training(index: &MoCapIndex, intrinsics: &Intrinsics, unaries: &UnaryMap) -> Result<Vec<Pose2D>, Failure> {
    let peaks: Vec<Vector2<f64>> = (0..unaries.num_joints()).map(|j| unaries.argmax(j)).collect();
    let (lo, hi) = peaks
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let height_px = (hi - lo).max(8.0 * unaries.stride());
    let n = index.len();
    let count = DEFAULT_TRAINING_POSES.min(n);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let (pose, cam) = index.back_link((i * n / count) as u32);
        let rot = index.cameras()[cam].rotation();
        let joints: Vec<Vector3<f64>> = index.poses()[pose].as_pose().joints.iter().map(|j| rot * j).collect();
        let (ylo, yhi) = joints
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
        let depth = (intrinsics.fy * (yhi - ylo) / height_px).max(1000.0);
        let zmin = joints.iter().map(|j| j.z).fold(f64::INFINITY, f64::min);
        let shift = depth.max(1.0 - zmin + 100.0);
        out.push(Pose2D::new(
            joints
                .iter()
                .map(|j| intrinsics.project(&(j + Vector3::new(0.0, 0.0, shift))))
                .collect(),
        ));
    }
    Ok(out)
}

pub fn estimate(a: EstimateArgs) -> Result<(), Failure> {
    let params = resolve_params(&a.params)?;
    let intrinsics = Intrinsics::parse(&read_text(&a.intrinsics)?).context(a.intrinsics.display())?;
    let index = MoCapIndex::read_from(open(&a.index)?).context(a.index.display())?;
    let sk = index.skeleton().clone();

    let (result, input) = if let Some(path) = &a.unaries {
        let unaries = UnaryMap::read_from(open(path)?).context(path.display())?;
        let training = match &a.psm_training {
            Some(p) => read_pose2d_lines(p)?,
            None => default_training(&index, &intrinsics, &unaries)?,
        };
        let model = PsmModel::fit(sk.clone(), &training, params.c_init, params.alpha, params.seed).context("initial model")?;
        let r = estimate_3d(&unaries, &index, intrinsics, &params, &model);
        (r, json!({ "unaries": path }))
    } else {
        let path = a.pose2d.as_ref().expect("clap requires one observation");
        let x0 = read_json::<Pose2dFile>(path)?.to_pose();
        if x0.len() != sk.num_joints() {
            return Err(Failure::input(format!(
                "{}: {} joints, skeleton has {}",
                path.display(),
                x0.len(),
                sk.num_joints()
            )));
        }
        let spec = UnarySynthesis {
            width: (2.0 * intrinsics.cx / 4.0).ceil().max(1.0) as usize,
            height: (2.0 * intrinsics.cy / 4.0).ceil().max(1.0) as usize,
            stride: 4.0,
            ..UnarySynthesis::default()
        };
        let unaries = UnaryMap::synthesize(&x0, &spec).context("unary synthesis")?;
        let r = lift_from_pose2d(&unaries, &index, intrinsics, &params, x0);
        (r, json!({ "pose2d": path }))
    };
    let result = result.map_err(|e| Failure::runtime(format!("estimation failed: {e}")))?;
    let mut out = result.to_json(&params);
    out["input"] = input;
    out["input"]["index"] = json!(a.index);
    out["input"]["intrinsics"] = json!(intrinsics);
    write_json(&a.out, &out)?;
    log::info!("selected set {}, {} iterations", result.selected_set, result.iterations.len());
    Ok(())
}

/// Ground truth or result file: `pose_3d_mm` plus optional `pose_2d_px`.
#[derive(Deserialize)]
struct Scored {
    #[serde(default)]
    skeleton: Option<String>,
    pose_3d_mm: Vec<[f64; 3]>,
    #[serde(default)]
    pose_2d_px: Option<Vec<[f64; 2]>>,
}

impl Scored {
    fn pose(&self, fallback: &str) -> Pose3D {
        Pose3D::new(
            dslift_core::skeleton::SkeletonId::new(self.skeleton.clone().unwrap_or_else(|| fallback.to_owned())),
            self.pose_3d_mm.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
        )
    }

    fn pose_2d(&self) -> Option<Pose2D> {
        self.pose_2d_px
            .as_ref()
            .map(|v| Pose2D::new(v.iter().map(|p| Vector2::new(p[0], p[1])).collect()))
    }
}

fn score_files(a: &EvalArgs, result: &Path, gt: &Path) -> Result<(), Failure> {
    let est: Scored = read_json(result)?;
    let truth: Scored = read_json(gt)?;
    let fallback = Skeleton::default_14().id().to_string();
    let (pe, pg) = (est.pose(&fallback), truth.pose(&fallback));
    if pe.skeleton != pg.skeleton || pe.len() != pg.len() {
        return Err(Failure::input(format!(
            "schema mismatch: result has {} joints of `{}`, ground truth {} of `{}`",
            pe.len(),
            pe.skeleton,
            pg.len(),
            pg.skeleton
        )));
    }
    let e3 = pose_error_3d_with(&pe, &pg, a.allow_scale).context("3D error")?;
    let e2 = match (est.pose_2d(), truth.pose_2d()) {
        (Some(x), Some(y)) => Some(pose_error_2d(&x, &y).context("2D error")?),
        _ => None,
    };
    let out = json!({
        "result": result,
        "ground_truth": gt,
        "allow_scale": a.allow_scale,
        "error_3d_mm": dslift_core::eval::sig6(e3),
        "error_2d_px": e2.map(dslift_core::eval::sig6),
    });
    write_json(&a.out, &out)?;
    println!("3D error {} mm", dslift_core::eval::sig6(e3));
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    if let (Some(result), Some(gt)) = (&a.result, &a.ground_truth) {
        return score_files(&a, result, gt);
    }
    let Some(path) = &a.scenarios else {
        return Err(Failure::input("eval needs --scenarios or --result with --ground-truth"));
    };
    let mut suite: ScenarioSuite = read_json(path)?;
    if suite.count == 0 {
        return Err(Failure::input(format!("{}: suite has no scenarios", path.display())));
    }
    if let Some(s) = a.seed {
        suite.seed = s;
    }
    let params = load_params(a.params.as_deref(), &a.overrides)?;
    let cells = parse_sweeps(&a.sweep).context("--sweep")?;
    let report = run_experiment(&suite.scenarios(), &params, &cells).context("experiment")?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::input(format!("{}: {e}", a.out.display())))?;
    write_report(&report, &suite, &a.out)?;
    let failed = report.rows.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{} rows ({} failed) in {}",
        report.rows.len(),
        failed,
        a.out.join("report.csv").display()
    );
    Ok(())
}

fn write_report(report: &Report, suite: &ScenarioSuite, dir: &Path) -> Result<(), Failure> {
    write_atomic(&dir.join("report.csv"), |w| report.write_csv(w).map_err(std::io::Error::other))?;
    let mut summary = report.to_json();
    summary["suite"] = json!({ "name": suite.name, "count": suite.count, "seed": suite.seed });
    write_json(&dir.join("report.json"), &summary)?;
    write_text(&dir.join("curves.tsv"), &report.curves_tsv())
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec: Scenario = match &a.scenario {
        Some(p) => read_json(p)?,
        None => Scenario::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let sk = Skeleton::default_14();
    let g = generate_scenario(&spec, &sk).context("scenario")?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure::input(format!("{}: {e}", a.out_dir.display())))?;
    let dir = &a.out_dir;
    write_json(&dir.join("scenario.json"), &json!(spec))?;
    write_atomic(&dir.join("unaries.dsum"), |w| g.unaries.write_to(w).map_err(std::io::Error::other))?;
    write_text(&dir.join("intrinsics.txt"), &g.intrinsics.to_text())?;
    let records: Vec<PoseRecord> = g
        .database
        .iter()
        .enumerate()
        .map(|(i, p)| PoseRecord {
            id: format!("db{i:05}"),
            pose: p.clone(),
        })
        .collect();
    write_atomic(&dir.join("database.jsonl"), |w| {
        write_pose_jsonl(w, &records).map_err(std::io::Error::other)
    })?;
    write_atomic(&dir.join("training_2d.jsonl"), |w| {
        for p in &g.training_2d {
            serde_json::to_writer(&mut *w, &Pose2dFile::from_pose(p))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    write_json(&dir.join("pose2d.json"), &json!(Pose2dFile::from_pose(&g.ground_truth_2d)))?;
    write_json(
        &dir.join("ground_truth.json"),
        &json!({
            "skeleton": sk.id().as_str(),
            "pose_3d_mm": g.ground_truth.joints.iter().map(|j| [j.x, j.y, j.z]).collect::<Vec<_>>(),
            "pose_2d_px": g.ground_truth_2d.joints.iter().map(|j| [j.x, j.y]).collect::<Vec<_>>(),
            "camera": g.camera,
            "corrupted_joints": g.corrupted_joints,
        }),
    )?;
    println!(
        "scene {} -> {} ({} database poses, {} training poses)",
        spec.seed,
        dir.display(),
        records.len(),
        g.training_2d.len()
    );
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<(), Failure> {
    let mut rows: Vec<ReportRow> = Vec::new();
    for path in &a.csv {
        rows.extend(read_rows_csv(open(path)?).context(path.display())?);
    }
    let mut cells: Vec<String> = Vec::new();
    for r in &rows {
        if !cells.contains(&r.cell) {
            cells.push(r.cell.clone());
        }
    }
    let aggregate = aggregate_rows(&cells, &rows);
    write_json(&a.out, &json!({ "inputs": a.csv, "cells": cells, "aggregate": aggregate }))?;
    if let Some(curves) = &a.curves {
        let mut out = String::from("cell\tmetric\tx\tmean\tstd\tn\n");
        for agg in &aggregate {
            for (metric, s) in [("error_3d", agg.error_3d), ("error_3d_avg", agg.error_3d_avg), ("error_2d", agg.error_2d)] {
                if let Some(s) = s {
                    out.push_str(&format!(
                        "{}\t{metric}\t-\t{}\t{}\t{}\n",
                        agg.cell,
                        s.mean,
                        s.std,
                        agg.scenarios - agg.failed
                    ));
                }
            }
        }
        write_text(curves, &out)?;
    }
    println!("{} rows, {} cells", rows.len(), cells.len());
    Ok(())
}
