//! End-to-end orchestration: per-placement corner extraction in both
//! modalities, correspondence assembly, calibration, and the CLI commands.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corner2d::{canonicalize_order, detect_corners, load_external_corners, CornerSet2D};
use crate::corner3d::{build_standard_model, corners_from_alignment, estimate_alignment, BoardAlignment};
use crate::error::{Error, Result};
use crate::extrinsic::{calibrate, CalibrationResult, Correspondence, CorrespondenceSet};
use crate::geometry::{CameraIntrinsics, Plane, PointCloud, RigidTransform};
use crate::evaluation::{
    colorize_cloud, normalized_reprojection_error_labeled, overlay_rgb, reprojection_overlay,
    EvaluationReport,
};
use crate::image::GrayImage;
use crate::io::{self, DatasetLayout};
use crate::integration::integrate_frames;
use crate::refinement::{flatten_to_plane, grid_uniform_downsample, iterative_plane_refine};
use crate::rng::derive_seed;
use crate::segmentation::{candidate_clusters, crop_box, rank_candidates, trim_vertical_bounds};
use crate::simulator::{make_calibration_dataset, CalibrationDataset};

/// Stage tags for derived seeds.
const STAGE_RANK: u64 = 1;
const STAGE_REFINE: u64 = 2;
const STAGE_GRID: u64 = 3;
const STAGE_PNP: u64 = 4;

/// Board points of an integrated cloud: the ROI crop when configured,
/// otherwise segmentation, similarity ranking and upholder trimming.
pub fn locate_board(integrated: &PointCloud, cfg: &PipelineConfig, seed: u64) -> Result<PointCloud> {
    if let Some((lo, hi)) = cfg.roi_bounds() {
        return Ok(crop_box(integrated, &lo, &hi));
    }
    let clusters = candidate_clusters(integrated, &cfg.spec, &cfg.segmentation);
    if clusters.is_empty() {
        return Err(Error::NoCandidates);
    }
    let clouds: Vec<PointCloud> = clusters.iter().map(|c| integrated.select(c)).collect();
    let (best, _) = rank_candidates(
        &clouds,
        &cfg.spec,
        &cfg.segmentation,
        &cfg.refinement,
        derive_seed(seed, &[STAGE_RANK]),
    )?;
    Ok(trim_vertical_bounds(&clouds[best], &cfg.spec, &cfg.segmentation).cloud)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarCorners {
    /// Canonical order, LiDAR frame.
    pub corners: Vec<Vector3<f64>>,
    pub alignment: BoardAlignment,
    pub plane: Plane,
    /// Refined, flattened and density-capped board points.
    pub board: PointCloud,
}

/// Integrate, locate, refine and align; `seed` is the placement's seed.
pub fn extract_lidar_corners(frames: &[PointCloud], cfg: &PipelineConfig, seed: u64) -> Result<LidarCorners> {
    let integrated = integrate_frames(frames, &cfg.integration)?;
    let board = locate_board(&integrated, cfg, seed)?;
    lidar_corners_from_board(&board, cfg, seed)
}

/// The refinement and alignment half of [`extract_lidar_corners`].
pub fn lidar_corners_from_board(board: &PointCloud, cfg: &PipelineConfig, seed: u64) -> Result<LidarCorners> {
    let refined = iterative_plane_refine(board, &cfg.refinement, derive_seed(seed, &[STAGE_REFINE]))?;
    let flat = flatten_to_plane(&refined.cloud, &refined.plane);
    let thin = grid_uniform_downsample(
        &flat,
        &refined.plane,
        cfg.refinement.cell_size(cfg.spec.g_s),
        cfg.refinement.delta_rho,
        derive_seed(seed, &[STAGE_GRID]),
    );
    let alignment = estimate_alignment(&thin, &refined.plane, &cfg.spec, &cfg.corner3d)?;
    let model = build_standard_model(&cfg.spec, alignment.lower_left_color);
    Ok(LidarCorners {
        corners: corners_from_alignment(&alignment, &model),
        alignment,
        plane: refined.plane,
        board: thin,
    })
}

/// Detected or imported image corners in canonical order.
pub fn extract_image_corners(
    image: &GrayImage,
    cfg: &PipelineConfig,
    external: Option<&CornerSet2D>,
) -> Result<Vec<Vector2<f64>>> {
    let raw = match external {
        Some(c) => c.clone(),
        None => detect_corners(image, &cfg.spec)?,
    };
    Ok(canonicalize_order(&raw, &cfg.spec, image)?.corners)
}

/// Raw inputs of one placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementInput {
    pub id: usize,
    pub frames: Vec<PointCloud>,
    pub image: GrayImage,
    pub external_corners: Option<CornerSet2D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementCorners {
    pub id: usize,
    pub corners3d: Vec<[f64; 3]>,
    pub corners2d: Vec<[f64; 2]>,
}

impl PlacementCorners {
    pub fn corners3d(&self) -> Vec<Vector3<f64>> {
        self.corners3d.iter().map(|c| Vector3::from(*c)).collect()
    }

    pub fn corners2d(&self) -> Vec<Vector2<f64>> {
        self.corners2d.iter().map(|c| Vector2::from(*c)).collect()
    }
}

pub fn placement_seed(cfg: &PipelineConfig, id: usize) -> u64 {
    derive_seed(cfg.seed, &[id as u64])
}

pub fn process_placement(input: &PlacementInput, cfg: &PipelineConfig) -> Result<PlacementCorners> {
    let lidar = extract_lidar_corners(&input.frames, cfg, placement_seed(cfg, input.id))?;
    let image = extract_image_corners(&input.image, cfg, input.external_corners.as_ref())?;
    Ok(PlacementCorners {
        id: input.id,
        corners3d: lidar.corners.iter().map(|c| [c.x, c.y, c.z]).collect(),
        corners2d: image.iter().map(|c| [c.x, c.y]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedPlacement {
    pub id: usize,
    pub reason: String,
}

/// Processes placements in parallel; failures are logged and collected.
pub fn process_placements(
    inputs: &[PlacementInput],
    cfg: &PipelineConfig,
) -> (Vec<PlacementCorners>, Vec<SkippedPlacement>) {
    let results: Vec<(usize, Result<PlacementCorners>)> = inputs
        .par_iter()
        .map(|p| (p.id, process_placement(p, cfg)))
        .collect();
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => {
                log::warn!("placement {id} skipped: {e}");
                skipped.push(SkippedPlacement {
                    id,
                    reason: e.to_string(),
                });
            }
        }
    }
    (ok, skipped)
}

pub fn correspondences(placements: &[PlacementCorners], intrinsics: &CameraIntrinsics) -> CorrespondenceSet {
    let entries = placements
        .iter()
        .flat_map(|p| {
            p.corners3d.iter().zip(&p.corners2d).enumerate().map(move |(k, (a, b))| Correspondence {
                placement_id: p.id,
                corner_index: k,
                p3d: Vector3::from(*a),
                p2d: Vector2::from(*b),
            })
        })
        .collect();
    CorrespondenceSet::new(entries, *intrinsics)
}

/// Solves the extrinsic from at least two placements' corners.
pub fn calibrate_placements(
    placements: &[PlacementCorners],
    intrinsics: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<(CorrespondenceSet, CalibrationResult)> {
    if placements.len() < 2 {
        return Err(Error::InsufficientPlacements(placements.len()));
    }
    let corr = correspondences(placements, intrinsics);
    let result = calibrate(
        &corr,
        cfg.delta_reproj,
        cfg.ransac_iterations,
        derive_seed(cfg.seed, &[STAGE_PNP]))?;
    Ok((corr, result))
}

/// Rotation (degrees) and translation (meters) distance between two poses.
pub fn pose_error(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    (
        crate::geometry::rotation_angle_between(a, b),
        (a.translation - b.translation).norm(),
    )
}

// ---------------------------------------------------------------------------
// Records and commands.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementTruth {
    pub id: usize,
    /// Board frame to LiDAR frame.
    pub board_pose: RigidTransform,
    pub lower_left_color: u8,
    /// Canonical order.
    pub corners3d: Vec<[f64; 3]>,
    pub corners2d: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    /// LiDAR frame to camera frame.
    pub extrinsic: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub spec: crate::geometry::CheckerboardSpec,
    pub seed: u64,
    pub placements: Vec<PlacementTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSummary {
    pub placements: usize,
    pub frames: usize,
    pub images: usize,
    pub points: usize,
}

pub fn ground_truth_of(ds: &CalibrationDataset, seed: u64) -> GroundTruth {
    GroundTruth {
        extrinsic: ds.extrinsic_gt,
        intrinsics: ds.intrinsics,
        spec: ds.config.spec,
        seed,
        placements: ds
            .placements
            .iter()
            .enumerate()
            .map(|(id, p)| PlacementTruth {
                id,
                board_pose: p.scene.board_pose,
                lower_left_color: p.scene.lower_left_color,
                corners3d: p.corners3d_gt.iter().map(|c| [c.x, c.y, c.z]).collect(),
                corners2d: p.corners2d_gt.iter().map(|c| [c.x, c.y]).collect(),
            })
            .collect(),
    }
}

/// Simulates `cfg.simulation` with `cfg.seed` and writes the dataset layout.
pub fn cmd_simulate(cfg: &PipelineConfig, output: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let layout = DatasetLayout::new(output);
    io::create_dir(output)?;
    io::write_json(&layout.intrinsics_path(), &cfg.simulation.rig().1)?;
    let ds = make_calibration_dataset(&cfg.simulation, cfg.seed)?;
    let mut summary = SimulateSummary {
        placements: 0,
        frames: 0,
        images: 0,
        points: 0,
    };
    for (id, p) in ds.placements.iter().enumerate() {
        io::create_dir(&layout.frames_dir(id))?;
        for (k, f) in p.frames.iter().enumerate() {
            io::write_ply(&layout.frame_path(id, k), &f.cloud)?;
            summary.points += f.cloud.len();
        }
        io::write_pgm(&layout.image_path(id), &p.image)?;
        summary.placements += 1;
        summary.frames += p.frames.len();
        summary.images += 1;
        log::info!("placement {id}: {} frames written", p.frames.len());
    }
    io::write_json(&layout.ground_truth_path(), &ground_truth_of(&ds, cfg.seed))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryRecord {
    pub placement_id: usize,
    pub corner_index: usize,
    /// Pixels, against the final extrinsic; `null` when behind the camera.
    pub error: Option<f64>,
    pub inlier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    /// LiDAR to camera, 4×4 row-major.
    pub extrinsic: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
    pub rounds: usize,
    pub placements: Vec<PlacementCorners>,
    pub skipped: Vec<SkippedPlacement>,
    pub entries: Vec<EntryRecord>,
    /// Present when the dataset carries ground truth.
    pub ground_truth_error: Option<PoseError>,
    pub config: PipelineConfig,
}

fn dataset_intrinsics(cfg: &PipelineConfig, layout: &DatasetLayout) -> Result<CameraIntrinsics> {
    if let Some(i) = cfg.intrinsics {
        return Ok(i);
    }
    let path = layout.intrinsics_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "no intrinsics in the config and no {}",
            path.display()
        )));
    }
    let i: CameraIntrinsics = io::read_json(&path)?;
    i.validate()?;
    Ok(i)
}

fn dataset_ground_truth(layout: &DatasetLayout) -> Result<Option<GroundTruth>> {
    let path = layout.ground_truth_path();
    if path.exists() {
        Ok(Some(io::read_json(&path)?))
    } else {
        Ok(None)
    }
}

/// Reads one placement; `frames` caps the frames read.
pub fn load_placement(
    layout: &DatasetLayout,
    id: usize,
    frames: usize,
    cfg: &PipelineConfig,
    external_corners: bool,
) -> Result<PlacementInput> {
    let external = if external_corners {
        Some(load_external_corners(&layout.corners_path(id), &cfg.spec)?)
    } else {
        None
    };
    Ok(PlacementInput {
        id,
        frames: layout.read_frames(id, frames)?,
        image: io::read_pgm(&layout.image_path(id))?,
        external_corners: external,
    })
}

/// Loads and processes every placement of a dataset, in parallel.
fn extract_dataset(
    layout: &DatasetLayout,
    ids: &[usize],
    frames: usize,
    cfg: &PipelineConfig,
    external_corners: bool,
) -> (Vec<PlacementCorners>, Vec<SkippedPlacement>) {
    let results: Vec<(usize, Result<PlacementCorners>)> = ids
        .par_iter()
        .map(|&id| {
            let r = load_placement(layout, id, frames, cfg, external_corners)
                .and_then(|input| process_placement(&input, cfg));
            (id, r)
        })
        .collect();
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => {
                log::warn!("placement {id} skipped: {e}");
                skipped.push(SkippedPlacement {
                    id,
                    reason: e.to_string(),
                });
            }
        }
    }
    (ok, skipped)
}

pub fn calibration_record(
    cfg: &PipelineConfig,
    intrinsics: CameraIntrinsics,
    placements: Vec<PlacementCorners>,
    skipped: Vec<SkippedPlacement>,
    ground_truth: Option<&RigidTransform>,
) -> Result<CalibrationRecord> {
    let (corr, result) = calibrate_placements(&placements, &intrinsics, cfg)?;
    let entries = corr
        .entries
        .iter()
        .zip(&result.per_entry_error)
        .zip(&result.inlier_mask)
        .map(|((c, e), m)| EntryRecord {
            placement_id: c.placement_id,
            corner_index: c.corner_index,
            error: e.is_finite().then_some(*e),
            inlier: *m,
        })
        .collect();
    let ground_truth_error = ground_truth.map(|gt| {
        let (r, t) = pose_error(&result.extrinsic, gt);
        PoseError {
            rotation_deg: r,
            translation_m: t,
        }
    });
    Ok(CalibrationRecord {
        extrinsic: result.extrinsic,
        intrinsics,
        seed: cfg.seed,
        rounds: result.rounds,
        placements,
        skipped,
        entries,
        ground_truth_error,
        config: cfg.clone(),
    })
}

/// Full calibration of a dataset directory; writes the record to `output`.
pub fn cmd_calibrate(
    cfg: &PipelineConfig,
    dataset: &Path,
    output: &Path,
    external_corners: bool,
) -> Result<CalibrationRecord> {
    cfg.validate()?;
    let layout = DatasetLayout::new(dataset);
    let ids = layout.placements()?;
    if ids.is_empty() {
        return Err(Error::NoPlacements);
    }
    let intrinsics = dataset_intrinsics(cfg, &layout)?;
    let gt = dataset_ground_truth(&layout)?;
    let (placements, skipped) =
        extract_dataset(&layout, &ids, cfg.integration.max_frames, cfg, external_corners);
    let record = calibration_record(
        cfg,
        intrinsics,
        placements,
        skipped,
        gt.as_ref().map(|g| &g.extrinsic),
    )?;
    io::write_json(output, &record)?;
    Ok(record)
}

/// Pooled NRE of every placement's corners under `extrinsic`.
pub fn evaluate_placements(
    placements: &[PlacementCorners],
    extrinsic: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<EvaluationReport> {
    let mut ids = Vec::new();
    let mut c3d = Vec::new();
    let mut c2d = Vec::new();
    for p in placements {
        for (k, (a, b)) in p.corners3d.iter().zip(&p.corners2d).enumerate() {
            ids.push((p.id, k));
            c3d.push(Vector3::from(*a));
            c2d.push(Vector2::from(*b));
        }
    }
    normalized_reprojection_error_labeled(&ids, &c3d, &c2d, extrinsic, intrinsics)
}

/// NRE report over the record's placements plus, per placement, a point
/// overlay (`overlay_<id>.ppm`) and a colorized cloud (`colorized_<id>.ply`,
/// color −1 where a point falls outside the image).
pub fn cmd_evaluate(record_path: &Path, dataset: &Path, output: &Path) -> Result<EvaluationReport> {
    let record: CalibrationRecord = io::read_json(record_path)?;
    let layout = DatasetLayout::new(dataset);
    let ids = layout.placements()?;
    let missing: Vec<usize> = record
        .placements
        .iter()
        .map(|p| p.id)
        .filter(|id| !ids.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!(
            "dataset is missing placements {missing:?}"
        )));
    }
    io::create_dir(output)?;
    let report = evaluate_placements(&record.placements, &record.extrinsic, &record.intrinsics)?;
    let cfg = &record.config;
    let outputs: Vec<Result<()>> = record
        .placements
        .par_iter()
        .map(|p| {
            let frames = layout.read_frames(p.id, cfg.integration.max_frames)?;
            let cloud = integrate_frames(&frames, &cfg.integration)?;
            let image = io::read_pgm(&layout.image_path(p.id))?;
            let overlay = reprojection_overlay(&cloud, &record.extrinsic, &record.intrinsics);
            if (overlay.image.width, overlay.image.height) == (image.width, image.height) {
                io::write_ppm(
                    &output.join(format!("overlay_{}.ppm", p.id)),
                    image.width,
                    image.height,
                    &overlay_rgb(&image, &overlay),
                )?;
            } else {
                log::warn!("placement {}: image size differs from intrinsics; overlay skipped", p.id);
            }
            let colored = colorize_cloud(&cloud, &image, &record.extrinsic, &record.intrinsics);
            let colors: Vec<f64> = colored.colors.iter().map(|c| c.unwrap_or(-1.0)).collect();
            io::write_ply_with(&output.join(format!("colorized_{}.ply", p.id)), &cloud, Some(&colors))
        })
        .collect();
    for r in outputs {
        r?;
    }
    io::write_json(&output.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Placements,
    Frames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub placements_used: usize,
    pub rotation_error_deg: Option<f64>,
    pub translation_error_m: Option<f64>,
    pub nre_total: f64,
    pub nre_mean_weighted: f64,
    pub nre_mean_raw: f64,
}

fn sweep_row(
    value: usize,
    train: &[PlacementCorners],
    eval: &[PlacementCorners],
    intrinsics: &CameraIntrinsics,
    cfg: &PipelineConfig,
    gt: Option<&RigidTransform>,
) -> Result<SweepRow> {
    let (_, result) = calibrate_placements(train, intrinsics, cfg)?;
    let report = evaluate_placements(eval, &result.extrinsic, intrinsics)?;
    let err = gt.map(|g| pose_error(&result.extrinsic, g));
    Ok(SweepRow {
        value,
        placements_used: train.len(),
        rotation_error_deg: err.map(|e| e.0),
        translation_error_m: err.map(|e| e.1),
        nre_total: report.nre_total,
        nre_mean_weighted: report.mean_weighted_error,
        nre_mean_raw: report.mean_raw_error,
    })
}

/// Calibrates on the first `n` placements for `n = 2..=N`; NRE is
/// evaluated on all placements.
pub fn sweep_placements(
    placements: &[PlacementCorners],
    intrinsics: &CameraIntrinsics,
    cfg: &PipelineConfig,
    gt: Option<&RigidTransform>,
) -> Result<Vec<SweepRow>> {
    if placements.len() < 2 {
        return Err(Error::InsufficientPlacements(placements.len()));
    }
    (2..=placements.len())
        .map(|n| sweep_row(n, &placements[..n], placements, intrinsics, cfg, gt))
        .collect()
}

/// Re-extracts LiDAR corners from the first `t` frames for each requested
/// `t` and calibrates on all placements. Values beyond the shortest frame
/// sequence are dropped with a warning.
pub fn sweep_frames(
    inputs: &[PlacementInput],
    values: &[usize],
    intrinsics: &CameraIntrinsics,
    cfg: &PipelineConfig,
    gt: Option<&RigidTransform>,
) -> Result<Vec<SweepRow>> {
    if inputs.len() < 2 {
        return Err(Error::InsufficientPlacements(inputs.len()));
    }
    let t_max = inputs.iter().map(|p| p.frames.len()).min().unwrap_or(0);
    let mut rows = Vec::new();
    // Image corners do not depend on the frame count.
    let images: Vec<Result<Vec<Vector2<f64>>>> = inputs
        .par_iter()
        .map(|p| extract_image_corners(&p.image, cfg, p.external_corners.as_ref()))
        .collect();
    for &t in values {
        if t == 0 || t > t_max {
            log::warn!("frame count {t} outside 1..={t_max}; skipped");
            continue;
        }
        let mut local = cfg.clone();
        local.integration.max_frames = t;
        let lidar: Vec<Result<Vec<Vector3<f64>>>> = inputs
            .par_iter()
            .map(|p| {
                extract_lidar_corners(&p.frames[..t], &local, placement_seed(&local, p.id))
                    .map(|l| l.corners)
            })
            .collect();
        let placements: Vec<PlacementCorners> = inputs
            .iter()
            .zip(&lidar)
            .zip(&images)
            .filter_map(|((p, l), i)| match (l, i) {
                (Ok(l), Ok(i)) => Some(PlacementCorners {
                    id: p.id,
                    corners3d: l.iter().map(|c| [c.x, c.y, c.z]).collect(),
                    corners2d: i.iter().map(|c| [c.x, c.y]).collect(),
                }),
                _ => {
                    log::warn!("placement {} skipped at {t} frames", p.id);
                    None
                }
            })
            .collect();
        rows.push(sweep_row(t, &placements, &placements, intrinsics, &local, gt)?);
    }
    Ok(rows)
}

pub fn sweep_table(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
    let mut s = format!(
        "{}\tplacements_used\trotation_error_deg\ttranslation_error_m\tnre_total\tnre_mean_weighted\tnre_mean_raw\n",
        match axis {
            SweepAxis::Placements => "placements",
            SweepAxis::Frames => "frames",
        }
    );
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.value,
            r.placements_used,
            opt(r.rotation_error_deg),
            opt(r.translation_error_m),
            r.nre_total,
            r.nre_mean_weighted,
            r.nre_mean_raw
        ));
    }
    s
}

/// Default frame counts: 5, 10, ... up to the dataset's frame count.
pub fn default_frame_values(t_max: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (1..).map(|k| 5 * k).take_while(|&t| t <= t_max).collect();
    if v.last() != Some(&t_max) && t_max > 0 {
        v.push(t_max);
    }
    v
}

pub fn cmd_sweep(
    cfg: &PipelineConfig,
    dataset: &Path,
    axis: SweepAxis,
    values: Option<&[usize]>,
    output: &Path,
    external_corners: bool,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let layout = DatasetLayout::new(dataset);
    let ids = layout.placements()?;
    if ids.is_empty() {
        return Err(Error::NoPlacements);
    }
    if ids.len() < 2 {
        return Err(Error::InsufficientPlacements(ids.len()));
    }
    let intrinsics = dataset_intrinsics(cfg, &layout)?;
    let gt = dataset_ground_truth(&layout)?;
    let gt_pose = gt.as_ref().map(|g| &g.extrinsic);
    let rows = match axis {
        SweepAxis::Placements => {
            let (placements, _) =
                extract_dataset(&layout, &ids, cfg.integration.max_frames, cfg, external_corners);
            let mut rows = sweep_placements(&placements, &intrinsics, cfg, gt_pose)?;
            if let Some(v) = values {
                rows.retain(|r| v.contains(&r.value));
            }
            rows
        }
        SweepAxis::Frames => {
            let inputs = ids
                .iter()
                .map(|&id| load_placement(&layout, id, usize::MAX, cfg, external_corners))
                .collect::<Result<Vec<_>>>()?;
            let t_max = inputs.iter().map(|p| p.frames.len()).min().unwrap_or(0);
            let values = values.map_or_else(|| default_frame_values(t_max), <[usize]>::to_vec);
            sweep_frames(&inputs, &values, &intrinsics, cfg, gt_pose)?
        }
    };
    io::write_text(output, &sweep_table(axis, &rows))?;
    Ok(rows)
}
