//! Pipeline configuration, read from and written as JSON. Unknown keys are
//! rejected at every level; omitted keys take their defaults.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::corner3d::Corner3dParams;
use crate::error::{Error, Result};
use crate::extrinsic::{DEFAULT_DELTA_REPROJ, DEFAULT_RANSAC_ITERATIONS};
use crate::geometry::{CameraIntrinsics, CheckerboardSpec};
use crate::integration::IntegrationParams;
use crate::refinement::RefinementParams;
use crate::segmentation::SegmentationParams;
use crate::simulator::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub spec: CheckerboardSpec,
    pub integration: IntegrationParams,
    pub segmentation: SegmentationParams,
    pub refinement: RefinementParams,
    pub corner3d: Corner3dParams,
    /// Pixel error at or above which a correspondence is dropped.
    pub delta_reproj: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
    /// `None` reads `intrinsics.json` from the dataset root.
    pub intrinsics: Option<CameraIntrinsics>,
    /// Axis-aligned crop `[x0, y0, z0, x1, y1, z1]` in the LiDAR frame that
    /// replaces segmentation.
    pub roi: Option<[f64; 6]>,
    /// Settings for `simulate`.
    pub simulation: SimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let simulation = SimConfig::default();
        Self {
            spec: simulation.spec,
            integration: IntegrationParams::default(),
            segmentation: SegmentationParams::default(),
            refinement: RefinementParams::default(),
            corner3d: Corner3dParams::default(),
            delta_reproj: DEFAULT_DELTA_REPROJ,
            ransac_iterations: DEFAULT_RANSAC_ITERATIONS,
            seed: 0,
            intrinsics: None,
            roi: None,
            simulation,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.integration.validate()?;
        self.segmentation.validate()?;
        self.refinement.validate()?;
        self.corner3d.validate()?;
        self.simulation.validate()?;
        if !(self.delta_reproj > 0.0) {
            return Err(Error::Config("delta_reproj must be > 0".into()));
        }
        if self.ransac_iterations < 1 {
            return Err(Error::Config("ransac_iterations must be >= 1".into()));
        }
        if let Some(i) = &self.intrinsics {
            i.validate()?;
        }
        if let Some((lo, hi)) = self.roi_bounds() {
            if (0..3).any(|k| !(lo[k] < hi[k])) {
                return Err(Error::Config("roi must satisfy x0 < x1, y0 < y1, z0 < z1".into()));
            }
        }
        Ok(())
    }

    pub fn roi_bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        self.roi
            .map(|r| (Vector3::new(r[0], r[1], r[2]), Vector3::new(r[3], r[4], r[5])))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses `"x0,y0,z0,x1,y1,z1"`.
pub fn parse_roi(text: &str) -> Result<[f64; 6]> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("roi: {e}")))?;
    vals.try_into()
        .map_err(|v: Vec<f64>| Error::Config(format!("roi needs 6 numbers, got {}", v.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_json_str(r#"{"seed": 3}"#).is_ok());
        assert!(PipelineConfig::from_json_str(r#"{"sed": 3}"#).is_err());
        assert!(PipelineConfig::from_json_str(r#"{"refinement": {"sigma": 0.1}}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = PipelineConfig::default();
        c.roi = Some([0.0, -1.0, -1.0, 5.0, 1.0, 1.0]);
        let back = PipelineConfig::from_json_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn roi_parsing() {
        assert_eq!(parse_roi("1,2,3,4,5,6").unwrap(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(parse_roi("1,2,3").is_err());
        assert!(parse_roi("1,2,x,4,5,6").is_err());
    }
}
