//! Alignment followed by fusion: the one code path behind live collection
//! and offline replay.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::alignment::{Aligner, AlignedSnapshot, GridConfig, IngestOutcome, Replay};
use crate::error::Result;
use crate::fusion::{FusionConfig, Fuser};
use crate::model::{FusedRow, SourceId, Timestamp, TimedRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid: GridConfig,
    #[serde(flatten)]
    pub fusion: FusionConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fusion.validate()
    }
}

#[derive(Debug)]
pub struct Pipeline {
    aligner: Aligner,
    fuser: Fuser,
    fresh_ticks: BTreeMap<SourceId, u64>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, sources: impl IntoIterator<Item = SourceId>) -> Self {
        Pipeline {
            aligner: Aligner::new(cfg.grid, sources),
            fuser: Fuser::new(cfg.fusion),
            fresh_ticks: BTreeMap::new(),
        }
    }

    /// Number of emitted ticks at which each source had a fresh sample.
    pub fn fresh_ticks(&self) -> &BTreeMap<SourceId, u64> {
        &self.fresh_ticks
    }

    pub fn aligner(&self) -> &Aligner {
        &self.aligner
    }

    pub fn fuser(&self) -> &Fuser {
        &self.fuser
    }

    pub fn ingest(&mut self, record: &TimedRecord) -> IngestOutcome {
        self.aligner.ingest(record)
    }

    pub fn advance(&mut self, now: Timestamp) -> Result<Vec<FusedRow>> {
        let snapshots = self.aligner.advance(now);
        self.fuse_all(&snapshots)
    }

    pub fn finish(&mut self) -> Result<Vec<FusedRow>> {
        let snapshots = self.aligner.finish();
        self.fuse_all(&snapshots)
    }

    fn fuse_all(&mut self, snapshots: &[AlignedSnapshot]) -> Result<Vec<FusedRow>> {
        for s in snapshots {
            for (source, fresh) in [
                (SourceId::Radar, s.radar_fresh()),
                (SourceId::Wearable, s.wearable_fresh()),
                (SourceId::Camera, s.camera_fresh()),
            ] {
                if fresh {
                    *self.fresh_ticks.entry(source).or_default() += 1;
                }
            }
        }
        snapshots.iter().map(|s| self.fuser.fuse(s)).collect()
    }
}

/// Offline mode: replay recorded sensor records into fused rows.
pub fn replay_rows(cfg: PipelineConfig, sources: Option<&BTreeSet<SourceId>>, records: Vec<TimedRecord>) -> Result<Vec<FusedRow>> {
    let mut replay = Replay::new(cfg.grid, sources, records);
    let mut fuser = Fuser::new(cfg.fusion);
    let mut rows = Vec::new();
    while let Some(step) = replay.step() {
        for snapshot in &step.snapshots {
            rows.push(fuser.fuse(snapshot)?);
        }
    }
    Ok(rows)
}
