//! Annotation session state machine.
//!
//! A session holds the current lane graph for one scene plus the ordered
//! log of edits that produced it. Every edit is deterministic, so replaying
//! the log on a fresh session reproduces the graph exactly.

use lanegraph_core::extraction::{draw_lane, evidence_cloud, LaneProvenance};
use lanegraph_core::{
    extract_lane_graph, BevRaster, Error as CoreError, ExtractionParams, LaneGraph, Point2, Polyline, RegionBin,
};
use serde::{Deserialize, Serialize};

/// One annotator interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    /// Automatic extraction; costs no clicks.
    AutoExtract,
    /// A click on a starting region.
    AddTrace { bin: [usize; 2] },
    /// A click removing a lane.
    DeleteLane { index: usize },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::AutoExtract => "auto-extract",
            Action::AddTrace { .. } => "add-trace",
            Action::DeleteLane { .. } => "delete-lane",
        }
    }

    pub fn is_click(&self) -> bool {
        !matches!(self, Action::AutoExtract)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditEntry {
    #[serde(flatten)]
    pub action: Action,
    /// False for a region click that drew nothing.
    pub ok: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("lanes were already extracted; reset the session first")]
    AlreadyExtracted,
    #[error("{0}")]
    BinOutOfRange(String),
    #[error("bin ({row}, {col}) contains no lane evidence")]
    NoEvidence { row: usize, col: usize },
    #[error("no lane {index}; the graph has {len}")]
    NoSuchLane { index: usize, len: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// The raster a session edits, with its denoised evidence computed once.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub raster: BevRaster,
    pub evidence: Vec<Point2>,
    pub params: ExtractionParams,
}

impl Workspace {
    pub fn new(raster: BevRaster, params: ExtractionParams) -> Result<Self, SessionError> {
        params.validate()?;
        let evidence = evidence_cloud(&raster, params.tau);
        Ok(Workspace {
            raster,
            evidence,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub scene_id: String,
    graph: LaneGraph,
    /// Aligned with the lanes of `graph`.
    provenance: Vec<LaneProvenance>,
    clicks: usize,
    failed_clicks: usize,
    extracted: bool,
    log: Vec<EditEntry>,
}

impl Session {
    pub fn new(id: impl Into<String>, scene_id: impl Into<String>) -> Self {
        Session {
            id: id.into(),
            scene_id: scene_id.into(),
            graph: LaneGraph::empty(),
            provenance: Vec::new(),
            clicks: 0,
            failed_clicks: 0,
            extracted: false,
            log: Vec::new(),
        }
    }

    pub fn graph(&self) -> &LaneGraph {
        &self.graph
    }

    pub fn provenance(&self) -> &[LaneProvenance] {
        &self.provenance
    }

    pub fn clicks(&self) -> usize {
        self.clicks
    }

    /// Region clicks that drew nothing; included in [`Session::clicks`].
    pub fn failed_clicks(&self) -> usize {
        self.failed_clicks
    }

    pub fn extracted(&self) -> bool {
        self.extracted
    }

    pub fn log(&self) -> &[EditEntry] {
        &self.log
    }

    pub fn extract(&mut self, ws: &Workspace) -> Result<(), SessionError> {
        if self.extracted {
            return Err(SessionError::AlreadyExtracted);
        }
        let result = extract_lane_graph(&ws.raster, &ws.params)?;
        // Lanes traced before extraction are kept.
        for (lane, prov) in result.graph.lanes().iter().zip(result.provenance) {
            self.insert(lane.clone(), prov);
        }
        self.extracted = true;
        self.log.push(EditEntry {
            action: Action::AutoExtract,
            ok: true,
        });
        Ok(())
    }

    /// Traces a lane from `bin` and returns its index. An out-of-range bin
    /// is rejected without cost; a bin without evidence still costs the
    /// click.
    pub fn trace(&mut self, ws: &Workspace, bin: [usize; 2]) -> Result<usize, SessionError> {
        let region = RegionBin::new(bin[0], bin[1], ws.params.k_grid)
            .map_err(|e| SessionError::BinOutOfRange(e.to_string()))?;
        self.clicks += 1;
        let drawn = draw_lane(&ws.raster, region, &ws.evidence, &ws.params);
        self.log.push(EditEntry {
            action: Action::AddTrace { bin },
            ok: drawn.is_ok(),
        });
        match drawn {
            Ok((lane, prov)) => Ok(self.insert(lane, prov)),
            Err(e) => {
                self.failed_clicks += 1;
                Err(match e {
                    CoreError::NoEvidence { row, col } => SessionError::NoEvidence { row, col },
                    e => SessionError::Core(e),
                })
            }
        }
    }

    pub fn delete(&mut self, index: usize) -> Result<Polyline, SessionError> {
        let len = self.graph.len();
        let lane = self.graph.remove(index).ok_or(SessionError::NoSuchLane { index, len })?;
        self.provenance.remove(index);
        self.clicks += 1;
        self.log.push(EditEntry {
            action: Action::DeleteLane { index },
            ok: true,
        });
        Ok(lane)
    }

    /// Back to the state of a new session.
    pub fn reset(&mut self) {
        *self = Session::new(std::mem::take(&mut self.id), std::mem::take(&mut self.scene_id));
    }

    pub fn apply(&mut self, ws: &Workspace, action: &Action) -> Result<(), SessionError> {
        match *action {
            Action::AutoExtract => self.extract(ws),
            Action::AddTrace { bin } => self.trace(ws, bin).map(|_| ()),
            Action::DeleteLane { index } => self.delete(index).map(|_| ()),
        }
    }

    /// Rebuilds a session from its edit log. Entries logged as failed must
    /// fail again and the others must succeed.
    pub fn replay(
        id: impl Into<String>,
        scene_id: impl Into<String>,
        ws: &Workspace,
        log: &[EditEntry],
    ) -> Result<Session, SessionError> {
        let mut s = Session::new(id, scene_id);
        for (i, entry) in log.iter().enumerate() {
            let outcome = s.apply(ws, &entry.action);
            match (outcome, entry.ok) {
                (Ok(()), true) | (Err(SessionError::NoEvidence { .. }), false) => {}
                (Err(e), true) => return Err(e),
                (_, false) => {
                    return Err(SessionError::Core(CoreError::InvalidParameter {
                        name: "log",
                        reason: format!("entry {i} was logged as failed but replayed differently"),
                    }))
                }
            }
        }
        Ok(s)
    }

    fn insert(&mut self, lane: Polyline, prov: LaneProvenance) -> usize {
        let at = self.graph.insert(lane);
        self.provenance.insert(at, prov);
        at
    }
}
