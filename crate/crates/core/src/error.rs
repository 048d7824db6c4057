use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AirwayError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("could not place the daughters of segment {segment_id} without intersection after {attempts} attempts")]
    Generation { segment_id: u32, attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("invalid tessellation parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("tessellation failed at segment {segment_id}: {reason}")]
    Stitching { segment_id: u32, reason: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("cannot build an accelerator for an empty mesh")]
    EmptyMesh,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("camera is not inside the airway: {escaped} primary rays escaped")]
    Placement { escaped: usize },
    #[error("route error: {0}")]
    Route(String),
    #[error("could not place a pose inside the lumen at station {station}")]
    Interior { station: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("input dimensions disagree: {0}")]
    Dimension(String),
    #[error("median alignment failed: {0}")]
    Alignment(String),
    #[error("no valid pixels: {0}")]
    Empty(String),
    #[error("every frame was skipped")]
    AllSkipped,
}
