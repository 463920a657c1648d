use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FilterAction, FilterKind, CURVE_SEGMENTS};
use crate::error::{Error, Result};
use crate::image::LinearImage;

/// One serialised edit step. Field order is fixed for diff-stable output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub filter: String,
    pub raw: Vec<f64>,
    pub resolved: Value,
    pub display: String,
}

impl ScriptStep {
    pub fn from_action(action: &FilterAction) -> Self {
        let r = action.resolved();
        let resolved = match action.kind() {
            FilterKind::Exposure => json!({ "stops": r[0] }),
            FilterKind::Gamma => json!({ "exponent": r[0] }),
            FilterKind::WhiteBalance => json!({ "gains": r }),
            FilterKind::Saturation | FilterKind::Contrast | FilterKind::BlackWhite => {
                json!({ "strength": r[0] })
            }
            FilterKind::Tone => json!({ "segments": r }),
            FilterKind::Color => json!({
                "segments": r.chunks(CURVE_SEGMENTS).collect::<Vec<_>>()
            }),
        };
        Self {
            filter: action.kind().name().to_string(),
            raw: action.raw().to_vec(),
            resolved,
            display: action.display(),
        }
    }

    /// Rebuilds the action from `filter` and `raw`; `resolved` is informational.
    pub fn to_action(&self) -> Result<FilterAction> {
        let kind = FilterKind::from_name(&self.filter)
            .ok_or_else(|| Error::Script(format!("unknown filter {:?}", self.filter)))?;
        FilterAction::new(kind, self.raw.clone())
    }
}

/// An ordered list of edit steps; serialises as a JSON array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditScript {
    pub actions: Vec<FilterAction>,
}

impl EditScript {
    pub fn new(actions: Vec<FilterAction>) -> Self {
        Self { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn steps(&self) -> Vec<ScriptStep> {
        self.actions.iter().map(ScriptStep::from_action).collect()
    }

    pub fn apply(&self, image: &LinearImage) -> LinearImage {
        super::apply_script(&self.actions, image)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.steps()).expect("steps serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let steps: Vec<ScriptStep> =
            serde_json::from_str(text).map_err(|e| Error::Script(e.to_string()))?;
        let actions = steps
            .iter()
            .map(ScriptStep::to_action)
            .collect::<Result<_>>()?;
        Ok(Self { actions })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
