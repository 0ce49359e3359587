//! In-memory scene container: one image's worth of named channels.
//!
//! A channel is either a truth mask (concept segmentation, ground truth) or
//! a set of bounding boxes (detector or ground-truth instances). File
//! formats live in [`crate::io`]; this module is format-agnostic.

use crate::logic::TruthValue;
use crate::mask::{BoundingBox, MaskError, TruthMask};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("channel {0:?} already exists")]
    DuplicateChannel(String),
    #[error("channel {0:?} not found")]
    MissingChannel(String),
    #[error("channel {name:?}: expected {expected}, found {found}")]
    KindMismatch {
        name: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// One named channel of a scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Mask(TruthMask),
    Boxes {
        boxes: Vec<BoundingBox>,
        /// When set, rasterization fills boxes with this value instead of
        /// their score (1.0 for ground-truth channels).
        constant_score: Option<TruthValue>,
    },
}

impl Channel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Channel::Mask(_) => "mask",
            Channel::Boxes { .. } => "boxes",
        }
    }
}

/// Shape-level description of a channel, sufficient for binding rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelSpec {
    Mask { height: usize, width: usize },
    Boxes,
}

/// What a rule binder needs to know about a scene: the image grid and the
/// kind/shape of every channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub image_shape: (usize, usize),
    pub channels: BTreeMap<String, ChannelSpec>,
}

/// Free-form generation / provenance metadata carried along with a scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_person_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spurious_box_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

/// One image's worth of named mask and box channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub id: String,
    pub image_shape: (usize, usize),
    channels: BTreeMap<String, Channel>,
    pub meta: SceneMeta,
}

impl SceneBundle {
    pub fn new(id: impl Into<String>, image_shape: (usize, usize)) -> Self {
        SceneBundle {
            id: id.into(),
            image_shape,
            channels: BTreeMap::new(),
            meta: SceneMeta::default(),
        }
    }

    pub fn add_mask(&mut self, name: impl Into<String>, mask: TruthMask) -> Result<(), SceneError> {
        let name = name.into();
        if self.channels.contains_key(&name) {
            return Err(SceneError::DuplicateChannel(name));
        }
        self.channels.insert(name, Channel::Mask(mask));
        Ok(())
    }

    pub fn add_boxes(
        &mut self,
        name: impl Into<String>,
        boxes: Vec<BoundingBox>,
        constant_score: Option<TruthValue>,
    ) -> Result<(), SceneError> {
        let name = name.into();
        if self.channels.contains_key(&name) {
            return Err(SceneError::DuplicateChannel(name));
        }
        self.channels.insert(
            name,
            Channel::Boxes {
                boxes,
                constant_score,
            },
        );
        Ok(())
    }

    pub fn channels(&self) -> impl Iterator<Item = (&str, &Channel)> {
        self.channels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn channel(&self, name: &str) -> Result<&Channel, SceneError> {
        self.channels
            .get(name)
            .ok_or_else(|| SceneError::MissingChannel(name.to_string()))
    }

    pub fn mask(&self, name: &str) -> Result<&TruthMask, SceneError> {
        match self.channel(name)? {
            Channel::Mask(m) => Ok(m),
            other => Err(SceneError::KindMismatch {
                name: name.to_string(),
                expected: "mask",
                found: other.kind_name(),
            }),
        }
    }

    pub fn boxes(&self, name: &str) -> Result<(&[BoundingBox], Option<TruthValue>), SceneError> {
        match self.channel(name)? {
            Channel::Boxes {
                boxes,
                constant_score,
            } => Ok((boxes, *constant_score)),
            other => Err(SceneError::KindMismatch {
                name: name.to_string(),
                expected: "boxes",
                found: other.kind_name(),
            }),
        }
    }

    pub fn layout(&self) -> SceneLayout {
        SceneLayout {
            image_shape: self.image_shape,
            channels: self
                .channels
                .iter()
                .map(|(name, ch)| {
                    let spec = match ch {
                        Channel::Mask(m) => ChannelSpec::Mask {
                            height: m.height(),
                            width: m.width(),
                        },
                        Channel::Boxes { .. } => ChannelSpec::Boxes,
                    };
                    (name.clone(), spec)
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_accessors() {
        let mut scene = SceneBundle::new("s0", (4, 4));
        scene
            .add_mask("arm", TruthMask::zeros(4, 4).unwrap())
            .unwrap();
        scene.add_boxes("person", vec![], None).unwrap();
        assert!(scene.mask("arm").is_ok());
        assert!(matches!(
            scene.mask("person"),
            Err(SceneError::KindMismatch { .. })
        ));
        assert!(matches!(
            scene.mask("torso"),
            Err(SceneError::MissingChannel(_))
        ));
        assert!(matches!(
            scene.add_mask("arm", TruthMask::zeros(1, 1).unwrap()),
            Err(SceneError::DuplicateChannel(_))
        ));
        let layout = scene.layout();
        assert_eq!(
            layout.channels["arm"],
            ChannelSpec::Mask {
                height: 4,
                width: 4
            }
        );
        assert_eq!(layout.channels["person"], ChannelSpec::Boxes);
    }
}
