//! Binding: resolving predicate and domain names against a scene layout.
//!
//! Channels of mixed resolution are reconciled by the configured scaling
//! policy — bilinear upscaling to the image grid (default) or maxpool
//! downscaling to the smallest mask grid — never implicitly.

use super::ast::{Formula, WHOLE_IMAGE};
use super::BindError;
use crate::scene::{ChannelSpec, SceneLayout};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingPolicy {
    /// Upscale every mask bilinearly to the common largest resolution.
    #[default]
    UpscaleBilinear,
    /// Downscale every mask to the common smallest resolution via maxpool.
    DownscaleMaxpool,
}

impl std::str::FromStr for ScalingPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "upscale" | "upscale_bilinear" | "bilinear" => Ok(ScalingPolicy::UpscaleBilinear),
            "downscale" | "downscale_maxpool" | "maxpool" => Ok(ScalingPolicy::DownscaleMaxpool),
            other => Err(format!("unknown scaling policy {other:?}")),
        }
    }
}

/// How a mask travels from its stored resolution to the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleStep {
    UpscaleBilinear {
        from: (usize, usize),
        to: (usize, usize),
    },
    DownscaleMaxpool {
        from: (usize, usize),
        to: (usize, usize),
    },
}

/// Resolution-resolved materialization recipe for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBinding {
    pub kind: BoundKind,
    /// Denoise threshold applied at the stored resolution, before scaling.
    pub denoise: Option<f64>,
    pub scale: Option<ScaleStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundKind {
    Mask {
        stored: (usize, usize),
    },
    /// Boxes rasterize directly at the evaluation grid; stored coordinates
    /// are multiplied by `(sy, sx)` first.
    Boxes {
        coord_scale: (f64, f64),
    },
}

/// Quantifier domain resolved against the layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainBinding {
    /// Every pixel of the evaluation grid.
    FullGrid,
    /// Pixels of the evaluation grid where the named channel, binarized at
    /// 0.5, is 1 (the restricted-domain quantification form).
    Region { channel: String },
}

/// Options that change how a formula is bound and later lowered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BindOptions {
    pub policy: ScalingPolicy,
    /// Denoise threshold applied to every mask channel (None = off).
    pub denoise: Option<f64>,
    /// Expand region-restricted quantifiers into a membership implication
    /// over the full grid instead of restricting the domain.
    pub membership_rhs_form: bool,
}

impl Default for BindOptions {
    fn default() -> Self {
        BindOptions {
            policy: ScalingPolicy::UpscaleBilinear,
            denoise: None,
            membership_rhs_form: false,
        }
    }
}

/// A formula whose predicates and domains resolve against a concrete layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundFormula {
    pub formula: Formula,
    pub free_var: Option<String>,
    pub target_shape: (usize, usize),
    pub options: BindOptions,
    pub channels: BTreeMap<String, ChannelBinding>,
    pub domains: BTreeMap<String, DomainBinding>,
}

pub fn bind(
    formula: &Formula,
    layout: &SceneLayout,
    options: BindOptions,
) -> Result<BoundFormula, BindError> {
    let free_var = super::parser::check_variables(formula).map_err(BindError::Invalid)?;
    let predicate_names = formula.predicate_names();
    let domain_names = formula.domain_names();

    // Every referenced name must resolve; domains may be the whole image.
    for name in &predicate_names {
        if !layout.channels.contains_key(name) {
            return Err(BindError::UnknownPredicate { name: name.clone() });
        }
    }
    for name in &domain_names {
        if name != WHOLE_IMAGE && !layout.channels.contains_key(name) {
            return Err(BindError::UnknownDomain { name: name.clone() });
        }
    }

    let used: Vec<(&String, &ChannelSpec)> = layout
        .channels
        .iter()
        .filter(|(name, _)| predicate_names.contains(*name) || domain_names.contains(*name))
        .collect();

    let target_shape = match options.policy {
        ScalingPolicy::UpscaleBilinear => layout.image_shape,
        ScalingPolicy::DownscaleMaxpool => {
            let mut smallest = layout.image_shape;
            for (_, spec) in &used {
                if let ChannelSpec::Mask { height, width } = spec {
                    if *height * *width < smallest.0 * smallest.1 {
                        smallest = (*height, *width);
                    }
                }
            }
            smallest
        }
    };

    let mut channels = BTreeMap::new();
    for (name, spec) in &used {
        let binding = match spec {
            ChannelSpec::Mask { height, width } => {
                let stored = (*height, *width);
                let scale = scale_step(stored, target_shape, options.policy).map_err(|_| {
                    BindError::Irreconcilable {
                        name: (*name).clone(),
                        stored,
                        target: target_shape,
                    }
                })?;
                ChannelBinding {
                    kind: BoundKind::Mask { stored },
                    denoise: options.denoise,
                    scale,
                }
            }
            ChannelSpec::Boxes => {
                let sy = target_shape.0 as f64 / layout.image_shape.0 as f64;
                let sx = target_shape.1 as f64 / layout.image_shape.1 as f64;
                ChannelBinding {
                    kind: BoundKind::Boxes {
                        coord_scale: (sy, sx),
                    },
                    denoise: None,
                    scale: None,
                }
            }
        };
        channels.insert((*name).clone(), binding);
    }

    let mut domains = BTreeMap::new();
    for name in &domain_names {
        let binding = if name == WHOLE_IMAGE {
            DomainBinding::FullGrid
        } else {
            DomainBinding::Region {
                channel: name.clone(),
            }
        };
        domains.insert(name.clone(), binding);
    }

    Ok(BoundFormula {
        formula: formula.clone(),
        free_var,
        target_shape,
        options,
        channels,
        domains,
    })
}

fn scale_step(
    stored: (usize, usize),
    target: (usize, usize),
    policy: ScalingPolicy,
) -> Result<Option<ScaleStep>, ()> {
    if stored == target {
        return Ok(None);
    }
    match policy {
        ScalingPolicy::UpscaleBilinear => {
            if stored.0 <= target.0 && stored.1 <= target.1 {
                Ok(Some(ScaleStep::UpscaleBilinear {
                    from: stored,
                    to: target,
                }))
            } else {
                Err(())
            }
        }
        ScalingPolicy::DownscaleMaxpool => {
            if stored.0 >= target.0
                && stored.1 >= target.1
                && stored.0 % target.0 == 0
                && stored.1 % target.1 == 0
            {
                Ok(Some(ScaleStep::DownscaleMaxpool {
                    from: stored,
                    to: target,
                }))
            } else {
                Err(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::parse;
    use crate::scene::{ChannelSpec, SceneLayout};

    fn layout() -> SceneLayout {
        let mut channels = BTreeMap::new();
        channels.insert(
            "arm".to_string(),
            ChannelSpec::Mask {
                height: 25,
                width: 25,
            },
        );
        channels.insert(
            "eye".to_string(),
            ChannelSpec::Mask {
                height: 100,
                width: 100,
            },
        );
        channels.insert("person".to_string(), ChannelSpec::Boxes);
        SceneLayout {
            image_shape: (100, 100),
            channels,
        }
    }

    #[test]
    fn upscale_policy_inserts_scale_node() {
        let f = parse("forall p in P: arm(p) -> exists q in P: person(q) & closeby(p,q,trivial)")
            .unwrap();
        let bound = bind(&f, &layout(), BindOptions::default()).unwrap();
        assert_eq!(bound.target_shape, (100, 100));
        assert_eq!(
            bound.channels["arm"].scale,
            Some(ScaleStep::UpscaleBilinear {
                from: (25, 25),
                to: (100, 100)
            })
        );
        assert_eq!(bound.channels["person"].scale, None);
        match bound.channels["person"].kind {
            BoundKind::Boxes { coord_scale } => assert_eq!(coord_scale, (1.0, 1.0)),
            _ => panic!("person should bind as boxes"),
        }
    }

    #[test]
    fn downscale_policy_targets_smallest() {
        let f = parse("forall p in P: arm(p) & eye(p)").unwrap();
        let opts = BindOptions {
            policy: ScalingPolicy::DownscaleMaxpool,
            ..Default::default()
        };
        let bound = bind(&f, &layout(), opts).unwrap();
        assert_eq!(bound.target_shape, (25, 25));
        assert_eq!(
            bound.channels["eye"].scale,
            Some(ScaleStep::DownscaleMaxpool {
                from: (100, 100),
                to: (25, 25)
            })
        );
        assert_eq!(bound.channels["arm"].scale, None);
    }

    #[test]
    fn unknown_predicate_is_named() {
        let f = parse("torso(p)").unwrap();
        match bind(&f, &layout(), BindOptions::default()) {
            Err(BindError::UnknownPredicate { name }) => assert_eq!(name, "torso"),
            other => panic!("expected unknown predicate, got {other:?}"),
        }
    }

    #[test]
    fn region_domain_binds_channel() {
        let f = parse("forall p in eye: arm(p)").unwrap();
        let bound = bind(&f, &layout(), BindOptions::default()).unwrap();
        assert_eq!(
            bound.domains["eye"],
            DomainBinding::Region {
                channel: "eye".to_string()
            }
        );
        // The domain channel gets a binding too, so it can be materialized.
        assert!(bound.channels.contains_key("eye"));
    }
}
