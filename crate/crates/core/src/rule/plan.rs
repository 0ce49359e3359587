//! Lowering a bound formula to a kernel DAG, and executing that DAG.
//!
//! Elementwise connectives evaluate per pixel over the target grid. The
//! pattern `∃q: f(q) ∧ closeby(p, q)` lowers to a single windowed kernel
//! ([`crate::mask::close_to_a`] semantics); the dual pattern
//! `∀q: closeby(p, q) → f(q)` lowers to a windowed kernel that keeps the
//! full-domain quantifier semantics (out-of-window cells contribute the
//! neutral `CloseBy = 0 → …` value of 1). A closeby relation without a
//! finite window refuses windowed lowering and falls back to an all-pairs
//! kernel, recording a cost warning on the plan.
//!
//! Quantifiers over region domains reduce over the restricted pixel set
//! (the left-hand restricted-domain form); the expanded membership
//! implication over the whole grid is available through
//! [`super::BindOptions::membership_rhs_form`].

use super::ast::Formula;
use super::bind::{BoundFormula, BoundKind, DomainBinding, ScaleStep};
use super::{EvalError, PlanError};
use crate::logic::{ExistsMode, ForallMode, LogicFamily, LogicSystem, TruthValue};
use crate::mask::{
    binarize, boxes_to_mask, closeby_kernel, denoise, downscale_maxpool, upscale_bilinear,
    CloseByParams, TruthMask,
};
use crate::scene::SceneBundle;
use std::collections::BTreeMap;

pub type NodeId = usize;

/// Pixel-count semantics of a quantifier domain, for mean reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainRef {
    /// The whole evaluation grid.
    Full,
    /// Pixels where the referenced (binarized) mask node is 1.
    Region(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOp {
    /// Raw mask channel at its stored resolution.
    LoadMask { channel: String },
    /// Box channel rasterized at the target grid.
    LoadBoxes { channel: String },
    ConstScalar { value: f64 },
    /// Scalar broadcast to a constant mask on the target grid.
    Broadcast { input: NodeId },
    Denoise { input: NodeId, threshold: f64 },
    Binarize { input: NodeId, threshold: f64 },
    Upscale { input: NodeId, to: (usize, usize) },
    DownscaleMax { input: NodeId, to: (usize, usize) },
    Neg { input: NodeId },
    Conj { lhs: NodeId, rhs: NodeId },
    Disj { lhs: NodeId, rhs: NodeId },
    Implies { lhs: NodeId, rhs: NodeId },
    /// Windowed `p ↦ ∃q ∈ domain: f(q) ∧ CloseBy(p, q)`.
    CloseToA {
        input: NodeId,
        params: CloseByParams,
        domain: DomainRef,
    },
    /// All-pairs fallback of `CloseToA` for unbounded relations.
    CloseToAAllPairs {
        input: NodeId,
        params: CloseByParams,
        domain: DomainRef,
    },
    /// Windowed `p ↦ ∀q ∈ domain: CloseBy(p, q) → f(q)`, keeping the
    /// full-domain mean normalization.
    ForallCloseBy {
        input: NodeId,
        params: CloseByParams,
        domain: DomainRef,
    },
    /// All-pairs fallback of `ForallCloseBy`.
    ForallCloseByAllPairs {
        input: NodeId,
        params: CloseByParams,
        domain: DomainRef,
    },
    /// `∀`/`∃` over a body that ignores the quantified variable: reduces
    /// `#domain` copies of each value (closed forms, applied elementwise).
    RepeatReduce {
        input: NodeId,
        forall: bool,
        domain: DomainRef,
    },
    ReduceForall { input: NodeId, domain: DomainRef },
    ReduceExists { input: NodeId, domain: DomainRef },
}

/// One kernel node, annotated with the source fragment it implements.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanNode {
    pub op: PlanOp,
    pub describes: String,
}

/// Topologically ordered kernel DAG with exactly one output node.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPlan {
    nodes: Vec<PlanNode>,
    output: NodeId,
    pub output_is_mask: bool,
    pub target_shape: (usize, usize),
    pub logic: LogicSystem,
    pub warnings: Vec<String>,
    channels: BTreeMap<String, super::bind::ChannelBinding>,
}

impl EvalPlan {
    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    /// Shape signature of the DAG, ignoring kernel parameterization. Plans
    /// lowered for different fuzzy families share this signature.
    pub fn structure_signature(&self) -> String {
        let mut sig = String::new();
        for node in &self.nodes {
            let tag = match &node.op {
                PlanOp::LoadMask { channel } => format!("load({channel})"),
                PlanOp::LoadBoxes { channel } => format!("boxes({channel})"),
                PlanOp::ConstScalar { .. } => "const".into(),
                PlanOp::Broadcast { input } => format!("bcast<{input}"),
                PlanOp::Denoise { input, .. } => format!("denoise<{input}"),
                PlanOp::Binarize { input, .. } => format!("bin<{input}"),
                PlanOp::Upscale { input, .. } => format!("up<{input}"),
                PlanOp::DownscaleMax { input, .. } => format!("down<{input}"),
                PlanOp::Neg { input } => format!("neg<{input}"),
                PlanOp::Conj { lhs, rhs } => format!("conj<{lhs},{rhs}"),
                PlanOp::Disj { lhs, rhs } => format!("disj<{lhs},{rhs}"),
                PlanOp::Implies { lhs, rhs } => format!("impl<{lhs},{rhs}"),
                PlanOp::CloseToA { input, .. } => format!("closetoa<{input}"),
                PlanOp::CloseToAAllPairs { input, .. } => format!("closetoa_ap<{input}"),
                PlanOp::ForallCloseBy { input, .. } => format!("fa_closeby<{input}"),
                PlanOp::ForallCloseByAllPairs { input, .. } => format!("fa_closeby_ap<{input}"),
                PlanOp::RepeatReduce { input, forall, .. } => {
                    format!("repeat{}<{input}", if *forall { "A" } else { "E" })
                }
                PlanOp::ReduceForall { input, .. } => format!("reduceA<{input}"),
                PlanOp::ReduceExists { input, .. } => format!("reduceE<{input}"),
            };
            sig.push_str(&tag);
            sig.push(';');
        }
        sig
    }
}

/// Result of evaluating a plan: a mask for open formulas, a scalar truth
/// value for closed ones.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalOutput {
    Mask(TruthMask),
    Value(TruthValue),
}

impl EvalOutput {
    pub fn as_mask(&self) -> Option<&TruthMask> {
        match self {
            EvalOutput::Mask(m) => Some(m),
            EvalOutput::Value(_) => None,
        }
    }

    pub fn as_value(&self) -> Option<TruthValue> {
        match self {
            EvalOutput::Value(v) => Some(*v),
            EvalOutput::Mask(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Lowered {
    Scalar(NodeId),
    MaskOn { node: NodeId, var: String },
}

struct LowerCtx<'a> {
    bound: &'a BoundFormula,
    logic: LogicSystem,
    nodes: Vec<PlanNode>,
    warnings: Vec<String>,
    /// Channel name -> node id of its fully materialized chain.
    channel_nodes: BTreeMap<String, NodeId>,
    /// Channel name -> node id of its binarized region mask.
    region_nodes: BTreeMap<String, NodeId>,
    /// Quantified variables currently in scope (innermost last), plus the
    /// free variable at the bottom when the formula is open.
    scope: Vec<String>,
}

impl LowerCtx<'_> {
    fn push(&mut self, op: PlanOp, describes: impl Into<String>) -> NodeId {
        self.nodes.push(PlanNode {
            op,
            describes: describes.into(),
        });
        self.nodes.len() - 1
    }

    fn channel_chain(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.channel_nodes.get(name) {
            return id;
        }
        let binding = self.bound.channels.get(name).expect("bound channel");
        let mut id = match binding.kind {
            BoundKind::Mask { .. } => self.push(
                PlanOp::LoadMask {
                    channel: name.to_string(),
                },
                format!("load {name}"),
            ),
            BoundKind::Boxes { .. } => self.push(
                PlanOp::LoadBoxes {
                    channel: name.to_string(),
                },
                format!("rasterize {name}"),
            ),
        };
        if let Some(threshold) = binding.denoise {
            id = self.push(
                PlanOp::Denoise {
                    input: id,
                    threshold,
                },
                format!("denoise {name}"),
            );
        }
        match binding.scale {
            Some(ScaleStep::UpscaleBilinear { to, .. }) => {
                id = self.push(PlanOp::Upscale { input: id, to }, format!("upscale {name}"));
            }
            Some(ScaleStep::DownscaleMaxpool { to, .. }) => {
                id = self.push(
                    PlanOp::DownscaleMax { input: id, to },
                    format!("downscale {name}"),
                );
            }
            None => {}
        }
        if self.logic.family == LogicFamily::Boolean {
            id = self.push(
                PlanOp::Binarize {
                    input: id,
                    threshold: self.logic.bool_threshold.value(),
                },
                format!("binarize {name}"),
            );
        }
        self.channel_nodes.insert(name.to_string(), id);
        id
    }

    /// Binarized-at-0.5 membership mask for a region domain.
    fn region_node(&mut self, channel: &str) -> NodeId {
        if let Some(&id) = self.region_nodes.get(channel) {
            return id;
        }
        let base = self.channel_chain(channel);
        let id = self.push(
            PlanOp::Binarize {
                input: base,
                threshold: 0.5,
            },
            format!("region {channel}"),
        );
        self.region_nodes.insert(channel.to_string(), id);
        id
    }

    fn domain_ref(&mut self, domain: &str) -> DomainRef {
        match self.bound.domains.get(domain) {
            Some(DomainBinding::FullGrid) | None => DomainRef::Full,
            Some(DomainBinding::Region { channel }) => {
                let channel = channel.clone();
                DomainRef::Region(self.region_node(&channel))
            }
        }
    }

    fn combine(
        &mut self,
        op: fn(NodeId, NodeId) -> PlanOp,
        lhs: Lowered,
        rhs: Lowered,
        describes: String,
    ) -> Result<Lowered, PlanError> {
        match (lhs, rhs) {
            (Lowered::Scalar(a), Lowered::Scalar(b)) => {
                Ok(Lowered::Scalar(self.push(op(a, b), describes)))
            }
            (Lowered::MaskOn { node: a, var }, Lowered::Scalar(b)) => Ok(Lowered::MaskOn {
                node: self.push(op(a, b), describes),
                var,
            }),
            (Lowered::Scalar(a), Lowered::MaskOn { node: b, var }) => Ok(Lowered::MaskOn {
                node: self.push(op(a, b), describes),
                var,
            }),
            (Lowered::MaskOn { node: a, var: va }, Lowered::MaskOn { node: b, var: vb }) => {
                if va != vb {
                    return Err(PlanError::CrossPixel { a: va, b: vb });
                }
                Ok(Lowered::MaskOn {
                    node: self.push(op(a, b), describes),
                    var: va,
                })
            }
        }
    }

    fn lower_formula(&mut self, f: &Formula) -> Result<Lowered, PlanError> {
        match f {
            Formula::Pred { name, var } => {
                if !self.scope.iter().any(|v| v == var) {
                    return Err(PlanError::UnboundVariable { var: var.clone() });
                }
                let node = self.channel_chain(name);
                Ok(Lowered::MaskOn {
                    node,
                    var: var.clone(),
                })
            }
            Formula::CloseBy { a, b, .. } => Err(PlanError::BareCloseBy {
                a: a.clone(),
                b: b.clone(),
            }),
            Formula::Denoise { threshold, body } => {
                let inner = self.lower_formula(body)?;
                let describes = format!("denoise {body}");
                Ok(match inner {
                    Lowered::Scalar(input) => Lowered::Scalar(self.push(
                        PlanOp::Denoise {
                            input,
                            threshold: *threshold,
                        },
                        describes,
                    )),
                    Lowered::MaskOn { node: input, var } => Lowered::MaskOn {
                        node: self.push(
                            PlanOp::Denoise {
                                input,
                                threshold: *threshold,
                            },
                            describes,
                        ),
                        var,
                    },
                })
            }
            Formula::Not(body) => {
                let inner = self.lower_formula(body)?;
                let describes = format!("!{body}");
                Ok(match inner {
                    Lowered::Scalar(input) => {
                        Lowered::Scalar(self.push(PlanOp::Neg { input }, describes))
                    }
                    Lowered::MaskOn { node: input, var } => Lowered::MaskOn {
                        node: self.push(PlanOp::Neg { input }, describes),
                        var,
                    },
                })
            }
            Formula::And(l, r) => {
                let lhs = self.lower_formula(l)?;
                let rhs = self.lower_formula(r)?;
                self.combine(|lhs, rhs| PlanOp::Conj { lhs, rhs }, lhs, rhs, f.to_string())
            }
            Formula::Or(l, r) => {
                let lhs = self.lower_formula(l)?;
                let rhs = self.lower_formula(r)?;
                self.combine(|lhs, rhs| PlanOp::Disj { lhs, rhs }, lhs, rhs, f.to_string())
            }
            Formula::Implies(l, r) => {
                let lhs = self.lower_formula(l)?;
                let rhs = self.lower_formula(r)?;
                self.combine(
                    |lhs, rhs| PlanOp::Implies { lhs, rhs },
                    lhs,
                    rhs,
                    f.to_string(),
                )
            }
            Formula::ForAll { var, domain, body } => self.lower_quantifier(f, true, var, domain, body),
            Formula::Exists { var, domain, body } => {
                self.lower_quantifier(f, false, var, domain, body)
            }
        }
    }

    fn lower_quantifier(
        &mut self,
        whole: &Formula,
        forall: bool,
        var: &str,
        domain: &str,
        body: &Formula,
    ) -> Result<Lowered, PlanError> {
        // Membership expansion: rewrite `∀p ∈ Q: F` as
        // `∀p ∈ grid: (p ∈ Q) → F` (∃ uses ∧), the Eq.-4 right-hand form.
        let rhs_form = self.bound.options.membership_rhs_form
            && matches!(
                self.bound.domains.get(domain),
                Some(DomainBinding::Region { .. })
            );

        if let Some(lowered) = self.try_closeby_pattern(whole, forall, var, domain, body)? {
            return Ok(lowered);
        }

        self.scope.push(var.to_string());
        let inner = self.lower_formula(body);
        self.scope.pop();
        let inner = inner?;

        let domain_ref = if rhs_form {
            DomainRef::Full
        } else {
            self.domain_ref(domain)
        };

        let inner = if rhs_form {
            let DomainBinding::Region { channel } = self.bound.domains[domain].clone() else {
                unreachable!("rhs_form requires a region domain")
            };
            let membership = self.region_node(&channel);
            let describes = format!("membership {channel}");
            match inner {
                Lowered::Scalar(b) => {
                    let op = if forall {
                        PlanOp::Implies {
                            lhs: membership,
                            rhs: b,
                        }
                    } else {
                        PlanOp::Conj {
                            lhs: membership,
                            rhs: b,
                        }
                    };
                    Lowered::MaskOn {
                        node: self.push(op, describes),
                        var: var.to_string(),
                    }
                }
                Lowered::MaskOn { node, var: v } => {
                    if v != var {
                        // The membership mask lives on the quantified grid;
                        // combining it with a mask aligned to an outer pixel
                        // would conflate the two grids.
                        return Err(PlanError::CrossPixel {
                            a: v,
                            b: var.to_string(),
                        });
                    }
                    let op = if forall {
                        PlanOp::Implies {
                            lhs: membership,
                            rhs: node,
                        }
                    } else {
                        PlanOp::Conj {
                            lhs: membership,
                            rhs: node,
                        }
                    };
                    Lowered::MaskOn {
                        node: self.push(op, describes),
                        var: v,
                    }
                }
            }
        } else {
            inner
        };

        let describes = whole.to_string();
        match inner {
            // Body ignores the quantified pixel entirely: reduce #domain
            // copies of one value (elementwise when aligned to an outer
            // pixel variable).
            Lowered::Scalar(input) => Ok(Lowered::Scalar(self.push(
                PlanOp::RepeatReduce {
                    input,
                    forall,
                    domain: domain_ref,
                },
                describes,
            ))),
            Lowered::MaskOn { node, var: v } if v != var => Ok(Lowered::MaskOn {
                node: self.push(
                    PlanOp::RepeatReduce {
                        input: node,
                        forall,
                        domain: domain_ref,
                    },
                    describes,
                ),
                var: v,
            }),
            Lowered::MaskOn { node, .. } => {
                let op = if forall {
                    PlanOp::ReduceForall {
                        input: node,
                        domain: domain_ref,
                    }
                } else {
                    PlanOp::ReduceExists {
                        input: node,
                        domain: domain_ref,
                    }
                };
                Ok(Lowered::Scalar(self.push(op, describes)))
            }
        }
    }

    /// Recognizes `∃q: X(q) ∧ closeby(p, q)` and `∀q: closeby(p, q) → X(q)`
    /// and lowers each to a single windowed kernel aligned to `p`.
    fn try_closeby_pattern(
        &mut self,
        whole: &Formula,
        forall: bool,
        var: &str,
        domain: &str,
        body: &Formula,
    ) -> Result<Option<Lowered>, PlanError> {
        if self.bound.options.membership_rhs_form
            && matches!(
                self.bound.domains.get(domain),
                Some(DomainBinding::Region { .. })
            )
        {
            // The expanded membership form is handled by the general path.
            return Ok(None);
        }

        let (params, outer, rest): (CloseByParams, String, Vec<&Formula>) = if forall {
            let Formula::Implies(lhs, rhs) = body else {
                return Ok(None);
            };
            let Formula::CloseBy { a, b, params } = lhs.as_ref() else {
                return Ok(None);
            };
            let Some(outer) = self.closeby_partner(a, b, var) else {
                return Ok(None);
            };
            (*params, outer, vec![rhs.as_ref()])
        } else {
            let mut conjuncts = Vec::new();
            flatten_and(body, &mut conjuncts);
            let mut closeby: Option<(CloseByParams, String)> = None;
            let mut rest = Vec::new();
            for &c in &conjuncts {
                match c {
                    Formula::CloseBy { a, b, params } if closeby.is_none() => {
                        match self.closeby_partner(a, b, var) {
                            Some(outer) => closeby = Some((*params, outer)),
                            None => return Ok(None),
                        }
                    }
                    other => rest.push(other),
                }
            }
            let Some((params, outer)) = closeby else {
                return Ok(None);
            };
            (params, outer, rest)
        };

        // The remaining body may reference only the quantified pixel.
        for part in &rest {
            let free = part.free_vars();
            if free.iter().any(|v| v != var) {
                return Ok(None);
            }
        }

        // Lower the residual body aligned to the quantified pixel.
        self.scope.push(var.to_string());
        let mut residual: Option<Lowered> = None;
        for part in rest {
            let lowered = self.lower_formula(part)?;
            residual = Some(match residual {
                None => lowered,
                Some(prev) => self.combine(
                    |lhs, rhs| PlanOp::Conj { lhs, rhs },
                    prev,
                    lowered,
                    part.to_string(),
                )?,
            });
        }
        self.scope.pop();

        let input = match residual {
            Some(Lowered::MaskOn { node, .. }) => node,
            Some(Lowered::Scalar(node)) => {
                self.push(PlanOp::Broadcast { input: node }, "broadcast".to_string())
            }
            None => {
                let one = self.push(PlanOp::ConstScalar { value: 1.0 }, "1".to_string());
                self.push(PlanOp::Broadcast { input: one }, "broadcast 1".to_string())
            }
        };

        let domain_ref = self.domain_ref(domain);
        let windowed = params.window_radius().is_some();
        if !windowed {
            self.warnings.push(format!(
                "closeby in {whole} has no finite window; falling back to all-pairs evaluation"
            ));
        }
        let op = match (forall, windowed) {
            (false, true) => PlanOp::CloseToA {
                input,
                params,
                domain: domain_ref,
            },
            (false, false) => PlanOp::CloseToAAllPairs {
                input,
                params,
                domain: domain_ref,
            },
            (true, true) => PlanOp::ForallCloseBy {
                input,
                params,
                domain: domain_ref,
            },
            (true, false) => PlanOp::ForallCloseByAllPairs {
                input,
                params,
                domain: domain_ref,
            },
        };
        let node = self.push(op, whole.to_string());
        Ok(Some(Lowered::MaskOn {
            node,
            var: outer,
        }))
    }

    /// For `closeby(a, b)` with one side the quantified `var`, returns the
    /// other side when it is an in-scope pixel variable.
    fn closeby_partner(&self, a: &str, b: &str, var: &str) -> Option<String> {
        let other = if a == var && b != var {
            b
        } else if b == var && a != var {
            a
        } else {
            return None;
        };
        if self.scope.iter().any(|v| v == other) {
            Some(other.to_string())
        } else {
            None
        }
    }
}

/// Compiles a bound formula into an executable kernel DAG for one logic.
pub fn lower(bound: &BoundFormula, logic: &LogicSystem) -> Result<EvalPlan, PlanError> {
    let mut ctx = LowerCtx {
        bound,
        logic: *logic,
        nodes: Vec::new(),
        warnings: Vec::new(),
        channel_nodes: BTreeMap::new(),
        region_nodes: BTreeMap::new(),
        scope: bound.free_var.iter().cloned().collect(),
    };
    let lowered = ctx.lower_formula(&bound.formula)?;
    let (output, output_is_mask) = match lowered {
        Lowered::Scalar(id) => (id, false),
        Lowered::MaskOn { node, .. } => (node, true),
    };
    Ok(EvalPlan {
        nodes: ctx.nodes,
        output,
        output_is_mask,
        target_shape: bound.target_shape,
        logic: *logic,
        warnings: ctx.warnings,
        channels: bound.channels.clone(),
    })
}

#[derive(Debug, Clone)]
enum PlanValue {
    Mask(TruthMask),
    Scalar(f64),
}

impl PlanValue {
    fn mask(&self) -> &TruthMask {
        match self {
            PlanValue::Mask(m) => m,
            PlanValue::Scalar(_) => panic!("plan type error: expected mask"),
        }
    }

    fn scalar(&self) -> f64 {
        match self {
            PlanValue::Scalar(v) => *v,
            PlanValue::Mask(_) => panic!("plan type error: expected scalar"),
        }
    }
}

/// Executes a plan against one scene. Deterministic and pure.
pub fn evaluate(plan: &EvalPlan, scene: &SceneBundle) -> Result<EvalOutput, EvalError> {
    let logic = &plan.logic;
    let mut values: Vec<PlanValue> = Vec::with_capacity(plan.nodes.len());
    for node in &plan.nodes {
        let value = match &node.op {
            PlanOp::LoadMask { channel } => {
                let mask = scene.mask(channel)?;
                let binding = &plan.channels[channel];
                if let BoundKind::Mask { stored } = binding.kind {
                    if mask.shape() != stored {
                        return Err(EvalError::ChannelShape {
                            name: channel.clone(),
                            expected: stored,
                            found: mask.shape(),
                        });
                    }
                }
                PlanValue::Mask(mask.clone())
            }
            PlanOp::LoadBoxes { channel } => {
                let (boxes, constant_score) = scene.boxes(channel)?;
                let binding = &plan.channels[channel];
                let BoundKind::Boxes { coord_scale } = binding.kind else {
                    unreachable!("box node bound as mask")
                };
                let scaled: Vec<_> = boxes
                    .iter()
                    .map(|b| b.scaled(coord_scale.0, coord_scale.1))
                    .collect();
                PlanValue::Mask(boxes_to_mask(
                    &scaled,
                    plan.target_shape,
                    logic,
                    constant_score,
                )?)
            }
            PlanOp::ConstScalar { value } => PlanValue::Scalar(*value),
            PlanOp::Broadcast { input } => {
                let v = values[*input].scalar();
                PlanValue::Mask(TruthMask::constant(
                    plan.target_shape.0,
                    plan.target_shape.1,
                    TruthValue::clamped(v).expect("plan values stay in range"),
                )?)
            }
            PlanOp::Denoise { input, threshold } => {
                apply_unary(&values[*input], |m| {
                    Ok(denoise(m, TruthValue::clamped(*threshold).expect("checked")))
                }, |v| if v < *threshold { 0.0 } else { v })?
            }
            PlanOp::Binarize { input, threshold } => apply_unary(
                &values[*input],
                |m| Ok(binarize(m, TruthValue::clamped(*threshold).expect("checked"))),
                |v| if v >= *threshold { 1.0 } else { 0.0 },
            )?,
            PlanOp::Upscale { input, to } => {
                PlanValue::Mask(upscale_bilinear(values[*input].mask(), *to)?)
            }
            PlanOp::DownscaleMax { input, to } => {
                PlanValue::Mask(downscale_maxpool(values[*input].mask(), *to)?)
            }
            PlanOp::Neg { input } => apply_unary(
                &values[*input],
                |m| Ok(m.neg(logic)),
                |v| logic.neg_raw(v),
            )?,
            PlanOp::Conj { lhs, rhs } => apply_binary(
                &values[*lhs],
                &values[*rhs],
                |a, b| logic.conj_raw(a, b),
            )?,
            PlanOp::Disj { lhs, rhs } => apply_binary(
                &values[*lhs],
                &values[*rhs],
                |a, b| logic.disj_raw(a, b),
            )?,
            PlanOp::Implies { lhs, rhs } => apply_binary(
                &values[*lhs],
                &values[*rhs],
                |a, b| logic.implies_raw(a, b),
            )?,
            PlanOp::CloseToA {
                input,
                params,
                domain,
            } => PlanValue::Mask(eval_close_to_a(
                values[*input].mask(),
                params,
                region_of(&values, *domain),
                logic,
                false,
            )?),
            PlanOp::CloseToAAllPairs {
                input,
                params,
                domain,
            } => PlanValue::Mask(eval_close_to_a(
                values[*input].mask(),
                params,
                region_of(&values, *domain),
                logic,
                true,
            )?),
            PlanOp::ForallCloseBy {
                input,
                params,
                domain,
            } => PlanValue::Mask(eval_forall_closeby(
                values[*input].mask(),
                params,
                region_of(&values, *domain),
                logic,
                false,
            )?),
            PlanOp::ForallCloseByAllPairs {
                input,
                params,
                domain,
            } => PlanValue::Mask(eval_forall_closeby(
                values[*input].mask(),
                params,
                region_of(&values, *domain),
                logic,
                true,
            )?),
            PlanOp::RepeatReduce {
                input,
                forall,
                domain,
            } => {
                let count = match region_of(&values, *domain) {
                    Some(region) => region.count(|v| v >= 0.5),
                    None => plan.target_shape.0 * plan.target_shape.1,
                };
                apply_unary(
                    &values[*input],
                    |m| Ok(m.map(|v| repeat_reduce(logic, *forall, v, count))),
                    |v| repeat_reduce(logic, *forall, v, count),
                )?
            }
            PlanOp::ReduceForall { input, domain } => {
                let mask = values[*input].mask();
                let v = match region_of(&values, *domain) {
                    None => logic.reduce_forall_raw(mask.values().iter().copied()),
                    Some(region) => logic.reduce_forall_raw(restricted(mask, region)),
                };
                PlanValue::Scalar(v)
            }
            PlanOp::ReduceExists { input, domain } => {
                let mask = values[*input].mask();
                let v = match region_of(&values, *domain) {
                    None => logic.reduce_exists_raw(mask.values().iter().copied()),
                    Some(region) => logic.reduce_exists_raw(restricted(mask, region)),
                };
                PlanValue::Scalar(v)
            }
        };
        values.push(value);
    }
    Ok(match &values[plan.output] {
        PlanValue::Mask(m) => EvalOutput::Mask(m.clone()),
        PlanValue::Scalar(v) => {
            EvalOutput::Value(TruthValue::clamped(*v).expect("plan output in range"))
        }
    })
}

fn region_of(values: &[PlanValue], domain: DomainRef) -> Option<&TruthMask> {
    match domain {
        DomainRef::Full => None,
        DomainRef::Region(node) => Some(values[node].mask()),
    }
}

fn restricted<'a>(mask: &'a TruthMask, region: &'a TruthMask) -> impl Iterator<Item = f64> + 'a {
    debug_assert_eq!(mask.shape(), region.shape());
    mask.values()
        .iter()
        .zip(region.values())
        .filter(|(_, &r)| r >= 0.5)
        .map(|(&v, _)| v)
}

fn apply_unary(
    value: &PlanValue,
    mask_op: impl FnOnce(&TruthMask) -> Result<TruthMask, crate::mask::MaskError>,
    scalar_op: impl FnOnce(f64) -> f64,
) -> Result<PlanValue, EvalError> {
    Ok(match value {
        PlanValue::Mask(m) => PlanValue::Mask(mask_op(m)?),
        PlanValue::Scalar(v) => PlanValue::Scalar(scalar_op(*v)),
    })
}

fn apply_binary(
    lhs: &PlanValue,
    rhs: &PlanValue,
    op: impl Fn(f64, f64) -> f64,
) -> Result<PlanValue, EvalError> {
    Ok(match (lhs, rhs) {
        (PlanValue::Scalar(a), PlanValue::Scalar(b)) => PlanValue::Scalar(op(*a, *b)),
        (PlanValue::Mask(a), PlanValue::Scalar(b)) => PlanValue::Mask(a.map(|v| op(v, *b))),
        (PlanValue::Scalar(a), PlanValue::Mask(b)) => PlanValue::Mask(b.map(|v| op(*a, v))),
        (PlanValue::Mask(a), PlanValue::Mask(b)) => {
            PlanValue::Mask(a.zip_map(b, |x, y| op(x, y))?)
        }
    })
}

/// Quantifier over `count` copies of the same value, in closed form. The
/// closed forms agree with iterated folding of the associative connectives.
fn repeat_reduce(logic: &LogicSystem, forall: bool, v: f64, count: usize) -> f64 {
    let n = count as f64;
    if forall {
        if count == 0 {
            return 1.0;
        }
        match logic.forall_mode {
            ForallMode::Mean => v,
            ForallMode::TnormReduce => match logic.family {
                LogicFamily::Lukasiewicz => (n * v - (n - 1.0)).max(0.0),
                LogicFamily::Goedel => v,
                LogicFamily::Product => v.powf(n),
                LogicFamily::Boolean => {
                    if v >= logic.bool_threshold.value() {
                        1.0
                    } else {
                        0.0
                    }
                }
            },
        }
    } else {
        if count == 0 {
            return 0.0;
        }
        match logic.exists_mode {
            ExistsMode::Mean | ExistsMode::GoedelMax => v,
            ExistsMode::TconormReduce => match logic.family {
                LogicFamily::Lukasiewicz => (n * v).min(1.0),
                LogicFamily::Goedel => v,
                LogicFamily::Product => 1.0 - (1.0 - v).powf(n),
                LogicFamily::Boolean => {
                    if v >= logic.bool_threshold.value() {
                        1.0
                    } else {
                        0.0
                    }
                }
            },
        }
    }
}

/// Windowed or all-pairs `∃q ∈ domain: f(q) ∧ CloseBy(p, q)`. A mean ∃
/// divides by the domain size (grid or region pixel count).
fn eval_close_to_a(
    f_mask: &TruthMask,
    params: &CloseByParams,
    region: Option<&TruthMask>,
    logic: &LogicSystem,
    all_pairs: bool,
) -> Result<TruthMask, crate::mask::MaskError> {
    let (h, w) = f_mask.shape();
    let domain_size = match region {
        Some(r) => r.count(|v| v >= 0.5),
        None => h * w,
    };
    let in_region =
        |i: usize, j: usize| -> bool { region.map_or(true, |r| r.at(i, j) >= 0.5) };
    let kernel = if all_pairs {
        None
    } else {
        Some(closeby_kernel(params)?)
    };
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0f64;
            let mut fold = |f: f64, acc: &mut f64| match logic.exists_mode {
                ExistsMode::GoedelMax => *acc = acc.max(f),
                ExistsMode::TconormReduce => *acc = logic.disj_raw(*acc, f),
                ExistsMode::Mean => *acc += f,
            };
            match &kernel {
                Some(kernel) => {
                    let r = kernel.radius() as isize;
                    for dy in -r..=r {
                        let qi = i as isize + dy;
                        if qi < 0 || qi >= h as isize {
                            continue;
                        }
                        for dx in -r..=r {
                            let qj = j as isize + dx;
                            if qj < 0 || qj >= w as isize {
                                continue;
                            }
                            if !in_region(qi as usize, qj as usize) {
                                continue;
                            }
                            let f = logic.conj_raw(
                                f_mask.at(qi as usize, qj as usize),
                                kernel.weight_at(dy, dx),
                            );
                            fold(f, &mut acc);
                        }
                    }
                }
                None => {
                    for qi in 0..h {
                        for qj in 0..w {
                            if !in_region(qi, qj) {
                                continue;
                            }
                            let wgt =
                                params.weight(qi as f64 - i as f64, qj as f64 - j as f64);
                            let f = logic.conj_raw(f_mask.at(qi, qj), wgt);
                            fold(f, &mut acc);
                        }
                    }
                }
            }
            if logic.exists_mode == ExistsMode::Mean {
                acc = if domain_size == 0 {
                    0.0
                } else {
                    acc / domain_size as f64
                };
            }
            data.push(acc.clamp(0.0, 1.0));
        }
    }
    Ok(TruthMask::new(h, w, data)?)
}

/// Windowed or all-pairs `∀q ∈ domain: CloseBy(p, q) → f(q)`. Out-of-window
/// domain pixels contribute `impl(0, ·) = 1`; for the mean ∀ this keeps the
/// full-domain normalization exact.
fn eval_forall_closeby(
    f_mask: &TruthMask,
    params: &CloseByParams,
    region: Option<&TruthMask>,
    logic: &LogicSystem,
    all_pairs: bool,
) -> Result<TruthMask, crate::mask::MaskError> {
    let (h, w) = f_mask.shape();
    let domain_size = match region {
        Some(r) => r.count(|v| v >= 0.5),
        None => h * w,
    };
    let in_region =
        |i: usize, j: usize| -> bool { region.map_or(true, |r| r.at(i, j) >= 0.5) };
    let kernel = if all_pairs {
        None
    } else {
        Some(closeby_kernel(params)?)
    };
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let out = match logic.forall_mode {
                ForallMode::Mean => {
                    if domain_size == 0 {
                        1.0
                    } else {
                        let mut sum = 0.0;
                        let mut seen = 0usize;
                        let mut visit = |f: f64| {
                            sum += f;
                            seen += 1;
                        };
                        visit_window(
                            f_mask, &kernel, params, region.is_some(), &in_region, i, j, h, w,
                            |wgt, fv| visit(logic.implies_raw(wgt, fv)),
                        );
                        // Domain pixels outside the window see CloseBy = 0.
                        sum += (domain_size - seen) as f64;
                        sum / domain_size as f64
                    }
                }
                ForallMode::TnormReduce => {
                    let mut acc = 1.0f64;
                    visit_window(
                        f_mask, &kernel, params, region.is_some(), &in_region, i, j, h, w,
                        |wgt, fv| acc = logic.conj_raw(acc, logic.implies_raw(wgt, fv)),
                    );
                    acc
                }
            };
            data.push(out.clamp(0.0, 1.0));
        }
    }
    Ok(TruthMask::new(h, w, data)?)
}

#[allow(clippy::too_many_arguments)]
fn visit_window(
    f_mask: &TruthMask,
    kernel: &Option<crate::mask::CloseByKernel>,
    params: &CloseByParams,
    _has_region: bool,
    in_region: &impl Fn(usize, usize) -> bool,
    i: usize,
    j: usize,
    h: usize,
    w: usize,
    mut visit: impl FnMut(f64, f64),
) {
    match kernel {
        Some(kernel) => {
            let r = kernel.radius() as isize;
            for dy in -r..=r {
                let qi = i as isize + dy;
                if qi < 0 || qi >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let qj = j as isize + dx;
                    if qj < 0 || qj >= w as isize {
                        continue;
                    }
                    if !in_region(qi as usize, qj as usize) {
                        continue;
                    }
                    visit(kernel.weight_at(dy, dx), f_mask.at(qi as usize, qj as usize));
                }
            }
        }
        None => {
            for qi in 0..h {
                for qj in 0..w {
                    if !in_region(qi, qj) {
                        continue;
                    }
                    visit(
                        params.weight(qi as f64 - i as f64, qj as f64 - j as f64),
                        f_mask.at(qi, qj),
                    );
                }
            }
        }
    }
}

fn flatten_and<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
    match f {
        Formula::And(l, r) => {
            flatten_and(l, out);
            flatten_and(r, out);
        }
        other => out.push(other),
    }
}
