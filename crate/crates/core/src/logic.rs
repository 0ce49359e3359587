//! Scalar fuzzy connectives and quantifier reductions.
//!
//! Four connective families are supported: Łukasiewicz, Gödel (minimum),
//! Product (Goguen), and a non-fuzzy Boolean baseline that binarizes its
//! inputs at a threshold before applying the classical operation. A
//! [`LogicSystem`] bundles a family with an implication style and the
//! reduction modes used for the ∀ and ∃ quantifiers; every mask kernel and
//! monitor in this crate is parameterized by one.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("truth value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("truth value is NaN")]
    NotANumber,
    #[error("unknown {what}: {got}")]
    UnknownName { what: &'static str, got: String },
}

/// A truth degree in `[0, 1]`. NaN and out-of-range values are rejected at
/// construction, so a `TruthValue` is always safe to feed to a connective.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TruthValue(f64);

impl TruthValue {
    pub const FALSE: TruthValue = TruthValue(0.0);
    pub const TRUE: TruthValue = TruthValue(1.0);
    pub const HALF: TruthValue = TruthValue(0.5);

    pub fn new(value: f64) -> Result<Self, LogicError> {
        if value.is_nan() {
            return Err(LogicError::NotANumber);
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(LogicError::OutOfRange(value));
        }
        Ok(TruthValue(value))
    }

    /// Clamps a finite value into `[0, 1]`; NaN is still rejected.
    pub fn clamped(value: f64) -> Result<Self, LogicError> {
        if value.is_nan() {
            return Err(LogicError::NotANumber);
        }
        Ok(TruthValue(value.clamp(0.0, 1.0)))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TruthValue {
    type Error = LogicError;
    fn try_from(value: f64) -> Result<Self, LogicError> {
        TruthValue::new(value)
    }
}

impl From<TruthValue> for f64 {
    fn from(t: TruthValue) -> f64 {
        t.0
    }
}

impl fmt::Display for TruthValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicFamily {
    Lukasiewicz,
    Goedel,
    Product,
    Boolean,
}

impl LogicFamily {
    pub const FUZZY: [LogicFamily; 3] = [
        LogicFamily::Lukasiewicz,
        LogicFamily::Goedel,
        LogicFamily::Product,
    ];
    pub const ALL: [LogicFamily; 4] = [
        LogicFamily::Lukasiewicz,
        LogicFamily::Goedel,
        LogicFamily::Product,
        LogicFamily::Boolean,
    ];
}

impl fmt::Display for LogicFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LogicFamily::Lukasiewicz => "lukasiewicz",
            LogicFamily::Goedel => "goedel",
            LogicFamily::Product => "product",
            LogicFamily::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

impl FromStr for LogicFamily {
    type Err = LogicError;
    fn from_str(s: &str) -> Result<Self, LogicError> {
        match s.to_ascii_lowercase().as_str() {
            "lukasiewicz" | "luka" | "l" => Ok(LogicFamily::Lukasiewicz),
            "goedel" | "godel" | "g" => Ok(LogicFamily::Goedel),
            "product" | "goguen" | "p" => Ok(LogicFamily::Product),
            "boolean" | "bool" | "b" => Ok(LogicFamily::Boolean),
            _ => Err(LogicError::UnknownName {
                what: "logic family",
                got: s.to_string(),
            }),
        }
    }
}

/// S-implication is `¬a ∨ b`; R-implication is the residuum of the t-norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImplicationStyle {
    S,
    R,
}

impl fmt::Display for ImplicationStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImplicationStyle::S => "s",
            ImplicationStyle::R => "r",
        })
    }
}

impl FromStr for ImplicationStyle {
    type Err = LogicError;
    fn from_str(s: &str) -> Result<Self, LogicError> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "strong" => Ok(ImplicationStyle::S),
            "r" | "residuated" => Ok(ImplicationStyle::R),
            _ => Err(LogicError::UnknownName {
                what: "implication style",
                got: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForallMode {
    /// Arithmetic mean of the body values.
    Mean,
    /// Left fold with the family's conjunction, starting at the neutral 1.
    TnormReduce,
}

impl fmt::Display for ForallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForallMode::Mean => "mean",
            ForallMode::TnormReduce => "tnorm_reduce",
        })
    }
}

impl FromStr for ForallMode {
    type Err = LogicError;
    fn from_str(s: &str) -> Result<Self, LogicError> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(ForallMode::Mean),
            "tnorm_reduce" | "tnorm" => Ok(ForallMode::TnormReduce),
            _ => Err(LogicError::UnknownName {
                what: "forall mode",
                got: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExistsMode {
    /// Plain maximum (the Gödel t-conorm), the most conservative choice.
    GoedelMax,
    /// Left fold with the family's disjunction, starting at the neutral 0.
    TconormReduce,
    /// Arithmetic mean of the body values.
    Mean,
}

impl fmt::Display for ExistsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExistsMode::GoedelMax => "goedel_max",
            ExistsMode::TconormReduce => "tconorm_reduce",
            ExistsMode::Mean => "mean",
        })
    }
}

impl FromStr for ExistsMode {
    type Err = LogicError;
    fn from_str(s: &str) -> Result<Self, LogicError> {
        match s.to_ascii_lowercase().as_str() {
            "goedel_max" | "max" => Ok(ExistsMode::GoedelMax),
            "tconorm_reduce" | "tconorm" => Ok(ExistsMode::TconormReduce),
            "mean" => Ok(ExistsMode::Mean),
            _ => Err(LogicError::UnknownName {
                what: "exists mode",
                got: s.to_string(),
            }),
        }
    }
}

fn default_bool_threshold() -> TruthValue {
    TruthValue::HALF
}

/// A connective family plus quantifier reduction modes.
///
/// The default mirrors the setting used throughout the monitor experiments:
/// Product family, S-implication, mean for ∀ and max for ∃.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicSystem {
    pub family: LogicFamily,
    /// Binarization threshold, used only when `family` is `Boolean`.
    #[serde(default = "default_bool_threshold")]
    pub bool_threshold: TruthValue,
    #[serde(default = "LogicSystem::default_implication")]
    pub implication_style: ImplicationStyle,
    #[serde(default = "LogicSystem::default_forall")]
    pub forall_mode: ForallMode,
    #[serde(default = "LogicSystem::default_exists")]
    pub exists_mode: ExistsMode,
}

impl Default for LogicSystem {
    fn default() -> Self {
        LogicSystem::new(LogicFamily::Product)
    }
}

impl LogicSystem {
    fn default_implication() -> ImplicationStyle {
        ImplicationStyle::S
    }
    fn default_forall() -> ForallMode {
        ForallMode::Mean
    }
    fn default_exists() -> ExistsMode {
        ExistsMode::GoedelMax
    }

    pub fn new(family: LogicFamily) -> Self {
        LogicSystem {
            family,
            bool_threshold: TruthValue::HALF,
            implication_style: ImplicationStyle::S,
            forall_mode: ForallMode::Mean,
            exists_mode: ExistsMode::GoedelMax,
        }
    }

    pub fn with_implication(mut self, style: ImplicationStyle) -> Self {
        self.implication_style = style;
        self
    }

    pub fn with_forall(mut self, mode: ForallMode) -> Self {
        self.forall_mode = mode;
        self
    }

    pub fn with_exists(mut self, mode: ExistsMode) -> Self {
        self.exists_mode = mode;
        self
    }

    pub fn with_bool_threshold(mut self, t: TruthValue) -> Self {
        self.bool_threshold = t;
        self
    }

    #[inline]
    fn binarize(&self, a: f64) -> bool {
        a >= self.bool_threshold.0
    }

    #[inline]
    pub(crate) fn neg_raw(&self, a: f64) -> f64 {
        match self.family {
            LogicFamily::Boolean => {
                if self.binarize(a) {
                    0.0
                } else {
                    1.0
                }
            }
            _ => 1.0 - a,
        }
    }

    #[inline]
    pub(crate) fn conj_raw(&self, a: f64, b: f64) -> f64 {
        match self.family {
            LogicFamily::Lukasiewicz => (a + b - 1.0).max(0.0),
            LogicFamily::Goedel => a.min(b),
            LogicFamily::Product => a * b,
            LogicFamily::Boolean => {
                if self.binarize(a) && self.binarize(b) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub(crate) fn disj_raw(&self, a: f64, b: f64) -> f64 {
        match self.family {
            LogicFamily::Lukasiewicz => (a + b).min(1.0),
            LogicFamily::Goedel => a.max(b),
            // 1 - (1-a)(1-b) keeps the probabilistic sum inside [0, 1] even
            // with rounding; algebraically equal to a + b - ab.
            LogicFamily::Product => 1.0 - (1.0 - a) * (1.0 - b),
            LogicFamily::Boolean => {
                if self.binarize(a) || self.binarize(b) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub(crate) fn implies_raw(&self, a: f64, b: f64) -> f64 {
        self.implies_raw_with(self.implication_style, a, b)
    }

    #[inline]
    pub(crate) fn implies_raw_with(&self, style: ImplicationStyle, a: f64, b: f64) -> f64 {
        match style {
            ImplicationStyle::S => self.disj_raw(self.neg_raw(a), b),
            ImplicationStyle::R => match self.family {
                LogicFamily::Lukasiewicz => (1.0 - a + b).min(1.0),
                LogicFamily::Goedel => {
                    if a <= b {
                        1.0
                    } else {
                        b
                    }
                }
                // Residuum convention at a = 0: sup{c : 0·c <= b} = 1.
                LogicFamily::Product => {
                    if a <= 0.0 {
                        1.0
                    } else {
                        (b / a).min(1.0)
                    }
                }
                LogicFamily::Boolean => self.disj_raw(self.neg_raw(a), b),
            },
        }
    }

    pub fn neg(&self, a: TruthValue) -> TruthValue {
        TruthValue(self.neg_raw(a.0))
    }

    pub fn conj(&self, a: TruthValue, b: TruthValue) -> TruthValue {
        TruthValue(self.conj_raw(a.0, b.0))
    }

    pub fn disj(&self, a: TruthValue, b: TruthValue) -> TruthValue {
        TruthValue(self.disj_raw(a.0, b.0))
    }

    /// Implication in the system's configured style.
    pub fn implies(&self, a: TruthValue, b: TruthValue) -> TruthValue {
        TruthValue(self.implies_raw(a.0, b.0))
    }

    /// Implication with an explicit style, overriding the configured one.
    pub fn implies_with(&self, style: ImplicationStyle, a: TruthValue, b: TruthValue) -> TruthValue {
        TruthValue(self.implies_raw_with(style, a.0, b.0))
    }

    pub(crate) fn reduce_forall_raw(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        match self.forall_mode {
            ForallMode::Mean => {
                let mut sum = 0.0;
                let mut count = 0usize;
                for v in values {
                    sum += v;
                    count += 1;
                }
                if count == 0 {
                    // Vacuous universal.
                    1.0
                } else {
                    sum / count as f64
                }
            }
            ForallMode::TnormReduce => {
                let mut acc = 1.0;
                for v in values {
                    acc = self.conj_raw(acc, v);
                }
                acc
            }
        }
    }

    pub(crate) fn reduce_exists_raw(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        match self.exists_mode {
            ExistsMode::GoedelMax => {
                let mut acc = 0.0f64;
                for v in values {
                    acc = acc.max(v);
                }
                acc
            }
            ExistsMode::TconormReduce => {
                let mut acc = 0.0;
                for v in values {
                    acc = self.disj_raw(acc, v);
                }
                acc
            }
            ExistsMode::Mean => {
                let mut sum = 0.0;
                let mut count = 0usize;
                for v in values {
                    sum += v;
                    count += 1;
                }
                if count == 0 {
                    // Vacuous existential.
                    0.0
                } else {
                    sum / count as f64
                }
            }
        }
    }

    /// ∀ reduction over a sequence; the empty sequence is vacuously 1.
    pub fn reduce_forall(&self, values: impl IntoIterator<Item = TruthValue>) -> TruthValue {
        TruthValue(self.reduce_forall_raw(values.into_iter().map(|t| t.0)))
    }

    /// ∃ reduction over a sequence; the empty sequence yields 0.
    pub fn reduce_exists(&self, values: impl IntoIterator<Item = TruthValue>) -> TruthValue {
        TruthValue(self.reduce_exists_raw(values.into_iter().map(|t| t.0)))
    }

    /// Whether `∃x: f(x) ≡ ¬∀x: ¬f(x)` holds identically for this
    /// configuration on arbitrary inputs. The Boolean family satisfies the
    /// duality only for the fold modes, where every step binarizes anyway.
    pub fn modes_are_demorgan_dual(&self) -> bool {
        match (self.forall_mode, self.exists_mode) {
            (ForallMode::TnormReduce, ExistsMode::TconormReduce) => true,
            (ForallMode::Mean, ExistsMode::Mean) => self.family != LogicFamily::Boolean,
            (ForallMode::TnormReduce, ExistsMode::GoedelMax) => {
                self.family == LogicFamily::Goedel
            }
            _ => false,
        }
    }

    /// `|∃(values) − ¬∀(¬values)|` on a concrete sample.
    pub fn demorgan_gap(&self, values: &[TruthValue]) -> f64 {
        let exists = self.reduce_exists_raw(values.iter().map(|t| t.0));
        let dual = self.neg_raw(self.reduce_forall_raw(values.iter().map(|t| self.neg_raw(t.0))));
        (exists - dual).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(v: f64) -> TruthValue {
        TruthValue::new(v).unwrap()
    }

    fn luka() -> LogicSystem {
        LogicSystem::new(LogicFamily::Lukasiewicz)
    }
    fn goedel() -> LogicSystem {
        LogicSystem::new(LogicFamily::Goedel)
    }
    fn product() -> LogicSystem {
        LogicSystem::new(LogicFamily::Product)
    }
    fn boolean() -> LogicSystem {
        LogicSystem::new(LogicFamily::Boolean)
    }

    #[test]
    fn truth_value_rejects_nan_and_out_of_range() {
        assert!(matches!(
            TruthValue::new(f64::NAN),
            Err(LogicError::NotANumber)
        ));
        assert!(matches!(
            TruthValue::new(1.5),
            Err(LogicError::OutOfRange(_))
        ));
        assert!(matches!(
            TruthValue::new(-0.1),
            Err(LogicError::OutOfRange(_))
        ));
        assert_eq!(TruthValue::clamped(1.5).unwrap().value(), 1.0);
        assert!(TruthValue::clamped(f64::NAN).is_err());
    }

    #[test]
    fn neg_examples() {
        for l in [luka(), goedel(), product()] {
            assert_eq!(l.neg(tv(0.0)).value(), 1.0);
        }
        assert!((product().neg(tv(0.3)).value() - 0.7).abs() < 1e-15);
        assert_eq!(boolean().neg(tv(0.4)).value(), 1.0);
        assert_eq!(boolean().neg(tv(0.5)).value(), 0.0); // binarization uses >=
    }

    #[test]
    fn conj_examples() {
        assert!((luka().conj(tv(0.7), tv(0.6)).value() - 0.3).abs() < 1e-15);
        assert_eq!(product().conj(tv(0.5), tv(0.5)).value(), 0.25);
        for l in [luka(), goedel(), product()] {
            for x in [0.0, 0.13, 0.75, 1.0] {
                assert!((l.conj(tv(x), tv(1.0)).value() - x).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn disj_examples() {
        assert_eq!(product().disj(tv(0.5), tv(0.5)).value(), 0.75);
        assert_eq!(luka().disj(tv(0.7), tv(0.6)).value(), 1.0);
        for l in [luka(), goedel(), product()] {
            for x in [0.0, 0.13, 0.75, 1.0] {
                assert!((l.disj(tv(x), tv(0.0)).value() - x).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn implication_examples() {
        let l = luka().with_implication(ImplicationStyle::S);
        assert!((l.implies(tv(0.3), tv(0.2)).value() - 0.9).abs() < 1e-15);
        let g = goedel().with_implication(ImplicationStyle::R);
        assert_eq!(g.implies(tv(0.3), tv(0.2)).value(), 0.2);
        let p = product().with_implication(ImplicationStyle::R);
        assert_eq!(p.implies(tv(0.0), tv(0.0)).value(), 1.0);
        // Łukasiewicz S and R coincide.
        for (a, b) in [(0.2, 0.9), (0.9, 0.2), (0.5, 0.5)] {
            assert_eq!(
                luka().implies_with(ImplicationStyle::S, tv(a), tv(b)),
                luka().implies_with(ImplicationStyle::R, tv(a), tv(b))
            );
        }
    }

    #[test]
    fn forall_examples() {
        let mean = product().with_forall(ForallMode::Mean);
        assert!((mean.reduce_forall([tv(0.2), tv(0.4), tv(0.9)]).value() - 0.5).abs() < 1e-15);
        assert_eq!(mean.reduce_forall([]).value(), 1.0);
        let fold = luka().with_forall(ForallMode::TnormReduce);
        assert!((fold.reduce_forall([tv(0.9), tv(0.8)]).value() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn exists_examples() {
        let m = goedel().with_exists(ExistsMode::GoedelMax);
        assert_eq!(m.reduce_exists([tv(0.3), tv(0.8), tv(0.1)]).value(), 0.8);
        assert_eq!(m.reduce_exists([]).value(), 0.0);
        let p = product().with_exists(ExistsMode::TconormReduce);
        assert_eq!(p.reduce_exists([tv(0.5), tv(0.5)]).value(), 0.75);
        let mean = product().with_exists(ExistsMode::Mean);
        assert_eq!(mean.reduce_exists([]).value(), 0.0);
    }

    #[test]
    fn s_implication_is_neg_disj() {
        for l in LogicFamily::ALL.map(LogicSystem::new) {
            for a in [0.0, 0.2, 0.5, 0.77, 1.0] {
                for b in [0.0, 0.31, 0.5, 0.9, 1.0] {
                    let lhs = l.implies_with(ImplicationStyle::S, tv(a), tv(b));
                    let rhs = l.disj(l.neg(tv(a)), tv(b));
                    assert_eq!(lhs.value(), rhs.value(), "family {:?}", l.family);
                }
            }
        }
    }

    #[test]
    fn demorgan_dual_predicate_matches_gap() {
        let samples: Vec<Vec<f64>> = vec![
            vec![],
            vec![0.7],
            vec![0.1, 0.9, 0.4],
            vec![0.25, 0.25, 0.25, 0.99],
        ];
        for family in LogicFamily::ALL {
            for fm in [ForallMode::Mean, ForallMode::TnormReduce] {
                for em in [
                    ExistsMode::GoedelMax,
                    ExistsMode::TconormReduce,
                    ExistsMode::Mean,
                ] {
                    let logic = LogicSystem::new(family).with_forall(fm).with_exists(em);
                    if logic.modes_are_demorgan_dual() {
                        for s in &samples {
                            let vs: Vec<TruthValue> = s.iter().map(|&v| tv(v)).collect();
                            assert!(
                                logic.demorgan_gap(&vs) < 1e-12,
                                "family {family:?} forall {fm:?} exists {em:?} sample {s:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn string_round_trips() {
        for f in LogicFamily::ALL {
            assert_eq!(f.to_string().parse::<LogicFamily>().unwrap(), f);
        }
        assert_eq!("max".parse::<ExistsMode>().unwrap(), ExistsMode::GoedelMax);
        assert_eq!(
            "tnorm_reduce".parse::<ForallMode>().unwrap(),
            ForallMode::TnormReduce
        );
    }
}
