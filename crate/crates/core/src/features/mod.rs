//! Declarative side-level features.
//!
//! A [`FeatureSet`] is an ordered list of named features; a choice model's
//! weights are aligned to it by position. Each feature evaluates to one real
//! value per side of a dilemma:
//!
//! * `count <Agent>` gives the number of agents of that type on the side;
//! * `indicator <name> <predicate>` gives 1 when the predicate holds for the
//!   side, 0 otherwise;
//! * `product <a> <b> [<c>]` multiplies previously defined base features.

pub mod axes;
mod parse;

use std::fmt;

use sha2::{Digest, Sha256};

use crate::dilemma::{AgentType, Dilemma, Side, Signal};
use crate::error::{Result, SrmError};

pub use axes::{axis_id, axis_names, classify_axis, residuals, Axis, AxisId, AxisKind, CATALOG};
pub use parse::parse_feature_spec;

/// Maximum number of atoms in one conjunction.
pub const MAX_CONJUNCTION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisRole {
    Favored,
    Disfavored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atom {
    /// Sparing this side requires the car to swerve, i.e. the car is
    /// currently headed into this side's lane.
    Intervention,
    Signal(Signal),
    Axis(AxisId, AxisRole),
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Intervention => f.write_str("intervention"),
            Atom::Signal(Signal::Legal) => f.write_str("signal:legal"),
            Atom::Signal(Signal::Illegal) => f.write_str("signal:illegal"),
            Atom::Signal(Signal::None) => f.write_str("signal:none"),
            Atom::Axis(id, AxisRole::Favored) => write!(f, "axis:{}:favored", id.name()),
            Atom::Axis(id, AxisRole::Disfavored) => write!(f, "axis:{}:disfavored", id.name()),
        }
    }
}

/// Conjunction of one to three atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    atoms: Vec<Atom>,
}

impl Predicate {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() > MAX_CONJUNCTION {
            return Err(SrmError::Config(format!(
                "a predicate needs 1 to {MAX_CONJUNCTION} atoms, got {}",
                atoms.len()
            )));
        }
        Ok(Predicate { atoms })
    }

    pub fn atom(atom: Atom) -> Self {
        Predicate { atoms: vec![atom] }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let [single] = self.atoms.as_slice() {
            return write!(f, "{single}");
        }
        f.write_str("(and")?;
        for a in &self.atoms {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Count(AgentType),
    Indicator(Predicate),
    /// Per-side product of base (count or indicator) features.
    Product(Vec<FeatureDef>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureDef {
    pub fn count(agent: AgentType) -> Self {
        FeatureDef {
            name: agent.name().to_string(),
            kind: FeatureKind::Count(agent),
        }
    }

    pub fn indicator(name: impl Into<String>, predicate: Predicate) -> Self {
        FeatureDef {
            name: name.into(),
            kind: FeatureKind::Indicator(predicate),
        }
    }

    pub fn is_base(&self) -> bool {
        !matches!(self.kind, FeatureKind::Product(_))
    }

    fn spec_line(&self) -> String {
        match &self.kind {
            FeatureKind::Count(a) => format!("count {a}"),
            FeatureKind::Indicator(p) => format!("indicator {} {p}", self.name),
            FeatureKind::Product(factors) => {
                let names: Vec<&str> = factors.iter().map(|f| f.name.as_str()).collect();
                format!("product {}", names.join(" "))
            }
        }
    }

    fn value(&self, ctx: &SideContext<'_>) -> f64 {
        match &self.kind {
            FeatureKind::Count(a) => f64::from(ctx.dilemma.side(ctx.side).get(*a)),
            FeatureKind::Indicator(p) => {
                if p.atoms.iter().all(|a| ctx.holds(*a)) {
                    1.0
                } else {
                    0.0
                }
            }
            FeatureKind::Product(factors) => factors.iter().map(|f| f.value(ctx)).product(),
        }
    }
}

/// Per-side evaluation context with the dilemma's axis classifications
/// computed once.
struct SideContext<'a> {
    dilemma: &'a Dilemma,
    side: Side,
    axes: &'a [Option<Side>],
}

impl SideContext<'_> {
    fn holds(&self, atom: Atom) -> bool {
        match atom {
            Atom::Intervention => self.dilemma.car_side == self.side,
            Atom::Signal(s) => self.dilemma.signal(self.side) == s,
            Atom::Axis(id, role) => match (self.axes[id.0], role) {
                (Some(fav), AxisRole::Favored) => fav == self.side,
                (Some(fav), AxisRole::Disfavored) => fav != self.side,
                (None, _) => false,
            },
        }
    }
}

/// Ordered, uniquely named features with a content hash over their
/// canonical text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    defs: Vec<FeatureDef>,
    hash: String,
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::new(Vec::new()).expect("empty set is valid")
    }
}

impl FeatureSet {
    pub fn new(defs: Vec<FeatureDef>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for d in &defs {
            if !seen.insert(d.name.as_str()) {
                return Err(SrmError::Config(format!("duplicate feature name `{}`", d.name)));
            }
        }
        let mut fs = FeatureSet {
            defs,
            hash: String::new(),
        };
        fs.hash = hex::encode(Sha256::digest(fs.to_spec_text().as_bytes()));
        Ok(fs)
    }

    pub fn defs(&self) -> &[FeatureDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.defs.iter().map(|d| d.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    /// Canonical text form; parsing it yields an identical set.
    pub fn to_spec_text(&self) -> String {
        let mut out = String::new();
        for d in &self.defs {
            out.push_str(&d.spec_line());
            out.push('\n');
        }
        out
    }

    /// Appends `more`, rejecting names already present.
    pub fn extended(&self, more: &FeatureSet) -> Result<FeatureSet> {
        let mut defs = self.defs.clone();
        defs.extend(more.defs.iter().cloned());
        FeatureSet::new(defs)
    }

    /// Keeps the features at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        let defs = indices.iter().map(|&i| self.defs[i].clone()).collect();
        FeatureSet::new(defs).expect("subset of unique names is unique")
    }

    pub(crate) fn axes_used(&self) -> bool {
        fn uses(d: &FeatureDef) -> bool {
            match &d.kind {
                FeatureKind::Count(_) => false,
                FeatureKind::Indicator(p) => p.atoms.iter().any(|a| matches!(a, Atom::Axis(..))),
                FeatureKind::Product(f) => f.iter().any(uses),
            }
        }
        self.defs.iter().any(uses)
    }
}

/// Evaluates every feature on both sides of `d`.
pub fn evaluate_features(fs: &FeatureSet, d: &Dilemma) -> (Vec<f64>, Vec<f64>) {
    let axes = classify_all(fs, d);
    let left = SideContext {
        dilemma: d,
        side: Side::Left,
        axes: &axes,
    };
    let right = SideContext {
        dilemma: d,
        side: Side::Right,
        axes: &axes,
    };
    let xl = fs.defs.iter().map(|f| f.value(&left)).collect();
    let xr = fs.defs.iter().map(|f| f.value(&right)).collect();
    (xl, xr)
}

/// `x_left - x_right`, the only quantity the softmax rule depends on.
pub fn side_difference(fs: &FeatureSet, d: &Dilemma) -> Vec<f64> {
    let (l, r) = evaluate_features(fs, d);
    l.iter().zip(&r).map(|(a, b)| a - b).collect()
}

fn classify_all(fs: &FeatureSet, d: &Dilemma) -> Vec<Option<Side>> {
    if fs.axes_used() {
        (0..CATALOG.len())
            .map(|i| axes::classify_id(d, AxisId(i)))
            .collect()
    } else {
        vec![None; CATALOG.len()]
    }
}

/// Row-major matrix of side differences, one row per dilemma.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DesignMatrix {
    pub fn build<'a>(fs: &FeatureSet, dilemmas: impl IntoIterator<Item = &'a Dilemma>) -> Self {
        let mut values = Vec::new();
        let mut rows = 0;
        for d in dilemmas {
            values.extend(side_difference(fs, d));
            rows += 1;
        }
        DesignMatrix {
            rows,
            cols: fs.len(),
            values,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Indices of columns that are zero on every row.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.cols)
            .filter(|&j| (0..self.rows).all(|i| self.values[i * self.cols + j] == 0.0))
            .collect()
    }

    /// Pairs `(j, k)`, `j < k`, whose columns are exact scalar multiples.
    pub fn proportional_columns(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for k in 0..self.cols {
            for j in 0..k {
                if self.columns_proportional(j, k) {
                    out.push((j, k));
                }
            }
        }
        out
    }

    fn columns_proportional(&self, j: usize, k: usize) -> bool {
        let mut ratio: Option<f64> = None;
        for i in 0..self.rows {
            let a = self.values[i * self.cols + j];
            let b = self.values[i * self.cols + k];
            match (a == 0.0, b == 0.0) {
                (true, true) => continue,
                (true, false) | (false, true) => return false,
                (false, false) => {
                    let r = b / a;
                    match ratio {
                        None => ratio = Some(r),
                        Some(r0) if (r - r0).abs() <= 1e-12 * r0.abs().max(1.0) => {}
                        Some(_) => return false,
                    }
                }
            }
        }
        ratio.is_some()
    }
}

/// Appends per-side products of every unordered pair (and triple when
/// `max_order == 3`) of distinct base features, named `a*b` / `a*b*c`.
pub fn expand_interactions(fs: &FeatureSet, max_order: usize) -> Result<FeatureSet> {
    if !(2..=3).contains(&max_order) {
        return Err(SrmError::Config(format!(
            "interaction order must be 2 or 3, got {max_order}"
        )));
    }
    if let Some(d) = fs.defs.iter().find(|d| !d.is_base()) {
        return Err(SrmError::Config(format!(
            "cannot expand a set that already holds product `{}`",
            d.name
        )));
    }
    let base = &fs.defs;
    let mut defs = base.clone();
    let product = |idx: &[usize]| FeatureDef {
        name: idx
            .iter()
            .map(|&i| base[i].name.as_str())
            .collect::<Vec<_>>()
            .join("*"),
        kind: FeatureKind::Product(idx.iter().map(|&i| base[i].clone()).collect()),
    };
    for i in 0..base.len() {
        for j in i + 1..base.len() {
            defs.push(product(&[i, j]));
        }
    }
    if max_order == 3 {
        for i in 0..base.len() {
            for j in i + 1..base.len() {
                for k in j + 1..base.len() {
                    defs.push(product(&[i, j, k]));
                }
            }
        }
    }
    FeatureSet::new(defs)
}

/// Removes features whose side difference is zero on every dilemma; such
/// columns carry no information for a softmax choice model.
pub fn drop_constant_columns<'a>(
    fs: &FeatureSet,
    dilemmas: impl IntoIterator<Item = &'a Dilemma>,
) -> FeatureSet {
    let design = DesignMatrix::build(fs, dilemmas);
    let constant = design.constant_columns();
    let keep: Vec<usize> = (0..fs.len()).filter(|j| !constant.contains(j)).collect();
    fs.subset(&keep)
}

/// Spec text of the 22-feature baseline: one count per agent type plus the
/// swerve and illegal-crossing penalties.
pub fn hybrid_spec_text() -> String {
    let mut s = String::new();
    for a in AgentType::ALL {
        s.push_str(&format!("count {a}\n"));
    }
    s.push_str("indicator swerve_penalty intervention\n");
    s.push_str("indicator illegal signal:illegal\n");
    s
}

pub fn hybrid_feature_set() -> FeatureSet {
    parse_feature_spec(&hybrid_spec_text()).expect("built-in spec parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilemma::{figure_one_dilemma, mirror, AgentCounts};
    use proptest::prelude::*;

    #[test]
    fn empty_set_evaluates_to_empty_vectors() {
        let (l, r) = evaluate_features(&FeatureSet::default(), &figure_one_dilemma());
        assert!(l.is_empty() && r.is_empty());
    }

    #[test]
    fn hybrid_on_figure_one() {
        let fs = hybrid_feature_set();
        assert_eq!(fs.len(), 22);
        let (l, r) = evaluate_features(&fs, &figure_one_dilemma());
        let girl = AgentType::Girl.index();
        assert_eq!(l[girl], 1.0);
        assert_eq!(r[girl], 0.0);
        let illegal = 21;
        assert_eq!(fs.defs()[illegal].name, "illegal");
        assert_eq!(l[illegal], 1.0);
        assert_eq!(r[illegal], 0.0);
        // The car is headed into the left lane: sparing the left group
        // requires a swerve.
        assert_eq!(l[20], 1.0);
        assert_eq!(r[20], 0.0);
    }

    #[test]
    fn conjunction_needs_every_atom() {
        let fs = parse_feature_spec(
            "indicator kid_illegal (and axis:young_vs_old:favored signal:illegal)\n",
        )
        .unwrap();
        let mut d = Dilemma {
            id: "k".into(),
            left: AgentCounts::from_pairs(&[(AgentType::Boy, 1)]),
            right: AgentCounts::from_pairs(&[(AgentType::OldMan, 1)]),
            signal_left: Signal::Illegal,
            car_side: Side::Right,
        };
        assert_eq!(evaluate_features(&fs, &d), (vec![1.0], vec![0.0]));
        d.signal_left = Signal::Legal;
        assert_eq!(evaluate_features(&fs, &d), (vec![0.0], vec![0.0]));
    }

    #[test]
    fn interaction_counts() {
        let fs = hybrid_feature_set();
        assert_eq!(expand_interactions(&fs, 2).unwrap().len(), 22 + 231);
        assert_eq!(expand_interactions(&fs, 3).unwrap().len(), 22 + 231 + 1540);
        let one = parse_feature_spec("count Girl\n").unwrap();
        assert_eq!(expand_interactions(&one, 3).unwrap(), one);
        let expanded = expand_interactions(&fs, 2).unwrap();
        assert!(expand_interactions(&expanded, 2).is_err());
    }

    #[test]
    fn product_of_count_and_indicator() {
        let fs = parse_feature_spec("count Girl\nindicator illegal signal:illegal\n").unwrap();
        let fs = expand_interactions(&fs, 2).unwrap();
        assert_eq!(fs.defs()[2].name, "Girl*illegal");
        let mut d = figure_one_dilemma();
        d.left.add(AgentType::Girl, 2);
        let (l, r) = evaluate_features(&fs, &d);
        assert_eq!(l, vec![3.0, 1.0, 3.0]);
        assert_eq!(r, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_columns_are_dropped() {
        let fs = parse_feature_spec("count Girl\ncount Cat\nindicator none signal:none\n").unwrap();
        let d = figure_one_dilemma();
        let kept = drop_constant_columns(&fs, [&d]);
        assert_eq!(kept.names().collect::<Vec<_>>(), vec!["Girl"]);
    }

    #[test]
    fn proportional_columns_detected() {
        let fs = parse_feature_spec(
            "indicator illegal signal:illegal\nindicator legal signal:legal\ncount Girl\n",
        )
        .unwrap();
        let mut d2 = figure_one_dilemma();
        d2.signal_left = Signal::Legal;
        d2.left.add(AgentType::Girl, 1);
        let design = DesignMatrix::build(&fs, [&figure_one_dilemma(), &d2]);
        assert_eq!(design.proportional_columns(), vec![(0, 1)]);
    }

    proptest! {
        #[test]
        fn evaluation_swaps_under_mirror(d in crate::dilemma::tests::arb_dilemma()) {
            let fs = parse_feature_spec(&format!(
                "{}indicator hva (and axis:humans_vs_animals:favored intervention)\n\
                 indicator less axis:more_vs_less:disfavored\n",
                hybrid_spec_text()
            )).unwrap();
            let fs = expand_interactions(&fs, 2).unwrap();
            let (l, r) = evaluate_features(&fs, &d);
            let (ml, mr) = evaluate_features(&fs, &mirror(&d));
            prop_assert_eq!(l, mr);
            prop_assert_eq!(r, ml);
        }
    }
}
