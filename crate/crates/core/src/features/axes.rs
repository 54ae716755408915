//! Catalog of axes of difference and the residual-multiset classifier.
//!
//! An axis is a pair of disjoint agent categories. The first-named category
//! of each axis (`humans` in `humans_vs_animals`) plays the `favored` role;
//! the role is a label, the fitted weight decides which side is preferred.

use crate::dilemma::{AgentCounts, AgentType, Dilemma, Side};
use crate::error::{Result, SrmError};

use AgentType::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    Contrast {
        favored: &'static [AgentType],
        disfavored: &'static [AgentType],
    },
    /// Favored side is the one left with agents after removing the shared
    /// sub-multiset while the other side is left empty.
    MoreVsLess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Axis {
    pub name: &'static str,
    pub kind: AxisKind,
}

/// Index into [`CATALOG`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AxisId(pub usize);

impl AxisId {
    pub fn axis(self) -> &'static Axis {
        &CATALOG[self.0]
    }

    pub fn name(self) -> &'static str {
        CATALOG[self.0].name
    }
}

const HUMANS: &[AgentType] = &[
    Man,
    Woman,
    Pregnant,
    Stroller,
    OldMan,
    OldWoman,
    Boy,
    Girl,
    Homeless,
    LargeWoman,
    LargeMan,
    Criminal,
    MaleExecutive,
    FemaleExecutive,
    FemaleAthlete,
    MaleAthlete,
    FemaleDoctor,
    MaleDoctor,
];
const ANIMALS: &[AgentType] = &[Dog, Cat];
const YOUNG: &[AgentType] = &[Boy, Girl, Stroller];
const CHILDREN: &[AgentType] = &[Boy, Girl];
const ADULT: &[AgentType] = &[Man, Woman];
const OLD: &[AgentType] = &[OldMan, OldWoman];
const MALE: &[AgentType] = &[
    Man,
    OldMan,
    Boy,
    LargeMan,
    MaleExecutive,
    MaleAthlete,
    MaleDoctor,
];
const FEMALE: &[AgentType] = &[
    Woman,
    OldWoman,
    Girl,
    Pregnant,
    LargeWoman,
    FemaleExecutive,
    FemaleAthlete,
    FemaleDoctor,
];
const FAT: &[AgentType] = &[LargeMan, LargeWoman];
const FIT: &[AgentType] = &[MaleAthlete, FemaleAthlete];
const HIGH_STATUS: &[AgentType] = &[MaleExecutive, FemaleExecutive, MaleDoctor, FemaleDoctor];
const LOW_STATUS: &[AgentType] = &[Homeless, Criminal];
const PREGNANT: &[AgentType] = &[Pregnant];
const NOT_PREGNANT: &[AgentType] = &[
    Man,
    Woman,
    Stroller,
    OldMan,
    OldWoman,
    Boy,
    Girl,
    Homeless,
    LargeWoman,
    LargeMan,
    Criminal,
    MaleExecutive,
    FemaleExecutive,
    FemaleAthlete,
    MaleAthlete,
    FemaleDoctor,
    MaleDoctor,
];
const DOCTORS: &[AgentType] = &[FemaleDoctor, MaleDoctor];
const NOT_DOCTORS: &[AgentType] = &[
    Man,
    Woman,
    Pregnant,
    Stroller,
    OldMan,
    OldWoman,
    Boy,
    Girl,
    Homeless,
    LargeWoman,
    LargeMan,
    Criminal,
    MaleExecutive,
    FemaleExecutive,
    FemaleAthlete,
    MaleAthlete,
];
const CRIMINALS: &[AgentType] = &[Criminal];

const fn contrast(
    name: &'static str,
    favored: &'static [AgentType],
    disfavored: &'static [AgentType],
) -> Axis {
    Axis {
        name,
        kind: AxisKind::Contrast {
            favored,
            disfavored,
        },
    }
}

pub static CATALOG: [Axis; 12] = [
    contrast("humans_vs_animals", HUMANS, ANIMALS),
    contrast("young_vs_old", YOUNG, OLD),
    Axis {
        name: "more_vs_less",
        kind: AxisKind::MoreVsLess,
    },
    contrast("male_vs_female", MALE, FEMALE),
    contrast("fat_vs_fit", FAT, FIT),
    contrast("high_vs_low_status", HIGH_STATUS, LOW_STATUS),
    contrast("young_vs_adult", YOUNG, ADULT),
    contrast("adult_vs_old", ADULT, OLD),
    contrast("young_vs_old_strict", CHILDREN, OLD),
    contrast("pregnant_vs_other", PREGNANT, NOT_PREGNANT),
    contrast("doctors_vs_other", DOCTORS, NOT_DOCTORS),
    contrast("criminals_vs_animals", CRIMINALS, ANIMALS),
];

/// The six axes the generator contrasts by default.
pub const PRIMARY_AXES: [&str; 6] = [
    "humans_vs_animals",
    "young_vs_old",
    "more_vs_less",
    "male_vs_female",
    "fat_vs_fit",
    "high_vs_low_status",
];

pub fn axis_id(name: &str) -> Result<AxisId> {
    CATALOG
        .iter()
        .position(|a| a.name == name)
        .map(AxisId)
        .ok_or_else(|| SrmError::UnknownAxis(name.to_string()))
}

pub fn axis_names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|a| a.name)
}

fn within(counts: &AgentCounts, category: &[AgentType]) -> bool {
    !counts.is_empty() && counts.present().all(|a| category.contains(&a))
}

/// Residual multisets after removing the maximal shared sub-multiset.
pub fn residuals(d: &Dilemma) -> (AgentCounts, AgentCounts) {
    let common = d.left.common(&d.right);
    (d.left.minus(&common), d.right.minus(&common))
}

pub(crate) fn classify_id(d: &Dilemma, id: AxisId) -> Option<Side> {
    let (rl, rr) = residuals(d);
    match id.axis().kind {
        AxisKind::MoreVsLess => match (rl.is_empty(), rr.is_empty()) {
            (false, true) => Some(Side::Left),
            (true, false) => Some(Side::Right),
            _ => None,
        },
        AxisKind::Contrast {
            favored,
            disfavored,
        } => {
            if within(&rl, favored) && within(&rr, disfavored) {
                Some(Side::Left)
            } else if within(&rr, favored) && within(&rl, disfavored) {
                Some(Side::Right)
            } else {
                None
            }
        }
    }
}

/// Returns the side holding the favored residual when `d` is a controlled
/// contrast along `axis`, or `None` when it is not.
pub fn classify_axis(d: &Dilemma, axis: &str) -> Result<Option<Side>> {
    Ok(classify_id(d, axis_id(axis)?))
}
