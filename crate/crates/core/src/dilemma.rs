//! Domain types for pedestrian-versus-pedestrian dilemmas and the judgments
//! aggregated over them.
//!
//! Every vector indexed by agent type uses the canonical order of
//! [`AgentType::ALL`]; serialization, encoding and reporting all share it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SrmError};

pub const N_AGENT_TYPES: usize = 20;

/// Width of [`encode_dilemma`]'s output.
pub const ENCODING_WIDTH: usize = 2 * N_AGENT_TYPES + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentType {
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
    Dog,
    Cat,
}

impl AgentType {
    pub const ALL: [AgentType; N_AGENT_TYPES] = [
        AgentType::Man,
        AgentType::Woman,
        AgentType::Pregnant,
        AgentType::Stroller,
        AgentType::OldMan,
        AgentType::OldWoman,
        AgentType::Boy,
        AgentType::Girl,
        AgentType::Homeless,
        AgentType::LargeWoman,
        AgentType::LargeMan,
        AgentType::Criminal,
        AgentType::MaleExecutive,
        AgentType::FemaleExecutive,
        AgentType::FemaleAthlete,
        AgentType::MaleAthlete,
        AgentType::FemaleDoctor,
        AgentType::MaleDoctor,
        AgentType::Dog,
        AgentType::Cat,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Man => "Man",
            AgentType::Woman => "Woman",
            AgentType::Pregnant => "Pregnant",
            AgentType::Stroller => "Stroller",
            AgentType::OldMan => "OldMan",
            AgentType::OldWoman => "OldWoman",
            AgentType::Boy => "Boy",
            AgentType::Girl => "Girl",
            AgentType::Homeless => "Homeless",
            AgentType::LargeWoman => "LargeWoman",
            AgentType::LargeMan => "LargeMan",
            AgentType::Criminal => "Criminal",
            AgentType::MaleExecutive => "MaleExecutive",
            AgentType::FemaleExecutive => "FemaleExecutive",
            AgentType::FemaleAthlete => "FemaleAthlete",
            AgentType::MaleAthlete => "MaleAthlete",
            AgentType::FemaleDoctor => "FemaleDoctor",
            AgentType::MaleDoctor => "MaleDoctor",
            AgentType::Dog => "Dog",
            AgentType::Cat => "Cat",
        }
    }

    pub fn is_animal(self) -> bool {
        matches!(self, AgentType::Dog | AgentType::Cat)
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentType {
    type Err = SrmError;

    fn from_str(s: &str) -> Result<Self> {
        AgentType::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| SrmError::Data(format!("unknown agent type `{s}`")))
    }
}

/// Crossing-signal status of one side of the road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Legal,
    Illegal,
    None,
}

impl Signal {
    /// Status of the opposite side: a legal crossing on one side means the
    /// other side is crossing against the light.
    pub fn opposite(self) -> Signal {
        match self {
            Signal::Legal => Signal::Illegal,
            Signal::Illegal => Signal::Legal,
            Signal::None => Signal::None,
        }
    }

    fn scalar(self) -> f64 {
        match self {
            Signal::Legal => 1.0,
            Signal::None => 0.0,
            Signal::Illegal => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Multiset of agents on one side, stored as counts in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct AgentCounts([u32; N_AGENT_TYPES]);

impl AgentCounts {
    pub fn new(counts: [u32; N_AGENT_TYPES]) -> Self {
        AgentCounts(counts)
    }

    pub fn from_pairs(pairs: &[(AgentType, u32)]) -> Self {
        let mut c = AgentCounts::default();
        for &(a, k) in pairs {
            c.0[a.index()] += k;
        }
        c
    }

    #[inline]
    pub fn get(&self, agent: AgentType) -> u32 {
        self.0[agent.index()]
    }

    pub fn add(&mut self, agent: AgentType, k: u32) {
        self.0[agent.index()] += k;
    }

    pub fn as_array(&self) -> &[u32; N_AGENT_TYPES] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Elementwise minimum: the largest sub-multiset shared with `other`.
    pub fn common(&self, other: &AgentCounts) -> AgentCounts {
        let mut out = [0u32; N_AGENT_TYPES];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i].min(other.0[i]);
        }
        AgentCounts(out)
    }

    /// `self - other`; callers guarantee `other` is a sub-multiset.
    pub fn minus(&self, other: &AgentCounts) -> AgentCounts {
        let mut out = [0u32; N_AGENT_TYPES];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i] - other.0[i];
        }
        AgentCounts(out)
    }

    /// Agent types present with non-zero count.
    pub fn present(&self) -> impl Iterator<Item = AgentType> + '_ {
        AgentType::ALL.iter().copied().filter(|a| self.get(*a) > 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AgentType, u32)> + '_ {
        AgentType::ALL.iter().map(|&a| (a, self.get(a)))
    }
}

impl Serialize for AgentCounts {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let nonzero: Vec<_> = self.iter().filter(|(_, k)| *k > 0).collect();
        let mut map = serializer.serialize_map(Some(nonzero.len()))?;
        for (a, k) in nonzero {
            map.serialize_entry(a.name(), &k)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for AgentCounts {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, u32>::deserialize(deserializer)?;
        let mut counts = AgentCounts::default();
        for (name, k) in raw {
            let agent = name.parse::<AgentType>().map_err(serde::de::Error::custom)?;
            counts.add(agent, k);
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dilemma {
    pub id: String,
    pub left: AgentCounts,
    pub right: AgentCounts,
    pub signal_left: Signal,
    pub car_side: Side,
}

impl Dilemma {
    pub fn side(&self, side: Side) -> &AgentCounts {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn signal(&self, side: Side) -> Signal {
        match side {
            Side::Left => self.signal_left,
            Side::Right => self.signal_left.opposite(),
        }
    }

    /// Identity of the scenario, ignoring the id.
    pub fn scenario_key(&self) -> (AgentCounts, AgentCounts, Signal, Side) {
        (self.left, self.right, self.signal_left, self.car_side)
    }
}

/// Encodes a dilemma as the 42-wide reference-network input: left counts,
/// right counts, car side (+1 left, -1 right), left crossing signal
/// (+1 legal, 0 none, -1 illegal).
pub fn encode_dilemma(d: &Dilemma) -> [f64; ENCODING_WIDTH] {
    let mut out = [0.0; ENCODING_WIDTH];
    for (i, &k) in d.left.as_array().iter().enumerate() {
        out[i] = f64::from(k);
    }
    for (i, &k) in d.right.as_array().iter().enumerate() {
        out[N_AGENT_TYPES + i] = f64::from(k);
    }
    out[2 * N_AGENT_TYPES] = match d.car_side {
        Side::Left => 1.0,
        Side::Right => -1.0,
    };
    out[2 * N_AGENT_TYPES + 1] = d.signal_left.scalar();
    out
}

/// Swaps the two sides. The id is kept so mirrored copies stay traceable.
pub fn mirror(d: &Dilemma) -> Dilemma {
    Dilemma {
        id: d.id.clone(),
        left: d.right,
        right: d.left,
        signal_left: d.signal_left.opposite(),
        car_side: d.car_side.other(),
    }
}

/// Responses to one dilemma, pooled across respondents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJudgment")]
pub struct AggregatedJudgment {
    #[serde(flatten)]
    pub dilemma: Dilemma,
    pub n: u64,
    pub n_save_left: u64,
}

#[derive(Deserialize)]
struct RawJudgment {
    #[serde(flatten)]
    dilemma: Dilemma,
    n: u64,
    n_save_left: u64,
}

impl TryFrom<RawJudgment> for AggregatedJudgment {
    type Error = SrmError;

    fn try_from(raw: RawJudgment) -> Result<Self> {
        AggregatedJudgment::new(raw.dilemma, raw.n, raw.n_save_left)
    }
}

impl AggregatedJudgment {
    pub fn new(dilemma: Dilemma, n: u64, n_save_left: u64) -> Result<Self> {
        if n == 0 {
            return Err(SrmError::Data(format!("dilemma {}: n must be positive", dilemma.id)));
        }
        if n_save_left > n {
            return Err(SrmError::Data(format!(
                "dilemma {}: n_save_left {} exceeds n {}",
                dilemma.id, n_save_left, n
            )));
        }
        Ok(AggregatedJudgment {
            dilemma,
            n,
            n_save_left,
        })
    }

    pub fn p_data(&self) -> f64 {
        self.n_save_left as f64 / self.n as f64
    }

    pub fn n_save_right(&self) -> u64 {
        self.n - self.n_save_left
    }
}

/// A single observation in the one-dimensional regression demo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionPoint {
    pub x: f64,
    pub y: f64,
}

#[cfg(test)]
pub(crate) fn figure_one_dilemma() -> Dilemma {
    Dilemma {
        id: "fig1".into(),
        left: AgentCounts::from_pairs(&[
            (AgentType::Girl, 1),
            (AgentType::OldWoman, 1),
            (AgentType::Dog, 1),
        ]),
        right: AgentCounts::from_pairs(&[
            (AgentType::Stroller, 1),
            (AgentType::Woman, 1),
            (AgentType::Dog, 1),
        ]),
        signal_left: Signal::Illegal,
        car_side: Side::Left,
    }
}
