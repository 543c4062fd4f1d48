//! Player sets: rectangular blocks of cells that partition a `T x D` window.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grouping::Grouping;
use crate::segmentation::{Segment, Segmentation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerScheme {
    /// Feature group × temporal segment of that group.
    GroupSegment,
    /// One player per cell.
    Cell,
    /// One player per time step, spanning all variables.
    Timestep,
    /// Fixed-length time windows spanning all variables.
    Window,
    /// A fixed number of near-equal time blocks spanning all variables.
    Subsequence,
}

impl PlayerScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            PlayerScheme::GroupSegment => "group_segment",
            PlayerScheme::Cell => "cell",
            PlayerScheme::Timestep => "timestep",
            PlayerScheme::Window => "window",
            PlayerScheme::Subsequence => "subsequence",
        }
    }
}

/// The cells `segment × variables`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Player {
    pub id: usize,
    pub group: Option<usize>,
    pub segment: Segment,
    pub variables: Vec<usize>,
}

impl Player {
    pub fn cell_count(&self) -> usize {
        self.segment.len() * self.variables.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.segment.start..self.segment.end)
            .flat_map(move |t| self.variables.iter().map(move |&d| (t, d)))
    }
}

/// Players whose cells partition the grid, with an O(1) owner lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerSet {
    scheme: PlayerScheme,
    t_len: usize,
    d_len: usize,
    players: Vec<Player>,
    owner: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayerDoc {
    id: usize,
    group: Option<usize>,
    /// One-based `[start, end)`.
    segment: [usize; 2],
    variables: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayerSetDoc {
    scheme: PlayerScheme,
    #[serde(rename = "T")]
    t_len: usize,
    #[serde(rename = "D")]
    d_len: usize,
    players: Vec<PlayerDoc>,
}

impl PlayerSet {
    /// Builds the ownership table, rejecting overlaps, gaps and bad ids.
    pub fn from_players(
        scheme: PlayerScheme,
        t_len: usize,
        d_len: usize,
        players: Vec<Player>,
    ) -> Result<Self> {
        const UNOWNED: usize = usize::MAX;
        if t_len == 0 || d_len == 0 {
            return Err(Error::invalid("player grid must be non-empty"));
        }
        let mut owner = vec![UNOWNED; t_len * d_len];
        for (i, p) in players.iter().enumerate() {
            if p.id != i {
                return Err(Error::invalid(format!("player at position {i} has id {}", p.id)));
            }
            if p.variables.is_empty() || p.segment.is_empty() || p.segment.end > t_len {
                return Err(Error::invalid(format!("player {i} has an empty or out-of-range block")));
            }
            for (t, d) in p.cells() {
                if d >= d_len {
                    return Err(Error::invalid(format!("player {i}: variable {d} >= D={d_len}")));
                }
                let slot = &mut owner[t * d_len + d];
                if *slot != UNOWNED {
                    return Err(Error::invalid(format!(
                        "cell (t={t}, d={d}) owned by players {} and {i}",
                        *slot
                    )));
                }
                *slot = i;
            }
        }
        if let Some(c) = owner.iter().position(|&o| o == UNOWNED) {
            return Err(Error::invalid(format!(
                "cell (t={}, d={}) has no owner",
                c / d_len,
                c % d_len
            )));
        }
        Ok(Self { scheme, t_len, d_len, players, owner })
    }

    #[inline]
    pub fn scheme(&self) -> PlayerScheme {
        self.scheme
    }

    #[inline]
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    #[inline]
    pub fn d_len(&self) -> usize {
        self.d_len
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.players.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn player(&self, id: usize) -> &Player {
        &self.players[id]
    }

    /// Owner of every cell, row-major.
    #[inline]
    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    /// The unique player owning cell `(t, d)` (zero-based).
    pub fn cell_owner(&self, t: usize, d: usize) -> Result<usize> {
        if t >= self.t_len || d >= self.d_len {
            return Err(Error::invalid(format!(
                "cell (t={t}, d={d}) outside {}x{} grid",
                self.t_len, self.d_len
            )));
        }
        Ok(self.owner[t * self.d_len + d])
    }

    fn to_doc(&self) -> PlayerSetDoc {
        PlayerSetDoc {
            scheme: self.scheme,
            t_len: self.t_len,
            d_len: self.d_len,
            players: self
                .players
                .iter()
                .map(|p| PlayerDoc {
                    id: p.id,
                    group: p.group,
                    segment: [p.segment.start + 1, p.segment.end + 1],
                    variables: p.variables.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(s)?)
    }

    fn from_doc(doc: PlayerSetDoc) -> Result<Self> {
        let players = doc
            .players
            .into_iter()
            .map(|p| {
                if p.segment[0] == 0 {
                    return Err(Error::invalid("player segments are one-based"));
                }
                Ok(Player {
                    id: p.id,
                    group: p.group,
                    segment: Segment::new(p.segment[0] - 1, p.segment[1] - 1)?,
                    variables: p.variables,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_players(doc.scheme, doc.t_len, doc.d_len, players)
    }

    /// Content digest of the canonical JSON form, used to tie attribution
    /// results to the player set they were computed on.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_doc()).expect("player set serializes");
        let hash = Sha256::digest(&bytes);
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }
}

impl Serialize for PlayerSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PlayerSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = PlayerSetDoc::deserialize(deserializer)?;
        Self::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

/// One player per (group, segment), ids in (group, segment start) order.
pub fn build_players(
    grouping: &Grouping,
    segmentations: &[Segmentation],
    t_len: usize,
    d_len: usize,
) -> Result<PlayerSet> {
    if grouping.n_variables() != d_len {
        return Err(Error::shape(format!("grouping over D={d_len}"), grouping.n_variables()));
    }
    if segmentations.len() != grouping.len() {
        return Err(Error::shape(
            format!("{} segmentations", grouping.len()),
            segmentations.len(),
        ));
    }
    let mut players = Vec::new();
    for (k, (group, seg)) in grouping.groups.iter().zip(segmentations).enumerate() {
        seg.validate(t_len)?;
        for s in &seg.segments {
            players.push(Player {
                id: players.len(),
                group: Some(k),
                segment: *s,
                variables: group.clone(),
            });
        }
    }
    PlayerSet::from_players(PlayerScheme::GroupSegment, t_len, d_len, players)
}

/// Parameters for the fixed baseline schemes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub window_len: Option<usize>,
    pub n_subseq: Option<usize>,
}

fn time_blocks(bounds: &[usize], d_len: usize) -> Vec<Player> {
    bounds
        .windows(2)
        .enumerate()
        .map(|(id, w)| Player {
            id,
            group: None,
            segment: Segment { start: w[0], end: w[1] },
            variables: (0..d_len).collect(),
        })
        .collect()
}

/// Player sets for the comparison schemes.
pub fn baseline_players(
    scheme: PlayerScheme,
    t_len: usize,
    d_len: usize,
    params: BaselineParams,
) -> Result<PlayerSet> {
    let players = match scheme {
        PlayerScheme::GroupSegment => {
            return Err(Error::invalid("group_segment players come from build_players"))
        }
        PlayerScheme::Cell => (0..t_len)
            .flat_map(|t| (0..d_len).map(move |d| (t, d)))
            .enumerate()
            .map(|(id, (t, d))| Player {
                id,
                group: None,
                segment: Segment { start: t, end: t + 1 },
                variables: vec![d],
            })
            .collect(),
        PlayerScheme::Timestep => time_blocks(&(0..=t_len).collect::<Vec<_>>(), d_len),
        PlayerScheme::Window => {
            let len = params.window_len.filter(|&l| l >= 1).ok_or_else(|| {
                Error::invalid("window scheme needs window_len >= 1")
            })?;
            let mut bounds: Vec<usize> = (0..t_len).step_by(len).collect();
            bounds.push(t_len);
            time_blocks(&bounds, d_len)
        }
        PlayerScheme::Subsequence => {
            let n = params.n_subseq.filter(|&n| n >= 1 && n <= t_len).ok_or_else(|| {
                Error::invalid(format!("subsequence scheme needs 1 <= n_subseq <= T={t_len}"))
            })?;
            let (base, rem) = (t_len / n, t_len % n);
            let mut bounds = vec![0];
            for i in 0..n {
                let len = base + usize::from(i < rem);
                bounds.push(bounds[i] + len);
            }
            time_blocks(&bounds, d_len)
        }
    };
    PlayerSet::from_players(scheme, t_len, d_len, players)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{default_variable_names, GroupingMethod};
    use proptest::prelude::*;

    fn seg(k: usize, bounds: &[usize]) -> Segmentation {
        let mut s = Segmentation::whole(k, *bounds.last().unwrap());
        s.segments = bounds.windows(2).map(|w| Segment { start: w[0], end: w[1] }).collect();
        s
    }

    fn grouping(groups: Vec<Vec<usize>>, d: usize) -> Grouping {
        Grouping::new(GroupingMethod::Hsic, groups, default_variable_names(d), 0).unwrap()
    }

    #[test]
    fn player_count_is_sum_of_segments() {
        let g = grouping(vec![vec![0, 1], vec![2]], 3);
        let ps = build_players(&g, &[seg(0, &[0, 5, 10]), seg(1, &[0, 2, 6, 10])], 10, 3).unwrap();
        assert_eq!(ps.len(), 5);
    }

    #[test]
    fn single_player_owns_everything() {
        let g = grouping(vec![vec![0]], 1);
        let ps = build_players(&g, &[seg(0, &[0, 7])], 7, 1).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps.cell_owner(0, 0).unwrap(), 0);
        assert!(ps.owners().iter().all(|&o| o == 0));
    }

    #[test]
    fn three_player_ownership() {
        let g = grouping(vec![vec![0, 1], vec![2]], 3);
        let ps = build_players(&g, &[seg(0, &[0, 4, 8]), seg(1, &[0, 8])], 8, 3).unwrap();
        assert_eq!(ps.len(), 3);
        // One-based cell (6, 2) is zero-based (5, 1).
        let owner = ps.cell_owner(5, 1).unwrap();
        assert_eq!(ps.player(owner).group, Some(0));
        assert_eq!(ps.player(owner).segment, Segment { start: 4, end: 8 });
        assert!(ps.cell_owner(8, 0).is_err());
        assert!(ps.cell_owner(0, 3).is_err());
        let mut counts = vec![0; 3];
        for t in 0..8 {
            for d in 0..3 {
                counts[ps.cell_owner(t, d).unwrap()] += 1;
            }
        }
        assert_eq!(counts, vec![8, 8, 8]);
        assert!(ps.players().iter().zip(&counts).all(|(p, &c)| p.cell_count() == c));
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let g = grouping(vec![vec![0, 1]], 2);
        assert!(build_players(&g, &[seg(0, &[0, 8])], 8, 3).is_err());
        assert!(build_players(&g, &[seg(0, &[0, 7])], 8, 2).is_err());
    }

    #[test]
    fn baseline_shapes() {
        let p = BaselineParams::default();
        assert_eq!(baseline_players(PlayerScheme::Cell, 2, 2, p).unwrap().len(), 4);
        assert_eq!(baseline_players(PlayerScheme::Timestep, 96, 9, p).unwrap().len(), 96);
        let w = BaselineParams { window_len: Some(10), ..p };
        assert_eq!(baseline_players(PlayerScheme::Window, 20, 3, w).unwrap().len(), 2);
        let w = BaselineParams { window_len: Some(8), ..p };
        let ps = baseline_players(PlayerScheme::Window, 20, 3, w).unwrap();
        assert_eq!(ps.player(2).segment, Segment { start: 16, end: 20 });
        let s = BaselineParams { n_subseq: Some(3), ..p };
        let ps = baseline_players(PlayerScheme::Subsequence, 11, 2, s).unwrap();
        let lens: Vec<usize> = ps.players().iter().map(|p| p.segment.len()).collect();
        assert_eq!(lens, vec![4, 4, 3]);
        assert!(baseline_players(PlayerScheme::Window, 20, 3, p).is_err());
        assert!(baseline_players(PlayerScheme::Subsequence, 2, 3, BaselineParams { n_subseq: Some(3), ..p }).is_err());
    }

    #[test]
    fn json_round_trip_and_digest() {
        let g = grouping(vec![vec![0, 2], vec![1]], 3);
        let ps = build_players(&g, &[seg(0, &[0, 3, 6]), seg(1, &[0, 6])], 6, 3).unwrap();
        let json = ps.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["T"], 6);
        assert_eq!(v["players"][1]["segment"], serde_json::json!([4, 7]));
        let back = PlayerSet::from_json(&json).unwrap();
        assert_eq!(back, ps);
        assert_eq!(back.digest(), ps.digest());
        assert!(ps.digest().starts_with("sha256:"));
    }

    proptest! {
        #[test]
        fn baseline_schemes_partition(t in 1usize..40, d in 1usize..8, w in 1usize..12, n in 1usize..12) {
            let params = BaselineParams { window_len: Some(w), n_subseq: Some(n.min(t)) };
            for scheme in [PlayerScheme::Cell, PlayerScheme::Timestep, PlayerScheme::Window, PlayerScheme::Subsequence] {
                let ps = baseline_players(scheme, t, d, params).unwrap();
                let total: usize = ps.players().iter().map(Player::cell_count).sum();
                prop_assert_eq!(total, t * d);
            }
        }

        #[test]
        fn group_segment_partition(cuts_a in proptest::collection::btree_set(1usize..30, 0..5),
                                   cuts_b in proptest::collection::btree_set(1usize..30, 0..5)) {
            let g = grouping(vec![vec![0, 3], vec![1, 2, 4]], 5);
            let bounds = |c: &std::collections::BTreeSet<usize>| {
                let mut b = vec![0];
                b.extend(c.iter().copied());
                b.push(30);
                b
            };
            let ps = build_players(&g, &[seg(0, &bounds(&cuts_a)), seg(1, &bounds(&cuts_b))], 30, 5).unwrap();
            prop_assert_eq!(ps.len(), cuts_a.len() + cuts_b.len() + 2);
            for p in ps.players() {
                for (t, d) in p.cells() {
                    prop_assert_eq!(ps.cell_owner(t, d).unwrap(), p.id);
                }
            }
        }
    }
}
