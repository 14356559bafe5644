//! Union of per-view proposals: a window survives when any view accepts it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cascade::lab::LabCascadeModel;
use crate::features::lab::LabFeatureMap;
use crate::imaging::WindowRect;

/// Maximum number of views a [`ViewSet`] can hold.
pub const MAX_VIEWS: usize = 64;

/// Set of view ids, stored as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub struct ViewSet(u64);

impl From<ViewSet> for Vec<usize> {
    fn from(s: ViewSet) -> Self {
        s.iter().collect()
    }
}

impl TryFrom<Vec<usize>> for ViewSet {
    type Error = String;

    fn try_from(ids: Vec<usize>) -> Result<Self, String> {
        match ids.iter().find(|&&v| v >= MAX_VIEWS) {
            Some(v) => Err(format!("view id {v} exceeds {MAX_VIEWS}")),
            None => Ok(ids.into_iter().collect()),
        }
    }
}

impl ViewSet {
    pub const EMPTY: ViewSet = ViewSet(0);

    pub fn single(view: usize) -> Self {
        let mut s = ViewSet::EMPTY;
        s.insert(view);
        s
    }

    pub fn insert(&mut self, view: usize) {
        assert!(view < MAX_VIEWS, "view id {view} exceeds {MAX_VIEWS}");
        self.0 |= 1 << view;
    }

    pub fn contains(&self, view: usize) -> bool {
        view < MAX_VIEWS && self.0 & (1 << view) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: ViewSet) -> ViewSet {
        ViewSet(self.0 | other.0)
    }

    pub fn bits(&self) -> u64 {
        self.0
    }

    /// Views `0..n`.
    pub fn all(n: usize) -> Self {
        (0..n).collect()
    }

    /// Ids in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..MAX_VIEWS).filter(move |&v| self.contains(v))
    }
}

impl FromIterator<usize> for ViewSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = ViewSet::EMPTY;
        for v in iter {
            s.insert(v);
        }
        s
    }
}

/// Comma-joined ids, e.g. `0,2`; `-` for the empty set.
impl fmt::Display for ViewSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let ids: Vec<String> = self.iter().map(|v| v.to_string()).collect();
        f.write_str(&ids.join(","))
    }
}

/// A window accepted by at least one view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub window: WindowRect,
    pub views: ViewSet,
}

/// Views of `cascades` accepting `window`.
#[inline]
pub fn accepting_views(cascades: &[LabCascadeModel], map: &LabFeatureMap, window: &WindowRect) -> ViewSet {
    let mut views = ViewSet::EMPTY;
    for c in cascades {
        if c.accepts(map, window) {
            views.insert(c.view_id());
        }
    }
    views
}

/// Keeps each window accepted by any cascade, tagged with the accepting
/// views, in input order.
pub fn union_propose(
    cascades: &[LabCascadeModel],
    map: &LabFeatureMap,
    windows: impl IntoIterator<Item = WindowRect>,
) -> Vec<Proposal> {
    windows
        .into_iter()
        .filter_map(|window| {
            let views = accepting_views(cascades, map, &window);
            (!views.is_empty()).then_some(Proposal { window, views })
        })
        .collect()
}
