//! Yaw-based view partitions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::funnel::model::{ViewInfo, FIVE_VIEW_BRANCHES};

/// How faces are split into views by yaw (degrees, [-90, 90]).
#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub enum ViewScheme {
    /// [-90,-60), [-60,-20), [-20,20], (20,60], (60,90].
    #[default]
    Five,
    /// |yaw| <= 30 is frontal; everything else, left or right, is profile.
    Two,
    /// Bins `[b0,b1), [b1,b2), .., [bn-1,bn]` with `b0 = -90`, `bn = 90`.
    Custom(Vec<f64>),
}


const FIVE_NAMES: [&str; 5] = [
    "left-full-profile",
    "left-half-profile",
    "frontal",
    "right-half-profile",
    "right-full-profile",
];
const FIVE_BINS: [(f64, f64); 5] = [(-90.0, -60.0), (-60.0, -20.0), (-20.0, 20.0), (20.0, 60.0), (60.0, 90.0)];

impl ViewScheme {
    pub fn validate(&self) -> Result<()> {
        if let ViewScheme::Custom(b) = self {
            if b.len() < 2 || b.len() > 65 {
                return Err(Error::config("custom view bins need 2 to 65 boundaries"));
            }
            if b[0] != -90.0 || *b.last().unwrap() != 90.0 {
                return Err(Error::config("custom view bins must start at -90 and end at 90"));
            }
            if b.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::config("custom view bins must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn view_count(&self) -> usize {
        match self {
            ViewScheme::Five => 5,
            ViewScheme::Two => 2,
            ViewScheme::Custom(b) => b.len() - 1,
        }
    }

    /// View id of a face with the given yaw.
    pub fn view_of(&self, yaw: f64) -> Result<usize> {
        if !(-90.0..=90.0).contains(&yaw) {
            return Err(Error::input(format!("yaw {yaw} outside [-90, 90]")));
        }
        Ok(match self {
            ViewScheme::Five => {
                if yaw < -60.0 {
                    0
                } else if yaw < -20.0 {
                    1
                } else if yaw <= 20.0 {
                    2
                } else if yaw <= 60.0 {
                    3
                } else {
                    4
                }
            }
            ViewScheme::Two => usize::from(yaw.abs() > 30.0),
            ViewScheme::Custom(b) => (0..b.len() - 1).find(|&i| yaw < b[i + 1]).unwrap_or(b.len() - 2),
        })
    }

    /// Descriptions of every view, ordered by id.
    pub fn views(&self) -> Vec<ViewInfo> {
        match self {
            ViewScheme::Five => (0..5)
                .map(|id| ViewInfo {
                    id,
                    name: FIVE_NAMES[id].into(),
                    yaw: Some(FIVE_BINS[id]),
                })
                .collect(),
            ViewScheme::Two => vec![
                ViewInfo {
                    id: 0,
                    name: "frontal".into(),
                    yaw: Some((-30.0, 30.0)),
                },
                ViewInfo {
                    id: 1,
                    name: "profile".into(),
                    yaw: None,
                },
            ],
            ViewScheme::Custom(b) => b
                .windows(2)
                .enumerate()
                .map(|(id, w)| ViewInfo {
                    id,
                    name: format!("yaw{}", id),
                    yaw: Some((w[0], w[1])),
                })
                .collect(),
        }
    }

    /// Default coarse-branch routing: five views share one branch among the
    /// frontal and half profiles; other schemes give each view its own.
    pub fn default_branches(&self) -> Vec<usize> {
        match self {
            ViewScheme::Five => FIVE_VIEW_BRANCHES.to_vec(),
            _ => (0..self.view_count()).collect(),
        }
    }
}

impl fmt::Display for ViewScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewScheme::Five => f.write_str("5"),
            ViewScheme::Two => f.write_str("2"),
            ViewScheme::Custom(b) => {
                let s: Vec<String> = b.iter().map(|v| v.to_string()).collect();
                write!(f, "custom:{}", s.join(","))
            }
        }
    }
}

/// Accepts `5`, `2` or `custom:<b0>,<b1>,..`.
impl FromStr for ViewScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let scheme = match s {
            "5" | "five" => ViewScheme::Five,
            "2" | "two" => ViewScheme::Two,
            _ => {
                let bins = s
                    .strip_prefix("custom:")
                    .ok_or_else(|| Error::config(format!("unknown view scheme {s:?}")))?;
                let b = bins
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| Error::config(format!("bad view bins {bins:?}: {e}")))?;
                ViewScheme::Custom(b)
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// Splits samples by view: entry `v` lists the indices of `yaws` in view `v`.
pub fn partition_views(yaws: &[f64], scheme: &ViewScheme) -> Result<Vec<Vec<usize>>> {
    scheme.validate()?;
    let mut out = vec![Vec::new(); scheme.view_count()];
    for (i, &y) in yaws.iter().enumerate() {
        out[scheme.view_of(y)?].push(i);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_view_bins() {
        let s = ViewScheme::Five;
        let cases = [(-90.0, 0), (-60.0, 1), (-20.0, 2), (0.0, 2), (20.0, 2), (20.5, 3), (60.0, 3), (60.1, 4), (90.0, 4)];
        for (yaw, v) in cases {
            assert_eq!(s.view_of(yaw).unwrap(), v, "yaw {yaw}");
        }
        assert!(s.view_of(91.0).is_err());
    }

    #[test]
    fn two_view_mixes_profiles() {
        let s = ViewScheme::Two;
        assert_eq!(s.view_of(0.0).unwrap(), 0);
        assert_eq!(s.view_of(-70.0).unwrap(), 1);
        assert_eq!(s.view_of(70.0).unwrap(), 1);
        assert_eq!(s.view_of(30.0).unwrap(), 0);
    }

    #[test]
    fn mirrored_yaw_gives_mirrored_view() {
        for yaw in (-90..=90).map(|y| y as f64) {
            assert_eq!(ViewScheme::Five.view_of(-yaw).unwrap(), 4 - ViewScheme::Five.view_of(yaw).unwrap());
        }
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let yaws: Vec<f64> = (0..181).map(|i| i as f64 - 90.0).collect();
        for scheme in [ViewScheme::Five, ViewScheme::Two, "custom:-90,-45,0,45,90".parse().unwrap()] {
            let p = partition_views(&yaws, &scheme).unwrap();
            let mut all: Vec<usize> = p.concat();
            assert_eq!(all.len(), yaws.len());
            all.sort();
            all.dedup();
            assert_eq!(all.len(), yaws.len());
        }
    }

    #[test]
    fn parse_schemes() {
        assert_eq!("5".parse::<ViewScheme>().unwrap(), ViewScheme::Five);
        assert_eq!("2".parse::<ViewScheme>().unwrap(), ViewScheme::Two);
        let c: ViewScheme = "custom:-90,0,90".parse().unwrap();
        assert_eq!(c.view_count(), 2);
        assert_eq!(c.view_of(0.0).unwrap(), 1);
        assert_eq!(c.view_of(90.0).unwrap(), 1);
        assert_eq!(c.to_string(), "custom:-90,0,90");
        assert!("custom:-80,90".parse::<ViewScheme>().is_err());
        assert!("custom:-90,10,5,90".parse::<ViewScheme>().is_err());
        assert!("seven".parse::<ViewScheme>().is_err());
    }
}
