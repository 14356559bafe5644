//! The complete detector and its file format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{FeatureSpec, LabCascadeModel, MlpStage, ViewSet};
use crate::error::{Error, LoadError, Result};
use crate::features::surf::{default_pool_hash, SURF_POOL_SIZE};
use crate::features::Shape4;
use crate::neural::Head;

/// Value of the `format` field written by this version.
pub const FORMAT_VERSION: &str = "fust-model/1";

/// A face view served by one LAB cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewInfo {
    pub id: usize,
    pub name: String,
    /// Yaw interval in degrees, when the view came from yaw binning.
    pub yaw: Option<(f64, f64)>,
}

/// How views feed coarse branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunnelTopology {
    /// Branch index for each view id.
    pub view_to_branch: Vec<usize>,
    /// LAB block sizes `(w, h)` indexed by locator `block_size_index`.
    pub lab_block_sizes: Vec<(usize, usize)>,
}

impl FunnelTopology {
    pub fn branch_count(&self) -> usize {
        self.view_to_branch.iter().map(|&b| b + 1).max().unwrap_or(0)
    }

    /// Views routed to `branch`.
    pub fn views_of(&self, branch: usize) -> ViewSet {
        self.view_to_branch
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == branch)
            .map(|(v, _)| v)
            .collect()
    }

    /// Branches implied by a set of accepting views, as a bitmask.
    #[inline]
    pub fn branches_of(&self, views: ViewSet) -> u64 {
        views.iter().fold(0u64, |m, v| m | 1 << self.view_to_branch[v])
    }
}

/// A coarse MLP cascade serving one or more views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseBranch {
    pub name: String,
    pub stages: Vec<MlpStage>,
}

/// Free-form facts about how a model was trained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub view_scheme: String,
    pub positives: usize,
    pub negatives: usize,
    pub augment_factor: usize,
    pub lambda: f64,
    /// True when no landmark annotations were available and the fine
    /// cascade was trained at the mean shape only.
    pub mean_shape_only: bool,
}

/// The full detector.
///
/// Field order is the on-disk key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelModel {
    pub format: String,
    pub surf_pool_hash: String,
    pub views: Vec<ViewInfo>,
    pub topology: FunnelTopology,
    pub lab_cascades: Vec<LabCascadeModel>,
    pub coarse_branches: Vec<CoarseBranch>,
    pub fine_cascade: Vec<MlpStage>,
    pub mean_shape: Shape4,
    pub metadata: TrainingMetadata,
}

fn invariant(msg: impl Into<String>) -> LoadError {
    LoadError::Invariant(msg.into())
}

impl FunnelModel {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Checks every structural invariant; failures are reported as
    /// [`LoadError::Invariant`].
    pub fn validate(&self) -> Result<(), LoadError> {
        if self.format != FORMAT_VERSION {
            return Err(LoadError::Version {
                found: self.format.clone(),
                expected: FORMAT_VERSION.into(),
            });
        }
        let expected = default_pool_hash();
        if self.surf_pool_hash != expected {
            return Err(LoadError::PoolHash {
                found: self.surf_pool_hash.clone(),
                expected,
            });
        }
        let v = self.views.len();
        if v == 0 || v > crate::cascade::union::MAX_VIEWS {
            return Err(invariant(format!("model has {v} views")));
        }
        for (i, view) in self.views.iter().enumerate() {
            if view.id != i {
                return Err(invariant(format!("view at position {i} has id {}", view.id)));
            }
        }
        if self.lab_cascades.len() != v {
            return Err(invariant(format!("{} LAB cascades for {v} views", self.lab_cascades.len())));
        }
        let bs = &self.topology.lab_block_sizes;
        if bs.is_empty() || bs.iter().any(|&(w, h)| w == 0 || h == 0) {
            return Err(invariant("LAB block sizes must be non-empty and positive"));
        }
        for (i, c) in self.lab_cascades.iter().enumerate() {
            if c.view_id() != i {
                return Err(invariant(format!("LAB cascade {i} belongs to view {}", c.view_id())));
            }
            c.validate(Some(bs)).map_err(|e| invariant(e.to_string()))?;
        }
        if self.topology.view_to_branch.len() != v {
            return Err(invariant("view_to_branch must list one branch per view"));
        }
        let nb = self.coarse_branches.len();
        if nb == 0 || nb > 64 {
            return Err(invariant(format!("model has {nb} coarse branches")));
        }
        if let Some(&b) = self.topology.view_to_branch.iter().find(|&&b| b >= nb) {
            return Err(invariant(format!("view mapped to missing branch {b}")));
        }
        for b in 0..nb {
            if self.topology.views_of(b).is_empty() {
                return Err(invariant(format!("coarse branch {b} serves no view")));
            }
        }
        for (b, branch) in self.coarse_branches.iter().enumerate() {
            if branch.stages.is_empty() {
                return Err(invariant(format!("coarse branch {b} has no stages")));
            }
            for (k, s) in branch.stages.iter().enumerate() {
                s.validate(SURF_POOL_SIZE)
                    .map_err(|e| invariant(format!("coarse branch {b} stage {k}: {e}")))?;
                if !matches!(s.features, FeatureSpec::Surf { .. }) || s.model.head() != Head::Plain {
                    return Err(invariant(format!("coarse branch {b} stage {k} must be a plain SURF stage")));
                }
            }
        }
        if self.fine_cascade.is_empty() {
            return Err(invariant("fine cascade has no stages"));
        }
        for (k, s) in self.fine_cascade.iter().enumerate() {
            s.validate(SURF_POOL_SIZE)
                .map_err(|e| invariant(format!("fine stage {k}: {e}")))?;
            if s.features != FeatureSpec::ShapeIndexed {
                return Err(invariant(format!("fine stage {k} must use shape-indexed features")));
            }
        }
        if !self.mean_shape.in_unit_square() {
            return Err(invariant("mean shape must lie in the unit square"));
        }
        Ok(())
    }

    /// Canonical JSON text: fixed key order, shortest round-trip numbers,
    /// trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("model serialization cannot fail");
        s.push('\n');
        s
    }

    /// Parses and validates model text.
    pub fn from_json(text: &str) -> Result<FunnelModel, LoadError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| LoadError::Parse(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| LoadError::Parse("top level is not an object".into()))?;
        match obj.get("format").and_then(|f| f.as_str()) {
            Some(FORMAT_VERSION) => {}
            Some(other) => {
                return Err(LoadError::Version {
                    found: other.into(),
                    expected: FORMAT_VERSION.into(),
                })
            }
            None => return Err(LoadError::Parse("missing format field".into())),
        }
        match obj.get("surf_pool_hash").and_then(|f| f.as_str()) {
            Some(h) if h == default_pool_hash() => {}
            Some(h) => {
                return Err(LoadError::PoolHash {
                    found: h.into(),
                    expected: default_pool_hash(),
                })
            }
            None => return Err(LoadError::Parse("missing surf_pool_hash field".into())),
        }
        let model: FunnelModel = serde_json::from_value(value).map_err(|e| LoadError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Human-readable architecture summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format: {}", self.format);
        let _ = writeln!(s, "SURF pool hash: {}", self.surf_pool_hash);
        let _ = writeln!(s, "SURF pool patches: {SURF_POOL_SIZE}");
        let _ = writeln!(s, "views: {}", self.views.len());
        for v in &self.views {
            let yaw = v.yaw.map(|(a, b)| format!(" yaw [{a}, {b}]")).unwrap_or_default();
            let _ = writeln!(
                s,
                "  view {} {}{} -> branch {}",
                v.id,
                v.name,
                yaw,
                self.coarse_branches[self.topology.view_to_branch[v.id]].name
            );
        }
        let blocks: Vec<String> = self
            .topology
            .lab_block_sizes
            .iter()
            .map(|(w, h)| format!("{w}x{h}"))
            .collect();
        let _ = writeln!(s, "LAB block sizes: {}", blocks.join(", "));
        let counts: Vec<usize> = self.lab_cascades.iter().map(|c| c.weak().len()).collect();
        if counts.iter().all(|&c| c == counts[0]) {
            let _ = writeln!(s, "LAB weak per view: {}", counts[0]);
        } else {
            let list: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "LAB weak per view: {}", list.join(", "));
        }
        for c in &self.lab_cascades {
            let _ = writeln!(s, "  view {} threshold {:.6}", c.view_id(), c.threshold());
        }
        let _ = writeln!(s, "coarse branches: {}", self.coarse_branches.len());
        for (b, branch) in self.coarse_branches.iter().enumerate() {
            let _ = writeln!(
                s,
                "  branch {} (views {}): {} stages",
                branch.name,
                self.topology.views_of(b),
                branch.stages.len()
            );
            for (k, st) in branch.stages.iter().enumerate() {
                let groups = match &st.features {
                    FeatureSpec::Surf { groups } => groups.clone(),
                    FeatureSpec::ShapeIndexed => Vec::new(),
                };
                let _ = writeln!(
                    s,
                    "    stage {}: SURF groups {} {:?}, layers {}, threshold {:.6}",
                    k + 1,
                    groups.len(),
                    groups,
                    dims(st),
                    st.threshold
                );
            }
        }
        let _ = writeln!(s, "fine cascade: {} stages", self.fine_cascade.len());
        for (k, st) in self.fine_cascade.iter().enumerate() {
            let head = match st.model.head() {
                Head::Joint => "joint",
                Head::Plain => "plain",
            };
            let _ = writeln!(
                s,
                "    stage {}: shape-indexed, {} head, layers {}, threshold {:.6}",
                k + 1,
                head,
                dims(st),
                st.threshold
            );
        }
        let m: Vec<String> = self.mean_shape.as_slice().iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(s, "mean shape: {}", m.join(" "));
        let _ = writeln!(s, "lambda: {}", self.metadata.lambda);
        let _ = writeln!(s, "seed: {}", self.metadata.seed);
        let _ = writeln!(s, "view scheme: {}", self.metadata.view_scheme);
        s
    }
}

fn dims(st: &MlpStage) -> String {
    let d: Vec<String> = st.model.layer_dims().iter().map(|d| d.to_string()).collect();
    d.join("->")
}

/// Writes `model` after validating it.
pub fn save_model(model: &FunnelModel, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let path = path.as_ref();
    std::fs::write(path, model.to_json()).map_err(|e| Error::io(path, e))
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<FunnelModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(FunnelModel::from_json(&text)?)
}

/// Default routing for five views ordered left-full, left-half, frontal,
/// right-half, right-full: the frontal and both half profiles share branch
/// 0, each full profile has its own branch.
pub const FIVE_VIEW_BRANCHES: [usize; 5] = [1, 0, 0, 0, 2];

/// Branch display name: `A`, `B`, ...
pub fn branch_name(b: usize) -> String {
    if b < 26 {
        ((b'A' + b as u8) as char).to_string()
    } else {
        format!("B{b}")
    }
}

impl FunnelModel {
    /// A model with the default architecture and random parameters. Useful
    /// for exercising the pipeline and file format without training.
    pub fn random(seed: u64, weak_per_view: usize) -> FunnelModel {
        use crate::cascade::LabWeakClassifier;
        use crate::features::lab::{all_locators, DEFAULT_BLOCK_SIZES};
        use crate::neural::MlpModel;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let locators = all_locators(&DEFAULT_BLOCK_SIZES);
        let lab_cascades = (0..5)
            .map(|v| {
                let weak = (0..weak_per_view.max(1))
                    .map(|_| LabWeakClassifier {
                        locator: locators[rng.gen_range(0..locators.len())],
                        lut: (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    })
                    .collect();
                LabCascadeModel::new(v, weak, 0.0).expect("random cascade is valid")
            })
            .collect();
        let stage = |spec: FeatureSpec, dims: &[usize], head: Head, rng: &mut ChaCha8Rng| MlpStage {
            features: spec,
            threshold: 0.5,
            model: MlpModel::random(dims, head, 1.0, rng).expect("valid dims"),
        };
        let coarse_branches = (0..3)
            .map(|b| {
                let stages = [(2usize, 15usize), (4, 20), (6, 20)]
                    .iter()
                    .map(|&(k, h)| {
                        let groups = rand::seq::index::sample(&mut rng, SURF_POOL_SIZE, k).into_vec();
                        stage(FeatureSpec::Surf { groups }, &[32 * k, h, 1], Head::Plain, &mut rng)
                    })
                    .collect();
                CoarseBranch {
                    name: branch_name(b),
                    stages,
                }
            })
            .collect();
        let fine_cascade = (0..2)
            .map(|_| stage(FeatureSpec::ShapeIndexed, &[512, 80, 9], Head::Joint, &mut rng))
            .collect();
        let names = ["left-full-profile", "left-half-profile", "frontal", "right-half-profile", "right-full-profile"];
        FunnelModel {
            format: FORMAT_VERSION.into(),
            surf_pool_hash: default_pool_hash(),
            views: names
                .iter()
                .enumerate()
                .map(|(id, n)| ViewInfo {
                    id,
                    name: n.to_string(),
                    yaw: None,
                })
                .collect(),
            topology: FunnelTopology {
                view_to_branch: FIVE_VIEW_BRANCHES.to_vec(),
                lab_block_sizes: DEFAULT_BLOCK_SIZES.to_vec(),
            },
            lab_cascades,
            coarse_branches,
            fine_cascade,
            mean_shape: Shape4::from_points([(0.3, 0.4), (0.7, 0.4), (0.5, 0.6), (0.5, 0.78)]),
            metadata: TrainingMetadata {
                seed,
                view_scheme: "five".into(),
                lambda: crate::neural::DEFAULT_LAMBDA,
                ..Default::default()
            },
        }
    }
}
