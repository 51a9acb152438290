//! Benthic classes, label maps, patch tiling and stitching, segmentation
//! backends.

mod backend;
mod labels;
mod tiling;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use backend::{ConfusionEntry, ConfusionKernel, ExternalSegmenter, OracleSegmenter, Segmenter};
pub use labels::{group_classes, mask_unwanted, LabelMap, ProbabilityGrid};
pub use tiling::{resize_frame, resize_labels, stitch_predictions, tile_frame, tile_placements, Patch, Placement, TilingConfig};

/// Number of classes in a taxonomy.
pub const CLASS_COUNT: usize = 20;
/// Label of pixels without annotation; excluded from metrics.
pub const UNLABELED: u8 = 255;

const DEFAULT_TAXONOMY: &str = include_str!("../../data/taxonomy.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Substrate,
    LiveCoral,
    Mobile,
    Unwanted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDescriptor {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingSpec {
    pub name: String,
    #[serde(default, rename = "group")]
    pub groups: Vec<GroupSpec>,
}

/// A total many-to-one relabeling into a separate group id space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub name: String,
    pub group_names: Vec<String>,
    /// Group id per class id.
    pub map: Vec<u8>,
}

impl Grouping {
    pub fn as_map(&self) -> BTreeMap<u8, u8> {
        self.map.iter().enumerate().map(|(c, g)| (c as u8, *g)).collect()
    }

    pub fn group_count(&self) -> usize {
        self.group_names.len()
    }

    pub fn group_of(&self, class: u8) -> Option<u8> {
        self.map.get(class as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTaxonomy {
    #[serde(rename = "class")]
    pub classes: Vec<ClassDescriptor>,
    #[serde(default, rename = "grouping")]
    pub groupings: Vec<GroupingSpec>,
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }
}

impl ClassTaxonomy {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let t: ClassTaxonomy = toml::from_str(text).map_err(|e| Error::Taxonomy(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != CLASS_COUNT {
            return Err(Error::Taxonomy(format!(
                "expected {CLASS_COUNT} classes, found {}",
                self.classes.len()
            )));
        }
        let mut names = BTreeSet::new();
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Taxonomy(format!("class ids must be dense; position {i} has id {}", c.id)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Taxonomy(format!("duplicate class name {:?}", c.name)));
            }
        }
        for required in ["background", "human", "fish"] {
            let Some(c) = self.classes.iter().find(|c| c.name == required) else {
                return Err(Error::Taxonomy(format!("missing class {required:?}")));
            };
            if !matches!(c.role, Role::Unwanted | Role::Mobile) {
                return Err(Error::Taxonomy(format!("class {required:?} must be unwanted or mobile")));
            }
        }
        let mut grouping_names = BTreeSet::new();
        for g in &self.groupings {
            if !grouping_names.insert(g.name.as_str()) {
                return Err(Error::Taxonomy(format!("duplicate grouping {:?}", g.name)));
            }
            self.grouping(&g.name)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<u8> {
        self.classes
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.id)
            .ok_or_else(|| Error::Taxonomy(format!("unknown class {name:?}")))
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.classes.get(id as usize).map(|c| c.name.as_str())
    }

    pub fn ids(&self, names: &[String]) -> Result<BTreeSet<u8>> {
        names.iter().map(|n| self.id(n)).collect()
    }

    pub fn palette(&self) -> Vec<[u8; 3]> {
        self.classes.iter().map(|c| c.color).collect()
    }

    /// The identity grouping (every class its own group).
    pub fn identity_grouping(&self) -> Grouping {
        Grouping {
            name: "identity".into(),
            group_names: self.classes.iter().map(|c| c.name.clone()).collect(),
            map: (0..self.classes.len() as u8).collect(),
        }
    }

    /// Resolves a named grouping. Group ids are assigned in order of the
    /// lowest class id each group contains.
    pub fn grouping(&self, name: &str) -> Result<Grouping> {
        let spec = self
            .groupings
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Grouping(format!("unknown grouping {name:?}")))?;
        let mut member: Vec<Option<usize>> = vec![None; self.classes.len()];
        for (gi, g) in spec.groups.iter().enumerate() {
            for cname in &g.classes {
                let id = self.id(cname).map_err(|e| Error::Grouping(e.to_string()))? as usize;
                if member[id].replace(gi).is_some() {
                    return Err(Error::Grouping(format!("class {cname:?} appears in two groups of {name:?}")));
                }
            }
        }
        let mut group_names = Vec::new();
        let mut assigned: BTreeMap<usize, u8> = BTreeMap::new();
        let mut map = Vec::with_capacity(self.classes.len());
        for (c, m) in member.iter().enumerate() {
            let gid = match m {
                Some(gi) => *assigned.entry(*gi).or_insert_with(|| {
                    group_names.push(spec.groups[*gi].name.clone());
                    (group_names.len() - 1) as u8
                }),
                None => {
                    group_names.push(self.classes[c].name.clone());
                    (group_names.len() - 1) as u8
                }
            };
            map.push(gid);
        }
        Ok(Grouping {
            name: name.into(),
            group_names,
            map,
        })
    }
}
