//! Grammars and leaf templates shipped with the crate.

use std::collections::BTreeMap;

use super::turtle::DEFAULT_LEAF;
use super::{parse_grammar, LSystemError, LSystemGrammar};
use crate::mesh::{Label, PlantMesh};

pub const BEAN: &str = include_str!("../../assets/grammars/bean.lsys");
pub const KALE: &str = include_str!("../../assets/grammars/kale.lsys");
pub const MINT: &str = include_str!("../../assets/grammars/mint.lsys");
pub const ALGAE: &str = include_str!("../../assets/grammars/algae.lsys");
pub const KOCH: &str = include_str!("../../assets/grammars/koch.lsys");
pub const OVATE_LEAF_OBJ: &str = include_str!("../../assets/leaves/ovate.obj");

/// Names accepted by [`source`].
pub const NAMES: [&str; 5] = ["bean", "kale", "mint", "algae", "koch"];

/// Suggested expansion depth for each plant grammar.
pub fn default_iterations(name: &str) -> Option<u32> {
    match name {
        "bean" => Some(6),
        "kale" => Some(9),
        "mint" => Some(6),
        _ => None,
    }
}

pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "bean" => Some(BEAN),
        "kale" => Some(KALE),
        "mint" => Some(MINT),
        "algae" => Some(ALGAE),
        "koch" => Some(KOCH),
        _ => None,
    }
}

pub fn grammar(name: &str) -> Option<Result<LSystemGrammar, LSystemError>> {
    source(name).map(parse_grammar)
}

/// The bundled ovate leaf blade.
pub fn ovate_leaf() -> PlantMesh {
    PlantMesh::read_obj(OVATE_LEAF_OBJ.as_bytes(), Label::Leaf, super::colors::v(super::colors::LEAF))
        .expect("bundled leaf parses")
}

/// Leaf library holding the bundled template under the default id.
pub fn leaf_library() -> BTreeMap<String, PlantMesh> {
    BTreeMap::from([(DEFAULT_LEAF.to_string(), ovate_leaf())])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_grammars_parse() {
        for name in NAMES {
            let g = grammar(name).unwrap().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!g.rules.is_empty());
        }
        assert!(grammar("cactus").is_none());
    }

    #[test]
    fn leaf_template() {
        let leaf = ovate_leaf();
        leaf.validate().unwrap();
        assert_eq!(leaf.vertices.len(), 55);
        assert_eq!(leaf.faces.len(), 80);
        assert!(leaf.vertices.iter().all(|v| v.label == Label::Leaf));
        let (lo, hi) = leaf.bounding_box().unwrap();
        assert!((hi.y - 1.0).abs() < 1e-9 && lo.y.abs() < 1e-9);
    }
}
