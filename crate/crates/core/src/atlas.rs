//! Anatomical structure schema and the label-ID configuration that maps a
//! parcellation onto it.
//!
//! The config format is line oriented:
//!
//! ```text
//! # comment
//! VS = 1
//! LeftCerebellum = 7, 8
//! ```
//!
//! Every structure except `Background` must appear exactly once. Background
//! is implicit: label 0 plus any ID not listed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::BinaryMask;
use crate::nifti::LabelVolume;

/// Structures carrying a feature, in feature-column order. Variant names are
/// the spellings used in atlas config files.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StructureId {
    VS,
    Pons,
    Brainstem,
    VermalLobulesI_V,
    VermalLobulesVI_VII,
    VermalLobulesVIII_X,
    LeftCerebellum,
    RightCerebellum,
    Background,
}

impl StructureId {
    pub const ALL: [StructureId; 9] = [
        Self::VS,
        Self::Pons,
        Self::Brainstem,
        Self::VermalLobulesI_V,
        Self::VermalLobulesVI_VII,
        Self::VermalLobulesVIII_X,
        Self::LeftCerebellum,
        Self::RightCerebellum,
        Self::Background,
    ];

    /// The eight segmented structures, i.e. everything but `Background`.
    pub const ANATOMICAL: [StructureId; 8] = [
        Self::VS,
        Self::Pons,
        Self::Brainstem,
        Self::VermalLobulesI_V,
        Self::VermalLobulesVI_VII,
        Self::VermalLobulesVIII_X,
        Self::LeftCerebellum,
        Self::RightCerebellum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::VS => "VS",
            Self::Pons => "Pons",
            Self::Brainstem => "Brainstem",
            Self::VermalLobulesI_V => "VermalLobulesI_V",
            Self::VermalLobulesVI_VII => "VermalLobulesVI_VII",
            Self::VermalLobulesVIII_X => "VermalLobulesVIII_X",
            Self::LeftCerebellum => "LeftCerebellum",
            Self::RightCerebellum => "RightCerebellum",
            Self::Background => "Background",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StructureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StructureId {
    type Err = AtlasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|id| id.name() == s).ok_or_else(|| AtlasError::UnknownStructureName(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AtlasError {
    #[error("unknown structure name {0:?}")]
    UnknownStructureName(String),
    #[error("label id {id} is assigned to both {first} and {second}")]
    DuplicateLabelId { id: u16, first: StructureId, second: StructureId },
    #[error("structure {0} is not mapped")]
    MissingStructure(StructureId),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Validated structure → label-ID mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtlasConfig {
    ids: [Vec<u16>; 8],
    /// Structure index per label value; `Background` for unmapped values.
    lookup: Vec<StructureId>,
}

impl AtlasConfig {
    /// Builds a config from per-structure ID lists, in `StructureId::ANATOMICAL` order.
    pub fn new(ids: [Vec<u16>; 8]) -> Result<Self, AtlasError> {
        let mut owner: BTreeMap<u16, StructureId> = BTreeMap::new();
        let mut sorted: [Vec<u16>; 8] = Default::default();
        for (slot, (s, list)) in StructureId::ANATOMICAL.into_iter().zip(ids).enumerate() {
            if list.is_empty() {
                return Err(AtlasError::MissingStructure(s));
            }
            for &id in &list {
                if id == 0 {
                    return Err(AtlasError::DuplicateLabelId { id, first: StructureId::Background, second: s });
                }
                if let Some(&first) = owner.get(&id) {
                    return Err(AtlasError::DuplicateLabelId { id, first, second: s });
                }
                owner.insert(id, s);
            }
            let mut list = list;
            list.sort_unstable();
            sorted[slot] = list;
        }
        let top = owner.keys().next_back().copied().unwrap_or(0);
        let mut lookup = vec![StructureId::Background; usize::from(top) + 1];
        for (id, s) in owner {
            lookup[usize::from(id)] = s;
        }
        Ok(Self { ids: sorted, lookup })
    }

    /// Label IDs of a structure, sorted. Empty for `Background`.
    pub fn ids(&self, s: StructureId) -> &[u16] {
        match s {
            StructureId::Background => &[],
            other => &self.ids[other.index()],
        }
    }

    pub fn structure_of(&self, label: u16) -> StructureId {
        self.lookup.get(usize::from(label)).copied().unwrap_or(StructureId::Background)
    }

    /// Renders the config in the text format accepted by [`load_atlas`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in StructureId::ANATOMICAL {
            let ids: Vec<String> = self.ids(s).iter().map(u16::to_string).collect();
            out.push_str(&format!("{} = {}\n", s.name(), ids.join(", ")));
        }
        out
    }
}

/// Parses the line-oriented `Name = id[, id...]` format.
pub fn load_atlas(text: &str) -> Result<AtlasConfig, AtlasError> {
    let mut ids: [Option<Vec<u16>>; 8] = Default::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |message: String| AtlasError::Syntax { line, message };
        let (name, list) =
            content.split_once('=').ok_or_else(|| syntax(format!("expected `Name = id[, id...]`, got {content:?}")))?;
        let structure: StructureId = name.trim().parse()?;
        if structure == StructureId::Background {
            return Err(syntax("Background is implicit and cannot be mapped".into()));
        }
        let parsed = list
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                match tok.parse::<u16>() {
                    Ok(0) => Err(syntax("label id 0 is reserved for background".into())),
                    Ok(id) => Ok(id),
                    Err(_) => Err(syntax(format!("{tok:?} is not a label id in 1..=65535"))),
                }
            })
            .collect::<Result<Vec<u16>, _>>()?;
        let slot = &mut ids[structure.index()];
        if slot.is_some() {
            return Err(syntax(format!("{structure} is mapped twice")));
        }
        *slot = Some(parsed);
    }
    let mut full: [Vec<u16>; 8] = Default::default();
    for (s, (dst, src)) in StructureId::ANATOMICAL.into_iter().zip(full.iter_mut().zip(ids)) {
        *dst = src.ok_or(AtlasError::MissingStructure(s))?;
    }
    AtlasConfig::new(full)
}

/// Binary mask of the voxels belonging to `s`.
pub fn mask_of(vol: &LabelVolume, atlas: &AtlasConfig, s: StructureId) -> BinaryMask {
    let bits = vol.labels().iter().map(|&l| atlas.structure_of(l) == s).collect();
    BinaryMask::from_bits(vol.dims(), vol.spacing(), bits).expect("volume dims are valid")
}

/// All nine masks in `StructureId::ALL` order, computed in a single pass.
pub fn all_masks(vol: &LabelVolume, atlas: &AtlasConfig) -> Vec<BinaryMask> {
    let mut bits = vec![vec![false; vol.labels().len()]; StructureId::ALL.len()];
    for (i, &l) in vol.labels().iter().enumerate() {
        bits[atlas.structure_of(l).index()][i] = true;
    }
    bits.into_iter()
        .map(|b| BinaryMask::from_bits(vol.dims(), vol.spacing(), b).expect("volume dims are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "\
# minimal well-formed atlas
VS = 1
Pons = 2
Brainstem = 3
VermalLobulesI_V = 4
VermalLobulesVI_VII = 5
VermalLobulesVIII_X = 6
LeftCerebellum = 7, 8   # exterior, white matter
RightCerebellum = 9,10
";

    #[test]
    fn loads_minimal_config() {
        let atlas = load_atlas(MINIMAL).unwrap();
        assert_eq!(atlas.ids(StructureId::VS), &[1]);
        assert_eq!(atlas.ids(StructureId::LeftCerebellum), &[7, 8]);
        assert_eq!(atlas.ids(StructureId::RightCerebellum), &[9, 10]);
        assert_eq!(atlas.structure_of(8), StructureId::LeftCerebellum);
        assert_eq!(atlas.structure_of(0), StructureId::Background);
        assert_eq!(atlas.structure_of(11), StructureId::Background);
        assert_eq!(load_atlas(&atlas.to_text()).unwrap(), atlas);
    }

    #[test]
    fn clashing_ids_are_rejected() {
        let text = MINIMAL.replace("Pons = 2", "Pons = 1");
        assert_eq!(
            load_atlas(&text),
            Err(AtlasError::DuplicateLabelId { id: 1, first: StructureId::VS, second: StructureId::Pons })
        );
    }

    #[test]
    fn missing_structure_is_rejected() {
        let text = MINIMAL.replace("Brainstem = 3\n", "");
        assert_eq!(load_atlas(&text), Err(AtlasError::MissingStructure(StructureId::Brainstem)));
    }

    #[test]
    fn unknown_name_is_rejected() {
        let text = format!("{MINIMAL}Thalamus = 40\n");
        assert_eq!(load_atlas(&text), Err(AtlasError::UnknownStructureName("Thalamus".into())));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = MINIMAL.replace("Pons = 2", "Pons 2");
        assert!(matches!(load_atlas(&text), Err(AtlasError::Syntax { line: 3, .. })));
        let text = MINIMAL.replace("Pons = 2", "Pons = two");
        assert!(matches!(load_atlas(&text), Err(AtlasError::Syntax { line: 3, .. })));
        let text = MINIMAL.replace("Pons = 2", "Pons = 0");
        assert!(matches!(load_atlas(&text), Err(AtlasError::Syntax { .. })));
        let text = MINIMAL.replace("Pons = 2", "Pons =");
        assert!(matches!(load_atlas(&text), Err(AtlasError::Syntax { .. })));
        let text = format!("{MINIMAL}Background = 11\n");
        assert!(matches!(load_atlas(&text), Err(AtlasError::Syntax { .. })));
        let text = format!("{MINIMAL}VS = 12\n");
        assert!(matches!(load_atlas(&text), Err(AtlasError::Syntax { .. })));
    }

    #[test]
    fn mask_selection() {
        let vol = LabelVolume::with_spacing([4, 1, 1], [1.0; 3], vec![1, 0, 2, 0]).unwrap();
        let atlas = load_atlas(MINIMAL).unwrap();
        assert_eq!(mask_of(&vol, &atlas, StructureId::VS).bits(), &[true, false, false, false]);
        assert_eq!(mask_of(&vol, &atlas, StructureId::Background).bits(), &[false, true, false, true]);
        assert_eq!(mask_of(&vol, &atlas, StructureId::Brainstem).count(), 0);
    }

    fn arb_atlas() -> impl Strategy<Value = AtlasConfig> {
        // Shuffle 16 distinct IDs, deal them out in non-empty groups.
        (Just((1u16..=16).collect::<Vec<_>>()).prop_shuffle(), proptest::collection::vec(1usize..=2, 8)).prop_map(
            |(pool, sizes)| {
                let mut ids: [Vec<u16>; 8] = Default::default();
                let mut it = pool.into_iter();
                for (slot, n) in ids.iter_mut().zip(sizes) {
                    *slot = it.by_ref().take(n).collect();
                }
                AtlasConfig::new(ids).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn masks_partition_every_volume(
            atlas in arb_atlas(),
            labels in proptest::collection::vec(0u16..24, 60),
        ) {
            let vol = LabelVolume::with_spacing([5, 4, 3], [1.0; 3], labels).unwrap();
            let masks = all_masks(&vol, &atlas);
            for i in 0..vol.labels().len() {
                prop_assert_eq!(masks.iter().filter(|m| m.bits()[i]).count(), 1);
            }
            for s in StructureId::ALL {
                prop_assert_eq!(&mask_of(&vol, &atlas, s), &masks[s.index()]);
            }
        }

        #[test]
        fn id_order_in_config_is_irrelevant(atlas in arb_atlas()) {
            let reversed: [Vec<u16>; 8] = std::array::from_fn(|i| {
                let mut v = atlas.ids(StructureId::ANATOMICAL[i]).to_vec();
                v.reverse();
                v
            });
            prop_assert_eq!(AtlasConfig::new(reversed).unwrap(), atlas);
        }
    }
}
