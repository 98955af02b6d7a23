//! Extended unit dictionary: specials, language tags, and concatenated
//! family-tagged unit blocks, plus the per-language allowed-index masks used
//! by masked training and decoding.

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretize::RunLengthUnits;
use crate::error::{Error, Result};
use crate::synthlang::{FamilyId, LangId, WorldSpec};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const NUM_SPECIALS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyBlock {
    pub family: FamilyId,
    pub name: String,
    pub k: usize,
    /// First extended id of this block.
    pub offset: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedVocabulary {
    /// Language tag ids, one per language, contiguous from `NUM_SPECIALS`,
    /// in language-id order.
    languages: Vec<(LangId, String)>,
    blocks: Vec<FamilyBlock>,
    lang_family: BTreeMap<LangId, FamilyId>,
    total: u32,
}

impl ExtendedVocabulary {
    /// Concatenate family dictionaries (in the order given) after the
    /// specials and language-tag block.
    pub fn build_extended(
        languages: &[(LangId, String, Option<FamilyId>)],
        family_dicts: &[(FamilyId, String, usize)],
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (fid, _, k) in family_dicts {
            if !seen.insert(*fid) {
                return Err(Error::Vocabulary(format!(
                    "duplicate family id {} in dictionary list",
                    fid.0
                )));
            }
            if *k < 1 {
                return Err(Error::Vocabulary("family dictionary with k = 0".into()));
            }
        }
        let mut lang_family = BTreeMap::new();
        for (lid, _, fam) in languages {
            if let Some(f) = fam {
                if !seen.contains(f) {
                    return Err(Error::Vocabulary(format!(
                        "language {} references unknown family {}",
                        lid.0, f.0
                    )));
                }
                lang_family.insert(*lid, *f);
            }
        }
        let mut offset = NUM_SPECIALS + languages.len() as u32;
        let mut blocks = Vec::with_capacity(family_dicts.len());
        for (fid, name, k) in family_dicts {
            blocks.push(FamilyBlock {
                family: *fid,
                name: name.clone(),
                k: *k,
                offset,
            });
            offset += *k as u32;
        }
        Ok(ExtendedVocabulary {
            languages: languages.iter().map(|(l, n, _)| (*l, n.clone())).collect(),
            blocks,
            lang_family,
            total: offset,
        })
    }

    /// Vocabulary over a world's families with uniform per-family `k`.
    pub fn for_world(world: &WorldSpec, k_per_family: &[(FamilyId, usize)]) -> Result<Self> {
        let languages: Vec<(LangId, String, Option<FamilyId>)> = world
            .languages
            .iter()
            .map(|l| (l.id, l.name.clone(), l.family))
            .collect();
        let dicts: Vec<(FamilyId, String, usize)> = k_per_family
            .iter()
            .map(|&(fid, k)| {
                let name = world.family(fid).map(|f| f.name.clone())?;
                Ok((fid, name, k))
            })
            .collect::<Result<_>>()?;
        Self::build_extended(&languages, &dicts)
    }

    pub fn size(&self) -> u32 {
        self.total
    }

    pub fn num_languages(&self) -> usize {
        self.languages.len()
    }

    pub fn blocks(&self) -> &[FamilyBlock] {
        &self.blocks
    }

    pub fn language_tag(&self, lang: LangId) -> Result<u32> {
        let pos = self
            .languages
            .iter()
            .position(|(l, _)| *l == lang)
            .ok_or_else(|| Error::Vocabulary(format!("unknown language id {}", lang.0)))?;
        Ok(NUM_SPECIALS + pos as u32)
    }

    pub fn family_of_lang(&self, lang: LangId) -> Result<FamilyId> {
        self.lang_family.get(&lang).copied().ok_or_else(|| {
            Error::Vocabulary(format!("language {} belongs to no family", lang.0))
        })
    }

    pub fn block_for_family(&self, family: FamilyId) -> Result<&FamilyBlock> {
        self.blocks
            .iter()
            .find(|b| b.family == family)
            .ok_or_else(|| Error::Vocabulary(format!("unknown family id {}", family.0)))
    }

    /// Printable name of an extended id, e.g. `pad`, `[f0l1]`, `fam0-47`.
    pub fn name_of(&self, id: u32) -> Result<String> {
        match id {
            PAD => return Ok("pad".into()),
            BOS => return Ok("bos".into()),
            EOS => return Ok("eos".into()),
            _ => {}
        }
        let lang_end = NUM_SPECIALS + self.languages.len() as u32;
        if id < lang_end {
            let (_, name) = &self.languages[(id - NUM_SPECIALS) as usize];
            return Ok(format!("[{name}]"));
        }
        for b in &self.blocks {
            if id >= b.offset && id < b.offset + b.k as u32 {
                return Ok(format!("{}-{}", b.name, id - b.offset));
            }
        }
        Err(Error::Vocabulary(format!("id {id} outside vocabulary")))
    }

    /// Inverse of `name_of` for family-tagged unit names.
    pub fn id_of_unit_name(&self, name: &str) -> Result<u32> {
        let (fam, raw) = name.rsplit_once('-').ok_or_else(|| {
            Error::Vocabulary(format!("malformed unit name {name:?}"))
        })?;
        let raw: u32 = raw
            .parse()
            .map_err(|_| Error::Vocabulary(format!("malformed unit name {name:?}")))?;
        for b in &self.blocks {
            if b.name == fam {
                if (raw as usize) < b.k {
                    return Ok(b.offset + raw);
                }
                return Err(Error::Vocabulary(format!(
                    "unit {raw} outside family {fam} of size {}",
                    b.k
                )));
            }
        }
        Err(Error::Vocabulary(format!("unknown family {fam:?}")))
    }

    /// Offset raw family units into the extended id space.
    pub fn tag_units(&self, raw: &RunLengthUnits) -> Result<Vec<u32>> {
        let block = self.block_for_family(raw.family)?;
        raw.units
            .iter()
            .map(|&u| {
                if (u as usize) < block.k {
                    Ok(block.offset + u)
                } else {
                    Err(Error::Vocabulary(format!(
                        "raw unit {u} outside family {} of size {}",
                        block.name, block.k
                    )))
                }
            })
            .collect()
    }

    /// Strip the family offset from extended unit ids.
    pub fn detag_units(&self, family: FamilyId, tagged: &[u32]) -> Result<Vec<u32>> {
        let block = self.block_for_family(family)?;
        tagged
            .iter()
            .map(|&id| {
                if id >= block.offset && id < block.offset + block.k as u32 {
                    Ok(id - block.offset)
                } else {
                    Err(Error::Vocabulary(format!(
                        "extended id {id} outside family block {}",
                        block.name
                    )))
                }
            })
            .collect()
    }

    /// The family block owning an extended id, if it is a unit id.
    pub fn family_of_id(&self, id: u32) -> Option<FamilyId> {
        self.blocks
            .iter()
            .find(|b| id >= b.offset && id < b.offset + b.k as u32)
            .map(|b| b.family)
    }

    /// Allowed-index mask for a target language: its family block plus eos.
    /// pad, bos and every language tag are never decodable.
    pub fn mask_for(&self, lang: LangId) -> Result<LanguageMask> {
        let family = self.family_of_lang(lang)?;
        let block = self.block_for_family(family)?;
        let mut allowed = vec![false; self.total as usize];
        allowed[EOS as usize] = true;
        for id in block.offset..block.offset + block.k as u32 {
            allowed[id as usize] = true;
        }
        Ok(LanguageMask { lang, allowed })
    }

    /// Decoder target layout: `[lang_tag] + units + [eos]`. The training
    /// input side is `[bos]` plus this sequence shifted right by one.
    pub fn encode_target(&self, lang: LangId, tagged_units: &[u32]) -> Result<Vec<u32>> {
        let family = self.family_of_lang(lang)?;
        let block = self.block_for_family(family)?;
        for &u in tagged_units {
            if u < block.offset || u >= block.offset + block.k as u32 {
                return Err(Error::Vocabulary(format!(
                    "unit id {u} leaks outside family {} block of language {}",
                    block.name, lang.0
                )));
            }
        }
        let mut seq = Vec::with_capacity(tagged_units.len() + 2);
        seq.push(self.language_tag(lang)?);
        seq.extend_from_slice(tagged_units);
        seq.push(EOS);
        Ok(seq)
    }

    /// Invert `encode_target`: recover `(lang, units)`.
    pub fn decode_target(&self, seq: &[u32]) -> Result<(LangId, Vec<u32>)> {
        if seq.len() < 2 {
            return Err(Error::Vocabulary("target sequence too short".into()));
        }
        let tag = seq[0];
        let lang_end = NUM_SPECIALS + self.languages.len() as u32;
        if !(NUM_SPECIALS..lang_end).contains(&tag) {
            return Err(Error::Vocabulary(format!("sequence starts with non-tag id {tag}")));
        }
        let lang = self.languages[(tag - NUM_SPECIALS) as usize].0;
        if *seq.last().unwrap() != EOS {
            return Err(Error::Vocabulary("target sequence does not end in eos".into()));
        }
        Ok((lang, seq[1..seq.len() - 1].to_vec()))
    }

    /// Deterministic manifest: ordered families, k per family, language ->
    /// family map, and the derived layout.
    pub fn manifest_json(&self) -> String {
        #[derive(Serialize)]
        struct Manifest<'a> {
            total_size: u32,
            specials: [&'a str; 3],
            languages: Vec<(u32, &'a str, u32)>,
            families: Vec<(&'a str, usize, u32)>,
            lang_family: Vec<(u32, u32)>,
        }
        let m = Manifest {
            total_size: self.total,
            specials: ["pad", "bos", "eos"],
            languages: self
                .languages
                .iter()
                .enumerate()
                .map(|(i, (l, n))| (l.0, n.as_str(), NUM_SPECIALS + i as u32))
                .collect(),
            families: self
                .blocks
                .iter()
                .map(|b| (b.name.as_str(), b.k, b.offset))
                .collect(),
            lang_family: self.lang_family.iter().map(|(l, f)| (l.0, f.0)).collect(),
        };
        serde_json::to_string_pretty(&m).expect("manifest serialization cannot fail")
    }

    /// SHA-256 of the manifest; embedded in checkpoints for compatibility
    /// checks.
    pub fn manifest_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.manifest_json().as_bytes());
        h.finalize().into()
    }
}

/// Boolean allowed-index array over the extended vocabulary for one target
/// language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageMask {
    pub lang: LangId,
    pub allowed: Vec<bool>,
}

impl LanguageMask {
    pub fn allowed_ids(&self) -> Vec<u32> {
        self.allowed
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i as u32))
            .collect()
    }

    pub fn popcount(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Shared allowed-set handle for the masked-softmax graph ops.
    pub fn allowed_rc(&self) -> Rc<Vec<u32>> {
        Rc::new(self.allowed_ids())
    }

    /// Mask admitting the whole unit vocabulary (every family block) plus
    /// eos; the reduction case in which masked loss equals plain
    /// cross-entropy over units.
    pub fn full_unit_mask(vocab: &ExtendedVocabulary) -> LanguageMask {
        let mut allowed = vec![false; vocab.size() as usize];
        allowed[EOS as usize] = true;
        for b in vocab.blocks() {
            for id in b.offset..b.offset + b.k as u32 {
                allowed[id as usize] = true;
            }
        }
        LanguageMask { lang: LangId(u32::MAX), allowed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_vocab() -> ExtendedVocabulary {
        // two languages in one family (gem, k=3), two in another (rom, k=4)
        ExtendedVocabulary::build_extended(
            &[
                (LangId(0), "src".into(), None),
                (LangId(1), "de".into(), Some(FamilyId(0))),
                (LangId(2), "nl".into(), Some(FamilyId(0))),
                (LangId(3), "es".into(), Some(FamilyId(1))),
                (LangId(4), "fr".into(), Some(FamilyId(1))),
            ],
            &[
                (FamilyId(0), "gem".into(), 3),
                (FamilyId(1), "rom".into(), 4),
            ],
        )
        .unwrap()
    }

    #[test]
    fn size_formula_and_layout() {
        let v = sample_vocab();
        // 3 specials + 5 languages + 3 + 4 units
        assert_eq!(v.size(), 3 + 5 + 3 + 4);
        assert_eq!(v.name_of(8).unwrap(), "gem-0");
        assert_eq!(v.name_of(10).unwrap(), "gem-2");
        assert_eq!(v.name_of(11).unwrap(), "rom-0");
        assert_eq!(v.name_of(14).unwrap(), "rom-3");
        // unit "gem-2" maps to 3 + num_languages + 2
        assert_eq!(v.id_of_unit_name("gem-2").unwrap(), 3 + 5 + 2);
    }

    #[test]
    fn one_family_counting_example() {
        let v = ExtendedVocabulary::build_extended(
            &[
                (LangId(0), "a".into(), Some(FamilyId(0))),
                (LangId(1), "b".into(), Some(FamilyId(0))),
            ],
            &[(FamilyId(0), "fam".into(), 5)],
        )
        .unwrap();
        assert_eq!(v.size(), 3 + 2 + 5);
    }

    #[test]
    fn duplicate_family_rejected() {
        let err = ExtendedVocabulary::build_extended(
            &[],
            &[
                (FamilyId(0), "a".into(), 2),
                (FamilyId(0), "b".into(), 2),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)));
    }

    #[test]
    fn name_round_trip() {
        let v = sample_vocab();
        for id in (3 + 5)..v.size() {
            let name = v.name_of(id).unwrap();
            assert_eq!(v.id_of_unit_name(&name).unwrap(), id);
        }
    }

    #[test]
    fn tag_units_matches_worked_example() {
        // raw gem units [111, 23, 47] in a large gem block
        let v = ExtendedVocabulary::build_extended(
            &[(LangId(0), "de".into(), Some(FamilyId(0)))],
            &[(FamilyId(0), "gem".into(), 200)],
        )
        .unwrap();
        let raw = RunLengthUnits {
            units: vec![111, 23, 47],
            durations: vec![1, 1, 1],
            family: FamilyId(0),
            lang: LangId(0),
        };
        let tagged = v.tag_units(&raw).unwrap();
        let names: Vec<String> = tagged.iter().map(|&t| v.name_of(t).unwrap()).collect();
        assert_eq!(names, vec!["gem-111", "gem-23", "gem-47"]);
        assert_eq!(v.detag_units(FamilyId(0), &tagged).unwrap(), raw.units);
    }

    #[test]
    fn tag_empty_and_out_of_range() {
        let v = sample_vocab();
        let empty = RunLengthUnits {
            units: vec![],
            durations: vec![],
            family: FamilyId(0),
            lang: LangId(1),
        };
        assert!(v.tag_units(&empty).unwrap().is_empty());
        let bad = RunLengthUnits {
            units: vec![3],
            durations: vec![1],
            family: FamilyId(0),
            lang: LangId(1),
        };
        assert!(v.tag_units(&bad).is_err());
    }

    #[test]
    fn masks_share_family_and_partition_units() {
        let v = sample_vocab();
        let de = v.mask_for(LangId(1)).unwrap();
        let nl = v.mask_for(LangId(2)).unwrap();
        let es = v.mask_for(LangId(3)).unwrap();
        assert_eq!(de.allowed, nl.allowed);
        // different families have disjoint unit sets; both allow eos
        for id in 0..v.size() as usize {
            if id == EOS as usize {
                assert!(de.allowed[id] && es.allowed[id]);
            } else {
                assert!(!(de.allowed[id] && es.allowed[id]), "id {id} in both");
            }
        }
        assert_eq!(de.popcount(), 3 + 1);
        assert_eq!(es.popcount(), 4 + 1);
        // pad, bos, tags never allowed
        assert!(!de.allowed[PAD as usize] && !de.allowed[BOS as usize]);
        for tag in NUM_SPECIALS..(NUM_SPECIALS + 5) {
            assert!(!de.allowed[tag as usize]);
        }
    }

    #[test]
    fn mask_for_unknown_language() {
        let v = sample_vocab();
        assert!(v.mask_for(LangId(9)).is_err());
        // source language has no family, hence no mask
        assert!(v.mask_for(LangId(0)).is_err());
    }

    #[test]
    fn encode_target_layout_and_round_trip() {
        let v = sample_vocab();
        let de = LangId(1);
        let block = v.block_for_family(FamilyId(0)).unwrap();
        let units = vec![block.offset, block.offset + 2];
        let seq = v.encode_target(de, &units).unwrap();
        assert_eq!(seq[0], v.language_tag(de).unwrap());
        assert_eq!(*seq.last().unwrap(), EOS);
        assert_eq!(seq.len(), 4);
        let (lang, dec) = v.decode_target(&seq).unwrap();
        assert_eq!(lang, de);
        assert_eq!(dec, units);

        // empty units -> [tag, eos]
        let seq = v.encode_target(de, &[]).unwrap();
        assert_eq!(seq, vec![v.language_tag(de).unwrap(), EOS]);
    }

    #[test]
    fn encode_target_refuses_leakage() {
        let v = sample_vocab();
        let rom_unit = v.block_for_family(FamilyId(1)).unwrap().offset;
        let err = v.encode_target(LangId(1), &[rom_unit]).unwrap_err();
        assert!(err.to_string().contains("leak"), "{err}");
    }

    #[test]
    fn manifest_is_deterministic() {
        let a = sample_vocab();
        let b = sample_vocab();
        assert_eq!(a.manifest_json(), b.manifest_json());
        assert_eq!(a.manifest_hash(), b.manifest_hash());
    }
}
