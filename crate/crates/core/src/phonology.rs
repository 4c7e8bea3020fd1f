//! Articulatory dimensions, their class inventories, and the ARPABET phoneme map.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One of the three articulatory dimensions classified per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Manner,
    Place,
    Voicing,
}

pub const MANNER_CLASSES: [&str; 6] = ["Silence", "Stop", "Nasal", "Fricative", "Approximant", "Vowel"];
pub const PLACE_CLASSES: [&str; 8] = ["Silence", "Labial", "Dental", "Alveolar", "Postalveolar", "Palatal", "Velar", "Glottal"];
pub const VOICING_CLASSES: [&str; 3] = ["Silence", "Voiceless", "Voiced"];

/// Keyword in the mapping file for phonemes skipped by the place task.
pub const EXCLUDED: &str = "EXCLUDED";

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Manner, Dimension::Place, Dimension::Voicing];

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Dimension::Manner => &MANNER_CLASSES,
            Dimension::Place => &PLACE_CLASSES,
            Dimension::Voicing => &VOICING_CLASSES,
        }
    }

    pub fn n_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Manner => "manner",
            Dimension::Place => "place",
            Dimension::Voicing => "voicing",
        }
    }

    /// Ordinal of a class name within this dimension.
    pub fn class_index(self, name: &str) -> Option<usize> {
        self.class_names().iter().position(|c| *c == name)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "manner" => Ok(Dimension::Manner),
            "place" => Ok(Dimension::Place),
            "voicing" => Ok(Dimension::Voicing),
            _ => Err(Error::Config(format!("unknown dimension {s:?} (manner | place | voicing)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PhonologicalClass {
    pub dimension: Dimension,
    pub index: usize,
}

impl PhonologicalClass {
    pub fn name(&self) -> &'static str {
        self.dimension.class_names()[self.index]
    }

    pub fn is_silence(&self) -> bool {
        self.index == 0
    }
}

impl fmt::Display for PhonologicalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered class list of a dimension, Silence first.
pub fn classes(dim: Dimension) -> Vec<PhonologicalClass> {
    (0..dim.n_classes()).map(|index| PhonologicalClass { dimension: dim, index }).collect()
}

/// The ARPABET inventory (stress digits removed), excluding the silence sentinel.
pub const INVENTORY: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

pub const SIL: &str = "SIL";

/// Every (phoneme, dimension, class) triple listed in the reference class table.
///
/// IPA symbols are rendered in ARPABET: /S/ = SH, /N/ = NG, /T/ = TH, /D/ = DH,
/// /j/ = Y, /h/ = HH, and the vowels /a e i o u/ = AA EY IY OW UW.
pub const REFERENCE_TABLE: &[(&str, Dimension, &str)] = &[
    ("P", Dimension::Manner, "Stop"),
    ("T", Dimension::Manner, "Stop"),
    ("K", Dimension::Manner, "Stop"),
    ("B", Dimension::Manner, "Stop"),
    ("D", Dimension::Manner, "Stop"),
    ("G", Dimension::Manner, "Stop"),
    ("N", Dimension::Manner, "Nasal"),
    ("M", Dimension::Manner, "Nasal"),
    ("NG", Dimension::Manner, "Nasal"),
    ("S", Dimension::Manner, "Fricative"),
    ("SH", Dimension::Manner, "Fricative"),
    ("Z", Dimension::Manner, "Fricative"),
    ("F", Dimension::Manner, "Fricative"),
    ("Y", Dimension::Manner, "Approximant"),
    ("AA", Dimension::Manner, "Vowel"),
    ("EY", Dimension::Manner, "Vowel"),
    ("IY", Dimension::Manner, "Vowel"),
    ("OW", Dimension::Manner, "Vowel"),
    ("UW", Dimension::Manner, "Vowel"),
    ("P", Dimension::Place, "Labial"),
    ("B", Dimension::Place, "Labial"),
    ("M", Dimension::Place, "Labial"),
    ("F", Dimension::Place, "Labial"),
    ("V", Dimension::Place, "Labial"),
    ("TH", Dimension::Place, "Dental"),
    ("DH", Dimension::Place, "Dental"),
    ("T", Dimension::Place, "Alveolar"),
    ("D", Dimension::Place, "Alveolar"),
    ("N", Dimension::Place, "Alveolar"),
    ("SH", Dimension::Place, "Postalveolar"),
    ("Y", Dimension::Place, "Palatal"),
    ("K", Dimension::Place, "Velar"),
    ("G", Dimension::Place, "Velar"),
    ("NG", Dimension::Place, "Velar"),
    ("HH", Dimension::Place, "Glottal"),
    ("P", Dimension::Voicing, "Voiceless"),
    ("T", Dimension::Voicing, "Voiceless"),
    ("K", Dimension::Voicing, "Voiceless"),
    ("SH", Dimension::Voicing, "Voiceless"),
    ("S", Dimension::Voicing, "Voiceless"),
    ("M", Dimension::Voicing, "Voiced"),
    ("N", Dimension::Voicing, "Voiced"),
    ("B", Dimension::Voicing, "Voiced"),
    ("D", Dimension::Voicing, "Voiced"),
    ("G", Dimension::Voicing, "Voiced"),
    ("AA", Dimension::Voicing, "Voiced"),
];

/// The shipped mapping file.
pub const DEFAULT_MAP_TSV: &str = include_str!("../data/arpabet.tsv");

/// A normalized ARPABET symbol: uppercase, stress digits removed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Phoneme(String);

impl Phoneme {
    /// Normalize a raw symbol: uppercase, drop stress digits. `SP` and `PAU` become the silence sentinel.
    pub fn normalize(raw: &str) -> Result<Self> {
        let upper = raw.trim().to_ascii_uppercase();
        let stripped = upper.trim_end_matches(|c: char| c.is_ascii_digit());
        match stripped {
            "SIL" | "SP" | "PAU" => Ok(Self::silence()),
            s if INVENTORY.contains(&s) => Ok(Self(s.to_string())),
            _ => Err(Error::UnknownPhoneme(raw.to_string())),
        }
    }

    pub fn silence() -> Self {
        Self(SIL.to_string())
    }

    pub fn is_silence(&self) -> bool {
        self.0 == SIL
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Class assignment of a phoneme in one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Class(PhonologicalClass),
    /// The phoneme has no class in this dimension; frames carrying it are masked.
    Excluded,
}

impl Assignment {
    pub fn class(self) -> Option<PhonologicalClass> {
        match self {
            Assignment::Class(c) => Some(c),
            Assignment::Excluded => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Entry {
    manner: usize,
    place: Option<usize>,
    voicing: usize,
}

/// Total mapping from the inventory (plus the silence sentinel) to classes.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeMap {
    entries: BTreeMap<String, Entry>,
}

impl Default for PhonemeMap {
    fn default() -> Self {
        Self::parse(DEFAULT_MAP_TSV, "<builtin>").expect("shipped phoneme map is valid")
    }
}

impl PhonemeMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse and eagerly validate the tab-separated mapping format.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim_end_matches([' ', '\t']);
            if content.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(line_no, format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let symbol = fields[0];
            if symbol != SIL && !INVENTORY.contains(&symbol) {
                return Err(parse_err(line_no, format!("unknown phoneme {symbol:?}")));
            }
            let class = |dim: Dimension, name: &str| {
                dim.class_index(name)
                    .ok_or_else(|| parse_err(line_no, format!("{name:?} is not a {dim} class")))
            };
            let manner = class(Dimension::Manner, fields[1])?;
            let place = if fields[2] == EXCLUDED { None } else { Some(class(Dimension::Place, fields[2])?) };
            let voicing = class(Dimension::Voicing, fields[3])?;
            let entry = Entry { manner, place, voicing };
            if entries.insert(symbol.to_string(), entry).is_some() {
                return Err(parse_err(line_no, format!("duplicate entry for {symbol}")));
            }
        }

        match entries.get(SIL) {
            None => {
                entries.insert(SIL.to_string(), Entry { manner: 0, place: Some(0), voicing: 0 });
            }
            Some(e) if *e == (Entry { manner: 0, place: Some(0), voicing: 0 }) => {}
            Some(_) => {
                return Err(Error::ContradictsTable1 {
                    phoneme: SIL.into(),
                    dimension: "all".into(),
                    expected: "Silence".into(),
                    found: "non-silence class".into(),
                })
            }
        }
        if let Some(missing) = INVENTORY.iter().find(|p| !entries.contains_key(**p)) {
            return Err(Error::IncompleteMap(missing.to_string()));
        }
        let map = Self { entries };
        map.check_reference_table()?;
        Ok(map)
    }

    fn check_reference_table(&self) -> Result<()> {
        for &(p, dim, expected) in REFERENCE_TABLE {
            let found = match self.assignment(p, dim) {
                Some(Assignment::Class(c)) => c.name(),
                Some(Assignment::Excluded) => EXCLUDED,
                None => return Err(Error::IncompleteMap(p.to_string())),
            };
            if found != expected {
                return Err(Error::ContradictsTable1 {
                    phoneme: p.into(),
                    dimension: dim.to_string(),
                    expected: expected.into(),
                    found: found.into(),
                });
            }
        }
        Ok(())
    }

    fn assignment(&self, symbol: &str, dim: Dimension) -> Option<Assignment> {
        let e = self.entries.get(symbol)?;
        let idx = match dim {
            Dimension::Manner => Some(e.manner),
            Dimension::Place => e.place,
            Dimension::Voicing => Some(e.voicing),
        };
        Some(match idx {
            Some(index) => Assignment::Class(PhonologicalClass { dimension: dim, index }),
            None => Assignment::Excluded,
        })
    }

    pub fn class_of(&self, phoneme: &Phoneme, dim: Dimension) -> Result<Assignment> {
        self.assignment(phoneme.as_str(), dim)
            .ok_or_else(|| Error::UnknownPhoneme(phoneme.to_string()))
    }

    /// Convenience lookup by raw symbol (normalized first).
    pub fn class_of_symbol(&self, symbol: &str, dim: Dimension) -> Result<Assignment> {
        self.class_of(&Phoneme::normalize(symbol)?, dim)
    }

    pub fn phonemes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}
