use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The supported diagnosis models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Irt,
    Mirt,
    Dina,
    Mf,
    Ncd,
    NcdPlus,
    Kscd,
    KscdPlus,
    Rcd,
    RcdPlus,
    Kancd,
    KancdPlus,
    Ka2ncdE,
    Ka2ncdKan,
}

impl Variant {
    pub const ALL: [Variant; 14] = [
        Variant::Irt,
        Variant::Mirt,
        Variant::Dina,
        Variant::Mf,
        Variant::Ncd,
        Variant::NcdPlus,
        Variant::Kscd,
        Variant::KscdPlus,
        Variant::Rcd,
        Variant::RcdPlus,
        Variant::Kancd,
        Variant::KancdPlus,
        Variant::Ka2ncdE,
        Variant::Ka2ncdKan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Irt => "IRT",
            Variant::Mirt => "MIRT",
            Variant::Dina => "DINA",
            Variant::Mf => "MF",
            Variant::Ncd => "NCD",
            Variant::NcdPlus => "NCD+",
            Variant::Kscd => "KSCD",
            Variant::KscdPlus => "KSCD+",
            Variant::Rcd => "RCD",
            Variant::RcdPlus => "RCD+",
            Variant::Kancd => "KaNCD",
            Variant::KancdPlus => "KaNCD+",
            Variant::Ka2ncdE => "KA2NCD-e",
            Variant::Ka2ncdKan => "KA2NCD-kan",
        }
    }

    /// Comma-separated list of every accepted name.
    pub fn names() -> String {
        Variant::ALL.map(Variant::name).join(", ")
    }

    /// Variants whose sub-networks are KANs.
    pub fn uses_kan(self) -> bool {
        matches!(
            self,
            Variant::NcdPlus
                | Variant::KscdPlus
                | Variant::RcdPlus
                | Variant::KancdPlus
                | Variant::Ka2ncdE
                | Variant::Ka2ncdKan
        )
    }

    pub fn is_two_level(self) -> bool {
        matches!(self, Variant::Ka2ncdE | Variant::Ka2ncdKan)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let wanted = s.trim();
        let folded = |v: &str| v.to_ascii_lowercase().replace(['_', ' '], "-");
        Variant::ALL
            .into_iter()
            .find(|v| {
                v.name() == wanted
                    || folded(v.name()) == folded(wanted)
                    || folded(v.name()).replace('+', "plus") == folded(wanted)
            })
            .ok_or_else(|| Error::UnknownVariant {
                name: wanted.to_string(),
                expected: Variant::names(),
            })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}
