use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    /// Single autoencoder.
    Ae,
    /// Shared plus per-domain private encoders; similarity on shared embeddings.
    Dsn,
    /// As `Dsn`, similarity on the concatenated shared and private embeddings.
    Dsrn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Similarity {
    None,
    Mmd,
    Adv,
}

/// One of the eight constructible architecture/loss combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    family: Family,
    similarity: Similarity,
}

impl Variant {
    pub const AE: Variant = Variant::of(Family::Ae, Similarity::None);
    pub const AE_MMD: Variant = Variant::of(Family::Ae, Similarity::Mmd);
    pub const AE_ADV: Variant = Variant::of(Family::Ae, Similarity::Adv);
    pub const DSN: Variant = Variant::of(Family::Dsn, Similarity::None);
    pub const DSN_MMD: Variant = Variant::of(Family::Dsn, Similarity::Mmd);
    pub const DSN_ADV: Variant = Variant::of(Family::Dsn, Similarity::Adv);
    pub const DSRN_MMD: Variant = Variant::of(Family::Dsrn, Similarity::Mmd);
    pub const DSRN_ADV: Variant = Variant::of(Family::Dsrn, Similarity::Adv);

    /// All variants in heat-map order.
    pub const ALL: [Variant; 8] = [
        Variant::AE,
        Variant::DSN,
        Variant::AE_MMD,
        Variant::DSRN_MMD,
        Variant::DSN_MMD,
        Variant::AE_ADV,
        Variant::DSRN_ADV,
        Variant::DSN_ADV,
    ];

    const fn of(family: Family, similarity: Similarity) -> Self {
        Self { family, similarity }
    }

    /// Fails for DSRN without a similarity loss, which is not part of the zoo.
    pub fn new(family: Family, similarity: Similarity) -> Result<Self> {
        if family == Family::Dsrn && similarity == Similarity::None {
            return Err(Error::invalid("DSRN requires an mmd or adv similarity loss"));
        }
        Ok(Self::of(family, similarity))
    }

    pub fn family(self) -> Family {
        self.family
    }

    pub fn similarity(self) -> Similarity {
        self.similarity
    }

    pub fn has_private(self) -> bool {
        self.family != Family::Ae
    }

    /// Width of the embeddings compared across domains.
    pub fn similarity_width(self) -> usize {
        match self.family {
            Family::Dsrn => 2 * super::EMBED_DIM,
            _ => super::EMBED_DIM,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            Family::Ae => "AE",
            Family::Dsn => "DSN",
            Family::Dsrn => "DSRN",
        };
        match self.similarity {
            Similarity::None => f.write_str(fam),
            Similarity::Mmd => write!(f, "{fam}-mmd"),
            Similarity::Adv => write!(f, "{fam}-adv"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (fam, sim) = lower.split_once('-').unwrap_or((lower.as_str(), ""));
        let family = match fam {
            "ae" => Family::Ae,
            "dsn" => Family::Dsn,
            "dsrn" => Family::Dsrn,
            _ => return Err(Error::invalid(format!("unknown variant `{s}`"))),
        };
        let similarity = match sim {
            "" => Similarity::None,
            "mmd" => Similarity::Mmd,
            "adv" => Similarity::Adv,
            _ => return Err(Error::invalid(format!("unknown variant `{s}`"))),
        };
        Variant::new(family, similarity)
    }
}

/// Parse a comma-separated variant list; `all` expands to every variant.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_eight_variants_round_trip() {
        let names: Vec<String> = Variant::ALL.iter().map(ToString::to_string).collect();
        assert_eq!(
            names,
            ["AE", "DSN", "AE-mmd", "DSRN-mmd", "DSN-mmd", "AE-adv", "DSRN-adv", "DSN-adv"]
        );
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("DSRN".parse::<Variant>().is_err());
        assert!(Variant::new(Family::Dsrn, Similarity::None).is_err());
    }

    #[test]
    fn similarity_widths() {
        assert_eq!(Variant::DSRN_ADV.similarity_width(), 256);
        assert_eq!(Variant::DSN_ADV.similarity_width(), 128);
        assert_eq!(Variant::AE_MMD.similarity_width(), 128);
    }

    #[test]
    fn parses_lists() {
        assert_eq!(
            parse_variants("AE,dsn-ADV").unwrap(),
            vec![Variant::AE, Variant::DSN_ADV]
        );
        assert_eq!(parse_variants("all").unwrap().len(), 8);
    }
}
