use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EtmaError;

/// Which components of the network are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoSelfAttn,
    NoVsAttn,
    NoVisualEncoder,
    NoTextEncoder,
    TextOnly,
    ImageOnly,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::Full,
        AblationVariant::NoSelfAttn,
        AblationVariant::NoVsAttn,
        AblationVariant::NoVisualEncoder,
        AblationVariant::NoTextEncoder,
        AblationVariant::TextOnly,
        AblationVariant::ImageOnly,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoSelfAttn => "no_self_attn",
            AblationVariant::NoVsAttn => "no_vs_attn",
            AblationVariant::NoVisualEncoder => "no_visual_encoder",
            AblationVariant::NoTextEncoder => "no_text_encoder",
            AblationVariant::TextOnly => "text_only",
            AblationVariant::ImageOnly => "image_only",
        }
    }

    pub fn uses_image(self) -> bool {
        self != AblationVariant::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != AblationVariant::ImageOnly
    }

    pub(crate) fn has_visual_blocks(self) -> bool {
        !matches!(self, AblationVariant::NoVisualEncoder | AblationVariant::TextOnly)
    }

    pub(crate) fn has_text_blocks(self) -> bool {
        !matches!(self, AblationVariant::NoTextEncoder | AblationVariant::ImageOnly)
    }

    pub(crate) fn has_vs_attention(self) -> bool {
        matches!(
            self,
            AblationVariant::Full
                | AblationVariant::NoSelfAttn
                | AblationVariant::NoVisualEncoder
                | AblationVariant::NoTextEncoder
        )
    }

    pub(crate) fn has_fusion(self) -> bool {
        self != AblationVariant::NoSelfAttn
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AblationVariant {
    type Err = EtmaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| EtmaError::Config(format!("unknown variant {s:?}")))
    }
}
