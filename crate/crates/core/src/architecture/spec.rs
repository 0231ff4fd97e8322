use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported network depths.
pub const DEPTHS: [usize; 4] = [9, 17, 29, 49];

/// Feature-map widths of the four levels.
pub const LEVEL_CHANNELS: [usize; 4] = [64, 128, 256, 512];

/// Output channels of the first convolution.
pub const FIRST_CONV_CHANNELS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Standard temporal convolutions, k-max pooling and three FC layers.
    Vdcnn,
    /// Depthwise separable convolutions and average pooling into one FC layer.
    Svdcnn,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Vdcnn => "vdcnn",
            Family::Svdcnn => "svdcnn",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Family::Vdcnn => 0,
            Family::Svdcnn => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Family::Vdcnn),
            1 => Some(Family::Svdcnn),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vdcnn" => Ok(Family::Vdcnn),
            "svdcnn" => Ok(Family::Svdcnn),
            other => Err(Error::arg(format!(
                "unknown family {other:?}; expected vdcnn or svdcnn"
            ))),
        }
    }
}

/// Convolutional layers per level `(64, 128, 256, 512)` for a network depth.
/// Each level holds `layers / 2` blocks.
pub fn depth_layout(depth: usize) -> Result<[usize; 4]> {
    match depth {
        9 => Ok([2, 2, 2, 2]),
        17 => Ok([4, 4, 4, 4]),
        29 => Ok([10, 10, 4, 4]),
        49 => Ok([16, 16, 10, 6]),
        other => Err(Error::UnsupportedDepth(other)),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub depth: usize,
    /// Characters per sample.
    pub seq_len: usize,
    pub embed_dim: usize,
    /// Vocabulary size including the padding row.
    pub vocab_size: usize,
    pub n_classes: usize,
    /// Hidden width of the VDCNN classifier; unused by SVDCNN.
    pub fc_hidden: usize,
    /// k of k-max pooling (VDCNN) or output length of average pooling (SVDCNN).
    pub k: usize,
}

impl ArchitectureSpec {
    pub const DEFAULT_SEQ_LEN: usize = 1024;
    pub const DEFAULT_EMBED_DIM: usize = 16;
    pub const DEFAULT_FC_HIDDEN: usize = 2048;
    pub const DEFAULT_K: usize = 8;

    pub fn new(family: Family, depth: usize, n_classes: usize) -> Self {
        ArchitectureSpec {
            family,
            depth,
            seq_len: Self::DEFAULT_SEQ_LEN,
            embed_dim: Self::DEFAULT_EMBED_DIM,
            vocab_size: crate::data::Vocabulary::default().size(),
            n_classes,
            fc_hidden: Self::DEFAULT_FC_HIDDEN,
            k: Self::DEFAULT_K,
        }
    }

    pub fn with_seq_len(mut self, s: usize) -> Self {
        self.seq_len = s;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        depth_layout(self.depth)?;
        if self.seq_len == 0 || !self.seq_len.is_multiple_of(8) {
            return Err(Error::arg(format!(
                "sequence length {} must be a positive multiple of 8",
                self.seq_len
            )));
        }
        let final_len = self.final_len();
        if self.k == 0 || !final_len.is_multiple_of(self.k) {
            return Err(Error::arg(format!(
                "final feature length {final_len} (= s / 8) must be divisible by k = {}",
                self.k
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::arg("embedding dimension must be at least 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::arg("vocabulary needs the padding row and at least one symbol"));
        }
        if self.n_classes == 0 {
            return Err(Error::arg("need at least one class"));
        }
        if self.family == Family::Vdcnn && self.fc_hidden == 0 {
            return Err(Error::arg("VDCNN hidden width must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<[usize; 4]> {
        depth_layout(self.depth)
    }

    /// Temporal length after the three halving pools.
    pub fn final_len(&self) -> usize {
        self.seq_len / 8
    }

    /// Width of the flattened classifier input, `512 · k`.
    pub fn head_inputs(&self) -> usize {
        LEVEL_CHANNELS[3] * self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layouts_sum_to_depth() {
        for d in DEPTHS {
            let l = depth_layout(d).unwrap();
            assert_eq!(l.iter().sum::<usize>() + 1, d);
            assert!(l.iter().all(|n| n % 2 == 0));
        }
        assert_eq!(depth_layout(29).unwrap(), [10, 10, 4, 4]);
        assert_eq!(depth_layout(49).unwrap(), [16, 16, 10, 6]);
        assert_eq!(2 * (2 + 2 + 2 + 2) + 1, 17);
        assert_eq!(depth_layout(17).unwrap(), [4, 4, 4, 4]);
    }

    #[test]
    fn unsupported_depth_lists_valid_ones() {
        let msg = depth_layout(13).unwrap_err().to_string();
        for d in ["9", "17", "29", "49"] {
            assert!(msg.contains(d), "{msg}");
        }
    }

    #[test]
    fn validation() {
        let ok = ArchitectureSpec::new(Family::Svdcnn, 9, 4);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.head_inputs(), 4096);
        assert!(ok.clone().with_seq_len(100).validate().is_err());
        assert!(ok.clone().with_seq_len(32).validate().is_err());
        assert!(ok.clone().with_seq_len(32).with_k(4).validate().is_ok());
        let mut bad = ok;
        bad.depth = 13;
        assert!(matches!(bad.validate(), Err(Error::UnsupportedDepth(13))));
    }

    #[test]
    fn family_parses() {
        assert_eq!("SVDCNN".parse::<Family>().unwrap(), Family::Svdcnn);
        assert!("charcnn".parse::<Family>().is_err());
    }
}
