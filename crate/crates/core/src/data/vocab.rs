/// The 69 symbols of the dictionary, in index order starting at 1.
pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789-,;.!?:'\"/\\|_@#$%^&*~`+=<>()[]{} ";

/// Byte-to-index mapping with the padding symbol at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    table: [u8; 256],
    size: usize,
}

impl Vocabulary {
    pub const PADDING: usize = 0;

    /// Builds a vocabulary from distinct ASCII symbols. Symbol `i` gets index
    /// `i + 1`. Returns `None` on duplicates, non-ASCII or more than 255 symbols.
    pub fn from_symbols(symbols: &str) -> Option<Self> {
        let mut table = [0u8; 256];
        let bytes = symbols.as_bytes();
        if bytes.len() > 255 {
            return None;
        }
        for (i, &b) in bytes.iter().enumerate() {
            if !b.is_ascii() || table[b as usize] != 0 {
                return None;
            }
            table[b as usize] = (i + 1) as u8;
        }
        Some(Vocabulary {
            table,
            size: bytes.len() + 1,
        })
    }

    /// Number of rows an embedding table needs, padding included.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Index of a byte after ASCII lowercasing; unknown bytes map to padding.
    pub fn index(&self, byte: u8) -> u8 {
        self.table[byte.to_ascii_lowercase() as usize]
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::from_symbols(ALPHABET).expect("built-in alphabet is valid")
    }
}

/// Maps the first `s` bytes of `text` to indices, right-padding with 0.
pub fn quantize_bytes(text: &[u8], vocab: &Vocabulary, s: usize) -> Vec<u8> {
    let mut out: Vec<u8> = text.iter().take(s).map(|&b| vocab.index(b)).collect();
    out.resize(s, Vocabulary::PADDING as u8);
    out
}

pub fn quantize(text: &str, vocab: &Vocabulary, s: usize) -> Vec<usize> {
    quantize_bytes(text.as_bytes(), vocab, s)
        .into_iter()
        .map(usize::from)
        .collect()
}
