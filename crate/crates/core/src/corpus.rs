//! Token-id corpora and their on-disk formats.
//!
//! Text: one sequence per line, whitespace-separated decimal ids; blank lines
//! are ignored. Binary: the magic `NGC1`, then for every sequence a `u32` length
//! followed by that many `u32` ids, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::TokenId;

pub const BINARY_MAGIC: &[u8; 4] = b"NGC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Text,
    Binary,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "binary" => Ok(Self::Binary),
            other => Err(Error::Format(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sequences: Vec<Vec<TokenId>>,
}

impl Corpus {
    pub fn new(sequences: Vec<Vec<TokenId>>) -> Self {
        Self { sequences }
    }

    pub fn num_tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_tokens() == 0
    }

    pub fn max_token(&self) -> Option<TokenId> {
        self.sequences.iter().flatten().copied().max()
    }

    /// Errors on the first token outside `[0, base)`.
    pub fn check_range(&self, base: u64) -> Result<()> {
        for (s, seq) in self.sequences.iter().enumerate() {
            if let Some((i, &t)) = seq.iter().enumerate().find(|(_, &t)| u64::from(t) >= base) {
                return Err(Error::Parse {
                    location: format!("sequence {}, position {}", s + 1, i),
                    message: format!("token {t} outside base vocabulary of size {base}"),
                });
            }
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut sequences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut seq = Vec::new();
            for field in line.split_whitespace() {
                let col = field.as_ptr() as usize - line.as_ptr() as usize + 1;
                let t = field.parse::<TokenId>().map_err(|e| Error::Parse {
                    location: format!("line {}, column {}", lineno + 1, col),
                    message: format!("invalid token {field:?}: {e}"),
                })?;
                seq.push(t);
            }
            if !seq.is_empty() {
                sequences.push(seq);
            }
        }
        let corpus = Self { sequences };
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(corpus)
    }

    pub fn parse_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != BINARY_MAGIC {
            return Err(Error::Parse {
                location: "byte offset 0".into(),
                message: "missing NGC1 magic".into(),
            });
        }
        let mut sequences = Vec::new();
        let mut off = 4;
        let word = |off: usize| -> Result<u32> {
            bytes.get(off..off + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).ok_or_else(
                || Error::Parse {
                    location: format!("byte offset {off}"),
                    message: "truncated input".into(),
                },
            )
        };
        while off < bytes.len() {
            let len = word(off)? as usize;
            off += 4;
            if bytes.len() - off < len * 4 {
                return Err(Error::Parse {
                    location: format!("byte offset {}", off - 4),
                    message: format!("sequence declares {len} tokens but input is truncated"),
                });
            }
            let seq = (0..len).map(|i| word(off + 4 * i)).collect::<Result<Vec<_>>>()?;
            off += 4 * len;
            if !seq.is_empty() {
                sequences.push(seq);
            }
        }
        let corpus = Self { sequences };
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(corpus)
    }

    pub fn parse(bytes: &[u8], format: CorpusFormat) -> Result<Self> {
        match format {
            CorpusFormat::Binary => Self::parse_binary(bytes),
            CorpusFormat::Text => {
                let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
                    location: format!("byte offset {}", e.valid_up_to()),
                    message: "corpus is not valid UTF-8".into(),
                })?;
                Self::parse_text(text)
            }
        }
    }

    /// Guesses the format from the magic bytes.
    pub fn detect_format(bytes: &[u8]) -> CorpusFormat {
        if bytes.starts_with(BINARY_MAGIC) {
            CorpusFormat::Binary
        } else {
            CorpusFormat::Text
        }
    }

    pub fn read(path: &Path, format: Option<CorpusFormat>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let format = format.unwrap_or_else(|| Self::detect_format(&bytes));
        Self::parse(&bytes, format)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for seq in &self.sequences {
            let mut first = true;
            for t in seq {
                if !first {
                    w.write_all(b" ")?;
                }
                write!(w, "{t}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for seq in &self.sequences {
            let len = u32::try_from(seq.len())
                .map_err(|_| Error::Format("sequence longer than u32::MAX".into()))?;
            w.write_all(&len.to_le_bytes())?;
            for t in seq {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path, format: CorpusFormat) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match format {
            CorpusFormat::Text => self.write_text(file),
            CorpusFormat::Binary => self.write_binary(file),
        }
    }
}
