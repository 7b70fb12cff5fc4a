use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Which partition an utterance belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One paired sample: synthetic audio frames, the token transcript, and the
/// intent label.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: usize,
    pub frames: Matrix,
    pub tokens: Vec<usize>,
    pub intent: usize,
    pub split: Split,
}

/// A corpus of utterances with its intent vocabulary, partitioned into seen
/// intents (train/dev/test) and unseen intents (test only).
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub vocab_size: usize,
    pub d_raw: usize,
}

impl Corpus {
    pub fn split(&self, s: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == s).collect()
    }

    /// Utterances of a split restricted to the given intent set.
    pub fn split_of(&self, s: Split, intents: &[usize]) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.split == s && intents.contains(&u.intent))
            .collect()
    }

    /// Seen and unseen intents, sorted.
    pub fn intent_vocab(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.seen.iter().chain(&self.unseen).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn by_id(&self, id: usize) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Writes the text listing and the binary frames sidecar. The listing is
    /// one utterance per line (id, split, intent, tokens, frame reference);
    /// frames are little-endian f64, referenced by byte offset and row count.
    pub fn save(&self, text_path: &Path, frames_path: &Path) -> Result<()> {
        let mut text = BufWriter::new(fs::File::create(text_path)?);
        let mut blob = BufWriter::new(fs::File::create(frames_path)?);
        let seen = join_ids(&self.seen);
        let unseen = join_ids(&self.unseen);
        writeln!(
            text,
            "ZINTENT-CORPUS v1 d_raw={} vocab={} seen={seen} unseen={unseen}",
            self.d_raw, self.vocab_size
        )?;
        let mut offset: u64 = 0;
        for u in &self.utterances {
            let tokens = join_ids(&u.tokens);
            writeln!(
                text,
                "{}\t{}\t{}\t{}\t{}:{}",
                u.id,
                u.split.as_str(),
                u.intent,
                tokens,
                offset,
                u.frames.rows()
            )?;
            for v in u.frames.data() {
                blob.write_all(&v.to_le_bytes())?;
            }
            offset += (u.frames.rows() * u.frames.cols() * 8) as u64;
        }
        text.flush()?;
        blob.flush()?;
        Ok(())
    }

    pub fn load(text_path: &Path, frames_path: &Path) -> Result<Corpus> {
        let path = text_path.display().to_string();
        let text = fs::read_to_string(text_path)
            .map_err(|e| Error::format(&path, format!("cannot read: {e}")))?;
        let blob = fs::read(frames_path)
            .map_err(|e| Error::format(frames_path.display().to_string(), format!("cannot read: {e}")))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(&path, "empty file"))?;
        let (d_raw, vocab_size, seen, unseen) = parse_header(header, &path)?;

        let mut utterances = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |d: String| Error::format(&path, format!("line {}: {d}", lineno + 2));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 tab-separated fields, got {}", fields.len())));
            }
            let id: usize = fields[0].parse().map_err(|_| err(format!("bad id {:?}", fields[0])))?;
            let split = Split::parse(fields[1])
                .ok_or_else(|| err(format!("bad split {:?}", fields[1])))?;
            let intent: usize =
                fields[2].parse().map_err(|_| err(format!("bad intent {:?}", fields[2])))?;
            let tokens = parse_ids(fields[3]).map_err(|d| err(d))?;
            let (offset, rows) = fields[4]
                .split_once(':')
                .ok_or_else(|| err(format!("bad frame reference {:?}", fields[4])))?;
            let offset: usize =
                offset.parse().map_err(|_| err(format!("bad frame offset {:?}", offset)))?;
            let rows: usize = rows.parse().map_err(|_| err(format!("bad frame count {:?}", rows)))?;
            let nbytes = rows * d_raw * 8;
            let end = offset + nbytes;
            if end > blob.len() {
                return Err(err(format!("frame reference {offset}:{rows} exceeds blob size {}", blob.len())));
            }
            let mut data = Vec::with_capacity(rows * d_raw);
            for chunk in blob[offset..end].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            let frames = Matrix::from_vec(rows, d_raw, data)?;
            utterances.push(Utterance { id, frames, tokens, intent, split });
        }
        Ok(Corpus { utterances, seen, unseen, vocab_size, d_raw })
    }
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_ids(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad id list entry {t:?}")))
        .collect()
}

fn parse_header(header: &str, path: &str) -> Result<(usize, usize, Vec<usize>, Vec<usize>)> {
    let mut parts = header.split_whitespace();
    let magic = parts.next().unwrap_or("");
    let version = parts.next().unwrap_or("");
    if magic != "ZINTENT-CORPUS" || version != "v1" {
        return Err(Error::format(path, format!("expected 'ZINTENT-CORPUS v1' header, got {header:?}")));
    }
    let mut d_raw = None;
    let mut vocab = None;
    let mut seen = None;
    let mut unseen = None;
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("bad header field {part:?}")))?;
        match key {
            "d_raw" => d_raw = Some(value.parse::<usize>().map_err(|_| Error::format(path, format!("bad d_raw {value:?}")))?),
            "vocab" => vocab = Some(value.parse::<usize>().map_err(|_| Error::format(path, format!("bad vocab {value:?}")))?),
            "seen" => seen = Some(parse_ids(value).map_err(|d| Error::format(path, d))?),
            "unseen" => unseen = Some(parse_ids(value).map_err(|d| Error::format(path, d))?),
            _ => return Err(Error::format(path, format!("unknown header field {key:?}"))),
        }
    }
    match (d_raw, vocab, seen, unseen) {
        (Some(d), Some(v), Some(s), Some(u)) => Ok((d, v, s, u)),
        _ => Err(Error::format(path, "header missing one of d_raw/vocab/seen/unseen")),
    }
}
