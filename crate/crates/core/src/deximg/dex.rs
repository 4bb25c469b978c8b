use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 112;

/// `(size field offset, offset field offset, item width, name)` for the
/// identifier and class-definition tables.
const ID_TABLES: [(usize, usize, usize, &str); 6] = [
    (56, 60, 4, "string_ids"),
    (64, 68, 4, "type_ids"),
    (72, 76, 12, "proto_ids"),
    (80, 84, 8, "field_ids"),
    (88, 92, 8, "method_ids"),
    (96, 100, 32, "class_defs"),
];

const FILE_SIZE_AT: usize = 32;
const DATA_SIZE_AT: usize = 104;
const DATA_OFF_AT: usize = 108;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end()
    }
}

/// Section boundaries of one DEX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DexLayout {
    pub header: Span,
    /// From the end of the header up to `data_off`: string_ids through
    /// class_defs plus any unclaimed gap before them.
    pub ids: Span,
    pub data: Span,
    /// Bytes between the data region and `file_size` (e.g. a link section).
    pub trailing: Span,
    pub file_size: usize,
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
}

fn write_u32(bytes: &mut [u8], at: usize, v: usize) {
    bytes[at..at + 4].copy_from_slice(&(v as u32).to_le_bytes());
}

fn corrupt(field: &'static str, detail: impl Into<String>) -> Error {
    Error::CorruptLayout {
        field,
        detail: detail.into(),
    }
}

fn check_magic(bytes: &[u8]) -> Result<()> {
    let m = &bytes[..8];
    let ok = &m[..5] == b"dex\n0" && m[5].is_ascii_digit() && m[6].is_ascii_digit() && m[7] == 0;
    if ok {
        Ok(())
    } else {
        Err(Error::Format(format!("bad DEX magic {:02x?}", m)))
    }
}

pub fn parse_dex(bytes: &[u8]) -> Result<DexLayout> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "DEX input of {} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    check_magic(bytes)?;
    let file_size = read_u32(bytes, FILE_SIZE_AT);
    if file_size > bytes.len() {
        return Err(corrupt(
            "file_size",
            format!("declares {file_size} bytes but input has {}", bytes.len()),
        ));
    }
    if file_size < HEADER_LEN {
        return Err(corrupt("file_size", format!("{file_size} is smaller than the header")));
    }
    let data_size = read_u32(bytes, DATA_SIZE_AT);
    let data_off = read_u32(bytes, DATA_OFF_AT);

    let mut regions: Vec<(Range<usize>, &'static str)> = Vec::new();
    for (size_at, off_at, width, name) in ID_TABLES {
        let count = read_u32(bytes, size_at);
        if count == 0 {
            continue;
        }
        let off = read_u32(bytes, off_at);
        let end = off
            .checked_add(count * width)
            .ok_or_else(|| corrupt(name, "region end overflows"))?;
        if off < HEADER_LEN {
            return Err(corrupt(name, format!("offset {off} lies inside the header")));
        }
        if end > file_size {
            return Err(corrupt(name, format!("region [{off},{end}) exceeds file_size {file_size}")));
        }
        regions.push((off..end, name));
    }
    regions.sort_by_key(|(r, _)| r.start);
    for w in regions.windows(2) {
        if w[1].0.start < w[0].0.end {
            return Err(corrupt(
                w[1].1,
                format!("region {:?} overlaps {} {:?}", w[1].0, w[0].1, w[0].0),
            ));
        }
    }
    let ids_end = regions.last().map_or(HEADER_LEN, |(r, _)| r.end);

    // An absent data section (size 0, offset 0) starts where the ids end.
    let data_start = if data_size == 0 && data_off == 0 { ids_end } else { data_off };
    if data_start < ids_end {
        return Err(corrupt(
            "data_off",
            format!("{data_start} lies before the end of the id tables ({ids_end})"),
        ));
    }
    if data_start > file_size {
        return Err(corrupt("data_off", format!("{data_start} exceeds file_size {file_size}")));
    }
    if data_start + data_size > file_size {
        return Err(corrupt(
            "data_size",
            format!("data [{data_start},{}) exceeds file_size {file_size}", data_start + data_size),
        ));
    }
    let data_end = data_start + data_size;
    Ok(DexLayout {
        header: Span { start: 0, len: HEADER_LEN },
        ids: Span {
            start: HEADER_LEN,
            len: data_start - HEADER_LEN,
        },
        data: Span {
            start: data_start,
            len: data_size,
        },
        trailing: Span {
            start: data_end,
            len: file_size - data_end,
        },
        file_size,
    })
}

/// Section payloads, already concatenated kind-wise for multidex inputs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DexSections {
    pub header: Vec<u8>,
    pub ids: Vec<u8>,
    pub data: Vec<u8>,
}

impl DexSections {
    pub fn total_len(&self) -> usize {
        self.header.len() + self.ids.len() + self.data.len()
    }

    /// Section payloads of one file; trailing bytes count as data.
    pub fn of(bytes: &[u8], layout: &DexLayout) -> Self {
        let mut data = bytes[layout.data.range()].to_vec();
        data.extend_from_slice(&bytes[layout.trailing.range()]);
        Self {
            header: bytes[layout.header.range()].to_vec(),
            ids: bytes[layout.ids.range()].to_vec(),
            data,
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        Ok(Self::of(bytes, &parse_dex(bytes)?))
    }

    /// Writes a single-file section triple back to DEX bytes, patching the
    /// size fields (`file_size`, `data_off`, `data_size`) and nothing else.
    pub fn to_dex_bytes(&self) -> Result<Vec<u8>> {
        if self.header.len() != HEADER_LEN {
            return Err(Error::Format(format!(
                "header must be {HEADER_LEN} bytes, got {}",
                self.header.len()
            )));
        }
        let mut out = Vec::with_capacity(self.total_len());
        out.extend_from_slice(&self.header);
        out.extend_from_slice(&self.ids);
        out.extend_from_slice(&self.data);
        let data_off = HEADER_LEN + self.ids.len();
        let len = out.len();
        write_u32(&mut out, FILE_SIZE_AT, len);
        write_u32(&mut out, DATA_SIZE_AT, self.data.len());
        write_u32(&mut out, DATA_OFF_AT, data_off);
        Ok(out)
    }
}

/// Concatenates headers, then ids, then data across files in order.
pub fn merge_multidex(files: &[DexSections]) -> Result<DexSections> {
    if files.is_empty() {
        return Err(Error::Ingestion("no DEX files to merge".into()));
    }
    let mut out = DexSections::default();
    for f in files {
        out.header.extend_from_slice(&f.header);
        out.ids.extend_from_slice(&f.ids);
        out.data.extend_from_slice(&f.data);
    }
    Ok(out)
}

/// Parses every file and merges them.
pub fn sections_of_files<B: AsRef<[u8]>>(files: &[B]) -> Result<DexSections> {
    let parsed = files
        .iter()
        .map(|b| DexSections::parse(b.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    merge_multidex(&parsed)
}

/// Sort key for `classes.dex`, `classes2.dex`, ...: the primary file first,
/// then numeric suffix order; other names after, lexicographically.
pub fn multidex_rank(name: &str) -> (usize, usize, String) {
    let stem = name.strip_suffix(".dex").unwrap_or(name);
    match stem.strip_prefix("classes") {
        Some("") => (0, 1, String::new()),
        Some(n) => match n.parse::<usize>() {
            Ok(k) => (0, k, String::new()),
            Err(_) => (1, 0, name.to_string()),
        },
        None => (1, 0, name.to_string()),
    }
}

/// Reads a `.dex` file, or every `*.dex` in a directory in multidex order.
pub fn read_dex_input(path: &Path) -> Result<Vec<Vec<u8>>> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "dex"))
            .collect();
        names.sort_by_key(|p| multidex_rank(&p.file_name().unwrap_or_default().to_string_lossy()));
        if names.is_empty() {
            return Err(Error::Ingestion(format!("no .dex files in {}", path.display())));
        }
        names.iter().map(|p| Ok(std::fs::read(p)?)).collect()
    } else {
        Ok(vec![std::fs::read(path)?])
    }
}

pub fn adler32(bytes: &[u8]) -> u32 {
    const MOD: u32 = 65521;
    let (mut a, mut b) = (1u32, 0u32);
    for chunk in bytes.chunks(5552) {
        for &x in chunk {
            a += x as u32;
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

/// Builds well-formed DEX bytes from table payloads; used for fixtures and
/// the synthetic corpus.
#[derive(Clone, Debug)]
pub struct DexBuilder {
    pub version: [u8; 3],
    /// One payload per id table, in on-disk order; each length must be a
    /// multiple of the table's item width.
    pub tables: [Vec<u8>; 6],
    pub data: Vec<u8>,
}

impl DexBuilder {
    pub fn new(data: Vec<u8>) -> Self {
        Self {
            version: *b"035",
            tables: Default::default(),
            data,
        }
    }

    pub fn with_table(mut self, index: usize, payload: Vec<u8>) -> Self {
        self.tables[index] = payload;
        self
    }

    pub fn build(&self) -> Result<Vec<u8>> {
        let mut out = vec![0u8; HEADER_LEN];
        out[..4].copy_from_slice(b"dex\n");
        out[4..7].copy_from_slice(&self.version);
        write_u32(&mut out, 36, HEADER_LEN);
        write_u32(&mut out, 40, 0x1234_5678);
        for ((size_at, off_at, width, name), payload) in ID_TABLES.iter().zip(&self.tables) {
            if payload.len() % width != 0 {
                return Err(Error::Parameter(format!(
                    "{name} payload length {} is not a multiple of {width}",
                    payload.len()
                )));
            }
            if !payload.is_empty() {
                let off = out.len();
                write_u32(&mut out, *size_at, payload.len() / width);
                write_u32(&mut out, *off_at, off);
                out.extend_from_slice(payload);
            }
        }
        let data_off = out.len();
        out.extend_from_slice(&self.data);
        let len = out.len();
        write_u32(&mut out, FILE_SIZE_AT, len);
        write_u32(&mut out, DATA_SIZE_AT, self.data.len());
        write_u32(&mut out, DATA_OFF_AT, if self.data.is_empty() { 0 } else { data_off });
        let sum = adler32(&out[12..]);
        out[8..12].copy_from_slice(&sum.to_le_bytes());
        Ok(out)
    }
}
