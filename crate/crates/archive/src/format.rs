//! Compacted partition format.
//!
//! `header.bin`, all integers big-endian:
//!
//! ```text
//! magic              4   "MMAR"
//! version            u16 1
//! codec              u8  1 = deflate
//! reserved           u8  0
//! record_count       u64 surviving records
//! raw_bytes          u64 size of the open log that was compacted
//! duplicates_removed u64
//! block_count        u32
//! block table        block_count x { offset u64, compressed_len u32,
//!                                    uncompressed_len u32, records u32,
//!                                    crc32 u32 of the compressed bytes }
//! header_crc         u32 CRC32 of every preceding header byte
//! ```
//!
//! `blocks.dat` is the concatenation of the compressed blocks. Each block
//! holds whole records as newline-terminated canonical JSON, at most
//! [`BLOCK_SIZE`] bytes before compression.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

pub const MAGIC: &[u8; 4] = b"MMAR";
pub const VERSION: u16 = 1;
pub const CODEC_DEFLATE: u8 = 1;
pub const BLOCK_SIZE: usize = 4 * 1024 * 1024;

const FIXED_LEN: usize = 4 + 2 + 1 + 1 + 8 + 8 + 8 + 4;
const ENTRY_LEN: usize = 8 + 4 + 4 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEntry {
    pub offset: u64,
    pub compressed_len: u32,
    pub uncompressed_len: u32,
    pub records: u32,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub codec: u8,
    pub record_count: u64,
    pub raw_bytes: u64,
    pub duplicates_removed: u64,
    pub blocks: Vec<BlockEntry>,
}

impl Header {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_LEN + self.blocks.len() * ENTRY_LEN + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_be_bytes());
        out.push(self.codec);
        out.push(0);
        out.extend_from_slice(&self.record_count.to_be_bytes());
        out.extend_from_slice(&self.raw_bytes.to_be_bytes());
        out.extend_from_slice(&self.duplicates_removed.to_be_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_be_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&b.offset.to_be_bytes());
            out.extend_from_slice(&b.compressed_len.to_be_bytes());
            out.extend_from_slice(&b.uncompressed_len.to_be_bytes());
            out.extend_from_slice(&b.records.to_be_bytes());
            out.extend_from_slice(&b.crc32.to_be_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Header, String> {
        if bytes.len() < FIXED_LEN + 4 {
            return Err("header too short".into());
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_be_bytes(crc.try_into().unwrap()) {
            return Err("header checksum mismatch".into());
        }
        if &body[..4] != MAGIC {
            return Err("bad magic".into());
        }
        let u16_at = |i: usize| u16::from_be_bytes(body[i..i + 2].try_into().unwrap());
        let u32_at = |i: usize| u32::from_be_bytes(body[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_be_bytes(body[i..i + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let codec = body[6];
        if codec != CODEC_DEFLATE {
            return Err(format!("unknown codec {codec}"));
        }
        let count = u32_at(32) as usize;
        if body.len() != FIXED_LEN + count * ENTRY_LEN {
            return Err("block table length mismatch".into());
        }
        let blocks = (0..count)
            .map(|i| {
                let at = FIXED_LEN + i * ENTRY_LEN;
                BlockEntry {
                    offset: u64_at(at),
                    compressed_len: u32_at(at + 8),
                    uncompressed_len: u32_at(at + 12),
                    records: u32_at(at + 16),
                    crc32: u32_at(at + 20),
                }
            })
            .collect();
        Ok(Header { codec, record_count: u64_at(8), raw_bytes: u64_at(16), duplicates_removed: u64_at(24), blocks })
    }
}

/// Packs newline-terminated records into compressed blocks.
pub fn build_blocks(records: &[Vec<u8>]) -> (Vec<u8>, Vec<BlockEntry>) {
    let mut data = Vec::new();
    let mut entries = Vec::new();
    let mut chunk: Vec<u8> = Vec::new();
    let mut in_chunk = 0u32;
    let mut flush = |chunk: &mut Vec<u8>, in_chunk: &mut u32, data: &mut Vec<u8>| {
        if chunk.is_empty() {
            return;
        }
        let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
        enc.write_all(chunk).expect("in-memory compression");
        let compressed = enc.finish().expect("in-memory compression");
        entries.push(BlockEntry {
            offset: data.len() as u64,
            compressed_len: compressed.len() as u32,
            uncompressed_len: chunk.len() as u32,
            records: *in_chunk,
            crc32: crc32fast::hash(&compressed),
        });
        data.extend_from_slice(&compressed);
        chunk.clear();
        *in_chunk = 0;
    };
    for r in records {
        if !chunk.is_empty() && chunk.len() + r.len() + 1 > BLOCK_SIZE {
            flush(&mut chunk, &mut in_chunk, &mut data);
        }
        chunk.extend_from_slice(r);
        chunk.push(b'\n');
        in_chunk += 1;
    }
    flush(&mut chunk, &mut in_chunk, &mut data);
    (data, entries)
}

/// Decompresses one block and splits it into records.
pub fn read_block(data: &[u8], entry: &BlockEntry) -> Result<Vec<Vec<u8>>, String> {
    let start = entry.offset as usize;
    let end = start + entry.compressed_len as usize;
    let compressed = data.get(start..end).ok_or("block extends past end of data")?;
    if crc32fast::hash(compressed) != entry.crc32 {
        return Err(format!("block at {start} fails its checksum"));
    }
    let mut raw = Vec::with_capacity(entry.uncompressed_len as usize);
    DeflateDecoder::new(compressed).read_to_end(&mut raw).map_err(|e| e.to_string())?;
    if raw.len() != entry.uncompressed_len as usize {
        return Err(format!("block at {start} decompressed to {} bytes, expected {}", raw.len(), entry.uncompressed_len));
    }
    let records: Vec<Vec<u8>> = raw.split(|b| *b == b'\n').filter(|r| !r.is_empty()).map(<[u8]>::to_vec).collect();
    if records.len() != entry.records as usize {
        return Err(format!("block at {start} holds {} records, expected {}", records.len(), entry.records));
    }
    Ok(records)
}
