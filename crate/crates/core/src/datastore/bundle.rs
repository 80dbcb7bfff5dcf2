//! Multi-sample bundle files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LBDS"
//! 4       4     version (u32, = 1)
//! 8       4     sample_count (u32)
//! 12      28    ModalityDims as 7 × u32: input, latent, scalar, views,
//!               channels, height, width
//! 40      ...   sample_count records, each (input, scalars, images) as
//!               little-endian f32, stride = 4 × record_len bytes
//! ```
//!
//! Records keep generation order; sample ids are global positions across
//! files taken in file-name order.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::surrogate::ModalityDims;
use crate::synthdata::SampleRecord;

pub const MAGIC: &[u8; 4] = b"LBDS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;
pub const EXTENSION: &str = "lbds";

pub type SampleId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleHeader {
    pub version: u32,
    pub sample_count: u32,
    pub dims: ModalityDims,
}

impl BundleHeader {
    pub fn stride(&self) -> usize {
        self.dims.record_len() * 4
    }

    pub fn file_len(&self) -> u64 {
        (HEADER_LEN + self.sample_count as usize * self.stride()) as u64
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(MAGIC);
        h[4..8].copy_from_slice(&self.version.to_le_bytes());
        h[8..12].copy_from_slice(&self.sample_count.to_le_bytes());
        for (i, v) in self.dims.to_u32s().iter().enumerate() {
            h[12 + 4 * i..16 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        h
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptBundle {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let mut d = [0u32; 7];
        for (i, v) in d.iter_mut().enumerate() {
            *v = u32_at(12 + 4 * i);
        }
        let dims = ModalityDims::from_u32s(d);
        dims.validate()
            .map_err(|_| corrupt("zero dimension in header"))?;
        Ok(Self {
            version,
            sample_count: u32_at(8),
            dims,
        })
    }
}

pub(crate) fn encode_record(r: &SampleRecord, out: &mut Vec<u8>) {
    for v in r.input.iter().chain(&r.scalars).chain(&r.images) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn decode_record(bytes: &[u8], dims: &ModalityDims) -> SampleRecord {
    let mut vals = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let input = vals.by_ref().take(dims.input_dim).collect();
    let scalars = vals.by_ref().take(dims.scalar_dim).collect();
    let images = vals.collect();
    SampleRecord {
        input,
        scalars,
        images,
    }
}

pub fn bundle_file_name(index: usize) -> String {
    format!("bundle_{index:05}.{EXTENSION}")
}

/// Writes `records` in order into `ceil(n / samples_per_file)` bundle files.
///
/// Each file is written under a temporary name and renamed into place, so a
/// failed run never leaves a header-valid partial bundle behind.
pub fn write_bundles<R: AsRef<SampleRecord>>(
    records: &[R],
    dims: &ModalityDims,
    samples_per_file: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if samples_per_file == 0 {
        return Err(Error::Contract("samples_per_file must be >= 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    for (i, chunk) in records.chunks(samples_per_file).enumerate() {
        let path = out_dir.join(bundle_file_name(i));
        let tmp = out_dir.join(format!(".{}.tmp", bundle_file_name(i)));
        let buf = encode_bundle(chunk, dims)?;
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(&buf)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            fs::rename(&tmp, &path)
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            return Err(Error::io(&path, e));
        }
        paths.push(path);
    }
    Ok(paths)
}

/// The bytes of one bundle file holding `records`.
pub fn encode_bundle<R: AsRef<SampleRecord>>(
    records: &[R],
    dims: &ModalityDims,
) -> Result<Vec<u8>> {
    let header = BundleHeader {
        version: VERSION,
        sample_count: records.len() as u32,
        dims: *dims,
    };
    let mut buf = Vec::with_capacity(header.file_len() as usize);
    buf.extend_from_slice(&header.encode());
    for r in records {
        let r = r.as_ref();
        r.check_dims(dims)?;
        encode_record(r, &mut buf);
    }
    Ok(buf)
}

pub fn read_header(path: &Path) -> Result<BundleHeader> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = [0u8; HEADER_LEN];
    f.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    BundleHeader::decode(&buf, path)
}

/// Reads every record of one bundle.
pub fn read_bundle(path: &Path) -> Result<(BundleHeader, Vec<SampleRecord>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes, path)
}

fn decode_bundle(bytes: &[u8], path: &Path) -> Result<(BundleHeader, Vec<SampleRecord>)> {
    let header = BundleHeader::decode(bytes, path)?;
    check_len(&header, bytes.len() as u64, path)?;
    let records = bytes[HEADER_LEN..]
        .chunks_exact(header.stride())
        .map(|c| decode_record(c, &header.dims))
        .collect();
    Ok((header, records))
}

fn check_len(header: &BundleHeader, actual: u64, path: &Path) -> Result<()> {
    if actual != header.file_len() {
        return Err(Error::CorruptBundle {
            path: path.to_path_buf(),
            reason: format!(
                "payload length {} does not match {} records of {} bytes",
                actual.saturating_sub(HEADER_LEN as u64),
                header.sample_count,
                header.stride()
            ),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BundleEntry {
    pub path: PathBuf,
    pub first_id: SampleId,
    pub count: u32,
    /// File contents for catalogs held in memory.
    bytes: Option<Arc<[u8]>>,
}

/// Index of a directory of bundles: which file holds which sample ids.
#[derive(Debug, Clone)]
pub struct BundleCatalog {
    dims: ModalityDims,
    files: Vec<BundleEntry>,
    total: u32,
}

impl BundleCatalog {
    /// Scans `dir` for bundle files (sorted by name) and reads their headers.
    pub fn open(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
            .collect();
        paths.sort();
        Self::from_paths(&paths)
    }

    pub fn from_paths(paths: &[PathBuf]) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Contract("no bundle files".into()));
        }
        let mut files = Vec::with_capacity(paths.len());
        let mut dims = None;
        let mut next = 0u32;
        for p in paths {
            let h = read_header(p)?;
            let len = fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            check_len(&h, len, p)?;
            match dims {
                None => dims = Some(h.dims),
                Some(d) if d != h.dims => {
                    return Err(Error::CorruptBundle {
                        path: p.clone(),
                        reason: "dims differ from the first bundle".into(),
                    })
                }
                _ => {}
            }
            files.push(BundleEntry {
                path: p.clone(),
                first_id: next,
                count: h.sample_count,
                bytes: None,
            });
            next += h.sample_count;
        }
        Ok(Self {
            dims: dims.unwrap(),
            files,
            total: next,
        })
    }

    /// A catalog over bundles kept in memory rather than on disk, split as
    /// `write_bundles` would split them. Reads behave (and are counted) as
    /// file reads.
    pub fn from_records<R: AsRef<SampleRecord>>(
        records: &[R],
        dims: &ModalityDims,
        samples_per_file: usize,
    ) -> Result<Self> {
        if samples_per_file == 0 {
            return Err(Error::Contract("samples_per_file must be >= 1".into()));
        }
        if records.is_empty() {
            return Err(Error::Contract("no records".into()));
        }
        dims.validate()?;
        let mut files = Vec::new();
        let mut next = 0u32;
        for (i, chunk) in records.chunks(samples_per_file).enumerate() {
            files.push(BundleEntry {
                path: PathBuf::from(format!("memory:{}", bundle_file_name(i))),
                first_id: next,
                count: chunk.len() as u32,
                bytes: Some(encode_bundle(chunk, dims)?.into()),
            });
            next += chunk.len() as u32;
        }
        Ok(Self {
            dims: *dims,
            files,
            total: next,
        })
    }

    pub fn dims(&self) -> &ModalityDims {
        &self.dims
    }

    /// Size in bytes of bundle `file`.
    pub fn file_len(&self, file: usize) -> u64 {
        HEADER_LEN as u64 + self.files[file].count as u64 * self.stride() as u64
    }

    pub fn files(&self) -> &[BundleEntry] {
        &self.files
    }

    pub fn len(&self) -> usize {
        self.total as usize
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> {
        0..self.total
    }

    pub fn stride(&self) -> usize {
        self.dims.record_len() * 4
    }

    /// File index and in-file position of a sample.
    pub fn locate(&self, id: SampleId) -> Result<(usize, usize)> {
        if id >= self.total {
            return Err(Error::Contract(format!(
                "sample {id} outside dataset of {}",
                self.total
            )));
        }
        let f = self.files.partition_point(|e| e.first_id <= id) - 1;
        Ok((f, (id - self.files[f].first_id) as usize))
    }

    /// Opens one file and reads a single record.
    pub fn read_one(&self, id: SampleId) -> Result<(usize, SampleRecord)> {
        let (f, pos) = self.locate(id)?;
        let stride = self.stride();
        if let Some(bytes) = &self.files[f].bytes {
            let at = HEADER_LEN + pos * stride;
            return Ok((f, decode_record(&bytes[at..at + stride], &self.dims)));
        }
        let path = &self.files[f].path;
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = vec![0u8; stride];
        file.seek(SeekFrom::Start((HEADER_LEN + pos * stride) as u64))
            .and_then(|_| file.read_exact(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Ok((f, decode_record(&buf, &self.dims)))
    }

    /// Reads a whole file, returning `(first_id, records)`.
    pub fn read_file(&self, file: usize) -> Result<(SampleId, Vec<SampleRecord>)> {
        let e = &self.files[file];
        let (h, recs) = match &e.bytes {
            Some(b) => decode_bundle(b, &e.path)?,
            None => read_bundle(&e.path)?,
        };
        if h.dims != self.dims || h.sample_count != e.count {
            return Err(Error::CorruptBundle {
                path: e.path.clone(),
                reason: "bundle changed since the catalog was built".into(),
            });
        }
        Ok((e.first_id, recs))
    }

    /// Reads the given samples directly, opening each needed file once.
    /// Used for held-out slices that bypass the data store.
    pub fn read_samples(&self, ids: &[SampleId]) -> Result<Vec<SampleRecord>> {
        let mut by_file: std::collections::BTreeMap<usize, Vec<(usize, usize)>> =
            Default::default();
        for (k, &id) in ids.iter().enumerate() {
            let (f, pos) = self.locate(id)?;
            by_file.entry(f).or_default().push((k, pos));
        }
        let mut out: Vec<Option<SampleRecord>> = vec![None; ids.len()];
        for (f, wanted) in by_file {
            let (_, recs) = self.read_file(f)?;
            for (k, pos) in wanted {
                out[k] = Some(recs[pos].clone());
            }
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }
}
