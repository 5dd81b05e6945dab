//! Chunked little-endian cache file. See `docs/format.md`.

use std::fs;
use std::path::Path;

use super::{CacheHeader, CacheMode, IterEntry, IterMatrix, ProvenanceCache};
use crate::error::{Error, Result};
use crate::linalg::{packed_len, PackedSym};
use crate::linearizer::{CoeffData, InterpolationTable, LinearCoeffs};
use crate::model::{Hyperparams, ModelKind, StorageKind};

pub const MAGIC: &[u8; 4] = b"PRIU";
pub const FORMAT_VERSION: u16 = 1;

pub(crate) const HEADER_LEN: usize = 136;
pub(crate) const CHUNK_HEADER_LEN: usize = 16;

pub(crate) const KIND_MATRIX_PACKED: u8 = 1;
pub(crate) const KIND_MATRIX_FACTORS: u8 = 2;
pub(crate) const KIND_MOMENT: u8 = 3;
pub(crate) const KIND_SEGMENTS: u8 = 4;
pub(crate) const KIND_LOGITS: u8 = 5;
pub(crate) const KIND_FROZEN_SEGMENTS: u8 = 6;
pub(crate) const KIND_FROZEN_LOGITS: u8 = 7;
pub(crate) const KIND_W0: u8 = 8;
pub(crate) const KIND_TRAINED: u8 = 9;

const NO_TS: u64 = u64::MAX;

pub(crate) fn padded(len: usize) -> usize {
    len.div_ceil(8) * 8
}

struct Chunk {
    iteration: u32,
    kind: u8,
    payload: Vec<u8>,
}

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn u32_bytes(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn chunks_of(cache: &ProvenanceCache) -> Vec<Chunk> {
    let mut out = Vec::new();
    out.push(Chunk {
        iteration: 0,
        kind: KIND_W0,
        payload: f64_bytes(&cache.w0),
    });
    let b = cache.header.hp.batch_size;
    let q = cache.header.classes;
    for (t, e) in cache.iterations.iter().enumerate() {
        let t32 = t as u32;
        match &e.matrix {
            IterMatrix::Full(g) => out.push(Chunk {
                iteration: t32,
                kind: KIND_MATRIX_PACKED,
                payload: f64_bytes(g.packed()),
            }),
            IterMatrix::Factors { rank, p, v } => {
                let mut payload = (*rank as u64).to_le_bytes().to_vec();
                payload.extend(f64_bytes(p));
                payload.extend(f64_bytes(v));
                out.push(Chunk {
                    iteration: t32,
                    kind: KIND_MATRIX_FACTORS,
                    payload,
                });
            }
            IterMatrix::Absent => {}
        }
        out.push(Chunk {
            iteration: t32,
            kind: KIND_MOMENT,
            payload: f64_bytes(&e.moment),
        });
    }
    if let Some(c) = &cache.coeffs {
        for t in 0..cache.header.hp.iterations {
            let t32 = t as u32;
            match &c.data {
                CoeffData::Binary(segs) => out.push(Chunk {
                    iteration: t32,
                    kind: KIND_SEGMENTS,
                    payload: u32_bytes(&segs[t * b..(t + 1) * b]),
                }),
                CoeffData::Multinomial { logits, .. } => out.push(Chunk {
                    iteration: t32,
                    kind: KIND_LOGITS,
                    payload: f64_bytes(&logits[t * b * q..(t + 1) * b * q]),
                }),
            }
        }
    }
    if let Some(c) = &cache.frozen {
        let iteration = cache.header.t_s.unwrap_or(0) as u32;
        match &c.data {
            CoeffData::Binary(segs) => out.push(Chunk {
                iteration,
                kind: KIND_FROZEN_SEGMENTS,
                payload: u32_bytes(segs),
            }),
            CoeffData::Multinomial { logits, .. } => out.push(Chunk {
                iteration,
                kind: KIND_FROZEN_LOGITS,
                payload: f64_bytes(logits),
            }),
        }
    }
    out.push(Chunk {
        iteration: cache.header.hp.iterations as u32,
        kind: KIND_TRAINED,
        payload: f64_bytes(&cache.trained),
    });
    out
}

/// Serialises `cache` to bytes.
pub fn write_cache(cache: &ProvenanceCache) -> Vec<u8> {
    let chunks = chunks_of(cache);
    let h = &cache.header;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(h.mode.code());
    buf.push(h.hp.model_kind.code());
    buf.extend_from_slice(&h.fingerprint);
    for v in [h.n, h.m, h.classes] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&h.hp.eta.to_le_bytes());
    buf.extend_from_slice(&h.hp.lambda.to_le_bytes());
    buf.extend_from_slice(&(h.hp.batch_size as u64).to_le_bytes());
    buf.extend_from_slice(&(h.hp.iterations as u64).to_le_bytes());
    buf.extend_from_slice(&h.hp.seed.to_le_bytes());
    buf.extend_from_slice(&h.epsilon.to_le_bytes());
    buf.extend_from_slice(&h.t_s.map_or(NO_TS, |t| t as u64).to_le_bytes());
    buf.extend_from_slice(&h.table.a_bound().to_le_bytes());
    buf.extend_from_slice(&(h.table.segments() as u64).to_le_bytes());
    let storage: u64 = match h.storage {
        StorageKind::Dense => 0,
        StorageKind::Sparse => 1,
    };
    buf.extend_from_slice(&storage.to_le_bytes());
    buf.extend_from_slice(&(chunks.len() as u64).to_le_bytes());
    debug_assert_eq!(buf.len(), HEADER_LEN);
    for c in chunks {
        buf.extend_from_slice(&c.iteration.to_le_bytes());
        buf.push(c.kind);
        buf.extend_from_slice(&[0, 0, 0]);
        buf.extend_from_slice(&(c.payload.len() as u64).to_le_bytes());
        let len = c.payload.len();
        buf.extend(c.payload);
        buf.resize(buf.len() + padded(len) - len, 0);
    }
    buf
}

pub fn save_cache(cache: &ProvenanceCache, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_cache(cache))?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<ProvenanceCache> {
    read_cache(&fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Truncated(format!(
                "{what} needs {len} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Format(format!("{what} does not fit in memory")))
    }
}

fn read_f64s(bytes: &[u8], expect: usize, what: &str) -> Result<Vec<f64>> {
    if bytes.len() != expect * 8 {
        return Err(Error::Format(format!("{what}: {} bytes, expected {}", bytes.len(), expect * 8)));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_u32s(bytes: &[u8], expect: usize, what: &str) -> Result<Vec<u32>> {
    if bytes.len() != expect * 4 {
        return Err(Error::Format(format!("{what}: {} bytes, expected {}", bytes.len(), expect * 4)));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Parses a cache from bytes.
pub fn read_cache(buf: &[u8]) -> Result<ProvenanceCache> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mode = CacheMode::from_code(r.take(1, "mode")?[0])?;
    let kind_code = r.take(1, "model kind")?[0];
    let fingerprint: [u8; 16] = r.take(16, "fingerprint")?.try_into().unwrap();
    let n = r.usize("n")?;
    let m = r.usize("m")?;
    let classes = r.usize("classes")?;
    let kind = ModelKind::from_code(kind_code, classes)?;
    let hp = Hyperparams {
        eta: r.f64("eta")?,
        lambda: r.f64("lambda")?,
        batch_size: r.usize("batch size")?,
        iterations: r.usize("iterations")?,
        seed: r.u64("seed")?,
        model_kind: kind,
    };
    let epsilon = r.f64("epsilon")?;
    let t_s = match r.u64("t_s")? {
        NO_TS => None,
        t => Some(t as usize),
    };
    let a_bound = r.f64("interpolation bound")?;
    let segments = u32::try_from(r.u64("segments")?).map_err(|_| Error::Format("segment count overflow".into()))?;
    let table = InterpolationTable::new(a_bound, segments).map_err(|e| Error::Format(e.to_string()))?;
    let storage = match r.u64("storage")? {
        0 => StorageKind::Dense,
        1 => StorageKind::Sparse,
        s => return Err(Error::Format(format!("unknown storage kind {s}"))),
    };
    let chunk_count = r.usize("chunk count")?;
    hp.validate(n).map_err(|e| Error::Format(format!("header hyperparameters: {e}")))?;
    if kind.classes() != classes {
        return Err(Error::Format("class count disagrees with model kind".into()));
    }

    let d = kind.param_dim(m);
    let tau = hp.iterations;
    let b = hp.batch_size;
    let mut matrices: Vec<Option<IterMatrix>> = vec![None; tau];
    let mut moments: Vec<Option<Vec<f64>>> = vec![None; tau];
    let mut segs: Vec<Option<Vec<u32>>> = vec![None; tau];
    let mut logits: Vec<Option<Vec<f64>>> = vec![None; tau];
    let mut frozen = None;
    let mut w0 = None;
    let mut trained = None;

    for _ in 0..chunk_count {
        let iteration = u32::from_le_bytes(r.take(4, "chunk iteration")?.try_into().unwrap()) as usize;
        let ckind = r.take(4, "chunk kind")?[0];
        let len = r.usize("chunk length")?;
        let payload = r.take(len, "chunk payload")?;
        r.take(padded(len) - len, "chunk padding")?;
        let per_iter = matches!(
            ckind,
            KIND_MATRIX_PACKED | KIND_MATRIX_FACTORS | KIND_MOMENT | KIND_SEGMENTS | KIND_LOGITS
        );
        if per_iter && iteration >= tau {
            return Err(Error::Format(format!("chunk for iteration {iteration} beyond {tau}")));
        }
        match ckind {
            KIND_MATRIX_PACKED => {
                let data = read_f64s(payload, packed_len(d), "packed matrix")?;
                matrices[iteration] = Some(IterMatrix::Full(PackedSym::from_packed(d, data)?));
            }
            KIND_MATRIX_FACTORS => {
                if payload.len() < 8 {
                    return Err(Error::Format("factor chunk without rank".into()));
                }
                let rank = u64::from_le_bytes(payload[..8].try_into().unwrap()) as usize;
                if rank > d {
                    return Err(Error::Format(format!("rank {rank} exceeds dimension {d}")));
                }
                let both = read_f64s(&payload[8..], 2 * d * rank, "factors")?;
                let (p, v) = both.split_at(d * rank);
                matrices[iteration] = Some(IterMatrix::Factors {
                    rank,
                    p: p.to_vec(),
                    v: v.to_vec(),
                });
            }
            KIND_MOMENT => moments[iteration] = Some(read_f64s(payload, d, "moment")?),
            KIND_SEGMENTS => segs[iteration] = Some(read_u32s(payload, b, "segments")?),
            KIND_LOGITS => logits[iteration] = Some(read_f64s(payload, b * classes, "logits")?),
            KIND_FROZEN_SEGMENTS => {
                frozen = Some(CoeffData::Binary(read_u32s(payload, n, "frozen segments")?));
            }
            KIND_FROZEN_LOGITS => {
                frozen = Some(CoeffData::Multinomial {
                    classes,
                    logits: read_f64s(payload, n * classes, "frozen logits")?,
                });
            }
            KIND_W0 => w0 = Some(read_f64s(payload, d, "w0")?),
            KIND_TRAINED => trained = Some(read_f64s(payload, d, "trained parameters")?),
            other => return Err(Error::Format(format!("unknown chunk kind {other}"))),
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    let missing = |what: &str| Error::CacheCorrupt(what.to_string());
    let iterations = if mode == CacheMode::SparseLinearized {
        Vec::new()
    } else {
        matrices
            .into_iter()
            .zip(moments)
            .enumerate()
            .map(|(t, (mx, mo))| {
                let matrix = mx.ok_or_else(|| missing(&format!("matrix of iteration {t}")))?;
                let ok = matches!(
                    (&matrix, mode),
                    (IterMatrix::Full(_), CacheMode::DenseFull) | (IterMatrix::Factors { .. }, CacheMode::DenseSvd)
                );
                if !ok {
                    return Err(Error::Format(format!("matrix of iteration {t} does not match the cache mode")));
                }
                Ok(IterEntry {
                    matrix,
                    moment: mo.ok_or_else(|| missing(&format!("moment of iteration {t}")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let coeffs = match kind {
        ModelKind::Linear => None,
        ModelKind::BinaryLogistic => {
            let mut all = Vec::with_capacity(tau * b);
            for (t, s) in segs.into_iter().enumerate() {
                all.extend(s.ok_or_else(|| missing(&format!("coefficients of iteration {t}")))?);
            }
            Some(LinearCoeffs {
                data: CoeffData::Binary(all),
            })
        }
        ModelKind::MultinomialLogistic { .. } => {
            let mut all = Vec::with_capacity(tau * b * classes);
            for (t, s) in logits.into_iter().enumerate() {
                all.extend(s.ok_or_else(|| missing(&format!("coefficients of iteration {t}")))?);
            }
            Some(LinearCoeffs {
                data: CoeffData::Multinomial { classes, logits: all },
            })
        }
    };
    let frozen = match (t_s, frozen) {
        (None, None) => None,
        (Some(_), Some(data)) => {
            let ok = matches!(
                (&data, kind),
                (CoeffData::Binary(_), ModelKind::BinaryLogistic)
                    | (CoeffData::Multinomial { .. }, ModelKind::MultinomialLogistic { .. })
            );
            if !ok {
                return Err(Error::Format("frozen coefficients do not match the model kind".into()));
            }
            Some(LinearCoeffs { data })
        }
        (Some(_), None) => return Err(missing("frozen coefficients")),
        (None, Some(_)) => return Err(Error::Format("frozen coefficients without an early-stop iteration".into())),
    };
    Ok(ProvenanceCache {
        header: CacheHeader {
            fingerprint,
            n,
            m,
            classes,
            storage,
            hp,
            mode,
            epsilon,
            t_s,
            table,
        },
        w0: w0.ok_or_else(|| missing("initial parameters"))?,
        trained: trained.ok_or_else(|| missing("trained parameters"))?,
        iterations,
        coeffs,
        frozen,
    })
}
