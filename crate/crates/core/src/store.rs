//! Geolocation spectrum database held by a private spectrum database server.
//!
//! Records are keyed by (grid cell, time window, band). The record body is
//! synthetic: no public source defines the incumbent database layout, so the
//! fields below are a plausible stand-in padded to the fixed 560-byte size.
//!
//! Record layout (big-endian):
//!
//! | offset | size | field                      |
//! |-------:|-----:|----------------------------|
//! | 0      | 4    | cell column                |
//! | 4      | 4    | cell row                   |
//! | 8      | 2    | time window                |
//! | 10     | 2    | band                       |
//! | 12     | 1    | availability flag (0 or 1) |
//! | 13     | 1    | incumbent class            |
//! | 14     | 2    | max EIRP, centi-dBm (i16)  |
//! | 16     | 8    | write timestamp (s)        |
//! | 24     | 4    | origin store id            |
//! | 28     | 532  | reserved, zero             |
//!
//! Store file: `SLAPSTOR`, version (u16), store id (u32), grid parameters,
//! then an append-log of records. Later entries for a key replace earlier ones.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RECORD_BYTES: usize = 560;
pub const QUERY_BYTES: usize = 16 + 8 + 2;
pub const STORE_MAGIC: &[u8; 8] = b"SLAPSTOR";
pub const STORE_VERSION: u16 = 1;
pub const DEFAULT_CELL_M: f64 = 100.0;
pub const DEFAULT_WINDOW_S: u64 = 900;
pub const DEFAULT_WINDOWS: u16 = 96;
const RESERVED_AT: usize = 28;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("({x}, {y}) is outside the covered region")]
    NoCoverage { x: f64, y: f64 },
    #[error("band {0} is not served")]
    UnknownBand(u16),
    #[error("submission rejected: {0}")]
    Rejected(&'static str),
    #[error("record encoding: {0}")]
    Encoding(String),
    #[error("store file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Region geometry and time/band discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_m: f64,
    pub cols: u32,
    pub rows: u32,
    pub window_s: u64,
    pub windows: u16,
    pub bands: Vec<u16>,
}

impl Region {
    pub fn square(cells: u32, bands: Vec<u16>) -> Self {
        Region {
            origin_x: 0.0,
            origin_y: 0.0,
            cell_m: DEFAULT_CELL_M,
            cols: cells,
            rows: cells,
            window_s: DEFAULT_WINDOW_S,
            windows: DEFAULT_WINDOWS,
            bands,
        }
    }

    pub fn cell(&self, x: f64, y: f64) -> Result<(u32, u32), StoreError> {
        let cx = ((x - self.origin_x) / self.cell_m).floor();
        let cy = ((y - self.origin_y) / self.cell_m).floor();
        if !(cx >= 0.0 && cy >= 0.0 && cx < self.cols as f64 && cy < self.rows as f64) {
            return Err(StoreError::NoCoverage { x, y });
        }
        Ok((cx as u32, cy as u32))
    }

    pub fn window(&self, ts: u64) -> u16 {
        ((ts / self.window_s) % self.windows as u64) as u16
    }

    pub fn key(&self, q: &Query) -> Result<RecordKey, StoreError> {
        if !self.bands.contains(&q.freq) {
            return Err(StoreError::UnknownBand(q.freq));
        }
        let (col, row) = self.cell(q.lx, q.ly)?;
        Ok(RecordKey {
            col,
            row,
            window: self.window(q.ts),
            band: q.freq,
        })
    }

    pub fn record_count(&self) -> usize {
        self.cols as usize * self.rows as usize * self.windows as usize * self.bands.len()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.origin_x.to_be_bytes());
        out.extend_from_slice(&self.origin_y.to_be_bytes());
        out.extend_from_slice(&self.cell_m.to_be_bytes());
        out.extend_from_slice(&self.cols.to_be_bytes());
        out.extend_from_slice(&self.rows.to_be_bytes());
        out.extend_from_slice(&self.window_s.to_be_bytes());
        out.extend_from_slice(&self.windows.to_be_bytes());
        out.extend_from_slice(&(self.bands.len() as u16).to_be_bytes());
        for b in &self.bands {
            out.extend_from_slice(&b.to_be_bytes());
        }
        out
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self, StoreError> {
        let f = |r: &mut R| -> io::Result<f64> { read_array(r).map(f64::from_be_bytes) };
        let origin_x = f(r)?;
        let origin_y = f(r)?;
        let cell_m = f(r)?;
        let cols = u32::from_be_bytes(read_array(r)?);
        let rows = u32::from_be_bytes(read_array(r)?);
        let window_s = u64::from_be_bytes(read_array(r)?);
        let windows = u16::from_be_bytes(read_array(r)?);
        let nb = u16::from_be_bytes(read_array(r)?);
        let bands = (0..nb)
            .map(|_| read_array(r).map(u16::from_be_bytes))
            .collect::<io::Result<Vec<_>>>()?;
        if !(cell_m > 0.0) || window_s == 0 || windows == 0 {
            return Err(StoreError::Format("degenerate grid parameters".into()));
        }
        Ok(Region {
            origin_x,
            origin_y,
            cell_m,
            cols,
            rows,
            window_s,
            windows,
            bands,
        })
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// ρ = ((l_x, l_y), TS, freq).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub lx: f64,
    pub ly: f64,
    pub ts: u64,
    pub freq: u16,
}

impl Query {
    pub fn to_bytes(&self) -> [u8; QUERY_BYTES] {
        let mut out = [0u8; QUERY_BYTES];
        out[..8].copy_from_slice(&self.lx.to_be_bytes());
        out[8..16].copy_from_slice(&self.ly.to_be_bytes());
        out[16..24].copy_from_slice(&self.ts.to_be_bytes());
        out[24..].copy_from_slice(&self.freq.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, StoreError> {
        if b.len() != QUERY_BYTES {
            return Err(StoreError::Encoding(format!("query length {}", b.len())));
        }
        Ok(Query {
            lx: f64::from_be_bytes(b[..8].try_into().unwrap()),
            ly: f64::from_be_bytes(b[8..16].try_into().unwrap()),
            ts: u64::from_be_bytes(b[16..24].try_into().unwrap()),
            freq: u16::from_be_bytes(b[24..].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub col: u32,
    pub row: u32,
    pub window: u16,
    pub band: u16,
}

/// β.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub key: RecordKey,
    pub available: bool,
    pub incumbent_class: u8,
    pub max_eirp_cdbm: i16,
    pub written_at: u64,
    pub origin: u32,
}

impl SpectrumRecord {
    /// Returned for in-region keys never written.
    pub fn unknown(key: RecordKey) -> Self {
        SpectrumRecord {
            key,
            available: false,
            incumbent_class: 0,
            max_eirp_cdbm: 0,
            written_at: 0,
            origin: 0,
        }
    }

    pub fn to_bytes(&self) -> [u8; RECORD_BYTES] {
        let mut out = [0u8; RECORD_BYTES];
        out[0..4].copy_from_slice(&self.key.col.to_be_bytes());
        out[4..8].copy_from_slice(&self.key.row.to_be_bytes());
        out[8..10].copy_from_slice(&self.key.window.to_be_bytes());
        out[10..12].copy_from_slice(&self.key.band.to_be_bytes());
        out[12] = self.available as u8;
        out[13] = self.incumbent_class;
        out[14..16].copy_from_slice(&self.max_eirp_cdbm.to_be_bytes());
        out[16..24].copy_from_slice(&self.written_at.to_be_bytes());
        out[24..28].copy_from_slice(&self.origin.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, StoreError> {
        if b.len() != RECORD_BYTES {
            return Err(StoreError::Encoding(format!("record length {}", b.len())));
        }
        if b[12] > 1 {
            return Err(StoreError::Encoding(format!("availability flag {}", b[12])));
        }
        if b[RESERVED_AT..].iter().any(|&x| x != 0) {
            return Err(StoreError::Encoding("nonzero reserved bytes".into()));
        }
        Ok(SpectrumRecord {
            key: RecordKey {
                col: u32::from_be_bytes(b[0..4].try_into().unwrap()),
                row: u32::from_be_bytes(b[4..8].try_into().unwrap()),
                window: u16::from_be_bytes(b[8..10].try_into().unwrap()),
                band: u16::from_be_bytes(b[10..12].try_into().unwrap()),
            },
            available: b[12] == 1,
            incumbent_class: b[13],
            max_eirp_cdbm: i16::from_be_bytes(b[14..16].try_into().unwrap()),
            written_at: u64::from_be_bytes(b[16..24].try_into().unwrap()),
            origin: u32::from_be_bytes(b[24..28].try_into().unwrap()),
        })
    }

    /// Last-writer-wins order: newer timestamp, then lower origin id.
    fn supersedes(&self, other: &SpectrumRecord) -> bool {
        (self.written_at, std::cmp::Reverse(self.origin))
            > (other.written_at, std::cmp::Reverse(other.origin))
    }
}

/// Outcome of the credential and location checks run before a write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attestation {
    pub cred_ok: bool,
    pub pol_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub nym: String,
    pub key: RecordKey,
    pub written_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    /// (store id that changed, key, origin of the winning record)
    pub reconciled: Vec<(u32, RecordKey, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumStore {
    pub id: u32,
    region: Region,
    records: BTreeMap<RecordKey, SpectrumRecord>,
    log: Vec<SpectrumRecord>,
    audit: Vec<AuditEntry>,
}

impl SpectrumStore {
    pub fn new(id: u32, region: Region) -> Self {
        SpectrumStore {
            id,
            region,
            records: BTreeMap::new(),
            log: Vec::new(),
            audit: Vec::new(),
        }
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &SpectrumRecord> {
        self.records.values()
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn lookup(&self, q: &Query) -> Result<SpectrumRecord, StoreError> {
        let key = self.region.key(q)?;
        Ok(self
            .records
            .get(&key)
            .copied()
            .unwrap_or_else(|| SpectrumRecord::unknown(key)))
    }

    fn put(&mut self, rec: SpectrumRecord) {
        self.log.push(rec);
        self.records.insert(rec.key, rec);
    }

    /// Upserts a primary user's report after its credential and location
    /// proof were checked. The audit log records only the pseudonym.
    pub fn populate(
        &mut self,
        q: &Query,
        available: bool,
        incumbent_class: u8,
        max_eirp_cdbm: i16,
        nym: &[u8],
        att: Attestation,
    ) -> Result<SpectrumRecord, StoreError> {
        if !att.cred_ok {
            return Err(StoreError::Rejected("credential"));
        }
        if !att.pol_ok {
            return Err(StoreError::Rejected("proof of location"));
        }
        let key = self.region.key(q)?;
        let rec = SpectrumRecord {
            key,
            available,
            incumbent_class,
            max_eirp_cdbm,
            written_at: q.ts,
            origin: self.id,
        };
        self.put(rec);
        self.audit.push(AuditEntry {
            nym: hex::encode(nym),
            key,
            written_at: q.ts,
        });
        Ok(rec)
    }

    /// Pairwise last-writer-wins merge; afterwards all stores hold the same
    /// record set.
    pub fn sync(stores: &mut [&mut SpectrumStore]) -> SyncReport {
        let mut winners: BTreeMap<RecordKey, SpectrumRecord> = BTreeMap::new();
        for s in stores.iter() {
            for r in s.records.values() {
                match winners.get(&r.key) {
                    Some(w) if !r.supersedes(w) => {}
                    _ => {
                        winners.insert(r.key, *r);
                    }
                }
            }
        }
        let mut report = SyncReport::default();
        for s in stores.iter_mut() {
            for (k, w) in &winners {
                if s.records.get(k) != Some(w) {
                    report.reconciled.push((s.id, *k, w.origin));
                    s.put(*w);
                }
            }
        }
        report
    }

    pub fn dump<W: Write>(&self, w: &mut W) -> Result<(), StoreError> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_be_bytes())?;
        w.write_all(&self.id.to_be_bytes())?;
        w.write_all(&self.region.to_bytes())?;
        for r in &self.log {
            w.write_all(&r.to_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.dump(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self, StoreError> {
        let magic: [u8; 8] = read_array(r)?;
        if &magic != STORE_MAGIC {
            return Err(StoreError::Format("bad magic".into()));
        }
        let version = u16::from_be_bytes(read_array(r)?);
        if version != STORE_VERSION {
            return Err(StoreError::Format(format!("unsupported version {version}")));
        }
        let id = u32::from_be_bytes(read_array(r)?);
        let region = Region::read_from(r)?;
        let mut store = SpectrumStore::new(id, region);
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % RECORD_BYTES != 0 {
            return Err(StoreError::Format(format!(
                "trailing {} bytes",
                body.len() % RECORD_BYTES
            )));
        }
        for chunk in body.chunks(RECORD_BYTES) {
            store.put(SpectrumRecord::from_bytes(chunk)?);
        }
        Ok(store)
    }
}

/// Fills every (cell, window, band) with seeded synthetic availability.
pub fn synth_generate(id: u32, region: Region, density: f64, seed: u64) -> SpectrumStore {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut store = SpectrumStore::new(id, region.clone());
    for row in 0..region.rows {
        for col in 0..region.cols {
            for window in 0..region.windows {
                for &band in &region.bands {
                    let available = rng.gen_bool(density);
                    store.put(SpectrumRecord {
                        key: RecordKey { col, row, window, band },
                        available,
                        incumbent_class: if available { 0 } else { rng.gen_range(1..=3) },
                        max_eirp_cdbm: if available { rng.gen_range(1000..=3000) } else { 0 },
                        written_at: 0,
                        origin: id,
                    });
                }
            }
        }
    }
    store
}
